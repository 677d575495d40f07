//! Similarity transforms used to pose a heart cloud within the body context.
//!
//! Points are column vectors and matrices act on the left, so a full
//! transform reads `p' = s * R * p + delta` with `R = Rz * Ry * Rx`.

use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};

/// Per-entry tolerance for the orthonormality and determinant checks.
pub const ROTATION_TOL: f64 = 1e-9;

/// A validated 3x3 rotation matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    m: [[f64; 3]; 3],
}

impl RotationMatrix {
    pub const IDENTITY: Self = Self {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Validates `R^T R = I` and `det R = 1`, each within `1e-9` per entry.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        for row in &m {
            for v in row {
                if !v.is_finite() {
                    return Err(Error::invalid("rotation matrix entry not finite"));
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > ROTATION_TOL {
                    return Err(Error::invalid(format!(
                        "matrix is not orthonormal: (R^T R)[{i}][{j}] = {dot}"
                    )));
                }
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::invalid(format!("matrix determinant {det} != 1")));
        }
        Ok(Self { m })
    }

    /// `Rz(tz) * Ry(ty) * Rx(tx)` from Euler angles in radians, each factor the
    /// standard right-handed rotation about its axis for column vectors.
    pub fn from_euler(angles: [f64; 3]) -> Result<Self> {
        if !angles.iter().all(|a| a.is_finite()) {
            return Err(Error::invalid("rotation angles must be finite"));
        }
        let [tx, ty, tz] = angles;
        let (sx, cx) = tx.sin_cos();
        let (sy, cy) = ty.sin_cos();
        let (sz, cz) = tz.sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        Ok(Self {
            m: mat_mul(&rz, &mat_mul(&ry, &rx)),
        })
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    /// Applies the rotation to a column vector: `R * p`.
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let m = &self.m;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }
}

pub(crate) fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Translation, rotation (Euler radians), and uniform scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub delta: [f64; 3],
    pub angles: [f64; 3],
    pub scale: f64,
}

impl SimilarityTransform {
    pub const IDENTITY: Self = Self {
        delta: [0.0; 3],
        angles: [0.0; 3],
        scale: 1.0,
    };

    pub fn new(delta: [f64; 3], angles: [f64; 3], scale: f64) -> Result<Self> {
        let t = Self {
            delta,
            angles,
            scale,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.iter().chain(self.angles.iter()).all(|v| v.is_finite()) {
            return Err(Error::invalid("transform fields must be finite"));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::invalid(format!("scale {} must be > 0", self.scale)));
        }
        Ok(())
    }
}

/// Shifts every point by `delta`; labels pass through untouched.
pub fn translate(cloud: &LabeledCloud, delta: [f64; 3]) -> Result<LabeledCloud> {
    if !delta.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("translation delta must be finite"));
    }
    let points = cloud
        .points()
        .iter()
        .map(|p| [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]])
        .collect();
    Ok(cloud.with_points(points))
}

/// `Rz * Ry * Rx` from Euler angles in radians.
pub fn rotation_matrix(angles: [f64; 3]) -> Result<RotationMatrix> {
    RotationMatrix::from_euler(angles)
}

/// Rotates every point: `p' = R * p`.
pub fn rotate(cloud: &LabeledCloud, r: &RotationMatrix) -> LabeledCloud {
    let points = cloud.points().iter().map(|&p| r.apply(p)).collect();
    cloud.with_points(points)
}

/// Scales every coordinate by `s > 0`.
pub fn scale(cloud: &LabeledCloud, s: f64) -> Result<LabeledCloud> {
    if !(s.is_finite() && s > 0.0) {
        return Err(Error::invalid(format!("scale {s} must be > 0")));
    }
    let points = cloud
        .points()
        .iter()
        .map(|p| [s * p[0], s * p[1], s * p[2]])
        .collect();
    Ok(cloud.with_points(points))
}

/// Applies `p' = s * R * p + delta` to every point.
pub fn apply_transform(cloud: &LabeledCloud, t: &SimilarityTransform) -> Result<LabeledCloud> {
    t.validate()?;
    let r = RotationMatrix::from_euler(t.angles)?;
    let points = cloud
        .points()
        .iter()
        .map(|&p| {
            let q = r.apply(p);
            [
                t.scale * q[0] + t.delta[0],
                t.scale * q[1] + t.delta[1],
                t.scale * q[2] + t.delta[2],
            ]
        })
        .collect();
    Ok(cloud.with_points(points))
}
