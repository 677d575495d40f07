//! Gaussian-kernel spline deformation fields.
//!
//! Fitting solves `(K + ridge I) C = V` per component, where
//! `K_ab = exp(-||p_a - p_b||^2 / (2 h^2))` over the anchor points and `V`
//! stacks the sampled displacement vectors. Evaluation sums the kernel over
//! the centers. With zero ridge the field interpolates the samples exactly;
//! ridge trades interpolation for conditioning and smoothness.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};
use crate::ot::DeformationSamples;

/// Relative residual bound a fit must satisfy.
const FIT_RESIDUAL_TOL: f64 = 1e-8;

/// A fitted Gaussian-kernel deformation field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfField {
    #[serde(rename = "bandwidth_mm")]
    pub bandwidth: f64,
    pub ridge: f64,
    pub centers: Vec<[f64; 3]>,
    pub coefficients: Vec<[f64; 3]>,
}

impl RbfField {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::invalid("bandwidth must be > 0"));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::invalid("ridge must be >= 0"));
        }
        if self.centers.len() != self.coefficients.len() {
            return Err(Error::invalid(format!(
                "{} centers for {} coefficient rows",
                self.centers.len(),
                self.coefficients.len()
            )));
        }
        let finite = |v: &[f64; 3]| v.iter().all(|c| c.is_finite());
        if !self.centers.iter().all(finite) || !self.coefficients.iter().all(finite) {
            return Err(Error::invalid("field entries must be finite"));
        }
        Ok(())
    }

    /// Field value at one point: `v(x) = sum_k c_k exp(-||x - p_k||^2 / (2 h^2))`.
    pub fn eval_at(&self, x: [f64; 3]) -> [f64; 3] {
        let inv_two_h_sq = 1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut out = [0.0f64; 3];
        for (center, coeff) in self.centers.iter().zip(&self.coefficients) {
            let d = [x[0] - center[0], x[1] - center[1], x[2] - center[2]];
            let w = (-(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) * inv_two_h_sq).exp();
            for a in 0..3 {
                out[a] += w * coeff[a];
            }
        }
        out
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_json_from(std::io::BufReader::new(file))
    }

    pub fn read_json_from(reader: impl BufRead) -> Result<Self> {
        let field: RbfField =
            serde_json::from_reader(reader).map_err(|e| Error::parse(format!("field json: {e}")))?;
        field.validate()?;
        Ok(field)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        serde_json::to_writer_pretty(&mut file, self)
            .map_err(|e| Error::parse(format!("field json: {e}")))?;
        file.write_all(b"\n")?;
        Ok(())
    }
}

/// Mean nearest-neighbor distance among points; the default bandwidth is
/// four times this (scale-aware smoothing).
pub fn mean_nearest_neighbor_distance(points: &[[f64; 3]]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
            let sq = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            if sq < best {
                best = sq;
            }
        }
        total += best.sqrt();
    }
    total / points.len() as f64
}

/// Default bandwidth for a set of anchors: `4 x` mean nearest-neighbor
/// distance, with a 1 mm floor for degenerate inputs.
pub fn suggested_bandwidth(anchors: &[[f64; 3]]) -> f64 {
    (4.0 * mean_nearest_neighbor_distance(anchors)).max(1.0)
}

/// Default ridge.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Fits the Gaussian-kernel spline through the sampled displacements.
///
/// Anchors must be pairwise distinct when `ridge` is zero; a system that
/// cannot be solved to a residual of `1e-8 * max(1, ||V||_inf)` is reported
/// as ill-conditioned.
pub fn fit_rbf_field(
    samples: &DeformationSamples,
    bandwidth: f64,
    ridge: f64,
) -> Result<RbfField> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot fit a field to zero samples"));
    }
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::invalid("bandwidth must be > 0"));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::invalid("ridge must be >= 0"));
    }
    let n = samples.len();
    let anchors = &samples.anchors;
    let inv_two_h_sq = 1.0 / (2.0 * bandwidth * bandwidth);

    let mut kernel = DMatrix::<f64>::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let d = [
                anchors[a][0] - anchors[b][0],
                anchors[a][1] - anchors[b][1],
                anchors[a][2] - anchors[b][2],
            ];
            let sq = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
            kernel[(a, b)] = (-sq * inv_two_h_sq).exp();
        }
    }
    for a in 0..n {
        kernel[(a, a)] += ridge;
    }

    let rhs = DMatrix::<f64>::from_fn(n, 3, |r, c| samples.vectors[r][c]);
    // The kernel is symmetric positive definite for distinct anchors, so try
    // Cholesky first and fall back to LU near singularity.
    let solution = kernel
        .clone()
        .cholesky()
        .map(|ch| ch.solve(&rhs))
        .or_else(|| kernel.clone().lu().solve(&rhs))
        .ok_or_else(|| Error::IllConditioned("kernel system is singular".into()))?;

    // The contract is on the residual, not on which factorization succeeded.
    let v_scale = samples
        .vectors
        .iter()
        .flat_map(|v| v.iter())
        .fold(1.0f64, |acc, &v| acc.max(v.abs()));
    let residual = (&kernel * &solution - &rhs).abs().max();
    if !(residual < FIT_RESIDUAL_TOL * v_scale) {
        return Err(Error::IllConditioned(format!(
            "fit residual {residual:.3e} exceeds {FIT_RESIDUAL_TOL:.0e} x {v_scale}"
        )));
    }

    let coefficients = (0..n)
        .map(|r| [solution[(r, 0)], solution[(r, 1)], solution[(r, 2)]])
        .collect();
    Ok(RbfField {
        bandwidth,
        ridge,
        centers: anchors.clone(),
        coefficients,
    })
}

/// Evaluates the field at every query point.
pub fn eval_field(field: &RbfField, query: &LabeledCloud) -> DeformationSamples {
    let anchors = query.points().to_vec();
    let vectors = anchors.iter().map(|&x| field.eval_at(x)).collect();
    DeformationSamples { anchors, vectors }
}

/// Moves every template point by the field and copies labels index for
/// index; this is the label-transfer mechanism, so the template must be
/// labeled.
pub fn deform_template(template: &LabeledCloud, field: &RbfField) -> Result<LabeledCloud> {
    if template.labels().is_none() {
        return Err(Error::invalid("deform_template requires a labeled template"));
    }
    let points = template
        .points()
        .iter()
        .map(|&p| {
            let v = field.eval_at(p);
            [p[0] + v[0], p[1] + v[1], p[2] + v[2]]
        })
        .collect();
    Ok(LabeledCloud::new(points, template.labels().map(|l| l.to_vec()))?)
}
