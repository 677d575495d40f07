//! Scan-sector definitions and planar slicing.
//!
//! A view is a wedge-shaped sector in a plane: the probe sits at `origin`,
//! `axis` points down the middle of the sector within the imaging plane, and
//! `up` spans the plane's second direction. The plane normal is `axis x up`.
//! Slicing keeps the points of a cloud that fall within a thin slab around
//! the plane, inside the wedge angle, and within the scan depth.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};

/// The six standard echocardiographic views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewName {
    /// Apical four-chamber (long axis).
    A4C,
    /// Apical two-chamber (long axis).
    A2C,
    /// Apical three-chamber (long axis).
    A3C,
    /// Short axis at the base.
    Basal,
    /// Short axis at mid cavity.
    MidCavity,
    /// Short axis near the apex.
    Apical,
}

impl ViewName {
    pub const ALL: [ViewName; 6] = [
        ViewName::A4C,
        ViewName::A2C,
        ViewName::A3C,
        ViewName::Basal,
        ViewName::MidCavity,
        ViewName::Apical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ViewName::A4C => "A4C",
            ViewName::A2C => "A2C",
            ViewName::A3C => "A3C",
            ViewName::Basal => "Basal",
            ViewName::MidCavity => "MidCavity",
            ViewName::Apical => "Apical",
        }
    }

    pub fn parse(s: &str) -> Option<ViewName> {
        ViewName::ALL.iter().copied().find(|v| v.as_str() == s)
    }
}

/// Default sector half-angle in degrees.
pub const DEFAULT_HALF_ANGLE_DEG: f64 = 45.0;
/// Default scan depth in millimetres.
pub const DEFAULT_DEPTH_MM: f64 = 150.0;
/// Default slab half-thickness in millimetres.
pub const DEFAULT_SLAB_HALF_THICKNESS_MM: f64 = 1.0;

/// A named scan sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDefinition {
    pub name: ViewName,
    pub origin: [f64; 3],
    pub axis: [f64; 3],
    pub up: [f64; 3],
    pub half_angle_deg: f64,
    pub depth_mm: f64,
    pub slab_half_thickness_mm: f64,
}

impl ViewDefinition {
    pub fn new(
        name: ViewName,
        origin: [f64; 3],
        axis: [f64; 3],
        up: [f64; 3],
        half_angle_deg: f64,
        depth_mm: f64,
        slab_half_thickness_mm: f64,
    ) -> Result<Self> {
        let v = Self {
            name,
            origin,
            axis,
            up,
            half_angle_deg,
            depth_mm,
            slab_half_thickness_mm,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .origin
            .iter()
            .chain(self.axis.iter())
            .chain(self.up.iter());
        if !all.clone().all(|v| v.is_finite()) {
            return Err(Error::invalid("view fields must be finite"));
        }
        if (norm(self.axis) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("view axis must be a unit vector"));
        }
        if (norm(self.up) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("view up must be a unit vector"));
        }
        if dot(self.axis, self.up).abs() > 1e-9 {
            return Err(Error::invalid("view axis and up must be orthogonal"));
        }
        if !(self.half_angle_deg > 0.0 && self.half_angle_deg < 90.0) {
            return Err(Error::invalid("half_angle_deg must be in (0, 90)"));
        }
        if self.depth_mm <= 0.0 || self.slab_half_thickness_mm <= 0.0 {
            return Err(Error::invalid("depth and slab thickness must be > 0"));
        }
        Ok(())
    }

    /// Unit normal of the imaging plane, `axis x up`.
    pub fn normal(&self) -> [f64; 3] {
        normalize(cross(self.axis, self.up))
    }
}

/// Shared origin of the three apical long-axis views.
const APICAL_ORIGIN: [f64; 3] = [62.63, -60.94, -28.13];
/// Origins of the three short-axis views, base to apex.
const BASAL_ORIGIN: [f64; 3] = [16.27, -8.42, -9.61];
const MID_CAVITY_ORIGIN: [f64; 3] = [39.04, -20.21, -23.07];
const SHORT_AXIS_APICAL_ORIGIN: [f64; 3] = [45.55, -23.58, -26.91];

/// The six built-in views.
///
/// Origins are the clinical sector positions; the remaining fields are
/// shipped defaults and freely overridable through a view JSON file. The
/// ventricular long axis is estimated as the direction from the shared
/// apical origin to the basal origin: the apical long-axis views aim along
/// it (their planes are fanned around it at 60 degree steps), and the
/// short-axis planes are orthogonal to it.
pub fn builtin_views() -> Vec<ViewDefinition> {
    let long_axis = normalize(sub(BASAL_ORIGIN, APICAL_ORIGIN));
    // In-plane reference orthogonal to the long axis, built from the world
    // axis least aligned with it for numerical stability.
    let seed = least_aligned_axis(long_axis);
    let u0 = normalize(reject(seed, long_axis));

    let apical = |name: ViewName, turn_deg: f64| -> ViewDefinition {
        let up = rotate_about(u0, long_axis, turn_deg.to_radians());
        ViewDefinition::new(
            name,
            APICAL_ORIGIN,
            long_axis,
            up,
            DEFAULT_HALF_ANGLE_DEG,
            DEFAULT_DEPTH_MM,
            DEFAULT_SLAB_HALF_THICKNESS_MM,
        )
        .expect("built-in view is valid")
    };
    let short_axis = |name: ViewName, origin: [f64; 3]| -> ViewDefinition {
        let axis = u0;
        let up = normalize(cross(long_axis, axis));
        ViewDefinition::new(
            name,
            origin,
            axis,
            up,
            DEFAULT_HALF_ANGLE_DEG,
            DEFAULT_DEPTH_MM,
            DEFAULT_SLAB_HALF_THICKNESS_MM,
        )
        .expect("built-in view is valid")
    };

    vec![
        apical(ViewName::A4C, 0.0),
        apical(ViewName::A2C, 60.0),
        apical(ViewName::A3C, 120.0),
        short_axis(ViewName::Basal, BASAL_ORIGIN),
        short_axis(ViewName::MidCavity, MID_CAVITY_ORIGIN),
        short_axis(ViewName::Apical, SHORT_AXIS_APICAL_ORIGIN),
    ]
}

/// Reads a JSON array of view definitions.
pub fn read_views_json(path: impl AsRef<Path>) -> Result<Vec<ViewDefinition>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_views_json_from(std::io::BufReader::new(file))
}

pub fn read_views_json_from(reader: impl BufRead) -> Result<Vec<ViewDefinition>> {
    let views: Vec<ViewDefinition> =
        serde_json::from_reader(reader).map_err(|e| Error::parse(format!("view json: {e}")))?;
    for v in &views {
        v.validate()?;
    }
    Ok(views)
}

pub fn write_views_json(views: &[ViewDefinition], path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut file, views)
        .map_err(|e| Error::parse(format!("view json: {e}")))?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Points of a slice in plane coordinates `(u, v)` millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarSlice {
    pub points2d: Vec<[f64; 2]>,
    pub labels: Option<Vec<u8>>,
}

impl PlanarSlice {
    pub fn len(&self) -> usize {
        self.points2d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points2d.is_empty()
    }
}

/// Keeps the points inside the view's slab-sector and reports them as
/// `(u, v) = ((p-origin)·axis, (p-origin)·up)`.
///
/// A point is kept iff its distance from the plane is at most the slab half
/// thickness, the angle between its in-plane projection and the axis is at
/// most the half angle, and its in-plane radius is at most the depth. The
/// sector apex itself (zero in-plane radius) is kept. An empty result is not
/// an error.
pub fn slice_cloud(cloud: &LabeledCloud, view: &ViewDefinition) -> Result<PlanarSlice> {
    view.validate()?;
    if cloud.is_empty() {
        return Err(Error::invalid("cannot slice an empty cloud"));
    }
    let normal = view.normal();
    let cos_half = view.half_angle_deg.to_radians().cos();
    let mut points2d = Vec::new();
    let mut kept = Vec::new();
    for (i, p) in cloud.points().iter().enumerate() {
        let rel = sub(*p, view.origin);
        let w = dot(rel, normal);
        if w.abs() > view.slab_half_thickness_mm {
            continue;
        }
        let u = dot(rel, view.axis);
        let v = dot(rel, view.up);
        let radius = (u * u + v * v).sqrt();
        if radius > view.depth_mm {
            continue;
        }
        if radius > 0.0 && u < radius * cos_half {
            continue;
        }
        points2d.push([u, v]);
        kept.push(i);
    }
    let labels = cloud
        .labels()
        .map(|ls| kept.iter().map(|&i| ls[i]).collect());
    Ok(PlanarSlice { points2d, labels })
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

fn reject(v: [f64; 3], onto_unit: [f64; 3]) -> [f64; 3] {
    let d = dot(v, onto_unit);
    [
        v[0] - d * onto_unit[0],
        v[1] - d * onto_unit[1],
        v[2] - d * onto_unit[2],
    ]
}

fn least_aligned_axis(v: [f64; 3]) -> [f64; 3] {
    let abs = [v[0].abs(), v[1].abs(), v[2].abs()];
    if abs[0] <= abs[1] && abs[0] <= abs[2] {
        [1.0, 0.0, 0.0]
    } else if abs[1] <= abs[2] {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// Rodrigues rotation of `v` about unit `axis` by `angle` radians.
fn rotate_about(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let k_cross_v = cross(axis, v);
    let k_dot_v = dot(axis, v);
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = v[i] * c + k_cross_v[i] * s + axis[i] * k_dot_v * (1.0 - c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{rotate, rotation_matrix, translate};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn test_view() -> ViewDefinition {
        ViewDefinition::new(
            ViewName::A4C,
            [0.0; 3],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            45.0,
            150.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn builtin_views_pin_table_origins() {
        let views = builtin_views();
        assert_eq!(views.len(), 6);
        let by_name = |n: ViewName| views.iter().find(|v| v.name == n).unwrap();
        assert_eq!(by_name(ViewName::A4C).origin, [62.63, -60.94, -28.13]);
        assert_eq!(by_name(ViewName::Basal).origin, [16.27, -8.42, -9.61]);
        assert_eq!(by_name(ViewName::MidCavity).origin, [39.04, -20.21, -23.07]);
        assert_eq!(by_name(ViewName::Apical).origin, [45.55, -23.58, -26.91]);
        // The three apical long-axis views share one origin.
        assert_eq!(by_name(ViewName::A2C).origin, by_name(ViewName::A4C).origin);
        assert_eq!(by_name(ViewName::A3C).origin, by_name(ViewName::A4C).origin);
        for v in &views {
            v.validate().unwrap();
        }
    }

    #[test]
    fn views_json_round_trip() {
        let views = builtin_views();
        let mut buf = Vec::new();
        serde_json::to_writer(&mut buf, &views).unwrap();
        let back = read_views_json_from(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, views);
    }

    #[test]
    fn on_axis_point_is_kept_at_half_depth() {
        let view = test_view();
        let cloud = LabeledCloud::unlabeled(vec![[75.0, 0.0, 0.0]]).unwrap();
        let slice = slice_cloud(&cloud, &view).unwrap();
        assert_eq!(slice.len(), 1);
        assert_eq!(slice.points2d[0], [75.0, 0.0]);
    }

    #[test]
    fn point_outside_slab_is_dropped() {
        let view = test_view();
        let cloud = LabeledCloud::unlabeled(vec![[75.0, 0.0, 2.0]]).unwrap();
        let slice = slice_cloud(&cloud, &view).unwrap();
        assert!(slice.is_empty());
    }

    #[test]
    fn sector_angle_and_depth_limits() {
        let view = test_view();
        // 44 degrees off axis: kept; 46 degrees: dropped; past depth: dropped.
        let near = [
            50.0 * 44f64.to_radians().cos(),
            50.0 * 44f64.to_radians().sin(),
            0.0,
        ];
        let wide = [
            50.0 * 46f64.to_radians().cos(),
            50.0 * 46f64.to_radians().sin(),
            0.0,
        ];
        let deep = [151.0, 0.0, 0.0];
        let apex = [0.0, 0.0, 0.0];
        let cloud = LabeledCloud::unlabeled(vec![near, wide, deep, apex]).unwrap();
        let slice = slice_cloud(&cloud, &view).unwrap();
        assert_eq!(slice.len(), 2); // near point and the apex
    }

    #[test]
    fn labels_carry_through() {
        let view = test_view();
        let cloud = LabeledCloud::new(
            vec![[75.0, 0.0, 0.0], [75.0, 0.0, 5.0], [60.0, 1.0, 0.5]],
            Some(vec![7, 1, 19]),
        )
        .unwrap();
        let slice = slice_cloud(&cloud, &view).unwrap();
        assert_eq!(slice.labels.as_deref(), Some(&[7u8, 19u8][..]));
    }

    #[test]
    fn ball_slice_count_matches_analytic_slab_volume() {
        // Uniform points in a ball centered on the sector plane; the slab
        // carves out a lens whose volume is known in closed form.
        let view = test_view();
        let center = [80.0, 0.0, 0.0];
        let r = 30.0;
        let n = 200_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pts = Vec::with_capacity(n);
        while pts.len() < n {
            let p = [
                rng.random_range(-r..=r),
                rng.random_range(-r..=r),
                rng.random_range(-r..=r),
            ];
            if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= r * r {
                pts.push([center[0] + p[0], center[1] + p[1], center[2] + p[2]]);
            }
        }
        let cloud = LabeledCloud::unlabeled(pts).unwrap();
        let slice = slice_cloud(&cloud, &view).unwrap();
        let t = view.slab_half_thickness_mm;
        let slab_volume = std::f64::consts::PI * (2.0 * t * r * r - 2.0 * t * t * t / 3.0);
        let ball_volume = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        let expected = n as f64 * slab_volume / ball_volume;
        let got = slice.len() as f64;
        assert!(
            (got - expected).abs() <= 0.05 * expected,
            "kept {got}, expected about {expected}"
        );
    }

    #[test]
    fn slice_is_permutation_invariant_as_a_set() {
        let view = test_view();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pts: Vec<[f64; 3]> = (0..200)
            .map(|_| {
                [
                    rng.random_range(0.0..120.0),
                    rng.random_range(-60.0..60.0),
                    rng.random_range(-3.0..3.0),
                ]
            })
            .collect();
        let a = slice_cloud(&LabeledCloud::unlabeled(pts.clone()).unwrap(), &view).unwrap();
        pts.reverse();
        let b = slice_cloud(&LabeledCloud::unlabeled(pts).unwrap(), &view).unwrap();
        let key = |p: &[f64; 2]| (p[0].to_bits(), p[1].to_bits());
        let mut sa: Vec<_> = a.points2d.iter().map(key).collect();
        let mut sb: Vec<_> = b.points2d.iter().map(key).collect();
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, sb);
    }

    #[test]
    fn rigid_motion_equivariance() {
        let base_view = test_view();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<[f64; 3]> = (0..300)
            .map(|_| {
                [
                    rng.random_range(0.0..140.0),
                    rng.random_range(-70.0..70.0),
                    rng.random_range(-2.0..2.0),
                ]
            })
            .collect();
        let cloud = LabeledCloud::unlabeled(pts).unwrap();
        let before = slice_cloud(&cloud, &base_view).unwrap();

        let r = rotation_matrix([0.4, -1.1, 2.3]).unwrap();
        let delta = [12.0, -7.5, 30.0];
        let moved_cloud = translate(&rotate(&cloud, &r), delta).unwrap();
        let moved_origin = {
            let q = r.apply(base_view.origin);
            [q[0] + delta[0], q[1] + delta[1], q[2] + delta[2]]
        };
        let moved_view = ViewDefinition::new(
            base_view.name,
            moved_origin,
            r.apply(base_view.axis),
            r.apply(base_view.up),
            base_view.half_angle_deg,
            base_view.depth_mm,
            base_view.slab_half_thickness_mm,
        )
        .unwrap();
        let after = slice_cloud(&moved_cloud, &moved_view).unwrap();

        assert_eq!(before.len(), after.len());
        for (p, q) in before.points2d.iter().zip(&after.points2d) {
            assert!((p[0] - q[0]).abs() < 1e-9);
            assert!((p[1] - q[1]).abs() < 1e-9);
        }
    }
}
