//! Enclosed volume of a point cloud via Delaunay tetrahedralization.
//!
//! The union of Delaunay tetrahedra of a point set fills its convex hull
//! exactly, so the summed tetrahedron volume `sum |det(b-a, c-a, d-a)| / 6`
//! equals the convex-hull volume. The implementation therefore builds the
//! hull incrementally (points visited in input order; points within the
//! plane tolerance of a face count as interior, which resolves ties
//! deterministically) and integrates the volume over its oriented faces.

use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};

/// Relative plane tolerance: points closer than this (times the cloud
/// extent) to a face plane are treated as on it.
const PLANE_TOL: f64 = 1e-9;

type Vec3 = [f64; 3];

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy)]
struct Face {
    v: [usize; 3],
}

/// Volume in mm^3 of the Delaunay tetrahedralization (equivalently, the
/// convex hull) of at least four non-coplanar points.
pub fn delaunay_volume(cloud: &LabeledCloud) -> Result<f64> {
    let points = cloud.points();
    if points.len() < 4 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 4 points, have {}",
            points.len()
        )));
    }
    let faces = convex_hull_faces(points)?;

    // Divergence-theorem volume over the closed, outward-oriented surface.
    let centroid = {
        let mut c = [0.0f64; 3];
        for p in points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        for a in c.iter_mut() {
            *a /= points.len() as f64;
        }
        c
    };
    let mut volume = 0.0;
    for f in &faces {
        let a = sub(points[f.v[0]], centroid);
        let b = sub(points[f.v[1]], centroid);
        let c = sub(points[f.v[2]], centroid);
        volume += dot(cross(b, c), a) / 6.0;
    }
    Ok(volume)
}

/// True when `query` lies inside or on the convex hull of the cloud, within
/// `tol` millimetres of its boundary planes. Intended as a geometric oracle
/// for tests of convex-combination claims.
pub fn hull_contains(cloud: &LabeledCloud, query: [f64; 3], tol: f64) -> Result<bool> {
    let points = cloud.points();
    let faces = convex_hull_faces(points)?;
    for f in &faces {
        let base = points[f.v[0]];
        let n = cross(sub(points[f.v[1]], base), sub(points[f.v[2]], base));
        let len = norm(n);
        if len == 0.0 {
            continue;
        }
        if dot(n, sub(query, base)) / len > tol {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Outward-oriented triangular faces of the convex hull.
fn convex_hull_faces(points: &[Vec3]) -> Result<Vec<Face>> {
    let scale = extent(points).max(f64::MIN_POSITIVE);
    let plane_eps = PLANE_TOL * scale;

    let (seed, mut faces) = initial_tetrahedron(points, plane_eps)?;

    for idx in 0..points.len() {
        if seed.contains(&idx) {
            continue;
        }
        let p = points[idx];
        // Faces the point can see from outside.
        let mut visible = Vec::new();
        for (fi, f) in faces.iter().enumerate() {
            let base = points[f.v[0]];
            let n = cross(sub(points[f.v[1]], base), sub(points[f.v[2]], base));
            let len = norm(n);
            if len == 0.0 {
                continue;
            }
            if dot(n, sub(p, base)) / len > plane_eps {
                visible.push(fi);
            }
        }
        if visible.is_empty() {
            continue;
        }
        // Horizon: directed edges of visible faces whose reverse is not
        // itself part of a visible face.
        let mut edges: Vec<(usize, usize)> = Vec::new();
        for &fi in &visible {
            let [a, b, c] = faces[fi].v;
            edges.push((a, b));
            edges.push((b, c));
            edges.push((c, a));
        }
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        for &(u, v) in &edges {
            if !edges.contains(&(v, u)) {
                horizon.push((u, v));
            }
        }
        // Replace the visible cap with the cone from p.
        let mut keep = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            if !visible.contains(&fi) {
                keep.push(*f);
            }
        }
        for (u, v) in horizon {
            keep.push(Face { v: [u, v, idx] });
        }
        faces = keep;
    }
    Ok(faces)
}

fn extent(points: &[Vec3]) -> f64 {
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    norm(sub(hi, lo))
}

/// Picks four affinely independent points and returns their outward faces.
fn initial_tetrahedron(points: &[Vec3], plane_eps: f64) -> Result<([usize; 4], Vec<Face>)> {
    // Deterministic start: lexicographically smallest point.
    let i0 = (0..points.len())
        .min_by(|&a, &b| points[a].partial_cmp(&points[b]).unwrap())
        .unwrap();
    let p0 = points[i0];

    let i1 = (0..points.len())
        .max_by(|&a, &b| {
            norm(sub(points[a], p0))
                .partial_cmp(&norm(sub(points[b], p0)))
                .unwrap()
        })
        .unwrap();
    if norm(sub(points[i1], p0)) <= plane_eps {
        return Err(Error::DegenerateGeometry("all points coincide".into()));
    }
    let dir = sub(points[i1], p0);

    let line_dist = |p: Vec3| norm(cross(sub(p, p0), dir)) / norm(dir);
    let i2 = (0..points.len())
        .max_by(|&a, &b| line_dist(points[a]).partial_cmp(&line_dist(points[b])).unwrap())
        .unwrap();
    if line_dist(points[i2]) <= plane_eps {
        return Err(Error::DegenerateGeometry("all points are collinear".into()));
    }

    let n = cross(sub(points[i1], p0), sub(points[i2], p0));
    let plane_dist = |p: Vec3| dot(n, sub(p, p0)).abs() / norm(n);
    let i3 = (0..points.len())
        .max_by(|&a, &b| plane_dist(points[a]).partial_cmp(&plane_dist(points[b])).unwrap())
        .unwrap();
    if plane_dist(points[i3]) <= plane_eps {
        return Err(Error::DegenerateGeometry("all points are coplanar".into()));
    }

    // Orient so the tetrahedron (a, b, c, d) has positive signed volume.
    let (mut a, mut b, c, d) = (i0, i1, i2, i3);
    let signed = dot(
        cross(sub(points[b], points[a]), sub(points[c], points[a])),
        sub(points[d], points[a]),
    );
    if signed < 0.0 {
        std::mem::swap(&mut a, &mut b);
    }
    let faces = vec![
        Face { v: [a, c, b] },
        Face { v: [a, b, d] },
        Face { v: [b, c, d] },
        Face { v: [a, d, c] },
    ];
    Ok(([a, b, c, d], faces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{apply_transform, scale, SimilarityTransform};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<Vec3>) -> LabeledCloud {
        LabeledCloud::unlabeled(points).unwrap()
    }

    #[test]
    fn unit_tetrahedron_volume() {
        let c = cloud(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ]);
        assert!((delaunay_volume(&c).unwrap() - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn unit_cube_volume() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        assert!((delaunay_volume(&cloud(pts)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cube_with_interior_points_unchanged() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            pts.push([
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
                rng.random_range(0.05..0.95),
            ]);
        }
        assert!((delaunay_volume(&cloud(pts)).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ball_sample_volume_close_to_analytic() {
        let r = 30.0f64;
        let n = 5000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut pts = Vec::with_capacity(n);
        while pts.len() < n {
            let p = [
                rng.random_range(-r..=r),
                rng.random_range(-r..=r),
                rng.random_range(-r..=r),
            ];
            if dot(p, p) <= r * r {
                pts.push(p);
            }
        }
        let analytic = 4.0 / 3.0 * std::f64::consts::PI * r * r * r;
        let got = delaunay_volume(&cloud(pts)).unwrap();
        assert!(
            (got - analytic).abs() <= 0.02 * analytic,
            "volume {got} vs {analytic}"
        );
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(matches!(
            delaunay_volume(&cloud(vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])),
            Err(Error::DegenerateGeometry(_))
        ));
        // Coplanar square.
        assert!(matches!(
            delaunay_volume(&cloud(vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [1.0, 1.0, 0.0],
            ])),
            Err(Error::DegenerateGeometry(_))
        ));
        // Collinear and coincident.
        assert!(delaunay_volume(&cloud(vec![[0.0; 3]; 5])).is_err());
        assert!(delaunay_volume(&cloud(
            (0..5).map(|i| [i as f64, 0.0, 0.0]).collect()
        ))
        .is_err());
    }

    #[test]
    fn volume_invariant_under_rigid_motion_and_cubic_under_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec3> = (0..120)
            .map(|_| {
                [
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                ]
            })
            .collect();
        let c = cloud(pts);
        let v0 = delaunay_volume(&c).unwrap();

        let rigid = SimilarityTransform::new([40.0, -13.0, 8.0], [0.7, -0.4, 2.1], 1.0).unwrap();
        let moved = apply_transform(&c, &rigid).unwrap();
        let v1 = delaunay_volume(&moved).unwrap();
        assert!((v1 - v0).abs() <= 1e-6 * v0);

        let s = 2.5;
        let scaled = scale(&c, s).unwrap();
        let v2 = delaunay_volume(&scaled).unwrap();
        assert!((v2 - s.powi(3) * v0).abs() <= 1e-9 * s.powi(3) * v0);
    }

    #[test]
    fn hull_contains_basics() {
        let mut pts = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        let c = cloud(pts);
        assert!(hull_contains(&c, [0.5, 0.5, 0.5], 1e-9).unwrap());
        assert!(hull_contains(&c, [1.0, 1.0, 1.0], 1e-9).unwrap());
        assert!(!hull_contains(&c, [1.1, 0.5, 0.5], 1e-9).unwrap());
    }
}
