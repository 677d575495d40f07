//! Voxel-overlap evaluation, coordinate MSE, subsampling, and region
//! extraction.

use std::collections::BTreeSet;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::cloud::{joint_bbox, LabeledCloud};
use crate::error::{Error, Result};
use crate::ot::DeformationSamples;

/// Default evaluation resolution per axis.
pub const DEFAULT_EVAL_RESOLUTION: usize = 128;

/// Cubic occupancy grid over a world box.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    resolution: usize,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    occupancy: Vec<bool>,
}

impl VoxelGrid {
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn bbox(&self) -> ([f64; 3], [f64; 3]) {
        (self.bbox_min, self.bbox_max)
    }

    pub fn occupied(&self, i: usize, j: usize, k: usize) -> bool {
        self.occupancy[(i * self.resolution + j) * self.resolution + k]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    pub fn occupancy(&self) -> &[bool] {
        &self.occupancy
    }
}

/// Bins every point into the grid cell containing it; a voxel is occupied
/// iff at least one point falls in it. Points on an upper box face belong to
/// the last cell; points outside the box are an out-of-domain error (the
/// caller supplies an enclosing box).
pub fn voxelize(
    cloud: &LabeledCloud,
    resolution: usize,
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
) -> Result<VoxelGrid> {
    if resolution < 1 {
        return Err(Error::invalid("voxel resolution must be >= 1"));
    }
    for a in 0..3 {
        if !(bbox_min[a].is_finite() && bbox_max[a].is_finite() && bbox_min[a] < bbox_max[a]) {
            return Err(Error::invalid("voxel bbox must have min < max per axis"));
        }
    }
    let mut occupancy = vec![false; resolution * resolution * resolution];
    for (idx, p) in cloud.points().iter().enumerate() {
        let mut cell = [0usize; 3];
        for a in 0..3 {
            if p[a] < bbox_min[a] || p[a] > bbox_max[a] {
                return Err(Error::OutOfDomain(format!(
                    "point {idx} at {p:?} outside voxel box axis {a}"
                )));
            }
            let t = (p[a] - bbox_min[a]) / (bbox_max[a] - bbox_min[a]) * resolution as f64;
            cell[a] = (t.floor() as usize).min(resolution - 1);
        }
        occupancy[(cell[0] * resolution + cell[1]) * resolution + cell[2]] = true;
    }
    Ok(VoxelGrid {
        resolution,
        bbox_min,
        bbox_max,
        occupancy,
    })
}

/// Voxelizes two clouds onto one shared grid: their joint bounding box
/// expanded by 1 percent, so the pair is always comparable by [`iou`].
pub fn voxelize_pair(
    a: &LabeledCloud,
    b: &LabeledCloud,
    resolution: usize,
) -> Result<(VoxelGrid, VoxelGrid)> {
    let (lo, hi) = joint_bbox(a, b)
        .ok_or_else(|| Error::invalid("cannot voxelize two empty clouds"))?;
    let mut bbox_min = [0.0; 3];
    let mut bbox_max = [0.0; 3];
    for axis in 0..3 {
        let extent = (hi[axis] - lo[axis]).max(1e-6);
        bbox_min[axis] = lo[axis] - 0.01 * extent;
        bbox_max[axis] = hi[axis] + 0.01 * extent;
    }
    Ok((
        voxelize(a, resolution, bbox_min, bbox_max)?,
        voxelize(b, resolution, bbox_min, bbox_max)?,
    ))
}

/// Intersection over union `TP / (TP + FP + FN)` of two grids on the same
/// box and resolution; two empty grids score 1.
pub fn iou(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    if a.resolution != b.resolution {
        return Err(Error::invalid(format!(
            "voxel resolutions differ: {} vs {}",
            a.resolution, b.resolution
        )));
    }
    if a.bbox_min != b.bbox_min || a.bbox_max != b.bbox_max {
        return Err(Error::invalid("voxel grids cover different boxes"));
    }
    let mut intersection = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.occupancy.iter().zip(&b.occupancy) {
        if x && y {
            intersection += 1;
        }
        if x || y {
            union += 1;
        }
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(intersection as f64 / union as f64)
}

/// Mean squared error over all `3N` scalar residuals of the two vector sets.
pub fn mse(pred: &DeformationSamples, target: &DeformationSamples) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::invalid(format!(
            "sample counts differ: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("cannot take MSE of zero samples"));
    }
    Ok(mse_vectors(&pred.vectors, &target.vectors))
}

/// MSE over flattened 3-vectors; shared by samples and raw point sets.
pub fn mse_vectors(pred: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    let n = pred.len() * 3;
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(target) {
        for a in 0..3 {
            let r = p[a] - t[a];
            total += r * r;
        }
    }
    total / n as f64
}

/// Uniform without-replacement selection of `ceil(rate * N)` points,
/// deterministic per seed; original order is preserved.
pub fn subsample(cloud: &LabeledCloud, rate: f64, seed: u64) -> Result<LabeledCloud> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::invalid(format!("subsample rate {rate} outside (0, 1]")));
    }
    let n = cloud.len();
    let keep = ((rate * n as f64).ceil() as usize).min(n);
    if keep == n {
        return Ok(cloud.clone());
    }
    // Partial Fisher-Yates over the index set, then restore input order.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..keep {
        let j = rng.random_range(i..n);
        indices.swap(i, j);
    }
    let mut chosen: Vec<usize> = indices[..keep].to_vec();
    chosen.sort_unstable();

    let points = chosen.iter().map(|&i| cloud.points()[i]).collect();
    let labels = cloud
        .labels()
        .map(|ls| chosen.iter().map(|&i| ls[i]).collect());
    LabeledCloud::new(points, labels)
}

/// Keeps exactly the points whose label is in the set, order preserved.
pub fn extract_region(cloud: &LabeledCloud, labels: &BTreeSet<u8>) -> Result<LabeledCloud> {
    let Some(ls) = cloud.labels() else {
        return Err(Error::invalid("extract_region requires a labeled cloud"));
    };
    let mut points = Vec::new();
    let mut kept_labels = Vec::new();
    for (p, &l) in cloud.points().iter().zip(ls) {
        if labels.contains(&l) {
            points.push(*p);
            kept_labels.push(l);
        }
    }
    LabeledCloud::new(points, Some(kept_labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cloud(points: Vec<[f64; 3]>) -> LabeledCloud {
        LabeledCloud::unlabeled(points).unwrap()
    }

    #[test]
    fn single_point_occupies_one_voxel() {
        let c = cloud(vec![[0.5, 0.5, 0.5]]);
        let grid = voxelize(&c, 4, [0.0; 3], [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(grid.occupied_count(), 1);
        assert!(grid.occupied(2, 2, 2));
    }

    #[test]
    fn cell_centers_fill_the_grid() {
        let r = 4usize;
        let mut pts = Vec::new();
        for i in 0..r {
            for j in 0..r {
                for k in 0..r {
                    pts.push([
                        (i as f64 + 0.5) / r as f64,
                        (j as f64 + 0.5) / r as f64,
                        (k as f64 + 0.5) / r as f64,
                    ]);
                }
            }
        }
        let grid = voxelize(&cloud(pts), r, [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(grid.occupied_count(), r * r * r);
    }

    #[test]
    fn upper_boundary_belongs_to_last_cell() {
        let c = cloud(vec![[1.0, 1.0, 1.0]]);
        let grid = voxelize(&c, 8, [0.0; 3], [1.0; 3]).unwrap();
        assert!(grid.occupied(7, 7, 7));
    }

    #[test]
    fn outside_point_is_out_of_domain() {
        let c = cloud(vec![[2.0, 0.0, 0.0]]);
        assert!(matches!(
            voxelize(&c, 4, [0.0; 3], [1.0; 3]),
            Err(Error::OutOfDomain(_))
        ));
    }

    #[test]
    fn voxelize_matches_binning_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let pts: Vec<[f64; 3]> = (0..500)
            .map(|_| {
                [
                    rng.random_range(-3.0..7.0),
                    rng.random_range(2.0..12.0),
                    rng.random_range(-9.0..-1.0),
                ]
            })
            .collect();
        let lo = [-3.0, 2.0, -9.0];
        let hi = [7.0, 12.0, -1.0];
        let r = 16usize;
        let grid = voxelize(&cloud(pts.clone()), r, lo, hi).unwrap();

        let mut oracle = vec![false; r * r * r];
        for p in &pts {
            let bin = |x: f64, lo: f64, hi: f64| -> usize {
                let i = ((x - lo) / (hi - lo) * r as f64).floor() as usize;
                i.min(r - 1)
            };
            let (i, j, k) = (bin(p[0], lo[0], hi[0]), bin(p[1], lo[1], hi[1]), bin(p[2], lo[2], hi[2]));
            oracle[(i * r + j) * r + k] = true;
        }
        assert_eq!(grid.occupancy(), &oracle[..]);
    }

    #[test]
    fn iou_basics() {
        let a = cloud(vec![[0.1, 0.1, 0.1], [0.9, 0.9, 0.9]]);
        let b = cloud(vec![[0.1, 0.1, 0.1]]);
        let (ga, ga2) = (
            voxelize(&a, 4, [0.0; 3], [1.0; 3]).unwrap(),
            voxelize(&a, 4, [0.0; 3], [1.0; 3]).unwrap(),
        );
        assert_eq!(iou(&ga, &ga2).unwrap(), 1.0);

        let gb = voxelize(&b, 4, [0.0; 3], [1.0; 3]).unwrap();
        // b's voxel set is half of a's: intersection 1, union 2.
        assert_eq!(iou(&ga, &gb).unwrap(), 0.5);

        let disjoint = voxelize(&cloud(vec![[0.6, 0.1, 0.1]]), 4, [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(iou(&gb, &disjoint).unwrap(), 0.0);

        let empty = voxelize(&cloud(vec![]), 4, [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(iou(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn iou_rejects_mismatched_grids() {
        let c = cloud(vec![[0.5; 3]]);
        let a = voxelize(&c, 4, [0.0; 3], [1.0; 3]).unwrap();
        let b = voxelize(&c, 8, [0.0; 3], [1.0; 3]).unwrap();
        assert!(iou(&a, &b).is_err());
        let shifted = voxelize(&c, 4, [0.0; 3], [2.0; 3]).unwrap();
        assert!(iou(&a, &shifted).is_err());
    }

    #[test]
    fn voxelize_pair_shares_box() {
        let a = cloud(vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        let b = cloud(vec![[5.0, 5.0, 5.0]]);
        let (ga, gb) = voxelize_pair(&a, &b, 8).unwrap();
        assert_eq!(ga.bbox(), gb.bbox());
        assert!(iou(&ga, &gb).is_ok());
    }

    #[test]
    fn mse_cases() {
        let a = DeformationSamples::new(
            vec![[0.0; 3]; 3],
            vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(mse(&a, &a).unwrap(), 0.0);

        let shifted = DeformationSamples::new(
            a.anchors.clone(),
            a.vectors.iter().map(|v| [v[0] + 1.0, v[1], v[2]]).collect(),
        )
        .unwrap();
        // Every vector off by (1,0,0): per-component convention gives 1/3.
        assert!((mse(&a, &shifted).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mse_matches_flat_loop_oracle() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let rand_vecs = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<[f64; 3]> {
            (0..64)
                .map(|_| {
                    [
                        rng.random_range(-4.0..4.0),
                        rng.random_range(-4.0..4.0),
                        rng.random_range(-4.0..4.0),
                    ]
                })
                .collect()
        };
        let va = rand_vecs(&mut rng);
        let vb = rand_vecs(&mut rng);
        let mut flat = 0.0;
        let mut count = 0usize;
        for (x, y) in va.iter().zip(&vb) {
            for a in 0..3 {
                flat += (x[a] - y[a]) * (x[a] - y[a]);
                count += 1;
            }
        }
        flat /= count as f64;
        let a = DeformationSamples::new(vec![[0.0; 3]; 64], va).unwrap();
        let b = DeformationSamples::new(vec![[0.0; 3]; 64], vb).unwrap();
        assert!((mse(&a, &b).unwrap() - flat).abs() < 1e-12);
        assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
    }

    #[test]
    fn subsample_rate_one_is_identity() {
        let c = LabeledCloud::new(
            vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
            Some(vec![1, 2, 3]),
        )
        .unwrap();
        let out = subsample(&c, 1.0, 9).unwrap();
        assert_eq!(out, c);
    }

    #[test]
    fn subsample_count_and_membership() {
        let pts: Vec<[f64; 3]> = (0..1000).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = cloud(pts);
        let out = subsample(&c, 0.1, 4).unwrap();
        assert_eq!(out.len(), 100);
        for p in out.points() {
            assert!(p[0] >= 0.0 && p[0] < 1000.0 && p[0].fract() == 0.0);
        }
        // Order preserved: sorted x coordinates.
        for w in out.points().windows(2) {
            assert!(w[0][0] < w[1][0]);
        }
    }

    #[test]
    fn subsample_is_deterministic_per_seed() {
        let pts: Vec<[f64; 3]> = (0..1000).map(|i| [i as f64, 0.0, 0.0]).collect();
        let c = cloud(pts);
        let a = subsample(&c, 0.1, 7).unwrap();
        let b = subsample(&c, 0.1, 7).unwrap();
        assert_eq!(a, b);
        let other = subsample(&c, 0.1, 8).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn extract_region_basics() {
        let c = LabeledCloud::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
            Some(vec![1, 5, 1, 9]),
        )
        .unwrap();
        let all: BTreeSet<u8> = [1, 5, 9].into_iter().collect();
        assert_eq!(extract_region(&c, &all).unwrap().len(), 4);

        let none: BTreeSet<u8> = BTreeSet::new();
        assert_eq!(extract_region(&c, &none).unwrap().len(), 0);

        let ones: BTreeSet<u8> = [1].into_iter().collect();
        let out = extract_region(&c, &ones).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.points()[0], [0.0; 3]);
        assert_eq!(out.points()[1], [2.0, 0.0, 0.0]);

        let unlabeled = cloud(vec![[0.0; 3]]);
        assert!(extract_region(&unlabeled, &ones).is_err());
    }

    proptest! {
        #[test]
        fn iou_symmetric_in_unit_range(
            pa in proptest::collection::vec([0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0], 1..40),
            pb in proptest::collection::vec([0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0], 1..40),
        ) {
            let a = voxelize(&cloud(pa), 8, [0.0; 3], [1.0; 3]).unwrap();
            let b = voxelize(&cloud(pb), 8, [0.0; 3], [1.0; 3]).unwrap();
            let ab = iou(&a, &b).unwrap();
            let ba = iou(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!((0.0..=1.0).contains(&ab));
            let equal_sets = a.occupancy() == b.occupancy();
            prop_assert_eq!(ab == 1.0, equal_sets);
        }
    }
}
