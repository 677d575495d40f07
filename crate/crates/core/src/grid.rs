//! Vector grids: trilinear upsampling, weighted fusion, and continuous
//! sampling against a template cloud.
//!
//! Values live on cell nodes, not centers, so the bounding-box corners are
//! exactly representable and a grid of dims `(D, H, W)` spans
//! `(D-1) x (H-1) x (W-1)` interpolation cells. Axis mapping: `w` runs along
//! world x, `h` along y, `d` along z.

use std::io::{Read, Write};
use std::path::Path;

use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};

/// A `D x H x W` grid of 3-vectors over a world-space box.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    dims: [usize; 3],
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    /// Node vectors in d-major, then h, then w order.
    values: Vec<[f64; 3]>,
}

impl VectorGrid {
    pub fn new(
        dims: [usize; 3],
        bbox_min: [f64; 3],
        bbox_max: [f64; 3],
        values: Vec<[f64; 3]>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("grid dims must each be >= 1"));
        }
        for a in 0..3 {
            if !(bbox_min[a].is_finite() && bbox_max[a].is_finite() && bbox_min[a] < bbox_max[a]) {
                return Err(Error::invalid(format!(
                    "bbox axis {a}: min {} must be < max {}",
                    bbox_min[a], bbox_max[a]
                )));
            }
        }
        let expect = dims[0] * dims[1] * dims[2];
        if values.len() != expect {
            return Err(Error::invalid(format!(
                "{} node values for dims {dims:?} (want {expect})",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("grid values must be finite"));
        }
        Ok(Self {
            dims,
            bbox_min,
            bbox_max,
            values,
        })
    }

    /// Grid filled by evaluating `f` at every node position.
    pub fn from_fn(
        dims: [usize; 3],
        bbox_min: [f64; 3],
        bbox_max: [f64; 3],
        mut f: impl FnMut([f64; 3]) -> [f64; 3],
    ) -> Result<Self> {
        let mut grid = Self::new(
            dims,
            bbox_min,
            bbox_max,
            vec![[0.0; 3]; dims[0] * dims[1] * dims[2]],
        )?;
        for d in 0..dims[0] {
            for h in 0..dims[1] {
                for w in 0..dims[2] {
                    let p = grid.node_position(d, h, w);
                    let idx = grid.index(d, h, w);
                    grid.values[idx] = f(p);
                }
            }
        }
        Ok(grid)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bbox_min(&self) -> [f64; 3] {
        self.bbox_min
    }

    pub fn bbox_max(&self) -> [f64; 3] {
        self.bbox_max
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    #[inline]
    fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.dims[1] + h) * self.dims[2] + w
    }

    pub fn node(&self, d: usize, h: usize, w: usize) -> [f64; 3] {
        self.values[self.index(d, h, w)]
    }

    /// World position of node `(d, h, w)`; size-1 axes sit at the box minimum.
    pub fn node_position(&self, d: usize, h: usize, w: usize) -> [f64; 3] {
        let along = |i: usize, n: usize, axis: usize| -> f64 {
            if n == 1 {
                self.bbox_min[axis]
            } else {
                self.bbox_min[axis]
                    + (self.bbox_max[axis] - self.bbox_min[axis]) * i as f64 / (n - 1) as f64
            }
        };
        [
            along(w, self.dims[2], 0),
            along(h, self.dims[1], 1),
            along(d, self.dims[0], 2),
        ]
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Upsamples by an integer factor: output dims are `(n-1)*factor + 1` per
/// axis over the same box. Input nodes are reproduced exactly; new nodes are
/// trilinear interpolations of the surrounding input cell.
pub fn trilinear_upsample(grid: &VectorGrid, factor: usize) -> Result<VectorGrid> {
    if factor < 1 {
        return Err(Error::invalid("upsample factor must be >= 1"));
    }
    let [din, hin, win] = grid.dims;
    let out_dims = [
        (din - 1) * factor + 1,
        (hin - 1) * factor + 1,
        (win - 1) * factor + 1,
    ];
    let mut values = Vec::with_capacity(out_dims[0] * out_dims[1] * out_dims[2]);
    // Split an output index into its input cell and in-cell fraction. The
    // fraction is 0 exactly on input nodes, which makes their reproduction
    // bitwise.
    let split = |o: usize, n_in: usize| -> (usize, f64) {
        if n_in == 1 {
            return (0, 0.0);
        }
        let (cell, rem) = (o / factor, o % factor);
        // rem == 0 lands on an input node; a zero fraction copies it bitwise
        // (this covers the last node, where cell == n_in - 1).
        (cell, rem as f64 / factor as f64)
    };
    for od in 0..out_dims[0] {
        let (d0, td) = split(od, din);
        let d1 = (d0 + 1).min(din - 1);
        for oh in 0..out_dims[1] {
            let (h0, th) = split(oh, hin);
            let h1 = (h0 + 1).min(hin - 1);
            for ow in 0..out_dims[2] {
                let (w0, tw) = split(ow, win);
                let w1 = (w0 + 1).min(win - 1);
                let mut v = [0.0f64; 3];
                for (a, out) in v.iter_mut().enumerate() {
                    let c00 = lerp(grid.node(d0, h0, w0)[a], grid.node(d0, h0, w1)[a], tw);
                    let c01 = lerp(grid.node(d0, h1, w0)[a], grid.node(d0, h1, w1)[a], tw);
                    let c10 = lerp(grid.node(d1, h0, w0)[a], grid.node(d1, h0, w1)[a], tw);
                    let c11 = lerp(grid.node(d1, h1, w0)[a], grid.node(d1, h1, w1)[a], tw);
                    *out = lerp(lerp(c00, c01, th), lerp(c10, c11, th), td);
                }
                values.push(v);
            }
        }
    }
    VectorGrid::new(out_dims, grid.bbox_min, grid.bbox_max, values)
}

/// A normalized fusion weight vector: nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Softmax normalization with max subtraction.
pub fn normalize_weights(raw: &[f64]) -> Result<WeightVector> {
    if raw.is_empty() {
        return Err(Error::invalid("need at least one weight"));
    }
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("weights must be finite"));
    }
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(WeightVector {
        weights: exps.into_iter().map(|e| e / sum).collect(),
    })
}

fn check_same_shape(fields: &[VectorGrid]) -> Result<()> {
    let first = &fields[0];
    for (k, f) in fields.iter().enumerate().skip(1) {
        if f.dims != first.dims || f.bbox_min != first.bbox_min || f.bbox_max != first.bbox_max {
            return Err(Error::invalid(format!(
                "field {k} has different dims or bbox from field 0"
            )));
        }
    }
    Ok(())
}

/// Weighted sum of fields sharing dims and box: `out = sum_k w_k field_k`.
pub fn fuse(fields: &[VectorGrid], weights: &WeightVector) -> Result<VectorGrid> {
    if fields.is_empty() {
        return Err(Error::invalid("need at least one field to fuse"));
    }
    if fields.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} fields for {} weights",
            fields.len(),
            weights.len()
        )));
    }
    check_same_shape(fields)?;
    let mut values = vec![[0.0f64; 3]; fields[0].values.len()];
    for (field, &w) in fields.iter().zip(weights.weights()) {
        for (acc, v) in values.iter_mut().zip(&field.values) {
            for a in 0..3 {
                acc[a] += w * v[a];
            }
        }
    }
    VectorGrid::new(fields[0].dims, fields[0].bbox_min, fields[0].bbox_max, values)
}

/// Per-node variant: each field carries one raw weight per node; weights are
/// softmax-normalized across fields independently at every node, then the
/// fields are summed element-wise.
pub fn fuse_node_weighted(fields: &[VectorGrid], raw_weights: &[Vec<f64>]) -> Result<VectorGrid> {
    if fields.is_empty() {
        return Err(Error::invalid("need at least one field to fuse"));
    }
    if fields.len() != raw_weights.len() {
        return Err(Error::invalid(format!(
            "{} fields for {} weight grids",
            fields.len(),
            raw_weights.len()
        )));
    }
    check_same_shape(fields)?;
    let node_count = fields[0].values.len();
    for (k, w) in raw_weights.iter().enumerate() {
        if w.len() != node_count {
            return Err(Error::invalid(format!(
                "weight grid {k} has {} entries for {node_count} nodes",
                w.len()
            )));
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("weight grid {k} must be finite")));
        }
    }
    let mut values = vec![[0.0f64; 3]; node_count];
    let mut raw = vec![0.0f64; fields.len()];
    for node in 0..node_count {
        for (k, w) in raw_weights.iter().enumerate() {
            raw[k] = w[node];
        }
        let w = normalize_weights(&raw)?;
        for (field, &wk) in fields.iter().zip(w.weights()) {
            for a in 0..3 {
                values[node][a] += wk * field.values[node][a];
            }
        }
    }
    VectorGrid::new(fields[0].dims, fields[0].bbox_min, fields[0].bbox_max, values)
}

/// Trilinear sample at a world point strictly inside the box (boundaries
/// inclusive). Out-of-box points are an out-of-domain error rather than a
/// clamped extrapolation; silent extrapolation hides misregistered templates.
pub fn sample_grid(grid: &VectorGrid, point: [f64; 3]) -> Result<[f64; 3]> {
    for a in 0..3 {
        if !(point[a] >= grid.bbox_min[a] && point[a] <= grid.bbox_max[a]) {
            return Err(Error::OutOfDomain(format!(
                "point {point:?} outside grid box axis {a} [{}, {}]",
                grid.bbox_min[a], grid.bbox_max[a]
            )));
        }
    }
    // Per axis: containing cell and in-cell fraction (upper boundary resolves
    // to the last cell with fraction 1).
    let locate = |x: f64, axis: usize, n: usize| -> (usize, f64) {
        if n == 1 {
            return (0, 0.0);
        }
        let t = (x - grid.bbox_min[axis]) / (grid.bbox_max[axis] - grid.bbox_min[axis])
            * (n - 1) as f64;
        let cell = (t.floor() as usize).min(n - 2);
        (cell, t - cell as f64)
    };
    let (w0, tw) = locate(point[0], 0, grid.dims[2]);
    let (h0, th) = locate(point[1], 1, grid.dims[1]);
    let (d0, td) = locate(point[2], 2, grid.dims[0]);
    let w1 = (w0 + 1).min(grid.dims[2] - 1);
    let h1 = (h0 + 1).min(grid.dims[1] - 1);
    let d1 = (d0 + 1).min(grid.dims[0] - 1);

    let mut out = [0.0f64; 3];
    for (a, o) in out.iter_mut().enumerate() {
        let c00 = lerp(grid.node(d0, h0, w0)[a], grid.node(d0, h0, w1)[a], tw);
        let c01 = lerp(grid.node(d0, h1, w0)[a], grid.node(d0, h1, w1)[a], tw);
        let c10 = lerp(grid.node(d1, h0, w0)[a], grid.node(d1, h0, w1)[a], tw);
        let c11 = lerp(grid.node(d1, h1, w0)[a], grid.node(d1, h1, w1)[a], tw);
        *o = lerp(lerp(c00, c01, th), lerp(c10, c11, th), td);
    }
    Ok(out)
}

/// Moves every template point by the sampled grid vector; labels preserved.
pub fn apply_grid(template: &LabeledCloud, grid: &VectorGrid) -> Result<LabeledCloud> {
    let mut points = Vec::with_capacity(template.len());
    for (i, &p) in template.points().iter().enumerate() {
        let v = sample_grid(grid, p).map_err(|_| {
            Error::OutOfDomain(format!("template point {i} at {p:?} outside grid box"))
        })?;
        points.push([p[0] + v[0], p[1] + v[1], p[2] + v[2]]);
    }
    LabeledCloud::new(points, template.labels().map(|l| l.to_vec()))
}

const S2MF_MAGIC: &[u8; 4] = b"S2MF";

impl VectorGrid {
    /// Writes the binary grid format: magic `S2MF`, little-endian u32 dims
    /// `D H W`, six f32 box corners `(minx miny minz maxx maxy maxz)`, then
    /// `D*H*W*3` f32 node values in d-major, then h, then w order with
    /// `(vx, vy, vz)` contiguous.
    pub fn write_s2mf(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        self.write_s2mf_to(&mut out)
    }

    pub fn write_s2mf_to(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(S2MF_MAGIC)?;
        for &d in &self.dims {
            out.write_all(&(d as u32).to_le_bytes())?;
        }
        for &b in self.bbox_min.iter().chain(self.bbox_max.iter()) {
            out.write_all(&(b as f32).to_le_bytes())?;
        }
        for v in &self.values {
            for &c in v {
                out.write_all(&(c as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_s2mf(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref())?;
        Self::read_s2mf_from(&mut bytes.as_slice())
    }

    pub fn read_s2mf_from(reader: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != S2MF_MAGIC {
            return Err(Error::parse("missing S2MF magic"));
        }
        let mut u32_buf = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut u32_buf)?;
            Ok(u32::from_le_bytes(u32_buf))
        };
        let d = read_u32(reader)? as usize;
        let h = read_u32(reader)? as usize;
        let w = read_u32(reader)? as usize;
        let mut f32_buf = [0u8; 4];
        let mut read_f32 = |r: &mut dyn Read| -> Result<f32> {
            r.read_exact(&mut f32_buf)?;
            Ok(f32::from_le_bytes(f32_buf))
        };
        let mut corners = [0.0f64; 6];
        for c in &mut corners {
            *c = read_f32(reader)? as f64;
        }
        let count = d
            .checked_mul(h)
            .and_then(|x| x.checked_mul(w))
            .ok_or_else(|| Error::parse("grid dims overflow"))?;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push([
                read_f32(reader)? as f64,
                read_f32(reader)? as f64,
                read_f32(reader)? as f64,
            ]);
        }
        VectorGrid::new(
            [d, h, w],
            [corners[0], corners[1], corners[2]],
            [corners[3], corners[4], corners[5]],
            values,
        )
    }
}
