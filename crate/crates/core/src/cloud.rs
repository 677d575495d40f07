//! Labeled point clouds, the universal mesh representation.
//!
//! Every stage of the pipeline consumes and produces [`LabeledCloud`]s:
//! N points in millimetres with an optional per-point tissue label in
//! `0..=23`. Clouds are immutable once built; transforms return new clouds.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Highest valid tissue label.
pub const MAX_TISSUE_LABEL: u8 = 23;

/// A point cloud in millimetres with optional per-point tissue labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    points: Vec<[f64; 3]>,
    labels: Option<Vec<u8>>,
}

impl LabeledCloud {
    /// Builds a cloud, validating finiteness and label ranges.
    pub fn new(points: Vec<[f64; 3]>, labels: Option<Vec<u8>>) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if !p.iter().all(|c| c.is_finite()) {
                return Err(Error::invalid(format!(
                    "point {i} has non-finite coordinate {p:?}"
                )));
            }
        }
        if let Some(ref ls) = labels {
            if ls.len() != points.len() {
                return Err(Error::invalid(format!(
                    "{} labels for {} points",
                    ls.len(),
                    points.len()
                )));
            }
            if let Some(bad) = ls.iter().find(|&&l| l > MAX_TISSUE_LABEL) {
                return Err(Error::invalid(format!(
                    "label {bad} outside 0..={MAX_TISSUE_LABEL}"
                )));
            }
        }
        Ok(Self { points, labels })
    }

    /// Unlabeled cloud from raw points.
    pub fn unlabeled(points: Vec<[f64; 3]>) -> Result<Self> {
        Self::new(points, None)
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Rebuilds the cloud with the same labels but new coordinates.
    ///
    /// Panics if the point count changes; transforms never add or drop points.
    pub(crate) fn with_points(&self, points: Vec<[f64; 3]>) -> Self {
        assert_eq!(points.len(), self.points.len());
        Self {
            points,
            labels: self.labels.clone(),
        }
    }

    /// Axis-aligned bounding box `(min, max)`, or `None` for an empty cloud.
    pub fn bbox(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.points.first()?;
        let mut lo = first;
        let mut hi = first;
        for p in &self.points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Some((lo, hi))
    }

    /// Diagonal length of the bounding box; zero for empty or single-point clouds.
    pub fn bbox_diagonal(&self) -> f64 {
        match self.bbox() {
            Some((lo, hi)) => {
                let d = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
                (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
            }
            None => 0.0,
        }
    }

    /// Reads a cloud from CSV with header `x,y,z` or `x,y,z,label`.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_csv_from(BufReader::new(file))
    }

    pub fn read_csv_from(reader: impl BufRead) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::parse(format!("cloud csv header: {e}")))?
            .clone();
        let labeled = match headers.len() {
            3 => false,
            4 => true,
            n => return Err(Error::parse(format!("cloud csv has {n} columns, want 3 or 4"))),
        };
        let expect = if labeled { "x,y,z,label" } else { "x,y,z" };
        let got = headers.iter().collect::<Vec<_>>().join(",");
        if got != expect {
            return Err(Error::parse(format!(
                "cloud csv header `{got}`, want `{expect}`"
            )));
        }

        let mut points = Vec::new();
        let mut labels = if labeled { Some(Vec::new()) } else { None };
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(format!("cloud csv row {line}: {e}")))?;
            let coord = |idx: usize| -> Result<f64> {
                rec.get(idx)
                    .ok_or_else(|| Error::parse(format!("cloud csv row {line}: missing field")))?
                    .parse::<f64>()
                    .map_err(|e| Error::parse(format!("cloud csv row {line}: {e}")))
            };
            points.push([coord(0)?, coord(1)?, coord(2)?]);
            if let Some(ref mut ls) = labels {
                let raw = rec
                    .get(3)
                    .ok_or_else(|| Error::parse(format!("cloud csv row {line}: missing label")))?;
                let label = raw
                    .parse::<u8>()
                    .map_err(|e| Error::parse(format!("cloud csv row {line}: label: {e}")))?;
                ls.push(label);
            }
        }
        Self::new(points, labels)
    }

    /// Writes the cloud as CSV; coordinates are emitted with 6 decimal places.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        self.write_csv_to(&mut file)
    }

    pub fn write_csv_to(&self, out: &mut impl Write) -> Result<()> {
        match self.labels {
            Some(ref ls) => {
                writeln!(out, "x,y,z,label")?;
                for (p, l) in self.points.iter().zip(ls) {
                    writeln!(out, "{:.6},{:.6},{:.6},{}", p[0], p[1], p[2], l)?;
                }
            }
            None => {
                writeln!(out, "x,y,z")?;
                for p in &self.points {
                    writeln!(out, "{:.6},{:.6},{:.6}", p[0], p[1], p[2])?;
                }
            }
        }
        Ok(())
    }
}

/// Joint bounding box of two clouds, or `None` if both are empty.
pub fn joint_bbox(a: &LabeledCloud, b: &LabeledCloud) -> Option<([f64; 3], [f64; 3])> {
    match (a.bbox(), b.bbox()) {
        (Some((alo, ahi)), Some((blo, bhi))) => {
            let mut lo = alo;
            let mut hi = ahi;
            for a in 0..3 {
                lo[a] = lo[a].min(blo[a]);
                hi[a] = hi[a].max(bhi[a]);
            }
            Some((lo, hi))
        }
        (Some(b), None) | (None, Some(b)) => Some(b),
        (None, None) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_points() {
        let err = LabeledCloud::unlabeled(vec![[0.0, f64::NAN, 0.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn rejects_label_mismatch_and_range() {
        assert!(LabeledCloud::new(vec![[0.0; 3]], Some(vec![1, 2])).is_err());
        assert!(LabeledCloud::new(vec![[0.0; 3]], Some(vec![24])).is_err());
        assert!(LabeledCloud::new(vec![[0.0; 3]], Some(vec![23])).is_ok());
    }

    #[test]
    fn csv_round_trip_labeled() {
        let cloud = LabeledCloud::new(
            vec![[1.25, -2.5, 3.0], [0.000001, 0.0, -7.125]],
            Some(vec![0, 23]),
        )
        .unwrap();
        let mut buf = Vec::new();
        cloud.write_csv_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x,y,z,label\n"));
        let back = LabeledCloud::read_csv_from(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.labels(), cloud.labels());
        for (p, q) in back.points().iter().zip(cloud.points()) {
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn csv_rejects_bad_header() {
        let err = LabeledCloud::read_csv_from(std::io::Cursor::new(b"a,b,c\n1,2,3\n".to_vec()))
            .unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn bbox_diagonal() {
        let cloud = LabeledCloud::unlabeled(vec![[0.0, 0.0, 0.0], [3.0, 4.0, 0.0]]).unwrap();
        assert!((cloud.bbox_diagonal() - 5.0).abs() < 1e-12);
    }
}
