//! Clinical computation: ventricular volumes, ejection fraction, and the
//! correlation against the clinician-provided strain reference.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cloud::LabeledCloud;
use crate::error::{Error, Result};
use crate::metrics::{extract_region, subsample};
use crate::volume::delaunay_volume;

/// One row of the patient reference table. `glps` is a percent strain value
/// (negative by convention); `ef` is stored as a fraction of 1 regardless of
/// which unit the file declared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub glps: Option<f64>,
    pub ef: Option<f64>,
}

/// Reads the patient table: CSV header `patient_id,glps,ef` with `ef` as a
/// fraction, or `patient_id,glps,ef_percent` to declare percent. Empty
/// fields mean the value is missing.
pub fn read_patients_csv(path: impl AsRef<Path>) -> Result<Vec<PatientRecord>> {
    let file = std::fs::File::open(path.as_ref())?;
    read_patients_csv_from(std::io::BufReader::new(file))
}

pub fn read_patients_csv_from(reader: impl BufRead) -> Result<Vec<PatientRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(format!("patient csv header: {e}")))?
        .clone();
    let got = headers.iter().collect::<Vec<_>>().join(",");
    let ef_is_percent = match got.as_str() {
        "patient_id,glps,ef" => false,
        "patient_id,glps,ef_percent" => true,
        other => {
            return Err(Error::parse(format!(
                "patient csv header `{other}`, want `patient_id,glps,ef[_percent]`"
            )))
        }
    };
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("patient csv row {line}: {e}")))?;
        let id = rec
            .get(0)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::parse(format!("patient csv row {line}: empty patient_id")))?
            .to_string();
        let parse_opt = |idx: usize, name: &str| -> Result<Option<f64>> {
            match rec.get(idx) {
                None | Some("") => Ok(None),
                Some(raw) => raw
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|e| Error::parse(format!("patient csv row {line}: {name}: {e}"))),
            }
        };
        let glps = parse_opt(1, "glps")?;
        if let Some(g) = glps {
            if !g.is_finite() {
                return Err(Error::parse(format!(
                    "patient csv row {line}: glps must be finite"
                )));
            }
        }
        let mut ef = parse_opt(2, "ef")?;
        if let Some(e) = ef {
            let (lo, hi) = if ef_is_percent { (0.0, 100.0) } else { (0.0, 1.0) };
            if !(e >= lo && e <= hi) {
                return Err(Error::parse(format!(
                    "patient csv row {line}: ef {e} outside [{lo}, {hi}]"
                )));
            }
            if ef_is_percent {
                ef = Some(e / 100.0);
            }
        }
        out.push(PatientRecord {
            patient_id: id,
            glps,
            ef,
        });
    }
    Ok(out)
}

/// Stroke volume and ejection fraction from end-diastolic and end-systolic
/// volumes: `SV = EDV - ESV`, `EF = SV / EDV * 100` percent.
pub fn ef(edv_mm3: f64, esv_mm3: f64) -> Result<f64> {
    if !(edv_mm3.is_finite() && edv_mm3 > 0.0) {
        return Err(Error::invalid(format!("EDV {edv_mm3} must be > 0")));
    }
    if !(esv_mm3.is_finite() && esv_mm3 >= 0.0 && esv_mm3 <= edv_mm3) {
        return Err(Error::invalid(format!(
            "ESV {esv_mm3} must lie in [0, EDV = {edv_mm3}]"
        )));
    }
    Ok((edv_mm3 - esv_mm3) / edv_mm3 * 100.0)
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!(
            "series lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least 2 pairs, have {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "a series has zero variance".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Provenance of one region-volume computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub region_label_set: Vec<u8>,
    pub point_count_used: usize,
    pub volume_mm3: f64,
    pub subsample_rate: f64,
    pub seed: u64,
}

/// Volume of one labeled region: subsample the cloud, extract the region,
/// then take the enclosed volume of the remaining points.
pub fn region_volume(
    cloud: &LabeledCloud,
    labels: &BTreeSet<u8>,
    subsample_rate: f64,
    seed: u64,
) -> Result<VolumeReport> {
    let sampled = subsample(cloud, subsample_rate, seed)?;
    let region = extract_region(&sampled, labels)?;
    let volume = delaunay_volume(&region)?;
    Ok(VolumeReport {
        region_label_set: labels.iter().copied().collect(),
        point_count_used: region.len(),
        volume_mm3: volume,
        subsample_rate,
        seed,
    })
}

/// Per-patient clinical results as written to the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalRow {
    pub patient_id: String,
    pub edv_mm3: Option<f64>,
    pub esv_mm3: Option<f64>,
    pub sv_mm3: Option<f64>,
    pub ef_percent: f64,
}

/// Writes the report CSV `patient_id,edv_mm3,esv_mm3,sv_mm3,ef_percent`.
pub fn write_clinical_csv(rows: &[ClinicalRow], out: &mut impl Write) -> Result<()> {
    writeln!(out, "patient_id,edv_mm3,esv_mm3,sv_mm3,ef_percent")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.4}",
            r.patient_id,
            opt(r.edv_mm3),
            opt(r.esv_mm3),
            opt(r.sv_mm3),
            r.ef_percent
        )?;
    }
    Ok(())
}

/// Correlation summary written next to the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PccSummary {
    /// `None` when fewer than two patients have both EF and GLPS.
    pub pcc: Option<f64>,
    /// Number of pairs entering the correlation.
    pub n: usize,
    /// Patients excluded for a missing GLPS or EF.
    pub excluded: Vec<String>,
}

/// Correlates EF (percent) against GLPS over patients carrying both.
pub fn pcc_summary(pairs: &[(String, Option<f64>, Option<f64>)]) -> PccSummary {
    let mut glps = Vec::new();
    let mut efs = Vec::new();
    let mut excluded = Vec::new();
    for (id, g, e) in pairs {
        match (g, e) {
            (Some(g), Some(e)) => {
                glps.push(*g);
                efs.push(*e);
            }
            _ => excluded.push(id.clone()),
        }
    }
    let pcc = pearson(&glps, &efs).ok();
    PccSummary {
        pcc,
        n: glps.len(),
        excluded,
    }
}
