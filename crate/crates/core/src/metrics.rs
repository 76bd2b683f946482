//! Attack-detection error rates and DET sweeps.
//!
//! Decision rule throughout: a comparison is flagged as an attack iff its
//! score is `>= threshold`. APCER is the share of morph comparisons that are
//! not flagged, BPCER the share of bona fide comparisons that are. Both are
//! reported in percent.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{DmadError, Result};
use crate::manifest::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    /// Higher means more morph-like.
    pub score: f64,
    pub label: Label,
}

impl ScoredSample {
    pub fn new(score: f64, label: Label) -> Self {
        Self { score, label }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    /// Ordered by strictly increasing threshold, bracketed by -inf and +inf.
    pub points: Vec<DetPoint>,
}

/// Scores split by label and sorted ascending.
struct Sorted {
    morph: Vec<f64>,
    bonafide: Vec<f64>,
}

impl Sorted {
    fn new(samples: &[ScoredSample]) -> Result<Self> {
        let mut morph = Vec::new();
        let mut bonafide = Vec::new();
        for (index, s) in samples.iter().enumerate() {
            if !s.score.is_finite() {
                return Err(DmadError::NonFinite { index });
            }
            match s.label {
                Label::Morph => morph.push(s.score),
                Label::Bonafide => bonafide.push(s.score),
            }
        }
        if morph.is_empty() || bonafide.is_empty() {
            let missing = if morph.is_empty() { Label::Morph } else { Label::Bonafide };
            return Err(DmadError::SingleClass(format!("no {missing} scores to evaluate")));
        }
        morph.sort_by(f64::total_cmp);
        bonafide.sort_by(f64::total_cmp);
        Ok(Self { morph, bonafide })
    }

    fn point(&self, threshold: f64) -> DetPoint {
        let missed = self.morph.partition_point(|&s| s < threshold);
        let rejected = self.bonafide.len() - self.bonafide.partition_point(|&s| s < threshold);
        DetPoint {
            threshold,
            apcer: percent(missed, self.morph.len()),
            bpcer: percent(rejected, self.bonafide.len()),
        }
    }

    fn curve(&self) -> DetCurve {
        let mut thresholds: Vec<f64> = self.morph.iter().chain(&self.bonafide).copied().collect();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let points = std::iter::once(f64::NEG_INFINITY)
            .chain(thresholds)
            .chain(std::iter::once(f64::INFINITY))
            .map(|t| self.point(t))
            .collect();
        DetCurve { points }
    }
}

fn percent(count: usize, total: usize) -> f64 {
    100.0 * count as f64 / total as f64
}

pub fn det_curve(samples: &[ScoredSample]) -> Result<DetCurve> {
    Ok(Sorted::new(samples)?.curve())
}

/// `(apcer, bpcer)` at an arbitrary threshold.
pub fn rates_at(samples: &[ScoredSample], threshold: f64) -> Result<(f64, f64)> {
    let p = Sorted::new(samples)?.point(threshold);
    Ok((p.apcer, p.bpcer))
}

/// Equal error rate in percent.
///
/// `apcer - bpcer` is non-decreasing along the sweep. An exact zero is
/// returned as is (the lowest such threshold); otherwise both curves are
/// interpolated linearly between the two points bracketing the sign change.
pub fn d_eer(samples: &[ScoredSample]) -> Result<f64> {
    let curve = det_curve(samples)?;
    Ok(eer_from_curve(&curve))
}

pub fn eer_from_curve(curve: &DetCurve) -> f64 {
    let pts = &curve.points;
    for (k, p) in pts.iter().enumerate() {
        let diff = p.apcer - p.bpcer;
        if diff == 0.0 {
            return p.apcer;
        }
        if diff > 0.0 {
            // The -inf sentinel has diff = -100, so k >= 1 here.
            let q = &pts[k - 1];
            let lo = q.apcer - q.bpcer;
            let s = -lo / (diff - lo);
            let eer = q.apcer + s * (p.apcer - q.apcer);
            return eer.clamp(0.0, 100.0);
        }
    }
    unreachable!("+inf sentinel has apcer - bpcer = 100")
}

/// Lowest BPCER among operating points whose APCER does not exceed
/// `target_apcer` percent.
pub fn bpcer_at_apcer(samples: &[ScoredSample], target_apcer: f64) -> Result<f64> {
    if !(target_apcer > 0.0 && target_apcer < 100.0) {
        return Err(DmadError::InvalidConfig(format!(
            "target APCER {target_apcer} outside (0, 100)"
        )));
    }
    let curve = det_curve(samples)?;
    Ok(bpcer_at_apcer_on_curve(&curve, target_apcer))
}

pub fn bpcer_at_apcer_on_curve(curve: &DetCurve, target_apcer: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.apcer <= target_apcer)
        .map(|p| p.bpcer)
        .fold(100.0, f64::min)
}

/// D-EER plus BPCER at APCER = 5% and 10%.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub d_eer: f64,
    pub bpcer_at_5: f64,
    pub bpcer_at_10: f64,
}

pub fn summarize(samples: &[ScoredSample]) -> Result<Summary> {
    let curve = det_curve(samples)?;
    Ok(Summary {
        d_eer: eer_from_curve(&curve),
        bpcer_at_5: bpcer_at_apcer_on_curve(&curve, 5.0),
        bpcer_at_10: bpcer_at_apcer_on_curve(&curve, 10.0),
    })
}

pub const DET_CSV_HEADER: &str = "threshold,apcer_percent,bpcer_percent";

/// One row per sweep point, six decimals; the sentinels print as `-inf` and
/// `inf`.
pub fn write_det_csv<W: Write>(curve: &DetCurve, mut out: W) -> Result<()> {
    writeln!(out, "{DET_CSV_HEADER}")?;
    for p in &curve.points {
        writeln!(out, "{:.6},{:.6},{:.6}", p.threshold, p.apcer, p.bpcer)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(morph: &[f64], bonafide: &[f64]) -> Vec<ScoredSample> {
        morph
            .iter()
            .map(|&s| ScoredSample::new(s, Label::Morph))
            .chain(bonafide.iter().map(|&s| ScoredSample::new(s, Label::Bonafide)))
            .collect()
    }

    #[test]
    fn perfect_separation() {
        let s = samples(&[2.0, 3.0], &[0.0, 1.0]);
        assert_eq!(rates_at(&s, 1.5).unwrap(), (0.0, 0.0));
        assert_eq!(d_eer(&s).unwrap(), 0.0);
        assert_eq!(bpcer_at_apcer(&s, 5.0).unwrap(), 0.0);
    }

    #[test]
    fn interleaved_four_points() {
        let s = samples(&[1.0, 3.0], &[2.0, 4.0]);
        assert_eq!(d_eer(&s).unwrap(), 50.0);
        let curve = det_curve(&s).unwrap();
        let rows: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.apcer, p.bpcer)).collect();
        assert_eq!(
            rows,
            vec![(0.0, 100.0), (0.0, 100.0), (50.0, 100.0), (50.0, 50.0), (100.0, 50.0), (100.0, 0.0)]
        );
    }

    #[test]
    fn all_equal_scores() {
        let s = samples(&[0.5, 0.5, 0.5], &[0.5, 0.5]);
        let curve = det_curve(&s).unwrap();
        assert_eq!(curve.points.len(), 3);
        for p in &curve.points {
            assert!(matches!((p.apcer, p.bpcer), (0.0, 100.0) | (100.0, 0.0)));
        }
        assert_eq!(bpcer_at_apcer(&s, 5.0).unwrap(), 100.0);
        assert_eq!(d_eer(&s).unwrap(), 50.0);
    }

    #[test]
    fn interpolated_crossing() {
        // Around threshold 2..3 the sweep jumps from (33.3, 100) to (33.3, 0);
        // the curves meet two thirds of the way along that segment.
        let s = samples(&[1.0, 3.0, 5.0], &[2.0]);
        let eer = d_eer(&s).unwrap();
        assert!((eer - 100.0 / 3.0).abs() < 1e-12, "{eer}");
    }

    #[test]
    fn errors() {
        assert!(matches!(det_curve(&samples(&[1.0], &[])), Err(DmadError::SingleClass(_))));
        assert!(d_eer(&samples(&[], &[1.0])).is_err());
        assert!(bpcer_at_apcer(&samples(&[1.0], &[0.0]), 0.0).is_err());
        assert!(bpcer_at_apcer(&samples(&[1.0], &[0.0]), 100.0).is_err());
        assert!(det_curve(&samples(&[f64::NAN], &[0.0])).is_err());
    }

    #[test]
    fn csv_layout() {
        let curve = det_curve(&samples(&[2.0], &[1.0])).unwrap();
        let mut out = Vec::new();
        write_det_csv(&curve, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "threshold,apcer_percent,bpcer_percent\n\
             -inf,0.000000,100.000000\n\
             1.000000,0.000000,100.000000\n\
             2.000000,0.000000,0.000000\n\
             inf,100.000000,0.000000\n"
        );
    }
}
