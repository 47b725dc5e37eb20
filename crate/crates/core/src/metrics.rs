//! 3D-ROC evaluation and map rendering.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SapError};
use crate::prior::DetectionMap;

/// Points of the 3D ROC, ordered by descending threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocTriple {
    pub taus: Vec<f64>,
    pub pd: Vec<f64>,
    pub pf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc_pd_pf: f64,
    pub auc_pd_tau: f64,
    pub auc_pf_tau: f64,
    pub auc_oa: f64,
    /// `+∞` when `auc_pf_tau` is zero.
    pub auc_snpr: f64,
}

impl AucReport {
    pub fn from_base(auc_pd_pf: f64, auc_pd_tau: f64, auc_pf_tau: f64) -> Self {
        let auc_snpr = if auc_pf_tau == 0.0 { f64::INFINITY } else { auc_pd_tau / auc_pf_tau };
        Self { auc_pd_pf, auc_pd_tau, auc_pf_tau, auc_oa: auc_pd_pf + auc_pd_tau - auc_pf_tau, auc_snpr }
    }

    pub const CSV_HEADER: &'static str = "auc_pd_pf,auc_pd_tau,auc_pf_tau,auc_oa,auc_snpr";

    pub fn csv_row(&self) -> String {
        let snpr = if self.auc_snpr.is_infinite() { "inf".to_string() } else { format!("{}", self.auc_snpr) };
        format!("{},{},{},{},{}", self.auc_pd_pf, self.auc_pd_tau, self.auc_pf_tau, self.auc_oa, snpr)
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}\n", Self::CSV_HEADER, self.csv_row())
    }
}

/// Detection is `score > τ`. The thresholds are the distinct scores plus 0
/// and 1; at `τ = 0` every pixel counts as detected so the curves close at
/// `(1, 1)`.
pub fn roc_curves(scores: &[f64], truth: &[bool]) -> Result<RocTriple> {
    if scores.len() != truth.len() {
        return Err(SapError::LengthMismatch { expected: truth.len(), found: scores.len() });
    }
    if let Some(i) = scores.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(SapError::InvalidArgument(format!("score {i} = {} lies outside [0, 1]", scores[i])));
    }
    let n_anom = truth.iter().filter(|&&t| t).count();
    let n_bg = truth.len() - n_anom;
    if n_anom == 0 || n_bg == 0 {
        return Err(SapError::InvalidArgument("truth needs both anomaly and background pixels".into()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut taus: Vec<f64> = order.iter().map(|&i| scores[i]).collect();
    taus.push(0.0);
    taus.insert(0, 1.0);
    taus.dedup();

    let (mut tp, mut fp) = (0usize, 0usize);
    let mut next = 0;
    let mut pd = Vec::with_capacity(taus.len());
    let mut pf = Vec::with_capacity(taus.len());
    for &tau in &taus {
        if tau == 0.0 {
            tp = n_anom;
            fp = n_bg;
        } else {
            while next < order.len() && scores[order[next]] > tau {
                if truth[order[next]] {
                    tp += 1;
                } else {
                    fp += 1;
                }
                next += 1;
            }
        }
        pd.push(tp as f64 / n_anom as f64);
        pf.push(fp as f64 / n_bg as f64);
    }
    Ok(RocTriple { taus, pd, pf })
}

pub fn roc_curves_map(map: &DetectionMap, truth: &[bool]) -> Result<RocTriple> {
    roc_curves(&map.scores, truth)
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(xs, ys)| (xs[1] - xs[0]).abs() * 0.5 * (ys[0] + ys[1])).sum()
}

pub fn auc_indicators(r: &RocTriple) -> AucReport {
    AucReport::from_base(trapezoid(&r.pf, &r.pd), trapezoid(&r.taus, &r.pd), trapezoid(&r.taus, &r.pf))
}

/// Binary greymap (`P5`) bytes with value `round(255·score)`, halves rounded up.
pub fn pgm_bytes(map: &DetectionMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.scores.iter().map(|&s| (255.0 * s.clamp(0.0, 1.0) + 0.5).floor() as u8));
    out
}

pub fn render_map(map: &DetectionMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if map.scores.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(SapError::InvalidArgument("render needs a map normalized to [0, 1]".into()));
    }
    fs::write(path, pgm_bytes(map)).map_err(|e| SapError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let scores = [0.9, 0.9, 0.1, 0.1, 0.1];
        let truth = [true, true, false, false, false];
        let rep = auc_indicators(&roc_curves(&scores, &truth).unwrap());
        assert!((rep.auc_pd_pf - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_scores_follow_chance_line() {
        for c in [0.0, 0.3, 1.0] {
            let truth = [true, false, false, true, false];
            let rep = auc_indicators(&roc_curves(&[c; 5], &truth).unwrap());
            assert!((rep.auc_pd_pf - 0.5).abs() < 1e-12, "{c}: {}", rep.auc_pd_pf);
        }
    }

    #[test]
    fn ten_pixel_case_matches_enumeration() {
        let scores: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
        let truth: Vec<bool> = (0..10).map(|i| [2, 7, 9].contains(&i)).collect();
        let r = roc_curves(&scores, &truth).unwrap();
        let mut want_taus: Vec<f64> = scores.clone();
        want_taus.push(0.0);
        want_taus.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(r.taus, want_taus);
        for (i, &tau) in r.taus.iter().enumerate() {
            let hit = |anom: bool| {
                let pool: Vec<usize> = (0..10).filter(|&p| truth[p] == anom).collect();
                let n = pool.iter().filter(|&&p| tau == 0.0 || scores[p] > tau).count();
                n as f64 / pool.len() as f64
            };
            assert_eq!(r.pd[i], hit(true), "τ = {tau}");
            assert_eq!(r.pf[i], hit(false), "τ = {tau}");
        }
    }

    #[test]
    fn degenerate_truth_is_rejected() {
        assert!(roc_curves(&[0.1, 0.2], &[true, true]).is_err());
        assert!(roc_curves(&[0.1, 0.2], &[false, false]).is_err());
        assert!(roc_curves(&[0.1, 1.2], &[true, false]).is_err());
    }

    #[test]
    fn composite_indicators() {
        let rep = AucReport::from_base(0.99586, 0.50340, 0.01431);
        assert!((rep.auc_oa - 1.48495).abs() < 1e-9);
        assert!((rep.auc_snpr - 35.1782).abs() < 1e-3);
        let ideal = AucReport::from_base(1.0, 1.0, 0.0);
        assert_eq!(ideal.auc_oa, 2.0);
        assert!(ideal.auc_snpr.is_infinite());
        assert!(ideal.csv_row().ends_with(",inf"));
    }

    #[test]
    fn pgm_rounding() {
        let map = DetectionMap { height: 1, width: 4, scores: vec![0.0, 0.5, 1.0, 0.2], normalized: true };
        let bytes = pgm_bytes(&map);
        let header = b"P5\n4 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255, 51]);
    }

    #[test]
    fn pgm_extremes() {
        let zeros = DetectionMap { height: 2, width: 3, scores: vec![0.0; 6], normalized: true };
        assert!(pgm_bytes(&zeros).ends_with(&[0; 6]));
        let ones = DetectionMap { height: 2, width: 3, scores: vec![1.0; 6], normalized: true };
        assert!(pgm_bytes(&ones).ends_with(&[255; 6]));
    }
}
