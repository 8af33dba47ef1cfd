use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::ScoreSet;
use crate::error::{Error, Result};

/// Error rates at one acceptance threshold; a trial is accepted when its
/// score is at least `threshold`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub fa: f64,
    pub miss: f64,
}

/// Points ordered by increasing threshold, from `(-inf, fa 1, miss 0)` to
/// `(+inf, fa 0, miss 1)`, with one point per distinct score in between.
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub rate: f64,
    pub threshold: f64,
}

fn check_classes(tar: &[f64], non: &[f64]) -> Result<()> {
    if tar.is_empty() || non.is_empty() {
        return Err(Error::Precondition(format!(
            "need target and nontarget scores (got {} and {})",
            tar.len(),
            non.len()
        )));
    }
    Ok(())
}

impl DetCurve {
    pub fn from_scores(targets: &[f64], nontargets: &[f64]) -> Result<Self> {
        check_classes(targets, nontargets)?;
        if targets.iter().chain(nontargets).any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("score".into()));
        }
        let mut tar = targets.to_vec();
        let mut non = nontargets.to_vec();
        tar.sort_by(f64::total_cmp);
        non.sort_by(f64::total_cmp);
        let (nt, nn) = (tar.len(), non.len());

        let mut points = Vec::with_capacity(nt + nn + 2);
        points.push(DetPoint {
            threshold: f64::NEG_INFINITY,
            fa: 1.0,
            miss: 0.0,
        });
        // i targets and j nontargets lie strictly below the current threshold
        let (mut i, mut j) = (0, 0);
        while i < nt || j < nn {
            let theta = match (tar.get(i), non.get(j)) {
                (Some(&a), Some(&b)) => a.min(b),
                (Some(&a), None) => a,
                (None, Some(&b)) => b,
                (None, None) => unreachable!(),
            };
            points.push(DetPoint {
                threshold: theta,
                fa: (nn - j) as f64 / nn as f64,
                miss: i as f64 / nt as f64,
            });
            while i < nt && tar[i] == theta {
                i += 1;
            }
            while j < nn && non[j] == theta {
                j += 1;
            }
        }
        points.push(DetPoint {
            threshold: f64::INFINITY,
            fa: 0.0,
            miss: 1.0,
        });
        Ok(DetCurve { points })
    }

    /// Equal error rate by linear interpolation between the two adjacent
    /// points where `fa - miss` changes sign.
    pub fn eer(&self) -> Eer {
        let p = &self.points;
        for k in 0..p.len() - 1 {
            let d0 = p[k].fa - p[k].miss;
            let d1 = p[k + 1].fa - p[k + 1].miss;
            if d0 == 0.0 {
                return Eer {
                    rate: p[k].fa,
                    threshold: p[k].threshold,
                };
            }
            if d0 > 0.0 && d1 <= 0.0 {
                let t = d0 / (d0 - d1);
                let rate = p[k].fa + t * (p[k + 1].fa - p[k].fa);
                let (a, b) = (p[k].threshold, p[k + 1].threshold);
                let threshold = match (a.is_finite(), b.is_finite()) {
                    (true, true) => a + t * (b - a),
                    (false, _) => b,
                    (_, false) => a,
                };
                return Eer { rate, threshold };
            }
        }
        // fa - miss runs from +1 to -1, so a crossing always exists
        unreachable!("DET curve without an fa/miss crossing")
    }

    /// `threshold<TAB>fa<TAB>miss` lines under a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("threshold\tfa\tmiss\n");
        for p in &self.points {
            let _ = writeln!(out, "{}\t{}\t{}", p.threshold, p.fa, p.miss);
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

pub fn compute_det(scores: &ScoreSet) -> Result<DetCurve> {
    let (tar, non) = scores.split();
    DetCurve::from_scores(&tar, &non)
}

pub fn compute_eer(scores: &ScoreSet) -> Result<Eer> {
    Ok(compute_det(scores)?.eer())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_scores_reach_zero_error() {
        let det = DetCurve::from_scores(&[2.0, 3.0], &[0.0, 1.0]).unwrap();
        assert!(det.points.iter().any(|p| p.fa == 0.0 && p.miss == 0.0));
        let eer = det.eer();
        assert_eq!(eer.rate, 0.0);
        assert_eq!(eer.threshold, 2.0);
    }

    #[test]
    fn all_ties() {
        let det = DetCurve::from_scores(&[1.5, 1.5], &[1.5]).unwrap();
        let got: Vec<(f64, f64, f64)> = det.points.iter().map(|p| (p.threshold, p.fa, p.miss)).collect();
        assert_eq!(
            got,
            vec![(f64::NEG_INFINITY, 1.0, 0.0), (1.5, 1.0, 0.0), (f64::INFINITY, 0.0, 1.0)]
        );
        let eer = det.eer();
        assert_eq!(eer.rate, 0.5);
        assert_eq!(eer.threshold, 1.5);
    }

    #[test]
    fn crossing_example() {
        let det = DetCurve::from_scores(&[0.9, 0.4], &[0.6, 0.1]).unwrap();
        let eer = det.eer();
        assert_eq!(eer.rate, 0.5);
        assert_eq!(eer.threshold, 0.6);
    }

    #[test]
    fn empty_class_is_rejected() {
        assert!(matches!(DetCurve::from_scores(&[], &[1.0]), Err(Error::Precondition(_))));
        assert!(matches!(DetCurve::from_scores(&[1.0], &[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn tsv_layout() {
        let det = DetCurve::from_scores(&[1.0], &[0.0]).unwrap();
        assert_eq!(det.to_tsv(), "threshold\tfa\tmiss\n-inf\t1\t0\n0\t1\t0\n1\t0\t0\ninf\t0\t1\n");
    }
}
