//! Confidence routing and threshold calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// Base prediction accepted as-is.
    Base,
    /// Escalated to the reasoning stage.
    Reason,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Base => "base",
            Verdict::Reason => "reason",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub verdict: Verdict,
    pub confidence: f64,
    pub threshold: f64,
}

/// `Base` iff `confidence >= threshold`.
pub fn decide(confidence: f64, threshold: f64) -> RoutingDecision {
    let verdict = if confidence >= threshold {
        Verdict::Base
    } else {
        Verdict::Reason
    };
    RoutingDecision {
        verdict,
        confidence,
        threshold,
    }
}

/// Evenly spaced thresholds `0, 1/(n-1), ..., 1`.
pub fn threshold_grid(points: usize) -> Vec<f64> {
    match points {
        0 => vec![],
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// The centesimal grid used by default.
pub fn default_grid() -> Vec<f64> {
    threshold_grid(101)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub coverage: f64,
    /// Accuracy on the accepted subset; 1.0 when nothing is accepted.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCurve {
    pub points: Vec<CurvePoint>,
}

impl CoverageCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("tau,coverage,accuracy\n");
        for p in &self.points {
            out.push_str(&format!("{:.4},{:.6},{:.6}\n", p.threshold, p.coverage, p.accuracy));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("tau,coverage,accuracy") {
            return Err(Error::Data("coverage curve: bad header".into()));
        }
        let points = lines
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let v: Vec<f64> = line
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Data(format!("coverage curve: bad line '{line}'")))?;
                match v[..] {
                    [threshold, coverage, accuracy] => Ok(CurvePoint {
                        threshold,
                        coverage,
                        accuracy,
                    }),
                    _ => Err(Error::Data(format!("coverage curve: bad line '{line}'"))),
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { points })
    }
}

/// Coverage and accepted-set accuracy at every grid threshold.
pub fn coverage_curve(confidences: &[f64], correct: &[bool], grid: &[f64]) -> Result<CoverageCurve> {
    if confidences.len() != correct.len() {
        return Err(Error::InvalidArgument(format!(
            "{} confidences vs {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if confidences.is_empty() {
        return Err(Error::InvalidArgument("coverage curve needs at least one sample".into()));
    }
    let n = confidences.len() as f64;
    let points = grid
        .iter()
        .map(|&tau| {
            let (accepted, right) = confidences
                .iter()
                .zip(correct)
                .filter(|(c, _)| **c >= tau)
                .fold((0usize, 0usize), |(a, r), (_, ok)| (a + 1, r + usize::from(*ok)));
            CurvePoint {
                threshold: tau,
                coverage: accepted as f64 / n,
                accuracy: if accepted == 0 { 1.0 } else { right as f64 / accepted as f64 },
            }
        })
        .collect();
    Ok(CoverageCurve { points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCalibration {
    pub threshold: f64,
    pub coverage: f64,
    pub accuracy: f64,
    pub target_accuracy: f64,
    pub epsilon: f64,
    pub calibration_samples: usize,
    pub curve: CoverageCurve,
}

impl ThresholdCalibration {
    pub fn to_text(&self) -> String {
        format!(
            "tau {}\ncoverage {}\naccuracy {}\ntarget_accuracy {}\nepsilon {}\nsamples {}\n",
            self.threshold,
            self.coverage,
            self.accuracy,
            self.target_accuracy,
            self.epsilon,
            self.calibration_samples
        )
    }

    /// Reads the threshold back from [`ThresholdCalibration::to_text`] output.
    pub fn threshold_from_text(text: &str) -> Result<f64> {
        text.lines()
            .find_map(|l| l.strip_prefix("tau "))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| Error::Data("calibration file has no 'tau' line".into()))
    }
}

/// Picks the smallest grid threshold whose accepted-set accuracy is within
/// `epsilon` of the best accuracy on the curve.
///
/// The best accuracy is taken over points that accept at least one sample
/// (the empty-set convention would otherwise pin it to 1.0), falling back to
/// all points when none do.
pub fn calibrate_threshold(curve: &CoverageCurve, epsilon: f64, samples: usize) -> Result<ThresholdCalibration> {
    if curve.points.is_empty() {
        return Err(Error::InvalidArgument("empty coverage curve".into()));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let max_acc = |pts: &mut dyn Iterator<Item = &CurvePoint>| {
        pts.map(|p| p.accuracy).fold(f64::NEG_INFINITY, f64::max)
    };
    let mut nonempty = curve.points.iter().filter(|p| p.coverage > 0.0).peekable();
    let target = if nonempty.peek().is_some() {
        max_acc(&mut nonempty)
    } else {
        max_acc(&mut curve.points.iter())
    };
    let chosen = curve
        .points
        .iter()
        .filter(|p| p.accuracy >= target - epsilon)
        .min_by(|a, b| a.threshold.total_cmp(&b.threshold))
        .expect("the best point always qualifies");
    Ok(ThresholdCalibration {
        threshold: chosen.threshold,
        coverage: chosen.coverage,
        accuracy: chosen.accuracy,
        target_accuracy: target,
        epsilon,
        calibration_samples: samples,
        curve: curve.clone(),
    })
}
