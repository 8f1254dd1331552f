//! Contextual trend summaries over a window extended by `radius` depths on
//! each side (clamped at the ends of the well).

use serde::{Deserialize, Serialize};

use crate::data::WellLogSequence;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Stable,
    GradualTransition,
    Boundary,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Stable => "stable",
            Regime::GradualTransition => "gradual-transition",
            Regime::Boundary => "boundary",
        }
    }

    /// `boundary` when the largest one-step jump exceeds three standard
    /// deviations, `gradual-transition` when the fitted drift over the
    /// segment exceeds one standard deviation, `stable` otherwise.
    pub fn classify(slope: f64, std: f64, max_step: f64, len: usize) -> Self {
        if std > 0.0 && max_step > 3.0 * std {
            Regime::Boundary
        } else if slope.abs() * len as f64 > std {
            Regime::GradualTransition
        } else {
            Regime::Stable
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelTrend {
    pub channel: String,
    /// Least-squares slope, units per depth step.
    pub slope: f64,
    pub mean: f64,
    pub std: f64,
    pub max_step: f64,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub start: usize,
    pub end: usize,
    pub context_start: usize,
    pub context_end: usize,
    pub radius: usize,
    pub channels: Vec<ChannelTrend>,
}

/// Ordinary least-squares slope of `values` against `0..n`. Zero for n < 2.
pub fn ols_slope(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let x_mean = (n - 1) as f64 / 2.0;
    let y_mean = values.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn summarize(channel: &str, values: &[f64]) -> ChannelTrend {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let max_step = values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    let slope = ols_slope(values);
    ChannelTrend {
        channel: channel.to_string(),
        slope,
        mean,
        std,
        max_step,
        regime: Regime::classify(slope, std, max_step, values.len()),
    }
}

pub fn analyze_trend(seq: &WellLogSequence, start: usize, end: usize, radius: usize) -> Result<TrendSummary> {
    if start > end || end >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "trend window [{start},{end}] outside well of length {}",
            seq.len()
        )));
    }
    let context_start = start.saturating_sub(radius);
    let context_end = (end + radius).min(seq.len() - 1);
    let channels = seq
        .channel_names()
        .iter()
        .enumerate()
        .map(|(c, name)| summarize(name, &seq.channel(c)[context_start..=context_end]))
        .collect();
    Ok(TrendSummary {
        start,
        end,
        context_start,
        context_end,
        radius,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(values: Vec<f64>) -> WellLogSequence {
        let n = values.len();
        WellLogSequence::new("w", (0..n).map(|t| t as f64).collect(), vec!["x".into()], vec![values], None, 1.0, 2)
            .unwrap()
    }

    #[test]
    fn constant_channel_is_stable() {
        let s = seq(vec![3.0; 12]);
        let t = analyze_trend(&s, 4, 7, 2).unwrap();
        let ch = &t.channels[0];
        assert_eq!((ch.slope, ch.std, ch.regime), (0.0, 0.0, Regime::Stable));
        assert_eq!((t.context_start, t.context_end), (2, 9));
    }

    #[test]
    fn linear_ramp_slope() {
        let s = seq(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let t = analyze_trend(&s, 1, 3, 1).unwrap();
        // closed form: slope = cov(x, y) / var(x) over x = 0..5
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
        let ys = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (xm, ym) = (2.0, 3.0);
        let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
        let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
        assert!((t.channels[0].slope - num / den).abs() < 1e-12);
        assert!((t.channels[0].slope - 1.0).abs() < 1e-12);
        assert_eq!(t.channels[0].regime, Regime::GradualTransition);
    }

    #[test]
    fn step_just_after_window_is_boundary() {
        // window [1, 8], radius 1: context [0, 9]; the jump sits at e + 1 = 9
        let mut v = vec![10.0; 12];
        for x in v.iter_mut().skip(9) {
            *x = 20.0;
        }
        let s = seq(v);
        let t = analyze_trend(&s, 1, 8, 1).unwrap();
        assert_eq!((t.context_start, t.context_end), (0, 9));
        let ch = &t.channels[0];
        assert_eq!(ch.max_step, 10.0);
        assert!(ch.max_step > 3.0 * ch.std);
        assert_eq!(ch.regime, Regime::Boundary);

        // without the context the segment is flat
        let inner = analyze_trend(&s, 1, 8, 0).unwrap();
        assert_eq!(inner.channels[0].regime, Regime::Stable);
    }

    #[test]
    fn clamped_at_edges_and_invalid_indices() {
        let s = seq((0..6).map(f64::from).collect());
        let t = analyze_trend(&s, 0, 1, 8).unwrap();
        assert_eq!((t.context_start, t.context_end), (0, 5));
        assert!(analyze_trend(&s, 3, 2, 0).is_err());
        assert!(analyze_trend(&s, 0, 6, 0).is_err());
    }

    #[test]
    fn single_point_slope() {
        assert_eq!(ols_slope(&[4.2]), 0.0);
    }
}
