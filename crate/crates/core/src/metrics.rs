//! Accuracy metrics: per-channel comparison of filtered estimates against the
//! raw measurements they were computed from.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::CoreError;
use crate::network::{GasNetwork, NodeId};
use crate::sim::{ChannelKind, MeasurementSeries};

/// Per-channel accuracy report.
///
/// `epsilon` is the ratio of the estimate's root-mean-square error to the raw
/// measurement's over the whole horizon: below one the filter improved on the
/// sensor, above one it made things worse.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelReport {
    pub node: NodeId,
    pub kind: ChannelKind,
    /// RMS estimate error over RMS measurement error; `None` when the channel
    /// is excluded from scoring or the denominator vanishes.
    pub epsilon: Option<f64>,
    pub rmse_estimate: f64,
    pub rmse_measured: f64,
    /// Pressure channels at supply nodes are reported but never scored: the
    /// density there is pinned by the boundary condition, so the ratio would
    /// compare round-off against sensor noise.
    pub excluded: bool,
    /// Set when the measurement error is identically zero, which would make
    /// the ratio meaningless.
    pub degenerate: bool,
    /// Carried over from the channel metadata: true for the flow channel of
    /// a junction, whose "measurement" is an exact zero-flow constraint.
    pub is_virtual: bool,
}

/// Computes one [`ChannelReport`] per measurement channel.
///
/// `zhat` holds the estimator's predicted measurements, aligned with the
/// series (entry `t-1` for step `t`).
pub fn filter_coefficients(
    net: &GasNetwork,
    series: &MeasurementSeries,
    zhat: &[DVector<f64>],
) -> Result<Vec<ChannelReport>, CoreError> {
    let steps = series.z.len();
    if steps == 0 {
        return Err(CoreError::Validation(String::from(
            "measurement series is empty",
        )));
    }
    if zhat.len() != steps {
        return Err(CoreError::Validation(format!(
            "estimate trace has {} steps, series has {steps}",
            zhat.len()
        )));
    }
    let n_channels = series.channels.len();
    for (t,zh) in zhat.iter().enumerate() {
        if zh.len() != n_channels {
            return Err(CoreError::Validation(format!(
                "estimate vector at step {} has {} channels, expected {n_channels}",
                t + 1,
                zh.len()
            )));
        }
    }

    let mut reports = Vec::with_capacity(n_channels);
    for (c, meta) in series.channels.iter().enumerate() {
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for t in 0..steps {
            let truth = series.truth[t][c];
            let de = zhat[t][c] - truth;
            let dm = series.z[t][c] - truth;
            num += de * de;
            den += dm * dm;
        }
        let rmse_estimate = libm::sqrt(num / steps as f64);
        let rmse_measured = libm::sqrt(den / steps as f64);
        let excluded = meta.kind == ChannelKind::Pressure && net.is_source(meta.node);
        let degenerate = !excluded && den == 0.0;
        let epsilon = if excluded || degenerate {
            None
        } else {
            Some(rmse_estimate / rmse_measured)
        };
        reports.push(ChannelReport {
            node: meta.node,
            kind: meta.kind,
            epsilon,
            rmse_estimate,
            rmse_measured,
            excluded,
            degenerate,
            is_virtual: meta.is_virtual,
        });
    }
    Ok(reports)
}

/// Outcome of comparing two estimators channel by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    /// Per-channel score difference (second minus first); `None` where either
    /// side is unscored.
    pub differences: Vec<Option<f64>>,
    /// Channels where both sides produced a score.
    pub n_scored: usize,
    /// Channels where the second estimator scored strictly under the first.
    pub n_second_better: usize,
    /// Channels where the second estimator scored at or under the first.
    pub n_second_no_worse: usize,
    /// `n_second_better / n_scored` (zero when nothing was scored).
    pub fraction_second_better: f64,
    /// `n_second_no_worse / n_scored` (zero when nothing was scored).
    pub fraction_second_no_worse: f64,
}

/// Compares two report sets produced over the same series.
pub fn compare_coefficients(
    first: &[ChannelReport],
    second: &[ChannelReport],
) -> Result<ComparisonSummary, CoreError> {
    if first.len() != second.len() {
        return Err(CoreError::Validation(format!(
            "report sets cover {} and {} channels",
            first.len(),
            second.len()
        )));
    }
    let mut differences = Vec::with_capacity(first.len());
    let mut n_scored = 0usize;
    let mut n_second_better = 0usize;
    let mut n_second_no_worse = 0usize;
    for (a, b) in first.iter().zip(second) {
        if a.node != b.node || a.kind != b.kind {
            return Err(CoreError::Validation(String::from(
                "report sets have mismatched channel layouts",
            )));
        }
        match (a.epsilon, b.epsilon) {
            (Some(ea), Some(eb)) => {
                differences.push(Some(eb - ea));
                n_scored += 1;
                if eb < ea {
                    n_second_better += 1;
                }
                if eb <= ea {
                    n_second_no_worse += 1;
                }
            }
            _ => differences.push(None),
        }
    }
    let frac = |n: usize| {
        if n_scored == 0 {
            0.0
        } else {
            n as f64 / n_scored as f64
        }
    };
    Ok(ComparisonSummary {
        differences,
        n_scored,
        n_second_better,
        n_second_no_worse,
        fraction_second_better: frac(n_second_better),
        fraction_second_no_worse: frac(n_second_no_worse),
    })
}

/// Largest absolute estimate error on one channel over a set of steps
/// (1-based grid steps, as produced by scenario scheduling).
pub fn max_abs_error_at_steps(
    series: &MeasurementSeries,
    zhat: &[DVector<f64>],
    channel: usize,
    steps: &[usize],
) -> Result<f64, CoreError> {
    fold_error_at_steps(series, zhat, channel, steps, |acc, e| acc.max(e))
}

/// Mean absolute estimate error on one channel over a set of steps.
pub fn mean_abs_error_at_steps(
    series: &MeasurementSeries,
    zhat: &[DVector<f64>],
    channel: usize,
    steps: &[usize],
) -> Result<f64, CoreError> {
    let sum = fold_error_at_steps(series, zhat, channel, steps, |acc, e| acc + e)?;
    Ok(sum / steps.len() as f64)
}

fn fold_error_at_steps(
    series: &MeasurementSeries,
    zhat: &[DVector<f64>],
    channel: usize,
    steps: &[usize],
    fold: impl Fn(f64, f64) -> f64,
) -> Result<f64, CoreError> {
    if steps.is_empty() {
        return Err(CoreError::Validation(String::from(
            "step window is empty",
        )));
    }
    if zhat.len() != series.z.len() {
        return Err(CoreError::Validation(format!(
            "estimate trace has {} steps, series has {}",
            zhat.len(),
            series.z.len()
        )));
    }
    let mut acc = 0.0f64;
    for &s in steps {
        if s == 0 || s > series.z.len() {
            return Err(CoreError::Validation(format!(
                "step {s} is outside the series (1..={})",
                series.z.len()
            )));
        }
        if channel >= series.channels.len() {
            return Err(CoreError::Validation(format!(
                "channel {channel} is outside the series ({} channels)",
                series.channels.len()
            )));
        }
        let e = (zhat[s - 1][channel] - series.truth[s - 1][channel]).abs();
        acc = fold(acc, e);
    }
    Ok(acc)
}
