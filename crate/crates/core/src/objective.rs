//! Variational estimators over [`SampleSet`]s.
//!
//! Per-point estimators return `[points, 1]`; [`combined_objective`] scales
//! batch means by dataset sizes so the result estimates the full-data sum.

use alloc::format;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{SampleSet, Trace};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Variant {
    /// Self-normalized importance sampling with the `(1 + α)·log w` term.
    SelfNormalized,
    /// Log of the Monte Carlo mean, plus `α·log` of the mean weight.
    ImportanceWeighted,
}

/// Classification-term weight: fixed, or `0.1 / ρ` resolved from the data sizes.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Alpha {
    Auto,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ObjectiveConfig {
    pub samples: usize,
    pub alpha: Alpha,
    pub gamma: f64,
    pub variant: Variant,
    pub analytic_kl: bool,
    /// Stop gradients through the normalized weights `w / Z`.
    pub detach_weights: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            samples: 8,
            alpha: Alpha::Auto,
            gamma: 1.0,
            variant: Variant::SelfNormalized,
            analytic_kl: false,
            detach_weights: false,
        }
    }
}

/// Sample count used for evaluation passes.
pub const EVAL_SAMPLES: usize = 100;

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Contract("S must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Contract(format!("gamma must be positive, got {}", self.gamma)));
        }
        if let Alpha::Fixed(a) = self.alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::Contract(format!("alpha must be non-negative, got {a}")));
            }
        }
        Ok(())
    }

    /// The concrete α for `n` unlabelled and `m` labelled points.
    pub fn resolve_alpha(&self, n: usize, m: usize) -> Result<f64> {
        match self.alpha {
            Alpha::Fixed(a) => Ok(a),
            Alpha::Auto => alpha_from_rho(supervision_rate(n, m, self.gamma)?),
        }
    }
}

/// `ρ = γM / (N + γM)`.
pub fn supervision_rate(n: usize, m: usize, gamma: f64) -> Result<f64> {
    if n + m == 0 {
        return Err(Error::Domain("supervision rate needs N + M > 0".into()));
    }
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    let gm = gamma * m as f64;
    Ok(gm / (n as f64 + gm))
}

/// `α = 0.1 / ρ`.
pub fn alpha_from_rho(rho: f64) -> Result<f64> {
    if rho > 0.0 {
        Ok(0.1 / rho)
    } else {
        Err(Error::Domain("alpha = 0.1 / rho needs rho > 0".into()))
    }
}

fn mean_over_samples<'t>(v: Var<'t>) -> Result<Var<'t>> {
    let s = v.value().shape()[1];
    Ok(v.sum_axis(1)?.scale(1.0 / s as f64))
}

/// `log((1/S) Σ_s exp v_s)` per row.
fn log_mean_exp<'t>(v: Var<'t>) -> Result<Var<'t>> {
    let s = v.value().shape()[1];
    Ok(v.log_sum_exp(1)?.add_scalar(-math::ln(s as f64)))
}

/// `(1/S) Σ_s (log p − log q)`.
pub fn elbo<'t>(set: &SampleSet<'t>) -> Result<Var<'t>> {
    mean_over_samples(set.log_p.sub(&set.log_q)?)
}

/// ELBO of a trace without supplied labels, with the Gaussian prior and
/// entropy terms replaced by their analytic KL when `analytic_kl` is set.
pub fn elbo_unsupervised<'t>(trace: &Trace<'t>, analytic_kl: bool) -> Result<Var<'t>> {
    if trace.is_supervised() {
        return Err(Error::Contract(
            "the unsupervised ELBO takes traces without labels".into(),
        ));
    }
    let set = if analytic_kl {
        trace.sample_set_analytic_kl()?
    } else {
        trace.sample_set()?
    };
    elbo(&set)
}

fn require_supervised(trace: &Trace<'_>) -> Result<()> {
    if trace.is_supervised() {
        Ok(())
    } else {
        Err(Error::Contract("supervised estimators need a supplied label".into()))
    }
}

/// Normalized weights `w_s / Z` with `Z = exp(lse(log w) − ln S)`, `[points, S]`.
pub fn normalized_weights<'t>(set: &SampleSet<'t>) -> Result<Var<'t>> {
    let s = set.samples();
    let log_z = log_mean_exp(set.log_w)?;
    set.log_w.sub(&log_z.broadcast_axis(1, s)?).map(|v| v.exp())
}

/// `(1/S) Σ_s [(w_s/Z)(log p_s − log q_s) + (1 + α) log w_s]`.
pub fn supervised_estimator<'t>(set: &SampleSet<'t>, alpha: f64, detach_weights: bool) -> Result<Var<'t>> {
    self_normalized_term(set, detach_weights)?.add(&log_marginal_bound(set)?.scale(1.0 + alpha))
}

/// `(1/S) Σ_s (w_s/Z)(log p_s − log q_s)`, the self-normalized estimate of
/// `E_{q(z|x,y)}[log p − log q]`.
pub fn self_normalized_term<'t>(set: &SampleSet<'t>, detach_weights: bool) -> Result<Var<'t>> {
    let mut weights = normalized_weights(set)?;
    if detach_weights {
        weights = weights.detach();
    }
    mean_over_samples(weights.mul(&set.log_p.sub(&set.log_q)?)?)
}

/// `(1/S) Σ_s log w_s`, a lower bound on `log q(y | x)`.
pub fn log_marginal_bound<'t>(set: &SampleSet<'t>) -> Result<Var<'t>> {
    mean_over_samples(set.log_w)
}

/// `log (1/S) Σ_s p_s / q_z,s + α log (1/S) Σ_s w_s`, with `q_z` the
/// proposal density of the unsupplied variables.
pub fn supervised_iwae<'t>(set: &SampleSet<'t>, alpha: f64) -> Result<Var<'t>> {
    let first = log_mean_exp(set.log_p.sub(&set.log_q_proposal()?)?)?;
    first.add(&log_mean_exp(set.log_w)?.scale(alpha))
}

/// Supervised term of a labelled trace for the configured variant.
pub fn supervised_term<'t>(trace: &Trace<'t>, config: &ObjectiveConfig, alpha: f64) -> Result<Var<'t>> {
    require_supervised(trace)?;
    let set = trace.sample_set()?;
    match config.variant {
        Variant::SelfNormalized => supervised_estimator(&set, alpha, config.detach_weights),
        Variant::ImportanceWeighted => supervised_iwae(&set, alpha),
    }
}

/// `N·mean(unsup) + γ·M·mean(sup)`; absent terms contribute nothing.
pub fn combined_objective<'t>(
    unsup: Option<Var<'t>>,
    n: usize,
    sup: Option<Var<'t>>,
    m: usize,
    gamma: f64,
) -> Result<Var<'t>> {
    let u = unsup.map(|v| v.mean().scale(n as f64));
    let s = sup.map(|v| v.mean().scale(gamma * m as f64));
    match (u, s) {
        (Some(u), Some(s)) => u.add(&s),
        (Some(v), None) | (None, Some(v)) => Ok(v),
        (None, None) => Err(Error::Contract("combined objective needs at least one term".into())),
    }
}
