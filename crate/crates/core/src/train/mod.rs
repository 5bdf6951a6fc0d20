//! Optimizer, batching, the training loop and classification metrics.

mod adam;
mod batch;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use batch::{make_batches, Step};

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::dist::DistParams;
use crate::error::{Error, Result};
use crate::model::{recognition_dist, run_trace, Evidence, ExecutionPlan, Family, ParamStore, Sampling, TraceConfig};
use crate::objective::{combined_objective, elbo_unsupervised, supervised_term, supervision_rate, ObjectiveConfig};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_unsup: usize,
    pub batch_sup: usize,
    pub objective: ObjectiveConfig,
    pub sampling: Sampling,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Evaluate every this many epochs; 0 disables evaluation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_unsup: 100,
            batch_sup: 100,
            objective: ObjectiveConfig::default(),
            sampling: Sampling::default(),
            adam: AdamConfig::default(),
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.batch_sup == 0 && self.batch_unsup == 0 {
            return Err(Error::Contract("batch sizes must be at least 1".into()));
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Contract(format!(
                "learning rate must be non-negative, got {}",
                self.adam.lr
            )));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const NOISE_SALT: u64 = 0x006e_6f69_7365;

/// The data-facing variables of a plan: its single observed variable and
/// its partial categorical variable, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Binding {
    pub observed: usize,
    pub label: Option<usize>,
}

impl Binding {
    pub fn infer(plan: &ExecutionPlan) -> Result<Self> {
        let g = plan.graph();
        let observed = g.observed_variables();
        let [observed] = observed.as_slice() else {
            return Err(Error::Contract(format!(
                "datasets bind to exactly one observed variable; the model has {}",
                observed.len()
            )));
        };
        let partial = g.partial_variables();
        let label = match partial.as_slice() {
            [] => None,
            [p] if g.variable(*p).family == Family::Categorical => Some(*p),
            _ => {
                return Err(Error::Contract(
                    "datasets bind labels to a single partial categorical variable".into(),
                ))
            }
        };
        Ok(Binding {
            observed: *observed,
            label,
        })
    }

    fn label_name<'a>(&self, plan: &'a ExecutionPlan) -> Result<&'a str> {
        let l = self
            .label
            .ok_or_else(|| Error::Contract("the model has no partial categorical variable".into()))?;
        Ok(&plan.graph().variable(l).name)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Global step count after the epoch.
    pub step: u64,
    /// Mean over steps of the combined objective divided by `N + γM`.
    pub objective: f64,
    /// Mean over steps of the per-point supervised term.
    pub sup_term: f64,
    /// Mean over steps of the per-point unsupervised term.
    pub unsup_term: f64,
}

/// Parameters, optimizer state and the fixed dataset sizes of one run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub plan: ExecutionPlan,
    pub params: ParamStore,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub step: u64,
    binding: Binding,
    n: usize,
    m: usize,
    alpha: f64,
}

impl Trainer {
    /// `n` and `m` are the unlabelled and labelled dataset sizes.
    pub fn new(plan: ExecutionPlan, params: ParamStore, config: TrainConfig, n: usize, m: usize) -> Result<Self> {
        config.validate()?;
        let binding = Binding::infer(&plan)?;
        if m > 0 && binding.label.is_none() {
            return Err(Error::Contract(
                "labelled data needs a partial categorical variable".into(),
            ));
        }
        let alpha = if m > 0 {
            config.objective.resolve_alpha(n, m)?
        } else {
            0.0
        };
        let adam = AdamState::new(params.tensors());
        Ok(Trainer {
            plan,
            params,
            adam,
            config,
            step: 0,
            binding,
            n,
            m,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho(&self) -> Result<f64> {
        supervision_rate(self.n, self.m, self.config.objective.gamma)
    }

    pub fn binding(&self) -> Binding {
        self.binding
    }

    /// One pass over the unlabelled set.
    pub fn train_epoch(&mut self, sup: &Dataset, unsup: &Dataset, epoch: usize) -> Result<EpochMetrics> {
        if sup.len() != self.m || unsup.len() != self.n {
            return Err(Error::Contract(format!(
                "trainer was built for N={}, M={} but got N={}, M={}",
                self.n,
                self.m,
                unsup.len(),
                sup.len()
            )));
        }
        let steps = make_batches(
            sup.len(),
            unsup.len(),
            self.config.batch_sup,
            self.config.batch_unsup,
            mix_seed(self.config.seed, epoch as u64),
        )?;
        let sup_y = if sup.is_empty() {
            None
        } else {
            Some(sup.one_hot_labels()?)
        };
        let mut totals = EpochMetrics {
            epoch,
            ..Default::default()
        };
        let count = steps.len() as f64;
        for s in &steps {
            let unsup_x = (!s.unsup.is_empty()).then(|| unsup.features.select_rows(&s.unsup));
            let sup_batch = match (&sup_y, s.sup.is_empty()) {
                (Some(y), false) => Some((sup.features.select_rows(&s.sup), y.select_rows(&s.sup))),
                _ => None,
            };
            let (obj, st, ut) = self.step(unsup_x.as_ref(), sup_batch.as_ref().map(|(x, y)| (x, y)))?;
            totals.objective += obj / count;
            totals.sup_term += st / count;
            totals.unsup_term += ut / count;
        }
        totals.step = self.step;
        Ok(totals)
    }

    /// One Adam step on `−objective / (N + γM)`. Returns the normalized
    /// objective and the mean supervised and unsupervised terms.
    pub fn step(&mut self, unsup_x: Option<&Tensor>, sup: Option<(&Tensor, &Tensor)>) -> Result<(f64, f64, f64)> {
        let step = self.step;
        let plan = &self.plan;
        let cfg = self.config.objective;
        let trace_cfg = TraceConfig {
            samples: cfg.samples,
            sampling: self.config.sampling,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed ^ NOISE_SALT, step));
        let tape = Tape::new();
        let vars = self.params.track(&tape);
        let observed = &plan.graph().variable(self.binding.observed).name;
        let check = |v: f64, term: &'static str| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::NonFinite {
                    step: step as usize,
                    term,
                })
            }
        };

        let mut unsup_term = 0.0;
        let unsup = match unsup_x {
            Some(x) => {
                let ev = Evidence::new().with(observed, x.clone());
                let trace = run_trace(plan, &tape, &vars, &ev, &trace_cfg, &mut rng)?;
                let u = elbo_unsupervised(&trace, cfg.analytic_kl)?;
                unsup_term = check(u.mean().item()?, "unsupervised")?;
                Some(u)
            }
            None => None,
        };
        let mut sup_term = 0.0;
        let supv = match sup {
            Some((x, y)) => {
                let ev = Evidence::new()
                    .with(observed, x.clone())
                    .with(self.binding.label_name(plan)?, y.clone());
                let trace = run_trace(plan, &tape, &vars, &ev, &trace_cfg, &mut rng)?;
                let s = supervised_term(&trace, &cfg, self.alpha)?;
                sup_term = check(s.mean().item()?, "supervised")?;
                Some(s)
            }
            None => None,
        };
        let n = if unsup.is_some() { self.n } else { 0 };
        let m = if supv.is_some() { self.m } else { 0 };
        let obj = combined_objective(unsup, n, supv, m, cfg.gamma)?;
        let scale = n as f64 + cfg.gamma * m as f64;
        let loss = obj.scale(-1.0 / scale);
        let objective = check(obj.item()? / scale, "objective")?;
        tape.backward(loss)?;
        let grads = self.params.gradients(&tape, &vars);
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step: step as usize,
                term: "gradient",
            });
        }
        drop(vars);
        adam_step(self.params.tensors_mut(), &grads, &mut self.adam, &self.config.adam)?;
        self.step += 1;
        Ok((objective, sup_term, unsup_term))
    }
}

const EVAL_CHUNK: usize = 1000;

/// Recognition log-probabilities of the label variable, `[rows, classes]`,
/// averaged over `samples` draws of any sampled parents. Latent parents are
/// drawn exactly.
pub fn class_log_probs(
    plan: &ExecutionPlan,
    params: &[Tensor],
    x: &Tensor,
    samples: usize,
    seed: u64,
) -> Result<Tensor> {
    let binding = Binding::infer(plan)?;
    let label = binding
        .label
        .ok_or_else(|| Error::Contract("classification needs a partial categorical variable".into()))?;
    let observed = &plan.graph().variable(binding.observed).name;
    let k = plan.graph().variable(label).shape;
    let mut out = Vec::with_capacity(x.rows() * k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TraceConfig {
        samples: samples.max(1),
        sampling: Sampling::Exact,
    };
    let mut start = 0;
    while start < x.rows() {
        let end = (start + EVAL_CHUNK).min(x.rows());
        let rows: Vec<usize> = (start..end).collect();
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|t| tape.constant(t.clone())).collect();
        let ev = Evidence::new().with(observed, x.select_rows(&rows));
        let (dist, per_sample) = recognition_dist(plan, &tape, &vars, &ev, &cfg, label, &mut rng)?;
        let DistParams::Categorical { logits } = dist else {
            return Err(Error::Contract("label variable is not categorical".into()));
        };
        let lp = logits.log_softmax_rows()?.to_tensor();
        if per_sample && cfg.samples > 1 {
            let s = cfg.samples;
            for b in 0..rows.len() {
                for c in 0..k {
                    let sum: f64 = (0..s).map(|j| lp.data()[(b * s + j) * k + c]).sum();
                    out.push(sum / s as f64);
                }
            }
        } else {
            out.extend_from_slice(lp.data());
        }
        start = end;
    }
    Tensor::new([x.rows(), k], out)
}

/// Predicted labels: argmax of [`class_log_probs`].
pub fn classify(plan: &ExecutionPlan, params: &[Tensor], x: &Tensor, samples: usize, seed: u64) -> Result<Vec<usize>> {
    Ok(class_log_probs(plan, params, x, samples, seed)?.argmax_rows())
}

/// Fraction of misclassified points.
pub fn error_rate(plan: &ExecutionPlan, params: &[Tensor], data: &Dataset, samples: usize, seed: u64) -> Result<f64> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("error rate needs labels".into()))?;
    if labels.is_empty() {
        return Err(Error::Contract("error rate of an empty dataset".into()));
    }
    let pred = classify(plan, params, &data.features, samples, seed)?;
    let wrong = pred.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / labels.len() as f64)
}
