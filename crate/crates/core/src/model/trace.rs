use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::plan::{ExecutionPlan, Rows};
use super::spec::Supervision;
use crate::dist::{
    self, categorical_log_prob, concrete_log_prob, concrete_log_rsample, kl_normal_std, normal_log_prob,
    normal_rsample, relaxed_categorical_log_prob, DistParams, DEFAULT_TEMPERATURE,
};
use crate::error::{dim_err, Error, Result};
use crate::math;
use crate::tensor::{Tape, Tensor, Var};

/// Values for observed variables and, optionally, labels for partial ones.
/// Every tensor is `[points, width]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evidence {
    values: BTreeMap<String, Tensor>,
}

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: Tensor) -> Self {
        self.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.values.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }
}

/// Density assigned to a relaxed categorical sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RelaxedDensity {
    /// Inner product of the simplex point with `log_softmax(logits)`.
    #[default]
    SoftOneHot,
    /// The concrete density at the same temperature, under both the
    /// recognition and the generative distribution.
    Concrete,
}

/// How unsupplied categorical variables are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Sampling {
    /// Concrete relaxation; `straight_through` passes a hard one-hot forward
    /// while keeping the relaxed gradient.
    Relaxed {
        temperature: f64,
        straight_through: bool,
        density: RelaxedDensity,
    },
    /// Exact one-hot draws; not differentiable in the logits.
    Exact,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Relaxed {
            temperature: DEFAULT_TEMPERATURE,
            straight_through: false,
            density: RelaxedDensity::SoftOneHot,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceConfig {
    pub samples: usize,
    pub sampling: Sampling,
}

impl TraceConfig {
    pub fn relaxed(samples: usize) -> Self {
        TraceConfig {
            samples,
            sampling: Sampling::default(),
        }
    }

    pub fn exact(samples: usize) -> Self {
        TraceConfig {
            samples,
            sampling: Sampling::Exact,
        }
    }
}

/// Record of one variable in a trace.
#[derive(Clone, Copy, Debug)]
pub struct NodeTrace<'t> {
    pub value: Rows<'t>,
    /// Generative log-density, `[rows, 1]`.
    pub log_p: Rows<'t>,
    /// Recognition log-density; `None` for observed variables.
    pub log_q: Option<Rows<'t>>,
    /// Analytic KL to the standard-normal prior, for sampled normal
    /// variables whose prior is the default.
    pub kl: Option<Rows<'t>>,
    pub recognition: Option<DistParams<'t>>,
    pub supplied: bool,
}

/// One forward execution over `points` data points with `samples` draws
/// each. Per-sample rows are laid out as `b * samples + s`.
#[derive(Clone, Debug)]
pub struct Trace<'t> {
    points: usize,
    samples: usize,
    nodes: Vec<NodeTrace<'t>>,
    log_w: Var<'t>,
}

struct Partial<'t> {
    value: Rows<'t>,
    log_q: Option<Rows<'t>>,
    kl: Option<Rows<'t>>,
    recognition: Option<DistParams<'t>>,
    supplied: bool,
    relaxed: Option<Relaxed<'t>>,
}

/// Log of a relaxed sample and how to score it.
#[derive(Clone, Copy)]
struct Relaxed<'t> {
    log_value: Rows<'t>,
    temperature: f64,
    density: RelaxedDensity,
}

/// Executes the recognition pass and then scores every variable under the
/// generative model.
pub fn run_trace<'t, R: Rng + ?Sized>(
    plan: &ExecutionPlan,
    tape: &'t Tape,
    params: &[Var<'t>],
    evidence: &Evidence,
    config: &TraceConfig,
    rng: &mut R,
) -> Result<Trace<'t>> {
    let points = check_evidence(plan, evidence)?;
    let samples = config.samples;
    let mut state = seed_state(plan, tape, evidence);
    recognize(plan, tape, params, evidence, &mut state, points, config, None, rng)?;
    let graph = plan.graph();

    let mut nodes = Vec::with_capacity(graph.len());
    let mut log_p = vec![None; graph.len()];
    for &i in plan.generative_order() {
        let node = state[i].as_ref().expect("recognition pass assigns every variable");
        let parents = collect(&state, graph.generative_parents(i));
        let (dist, ps) = plan.generative_params(i, params, &parents, points, samples, tape)?;
        log_p[i] = Some(score(dist, ps, node.value, node.relaxed, samples)?);
    }
    let mut supplied_terms = Vec::new();
    for (i, slot) in state.into_iter().enumerate() {
        let p = slot.expect("recognition pass assigns every variable");
        if p.supplied {
            supplied_terms.push(p.log_q.expect("supplied variables are scored"));
        }
        nodes.push(NodeTrace {
            value: p.value,
            log_p: log_p[i].expect("generative pass scores every variable"),
            log_q: p.log_q,
            kl: p.kl,
            recognition: p.recognition,
            supplied: p.supplied,
        });
    }
    let log_w = total(tape, supplied_terms, points, samples)?;
    Ok(Trace {
        points,
        samples,
        nodes,
        log_w,
    })
}

/// Runs the recognition pass up to `target` and returns the recognition
/// distribution of `target` (with its per-sample flag) without sampling it.
pub fn recognition_dist<'t, R: Rng + ?Sized>(
    plan: &ExecutionPlan,
    tape: &'t Tape,
    params: &[Var<'t>],
    evidence: &Evidence,
    config: &TraceConfig,
    target: usize,
    rng: &mut R,
) -> Result<(DistParams<'t>, bool)> {
    let points = check_evidence(plan, evidence)?;
    let mut state = seed_state(plan, tape, evidence);
    let found = recognize(
        plan,
        tape,
        params,
        evidence,
        &mut state,
        points,
        config,
        Some(target),
        rng,
    )?;
    found.ok_or_else(|| {
        Error::Contract(format!(
            "`{}` is not a sampled variable",
            plan.graph().variable(target).name
        ))
    })
}

fn check_evidence(plan: &ExecutionPlan, evidence: &Evidence) -> Result<usize> {
    let graph = plan.graph();
    let mut points = None;
    for (name, t) in &evidence.values {
        let i = graph
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("evidence for undeclared variable `{name}`")))?;
        let v = graph.variable(i);
        if v.supervision == Supervision::Latent {
            return Err(Error::Contract(format!("`{name}` is latent and cannot be supplied")));
        }
        if t.shape().len() != 2 || t.cols() != v.shape {
            return Err(dim_err("evidence", t.shape(), &[t.rows(), v.shape]));
        }
        match points {
            None => points = Some(t.rows()),
            Some(p) if p != t.rows() => return Err(dim_err("evidence rows", &[p], &[t.rows()])),
            _ => {}
        }
    }
    for i in graph.observed_variables() {
        let name = &graph.variable(i).name;
        if evidence.get(name).is_none() {
            return Err(Error::Contract(format!("observed variable `{name}` has no value")));
        }
    }
    match points {
        Some(p) if p > 0 => Ok(p),
        _ => Err(Error::Contract("a trace needs at least one data point".into())),
    }
}

fn seed_state<'t>(plan: &ExecutionPlan, tape: &'t Tape, evidence: &Evidence) -> Vec<Option<Partial<'t>>> {
    let graph = plan.graph();
    (0..graph.len())
        .map(|i| {
            let v = graph.variable(i);
            match (v.supervision, evidence.get(&v.name)) {
                (Supervision::Observed, Some(t)) => Some(Partial {
                    value: Rows {
                        var: tape.constant(t.clone()),
                        per_sample: false,
                    },
                    log_q: None,
                    kl: None,
                    recognition: None,
                    supplied: false,
                    relaxed: None,
                }),
                _ => None,
            }
        })
        .collect()
}

fn collect<'t>(state: &[Option<Partial<'t>>], parents: &[usize]) -> Vec<Rows<'t>> {
    parents
        .iter()
        .map(|&p| state[p].as_ref().expect("parents precede children").value)
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn recognize<'t, R: Rng + ?Sized>(
    plan: &ExecutionPlan,
    tape: &'t Tape,
    params: &[Var<'t>],
    evidence: &Evidence,
    state: &mut [Option<Partial<'t>>],
    points: usize,
    config: &TraceConfig,
    stop: Option<usize>,
    rng: &mut R,
) -> Result<Option<(DistParams<'t>, bool)>> {
    let samples = config.samples;
    if samples == 0 {
        return Err(Error::Contract("at least one sample per point is required".into()));
    }
    let graph = plan.graph();
    for &i in plan.recognition_order() {
        let v = graph.variable(i);
        let parents = collect(state, graph.recognition_parents(i));
        let (dist, ps) = plan.recognition_params(i, params, &parents, points, samples, tape)?;
        if stop == Some(i) {
            return Ok(Some((dist, ps)));
        }
        dist.validate()?;
        let partial = if let Some(t) = evidence.get(&v.name) {
            let value = Rows {
                var: tape.constant(t.clone()),
                per_sample: false,
            };
            Partial {
                value,
                log_q: Some(score(dist, ps, value, None, samples)?),
                kl: None,
                recognition: Some(dist),
                supplied: true,
                relaxed: None,
            }
        } else {
            sample_node(plan, i, dist, ps, points, config, rng)?
        };
        state[i] = Some(partial);
    }
    Ok(None)
}

fn sample_node<'t, R: Rng + ?Sized>(
    plan: &ExecutionPlan,
    i: usize,
    dist: DistParams<'t>,
    ps: bool,
    points: usize,
    config: &TraceConfig,
    rng: &mut R,
) -> Result<Partial<'t>> {
    let samples = config.samples;
    let per_sample = samples > 1;
    let rows = points * samples;
    let expanded = if per_sample && !ps {
        dist.repeat_rows(samples)?
    } else {
        dist
    };
    let v = plan.graph().variable(i);
    let (value, log_q, kl, relaxed) = match expanded {
        DistParams::Normal { mean, log_std } => {
            let noise = dist::standard_normal(rng, &[rows, v.shape]);
            let z = normal_rsample(mean, log_std, &noise)?;
            let kl = if plan.has_standard_prior(i) {
                let (m, s) = match dist {
                    DistParams::Normal { mean, log_std } => (mean, log_std),
                    _ => unreachable!(),
                };
                Some(Rows {
                    var: kl_normal_std(m, s)?,
                    per_sample: ps && per_sample,
                })
            } else {
                None
            };
            (z, normal_log_prob(z, mean, log_std)?, kl, None)
        }
        DistParams::Categorical { logits } => match config.sampling {
            Sampling::Relaxed {
                temperature,
                straight_through,
                density,
            } => {
                let g = dist::gumbel(rng, &[rows, v.shape]);
                let log_soft = concrete_log_rsample(logits, temperature, &g)?;
                let soft = log_soft.exp();
                let y = if straight_through {
                    let hard = soft.value().argmax_rows();
                    let hard = soft.tape().constant(Tensor::one_hot(&hard, v.shape)?);
                    hard.add(&soft.sub(&soft.detach())?)?
                } else {
                    soft
                };
                let log_q = match density {
                    RelaxedDensity::SoftOneHot => relaxed_categorical_log_prob(y, logits)?,
                    RelaxedDensity::Concrete => concrete_log_prob(log_soft, logits, temperature)?,
                };
                let relaxed = Relaxed {
                    log_value: Rows {
                        var: log_soft,
                        per_sample,
                    },
                    temperature,
                    density,
                };
                (y, log_q, None, Some(relaxed))
            }
            Sampling::Exact => {
                let hard = dist::sample_one_hot(rng, &logits.value());
                let y = logits.tape().constant(hard);
                (y, categorical_log_prob(y, logits)?, None, None)
            }
        },
        DistParams::Bernoulli { .. } | DistParams::Concrete { .. } => {
            return Err(Error::Contract(format!("`{}` has no reparameterized sampler", v.name)));
        }
    };
    Ok(Partial {
        value: Rows { var: value, per_sample },
        log_q: Some(Rows { var: log_q, per_sample }),
        kl,
        recognition: Some(dist),
        supplied: false,
        relaxed,
    })
}

/// Log-density of `value` under `dist`, expanding whichever side is per-point.
fn score<'t>(
    dist: DistParams<'t>,
    dist_ps: bool,
    value: Rows<'t>,
    relaxed: Option<Relaxed<'t>>,
    samples: usize,
) -> Result<Rows<'t>> {
    let per_sample = (dist_ps || value.per_sample) && samples > 1;
    let dist = if per_sample && !dist_ps {
        dist.repeat_rows(samples)?
    } else {
        dist
    };
    let rows = |r: Rows<'t>| if per_sample { r.expand(samples) } else { Ok(r.var) };
    let lp = match (dist, relaxed) {
        (DistParams::Categorical { logits }, Some(r)) => match r.density {
            RelaxedDensity::SoftOneHot => relaxed_categorical_log_prob(rows(value)?, logits)?,
            RelaxedDensity::Concrete => concrete_log_prob(rows(r.log_value)?, logits, r.temperature)?,
        },
        (dist, _) => dist.log_prob(rows(value)?)?,
    };
    Ok(Rows { var: lp, per_sample })
}

/// Sums `[rows, 1]` terms into a single `[points * samples, 1]` column.
fn total<'t>(tape: &'t Tape, terms: Vec<Rows<'t>>, points: usize, samples: usize) -> Result<Var<'t>> {
    let (mut point, mut sample): (Option<Var<'t>>, Option<Var<'t>>) = (None, None);
    for t in terms {
        let slot = if t.per_sample && samples > 1 {
            &mut sample
        } else {
            &mut point
        };
        *slot = Some(match slot.take() {
            Some(acc) => acc.add(&t.var)?,
            None => t.var,
        });
    }
    let point = match point {
        Some(p) => Some(
            Rows {
                var: p,
                per_sample: false,
            }
            .expand(samples)?,
        ),
        None => None,
    };
    match (point, sample) {
        (Some(a), Some(b)) => a.add(&b),
        (Some(a), None) | (None, Some(a)) => Ok(a),
        (None, None) => Ok(tape.constant(Tensor::zeros([points * samples, 1]))),
    }
}

impl<'t> Trace<'t> {
    pub fn points(&self) -> usize {
        self.points
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn nodes(&self) -> &[NodeTrace<'t>] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &NodeTrace<'t> {
        &self.nodes[i]
    }

    /// Whether any partial variable was supplied.
    pub fn is_supervised(&self) -> bool {
        self.nodes.iter().any(|n| n.supplied)
    }

    fn tape(&self) -> &'t Tape {
        self.log_w.tape()
    }

    fn sum_where(&self, pick: impl Fn(&NodeTrace<'t>) -> Option<Rows<'t>>) -> Result<Var<'t>> {
        let terms = self.nodes.iter().filter_map(pick).collect();
        total(self.tape(), terms, self.points, self.samples)
    }

    /// `Σ log p` over all variables, `[points * samples, 1]`.
    pub fn log_joint_p(&self) -> Result<Var<'t>> {
        self.sum_where(|n| Some(n.log_p))
    }

    /// `Σ log q` over all non-observed variables.
    pub fn log_joint_q(&self) -> Result<Var<'t>> {
        self.sum_where(|n| n.log_q)
    }

    /// Recognition log-density of the sampled (unsupplied) variables, the
    /// proposal density.
    pub fn log_q_unsupplied(&self) -> Result<Var<'t>> {
        self.sum_where(|n| if n.supplied { None } else { n.log_q })
    }

    /// Sum of recognition log-probs of the supplied partial variables.
    pub fn log_w(&self) -> Var<'t> {
        self.log_w
    }

    /// `log p`, `log q` and `log w`, each reshaped to `[points, samples]`.
    pub fn sample_set(&self) -> Result<SampleSet<'t>> {
        let shape = [self.points, self.samples];
        Ok(SampleSet {
            log_p: self.log_joint_p()?.reshape(&shape)?,
            log_q: self.log_joint_q()?.reshape(&shape)?,
            log_w: self.log_w.reshape(&shape)?,
        })
    }

    /// Like [`Trace::sample_set`], but every sampled normal variable with a
    /// standard-normal prior contributes `−KL` in place of its
    /// `log p − log q` pair. Only differences `log_p − log_q` are meaningful.
    pub fn sample_set_analytic_kl(&self) -> Result<SampleSet<'t>> {
        let shape = [self.points, self.samples];
        let lp = self.sum_where(|n| if n.kl.is_some() { None } else { Some(n.log_p) })?;
        let lq = self.sum_where(|n| if n.kl.is_some() { None } else { n.log_q })?;
        let kl = self.sum_where(|n| n.kl)?;
        Ok(SampleSet {
            log_p: lp.sub(&kl)?.reshape(&shape)?,
            log_q: lq.reshape(&shape)?,
            log_w: self.log_w.reshape(&shape)?,
        })
    }
}

/// Stored log importance weight of a trace.
pub fn importance_weight<'t>(trace: &Trace<'t>) -> Var<'t> {
    trace.log_w()
}

/// Per-sample quantities consumed by the estimators, each `[points, samples]`.
#[derive(Clone, Copy, Debug)]
pub struct SampleSet<'t> {
    pub log_p: Var<'t>,
    pub log_q: Var<'t>,
    pub log_w: Var<'t>,
}

impl<'t> SampleSet<'t> {
    /// Builds a set from plain row-major `[points, samples]` values.
    pub fn from_values(
        tape: &'t Tape,
        points: usize,
        log_p: Vec<f64>,
        log_q: Vec<f64>,
        log_w: Vec<f64>,
    ) -> Result<Self> {
        let samples = log_p.len().checked_div(points).unwrap_or(0);
        let mk = |v: Vec<f64>| Tensor::new([points, samples], v).map(|t| tape.constant(t));
        Ok(SampleSet {
            log_p: mk(log_p)?,
            log_q: mk(log_q)?,
            log_w: mk(log_w)?,
        })
    }

    pub fn points(&self) -> usize {
        self.log_p.value().shape()[0]
    }

    pub fn samples(&self) -> usize {
        self.log_p.value().shape()[1]
    }

    /// `log q − log w`: the log-density of the proposal over unsupplied variables.
    pub fn log_q_proposal(&self) -> Result<Var<'t>> {
        self.log_q.sub(&self.log_w)
    }
}

/// How [`sample_generative`] resolves each unsupplied variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenerateMode {
    /// Distribution means: normal means, Bernoulli probabilities, softmax
    /// probabilities for categoricals.
    Mean,
    /// Ancestral samples.
    Sample,
}

/// Ancestral pass through the generative model, holding the variables in
/// `given` fixed. Returns one `[points, width]` tensor per variable.
pub fn sample_generative<R: Rng + ?Sized>(
    plan: &ExecutionPlan,
    params: &[Tensor],
    given: &Evidence,
    points: usize,
    mode: GenerateMode,
    rng: &mut R,
) -> Result<BTreeMap<String, Tensor>> {
    let graph = plan.graph();
    let tape = Tape::new();
    let params: Vec<Var<'_>> = params.iter().map(|t| tape.constant(t.clone())).collect();
    let mut values: Vec<Option<Rows<'_>>> = vec![None; graph.len()];
    for &i in plan.generative_order() {
        let v = graph.variable(i);
        if let Some(t) = given.get(&v.name) {
            if t.shape() != [points, v.shape] {
                return Err(dim_err("sample_generative", t.shape(), &[points, v.shape]));
            }
            values[i] = Some(Rows {
                var: tape.constant(t.clone()),
                per_sample: false,
            });
            continue;
        }
        let parents: Vec<Rows<'_>> = graph
            .generative_parents(i)
            .iter()
            .map(|&p| values[p].expect("parents precede children"))
            .collect();
        let (dist, _) = plan.generative_params(i, &params, &parents, points, 1, &tape)?;
        let out = match mode {
            GenerateMode::Mean => dist.mean()?.to_tensor(),
            GenerateMode::Sample => draw(dist, rng)?,
        };
        values[i] = Some(Rows {
            var: tape.constant(out),
            per_sample: false,
        });
    }
    Ok((0..graph.len())
        .map(|i| {
            let v = values[i].expect("every variable is visited");
            (graph.variable(i).name.clone(), v.var.to_tensor())
        })
        .collect())
}

fn draw<R: Rng + ?Sized>(dist: DistParams<'_>, rng: &mut R) -> Result<Tensor> {
    Ok(match dist {
        DistParams::Normal { mean, log_std } => {
            let noise = dist::standard_normal(rng, &mean.shape());
            normal_rsample(mean, log_std, &noise)?.to_tensor()
        }
        DistParams::Categorical { logits } | DistParams::Concrete { logits, .. } => {
            dist::sample_one_hot(rng, &logits.value())
        }
        DistParams::Bernoulli { logits } => {
            let l = logits.to_tensor();
            let bits = l
                .data()
                .iter()
                .map(|&v| f64::from(u8::from(rng.random::<f64>() < math::sigmoid(v))))
                .collect();
            Tensor::new(l.shape().to_vec(), bits)?
        }
    })
}
