use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{topological_order, Activation, Family, ModelGraph, ParamFn, Supervision};
use crate::dist::DistParams;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::{Tape, Tensor, Var};

/// Named parameter tensors, addressed by index from an [`ExecutionPlan`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape` as a tracked leaf.
    pub fn track<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.var(t.clone())).collect()
    }

    /// Records every parameter on `tape` without gradient tracking.
    pub fn freeze<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.constant(t.clone())).collect()
    }

    /// Gradients of the leaves returned by [`ParamStore::track`].
    pub fn gradients(&self, tape: &Tape, vars: &[Var<'_>]) -> Vec<Tensor> {
        vars.iter().map(|&v| tape.grad_or_zeros(v)).collect()
    }

    /// Replaces all tensors, checking that shapes are unchanged.
    pub fn replace(&mut self, names: &[String], tensors: Vec<Tensor>) -> Result<()> {
        if names != self.names.as_slice() {
            return Err(Error::Contract("parameter names differ".into()));
        }
        for (old, new) in self.tensors.iter().zip(&tensors) {
            if old.shape() != new.shape() {
                return Err(crate::error::dim_err("ParamStore::replace", old.shape(), new.shape()));
            }
        }
        self.tensors = tensors;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct MlpHandle {
    /// One input weight block per parent, in parent order.
    pub(crate) input_blocks: Vec<usize>,
    pub(crate) input_bias: usize,
    /// Remaining (weight, bias) layers.
    pub(crate) layers: Vec<(usize, usize)>,
    pub(crate) activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum ParamHandle {
    Constant(Tensor),
    Mlp(MlpHandle),
}

/// Noise each sampled variable draws per sample row.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Normal(usize),
    Gumbel(usize),
}

/// Compiled form of a [`ModelGraph`]: evaluation orders plus a parameter
/// function handle for every generative and recognition factor.
#[derive(Clone, Debug)]
pub struct ExecutionPlan {
    graph: ModelGraph,
    recognition_order: Vec<usize>,
    generative_order: Vec<usize>,
    eta: Vec<ParamHandle>,
    lambda: Vec<Option<ParamHandle>>,
    noise: Vec<NoiseKind>,
    /// Whether a variable's prior is the default standard normal.
    standard_prior: Vec<bool>,
}

/// Compiles `graph`, initializing MLP weights uniformly in
/// `±sqrt(6 / (fan_in + fan_out))` and biases at zero.
pub fn compile(graph: &ModelGraph, init_seed: u64) -> Result<(ExecutionPlan, ParamStore)> {
    let n = graph.len();
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let mut store = ParamStore::new();

    let sampled: Vec<usize> = (0..n)
        .filter(|&i| graph.variable(i).supervision != Supervision::Observed)
        .collect();
    let rec_parents: Vec<Vec<usize>> = (0..n).map(|i| graph.recognition_parents(i).to_vec()).collect();
    let gen_parents: Vec<Vec<usize>> = (0..n).map(|i| graph.generative_parents(i).to_vec()).collect();
    let recognition_order = topological_order(&sampled, &rec_parents);
    let all: Vec<usize> = (0..n).collect();
    let generative_order = topological_order(&all, &gen_parents);

    let mut eta = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    let mut standard_prior = Vec::with_capacity(n);
    for i in 0..n {
        let v = graph.variable(i);
        let gen_widths: Vec<usize> = gen_parents[i].iter().map(|&p| graph.variable(p).shape).collect();
        let prefix = format!("{}.eta", v.name);
        let handle = match &v.eta {
            Some(f) => build_handle(
                f,
                v.family,
                v.shape,
                &gen_parents[i],
                &gen_widths,
                graph,
                &prefix,
                &mut store,
                &mut rng,
            ),
            None => ParamHandle::Constant(default_prior(v.family, v.shape)),
        };
        standard_prior
            .push(v.family == Family::Normal && handle == ParamHandle::Constant(default_prior(v.family, v.shape)));
        eta.push(handle);

        lambda.push(match &v.lambda {
            Some(f) => {
                let widths: Vec<usize> = rec_parents[i].iter().map(|&p| graph.variable(p).shape).collect();
                let prefix = format!("{}.lambda", v.name);
                Some(build_handle(
                    f,
                    v.family,
                    v.shape,
                    &rec_parents[i],
                    &widths,
                    graph,
                    &prefix,
                    &mut store,
                    &mut rng,
                ))
            }
            None => None,
        });
    }
    let noise = (0..n)
        .map(|i| {
            let v = graph.variable(i);
            match (v.supervision, v.family) {
                (Supervision::Observed, _) => NoiseKind::None,
                (_, Family::Normal) => NoiseKind::Normal(v.shape),
                (_, Family::Categorical) => NoiseKind::Gumbel(v.shape),
                (_, Family::Bernoulli) => NoiseKind::None,
            }
        })
        .collect();
    Ok((
        ExecutionPlan {
            graph: graph.clone(),
            recognition_order,
            generative_order,
            eta,
            lambda,
            noise,
            standard_prior,
        },
        store,
    ))
}

fn default_prior(family: Family, shape: usize) -> Tensor {
    // Normal: [mean | log_std] = 0; discrete: uniform logits.
    let width = match family {
        Family::Normal => 2 * shape,
        _ => shape,
    };
    Tensor::zeros([1, width])
}

#[allow(clippy::too_many_arguments)]
fn build_handle(
    f: &ParamFn,
    family: Family,
    shape: usize,
    parents: &[usize],
    widths: &[usize],
    graph: &ModelGraph,
    prefix: &str,
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
) -> ParamHandle {
    match f {
        ParamFn::Constant(c) => {
            let mut row = Vec::new();
            match family {
                Family::Normal => {
                    row.extend_from_slice(c.mean.as_deref().unwrap_or(&[]));
                    row.extend_from_slice(c.log_std.as_deref().unwrap_or(&[]));
                }
                _ => row.extend_from_slice(c.logits.as_deref().unwrap_or(&[])),
            }
            ParamHandle::Constant(Tensor::row(row))
        }
        ParamFn::Mlp(m) => {
            let out = match family {
                Family::Normal => 2 * shape,
                _ => shape,
            };
            let fan_in: usize = widths.iter().sum();
            let mut sizes = Vec::with_capacity(m.hidden.len() + 1);
            sizes.extend_from_slice(&m.hidden);
            sizes.push(out);
            let first = sizes[0];
            let limit = math::sqrt(6.0 / (fan_in + first) as f64);
            let input_blocks = parents
                .iter()
                .zip(widths)
                .map(|(&p, &w)| {
                    let name = format!("{prefix}.l0.w.{}", graph.variable(p).name);
                    store.push(name, uniform(rng, w, first, limit))
                })
                .collect();
            let input_bias = store.push(format!("{prefix}.l0.b"), Tensor::zeros([1, first]));
            let mut layers = Vec::new();
            for (l, pair) in sizes.windows(2).enumerate() {
                let (a, b) = (pair[0], pair[1]);
                let limit = math::sqrt(6.0 / (a + b) as f64);
                let w = store.push(format!("{prefix}.l{}.w", l + 1), uniform(rng, a, b, limit));
                let bias = store.push(format!("{prefix}.l{}.b", l + 1), Tensor::zeros([1, b]));
                layers.push((w, bias));
            }
            ParamHandle::Mlp(MlpHandle {
                input_blocks,
                input_bias,
                layers,
                activation: m.activation,
            })
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::new([rows, cols], data).expect("length matches shape")
}

/// A value on the tape together with how many rows it carries: one per data
/// point, or one per (data point, sample) pair.
#[derive(Clone, Copy, Debug)]
pub struct Rows<'t> {
    pub var: Var<'t>,
    pub per_sample: bool,
}

impl<'t> Rows<'t> {
    /// Expands per-point rows to per-sample rows.
    pub fn expand(self, samples: usize) -> Result<Var<'t>> {
        if self.per_sample || samples == 1 {
            Ok(self.var)
        } else {
            self.var.repeat_rows(samples)
        }
    }
}

impl ExecutionPlan {
    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    /// Sampled variables in recognition evaluation order.
    pub fn recognition_order(&self) -> &[usize] {
        &self.recognition_order
    }

    /// All variables in generative evaluation order.
    pub fn generative_order(&self) -> &[usize] {
        &self.generative_order
    }

    pub fn recognition_order_names(&self) -> Vec<&str> {
        self.names(&self.recognition_order)
    }

    pub fn generative_order_names(&self) -> Vec<&str> {
        self.names(&self.generative_order)
    }

    fn names(&self, order: &[usize]) -> Vec<&str> {
        order.iter().map(|&i| self.graph.variable(i).name.as_str()).collect()
    }

    pub fn noise(&self, i: usize) -> NoiseKind {
        self.noise[i]
    }

    pub(crate) fn has_standard_prior(&self, i: usize) -> bool {
        self.standard_prior[i]
    }

    /// Every MLP descriptor in the graph has its parameter block.
    pub fn parameter_count(&self) -> usize {
        let count = |h: &ParamHandle| match h {
            ParamHandle::Constant(_) => 0,
            ParamHandle::Mlp(m) => m.input_blocks.len() + 1 + 2 * m.layers.len(),
        };
        self.eta.iter().map(count).sum::<usize>() + self.lambda.iter().flatten().map(count).sum::<usize>()
    }

    /// Generative distribution of variable `i` given its parents' values.
    pub fn generative_params<'t>(
        &self,
        i: usize,
        params: &[Var<'t>],
        parents: &[Rows<'t>],
        points: usize,
        samples: usize,
        tape: &'t Tape,
    ) -> Result<(DistParams<'t>, bool)> {
        self.eval(&self.eta[i], i, params, parents, points, samples, tape)
    }

    /// Recognition distribution of variable `i` given its parents' values.
    pub fn recognition_params<'t>(
        &self,
        i: usize,
        params: &[Var<'t>],
        parents: &[Rows<'t>],
        points: usize,
        samples: usize,
        tape: &'t Tape,
    ) -> Result<(DistParams<'t>, bool)> {
        let handle = self.lambda[i]
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("`{}` has no recognition function", self.graph.variable(i).name)))?;
        self.eval(handle, i, params, parents, points, samples, tape)
    }

    /// Evaluates a parameter function; the flag reports per-sample rows.
    #[allow(clippy::too_many_arguments)]
    fn eval<'t>(
        &self,
        handle: &ParamHandle,
        i: usize,
        params: &[Var<'t>],
        parents: &[Rows<'t>],
        points: usize,
        samples: usize,
        tape: &'t Tape,
    ) -> Result<(DistParams<'t>, bool)> {
        let v = self.graph.variable(i);
        let (raw, per_sample) = match handle {
            ParamHandle::Constant(row) => (tape.constant(row.clone()).repeat_rows(points)?, false),
            ParamHandle::Mlp(m) => {
                let per_sample = parents.iter().any(|p| p.per_sample) && samples > 1;
                let mut acc: Option<Var<'t>> = None;
                for (p, &w) in parents.iter().zip(&m.input_blocks) {
                    let prod = p.var.matmul(&params[w])?;
                    let prod = if per_sample {
                        Rows {
                            var: prod,
                            per_sample: p.per_sample,
                        }
                        .expand(samples)?
                    } else {
                        prod
                    };
                    acc = Some(match acc {
                        Some(a) => a.add(&prod)?,
                        None => prod,
                    });
                }
                let mut h = acc
                    .expect("MLP functions have at least one parent")
                    .add_row(&params[m.input_bias])?;
                for &(w, b) in &m.layers {
                    h = activate(h, m.activation);
                    h = h.matmul(&params[w])?.add_row(&params[b])?;
                }
                (h, per_sample)
            }
        };
        let dist = match v.family {
            Family::Normal => DistParams::Normal {
                mean: raw.slice_cols(0, v.shape)?,
                log_std: raw.slice_cols(v.shape, v.shape)?,
            },
            Family::Categorical => DistParams::Categorical { logits: raw },
            Family::Bernoulli => DistParams::Bernoulli { logits: raw },
        };
        Ok((dist, per_sample))
    }
}

fn activate(h: Var<'_>, a: Activation) -> Var<'_> {
    match a {
        Activation::Relu => h.relu(),
        Activation::Tanh => h.tanh(),
        Activation::Softplus => h.softplus(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::{define_model, VariableSpec};
    use alloc::vec;

    fn mlp() -> ParamFn {
        ParamFn::mlp(&[8], Activation::Relu)
    }

    fn mnist_graph() -> ModelGraph {
        define_model(vec![
            VariableSpec::new("y", Family::Categorical, 10, Supervision::Partial).recognition(&["x"], mlp()),
            VariableSpec::new("z", Family::Normal, 4, Supervision::Latent).recognition(&["x", "y"], mlp()),
            VariableSpec::new("x", Family::Bernoulli, 16, Supervision::Observed).generative(&["y", "z"], mlp()),
        ])
        .unwrap()
    }

    #[test]
    fn mnist_orders_are_forced_by_edges() {
        let (plan, _) = compile(&mnist_graph(), 0).unwrap();
        assert_eq!(plan.recognition_order_names(), vec!["y", "z"]);
        assert_eq!(plan.generative_order_names(), vec!["y", "z", "x"]);
    }

    #[test]
    fn chain_recognition_order() {
        let g = define_model(vec![
            VariableSpec::new("x", Family::Normal, 2, Supervision::Observed).generative(&["z2", "y1"], mlp()),
            VariableSpec::new("z2", Family::Normal, 2, Supervision::Latent).recognition(&["y1", "z1", "x"], mlp()),
            VariableSpec::new("y1", Family::Categorical, 3, Supervision::Partial).recognition(&["z1", "x"], mlp()),
            VariableSpec::new("z1", Family::Normal, 2, Supervision::Latent).recognition(&["x"], mlp()),
        ])
        .unwrap();
        let (plan, _) = compile(&g, 0).unwrap();
        assert_eq!(plan.recognition_order_names(), vec!["z1", "y1", "z2"]);
    }

    #[test]
    fn compilation_is_deterministic() {
        let g = mnist_graph();
        let (p1, s1) = compile(&g, 17).unwrap();
        let (p2, s2) = compile(&g, 17).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(p1.recognition_order(), p2.recognition_order());
        assert_eq!(p1.generative_order(), p2.generative_order());
        let (_, s3) = compile(&g, 18).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn every_mlp_has_parameters_with_glorot_bounds() {
        let (plan, store) = compile(&mnist_graph(), 3).unwrap();
        // x.eta: 2 input blocks + bias + 1 layer pair; z.lambda: 2 + 1 + 2; y.lambda: 1 + 1 + 2.
        assert_eq!(plan.parameter_count(), 5 + 5 + 4);
        assert_eq!(store.len(), 14);
        let w = store.get("z.lambda.l0.w.x").unwrap();
        assert_eq!(w.shape(), &[16, 8]);
        let limit = (6.0f64 / (26.0 + 8.0)).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= limit));
        assert!(store.get("z.lambda.l0.b").unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(store.get("z.lambda.l1.w").unwrap().shape(), &[8, 8]);
    }
}
