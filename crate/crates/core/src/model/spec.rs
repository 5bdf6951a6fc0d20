use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Family {
    Normal,
    Categorical,
    Bernoulli,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Supervision {
    /// Always given as data; no recognition factor.
    Observed,
    /// Never labelled; always sampled from the recognition model.
    Latent,
    /// Labelled for some data points, sampled otherwise.
    Partial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Relu,
    Tanh,
    Softplus,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpSpec {
    /// Hidden layer widths; empty means a single affine map.
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

/// Fixed distribution parameters. Normal variables use `mean`/`log_std`,
/// discrete families use `logits`.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConstantParams {
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub mean: Option<Vec<f64>>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub log_std: Option<Vec<f64>>,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub logits: Option<Vec<f64>>,
}

/// How a variable's distribution parameters are computed from its parents.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ParamFn {
    Constant(ConstantParams),
    Mlp(MlpSpec),
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VariableSpec {
    pub name: String,
    pub family: Family,
    /// Feature width; the class count for categorical variables.
    pub shape: usize,
    pub supervision: Supervision,
    #[cfg_attr(feature = "serde", serde(default))]
    pub generative_parents: Vec<String>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub recognition_parents: Vec<String>,
    /// Generative parameter function. May be omitted for parentless
    /// variables, which then get a standard-normal / uniform prior.
    #[cfg_attr(feature = "serde", serde(default))]
    pub eta: Option<ParamFn>,
    /// Recognition parameter function; required unless observed.
    #[cfg_attr(feature = "serde", serde(default))]
    pub lambda: Option<ParamFn>,
}

impl VariableSpec {
    pub fn new(name: &str, family: Family, shape: usize, supervision: Supervision) -> Self {
        VariableSpec {
            name: name.into(),
            family,
            shape,
            supervision,
            generative_parents: Vec::new(),
            recognition_parents: Vec::new(),
            eta: None,
            lambda: None,
        }
    }

    pub fn generative(mut self, parents: &[&str], eta: ParamFn) -> Self {
        self.generative_parents = parents.iter().map(|&p| p.into()).collect();
        self.eta = Some(eta);
        self
    }

    pub fn recognition(mut self, parents: &[&str], lambda: ParamFn) -> Self {
        self.recognition_parents = parents.iter().map(|&p| p.into()).collect();
        self.lambda = Some(lambda);
        self
    }

    /// Width of the parameter vector the family consumes.
    pub fn param_width(&self) -> usize {
        match self.family {
            Family::Normal => 2 * self.shape,
            Family::Categorical | Family::Bernoulli => self.shape,
        }
    }
}

impl ParamFn {
    pub fn mlp(hidden: &[usize], activation: Activation) -> Self {
        ParamFn::Mlp(MlpSpec {
            hidden: hidden.to_vec(),
            activation,
        })
    }

    pub fn logits(logits: Vec<f64>) -> Self {
        ParamFn::Constant(ConstantParams {
            logits: Some(logits),
            ..Default::default()
        })
    }

    pub fn normal(mean: Vec<f64>, log_std: Vec<f64>) -> Self {
        ParamFn::Constant(ConstantParams {
            mean: Some(mean),
            log_std: Some(log_std),
            ..Default::default()
        })
    }
}

/// A validated set of variables with acyclic generative and recognition edges.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph {
    variables: Vec<VariableSpec>,
    index: BTreeMap<String, usize>,
    generative_parents: Vec<Vec<usize>>,
    recognition_parents: Vec<Vec<usize>>,
}

impl ModelGraph {
    pub fn variables(&self) -> &[VariableSpec] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn variable(&self, i: usize) -> &VariableSpec {
        &self.variables[i]
    }

    pub fn generative_parents(&self, i: usize) -> &[usize] {
        &self.generative_parents[i]
    }

    pub fn recognition_parents(&self, i: usize) -> &[usize] {
        &self.recognition_parents[i]
    }

    /// Indices of variables marked partial; exactly these contribute
    /// factors to the importance weight when labelled.
    pub fn partial_variables(&self) -> Vec<usize> {
        self.filter(Supervision::Partial)
    }

    pub fn observed_variables(&self) -> Vec<usize> {
        self.filter(Supervision::Observed)
    }

    fn filter(&self, s: Supervision) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.variables[i].supervision == s)
            .collect()
    }
}

/// Validates variable specs into a [`ModelGraph`].
pub fn define_model(specs: Vec<VariableSpec>) -> Result<ModelGraph> {
    if specs.is_empty() {
        return Err(Error::Contract("a model needs at least one variable".into()));
    }
    let mut index = BTreeMap::new();
    for (i, v) in specs.iter().enumerate() {
        if index.insert(v.name.clone(), i).is_some() {
            return Err(Error::Contract(format!("duplicate variable `{}`", v.name)));
        }
    }
    let resolve = |v: &VariableSpec, names: &[String]| -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| {
                index.get(n).copied().ok_or_else(|| Error::Reference {
                    name: n.clone(),
                    by: v.name.clone(),
                })
            })
            .collect()
    };
    let mut generative_parents = Vec::with_capacity(specs.len());
    let mut recognition_parents = Vec::with_capacity(specs.len());
    for v in &specs {
        generative_parents.push(resolve(v, &v.generative_parents)?);
        recognition_parents.push(resolve(v, &v.recognition_parents)?);
        check_variable(v)?;
    }
    let names: Vec<&str> = specs.iter().map(|v| v.name.as_str()).collect();
    if let Some(cycle) = find_cycle(&generative_parents) {
        return Err(Error::Cycle {
            graph: "generative",
            cycle: cycle.iter().map(|&i| names[i].into()).collect(),
        });
    }
    if let Some(cycle) = find_cycle(&recognition_parents) {
        return Err(Error::Cycle {
            graph: "recognition",
            cycle: cycle.iter().map(|&i| names[i].into()).collect(),
        });
    }
    Ok(ModelGraph {
        variables: specs,
        index,
        generative_parents,
        recognition_parents,
    })
}

fn check_variable(v: &VariableSpec) -> Result<()> {
    let contract = |msg: &str| Err(Error::Contract(format!("variable `{}`: {msg}", v.name)));
    if v.shape == 0 {
        return contract("shape must be positive");
    }
    match v.supervision {
        Supervision::Observed => {
            if v.lambda.is_some() {
                return contract("observed variables take no recognition function");
            }
            if !v.recognition_parents.is_empty() {
                return contract("observed variables take no recognition parents");
            }
        }
        Supervision::Latent | Supervision::Partial => {
            if v.lambda.is_none() {
                return contract("sampled variables need a recognition function");
            }
            if v.family == Family::Bernoulli {
                return contract("bernoulli variables have no reparameterized sampler; mark them observed");
            }
        }
    }
    if v.eta.is_none() && !v.generative_parents.is_empty() {
        return contract("a generative function is required when generative parents are declared");
    }
    for (f, parents) in [(&v.eta, &v.generative_parents), (&v.lambda, &v.recognition_parents)] {
        match f {
            Some(ParamFn::Mlp(m)) => {
                if parents.is_empty() {
                    return contract("an MLP parameter function needs at least one parent");
                }
                if m.hidden.contains(&0) {
                    return contract("hidden widths must be positive");
                }
            }
            Some(ParamFn::Constant(c)) => check_constant(v, c)?,
            None => {}
        }
    }
    Ok(())
}

fn check_constant(v: &VariableSpec, c: &ConstantParams) -> Result<()> {
    let ok_len = |x: &Option<Vec<f64>>| {
        x.as_ref()
            .is_some_and(|x| x.len() == v.shape && x.iter().all(|e| e.is_finite()))
    };
    let valid = match v.family {
        Family::Normal => ok_len(&c.mean) && ok_len(&c.log_std) && c.logits.is_none(),
        Family::Categorical | Family::Bernoulli => ok_len(&c.logits) && c.mean.is_none() && c.log_std.is_none(),
    };
    if valid {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "variable `{}`: constant parameters do not match a {:?} of width {}",
            v.name, v.family, v.shape
        )))
    }
}

/// Returns one cycle (as a closed node list) if the parent relation has any.
fn find_cycle(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = parents.len();
    let mut mark = vec![Mark::New; n];
    for root in 0..n {
        if mark[root] != Mark::New {
            continue;
        }
        // Iterative DFS over parent edges; `path` holds the active chain.
        let mut path: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut next)) = path.last_mut() {
            if *next < parents[node].len() {
                let p = parents[node][*next];
                *next += 1;
                match mark[p] {
                    Mark::New => {
                        mark[p] = Mark::Active;
                        path.push((p, 0));
                    }
                    Mark::Active => {
                        let start = path
                            .iter()
                            .position(|&(v, _)| v == p)
                            .expect("active node is on the path");
                        let mut cycle: Vec<usize> = path[start..].iter().map(|&(v, _)| v).collect();
                        // Edges point child -> parent; report in parent -> child order.
                        cycle.reverse();
                        cycle.push(cycle[0]);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                path.pop();
            }
        }
    }
    None
}

/// Kahn's algorithm over `nodes`, breaking ties by declaration order.
/// Parents outside `nodes` are treated as already available.
pub(crate) fn topological_order(nodes: &[usize], parents: &[Vec<usize>]) -> Vec<usize> {
    let n = parents.len();
    let mut member = vec![false; n];
    for &i in nodes {
        member[i] = true;
    }
    let mut pending: Vec<usize> = (0..n)
        .map(|i| parents[i].iter().filter(|&&p| member[p]).count())
        .collect();
    let mut ready: alloc::collections::BTreeSet<usize> = nodes.iter().copied().filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        for &c in nodes {
            let hits = parents[c].iter().filter(|&&p| p == i).count();
            if hits > 0 {
                pending[c] -= hits;
                if pending[c] == 0 {
                    ready.insert(c);
                }
            }
        }
    }
    order
}
