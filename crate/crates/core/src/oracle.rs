//! Exact enumeration over small tabular models, used as ground truth for the
//! estimators.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dist::sample_index;
use crate::error::{Error, Result};
use crate::math::{self, log_sum_exp, mean_stderr};
use crate::model::{SampleSet, Supervision};
use crate::objective;
use crate::tensor::Tape;

/// Largest joint state space the oracle will enumerate.
pub const MAX_STATES: usize = 1_000_000;

const ROW_TOLERANCE: f64 = 1e-12;

/// A finite-domain variable with conditional probability tables. Tables are
/// row-major `[Π parent domains, domain]`, parents in declared order with the
/// last parent varying fastest.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TabularVar {
    pub name: String,
    pub domain: usize,
    pub supervision: Supervision,
    #[cfg_attr(feature = "serde", serde(default))]
    pub generative_parents: Vec<usize>,
    pub generative_table: Vec<f64>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub recognition_parents: Vec<usize>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub recognition_table: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TabularModel {
    vars: Vec<TabularVar>,
    generative_order: Vec<usize>,
    recognition_order: Vec<usize>,
}

fn topo(parents: &[&[usize]], nodes: &[usize], graph: &'static str) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut done = vec![false; n];
    let mut member = vec![false; n];
    for &i in nodes {
        member[i] = true;
    }
    let mut order = Vec::with_capacity(nodes.len());
    while order.len() < nodes.len() {
        let next = nodes
            .iter()
            .copied()
            .find(|&i| !done[i] && parents[i].iter().all(|&p| done[p] || !member[p]));
        match next {
            Some(i) => {
                done[i] = true;
                order.push(i);
            }
            None => {
                return Err(Error::Cycle {
                    graph,
                    cycle: nodes.iter().filter(|&&i| !done[i]).map(|i| format!("#{i}")).collect(),
                })
            }
        }
    }
    Ok(order)
}

impl TabularModel {
    pub fn new(vars: Vec<TabularVar>) -> Result<Self> {
        let n = vars.len();
        if n == 0 {
            return Err(Error::Contract("a tabular model needs variables".into()));
        }
        let mut states: usize = 1;
        for v in &vars {
            if v.domain == 0 {
                return Err(Error::Contract(format!("`{}` has an empty domain", v.name)));
            }
            states = states.saturating_mul(v.domain);
        }
        if states > MAX_STATES {
            return Err(Error::Capacity(format!("{states} joint states exceed {MAX_STATES}")));
        }
        for v in &vars {
            for &p in v.generative_parents.iter().chain(&v.recognition_parents) {
                if p >= n {
                    return Err(Error::Reference {
                        name: format!("#{p}"),
                        by: v.name.clone(),
                    });
                }
            }
            check_table(&vars, v, &v.generative_parents, &v.generative_table, "generative")?;
            match v.supervision {
                Supervision::Observed => {
                    if !v.recognition_table.is_empty() || !v.recognition_parents.is_empty() {
                        return Err(Error::Contract(format!(
                            "observed `{}` has a recognition table",
                            v.name
                        )));
                    }
                }
                _ => {
                    check_table(&vars, v, &v.recognition_parents, &v.recognition_table, "recognition")?;
                }
            }
        }
        let gp: Vec<&[usize]> = vars.iter().map(|v| v.generative_parents.as_slice()).collect();
        let rp: Vec<&[usize]> = vars.iter().map(|v| v.recognition_parents.as_slice()).collect();
        let all: Vec<usize> = (0..n).collect();
        let sampled: Vec<usize> = (0..n)
            .filter(|&i| vars[i].supervision != Supervision::Observed)
            .collect();
        let generative_order = topo(&gp, &all, "generative")?;
        let recognition_order = topo(&rp, &sampled, "recognition")?;
        Ok(TabularModel {
            vars,
            generative_order,
            recognition_order,
        })
    }

    pub fn vars(&self) -> &[TabularVar] {
        &self.vars
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    fn row(parents: &[usize], domains: impl Fn(usize) -> usize, assignment: &[usize]) -> usize {
        parents.iter().fold(0, |acc, &p| acc * domains(p) + assignment[p])
    }

    fn gen_prob(&self, i: usize, a: &[usize]) -> f64 {
        let v = &self.vars[i];
        let r = Self::row(&v.generative_parents, |p| self.vars[p].domain, a);
        v.generative_table[r * v.domain + a[i]]
    }

    fn rec_prob(&self, i: usize, a: &[usize]) -> f64 {
        let v = &self.vars[i];
        let r = Self::row(&v.recognition_parents, |p| self.vars[p].domain, a);
        v.recognition_table[r * v.domain + a[i]]
    }

    fn rec_row(&self, i: usize, a: &[usize]) -> &[f64] {
        let v = &self.vars[i];
        let r = Self::row(&v.recognition_parents, |p| self.vars[p].domain, a);
        &v.recognition_table[r * v.domain..(r + 1) * v.domain]
    }

    fn gen_row(&self, i: usize, a: &[usize]) -> &[f64] {
        let v = &self.vars[i];
        let r = Self::row(&v.generative_parents, |p| self.vars[p].domain, a);
        &v.generative_table[r * v.domain..(r + 1) * v.domain]
    }

    /// `(log p, log q, log w)` of a full assignment, where `supplied` marks
    /// the partial variables treated as labels.
    fn log_terms(&self, a: &[usize], supplied: &[bool]) -> (f64, f64, f64) {
        let mut lp = 0.0;
        let mut lq = 0.0;
        let mut lw = 0.0;
        for (i, (v, &s)) in self.vars.iter().zip(supplied).enumerate() {
            lp += ln(self.gen_prob(i, a));
            if v.supervision != Supervision::Observed {
                let q = ln(self.rec_prob(i, a));
                lq += q;
                if s {
                    lw += q;
                }
            }
        }
        (lp, lq, lw)
    }

    fn check_given(&self, given: &[Option<usize>]) -> Result<Vec<bool>> {
        if given.len() != self.vars.len() {
            return Err(Error::Contract(format!(
                "assignment has {} entries for {} variables",
                given.len(),
                self.vars.len()
            )));
        }
        let mut supplied = vec![false; given.len()];
        for (i, (v, g)) in self.vars.iter().zip(given).enumerate() {
            match (v.supervision, g) {
                (Supervision::Observed, None) => {
                    return Err(Error::Contract(format!("observed `{}` needs a value", v.name)))
                }
                (Supervision::Latent, Some(_)) => {
                    return Err(Error::Contract(format!("latent `{}` cannot be supplied", v.name)))
                }
                (Supervision::Partial, Some(_)) => supplied[i] = true,
                _ => {}
            }
            if let Some(&x) = g.as_ref() {
                if x >= v.domain {
                    return Err(Error::Domain(format!("value {x} outside the domain of `{}`", v.name)));
                }
            }
        }
        Ok(supplied)
    }

    /// Calls `f` on every completion of `given` over the unassigned variables.
    fn enumerate(&self, given: &[Option<usize>], mut f: impl FnMut(&[usize])) {
        let free: Vec<usize> = (0..given.len()).filter(|&i| given[i].is_none()).collect();
        let mut a: Vec<usize> = given.iter().map(|g| g.unwrap_or(0)).collect();
        loop {
            f(&a);
            // Odometer increment over the free variables.
            let mut k = free.len();
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                let i = free[k];
                a[i] += 1;
                if a[i] < self.vars[i].domain {
                    break;
                }
                a[i] = 0;
            }
        }
    }
}

fn ln(p: f64) -> f64 {
    if p > 0.0 {
        math::ln(p)
    } else {
        f64::NEG_INFINITY
    }
}

fn check_table(vars: &[TabularVar], v: &TabularVar, parents: &[usize], table: &[f64], which: &str) -> Result<()> {
    let rows: usize = parents.iter().map(|&p| vars[p].domain).product();
    if table.len() != rows * v.domain {
        return Err(Error::Length {
            expected: rows * v.domain,
            found: table.len(),
        });
    }
    for (r, row) in table.chunks(v.domain).enumerate() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (s - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::Contract(format!(
                "{which} table of `{}`: row {r} sums to {s}",
                v.name
            )));
        }
    }
    Ok(())
}

/// Exact values of every estimator target for one `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactQuantities {
    /// `log q(y | x)` as `log Σ_z q(y, z | x)`.
    pub log_q_y: f64,
    /// `log q(y | x)` from the full recognition joint, marginalized over `z`
    /// and then conditioned on `x`.
    pub log_q_y_marginal: f64,
    /// `E_{q(z | x, y)}[log p(x, y, z) − log q(y, z | x)]`.
    pub conditional_expectation: f64,
    /// `E_{q(z | x)}[log w]` under the sampling proposal.
    pub expected_log_w: f64,
    /// Unsupervised ELBO `E_{q(y, z | x)}[log p − log q]`.
    pub elbo: f64,
    /// `log p(x)`.
    pub log_p_x: f64,
    /// `log p(x, y)`.
    pub log_p_xy: f64,
    /// `conditional_expectation + (1 + α) log q(y | x)`.
    pub supervised_target: f64,
    /// Large-S limit of the self-normalized estimator:
    /// `conditional_expectation + (1 + α) E[log w]`.
    pub supervised_limit: f64,
    /// Large-S limit of the importance-weighted variant:
    /// `log p(x, y) + α log q(y | x)`.
    pub iwae_limit: f64,
}

/// Computes every target by full summation. `given` holds a value for each
/// observed variable and for the supplied partial variables.
pub fn exact_quantities(model: &TabularModel, given: &[Option<usize>], alpha: f64) -> Result<ExactQuantities> {
    let supplied = model.check_given(given)?;
    let n = model.len();

    // Conditioned on the labels: sums over the free latents.
    let mut log_qs = Vec::new();
    let mut terms = Vec::new();
    let mut log_ps = Vec::new();
    model.enumerate(given, |a| {
        let (lp, lq, lw) = model.log_terms(a, &supplied);
        log_qs.push(lq);
        log_ps.push(lp);
        terms.push((lp, lq, lw));
    });
    let log_q_y = log_sum_exp(&log_qs);
    let log_p_xy = log_sum_exp(&log_ps);
    let mut conditional_expectation = 0.0;
    let mut expected_log_w = 0.0;
    for &(lp, lq, lw) in &terms {
        let post = math::exp(lq - log_q_y);
        if post > 0.0 {
            conditional_expectation += post * (lp - lq);
        }
        let proposal = math::exp(lq - lw);
        if proposal > 0.0 {
            expected_log_w += proposal * lw;
        }
    }

    // Unsupervised: every non-observed variable free.
    let x_only: Vec<Option<usize>> = (0..n)
        .map(|i| {
            if model.vars[i].supervision == Supervision::Observed {
                given[i]
            } else {
                None
            }
        })
        .collect();
    let none = vec![false; n];
    let mut elbo = 0.0;
    let mut all_lp = Vec::new();
    let mut all_lq = Vec::new();
    let mut label_lq = Vec::new();
    model.enumerate(&x_only, |a| {
        let (lp, lq, _) = model.log_terms(a, &none);
        let q = math::exp(lq);
        if q > 0.0 {
            elbo += q * (lp - lq);
        }
        all_lp.push(lp);
        all_lq.push(lq);
        if (0..n).all(|i| !supplied[i] || Some(a[i]) == given[i]) {
            label_lq.push(lq);
        }
    });
    let log_q_y_marginal = log_sum_exp(&label_lq) - log_sum_exp(&all_lq);
    Ok(ExactQuantities {
        log_q_y,
        log_q_y_marginal,
        conditional_expectation,
        expected_log_w,
        elbo,
        log_p_x: log_sum_exp(&all_lp),
        log_p_xy,
        supervised_target: conditional_expectation + (1.0 + alpha) * log_q_y,
        supervised_limit: conditional_expectation + (1.0 + alpha) * expected_log_w,
        iwae_limit: log_p_xy + alpha * log_q_y,
    })
}

/// Draws `samples` exact ancestral samples of the unsupplied variables from
/// the recognition tables and returns `(log p, log q, log w)` per sample.
pub fn sample_terms<R: Rng + ?Sized>(
    model: &TabularModel,
    given: &[Option<usize>],
    samples: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let supplied = model.check_given(given)?;
    let mut lp = Vec::with_capacity(samples);
    let mut lq = Vec::with_capacity(samples);
    let mut lw = Vec::with_capacity(samples);
    let mut a: Vec<usize> = given.iter().map(|g| g.unwrap_or(0)).collect();
    let mut logs = Vec::new();
    for _ in 0..samples {
        for &i in &model.recognition_order {
            if given[i].is_none() {
                logs.clear();
                logs.extend(model.rec_row(i, &a).iter().map(|&p| ln(p)));
                a[i] = sample_index(rng, &logs);
            }
        }
        let (p, q, w) = model.log_terms(&a, &supplied);
        lp.push(p);
        lq.push(q);
        lw.push(w);
    }
    Ok((lp, lq, lw))
}

/// Ancestral sample of every variable from the generative tables.
pub fn sample_generative<R: Rng + ?Sized>(model: &TabularModel, rng: &mut R) -> Vec<usize> {
    let mut a = vec![0; model.len()];
    let mut logs = Vec::new();
    for &i in &model.generative_order {
        logs.clear();
        logs.extend(model.gen_row(i, &a).iter().map(|&p| ln(p)));
        a[i] = sample_index(rng, &logs);
    }
    a
}

/// Exact generative marginal of variable `i`.
pub fn exact_marginal(model: &TabularModel, i: usize) -> Vec<f64> {
    let mut out = vec![0.0; model.vars[i].domain];
    let free = vec![None; model.len()];
    model.enumerate(&free, |a| {
        let p: f64 = (0..model.len()).map(|j| model.gen_prob(j, a)).product();
        out[a[i]] += p;
    });
    out
}

/// Which estimator [`compare_estimator`] runs, and against which exact value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Estimator {
    /// Unsupervised ELBO against the exact ELBO.
    Elbo,
    /// `(1/S) Σ (w/Z)(log p − log q)` against `E_{q(z|x,y)}[log p/q]`.
    SelfNormalizedTerm,
    /// `(1/S) Σ log w` against `log q(y | x)`; one-sided.
    LogMarginalBound,
    /// Full self-normalized estimator against its large-S limit.
    SelfNormalized { alpha: f64 },
    /// Importance-weighted variant against its large-S limit.
    ImportanceWeighted { alpha: f64 },
}

impl Estimator {
    pub fn label(&self) -> &'static str {
        match self {
            Estimator::Elbo => "elbo",
            Estimator::SelfNormalizedTerm => "snis_term",
            Estimator::LogMarginalBound => "log_w_bound",
            Estimator::SelfNormalized { .. } => "snis",
            Estimator::ImportanceWeighted { .. } => "iwae",
        }
    }

    fn exact(&self, q: &ExactQuantities) -> f64 {
        match self {
            Estimator::Elbo => q.elbo,
            Estimator::SelfNormalizedTerm => q.conditional_expectation,
            Estimator::LogMarginalBound => q.log_q_y,
            Estimator::SelfNormalized { .. } => q.supervised_limit,
            Estimator::ImportanceWeighted { .. } => q.iwae_limit,
        }
    }

    fn alpha(&self) -> f64 {
        match *self {
            Estimator::SelfNormalized { alpha } | Estimator::ImportanceWeighted { alpha } => alpha,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Report {
    pub samples: usize,
    pub seeds: usize,
    pub mean: f64,
    pub stderr: f64,
    pub exact: f64,
    /// `(mean − exact) / stderr`; zero when the estimator is deterministic
    /// and exact.
    pub z: f64,
}

/// One run of `estimator` on `S` exact samples.
pub fn estimate<R: Rng + ?Sized>(
    model: &TabularModel,
    given: &[Option<usize>],
    samples: usize,
    estimator: Estimator,
    rng: &mut R,
) -> Result<f64> {
    let unsupervised: Vec<Option<usize>>;
    let given = if estimator == Estimator::Elbo {
        unsupervised = given
            .iter()
            .zip(&model.vars)
            .map(|(g, v)| {
                if v.supervision == Supervision::Observed {
                    *g
                } else {
                    None
                }
            })
            .collect();
        &unsupervised
    } else {
        given
    };
    let (lp, lq, lw) = sample_terms(model, given, samples, rng)?;
    let tape = Tape::new();
    let set = SampleSet::from_values(&tape, 1, lp, lq, lw)?;
    let v = match estimator {
        Estimator::Elbo => objective::elbo(&set)?,
        Estimator::SelfNormalizedTerm => objective::self_normalized_term(&set, false)?,
        Estimator::LogMarginalBound => objective::log_marginal_bound(&set)?,
        Estimator::SelfNormalized { alpha } => objective::supervised_estimator(&set, alpha, false)?,
        Estimator::ImportanceWeighted { alpha } => objective::supervised_iwae(&set, alpha)?,
    };
    v.item()
}

/// Runs `estimator` over `n_seeds` independent noise streams derived from
/// `seed` and scores the mean against the exact target.
pub fn compare_estimator(
    model: &TabularModel,
    given: &[Option<usize>],
    samples: usize,
    n_seeds: usize,
    estimator: Estimator,
    seed: u64,
) -> Result<Report> {
    if samples == 0 || n_seeds < 2 {
        return Err(Error::Contract(
            "compare_estimator needs S >= 1 and at least 2 seeds".into(),
        ));
    }
    let exact = estimator.exact(&exact_quantities(model, given, estimator.alpha())?);
    let mut values = Vec::with_capacity(n_seeds);
    for k in 0..n_seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        values.push(estimate(model, given, samples, estimator, &mut rng)?);
    }
    let (mean, stderr) = mean_stderr(&values);
    let diff = mean - exact;
    let z = if diff.abs() <= 1e-12 * exact.abs().max(1.0) {
        0.0
    } else if stderr > 0.0 {
        diff / stderr
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(Report {
        samples,
        seeds: n_seeds,
        mean,
        stderr,
        exact,
        z,
    })
}

/// Absolute bias of the self-normalized term at each sample size.
pub fn s_sweep(
    model: &TabularModel,
    given: &[Option<usize>],
    sizes: &[usize],
    n_seeds: usize,
    seed: u64,
) -> Result<Vec<(Report, f64)>> {
    sizes
        .iter()
        .map(|&s| {
            let r = compare_estimator(model, given, s, n_seeds, Estimator::SelfNormalizedTerm, seed)?;
            Ok((r, (r.mean - r.exact).abs()))
        })
        .collect()
}

fn random_table<R: Rng + ?Sized>(rng: &mut R, rows: usize, domain: usize, spread: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * domain);
    for _ in 0..rows {
        let logits: Vec<f64> = (0..domain)
            .map(|_| spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lse = log_sum_exp(&logits);
        let row: Vec<f64> = logits.iter().map(|l| math::exp(l - lse)).collect();
        // Renormalize so the row sum is 1 to rounding.
        let s: f64 = row.iter().sum();
        out.extend(row.iter().map(|p| p / s));
    }
    out
}

/// Variable declaration for [`random_model`]: name, domain, supervision,
/// generative parents and recognition parents.
pub type Layout<'a> = (&'a str, usize, Supervision, &'a [usize], &'a [usize]);

/// A tabular model with the given structure and tables drawn from `seed`.
/// Rows are softmax of normal logits scaled by `spread`.
pub fn random_model(layout: &[Layout<'_>], spread: f64, seed: u64) -> Result<TabularModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars = layout
        .iter()
        .map(|&(name, domain, supervision, gp, rp)| {
            let rows = |ps: &[usize]| ps.iter().map(|&p| layout[p].1).product::<usize>();
            let generative_table = random_table(&mut rng, rows(gp), domain, spread);
            let recognition_table = if supervision == Supervision::Observed {
                Vec::new()
            } else {
                random_table(&mut rng, rows(rp), domain, spread)
            };
            TabularVar {
                name: name.into(),
                domain,
                supervision,
                generative_parents: gp.to_vec(),
                generative_table,
                recognition_parents: if supervision == Supervision::Observed {
                    Vec::new()
                } else {
                    rp.to_vec()
                },
                recognition_table,
            }
        })
        .collect();
    TabularModel::new(vars)
}

/// Chain factorization `q(z2 | y1, z1, x) q(y1 | z1, x) q(z1 | x)` with
/// generative model `p(z1) p(y1) p(z2 | z1) p(x | y1, z2)`.
/// Variables are indexed `x = 0, z1 = 1, y1 = 2, z2 = 3`.
pub fn chain_model(seed: u64) -> Result<TabularModel> {
    use Supervision::*;
    random_model(
        &[
            ("x", 5, Observed, &[2, 3], &[]),
            ("z1", 4, Latent, &[], &[0]),
            ("y1", 3, Partial, &[], &[1, 0]),
            ("z2", 4, Latent, &[1], &[2, 1, 0]),
        ],
        1.5,
        seed,
    )
}

/// Factorization `q(y | x) q(z | x, y)` with `p(y) p(z) p(x | y, z)`.
/// Variables are indexed `x = 0, y = 1, z = 2`.
pub fn kingma_model(seed: u64) -> Result<TabularModel> {
    use Supervision::*;
    random_model(
        &[
            ("x", 6, Observed, &[1, 2], &[]),
            ("y", 3, Partial, &[], &[0]),
            ("z", 4, Latent, &[], &[0, 1]),
        ],
        1.5,
        seed,
    )
}
