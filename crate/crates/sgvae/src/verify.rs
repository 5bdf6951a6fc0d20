//! Estimator verification against exact enumeration on tabular models.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgvae_core::oracle::{
    chain_model, compare_estimator, exact_quantities, kingma_model, s_sweep, Estimator, Report, TabularModel,
    TabularVar,
};

use crate::error::{Error, Result};

/// z-scores beyond this fail.
pub const Z_LIMIT: f64 = 3.0;
/// Tolerance for exact identities.
pub const IDENTITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub samples: usize,
    pub seeds: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Sample sizes for the bias sweep of the self-normalized term.
    pub s_sweep: Option<Vec<usize>>,
    pub sweep_seeds: usize,
    /// Extra tabular model to check, in addition to the built-in ones.
    pub tables: Option<PathBuf>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            samples: 50_000,
            seeds: 20,
            alpha: 0.5,
            seed: 0,
            s_sweep: None,
            sweep_seeds: 50,
            tables: None,
        }
    }
}

/// A tabular model file: variables plus the assignment to condition on.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TablesFile {
    pub variables: Vec<TabularVar>,
    pub given: Vec<Option<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub model: String,
    pub variant: String,
    #[serde(rename = "S")]
    pub samples: usize,
    pub seeds: usize,
    pub mean: f64,
    pub stderr: f64,
    pub exact: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    fn check(&mut self, name: String, passed: bool, detail: String) {
        self.checks.push(Check { name, passed, detail });
    }

    fn row(&mut self, model: &str, variant: &str, r: &Report) {
        self.rows.push(Row {
            model: model.into(),
            variant: variant.into(),
            samples: r.samples,
            seeds: r.seeds,
            mean: r.mean,
            stderr: r.stderr,
            exact: r.exact,
            z: r.z,
        });
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:<12} {:>8} {:>6} {:>14} {:>12} {:>14} {:>8}",
            "model", "variant", "S", "seeds", "mean", "stderr", "exact", "z"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:<12} {:>8} {:>6} {:>14.8} {:>12.3e} {:>14.8} {:>8.3}",
                r.model, r.variant, r.samples, r.seeds, r.mean, r.stderr, r.exact, r.z
            );
        }
        let _ = writeln!(s);
        for c in &self.checks {
            let _ = writeln!(s, "[{}] {}: {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(Error::io(path))
    }
}

fn estimators(alpha: f64) -> [Estimator; 5] {
    [
        Estimator::Elbo,
        Estimator::SelfNormalizedTerm,
        Estimator::LogMarginalBound,
        Estimator::SelfNormalized { alpha },
        Estimator::ImportanceWeighted { alpha },
    ]
}

fn check_model(
    report: &mut VerifyReport,
    name: &str,
    model: &TabularModel,
    given: &[Option<usize>],
    opts: &VerifyOptions,
) -> Result<()> {
    let q = exact_quantities(model, given, opts.alpha)?;
    let gap = (q.log_q_y - q.log_q_y_marginal).abs();
    report.check(
        format!("{name}: log q(y|x) two ways"),
        gap <= IDENTITY_TOL,
        format!("difference {gap:.2e}"),
    );
    let split = (q.supervised_target - (q.conditional_expectation + (1.0 + opts.alpha) * q.log_q_y)).abs();
    report.check(
        format!("{name}: supervised target decomposition"),
        split <= IDENTITY_TOL,
        format!("difference {split:.2e}"),
    );
    report.check(
        format!("{name}: ELBO below log p(x)"),
        q.elbo <= q.log_p_x + IDENTITY_TOL,
        format!("{:.6} <= {:.6}", q.elbo, q.log_p_x),
    );

    for (k, est) in estimators(opts.alpha).into_iter().enumerate() {
        let r = compare_estimator(
            model,
            given,
            opts.samples,
            opts.seeds,
            est,
            opts.seed.wrapping_add(1000 * k as u64),
        )?;
        report.row(name, est.label(), &r);
        if est == Estimator::LogMarginalBound {
            let limit = r.exact + Z_LIMIT * r.stderr;
            report.check(
                format!("{name}: {} is a lower bound", est.label()),
                r.mean <= limit || r.z == 0.0,
                format!("mean {:.6} vs exact {:.6} (+{Z_LIMIT} stderr)", r.mean, r.exact),
            );
        } else {
            report.check(
                format!("{name}: {} agrees with enumeration", est.label()),
                r.z.abs() < Z_LIMIT,
                format!("z = {:.3}", r.z),
            );
        }
    }
    Ok(())
}

/// Runs the suite. Invalid user tables are reported as failed checks.
pub fn run(opts: &VerifyOptions) -> Result<VerifyReport> {
    if opts.samples == 0 || opts.seeds < 2 {
        return Err(Error::Usage("verification needs S >= 1 and at least 2 seeds".into()));
    }
    let mut report = VerifyReport::default();
    let chain = chain_model(opts.seed)?;
    let chain_given = [Some(2), None, Some(1), None];
    check_model(&mut report, "chain", &chain, &chain_given, opts)?;
    check_model(
        &mut report,
        "kingma",
        &kingma_model(opts.seed)?,
        &[Some(3), Some(0), None],
        opts,
    )?;

    if let Some(path) = &opts.tables {
        let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
        let parsed = serde_json::from_str::<TablesFile>(&text)
            .map_err(|e| e.to_string())
            .and_then(|f| {
                TabularModel::new(f.variables)
                    .map(|m| (m, f.given))
                    .map_err(|e| e.to_string())
            });
        match parsed {
            Ok((model, given)) => check_model(&mut report, "tables", &model, &given, opts)?,
            Err(e) => report.check(format!("tables {}", path.display()), false, e),
        }
    }

    if let Some(sizes) = &opts.s_sweep {
        let sweep = s_sweep(&chain, &chain_given, sizes, opts.sweep_seeds, opts.seed)?;
        for (r, _) in &sweep {
            report.row("chain", "snis_sweep", r);
        }
        let bias: Vec<f64> = sweep.iter().map(|(_, b)| *b).collect();
        report.check(
            "chain: self-normalized bias non-increasing in S".into(),
            bias.windows(2).all(|w| w[1] <= w[0]),
            bias.iter().map(|b| format!("{b:.3e}")).collect::<Vec<_>>().join(", "),
        );
    }
    Ok(report)
}
