//! Distribution families: log-densities on the tape and reparameterized
//! samplers driven by externally supplied noise.
//!
//! Every log-density returns one value per batch row, shape `[rows, 1]`.
//! Rank-1 inputs are treated as a single row.

use alloc::format;
use alloc::vec::Vec;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{dim_err, Error, Result};
use crate::math;
use crate::tensor::{Tensor, Var};

/// Concrete temperature used unless a config overrides it.
pub const DEFAULT_TEMPERATURE: f64 = 0.66;

/// Parameters of one distribution, as produced by a parameter function.
#[derive(Clone, Copy, Debug)]
pub enum DistParams<'t> {
    Normal { mean: Var<'t>, log_std: Var<'t> },
    Categorical { logits: Var<'t> },
    Bernoulli { logits: Var<'t> },
    Concrete { logits: Var<'t>, temperature: f64 },
}

impl<'t> DistParams<'t> {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DistParams::Normal { mean, log_std } => {
                if mean.shape() != log_std.shape() {
                    return Err(dim_err("DistParams::Normal", &mean.shape(), &log_std.shape()));
                }
            }
            DistParams::Concrete { logits, temperature } => {
                check_temperature(temperature)?;
                check_finite(&logits, "concrete logits")?;
            }
            DistParams::Categorical { logits } => check_finite(&logits, "categorical logits")?,
            DistParams::Bernoulli { .. } => {}
        }
        Ok(())
    }

    /// Log-density of `value`. Concrete parameters score `value` as a soft
    /// one-hot vector against the categorical log-masses.
    pub fn log_prob(&self, value: Var<'t>) -> Result<Var<'t>> {
        match *self {
            DistParams::Normal { mean, log_std } => normal_log_prob(value, mean, log_std),
            DistParams::Categorical { logits } => categorical_log_prob(value, logits),
            DistParams::Bernoulli { logits } => bernoulli_log_prob(value, logits),
            DistParams::Concrete { logits, .. } => relaxed_categorical_log_prob(value, logits),
        }
    }

    /// Repeats every parameter row `times` times.
    pub fn repeat_rows(&self, times: usize) -> Result<Self> {
        Ok(match *self {
            DistParams::Normal { mean, log_std } => DistParams::Normal {
                mean: mean.repeat_rows(times)?,
                log_std: log_std.repeat_rows(times)?,
            },
            DistParams::Categorical { logits } => DistParams::Categorical {
                logits: logits.repeat_rows(times)?,
            },
            DistParams::Bernoulli { logits } => DistParams::Bernoulli {
                logits: logits.repeat_rows(times)?,
            },
            DistParams::Concrete { logits, temperature } => DistParams::Concrete {
                logits: logits.repeat_rows(times)?,
                temperature,
            },
        })
    }

    pub fn rows(&self) -> usize {
        match self {
            DistParams::Normal { mean, .. } => mean.value().rows(),
            DistParams::Categorical { logits }
            | DistParams::Bernoulli { logits }
            | DistParams::Concrete { logits, .. } => logits.value().rows(),
        }
    }

    /// Mean for normal and bernoulli, class probabilities for discrete families.
    pub fn mean(&self) -> Result<Var<'t>> {
        match *self {
            DistParams::Normal { mean, .. } => Ok(mean),
            DistParams::Bernoulli { logits } => Ok(logits.sigmoid()),
            DistParams::Categorical { logits } | DistParams::Concrete { logits, .. } => {
                Ok(logits.log_softmax_rows()?.exp())
            }
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("temperature must be positive, got {t}")))
    }
}

fn check_finite(v: &Var<'_>, what: &str) -> Result<()> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{what} must be finite")))
    }
}

fn as_rows<'t>(v: Var<'t>) -> Result<Var<'t>> {
    let shape = v.shape();
    match shape.len() {
        2 => Ok(v),
        0 => v.reshape(&[1, 1]),
        1 => v.reshape(&[1, shape[0]]),
        _ => Err(dim_err("distribution argument", &shape, &[])),
    }
}

fn same_shape(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(dim_err(op, &sa, &sb));
    }
    Ok(())
}

/// `Σ_d −½ln(2π) − log_std_d − ½((x_d − mean_d)/σ_d)²` per row.
pub fn normal_log_prob<'t>(x: Var<'t>, mean: Var<'t>, log_std: Var<'t>) -> Result<Var<'t>> {
    same_shape("normal_log_prob", &x, &mean)?;
    same_shape("normal_log_prob", &mean, &log_std)?;
    let (x, mean, log_std) = (as_rows(x)?, as_rows(mean)?, as_rows(log_std)?);
    let z = x.sub(&mean)?.mul(&log_std.neg().exp())?;
    z.square()
        .scale(-0.5)
        .sub(&log_std)?
        .add_scalar(-0.5 * math::LN_2PI)
        .sum_axis(1)
}

/// `mean + exp(log_std) ⊙ noise`; the noise carries no gradient.
pub fn normal_rsample<'t>(mean: Var<'t>, log_std: Var<'t>, noise: &Tensor) -> Result<Var<'t>> {
    same_shape("normal_rsample", &mean, &log_std)?;
    let mean_shape = mean.shape();
    if noise.shape() != mean_shape.as_slice() {
        return Err(dim_err("normal_rsample", &mean_shape, noise.shape()));
    }
    let eps = mean.tape().constant(noise.clone());
    mean.add(&log_std.exp().mul(&eps)?)
}

/// `log_softmax(logits)[class]` for exact one-hot rows of `y`.
pub fn categorical_log_prob<'t>(y: Var<'t>, logits: Var<'t>) -> Result<Var<'t>> {
    same_shape("categorical_log_prob", &y, &logits)?;
    {
        let v = y.value();
        for r in 0..v.rows() {
            let row = if v.shape().len() < 2 { v.data() } else { v.row_slice(r) };
            let ones = row.iter().filter(|&&e| e == 1.0).count();
            let zeros = row.iter().filter(|&&e| e == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::Contract(format!("row {r} of y is not one-hot")));
            }
        }
    }
    relaxed_categorical_log_prob(y, logits)
}

/// Inner product of a (possibly soft) one-hot `y` with `log_softmax(logits)`.
pub fn relaxed_categorical_log_prob<'t>(y: Var<'t>, logits: Var<'t>) -> Result<Var<'t>> {
    same_shape("categorical_log_prob", &y, &logits)?;
    let (y, logits) = (as_rows(y)?, as_rows(logits)?);
    y.mul(&logits.log_softmax_rows()?)?.sum_axis(1)
}

/// `softmax((logits + gumbel_noise) / temperature)` row-wise.
pub fn concrete_rsample<'t>(logits: Var<'t>, temperature: f64, gumbel_noise: &Tensor) -> Result<Var<'t>> {
    let shape = logits.shape();
    concrete_log_rsample(logits, temperature, gumbel_noise)?
        .exp()
        .reshape(&shape)
}

/// Log of a concrete sample, `log_softmax((logits + gumbel_noise) / temperature)`,
/// as `[rows, K]`.
pub fn concrete_log_rsample<'t>(logits: Var<'t>, temperature: f64, gumbel_noise: &Tensor) -> Result<Var<'t>> {
    check_temperature(temperature)?;
    let shape = logits.shape();
    if gumbel_noise.shape() != shape.as_slice() {
        return Err(dim_err("concrete_rsample", &shape, gumbel_noise.shape()));
    }
    let logits = as_rows(logits)?;
    let g = logits.tape().constant(gumbel_noise.clone().reshape(logits.shape())?);
    logits.add(&g)?.scale(1.0 / temperature).log_softmax_rows()
}

/// Concrete log-density at the simplex point `exp(log_y)`, per row:
/// `ln (K−1)! + (K−1) ln τ + Σ_k (ln π_k − (τ+1) ln y_k) − K lse_k(ln π_k − τ ln y_k)`.
pub fn concrete_log_prob<'t>(log_y: Var<'t>, logits: Var<'t>, temperature: f64) -> Result<Var<'t>> {
    check_temperature(temperature)?;
    same_shape("concrete_log_prob", &log_y, &logits)?;
    let (log_y, logits) = (as_rows(log_y)?, as_rows(logits)?);
    let k = logits.value().cols();
    let log_pi = logits.log_softmax_rows()?;
    let body = log_pi.sub(&log_y.scale(temperature + 1.0))?.sum_axis(1)?;
    let lse = log_pi.sub(&log_y.scale(temperature))?.log_sum_exp(1)?;
    let log_norm = (1..k).map(|j| math::ln(j as f64)).sum::<f64>() + (k as f64 - 1.0) * math::ln(temperature);
    Ok(body.sub(&lse.scale(k as f64))?.add_scalar(log_norm))
}

/// `Σ_d x_d·log σ(l_d) + (1 − x_d)·log(1 − σ(l_d))` in the form `x·l − softplus(l)`.
pub fn bernoulli_log_prob<'t>(x: Var<'t>, logits: Var<'t>) -> Result<Var<'t>> {
    same_shape("bernoulli_log_prob", &x, &logits)?;
    if let Some(bad) = x.value().data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("bernoulli value {bad} outside [0, 1]")));
    }
    let (x, logits) = (as_rows(x)?, as_rows(logits)?);
    logits.bernoulli_log_lik(&x)
}

/// Analytic `KL(N(mean, exp(log_std)²) ‖ N(0, I))` per row.
pub fn kl_normal_std<'t>(mean: Var<'t>, log_std: Var<'t>) -> Result<Var<'t>> {
    same_shape("kl_normal_std", &mean, &log_std)?;
    let (mean, log_std) = (as_rows(mean)?, as_rows(log_std)?);
    mean.square()
        .add(&log_std.scale(2.0).exp())?
        .add_scalar(-1.0)
        .scale(0.5)
        .sub(&log_std)?
        .sum_axis(1)
}

/// Standard-normal noise.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Gumbel noise `−ln(−ln u)`, `u ~ Uniform(0, 1)` open at both ends.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -math::ln(-math::ln(u))
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Index drawn from unnormalized log-weights.
pub fn sample_index<R: Rng + ?Sized>(rng: &mut R, log_weights: &[f64]) -> usize {
    let lse = math::log_sum_exp(log_weights);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &l) in log_weights.iter().enumerate() {
        acc += math::exp(l - lse);
        if u < acc {
            return i;
        }
    }
    log_weights.len() - 1
}

/// Exact one-hot categorical draws, one per row of `logits`.
pub fn sample_one_hot<R: Rng + ?Sized>(rng: &mut R, logits: &Tensor) -> Tensor {
    let k = logits.cols();
    let labels: Vec<usize> = (0..logits.rows())
        .map(|r| sample_index(rng, logits.row_slice(r)))
        .collect();
    Tensor::one_hot(&labels, k).expect("indices are in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use alloc::vec;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn row<'t>(tape: &'t Tape, v: &[f64]) -> Var<'t> {
        tape.constant(Tensor::row(v.to_vec()))
    }

    #[test]
    fn normal_log_prob_values() {
        let tape = Tape::new();
        let lp = |x: f64, m: f64, s: f64| {
            normal_log_prob(row(&tape, &[x]), row(&tape, &[m]), row(&tape, &[s]))
                .unwrap()
                .item()
                .unwrap()
        };
        assert!(close(lp(0.0, 0.0, 0.0), -0.918_938_533_204_672_7, 1e-12));
        assert!(close(lp(1.0, 0.0, 0.0), -1.418_938_533_204_672_7, 1e-12));
        for l in [-2.0, -0.3, 0.0, 1.7] {
            assert!(close(lp(0.4, 0.4, l), -0.5 * math::LN_2PI - l, 1e-12));
        }
    }

    #[test]
    fn normal_rsample_is_affine_in_noise() {
        let tape = Tape::new();
        let m = tape.var(Tensor::row(vec![0.5, -1.0]));
        let s = tape.var(Tensor::row(vec![0.0, 0.3]));
        let z0 = normal_rsample(m, s, &Tensor::zeros([1, 2])).unwrap();
        assert_eq!(z0.value().data(), m.value().data());
        let eps = Tensor::row(vec![0.7, -0.2]);
        let zero = tape.constant(Tensor::zeros([1, 2]));
        let z = normal_rsample(zero, zero, &eps).unwrap();
        assert_eq!(z.value().data(), eps.data());

        let z = normal_rsample(m, s, &eps).unwrap();
        tape.backward(z.sum()).unwrap();
        assert_eq!(tape.grad(m).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn normal_shape_errors() {
        let tape = Tape::new();
        let a = row(&tape, &[0.0, 1.0]);
        let b = row(&tape, &[0.0]);
        assert!(matches!(normal_log_prob(a, b, b), Err(Error::Dimension { .. })));
        assert!(normal_rsample(a, a, &Tensor::zeros([1, 3])).is_err());
    }

    #[test]
    fn categorical_values() {
        let tape = Tape::new();
        let logits = row(&tape, &[0.0; 4]);
        for c in 0..4 {
            let y = tape.constant(Tensor::one_hot(&[c], 4).unwrap());
            let lp = categorical_log_prob(y, logits).unwrap().item().unwrap();
            assert!(close(lp, -1.386_294_361_119_890_6, 1e-12));
        }
        let logits = row(&tape, &[0.7f64.ln(), 0.3f64.ln()]);
        let y = tape.constant(Tensor::one_hot(&[0], 2).unwrap());
        let lp = categorical_log_prob(y, logits).unwrap().item().unwrap();
        assert!(close(lp, -0.356_674_943_938_732_4, 1e-12));
        let shifted = logits.add_scalar(13.0);
        let lp2 = categorical_log_prob(y, shifted).unwrap().item().unwrap();
        assert!(close(lp, lp2, 1e-12));
    }

    #[test]
    fn categorical_rejects_soft_labels() {
        let tape = Tape::new();
        let logits = row(&tape, &[0.0, 0.0]);
        let y = row(&tape, &[0.5, 0.5]);
        assert!(matches!(categorical_log_prob(y, logits), Err(Error::Contract(_))));
        assert!(relaxed_categorical_log_prob(y, logits).is_ok());
    }

    #[test]
    fn concrete_symmetry_and_argmax() {
        let tape = Tape::new();
        let logits = row(&tape, &[0.2; 5]);
        let y = concrete_rsample(logits, 0.66, &Tensor::full([1, 5], 0.1)).unwrap();
        for &v in y.value().data() {
            assert!(close(v, 0.2, 1e-15));
        }
        let logits = row(&tape, &[0.1, 1.5, -0.3]);
        let g = Tensor::row(vec![1.0, -0.9, 0.2]);
        for t in [0.05, 0.66, 5.0] {
            let y = concrete_rsample(logits, t, &g).unwrap().to_tensor();
            assert_eq!(y.argmax_rows(), vec![0]);
        }
        assert!(matches!(concrete_rsample(logits, 0.0, &g), Err(Error::Domain(_))));
    }

    #[test]
    fn bernoulli_values() {
        let tape = Tape::new();
        let lp = |x: f64, l: f64| {
            bernoulli_log_prob(row(&tape, &[x]), row(&tape, &[l]))
                .unwrap()
                .item()
                .unwrap()
        };
        assert!(close(lp(1.0, 0.0), -core::f64::consts::LN_2, 1e-15));
        assert!(close(lp(0.5, 0.0), -core::f64::consts::LN_2, 1e-15));
        let sat = lp(0.0, -1000.0);
        assert!(sat.is_finite() && sat.abs() < 1e-300);
        assert!(matches!(
            bernoulli_log_prob(row(&tape, &[1.2]), row(&tape, &[0.0])),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn kl_values() {
        let tape = Tape::new();
        let kl = |m: f64, s: f64| -> f64 {
            kl_normal_std(row(&tape, &[m]), row(&tape, &[s]))
                .unwrap()
                .item()
                .unwrap()
        };
        assert_eq!(kl(0.0, 0.0), 0.0);
        assert!(close(kl(1.0, 0.0), 0.5, 1e-15));
    }

    #[test]
    fn dist_params_validation() {
        let tape = Tape::new();
        let l = row(&tape, &[0.0, 1.0]);
        assert!(DistParams::Concrete {
            logits: l,
            temperature: -1.0
        }
        .validate()
        .is_err());
        let bad = row(&tape, &[f64::INFINITY, 0.0]);
        assert!(DistParams::Categorical { logits: bad }.validate().is_err());
        let m = row(&tape, &[0.0]);
        assert!(DistParams::Normal { mean: m, log_std: l }.validate().is_err());
    }
}
