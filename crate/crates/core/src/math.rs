//! Scalar helpers shared by the tensor kernels and the samplers.

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

// With `std`, the platform libm is used; it is several times faster than
// the portable implementation.
#[cfg(feature = "std")]
mod imp {
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    pub fn ln_1p(x: f64) -> f64 {
        x.ln_1p()
    }
    pub fn tanh(x: f64) -> f64 {
        x.tanh()
    }
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    pub fn round(x: f64) -> f64 {
        x.round()
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    pub use libm::{exp, log as ln, log1p as ln_1p, round, sqrt, tanh};
}

#[inline]
pub fn exp(x: f64) -> f64 {
    imp::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    imp::ln(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    imp::ln_1p(x)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    imp::tanh(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    imp::sqrt(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    imp::round(x)
}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + ln_1p(exp(-x))
    } else {
        ln_1p(exp(x))
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// Stable `ln Σ exp(v)`. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + ln(values.iter().map(|v| exp(v - max)).sum::<f64>())
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, sqrt(var / n))
}
