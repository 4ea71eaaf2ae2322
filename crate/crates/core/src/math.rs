//! Small numeric helpers shared by the models.

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log Σ exp(v)`; `-∞` for an empty or all-`-∞` slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log weights in place into probabilities and returns the log
/// normalizer.
pub fn normalize_log_weights(weights: &mut [f64]) -> f64 {
    let lse = log_sum_exp(weights);
    if lse.is_finite() {
        for w in weights.iter_mut() {
            *w = (*w - lse).exp();
        }
    }
    lse
}

/// Index of the largest value; ties resolve to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
pub fn safe_ln(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Variance of all pixels of all images pooled together.
pub fn global_variance<'a, I>(images: I) -> f64
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let (mut count, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for img in images {
        for &v in img {
            count += 1;
            let d = v - mean;
            mean += d / count as f64;
            m2 += d * (v - mean);
        }
    }
    if count < 2 {
        0.0
    } else {
        m2 / count as f64
    }
}

/// Floor applied to every learned variance: `1e-6` of the data variance.
pub fn variance_floor(global_var: f64) -> f64 {
    (global_var * 1e-6).max(1e-12)
}

/// Log density of independent Gaussians with diagonal variances.
pub fn diag_gaussian_logpdf(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((&xi, &mi), &vi) in x.iter().zip(mean).zip(var) {
        let d = xi - mi;
        acc += vi.ln() + d * d / vi;
    }
    -0.5 * (acc + x.len() as f64 * LN_2PI)
}
