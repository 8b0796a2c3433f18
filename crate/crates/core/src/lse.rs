//! Stabilized log-sum-exp and softmax.
//!
//! Every exponential sum in the crate goes through here; the max term is
//! subtracted before exponentiating so arguments up to ~700 in magnitude
//! never overflow an intermediate.

/// `log(sum(exp(xs)))`. Empty input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Softmax weights together with the log-sum-exp value.
pub fn softmax(xs: &[f64]) -> (Vec<f64>, f64) {
    let lse = log_sum_exp(xs);
    if !lse.is_finite() {
        // all -inf or a +inf entry; put the mass on the argmax
        let mut p = vec![0.0; xs.len()];
        if let Some((i, _)) = xs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        {
            p[i] = 1.0;
        }
        return (p, lse);
    }
    (xs.iter().map(|&x| (x - lse).exp()).collect(), lse)
}

/// Largest entry, `-inf` for empty input.
pub fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
