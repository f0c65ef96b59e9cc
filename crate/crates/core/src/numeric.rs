//! Small scalar helpers used by the filtering code.

/// `log(sum(exp(x)))` with max subtraction. Returns `-inf` for an empty or
/// all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log-weights into probabilities in place of `out`.
///
/// Every intermediate exponential is `<= 1`. Entries equal to `-inf` map to 0.
pub fn softmax_into(log_weights: &[f64], out: &mut [f64]) -> f64 {
    debug_assert_eq!(log_weights.len(), out.len());
    let lse = log_sum_exp(log_weights);
    for (o, &l) in out.iter_mut().zip(log_weights) {
        *o = if l == f64::NEG_INFINITY { 0.0 } else { (l - lse).exp() };
    }
    lse
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_matches_naive_in_safe_range() {
        let xs = [0.1, -2.0, 3.5];
        let naive: f64 = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-14);
    }

    #[test]
    fn lse_survives_huge_arguments() {
        let xs = [1000.0, 1000.0];
        assert!((log_sum_exp(&xs) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let mut p = [0.0; 2];
        softmax_into(&xs, &mut p);
        assert!(p.iter().all(|&q| (q - 0.5).abs() < 1e-13));
    }

    #[test]
    fn neg_infinity_entries_get_zero_weight() {
        let mut p = [0.0; 3];
        softmax_into(&[f64::NEG_INFINITY, 0.0, 0.0], &mut p);
        assert_eq!(p[0], 0.0);
        assert!((p[1] - 0.5).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
