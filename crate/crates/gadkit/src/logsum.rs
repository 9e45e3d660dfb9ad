//! Log-space accumulation helpers.

/// log(sum(exp(x))) over a slice, with `-inf` treated as zero mass.
///
/// Deterministic: two passes in index order, shift by the maximum. Returns
/// `-inf` for an empty slice or one that is all `-inf`.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &x in xs {
        if x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &x in xs {
        if x != f64::NEG_INFINITY {
            sum += (x - max).exp();
        }
    }
    max + sum.ln()
}

/// log(sum(exp(a[i] + b[i]))) without materializing the sum vector.
pub(crate) fn log_sum_exp2(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut max = f64::NEG_INFINITY;
    for i in 0..a.len() {
        let x = a[i] + b[i];
        if x > max {
            max = x;
        }
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for i in 0..a.len() {
        let x = a[i] + b[i];
        if x != f64::NEG_INFINITY {
            sum += (x - max).exp();
        }
    }
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_sum() {
        let xs = [(0.3f64).ln(), (0.2f64).ln(), (0.5f64).ln()];
        assert!((log_sum_exp(&xs) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn all_neg_inf_is_neg_inf() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn pairwise_matches_sum_vector() {
        let a = [(0.5f64).ln(), (0.25f64).ln(), f64::NEG_INFINITY];
        let b = [(0.1f64).ln(), (0.9f64).ln(), 0.0];
        let direct: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        assert_eq!(log_sum_exp2(&a, &b), log_sum_exp(&direct));
    }
}
