//! Log-domain helpers.

/// `ln(sum(exp(v)))`, shifted by the maximum so no term overflows.
///
/// Returns `-inf` for an empty input or when every value is `-inf`.
pub fn logsumexp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + iter.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_evaluation() {
        let v = [-1.0, -2.0, -3.0];
        let direct = v.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((logsumexp(v) - direct).abs() < 1e-15);
    }

    #[test]
    fn handles_extremes() {
        assert_eq!(logsumexp(std::iter::empty::<f64>()), f64::NEG_INFINITY);
        assert_eq!(logsumexp([f64::NEG_INFINITY; 2]), f64::NEG_INFINITY);
        assert!((logsumexp([-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((logsumexp([1000.0]) - 1000.0).abs() < 1e-12);
    }
}
