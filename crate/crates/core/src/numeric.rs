//! Small numeric helpers shared across modules.

/// Pairwise (cascade) summation; fixed association order for a given length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Element-wise pairwise tree reduction of equally sized rows.
pub fn pairwise_sum_rows(rows: &[Vec<f64>], width: usize) -> Vec<f64> {
    match rows.len() {
        0 => vec![0.0; width],
        1 => rows[0].clone(),
        n => {
            let mid = n / 2;
            let mut left = pairwise_sum_rows(&rows[..mid], width);
            let right = pairwise_sum_rows(&rows[mid..], width);
            for (l, r) in left.iter_mut().zip(&right) {
                *l += r;
            }
            left
        }
    }
}

/// `ln Σ exp(x_i)` with max-shift; `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// SplitMix64 finalizer over `root` and a stream index.
///
/// Child seeds for components, iterations and replicates are all derived as
/// `derive_seed(root, stream)`; distinct streams give unrelated seeds.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut z = root
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for n < 2).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
        let rows: Vec<Vec<f64>> = (0..37).map(|i| vec![i as f64, 1.0]).collect();
        assert_eq!(pairwise_sum_rows(&rows, 2), vec![666.0, 37.0]);
        assert_eq!(pairwise_sum_rows(&[], 3), vec![0.0; 3]);
    }

    #[test]
    fn lse() {
        assert!((log_sum_exp(&[0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn seeds_differ_by_stream() {
        let a = derive_seed(1, 0);
        let b = derive_seed(1, 1);
        let c = derive_seed(2, 0);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(1, 0));
    }

    #[test]
    fn mean_and_sd() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
