//! Small signal-processing helpers shared by preprocessing and evaluation.

/// Index into `[0, n)` under half-sample symmetric reflection
/// (`d c b a | a b c d | d c b a`).
fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

/// Normalized Gaussian kernel truncated at `±⌊4σ + ½⌋`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma + 0.5).floor() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Gaussian smoothing with reflected edges. `sigma ≤ 0` returns the input.
pub fn gaussian_smooth(x: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || x.is_empty() {
        return x.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let n = x.len();
    (0..n as isize)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * x[reflect_index(t + j as isize - radius, n)])
                .sum()
        })
        .collect()
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_pattern() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(idx, vec![2, 1, 0, 0, 1, 2, 3, 3, 2, 1]);
    }

    #[test]
    fn smoothing_preserves_constants_and_mass() {
        let c = vec![2.5; 20];
        for v in gaussian_smooth(&c, 1.5) {
            assert!((v - 2.5).abs() < 1e-12);
        }
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 17);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn smoothing_matches_reference_values() {
        // reference: scipy.ndimage.gaussian_filter1d([0,0,1,0,0,0], 1.0)
        let y = gaussian_smooth(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 1.0);
        let want = [0.05842299, 0.24210528, 0.39894347, 0.24197145, 0.05399113, 0.00456569];
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }
}
