use std::collections::HashMap;

use dsr_core::dynsys::{generate_dataset, DatasetKind};
use dsr_core::embedding::{
    bin_count, delay_embed, lagged_mi, mi_delay, mutual_information, quantile_bins, EmbeddingSpec,
};
use dsr_core::rng;
use proptest::prelude::*;

/// Independent plug-in MI: entropies from hashed pair counts.
fn mi_oracle(x: &[f64], lag: usize, bins: usize) -> f64 {
    let mut sorted: Vec<(f64, usize)> = x.iter().copied().zip(0..).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut label = vec![0usize; x.len()];
    for (r, (_, i)) in sorted.iter().enumerate() {
        label[*i] = r * bins / x.len();
    }
    let pairs: Vec<(usize, usize)> = (0..x.len() - lag).map(|t| (label[t], label[t + lag])).collect();
    let n = pairs.len() as f64;
    let entropy = |counts: Vec<usize>| -> f64 {
        counts
            .into_iter()
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let mut ha = HashMap::new();
    let mut hb = HashMap::new();
    let mut hab = HashMap::new();
    for &(a, b) in &pairs {
        *ha.entry(a).or_insert(0) += 1;
        *hb.entry(b).or_insert(0) += 1;
        *hab.entry((a, b)).or_insert(0) += 1;
    }
    entropy(ha.into_values().collect())
        + entropy(hb.into_values().collect())
        - entropy(hab.into_values().collect())
}

#[test]
fn sine_delay_near_quarter_period() {
    // A noiseless integer-period sine visits only 40 phases, so binned MI is
    // flat; light observation noise restores a continuous distribution.
    for seed in 0..4 {
        let mut g = rng::stream(seed, "sine-noise");
        let x: Vec<f64> = (0..20_000)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 40.0).sin() + 0.1 * rng::normal(&mut g))
            .collect();
        let r = mi_delay(&x, 100).unwrap();
        assert!(!r.no_minimum);
        assert!((8..=12).contains(&r.lag), "seed {seed}: lag {}", r.lag);
        let bins = bin_count(x.len());
        for lag in [0, 1, 5, 10, 20, 37] {
            assert!((r.mi[lag] - mi_oracle(&x, lag, bins)).abs() < 1e-9);
        }
    }
}

#[test]
fn white_noise_delay_is_one() {
    for seed in 0..5 {
        let mut g = rng::stream(seed, "white");
        let x = rng::normals(&mut g, 5000);
        assert_eq!(mi_delay(&x, 100).unwrap().lag, 1);
    }
}

#[test]
fn ramp_has_no_minimum() {
    let x: Vec<f64> = (0..20_000).map(|t| t as f64).collect();
    let r = mi_delay(&x, 100).unwrap();
    assert!(r.no_minimum);
    assert_eq!(r.lag, 100);
}

#[test]
fn doublewell_eight_column_embedding() {
    let (train, _) = generate_dataset(DatasetKind::DoubleWell, 0, 0.05).unwrap();
    let x = train.channel(0);
    let lag = mi_delay(&x, 100).unwrap().lag;
    let e = delay_embed(&x, EmbeddingSpec::new(lag, 8).unwrap()).unwrap();
    assert_eq!(e.shape(), &[x.len() - 7 * lag, 8]);
}

proptest! {
    #[test]
    fn row_count_and_first_column(len in 1usize..60, delay in 1usize..6, dim in 1usize..6) {
        let x: Vec<f64> = (0..len).map(|i| i as f64 * 0.5).collect();
        match delay_embed(&x, EmbeddingSpec { delay, dimension: dim }) {
            Ok(e) => {
                let rows = len - (dim - 1) * delay;
                prop_assert_eq!(e.shape(), &[rows, dim][..]);
                for t in 0..rows {
                    prop_assert_eq!(e.data()[t * dim], x[t]);
                }
            }
            Err(_) => prop_assert!(len <= (dim - 1) * delay),
        }
    }

    #[test]
    fn mi_is_symmetric(seed in 0u64..1000, lag in 1usize..20) {
        let mut g = rng::stream(seed, "sym");
        let raw = rng::normals(&mut g, 600);
        let x: Vec<f64> = raw.windows(3).map(|w| w[0] + 0.8 * w[1] + 0.3 * w[2]).collect();
        let bins = bin_count(x.len());
        let b = quantile_bins(&x, bins);
        let n = b.len();
        let fwd = lagged_mi(&b, lag, bins);
        let bwd = mutual_information(&b[lag..], &b[..n - lag], bins);
        prop_assert!((fwd - bwd).abs() < 1e-12);
    }
}
