use std::f64::consts::LN_2;

use dsr_core::attractor::{
    attractor_distance, classify, find_attractors, forced_lyapunov, max_lyapunov, tau_opt,
    tau_opt_curve, AttractorClass, AttractorOptions, AttractorReport, EulerFlow, FnMap, Map,
    Skeleton,
};
use dsr_core::dynsys::systems::DoubleWell;
use dsr_core::models::{Model, ModelConfig, Simulator, Surrogate, Variant};
use dsr_core::rng;
use proptest::prelude::*;

fn logistic(r: f64) -> FnMap<impl Fn(&[f64], &mut [f64])> {
    FnMap { dim: 1, f: move |z: &[f64], o: &mut [f64]| o[0] = r * z[0] * (1.0 - z[0]) }
}

fn halving(dim: usize) -> FnMap<impl Fn(&[f64], &mut [f64])> {
    FnMap {
        dim,
        f: |z: &[f64], o: &mut [f64]| {
            for (a, b) in o.iter_mut().zip(z) {
                *a = 0.5 * b;
            }
        },
    }
}

fn quick() -> AttractorOptions {
    AttractorOptions { init_points: 20, length: 4000, compare_points: 500, ..Default::default() }
}

#[test]
fn lyapunov_of_analytic_maps() {
    let mut r = rng::stream(1, "t");
    let l = max_lyapunov(&logistic(4.0), &[0.123], 1000, 0, 1e-8, &mut r).unwrap();
    assert!((l - LN_2).abs() < 0.02, "logistic {l}");
    let h = max_lyapunov(&halving(3), &[0.4, -1.0, 2.0], 1000, 0, 1e-8, &mut r).unwrap();
    assert!((h - 0.5f64.ln()).abs() < 1e-6);

    let diag = FnMap {
        dim: 3,
        f: |z: &[f64], o: &mut [f64]| {
            o[0] = 0.5 * z[0];
            o[1] = 0.9 * z[1];
            o[2] = 1.2 * z[2];
        },
    };
    // a short burn-in aligns the perturbation with the dominant direction
    let d = max_lyapunov(&diag, &[0.0, 0.0, 0.0], 1000, 100, 1e-8, &mut r).unwrap();
    assert!((d - 1.2f64.ln()).abs() < 1e-3);

    let blowup = FnMap { dim: 1, f: |z: &[f64], o: &mut [f64]| o[0] = z[0] * z[0] * 1e10 };
    assert!(max_lyapunov(&blowup, &[10.0], 100, 0, 1e-8, &mut r).is_err());
    assert!(max_lyapunov(&halving(1), &[1.0], 0, 0, 1e-8, &mut r).is_err());
}

#[test]
fn classification_rules() {
    assert_eq!(classify(0.5, 0.1, 1e-5), AttractorClass::Chaotic);
    assert_eq!(classify(1e-6, -1.0, 1e-5), AttractorClass::FixedPoint);
    assert_eq!(classify(0.3, -0.2, 1e-5), AttractorClass::LimitCycle);
    assert_eq!(classify(0.3, 0.0, 1e-5), AttractorClass::LimitCycle);
}

proptest! {
    #[test]
    fn classify_is_total(spread in 0.0f64..10.0, lambda in -5.0f64..5.0) {
        let c = classify(spread, lambda, 1e-5);
        let hits = [
            lambda > 0.0,
            lambda <= 0.0 && spread < 1e-5,
            lambda <= 0.0 && spread >= 1e-5,
        ];
        prop_assert_eq!(hits.iter().filter(|&&h| h).count(), 1);
        let want = [AttractorClass::Chaotic, AttractorClass::FixedPoint, AttractorClass::LimitCycle]
            [hits.iter().position(|&h| h).unwrap()];
        prop_assert_eq!(c, want);
    }

    #[test]
    fn merging_is_order_independent(seed in 0u64..1000) {
        // tanh(3x) has stable fixed points near ±0.995
        let map = FnMap { dim: 1, f: |z: &[f64], o: &mut [f64]| o[0] = (3.0 * z[0]).tanh() };
        let mut r = rng::stream(seed, "inits");
        let mut inits: Vec<Vec<f64>> = rng::normals(&mut r, 8).into_iter().map(|v| vec![v]).collect();
        let opts = AttractorOptions { warmup: 200, length: 50, ..quick() };
        let sign_sets = |inits: &[Vec<f64>]| {
            let found = find_attractors(&map, inits, &opts).unwrap();
            let mut sets: Vec<Vec<bool>> = found
                .iter()
                .map(|a| { let mut s: Vec<bool> = a.members.iter().map(|&i| inits[i][0] > 0.0).collect(); s.dedup(); s })
                .collect();
            sets.sort();
            (found.len(), sets)
        };
        let forward = sign_sets(&inits);
        inits.reverse();
        prop_assert_eq!(forward, sign_sets(&inits));
    }
}

#[test]
fn contracting_map_has_one_fixed_point() {
    let inits: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 - 4.5, 2.0]).collect();
    let found = find_attractors(&halving(2), &inits, &quick()).unwrap();
    assert_eq!(found.len(), 1);
    let a = &found[0];
    assert_eq!(a.class, AttractorClass::FixedPoint);
    assert_eq!(a.basin_fraction, 1.0);
    assert!(a.center().iter().all(|v| v.abs() < 1e-12));
    assert!((a.lambda_max - 0.5f64.ln()).abs() < 1e-6);

    let same = vec![vec![0.3, 0.3]; 5];
    assert_eq!(find_attractors(&halving(2), &same, &quick()).unwrap().len(), 1);
    assert!(find_attractors(&halving(2), &[], &quick()).is_err());
    assert!(find_attractors(&halving(2), &[vec![1.0]], &quick()).is_err());
}

#[test]
fn cycles_and_chaos_are_told_apart() {
    let inits: Vec<Vec<f64>> = (1..6).map(|i| vec![0.1 * i as f64 + 0.03]).collect();
    let cyc = find_attractors(&logistic(3.2), &inits, &quick()).unwrap();
    assert_eq!(cyc.len(), 1);
    assert_eq!(cyc[0].class, AttractorClass::LimitCycle);
    assert!(cyc[0].lambda_max < 0.0);

    let chaos = find_attractors(&logistic(4.0), &inits, &quick()).unwrap();
    assert_eq!(chaos.len(), 1);
    assert_eq!(chaos[0].class, AttractorClass::Chaotic);
    assert!((chaos[0].lambda_max - LN_2).abs() < 0.05);
}

#[test]
fn double_well_skeleton_has_two_fixed_points() {
    let sys = DoubleWell::default();
    let flow = EulerFlow { system: &sys, dt: 0.2, substeps: 10 };
    let mut r = rng::stream(3, "dw-inits");
    let inits: Vec<Vec<f64>> = (0..40).map(|_| rng::normals(&mut r, 5)).collect();
    let found = find_attractors(&flow, &inits, &AttractorOptions::default()).unwrap();
    assert_eq!(found.len(), 2);
    let total: f64 = found.iter().map(|a| a.basin_fraction).sum();
    assert!((total - 1.0).abs() < 1e-12);
    let mut wells: Vec<f64> = found.iter().map(|a| a.center()[0]).collect();
    wells.sort_by(f64::total_cmp);
    for a in &found {
        assert_eq!(a.class, AttractorClass::FixedPoint);
        assert!(a.lambda_max < 0.0);
        let c = a.center();
        // every channel sits in the same well
        assert!(c.iter().all(|v| (v - c[0]).abs() < 1e-9 && (v.abs() - 1.0).abs() < 1e-9));
    }
    assert!((wells[0] + 1.0).abs() < 1e-9 && (wells[1] - 1.0).abs() < 1e-9);

    let report = AttractorReport { options: AttractorOptions::default(), attractors: found };
    let csv = report.trajectories_csv();
    assert!(csv.starts_with("attractor,step,z0,z1,z2,z3,z4\n"));
    let back: AttractorReport = serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn distance_is_symmetric_quantile() {
    let a: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
    let b: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 + 0.25]).collect();
    assert!((attractor_distance(&a, &b, 0.8) - 0.25).abs() < 1e-12);
    assert_eq!(attractor_distance(&a, &b, 0.8), attractor_distance(&b, &a, 0.8));
    assert_eq!(attractor_distance(&a, &a, 0.8), 0.0);
}

#[test]
fn forced_exponent_of_analytic_maps() {
    let mut r = rng::stream(5, "forced");
    let teacher: Vec<Vec<f64>> = (0..200).map(|t| vec![0.5f64.powi(t), 0.0]).collect();
    let l = forced_lyapunov(&halving(2), &teacher, 2, 7, 1e-8, &mut r).unwrap();
    assert!((l - 0.5f64.ln()).abs() < 1e-6);

    let map = logistic(4.0);
    let mut z = vec![0.2345];
    let mut teacher = vec![z.clone()];
    for _ in 0..4000 {
        let mut n = vec![0.0];
        map.apply(&z, &mut n);
        teacher.push(n.clone());
        z = n;
    }
    let l = forced_lyapunov(&map, &teacher, 1, 5, 1e-8, &mut r).unwrap();
    assert!((l - LN_2).abs() < 0.05, "{l}");
    assert!(forced_lyapunov(&map, &teacher, 1, 0, 1e-8, &mut r).is_err());
}

#[test]
fn tau_opt_values_and_crossings() {
    assert!((tau_opt(LN_2) - 1.0).abs() < 1e-12);
    assert!((tau_opt(0.0347) - LN_2 / 0.0347).abs() < 1e-12);
    assert!((tau_opt(0.0347) - 20.0).abs() < 0.05);
    assert_eq!(tau_opt(0.0), 200.0);
    assert_eq!(tau_opt(-0.3), 200.0);
    assert_eq!(tau_opt(1e-6), 200.0);

    let curve = tau_opt_curve(&[(100.0, LN_2 / 20.0), (10.0, LN_2 / 50.0)]).unwrap();
    assert_eq!(curve.tau, vec![10.0, 100.0]);
    assert_eq!(curve.crossings.len(), 1);
    let c = curve.crossings[0];
    // the line 50 − (x − 10)/3 meets the diagonal at x = 40
    assert!((c.tau - 40.0).abs() < 1e-9);
    assert!((c.slope + 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(curve.fixed_points.len(), 1);

    let steep = tau_opt_curve(&[(1.0, LN_2 / 0.5), (2.0, LN_2 / 5.0)]).unwrap();
    assert_eq!(steep.crossings.len(), 1);
    assert!(!steep.crossings[0].attracting);

    let unit = tau_opt_curve(&[(10.0, LN_2 / 10.0), (20.0, LN_2 / 20.0)]).unwrap();
    assert_eq!(unit.crossings.len(), 2);
    assert!(unit.crossings.iter().all(|c| !c.attracting));

    assert!(tau_opt_curve(&[(1.0, 0.1)]).is_err());
    assert!(tau_opt_curve(&[(1.0, 0.1), (1.0, 0.2)]).is_err());
    assert_eq!(curve.csv().lines().count(), 3);
}

#[test]
fn skeleton_is_the_noise_free_step() {
    let mut c = ModelConfig::new(Variant::Dpdsr, 1, 3);
    c.hidden = 8;
    let m = Model::new(c, 2).unwrap();
    let sim = Simulator::new(&m).unwrap();
    let sk = Skeleton::new(&sim);
    let z = [0.1, -0.4, 0.7];
    let (mut a, mut b) = (vec![0.0; 3], vec![0.0; 3]);
    sk.apply(&z, &mut a);
    sim.step(&z, &vec![0.0; sim.noise_dim()], &mut b);
    assert_eq!(a, b);
    assert_eq!(sk.dim(), 3);
}
