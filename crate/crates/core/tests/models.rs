use dsr_core::autodiff::{Tape, Tensor};
use dsr_core::models::encoder::encode_states;
use dsr_core::models::generator::{evolve_step, initial_state, observe, rollout_teacher_forced};
use dsr_core::models::{
    arlstm_rollout, dkf_elbo, encode_noise, list_checkpoints, load_checkpoint, save_checkpoint,
    ConvSpec, Model, ModelConfig, Simulator, Surrogate, Variant,
};
use dsr_core::rng;
use proptest::prelude::*;

fn small(variant: Variant, d_x: usize, d_z: usize) -> ModelConfig {
    let mut c = ModelConfig::new(variant, d_x, d_z);
    c.hidden = 8;
    c.obs_hidden = 5;
    c.lstm_state = 6;
    c.ic_hidden = 7;
    c.code_dim = 3;
    c.t_past = 10;
    c.encoder = ConvSpec {
        channels: 4,
        kernel: 3,
        dilations: vec![1, 2],
    };
    c
}

fn series(b: usize, t: usize, d: usize, seed: u64) -> Tensor {
    let mut r = rng::stream(seed, "test-series");
    Tensor::new(vec![b, t, d], rng::normals(&mut r, b * t * d)).unwrap()
}

fn set(model: &mut Model, name: &str, value: Tensor) {
    let id = model.params.expect_id(name).unwrap();
    *model.params.value_mut(id) = value;
}

fn zero(model: &mut Model, name: &str) {
    let shape = model.params.by_name(name).unwrap().shape().to_vec();
    set(model, name, Tensor::zeros(&shape));
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn residual_only_evolution_is_tanh() {
    let mut m = Model::new(small(Variant::Dpdsr, 1, 3), 0).unwrap();
    zero(&mut m, "gen.w2");
    zero(&mut m, "gen.b2");
    set(&mut m, "gen.noise", Tensor::vector(vec![0.0]));
    let tape = Tape::new();
    let b = m.bind(&tape);
    let z = Tensor::matrix(2, 3, vec![0.3, -2.0, 1.1, 5.0, 0.0, -0.4]).unwrap();
    let eps = tape.constant(Tensor::matrix(2, 1, vec![1.0, -3.0]).unwrap());
    let out = evolve_step(&b, &m.config, tape.constant(z.clone()), Some(eps)).unwrap();
    for (o, zi) in out.value().data().iter().zip(z.data()) {
        assert_eq!(*o, zi.tanh());
    }
}

#[test]
fn noise_enters_only_the_last_component() {
    let m = Model::new(small(Variant::Dpdsr, 1, 4), 1).unwrap();
    let tape = Tape::new();
    let b = m.bind(&tape);
    let z = tape.constant(series(1, 1, 4, 0).reshape(&[1, 4]).unwrap());
    let e0 = tape.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
    let e1 = tape.constant(Tensor::matrix(1, 1, vec![2.5]).unwrap());
    let a = evolve_step(&b, &m.config, z, Some(e0)).unwrap().value();
    let c = evolve_step(&b, &m.config, z, Some(e1)).unwrap().value();
    assert_eq!(a.data()[..3], c.data()[..3]);
    let pre = |v: f64| v.atanh();
    let shift = pre(c.data()[3]) - pre(a.data()[3]);
    assert!((shift - 2.5 * m.noise_scale()).abs() < 1e-9);
}

#[test]
fn evolve_rejects_dimension_mismatch() {
    let m = Model::new(small(Variant::Dpdsr, 1, 3), 0).unwrap();
    let tape = Tape::new();
    let b = m.bind(&tape);
    let z = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(evolve_step(&b, &m.config, z, None).is_err());
    let z = tape.constant(Tensor::zeros(&[2, 3]));
    let e = tape.constant(Tensor::zeros(&[2, 2]));
    assert!(evolve_step(&b, &m.config, z, Some(e)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evolution_stays_inside_open_cube(
        z in prop::collection::vec(-50.0f64..50.0, 3),
        e in -20.0f64..20.0,
        seed in 0u64..1000,
    ) {
        let m = Model::new(small(Variant::Dpdsr, 1, 3), seed).unwrap();
        let tape = Tape::new();
        let b = m.bind(&tape);
        let zv = tape.constant(Tensor::matrix(1, 3, z).unwrap());
        let ev = tape.constant(Tensor::matrix(1, 1, vec![e]).unwrap());
        let out = evolve_step(&b, &m.config, zv, Some(ev)).unwrap().value();
        // tanh saturates to exactly ±1 in f64 beyond |x| ≈ 19
        for &v in out.data() {
            prop_assert!(v.abs() <= 1.0);
        }
    }
}

#[test]
fn zero_observation_weights_give_bias() {
    let mut m = Model::new(small(Variant::Spdsr, 2, 3), 0).unwrap();
    zero(&mut m, "obs.w1");
    zero(&mut m, "obs.w2");
    set(&mut m, "obs.b2", Tensor::vector(vec![0.7, -1.5]));
    let tape = Tape::new();
    let b = m.bind(&tape);
    let out = observe(&b, tape.constant(series(3, 5, 3, 2))).unwrap().value();
    assert_eq!(out.shape(), &[3, 5, 2]);
    for row in out.data().chunks(2) {
        assert_eq!(row, &[0.7, -1.5]);
    }
}

#[test]
fn long_interval_rollout_is_free_run() {
    let m = Model::new(small(Variant::Dpdsr, 1, 4), 3).unwrap();
    let (t_len, n) = (15, 2);
    let tape = Tape::new();
    let b = m.bind(&tape);
    let zhat = tape.constant(series(n, t_len, 3, 4));
    let eps = tape.constant(series(n, t_len, 1, 5));
    for tau in [t_len, t_len + 7, 1000] {
        let roll = rollout_teacher_forced(&b, &m.config, zhat, Some(eps), tau).unwrap().value();
        let mut z = initial_state(&b, &m.config, zhat.select(1, 0).unwrap()).unwrap();
        let mut direct = vec![z.value()];
        for t in 0..t_len - 1 {
            z = evolve_step(&b, &m.config, z, Some(eps.select(1, t).unwrap())).unwrap();
            direct.push(z.value());
        }
        for t in 0..t_len {
            for i in 0..n {
                let got = &roll.data()[(i * t_len + t) * 4..(i * t_len + t + 1) * 4];
                assert_eq!(got, direct[t].row(i), "tau {tau}, t {t}");
            }
        }
    }
}

#[test]
fn unit_interval_full_forcing_is_one_step_from_teacher() {
    let mut cfg = small(Variant::Dpdsr, 1, 3);
    cfg.d_zhat = 3;
    let m = Model::new(cfg, 6).unwrap();
    let t_len = 10;
    let tape = Tape::new();
    let b = m.bind(&tape);
    let zhat = tape.constant(series(2, t_len, 3, 7));
    let eps = tape.constant(series(2, t_len, 1, 8));
    let roll = rollout_teacher_forced(&b, &m.config, zhat, Some(eps), 1).unwrap();
    assert_eq!(roll.select(1, 0).unwrap().value(), zhat.select(1, 0).unwrap().value());
    for t in 0..t_len - 1 {
        let want = evolve_step(&b, &m.config, zhat.select(1, t).unwrap(), Some(eps.select(1, t).unwrap()))
            .unwrap()
            .value();
        assert_eq!(roll.select(1, t + 1).unwrap().value(), want);
    }
}

#[test]
fn forcing_phase_starts_at_chunk_head() {
    let m = Model::new(small(Variant::Spdsr, 1, 3), 9).unwrap();
    let t_len = 9;
    let tape = Tape::new();
    let b = m.bind(&tape);
    let zhat = tape.constant(series(1, t_len, 2, 10));
    let roll = rollout_teacher_forced(&b, &m.config, zhat, None, 2).unwrap().value();
    let mut z = initial_state(&b, &m.config, zhat.select(1, 0).unwrap()).unwrap();
    for t in 0..t_len - 1 {
        let input = if t % 2 == 0 {
            let free = z.narrow(1, 2, 1).unwrap();
            dsr_core::autodiff::Var::concat(&[zhat.select(1, t).unwrap(), free], 1).unwrap()
        } else {
            z
        };
        z = evolve_step(&b, &m.config, input, None).unwrap();
        assert_eq!(z.value().data(), &roll.data()[(t + 1) * 3..(t + 2) * 3]);
    }
    assert!(rollout_teacher_forced(&b, &m.config, zhat, None, 0).is_err());
}

#[test]
fn causal_encoder_ignores_the_future() {
    let m = Model::new(small(Variant::Dpdsr, 1, 3), 11).unwrap();
    let t_len = 40;
    let x = series(2, t_len, 1, 12);
    let run = |x: Tensor| {
        let tape = Tape::new();
        let b = m.bind_causal(&tape);
        encode_states(&b, &m.config, tape.constant(x), true).unwrap().value()
    };
    let base = run(x.clone());
    assert_eq!(base.shape(), &[2, t_len, 2]);
    for cut in [0, 5, 17, 38] {
        let mut y = x.clone();
        let mut r = rng::stream(cut as u64, "perturb");
        for i in 0..2 {
            for t in cut + 1..t_len {
                y.data_mut()[i * t_len + t] = 10.0 * rng::normal(&mut r);
            }
        }
        let out = run(y);
        for i in 0..2 {
            for t in 0..=cut {
                let a = &base.data()[(i * t_len + t) * 2..(i * t_len + t + 1) * 2];
                let c = &out.data()[(i * t_len + t) * 2..(i * t_len + t + 1) * 2];
                assert!(max_abs_diff(a, c) <= 1e-12);
            }
        }
    }
}

#[test]
fn noncausal_encoder_sees_half_receptive_field_ahead() {
    let mut cfg = small(Variant::Spdsr, 1, 3);
    cfg.encoder = ConvSpec::default();
    let m = Model::new(cfg, 13).unwrap();
    let t_len = 800;
    let x = series(1, t_len, 1, 14);
    let run = |x: Tensor| {
        let tape = Tape::new();
        let b = m.bind(&tape);
        encode_states(&b, &m.config, tape.constant(x), false).unwrap().value()
    };
    let base = run(x.clone());
    let mut y = x.clone();
    y.data_mut()[381] += 1.0;
    assert_ne!(run(y).data()[..2], base.data()[..2]);
    let mut y = x;
    y.data_mut()[382] += 1.0;
    assert_eq!(run(y).data()[..2], base.data()[..2]);
}

fn zero_noise_head(m: &mut Model) {
    zero(m, "noise.head.w");
    zero(m, "noise.head.b");
}

#[test]
fn zero_head_posterior_is_standard_normal() {
    let mut m = Model::new(small(Variant::Dpdsr, 1, 3), 15).unwrap();
    zero_noise_head(&mut m);
    let tape = Tape::new();
    let b = m.bind(&tape);
    let x = tape.constant(series(2, 20, 1, 16));
    let zhat = encode_states(&b, &m.config, x, false).unwrap();
    let mut r = rng::stream(0, "noise");
    let post = encode_noise(&b, &m.config, x, zhat, 3, &mut r).unwrap();
    assert_eq!(post.eps.shape(), vec![6, 20, 1]);
    assert!(post.mu.value().data().iter().all(|&v| v == 0.0));
    assert!(post.var().value().data().iter().all(|&v| v == 1.0));
    assert_eq!(post.eps.value(), post.xi);
    // log q − log p vanishes sample by sample
    let logp: f64 = post
        .xi
        .data()
        .iter()
        .map(|x| -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln())
        .sum();
    assert!((post.total_logq().item().unwrap() - logp).abs() < 1e-9);
}

#[test]
fn posterior_variance_respects_clamp() {
    let mut m = Model::new(small(Variant::Dpdsr, 1, 3), 17).unwrap();
    zero(&mut m, "noise.head.w");
    set(&mut m, "noise.head.b", Tensor::vector(vec![0.0, 40.0]));
    let tape = Tape::new();
    let b = m.bind(&tape);
    let x = tape.constant(series(1, 8, 1, 18));
    let zhat = encode_states(&b, &m.config, x, false).unwrap();
    let post = encode_noise(&b, &m.config, x, zhat, 1, &mut rng::stream(0, "n")).unwrap();
    let sd_max = 5f64.exp();
    for s in post.var().value().data() {
        assert!((s.sqrt() - sd_max).abs() < 1e-9);
    }
}

#[test]
fn same_seed_same_posterior_sample() {
    let m = Model::new(small(Variant::Dpdsr, 1, 3), 19).unwrap();
    let draw = |seed: u64| {
        let tape = Tape::new();
        let b = m.bind(&tape);
        let x = tape.constant(series(2, 15, 1, 20));
        let zhat = encode_states(&b, &m.config, x, false).unwrap();
        let post = encode_noise(&b, &m.config, x, zhat, 2, &mut rng::stream(seed, "n")).unwrap();
        (post.eps.value(), post.logq.value())
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5).0, draw(6).0);
}

#[test]
fn reparameterized_sample_moves_one_for_one_with_mean() {
    let m = Model::new(small(Variant::Dpdsr, 1, 3), 21).unwrap();
    let sample0 = |bias_shift: f64| {
        let mut m = m.clone();
        let id = m.params.expect_id("noise.head.b").unwrap();
        m.params.value_mut(id).data_mut()[0] += bias_shift;
        let tape = Tape::new();
        let b = m.bind(&tape);
        let x = tape.constant(series(3, 10, 1, 22));
        let zhat = encode_states(&b, &m.config, x, false).unwrap();
        let post = encode_noise(&b, &m.config, x, zhat, 1, &mut rng::stream(1, "n")).unwrap();
        let e0 = post.eps.select(1, 0).unwrap();
        let grads = tape.backward(e0.sum()).unwrap();
        let g = grads.wrt(b.p("noise.head.b").unwrap()).data()[0];
        (e0.value().sum() / 3.0, g / 3.0)
    };
    let h = 1e-5;
    let (up, g) = sample0(h);
    let (down, _) = sample0(-h);
    assert!(((up - down) / (2.0 * h) - 1.0).abs() < 1e-6);
    assert!((g - 1.0).abs() < 1e-12);
}

#[test]
fn dkf_single_step_identity_matches_closed_form() {
    let mut cfg = small(Variant::Dkf, 1, 2);
    cfg.d_zhat = 2;
    let mut m = Model::new(cfg, 23).unwrap();
    zero(&mut m, "gen.w2");
    zero(&mut m, "gen.b2");
    zero(&mut m, "dkf.enc.head.w");
    zero(&mut m, "dkf.enc.head.b");
    set(&mut m, "dkf.obs.w", Tensor::matrix(2, 1, vec![0.8, -0.3]).unwrap());
    set(&mut m, "dkf.obs.b", Tensor::vector(vec![0.1]));
    let x = Tensor::new(vec![2, 1, 1], vec![0.4, -1.2]).unwrap();
    let lse = -1.0f64;
    let tape = Tape::new();
    let b = m.bind(&tape);
    let out = dkf_elbo(&b, &m.config, tape.constant(x.clone()), lse, 0, &mut rng::stream(3, "dkf")).unwrap();
    let xi = rng::normals(&mut rng::stream(3, "dkf"), 4);
    let var = lse.exp();
    let mut rec = 0.0;
    for i in 0..2 {
        let g = 0.8 * xi[2 * i] - 0.3 * xi[2 * i + 1] + 0.1;
        rec += 0.5 * (2.0 * std::f64::consts::PI * var).ln() + (x.data()[i] - g).powi(2) / (2.0 * var);
    }
    rec /= 2.0;
    assert!(out.kl.item().unwrap().abs() < 1e-9);
    assert!((out.rec.item().unwrap() - rec).abs() < 1e-9);
    assert!((out.total.item().unwrap() - rec).abs() < 1e-9);
}

#[test]
fn dkf_loss_is_finite_and_transition_term_fades_with_large_variance() {
    let mut m = Model::new(small(Variant::Dkf, 1, 3), 24).unwrap();
    let x = series(2, 30, 1, 25);
    let run = |m: &Model| {
        let tape = Tape::new();
        let b = m.bind(&tape);
        let o = dkf_elbo(&b, &m.config, tape.constant(x.clone()), -2.0, 5, &mut rng::stream(0, "d")).unwrap();
        (o.kl.item().unwrap(), o.rec.item().unwrap())
    };
    let (kl, rec) = run(&m);
    assert!(kl.is_finite() && rec.is_finite());
    set(&mut m, "dkf.log_sigma_eps2", Tensor::vector(vec![30.0]));
    let (kl_big, rec_big) = run(&m);
    assert_eq!(rec, rec_big);
    // the quadratic part of the transition NLL is suppressed by e^{-30}
    assert!(kl_big.is_finite());
    let tape = Tape::new();
    let b = m.bind(&tape);
    assert!(dkf_elbo(&b, &m.config, tape.constant(x.clone()), 0.0, 15, &mut rng::stream(0, "d")).is_err());
}

#[test]
fn arlstm_sampling_extremes() {
    let m = Model::new(small(Variant::Arlstm, 1, 3), 26).unwrap();
    let x = series(3, 30, 1, 27);
    let run = |x: &Tensor, gamma: f64, seed: u64| {
        let tape = Tape::new();
        let b = m.bind(&tape);
        let o = arlstm_rollout(&b, &m.config, tape.constant(x.clone()), gamma, 10, 20, &mut rng::stream(seed, "ar")).unwrap();
        assert!(o.nll().unwrap().item().unwrap().is_finite());
        (o.mu.value(), o.samples)
    };
    // γ = 0: inputs are data, so predictions ignore the draws
    assert_eq!(run(&x, 0.0, 1).0, run(&x, 0.0, 2).0);
    // γ = 1: free-running, so predictions ignore the data in the window
    let mut y = x.clone();
    for i in 0..3 {
        for t in 10..30 {
            y.data_mut()[i * 30 + t] += 3.0;
        }
    }
    assert_eq!(run(&x, 1.0, 1).0, run(&y, 1.0, 1).0);
    assert_ne!(run(&x, 0.0, 1).0, run(&y, 0.0, 1).0);
    let tape = Tape::new();
    let b = m.bind(&tape);
    assert!(arlstm_rollout(&b, &m.config, tape.constant(x.clone()), 0.5, 10, 21, &mut rng::stream(0, "ar")).is_err());
}

#[test]
fn arlstm_free_run_matches_simulator() {
    let m = Model::new(small(Variant::Arlstm, 1, 3), 28).unwrap();
    let x = series(1, 25, 1, 29);
    let tape = Tape::new();
    let b = m.bind(&tape);
    let o = arlstm_rollout(&b, &m.config, tape.constant(x.clone()), 1.0, 10, 15, &mut rng::stream(0, "ar")).unwrap();
    let sim = Simulator::new(&m).unwrap();
    let past = Tensor::new(vec![1, 10, 1], x.data()[..10].to_vec()).unwrap();
    let mut z = sim.causal_states(&past).unwrap().remove(0);
    let mut next = vec![0.0; z.len()];
    let mu = o.mu.value();
    let samples = o.samples.data();
    let sd = o.sigma().value();
    for t in 0..15 {
        // recover the standard-normal draw behind each sample
        let e = (samples[t] - mu.data()[t]) / sd.data()[t];
        sim.step(&z, &[e], &mut next);
        let mut obs = [0.0];
        sim.observe(&next, &mut obs);
        assert!((obs[0] - samples[t]).abs() < 1e-9, "step {t}");
        std::mem::swap(&mut z, &mut next);
    }
}

#[test]
fn simulator_matches_tape_models() {
    let m = Model::new(small(Variant::Dpdsr, 1, 4), 30).unwrap();
    let sim = Simulator::new(&m).unwrap();
    let x = series(1, 50, 1, 31);
    let tape = Tape::new();
    let b = m.bind(&tape);
    let xv = tape.constant(x.clone());
    let zhat = encode_states(&b, &m.config, xv, false).unwrap();
    let full = initial_state(&b, &m.config, zhat.reshape(&[50, 3]).unwrap()).unwrap().value();
    let emb = sim.embed(&x.clone().reshape(&[50, 1]).unwrap()).unwrap();
    for t in 0..50 {
        assert!(max_abs_diff(&emb[t], full.row(t)) < 1e-12);
    }
    let z = Tensor::matrix(1, 4, emb[7].clone()).unwrap();
    let eps = Tensor::matrix(1, 1, vec![0.9]).unwrap();
    let want = evolve_step(&b, &m.config, tape.constant(z), Some(tape.constant(eps))).unwrap().value();
    let mut got = vec![0.0; 4];
    sim.step(&emb[7], &[0.9], &mut got);
    assert!(max_abs_diff(&got, want.data()) < 1e-12);
    let mut o = [0.0];
    sim.observe(&got, &mut o);
    let wo = observe(&b, tape.constant(want)).unwrap().value();
    assert!((o[0] - wo.data()[0]).abs() < 1e-12);

    let tc = Tape::new();
    let bc = m.bind_causal(&tc);
    let cz = encode_states(&bc, &m.config, tc.constant(x.clone()), true).unwrap().value();
    let states = sim.causal_states(&x).unwrap();
    let last = &cz.data()[49 * 3..50 * 3];
    assert!(max_abs_diff(&states[0][..3], last) < 1e-12);
    assert_eq!(sim.state_dim(), 4);
    assert_eq!(sim.noise_dim(), 1);
    let det = Simulator::new(&Model::new(small(Variant::Spdsr, 1, 4), 0).unwrap()).unwrap();
    assert!(!det.is_stochastic());
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    for (i, v) in [Variant::Dpdsr, Variant::Spdsr, Variant::Dkf, Variant::Arlstm].into_iter().enumerate() {
        let m = Model::new(small(v, 1, 3), 40 + i as u64).unwrap();
        let root = dir.path().join(v.as_str());
        let p = save_checkpoint(&root, &m, 500, 7).unwrap();
        assert!(p.ends_with("ckpt_500"));
        let (back, man) = load_checkpoint(&p).unwrap();
        assert_eq!(man.iteration, 500);
        assert_eq!(man.variant, v);
        assert_eq!(back.config, m.config);
        for ((_, a), (_, b)) in back.params.iter().zip(m.params.iter()) {
            assert_eq!(a.value, b.value);
        }
        for ((_, a), (_, b)) in back.causal.iter().zip(m.causal.iter()) {
            assert_eq!(a.value, b.value);
        }
        save_checkpoint(&root, &m, 1000, 7).unwrap();
        let list: Vec<usize> = list_checkpoints(&root).unwrap().into_iter().map(|c| c.0).collect();
        assert_eq!(list, vec![500, 1000]);
    }
    std::fs::write(dir.path().join("dpdsr/ckpt_500/tensors.bin"), [0u8; 5]).unwrap();
    assert!(load_checkpoint(&dir.path().join("dpdsr/ckpt_500")).is_err());
}
