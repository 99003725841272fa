use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dsr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsr"))
        .args(args)
        .current_dir(cwd)
        .env("DSR_OUT", cwd.join("default-root"))
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(dir: &Path, data: &Path, extra: &str) -> PathBuf {
    let text = format!(
        "# tiny model for fast tests
dataset = doublewell
data = {}
variant = spdsr
d_z = 3
hidden = 8
encoder.channels = 4
encoder.kernel = 3
encoder.dilations = 1,2
chunk = 40
trim = 5
batch = 2
mc_samples = 2
iterations = 4
checkpoint_every = 2
lr_milestones =
t_past = 6
t_pred = 6
eval.length = 500
eval.prediction.k = 20
eval.prediction.chunks = 10
eval.prediction.noise_draws = 2
eval.kl.chunks = 2
eval.kl.chunk_len = 40
eval.kl.trim = 5
attractors.init_points = 5
attractors.warmup = 50
attractors.length = 200
attractors.compare_points = 100
attractors.lyapunov_steps = 100
tauopt_steps = 100
{extra}
",
        data.display()
    );
    let p = dir.join(format!("cfg{}.txt", fs::read_dir(dir).unwrap().count()));
    fs::write(&p, text).unwrap();
    p
}

fn generated(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = dsr(&["generate", "doublewell", "--scale", "0.01", "--seed", "3", "--out", data.to_str().unwrap()], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    data
}

#[test]
fn generate_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = generated(dir);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data.join("doublewell_train.json")).unwrap()).unwrap();
    assert_eq!(sidecar["shape"][0], 1000);
    let first = fs::read(data.join("doublewell_test.bin")).unwrap();

    let again = dsr(&["generate", "doublewell", "--scale", "0.01", "--seed", "3", "--out", "data"], dir);
    assert_eq!(code(&again), 1);
    let forced = dsr(
        &["generate", "doublewell", "--scale", "0.01", "--seed", "3", "--out", "data", "--overwrite"],
        dir,
    );
    assert_eq!(code(&forced), 0, "{}", stderr(&forced));
    assert_eq!(fs::read(data.join("doublewell_test.bin")).unwrap(), first);

    assert_eq!(code(&dsr(&["generate", "nope"], dir)), 2);
    assert_eq!(code(&dsr(&["generate", "ecg"], dir)), 2);
    assert_eq!(code(&dsr(&["generate", "lorenz", "--scale", "1.5"], dir)), 2);
    assert_eq!(code(&dsr(&["frobnicate"], dir)), 2);

    // the environment variable sets the default output root
    let o = dsr(&["generate", "doublewell", "--scale", "0.001"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.join("default-root/data/doublewell_train.bin").exists());
}

#[test]
fn generate_lorenz_full_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let o = dsr(&["generate", "lorenz", "--out", "d"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for split in ["train", "test"] {
        let bin = fs::metadata(tmp.path().join(format!("d/lorenz_{split}.bin"))).unwrap();
        assert_eq!(bin.len(), 100_000 * 8);
    }
}

#[test]
fn config_errors_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = dir.join("bad.txt");
    fs::write(&cfg, "bogus = 1\ntau = lots\ngrid.what = 3\n").unwrap();
    let o = dsr(&["train", "--config", cfg.to_str().unwrap()], dir);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("bogus") && msg.contains("tau = lots") && msg.contains("grid.what"), "{msg}");

    assert_eq!(code(&dsr(&["train", "--config", "missing.txt"], dir)), 2);
    assert_eq!(code(&dsr(&["train", "--set", "noequals"], dir)), 2);
    assert_eq!(code(&dsr(&["train", "--set", "tau=0"], dir)), 2);
    // data that does not exist is a runtime failure
    assert_eq!(code(&dsr(&["train", "--set", "data=nowhere"], dir)), 1);
    assert_eq!(code(&dsr(&["eval"], dir)), 2);
    assert_eq!(code(&dsr(&["tauopt"], dir)), 2);
}

#[test]
fn train_eval_attractors_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = generated(dir);
    let cfg = tiny_config(dir, &data, "");
    let c = cfg.to_str().unwrap();

    let o = dsr(&["train", "--config", c, "--out", "run"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.join("run");
    for f in ["config.json", "run_config.txt", "loss_trace.csv", "checkpoints/ckpt_2", "checkpoints/ckpt_4"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let trace = fs::read(run.join("loss_trace.csv")).unwrap();

    assert_eq!(code(&dsr(&["train", "--config", c, "--out", "run"], dir)), 1);
    let o = dsr(&["train", "--config", c, "--out", "run", "--overwrite"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(run.join("loss_trace.csv")).unwrap(), trace);

    // the persisted configuration reproduces the run
    let o = dsr(&["train", "--config", run.join("run_config.txt").to_str().unwrap(), "--out", "rerun"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(dir.join("rerun/loss_trace.csv")).unwrap(), trace);
    assert_eq!(
        fs::read_to_string(dir.join("rerun/run_config.txt")).unwrap(),
        fs::read_to_string(run.join("run_config.txt")).unwrap()
    );

    let ckpt = format!("checkpoint={}", run.join("checkpoints/ckpt_4").display());
    let o = dsr(&["eval", "--config", c, "--set", &ckpt, "--out", "ev"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("ev/report.json")).unwrap()).unwrap();
    assert_eq!(report["kl_eps"], 0.0);
    assert_eq!(report["checkpoint"], 4);
    for f in ["report.csv", "generated.csv", "timeseries_x0.svg", "histogram_x0.svg"] {
        assert!(dir.join("ev").join(f).exists(), "{f}");
    }
    let svg = fs::read_to_string(dir.join("ev/histogram_x0.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("polyline"));

    let o = dsr(&["attractors", "--config", c, "--set", &ckpt, "--out", "att"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("att/attractors.json")).unwrap()).unwrap();
    let total: f64 = rep["attractors"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["basin_fraction"].as_f64().unwrap())
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert!(dir.join("att/attractors.csv").exists());

    let missing = dsr(&["eval", "--config", c, "--set", "checkpoint=nowhere", "--out", "ev2"], dir);
    assert_eq!(code(&missing), 1);
}

#[test]
fn sweep_and_tauopt() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = generated(dir);
    let cfg = tiny_config(dir, &data, "variant = dpdsr\ngrid.tau = 2,5,40\ngrid.log_sigma_eta2 = -1\ngrid.seeds = 0,1");
    let c = cfg.to_str().unwrap();
    let o = dsr(&["sweep", "--config", c, "--workers", "2", "--out", "sw"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sw = dir.join("sw");
    let runs = fs::read_dir(&sw).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(runs, 6);
    let csv = fs::read_to_string(sw.join("sweep_results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6 * 2);
    assert!(sw.join("sweep_summary.json").exists());

    let o = dsr(&["tauopt", "--config", c, "--set", &format!("sweep={}", sw.display()), "--out", "tau"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let curve: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("tau/taucurve.json")).unwrap()).unwrap();
    assert_eq!(curve["tau"].as_array().unwrap().len(), 3);
    assert_eq!(fs::read_to_string(dir.join("tau/taucurve.csv")).unwrap().lines().count(), 4);
}

#[test]
fn default_dpdsr_grid_gives_96_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = generated(dir);
    let cfg = tiny_config(
        dir,
        &data,
        "variant = dpdsr\niterations = 1\ncheckpoint_every = 1\neval.prediction.chunks = 2\neval.length = 200\neval.kl.chunks = 1",
    );
    let o = dsr(&["sweep", "--config", cfg.to_str().unwrap(), "--workers", "4", "--out", "sw"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let runs = fs::read_dir(dir.join("sw")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(runs, 96);
    let csv = fs::read_to_string(dir.join("sw/sweep_results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 97);
}
