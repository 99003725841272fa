use std::fs;
use std::path::{Path, PathBuf};

use dsr_core::attractor::{
    find_attractors, initial_points, model_forced_lambda, tau_opt_curve, AttractorReport, Skeleton,
};
use dsr_core::dynsys::dataset::TimeSeriesDataset;
use dsr_core::dynsys::{generate_dataset, DatasetKind};
use dsr_core::evaluation::{evaluate, EvaluationReport};
use dsr_core::fsio::write_atomic;
use dsr_core::models::{list_checkpoints, load_checkpoint, Model, Simulator};
use dsr_core::training::sweep::{run_dir_name, RESULTS_FILE};
use dsr_core::training::{self, SweepOptions};

use crate::config::{parse_flat, RunConfig, RESOLVED_FILE};
use crate::svg;
use crate::{CliError, Common};

/// Config file, then `--set` pairs, then the dedicated flags.
fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut entries = match &common.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
            parse_flat(&text)?
        }
        None => Vec::new(),
    };
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{s}'")))?;
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        entries.push(("seed".into(), seed.to_string()));
    }
    if let Some(scale) = common.scale {
        entries.push(("scale".into(), scale.to_string()));
    }
    if let Some(w) = common.workers {
        entries.push(("workers".into(), w.to_string()));
    }
    let cfg = RunConfig::resolve(&entries)?;
    if !(cfg.scale > 0.0 && cfg.scale <= 1.0) {
        return Err(CliError::Usage(format!("scale must lie in (0, 1], got {}", cfg.scale)));
    }
    Ok(cfg)
}

/// Creates the output directory. An existing non-empty directory is
/// replaced only with `--overwrite`.
fn prepare_dir(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    if dir.exists() && fs::read_dir(dir)?.next().is_some() {
        if !overwrite {
            return Err(CliError::Runtime(format!(
                "{} already exists; pass --overwrite to replace it",
                dir.display()
            )));
        }
        fs::remove_dir_all(dir)?;
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn out_dir(common: &Common, default: String) -> PathBuf {
    common.out.clone().unwrap_or_else(|| common.root.join(default))
}

fn load(path: &Path) -> Result<TimeSeriesDataset, CliError> {
    TimeSeriesDataset::load(path)
        .map_err(|e| CliError::Runtime(format!("cannot load dataset {}: {e}", path.display())))
}

fn persist(dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    write_atomic(&dir.join(RESOLVED_FILE), cfg.to_flat().as_bytes())?;
    Ok(())
}

pub fn generate(name: &str, common: &Common) -> Result<(), CliError> {
    let kind: DatasetKind = name.parse().map_err(|e: dsr_core::DsrError| CliError::Usage(e.to_string()))?;
    if !kind.is_synthetic() {
        return Err(CliError::Usage(format!(
            "'{name}' is an external recording and cannot be generated"
        )));
    }
    let scale = common.scale.unwrap_or(1.0);
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(CliError::Usage(format!("scale must lie in (0, 1], got {scale}")));
    }
    let seed = common.seed.unwrap_or(0);
    let dir = out_dir(common, "data".into());
    let (train, test) = generate_dataset(kind, seed, scale)?;
    for ds in [&train, &test] {
        let stem = ds.stem_in(&dir);
        if stem.with_extension("bin").exists() && !common.overwrite {
            return Err(CliError::Runtime(format!(
                "{} exists; pass --overwrite to replace it",
                stem.display()
            )));
        }
    }
    for ds in [&train, &test] {
        let stem = ds.stem_in(&dir);
        ds.save(&stem)?;
        println!("{} ({} points)", stem.display(), ds.len());
    }
    Ok(())
}

pub fn train(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let tc = cfg.scaled_training()?;
    let data = load(&cfg.train_path())?;
    let dir = out_dir(
        common,
        format!("train-{}-{}-seed{}", cfg.dataset, tc.variant.as_str(), tc.seed),
    );
    prepare_dir(&dir, common.overwrite)?;
    persist(&dir, &cfg)?;
    let outcome = training::train(&tc, &data, Some(&dir))?;
    if outcome.failed {
        return Err(CliError::Runtime(format!(
            "training failed: {} (partial artifacts in {})",
            outcome.failure.unwrap_or_default(),
            dir.display()
        )));
    }
    println!(
        "{}: {} iterations, final loss {}",
        dir.display(),
        outcome.trace.len(),
        outcome.final_loss().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn sweep(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let base = cfg.scaled_training()?;
    cfg.grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let train_ds = load(&cfg.train_path())?;
    let test_ds = load(&cfg.test_path())?;
    let dir = out_dir(common, format!("sweep-{}-{}", cfg.dataset, base.variant.as_str()));
    prepare_dir(&dir, common.overwrite)?;
    persist(&dir, &cfg)?;
    let opts = SweepOptions { workers: cfg.workers, eval: cfg.eval.clone() };
    let out = training::sweep(&base, &cfg.grid, &train_ds, &test_ds, Some(&dir), &opts)?;
    println!(
        "{}: {} rows, best cell {} (mean score {}), best run {}",
        dir.join(RESULTS_FILE).display(),
        out.rows.len(),
        out.best_cell,
        out.cells[out.best_cell].mean_score,
        run_dir_name(out.best_cell, out.best_seed)
    );
    Ok(())
}

fn checkpoint(cfg: &RunConfig) -> Result<(Model, usize), CliError> {
    let dir = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Usage("this command needs checkpoint = <dir>".into()))?;
    let (model, manifest) = load_checkpoint(dir)
        .map_err(|e| CliError::Runtime(format!("cannot load checkpoint {}: {e}", dir.display())))?;
    Ok((model, manifest.iteration))
}

pub fn eval(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let (model, it) = checkpoint(&cfg)?;
    let train_ds = load(&cfg.train_path())?;
    let test_ds = load(&cfg.test_path())?;
    let dir = out_dir(common, format!("eval-{}-{}", cfg.dataset, model.config.variant.as_str()));
    prepare_dir(&dir, common.overwrite)?;
    persist(&dir, &cfg)?;
    let label = model.config.variant.as_str();
    let (report, gen) = evaluate(&model, &train_ds, &test_ds, label, Some(it), &cfg.eval)?;
    write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    write_atomic(
        &dir.join("report.csv"),
        format!("{}\n{}\n", EvaluationReport::CSV_HEADER, report.csv_row()).as_bytes(),
    )?;
    let d = test_ds.dim;
    let mut csv = String::from("t");
    (0..d).for_each(|c| csv.push_str(&format!(",x{c}")));
    csv.push('\n');
    for (t, row) in gen.chunks(d).enumerate() {
        csv.push_str(&t.to_string());
        row.iter().for_each(|v| csv.push_str(&format!(",{v}")));
        csv.push('\n');
    }
    write_atomic(&dir.join("generated.csv"), csv.as_bytes())?;
    for c in 0..d {
        let g: Vec<f64> = gen.iter().skip(c).step_by(d).copied().collect();
        let x = test_ds.channel(c);
        let n = 1000.min(g.len()).min(x.len());
        let lines = svg::line_plot(
            &format!("channel {c}: first {n} steps"),
            &[("data", &x[..n]), ("model", &g[..n])],
        );
        write_atomic(&dir.join(format!("timeseries_x{c}.svg")), lines.as_bytes())?;
        let hist = svg::histogram_plot(&format!("channel {c}: distribution"), &[("data", &x), ("model", &g)], 40);
        write_atomic(&dir.join(format!("histogram_x{c}.svg")), hist.as_bytes())?;
    }
    println!(
        "{}: score {} (D_d {}, D_s {}, KL_eps {})",
        dir.display(),
        report.score,
        report.d_d,
        report.d_s,
        report.kl_eps
    );
    Ok(())
}

pub fn attractors(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let (model, _) = checkpoint(&cfg)?;
    let train_ds = load(&cfg.train_path())?;
    let dir = out_dir(common, format!("attractors-{}-{}", cfg.dataset, model.config.variant.as_str()));
    prepare_dir(&dir, common.overwrite)?;
    persist(&dir, &cfg)?;
    let sim = Simulator::new(&model)?;
    let opts = &cfg.attractors;
    let inits = initial_points(|s, p| sim.states_at(s, p), &train_ds, opts.init_points, opts.seed)?;
    let found = find_attractors(&Skeleton::new(&sim), &inits, opts)?;
    let report = AttractorReport { options: opts.clone(), attractors: found };
    write_atomic(&dir.join("attractors.json"), &serde_json::to_vec_pretty(&report)?)?;
    write_atomic(&dir.join("attractors.csv"), report.trajectories_csv().as_bytes())?;
    for (i, a) in report.attractors.iter().enumerate() {
        println!(
            "attractor {i}: {} (lambda_max {}, basin {})",
            a.class.as_str(),
            a.lambda_max,
            a.basin_fraction
        );
    }
    Ok(())
}

struct SweepEntry {
    tau: usize,
    cell: usize,
    seed: u64,
    checkpoint: usize,
    score: f64,
}

fn read_sweep(path: &Path) -> Result<Vec<SweepEntry>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| CliError::Runtime(format!("{}: missing column {name}", path.display())))
    };
    let (c_tau, c_cell, c_seed, c_ckpt, c_score, c_best) =
        (col("tau")?, col("cell")?, col("seed")?, col("checkpoint")?, col("score")?, col("best_in_run")?);
    let bad = |l: &str| CliError::Runtime(format!("{}: malformed row '{l}'", path.display()));
    let mut out = Vec::new();
    for l in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = l.split(',').collect();
        if f.len() != header.len() {
            return Err(bad(l));
        }
        if f[c_best] != "true" || f[c_ckpt].is_empty() {
            continue;
        }
        out.push(SweepEntry {
            tau: f[c_tau].parse().map_err(|_| bad(l))?,
            cell: f[c_cell].parse().map_err(|_| bad(l))?,
            seed: f[c_seed].parse().map_err(|_| bad(l))?,
            checkpoint: f[c_ckpt].parse().map_err(|_| bad(l))?,
            score: f[c_score].parse().map_err(|_| bad(l))?,
        });
    }
    Ok(out)
}

pub fn tauopt(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let sweep_dir = cfg
        .sweep
        .clone()
        .ok_or_else(|| CliError::Usage("tauopt needs sweep = <dir>".into()))?;
    let train_ds = load(&cfg.train_path())?;
    let entries = read_sweep(&sweep_dir.join(RESULTS_FILE))?;
    let mut taus: Vec<usize> = entries.iter().map(|e| e.tau).collect();
    taus.sort_unstable();
    taus.dedup();
    let mut points = Vec::new();
    for tau in taus {
        let best = entries
            .iter()
            .filter(|e| e.tau == tau && e.score.is_finite())
            .min_by(|a, b| a.score.total_cmp(&b.score));
        let Some(best) = best else { continue };
        let root = dsr_core::training::run::checkpoints_root(&sweep_dir.join(run_dir_name(best.cell, best.seed)));
        let ckpt = list_checkpoints(&root)?
            .into_iter()
            .find(|(it, _)| *it == best.checkpoint)
            .ok_or_else(|| CliError::Runtime(format!("missing checkpoint {} under {}", best.checkpoint, root.display())))?;
        let (model, _) = load_checkpoint(&ckpt.1)?;
        let sim = Simulator::new(&model)?;
        let lambda = model_forced_lambda(&sim, &train_ds, tau, cfg.tauopt_steps, cfg.train.seed)?;
        points.push((tau as f64, lambda));
    }
    let curve = tau_opt_curve(&points)?;
    let dir = out_dir(common, format!("tauopt-{}", cfg.dataset));
    prepare_dir(&dir, common.overwrite)?;
    persist(&dir, &cfg)?;
    write_atomic(&dir.join("taucurve.json"), &serde_json::to_vec_pretty(&curve)?)?;
    write_atomic(&dir.join("taucurve.csv"), curve.csv().as_bytes())?;
    println!("{}: fixed points {:?}", dir.display(), curve.fixed_points);
    Ok(())
}
