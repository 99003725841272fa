//! Grid sweeps: every cell and seed is trained, every checkpoint evaluated
//! on the test split, and the cell with the lowest mean score selected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{train, SweepGrid, TrainingConfig};
use crate::dynsys::dataset::TimeSeriesDataset;
use crate::error::{DsrError, Result};
use crate::evaluation::{evaluate, EvalOptions, EvaluationReport};
use crate::fsio::write_atomic;

pub const RESULTS_FILE: &str = "sweep_results.csv";
pub const SUMMARY_FILE: &str = "sweep_summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    pub workers: usize,
    pub eval: EvalOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { workers: 1, eval: EvalOptions::default() }
    }
}

/// One evaluated checkpoint, or one failed run (`checkpoint = None`,
/// score `+∞`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub tau: usize,
    pub log_sigma_eta2: f64,
    pub dkf_log_sigma_eps2: f64,
    pub gamma: f64,
    pub t_pred: usize,
    pub seed: u64,
    pub checkpoint: Option<usize>,
    pub failed: bool,
    pub score: f64,
    pub d_d: Option<f64>,
    pub d_s: Option<f64>,
    pub pe_20: Option<f64>,
    pub d_isi: Option<f64>,
    pub kl_eps: Option<f64>,
    /// Lowest-scoring checkpoint of its run.
    pub best_in_run: bool,
}

pub const RESULTS_HEADER: &str = "cell,tau,log_sigma_eta2,dkf_log_sigma_eps2,gamma,t_pred,seed,checkpoint,failed,score,d_d,d_s,pe_20,d_isi,kl_eps,best_in_run";

impl SweepRow {
    fn new(cell: usize, cfg: &TrainingConfig) -> Self {
        Self {
            cell,
            tau: cfg.tau,
            log_sigma_eta2: cfg.log_sigma_eta2,
            dkf_log_sigma_eps2: cfg.dkf_log_sigma_eps2,
            gamma: cfg.gamma,
            t_pred: cfg.t_pred,
            seed: cfg.seed,
            checkpoint: None,
            failed: true,
            score: f64::INFINITY,
            d_d: None,
            d_s: None,
            pe_20: None,
            d_isi: None,
            kl_eps: None,
            best_in_run: true,
        }
    }

    fn with_report(mut self, it: usize, r: &EvaluationReport) -> Self {
        self.checkpoint = Some(it);
        self.failed = false;
        self.score = r.score;
        self.d_d = Some(r.d_d);
        self.d_s = Some(r.d_s);
        self.pe_20 = r.pe_20;
        self.d_isi = r.d_isi;
        self.kl_eps = Some(r.kl_eps);
        self.best_in_run = false;
        self
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.cell,
            self.tau,
            self.log_sigma_eta2,
            self.dkf_log_sigma_eps2,
            self.gamma,
            self.t_pred,
            self.seed,
            self.checkpoint.map_or(String::new(), |c| c.to_string()),
            self.failed,
            self.score,
            opt(self.d_d),
            opt(self.d_s),
            opt(self.pe_20),
            opt(self.d_isi),
            opt(self.kl_eps),
            self.best_in_run
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub config: TrainingConfig,
    /// Mean over seeds of each run's best score.
    pub mean_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub cells: Vec<CellSummary>,
    pub best_cell: usize,
    /// Seed and checkpoint of the best run within the best cell.
    pub best_seed: u64,
    pub best_checkpoint: usize,
}

impl SweepOutcome {
    pub fn results_csv(&self) -> String {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        s
    }
}

/// Subdirectory of one run inside a sweep directory.
pub fn run_dir_name(cell: usize, seed: u64) -> String {
    format!("cell{cell:03}_seed{seed}")
}

fn run_one(
    cell: usize,
    cfg: &TrainingConfig,
    train_data: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    dir: Option<PathBuf>,
    eval: &EvalOptions,
) -> Vec<SweepRow> {
    let base = SweepRow::new(cell, cfg);
    let outcome = match train(cfg, train_data, dir.as_deref()) {
        Ok(o) if !o.failed => o,
        Ok(o) => {
            log::warn!("cell {cell} seed {}: {}", cfg.seed, o.failure.unwrap_or_default());
            return vec![base];
        }
        Err(e) => {
            log::warn!("cell {cell} seed {}: training error: {e}", cfg.seed);
            return vec![base];
        }
    };
    let label = format!("{}-{}", cfg.variant.as_str(), run_dir_name(cell, cfg.seed));
    let mut rows: Vec<SweepRow> = Vec::new();
    for (it, model) in &outcome.checkpoints {
        match evaluate(model, train_data, test, &label, Some(*it), eval) {
            Ok((report, _)) => rows.push(base.clone().with_report(*it, &report)),
            Err(e) => {
                log::warn!("cell {cell} seed {} checkpoint {it}: {e}", cfg.seed);
                let mut r = base.clone();
                r.checkpoint = Some(*it);
                r.best_in_run = false;
                rows.push(r);
            }
        }
    }
    if rows.is_empty() {
        return vec![base];
    }
    let best = rows
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.score.total_cmp(&b.1.score))
        .map(|(i, _)| i)
        .unwrap_or(0);
    rows[best].best_in_run = true;
    rows
}

/// Trains and evaluates every cell × seed of `grid` on up to
/// `opts.workers` threads. With `out`, each run gets its own directory and
/// the results table plus a summary are written at the top level.
pub fn sweep(
    base: &TrainingConfig,
    grid: &SweepGrid,
    train_data: &TimeSeriesDataset,
    test: &TimeSeriesDataset,
    out: Option<&Path>,
    opts: &SweepOptions,
) -> Result<SweepOutcome> {
    grid.validate()?;
    let cells = grid.cells(base);
    for c in &cells {
        c.validate()?;
    }
    let jobs: Vec<(usize, TrainingConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(i, c)| {
            grid.seeds
                .iter()
                .map(move |&seed| (i, TrainingConfig { seed, ..c.clone() }))
        })
        .collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Vec<SweepRow>>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = opts.workers.clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let j = next.fetch_add(1, Ordering::SeqCst);
                let Some((cell, cfg)) = jobs.get(j) else { break };
                let dir = out.map(|o| o.join(run_dir_name(*cell, cfg.seed)));
                let rows = run_one(*cell, cfg, train_data, test, dir, &opts.eval);
                results.lock().expect("sweep results lock")[j] = Some(rows);
            });
        }
    });
    let rows: Vec<SweepRow> = results
        .into_inner()
        .expect("sweep results lock")
        .into_iter()
        .flatten()
        .flatten()
        .collect();

    let mut summaries = Vec::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        let best: Vec<f64> = rows
            .iter()
            .filter(|r| r.cell == i && r.best_in_run)
            .map(|r| r.score)
            .collect();
        let mean_score = best.iter().sum::<f64>() / best.len().max(1) as f64;
        summaries.push(CellSummary { cell: i, config: c.clone(), mean_score });
    }
    let outcome = select(rows, summaries)?;
    if let Some(dir) = out {
        write_atomic(&dir.join(RESULTS_FILE), outcome.results_csv().as_bytes())?;
        write_atomic(&dir.join(SUMMARY_FILE), &serde_json::to_vec_pretty(&Summary::of(&outcome))?)?;
    }
    Ok(outcome)
}

fn select(rows: Vec<SweepRow>, cells: Vec<CellSummary>) -> Result<SweepOutcome> {
    if rows.iter().all(|r| !r.score.is_finite()) {
        return Err(DsrError::AllRunsFailed);
    }
    let best_cell = cells
        .iter()
        .min_by(|a, b| a.mean_score.total_cmp(&b.mean_score))
        .map(|c| c.cell)
        .unwrap_or(0);
    // a cell with every run failed has mean +∞; fall back to the best single run
    let pool: Vec<&SweepRow> = if cells[best_cell].mean_score.is_finite() {
        rows.iter().filter(|r| r.cell == best_cell && r.best_in_run).collect()
    } else {
        rows.iter().filter(|r| r.best_in_run).collect()
    };
    let best = pool
        .into_iter()
        .filter(|r| r.checkpoint.is_some())
        .min_by(|a, b| a.score.total_cmp(&b.score))
        .ok_or(DsrError::AllRunsFailed)?;
    let (best_cell, best_seed, best_checkpoint) =
        (best.cell, best.seed, best.checkpoint.unwrap_or_default());
    Ok(SweepOutcome { rows, cells, best_cell, best_seed, best_checkpoint })
}

#[derive(Serialize)]
struct Summary<'a> {
    best_cell: usize,
    best_seed: u64,
    best_checkpoint: usize,
    best_run_dir: String,
    cells: &'a [CellSummary],
}

impl<'a> Summary<'a> {
    fn of(o: &'a SweepOutcome) -> Self {
        Self {
            best_cell: o.best_cell,
            best_seed: o.best_seed,
            best_checkpoint: o.best_checkpoint,
            best_run_dir: run_dir_name(o.best_cell, o.best_seed),
            cells: &o.cells,
        }
    }
}
