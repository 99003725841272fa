//! The optimization loop.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::loss::{batch_loss, causal_loss, LossComponents};
use super::TrainingConfig;
use crate::autodiff::{clip_store, AdamState, Tape};
use crate::dynsys::dataset::{chunk_with, TimeSeriesDataset};
use crate::error::{DsrError, Result};
use crate::fsio::write_atomic;
use crate::models::{save_checkpoint, Model};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: LossComponents,
    /// Causal encoder loss (0 when not co-trained).
    pub causal: f64,
    /// Global gradient norm before clipping.
    pub grad_norm: f64,
}

pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<TraceRow>,
    /// Parameter snapshots at every checkpoint, ascending.
    pub checkpoints: Vec<(usize, Model)>,
    pub failed: bool,
    pub failure: Option<String>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.loss.total)
    }
}

pub const TRACE_HEADER: &str = "iter,lr,total,rec_x,rec_zhat,kl,reg_g,reg_zhat,causal,grad_norm";

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in trace {
        let l = &r.loss;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration, r.lr, l.total, l.rec_x, l.rec_zhat, l.kl, l.reg_g, l.reg_zhat, r.causal, r.grad_norm
        );
    }
    s
}

/// Directory of the checkpoints of a run.
pub fn checkpoints_root(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoints")
}

fn checkpoint_due(cfg: &TrainingConfig, iteration: usize) -> bool {
    iteration % cfg.checkpoint_every == 0 || iteration == cfg.iterations
}

/// Trains a fresh model on `data`. With `run_dir`, persists `config.json`,
/// `checkpoints/ckpt_{iter}` and `loss_trace.csv`, also for failed runs.
///
/// A non-finite loss or gradient skips the update; two in a row mark the
/// run failed and stop it.
pub fn train(cfg: &TrainingConfig, data: &TimeSeriesDataset, run_dir: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let window = cfg.window();
    if window > data.len() {
        return Err(DsrError::invalid(format!(
            "chunk of {window} exceeds series of {}",
            data.len()
        )));
    }
    let mut model = Model::new(cfg.model_config(data.dim), cfg.seed)?;
    if let Some(dir) = run_dir {
        write_atomic(&dir.join("config.json"), &serde_json::to_vec_pretty(cfg)?)?;
    }
    let mut adam = AdamState::new(cfg.lr);
    let mut adam_causal = AdamState::new(cfg.lr);
    let co_train = cfg.train_causal && !model.causal.is_empty();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut checkpoints = Vec::new();
    let mut bad_streak = 0;
    let mut failure = None;

    for it in 1..=cfg.iterations {
        let lr = cfg.lr_at(it - 1);
        adam.lr = lr;
        adam_causal.lr = lr;
        let mut pick = rng::substream(cfg.seed, "batch", it as u64);
        let x = chunk_with(data, window, cfg.batch, &mut pick)?;
        let mut sampler = rng::substream(cfg.seed, "sampler", it as u64);

        let tape = Tape::new();
        let bound = model.bind(&tape);
        let out = batch_loss(&bound, &model.config, cfg, tape.constant(x.clone()), &mut sampler)?;
        let comps = out.components()?;
        let grads = tape.backward(out.total)?;
        let target = out.causal_target;
        drop(bound);
        grads.write_into(&mut model.params);
        drop(grads);
        drop(tape);
        let norm = clip_store(&mut model.params, cfg.clip);

        if !comps.is_finite() || !norm.is_finite() {
            bad_streak += 1;
            log::warn!(
                "iteration {it}: non-finite loss (total {}, rec_x {}, rec_zhat {}, kl {}, reg_g {}, reg_zhat {}, grad norm {norm})",
                comps.total, comps.rec_x, comps.rec_zhat, comps.kl, comps.reg_g, comps.reg_zhat
            );
            trace.push(TraceRow { iteration: it, lr, loss: comps, causal: f64::NAN, grad_norm: norm });
            if bad_streak >= 2 {
                failure = Some(format!("non-finite loss at iterations {} and {it}", it - 1));
                break;
            }
            continue;
        }
        bad_streak = 0;
        adam.step_store(&mut model.params)?;

        let mut causal = 0.0;
        if let (true, Some(target)) = (co_train, target) {
            let tape = Tape::new();
            let bound = model.bind_causal(&tape);
            let l = causal_loss(&bound, &model.config, tape.constant(x), &target)?;
            causal = l.item()?;
            let g = tape.backward(l)?;
            drop(bound);
            g.write_into(&mut model.causal);
            let cn = clip_store(&mut model.causal, cfg.clip);
            if causal.is_finite() && cn.is_finite() {
                adam_causal.step_store(&mut model.causal)?;
            }
        }
        trace.push(TraceRow { iteration: it, lr, loss: comps, causal, grad_norm: norm });

        if checkpoint_due(cfg, it) {
            if let Some(dir) = run_dir {
                save_checkpoint(&checkpoints_root(dir), &model, it, cfg.seed)?;
            }
            checkpoints.push((it, model.clone()));
        }
    }
    if let Some(dir) = run_dir {
        write_atomic(&dir.join("loss_trace.csv"), trace_csv(&trace).as_bytes())?;
        if failure.is_some() {
            write_atomic(&dir.join("FAILED"), failure.as_deref().unwrap_or("").as_bytes())?;
        }
    }
    Ok(TrainOutcome {
        model,
        trace,
        checkpoints,
        failed: failure.is_some(),
        failure,
    })
}
