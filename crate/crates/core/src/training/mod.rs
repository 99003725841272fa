//! Loss assembly, the training loop and parameter sweeps.

pub mod config;
pub mod loss;
pub mod run;
pub mod sweep;

pub use config::{SweepGrid, TrainingConfig};
pub use loss::{batch_loss, causal_loss, dpdsr_loss, kl_autoregressive, LossComponents, LossOutput};
pub use run::{train, trace_csv, TraceRow, TrainOutcome};
pub use sweep::{sweep, CellSummary, SweepOptions, SweepOutcome, SweepRow};
