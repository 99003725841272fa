//! Benchmark dynamical systems, integrators and dataset handling.

pub mod dataset;
pub mod external;
pub mod ode;
pub mod sde;
pub mod systems;

pub use dataset::{
    chunk, generate_dataset, DatasetKind, Normalization, Split, TimeSeriesDataset,
};
pub use external::preprocess_external;
pub use ode::{integrate_rk45, OdeSystem, Rk45Options, Trajectory};
pub use sde::{integrate_euler, integrate_euler_maruyama, SdeSystem};
