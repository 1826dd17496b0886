//! Simulation designs and Monte Carlo experiments.

pub mod dgp;
pub mod experiments;

pub use dgp::{dgp_generate, dgp_generate_noiseless, DgpId, DgpSpec, SimulatedPanel, TRUE_GROUPS};
pub use experiments::{
    ks_critical_1pct, ks_stat, qq_data, run_fixed_partition_experiment, run_power_experiment, run_size_experiment,
    ExperimentConfig, ExperimentReport, Replication, TestKind, THREADS_ENV,
};
