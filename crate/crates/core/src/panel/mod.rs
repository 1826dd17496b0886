//! Panel data ingestion, fixed-effect transforms and slope estimation.

pub mod dataset;
pub mod estimate;
pub mod group;
pub mod transform;

pub use dataset::{load_panel, PanelDataset, PanelSchema, UnitSeries};
pub use estimate::{fit_individuals, gmm_individual, ols_individual, Estimator, FitRecord, GmmWeight, IndividualFit};
pub use group::{group_estimate, group_estimate_with, plugin_covariance, CovarianceKind, GroupEstimates, GroupPartition};
pub use transform::{first_difference, within_demean, DemeanedPanel, DifferencedPanel, UnitBlock};
