//! Inference on the difference between two groups found by k-means, valid
//! conditional on the clustering that produced them.

pub mod contrast;
pub mod inference;
pub mod truncation;

pub use contrast::{build_contrast, perturb, Contrast, PerturbationPath, Target};
pub use inference::{
    naive_wald, selective_test, selective_test_covariate, selective_test_gmm, selective_test_with, Method,
    SelectiveTestRecord, SelectiveTestResult,
};
pub use truncation::{centroid_paths, lemma1_coeffs, lemma2_coeffs, truncation_set, Affine, Quadratic};
