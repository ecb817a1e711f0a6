//! Diagnostics on trained models: verification accuracy across resolutions,
//! gradient-norm sweeps, similarity histograms, per-dimension HR/LR error and
//! PCA projections. Everything here reads checkpoints without modifying them.

mod histogram;
mod pca;
mod report;
mod sweeps;
mod verification;

pub use histogram::{overlap_coefficient, similarity_distributions, SimilarityHistogram, SIM_BINS};
pub use pca::{group_centroids, pca_project, PcaResult, PCA_MAX_ITERS, PCA_TOL};
pub use report::report_stem;
pub use sweeps::{
    gradient_norm_at, gradient_norm_sweep, per_dim_error, resolution_accuracy_sweep, PerDimError,
    SweepReport, DIM_ERROR_BINS,
};
pub use verification::{
    best_threshold, cosine, embed_normalized, pair_similarities, verification_accuracy, FOLDS,
};
