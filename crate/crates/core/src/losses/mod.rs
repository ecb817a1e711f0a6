//! Feature distances (L1, L2, smooth L1, LogExp), the CosFace margin softmax
//! and the combined Siamese objective, each with analytic gradients.

mod cosface;
mod distance;
mod total;

pub use cosface::{cosface_loss, cosine_logits, CosFaceOutput};
pub use distance::{
    dist_l1, dist_l2, dist_logexp, dist_smooth_l1, logexp_gradient_magnitudes, logexp_remainder,
    DistResult, DistanceKind, LOGEXP_EXP_CLAMP,
};
pub use total::{normalized_pair_distance, total_loss, LossSpec, TotalLossOutput};
