//! Sparse anchors extracted from the scene and linear blend skinning of the
//! Gaussians from anchor transforms.

mod anchors;
mod knn;
mod lbs;

pub use anchors::{
    farthest_point_sampling, init_anchors, voxel_centroids, AnchorConfig, AnchorSet,
};
pub use knn::{knn, rbf_weights};
pub use lbs::{lbs_apply, lbs_backward, AnchorGrad, LbsOutput};
