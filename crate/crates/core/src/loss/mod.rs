//! Photometric losses and the optimal-transport positional loss.

pub mod photometric;
pub mod positional;
pub mod sqrtm;
pub mod transport;

pub use photometric::{photometric_loss, psnr, ssim, PhotometricLoss};
pub use positional::{
    positional_backward, positional_loss, positional_splat_grads, DisplacementField,
    PositionalTerm,
};
pub use sqrtm::matrix_sqrt_2x2;
pub use transport::{
    debiased_target_map, sinkhorn, sinkhorn_matrix, tile_downsample, transport_cost, Tile, TileGrid,
    TransportConfig, TransportPlan,
};

/// Subgradient of `|x|` that is zero inside a tiny band around the kink, so
/// rounding noise at an exact optimum does not produce full-size steps.
pub(crate) fn abs_grad(x: f64) -> f64 {
    const DEADZONE: f64 = 1e-12;
    if x > DEADZONE {
        1.0
    } else if x < -DEADZONE {
        -1.0
    } else {
        0.0
    }
}
