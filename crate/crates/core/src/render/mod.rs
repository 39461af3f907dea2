//! Differentiable EWA splatting: projection, front-to-back alpha blending,
//! and the analytic backward pass.

mod backward;
mod project;
mod raster;

pub use backward::{chain_splat_grads, render_backward_color, GaussianGrad, SplatGrad};
pub use project::{project_gaussian, project_scene, Splat2D, DILATION};
pub use raster::{render_forward, Fragment, RenderOutput, ALPHA_FLOOR, TRANSMITTANCE_CUTOFF};
