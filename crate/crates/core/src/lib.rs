pub mod camera;
pub mod deform;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod optimize;
pub mod ply;
pub mod quat;
pub mod regularize;
pub mod render;
pub mod scene;
pub mod toy;

pub use camera::Camera;
pub use error::{Error, Result};
pub use image::{Image, Mask};
pub use optimize::{EditConfig, EditReport};
pub use quat::Quat;
pub use scene::{Aabb, Gaussian3D, GaussianScene};
