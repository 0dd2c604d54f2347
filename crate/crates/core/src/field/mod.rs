//! The radiance MLP, cameras, and volume rendering.

mod camera;
mod encoding;
pub mod geom;
mod image;
mod model;
mod render;

pub use camera::{Camera, Ray};
pub use encoding::{encoded_dim, positional_encode};
pub use image::{psnr, RgbImage, PSNR_IDENTICAL};
pub use model::{field_graph, FieldConfig, FieldGraph, FieldParams, ParamVars, RGB_BIAS, RGB_WEIGHT};
pub use render::{
    pixel_seed, render_batch, render_graph, render_image, render_pixel, render_rays, sample_positions, RenderGraph,
    RenderOutput, SampleBatch,
};
