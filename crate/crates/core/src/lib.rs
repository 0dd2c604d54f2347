//! Desk-scale differentiable radiance fields whose weight-space Jacobians are
//! shaped so that perturbing the network along one pixel's gradient moves the
//! pixels it is semantically tied to.
//!
//! The crate trains a small NeRF on procedural scenes, aligns per-pixel
//! Jacobians of the RGB output layer with a contrastive loss, estimates the
//! perturbation-induced mutual information between pixels, and propagates
//! labels across views with delta perturbations.

// `!(x > 0.0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity)]

pub mod error;
pub mod experiment;
pub mod field;
pub mod jacobian;
pub mod metrics;
pub mod mi;
pub mod optim;
pub mod propagation;
pub mod rng;
pub mod scene;
pub mod shaping;
pub mod tensor;

pub use error::{Error, Result};
pub use field::{Camera, FieldConfig, FieldParams, Ray, RenderOutput};
pub use jacobian::{PerturbationPattern, PerturbationSpec, PixelJacobian};
pub use metrics::MetricReport;
pub use mi::MiEstimate;
pub use propagation::{PropagationResult, SeedLabels};
pub use scene::{LabelImage, SceneSpec};
pub use shaping::ShapingConfig;
pub use tensor::{GradientMap, Tape, Tensor, Var};
