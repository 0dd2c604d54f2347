//! Procedural scenes with exact labels and their ground-truth renders.

mod affinity;
mod dataset;
mod gt;
mod labels;
mod spec;

pub use affinity::{gt_affinity, AffinityProvider, FeatureAffinity, LabelAffinity, PixelRef};
pub use dataset::{make_dataset, orbit_position, pose_angle, Dataset, DatasetConfig, ViewSet};
pub use gt::{gt_render, GtView};
pub use labels::{LabelImage, LabelMode};
pub use spec::{generate_scene, generate_scene_with_classes, Primitive, SceneSpec, Shape, PLACEMENT_RADIUS, PLACEMENT_RETRIES};
