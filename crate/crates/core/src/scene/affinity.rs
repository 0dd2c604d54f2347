use std::path::Path;

use super::labels::LabelImage;
use crate::error::{Error, Result};
use crate::tensor::{read_jtns, Tensor};

/// A pixel in a training view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PixelRef {
    pub view: usize,
    pub pixel: usize,
}

/// External similarity signal standing in for scene mutual information.
pub trait AffinityProvider: Sync {
    fn similarity(&self, a: PixelRef, b: PixelRef) -> f64;
    /// Pixels eligible as anchors and positives.
    fn is_foreground(&self, p: PixelRef) -> bool;
}

/// 1 iff both pixels carry the same non-zero id.
pub fn gt_affinity(a: u32, b: u32) -> f64 {
    if a != 0 && a == b {
        1.0
    } else {
        0.0
    }
}

/// Ground-truth label affinity over per-view label maps.
pub struct LabelAffinity {
    pub labels: Vec<LabelImage>,
}

impl AffinityProvider for LabelAffinity {
    fn similarity(&self, a: PixelRef, b: PixelRef) -> f64 {
        gt_affinity(self.labels[a.view].ids[a.pixel], self.labels[b.view].ids[b.pixel])
    }

    fn is_foreground(&self, p: PixelRef) -> bool {
        self.labels[p.view].ids[p.pixel] != 0
    }
}

/// Cosine similarity of externally supplied per-pixel features, stored as a
/// `[views x height x width x F]` tensor. All-zero feature vectors mark
/// background.
pub struct FeatureAffinity {
    features: Tensor,
    dim: usize,
    per_view: usize,
}

impl FeatureAffinity {
    pub fn new(features: Tensor) -> Result<Self> {
        let [_, h, w, f] = features.shape()[..] else {
            return Err(Error::invalid("feature tensor must be [views, H, W, F]"));
        };
        Ok(Self {
            features,
            dim: f,
            per_view: h * w,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(read_jtns(std::io::BufReader::new(f))?.into_f64()?)
    }

    fn vector(&self, p: PixelRef) -> &[f64] {
        let start = (p.view * self.per_view + p.pixel) * self.dim;
        &self.features.data()[start..start + self.dim]
    }
}

impl AffinityProvider for FeatureAffinity {
    fn similarity(&self, a: PixelRef, b: PixelRef) -> f64 {
        let (x, y) = (self.vector(a), self.vector(b));
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 || ny == 0.0 {
            0.0
        } else {
            dot / (nx * ny)
        }
    }

    fn is_foreground(&self, p: PixelRef) -> bool {
        self.vector(p).iter().any(|&v| v != 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_affinity_cases() {
        assert_eq!(gt_affinity(3, 3), 1.0);
        assert_eq!(gt_affinity(3, 4), 0.0);
        assert_eq!(gt_affinity(0, 0), 0.0);
        assert_eq!(gt_affinity(0, 2), 0.0);
    }

    #[test]
    fn feature_cosine() {
        let t = Tensor::new(vec![1, 1, 3, 2], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let f = FeatureAffinity::new(t).unwrap();
        let p = |i| PixelRef { view: 0, pixel: i };
        assert!((f.similarity(p(0), p(1)) - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(f.similarity(p(0), p(2)), 0.0);
        assert!(!f.is_foreground(p(2)));
        assert!(f.is_foreground(p(0)));
    }
}
