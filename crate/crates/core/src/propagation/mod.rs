//! Label propagation by perturbing the RGB weight layer along seed-pixel
//! Jacobians, plus entity re-coloring.

mod dense;
mod mlp;

pub use dense::{adaptive_gradient_sampling, density_patch, reduce_max, AdaptiveConfig, AdaptiveResult, Selection};
pub use mlp::{train_aggregation_mlp, AggregationMlp, MlpConfig};

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{render_image, render_pixel, Camera, FieldParams, RenderOutput, RgbImage};
use crate::jacobian::{channel_jacobians, gray_jacobian, PixelJacobian};
use crate::rng;
use crate::scene::{LabelImage, LabelMode};
use crate::tensor::{write_jtns, Stored, Tensor};

pub const DEFAULT_SIGMA: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Difference of rendered pixels.
    TwoD,
    /// Volume-rendered per-sample differences.
    ThreeD,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TwoD => "2d",
            Self::ThreeD => "3d",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" => Ok(Self::TwoD),
            "3d" => Ok(Self::ThreeD),
            _ => Err(Error::invalid(format!("unknown variant `{s}` (2d | 3d)"))),
        }
    }
}

/// Labeled pixels of one source view.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedLabels {
    pub view: usize,
    /// `(pixel index, class id)`
    pub seeds: Vec<(usize, u32)>,
    pub mode: LabelMode,
}

impl SeedLabels {
    /// Sparse seeds: exactly one pixel per class.
    pub fn sparse(view: usize, seeds: Vec<(usize, u32)>, mode: LabelMode) -> Result<Self> {
        let mut classes: Vec<u32> = seeds.iter().map(|s| s.1).collect();
        classes.sort_unstable();
        if classes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("sparse seeds need exactly one pixel per class"));
        }
        if classes.first() == Some(&0) || classes.is_empty() {
            return Err(Error::invalid("seed classes must be >= 1 and non-empty"));
        }
        Ok(Self { view, seeds, mode })
    }

    /// One uniformly chosen pixel for every class present in `labels`.
    pub fn sample_sparse(labels: &LabelImage, view: usize, mode: LabelMode, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, 0x5EED);
        let seeds = labels
            .classes()
            .into_iter()
            .map(|c| {
                let pix: Vec<usize> = (0..labels.len()).filter(|&i| labels.ids[i] == c).collect();
                (pix[r.gen_range(0..pix.len())], c)
            })
            .collect();
        Self::sparse(view, seeds, mode)
    }

    /// Sorted distinct classes.
    pub fn classes(&self) -> Vec<u32> {
        let mut c: Vec<u32> = self.seeds.iter().map(|s| s.1).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Parses `view_id u v class_id` lines for `view`.
    pub fn parse(text: &str, view: usize, width: usize, height: usize, mode: LabelMode) -> Result<Self> {
        let mut seeds = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format {
                    what: "seeds file",
                    detail: format!("line {}: expected non-negative integers", i + 1),
                })?;
            let [v, u, row, class] = f[..] else {
                return Err(Error::Format {
                    what: "seeds file",
                    detail: format!("line {}: expected `view_id u v class_id`", i + 1),
                });
            };
            if u >= width || row >= height {
                return Err(Error::invalid(format!("seed ({u}, {row}) outside {width}x{height}")));
            }
            if v == view {
                seeds.push((row * width + u, class as u32));
            }
        }
        Self::sparse(view, seeds, mode)
    }

    pub fn load(path: &Path, view: usize, width: usize, height: usize, mode: LabelMode) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, view, width, height, mode)
    }
}

/// K-way responses and the argmax labels of a target view.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationResult {
    pub width: usize,
    pub height: usize,
    /// Class id of each logit channel.
    pub classes: Vec<u32>,
    /// Pixel-major `[P x K]` non-negative responses.
    pub logits: Vec<f64>,
    pub labels: LabelImage,
    pub sigma: f64,
    pub variant: Variant,
    /// Classes whose seed Jacobian was degenerate.
    pub unpropagatable: Vec<u32>,
    /// Every logit is zero.
    pub empty: bool,
    /// Pixels where the top logit was shared.
    pub ties: usize,
}

impl PropagationResult {
    pub fn k(&self) -> usize {
        self.classes.len()
    }

    pub fn pixel_logits(&self, p: usize) -> &[f64] {
        let k = self.k();
        &self.logits[p * k..(p + 1) * k]
    }

    /// Top-1 minus top-2 response per pixel.
    pub fn margins(&self) -> Vec<f64> {
        (0..self.width * self.height)
            .map(|p| {
                let mut v = self.pixel_logits(p).to_vec();
                v.sort_by(|a, b| b.total_cmp(a));
                v[0] - v.get(1).copied().unwrap_or(0.0)
            })
            .collect()
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        let t = Tensor::new(vec![self.height, self.width, self.k().max(1)], if self.k() == 0 { vec![0.0; self.width * self.height] } else { self.logits.clone() })?;
        let path = dir.join(format!("{stem}_logits.jtns"));
        let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_jtns(std::io::BufWriter::new(f), &Stored::F64(t))?;
        self.labels.save(&dir.join(format!("{stem}_labels.jtns")))?;
        palette_image(&self.labels).write_ppm(&dir.join(format!("{stem}_labels.ppm")))
    }
}

/// Fixed 16-color palette; id 0 is black, other ids cycle.
pub const PALETTE: [[u8; 3]; 16] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [128, 0, 0],
    [255, 255, 255],
];

pub fn palette_image(labels: &LabelImage) -> RgbImage {
    let pixels = labels
        .ids
        .iter()
        .map(|&id| {
            let c = if id == 0 { PALETTE[0] } else { PALETTE[1 + (id as usize - 1) % 15] };
            [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0]
        })
        .collect();
    RgbImage {
        width: labels.width,
        height: labels.height,
        pixels,
    }
}

/// Unit Jacobian direction of a cached pixel; `None` if degenerate.
pub fn seed_direction(out: &RenderOutput) -> Option<Vec<f64>> {
    PixelJacobian::new(gray_jacobian(out)).ok()?.normalized().ok()
}

/// Response of one cached target pixel to an RGB-layer shift.
fn response(out: &RenderOutput, delta: &[f64], variant: Variant) -> f64 {
    match variant {
        Variant::TwoD => (out.gray_with_delta(delta) - out.gray_with_delta(&vec![0.0; delta.len()])).abs(),
        Variant::ThreeD => out
            .weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(k, &w)| w * (out.sample_gray(k, Some(delta)) - out.sample_gray(k, None)).abs())
            .sum(),
    }
}

/// Pixel-major `[P x K]` responses for unit directions scaled by `sigma`;
/// `None` directions give zero channels.
pub fn response_logits(target: &[RenderOutput], directions: &[Option<Vec<f64>>], sigma: f64, variant: Variant) -> Vec<f64> {
    let deltas: Vec<Option<Vec<f64>>> = directions
        .iter()
        .map(|d| d.as_ref().map(|v| v.iter().map(|x| x * sigma).collect()))
        .collect();
    let k = deltas.len();
    let mut logits = vec![0.0; target.len() * k];
    logits.par_chunks_mut(k.max(1)).zip(target.par_iter()).for_each(|(row, out)| {
        if k == 0 {
            return;
        }
        for (slot, d) in row.iter_mut().zip(&deltas) {
            if let Some(d) = d {
                *slot = response(out, d, variant);
            }
        }
    });
    logits
}

/// Argmax over channels with the lowest index winning ties; 0 where every
/// logit is zero. Returns the label ids and the tie count.
pub fn argmax_labels(logits: &[f64], classes: &[u32], width: usize, height: usize) -> (LabelImage, usize) {
    let k = classes.len();
    let mut ties = 0;
    let ids = (0..width * height)
        .map(|p| {
            if k == 0 {
                return 0;
            }
            let row = &logits[p * k..(p + 1) * k];
            let mut best = 0;
            for i in 1..k {
                if row[i] > row[best] {
                    best = i;
                }
            }
            if row[best] <= 0.0 {
                return 0;
            }
            if row.iter().enumerate().any(|(i, &v)| i != best && v == row[best]) {
                ties += 1;
            }
            classes[best]
        })
        .collect();
    (LabelImage { width, height, ids }, ties)
}

/// Builds a result from per-class directions over a cached target render.
pub fn propagate_cached(target: &[RenderOutput], width: usize, height: usize, classes: &[u32], directions: &[Option<Vec<f64>>], sigma: f64, variant: Variant) -> Result<PropagationResult> {
    if target.len() != width * height || classes.len() != directions.len() {
        return Err(Error::invalid("target cache or direction count mismatch"));
    }
    let logits = response_logits(target, directions, sigma, variant);
    let (labels, ties) = argmax_labels(&logits, classes, width, height);
    if ties > 0 {
        log::debug!("{ties} argmax ties resolved toward the lowest class");
    }
    Ok(PropagationResult {
        width,
        height,
        classes: classes.to_vec(),
        empty: logits.iter().all(|&v| v == 0.0),
        logits,
        labels,
        sigma,
        variant,
        unpropagatable: classes
            .iter()
            .zip(directions)
            .filter(|(_, d)| d.is_none())
            .map(|(c, _)| *c)
            .collect(),
        ties,
    })
}

/// Seed-pixel directions rendered from the source camera.
pub fn seed_directions(params: &FieldParams, source: &Camera, seeds: &SeedLabels, n_samples: usize) -> Result<(Vec<u32>, Vec<Option<Vec<f64>>>)> {
    let rays = source.generate_rays();
    let mut pairs: Vec<(u32, usize)> = seeds.seeds.iter().map(|&(p, c)| (c, p)).collect();
    pairs.sort_unstable();
    let mut classes = Vec::with_capacity(pairs.len());
    let mut dirs = Vec::with_capacity(pairs.len());
    for (c, p) in pairs {
        let ray = rays
            .get(p)
            .ok_or_else(|| Error::invalid(format!("seed pixel {p} outside source view")))?;
        classes.push(c);
        dirs.push(seed_direction(&render_pixel(params, ray, n_samples, None)?));
    }
    Ok((classes, dirs))
}

fn propagate_sparse(params: &FieldParams, source: &Camera, seeds: &SeedLabels, target: &Camera, sigma: f64, n_samples: usize, variant: Variant) -> Result<PropagationResult> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    let (classes, dirs) = seed_directions(params, source, seeds, n_samples)?;
    let (_, outs) = render_image(params, target, n_samples, None)?;
    propagate_cached(&outs, target.width, target.height, &classes, &dirs, sigma, variant)
}

/// `R_k = |I_k - I|` on gray values of the rendered target view.
pub fn propagate_sparse_2d(params: &FieldParams, source: &Camera, seeds: &SeedLabels, target: &Camera, sigma: f64, n_samples: usize) -> Result<PropagationResult> {
    propagate_sparse(params, source, seeds, target, sigma, n_samples, Variant::TwoD)
}

/// Per-sample gray differences volume-rendered with the unperturbed weights.
pub fn propagate_sparse_3d(params: &FieldParams, source: &Camera, seeds: &SeedLabels, target: &Camera, sigma: f64, n_samples: usize) -> Result<PropagationResult> {
    propagate_sparse(params, source, seeds, target, sigma, n_samples, Variant::ThreeD)
}

/// Adds `delta` to the RGB weight matrix.
pub fn shift_designated(params: &FieldParams, delta: &[f64]) -> Result<FieldParams> {
    let r = params.designated_range();
    if delta.len() != r.len() {
        return Err(Error::invalid("delta does not match the rgb layer"));
    }
    let mut p = params.clone();
    for (i, d) in r.zip(delta) {
        if *d != 0.0 {
            p.flat_add(i, *d)?;
        }
    }
    Ok(p)
}

/// Shifts the RGB layer by `sum_c color_delta_c * sigma * unit(dI_c/dW)` of
/// the seed pixel and renders `target`.
pub fn recolor_entity(params: &FieldParams, source: &Camera, seed_pixel: usize, color_delta: [f64; 3], sigma: f64, target: &Camera, n_samples: usize) -> Result<RgbImage> {
    let ray = source
        .generate_rays()
        .get(seed_pixel)
        .copied()
        .ok_or_else(|| Error::invalid(format!("seed pixel {seed_pixel} outside source view")))?;
    let out = render_pixel(params, &ray, n_samples, None)?;
    let chans = channel_jacobians(&out);
    let mut delta = vec![0.0; chans[0].len()];
    for (c, j) in chans.into_iter().enumerate() {
        if color_delta[c] == 0.0 {
            continue;
        }
        let unit = PixelJacobian::new(j)?.normalized()?;
        for (d, u) in delta.iter_mut().zip(unit) {
            *d += color_delta[c] * sigma * u;
        }
    }
    let shifted = shift_designated(params, &delta)?;
    Ok(render_image(&shifted, target, n_samples, None)?.0)
}
