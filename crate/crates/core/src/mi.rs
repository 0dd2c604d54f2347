//! Mutual information between pixels under random weight perturbations:
//! the closed form in terms of Jacobian cosines and a Monte-Carlo histogram
//! estimate to check it against.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{render_batch, render_image, render_pixel, Camera, FieldParams, Ray, RenderOutput, RgbImage};
use crate::jacobian::{
    apply_perturbation, cosine_abs, pixel_jacobian_ad, pixel_jacobian_fast, sample_sphere_direction, PerturbationSpec,
    PixelJacobian,
};
use crate::rng;
use crate::tensor::Tensor;

/// Returned by [`closed_form_mi`] for (numerically) parallel Jacobians.
pub const MI_SATURATED: f64 = f64::INFINITY;
pub const DEFAULT_BINS: usize = 32;
/// Cosine used to cap closed-form values in displayed maps.
pub const DISPLAY_COS_CAP: f64 = 0.999;

/// `log(1 / sqrt(1 - c^2))`, the non-constant part of the perturbation MI.
pub fn closed_form_mi(cos_abs: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&cos_abs) {
        return Err(Error::invalid(format!("|cos| must lie in [0, 1], got {cos_abs}")));
    }
    if cos_abs >= 1.0 - 1e-12 {
        return Ok(MI_SATURATED);
    }
    Ok(-0.5 * (1.0 - cos_abs * cos_abs).ln())
}

/// Closed form capped at the display limit.
pub fn closed_form_clamped(cos_abs: f64) -> f64 {
    let cap = -0.5 * (1.0 - DISPLAY_COS_CAP * DISPLAY_COS_CAP).ln();
    closed_form_mi(cos_abs.clamp(0.0, 1.0)).map_or(cap, |v| v.min(cap))
}

/// Plug-in estimate from an equal-width 2-D histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramMi {
    pub mi: f64,
    pub entropy_x: f64,
    pub entropy_y: f64,
    /// Miller-Madow first-order bias of the plug-in MI (positive means the
    /// raw value overestimates).
    pub bias: f64,
    /// A variable had zero spread.
    pub degenerate: bool,
}

impl HistogramMi {
    /// Largest value the estimator can return for these marginals.
    pub fn upper_bound(&self) -> f64 {
        self.entropy_x.min(self.entropy_y)
    }
}

fn bin_index(v: f64, lo: f64, width: f64, bins: usize) -> usize {
    if width == 0.0 {
        return 0;
    }
    (((v - lo) / width) as usize).min(bins - 1)
}

fn entropy(counts: &[usize], n: f64) -> (f64, usize) {
    let mut h = 0.0;
    let mut occupied = 0;
    for &c in counts {
        if c > 0 {
            let p = c as f64 / n;
            h -= p * p.ln();
            occupied += 1;
        }
    }
    (h, occupied)
}

/// Equal-width histogram MI (nats). Bin edges are laid out relative to each
/// variable's minimum, so shifting a variable by a constant leaves the
/// estimate unchanged.
pub fn histogram_mi(x: &[f64], y: &[f64], bins: usize) -> Result<HistogramMi> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid("need two equally long, non-empty samples"));
    }
    if bins < 2 {
        return Err(Error::invalid("need at least 2 bins"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, (hi - lo) / bins as f64)
    };
    let (xl, xw) = span(x);
    let (yl, yw) = span(y);
    let mut joint = vec![0usize; bins * bins];
    let mut mx = vec![0usize; bins];
    let mut my = vec![0usize; bins];
    for (&a, &b) in x.iter().zip(y) {
        let i = bin_index(a, xl, xw, bins);
        let j = bin_index(b, yl, yw, bins);
        joint[i * bins + j] += 1;
        mx[i] += 1;
        my[j] += 1;
    }
    let n = x.len() as f64;
    let (hx, kx) = entropy(&mx, n);
    let (hy, ky) = entropy(&my, n);
    let (hxy, kxy) = entropy(&joint, n);
    Ok(HistogramMi {
        mi: hx + hy - hxy,
        entropy_x: hx,
        entropy_y: hy,
        bias: (kxy as f64 - kx as f64 - ky as f64 + 1.0) / (2.0 * n),
        degenerate: xw == 0.0 || yw == 0.0,
    })
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid("need two equally long samples of size >= 2"));
    }
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut s = 0;
        while s < idx.len() {
            let mut e = s;
            while e + 1 < idx.len() && v[idx[e + 1]] == v[idx[s]] {
                e += 1;
            }
            let avg = (s + e) as f64 / 2.0;
            for &i in &idx[s..=e] {
                r[i] = avg;
            }
            s = e + 1;
        }
        r
    };
    let (ra, rb) = (rank(a), rank(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::invalid("constant sample has no ranks"));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Something that maps a unit weight-space direction to the values of two
/// pixels.
pub trait ResponseModel: Sync {
    fn dim(&self) -> usize;
    fn respond(&self, direction: &[f64], sigma: f64) -> Result<(f64, f64)>;
    fn jacobians(&self) -> Result<(PixelJacobian, PixelJacobian)>;
}

/// Two pixels of a field whose perturbations act on the RGB weight layer;
/// responses come from cached forward values.
pub struct CachedPairModel {
    pub a: RenderOutput,
    pub b: RenderOutput,
    spec: PerturbationSpec,
}

impl CachedPairModel {
    pub fn new(a: RenderOutput, b: RenderOutput, spec: PerturbationSpec) -> Self {
        Self { a, b, spec }
    }
}

impl ResponseModel for CachedPairModel {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn respond(&self, direction: &[f64], sigma: f64) -> Result<(f64, f64)> {
        let delta: Vec<f64> = direction.iter().map(|v| v * sigma).collect();
        Ok((self.a.gray_with_delta(&delta), self.b.gray_with_delta(&delta)))
    }

    fn jacobians(&self) -> Result<(PixelJacobian, PixelJacobian)> {
        Ok((pixel_jacobian_fast(&self.a, &self.spec)?, pixel_jacobian_fast(&self.b, &self.spec)?))
    }
}

/// Two rays of a field under an arbitrary perturbation pattern; every draw
/// re-renders both rays.
pub struct RenderPairModel<'a> {
    pub params: &'a FieldParams,
    pub rays: [Ray; 2],
    pub spec: PerturbationSpec,
    pub n_samples: usize,
}

impl ResponseModel for RenderPairModel<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn respond(&self, direction: &[f64], sigma: f64) -> Result<(f64, f64)> {
        let p = apply_perturbation(self.params, &self.spec.with_sigma(sigma)?, direction)?;
        let out = render_batch(&p, &self.rays, &[None, None], self.n_samples)?;
        Ok((out[0].gray, out[1].gray))
    }

    fn jacobians(&self) -> Result<(PixelJacobian, PixelJacobian)> {
        Ok((
            pixel_jacobian_ad(self.params, &self.rays[0], &self.spec, self.n_samples, None)?,
            pixel_jacobian_ad(self.params, &self.rays[1], &self.spec, self.n_samples, None)?,
        ))
    }
}

/// Explicit linear map `(x, y) = (base_a + a.n s, base_b + b.n s)`.
pub struct LinearSurrogate {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub base: (f64, f64),
}

impl LinearSurrogate {
    /// Unit vectors in `R^d` whose cosine is exactly `cos`.
    pub fn with_cosine(d: usize, cos: f64) -> Result<Self> {
        if d < 2 || !(-1.0..=1.0).contains(&cos) {
            return Err(Error::invalid("need d >= 2 and cos in [-1, 1]"));
        }
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        a[0] = 1.0;
        b[0] = cos;
        b[1] = (1.0 - cos * cos).sqrt();
        Ok(Self { a, b, base: (0.5, 0.5) })
    }
}

impl ResponseModel for LinearSurrogate {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn respond(&self, direction: &[f64], sigma: f64) -> Result<(f64, f64)> {
        let dot = |v: &[f64]| v.iter().zip(direction).map(|(p, q)| p * q).sum::<f64>();
        Ok((self.base.0 + sigma * dot(&self.a), self.base.1 + sigma * dot(&self.b)))
    }

    fn jacobians(&self) -> Result<(PixelJacobian, PixelJacobian)> {
        Ok((PixelJacobian::new(self.a.clone())?, PixelJacobian::new(self.b.clone())?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiEstimate {
    pub empirical_mi: f64,
    /// Closed form up to its additive constant; `MI_SATURATED` when parallel,
    /// NaN when a Jacobian is degenerate.
    pub closed_form: f64,
    /// NaN when a Jacobian is degenerate.
    pub cos_abs: f64,
    pub n_draws: usize,
    pub sigma: f64,
    pub bins: usize,
    pub upper_bound: f64,
    pub bias: f64,
    /// Zero response spread or a zero-norm Jacobian.
    pub degenerate: bool,
}

impl MiEstimate {
    pub fn record(&self) -> String {
        format!(
            "cos_abs={:.8} closed_form={:.8} empirical_mi={:.8} n_draws={} sigma={} bins={} bias={:.6} degenerate={}",
            self.cos_abs, self.closed_form, self.empirical_mi, self.n_draws, self.sigma, self.bins, self.bias, self.degenerate
        )
    }
}

/// Draws `n_draws` directions, records both responses, and estimates MI.
pub fn estimate_with_model<M: ResponseModel>(model: &M, sigma: f64, n_draws: usize, bins: usize, seed: u64) -> Result<MiEstimate> {
    if n_draws < 1000 {
        return Err(Error::invalid("at least 1000 draws are required"));
    }
    let d = model.dim();
    let pairs: Vec<(f64, f64)> = (0..n_draws)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(seed, k as u64);
            let n = sample_sphere_direction(d, &mut r)?;
            model.respond(&n, sigma)
        })
        .collect::<Result<_>>()?;
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let h = histogram_mi(&x, &y, bins)?;
    let (ja, jb) = model.jacobians()?;
    let (cos, closed, degenerate_j) = match cosine_abs(&ja, &jb) {
        Ok(c) => (c, closed_form_mi(c)?, false),
        Err(Error::Degenerate { .. }) => (f64::NAN, f64::NAN, true),
        Err(e) => return Err(e),
    };
    Ok(MiEstimate {
        empirical_mi: h.mi,
        closed_form: closed,
        cos_abs: cos,
        n_draws,
        sigma,
        bins,
        upper_bound: h.upper_bound(),
        bias: h.bias,
        degenerate: h.degenerate || degenerate_j,
    })
}

/// Monte-Carlo MI between two pixels of a field under `spec`. Rays are
/// rendered at bin midpoints.
pub fn mc_mi_estimate(
    params: &FieldParams,
    ray_i: &Ray,
    ray_j: &Ray,
    spec: &PerturbationSpec,
    n_samples: usize,
    n_draws: usize,
    bins: usize,
    seed: u64,
) -> Result<MiEstimate> {
    spec.validate(params)?;
    if spec.is_designated(params) {
        let a = render_pixel(params, ray_i, n_samples, None)?;
        let b = render_pixel(params, ray_j, n_samples, None)?;
        estimate_with_model(&CachedPairModel::new(a, b, spec.clone()), spec.sigma, n_draws, bins, seed)
    } else {
        let model = RenderPairModel {
            params,
            rays: [*ray_i, *ray_j],
            spec: spec.clone(),
            n_samples,
        };
        estimate_with_model(&model, spec.sigma, n_draws, bins, seed)
    }
}

/// Closed-form MI between one source pixel and every pixel of a target view.
#[derive(Clone, Debug, PartialEq)]
pub struct MiMap {
    pub width: usize,
    pub height: usize,
    /// Capped closed-form MI; 0 for degenerate pixels.
    pub values: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl MiMap {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.height, self.width, self.values.clone())
    }

    /// Heatmap normalized by the display cap (black -> red -> yellow -> white).
    pub fn to_image(&self) -> RgbImage {
        let cap = closed_form_clamped(1.0);
        let pixels = self
            .values
            .iter()
            .map(|&v| {
                let t = (v / cap).clamp(0.0, 1.0) * 3.0;
                [t.min(1.0), (t - 1.0).clamp(0.0, 1.0), (t - 2.0).clamp(0.0, 1.0)]
            })
            .collect();
        RgbImage {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        self.to_image().write_ppm(path)
    }

    /// Among the top `frac` of labeled pixels by MI, the share carrying
    /// `label`. Background (label 0) and degenerate pixels are ignored.
    pub fn top_fraction_with_label(&self, labels: &[u32], label: u32, frac: f64) -> f64 {
        let mut idx: Vec<usize> = (0..self.values.len())
            .filter(|&i| labels[i] != 0 && !self.degenerate[i])
            .collect();
        if idx.is_empty() {
            return 0.0;
        }
        idx.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        let k = ((idx.len() as f64 * frac).ceil() as usize).max(1);
        idx[..k].iter().filter(|&&i| labels[i] == label).count() as f64 / k as f64
    }
}

/// Jacobians of every pixel of `camera` under `spec` (midpoint sampling).
pub fn view_jacobians(params: &FieldParams, camera: &Camera, spec: &PerturbationSpec, n_samples: usize) -> Result<Vec<PixelJacobian>> {
    if spec.is_designated(params) {
        let (_, outs) = render_image(params, camera, n_samples, None)?;
        outs.iter().map(|o| pixel_jacobian_fast(o, spec)).collect()
    } else {
        camera
            .generate_rays()
            .par_iter()
            .map(|r| pixel_jacobian_ad(params, r, spec, n_samples, None))
            .collect()
    }
}

/// Closed-form MI map of `source` against every pixel of `target`.
pub fn mi_map(
    params: &FieldParams,
    source: &Ray,
    target: &Camera,
    spec: &PerturbationSpec,
    n_samples: usize,
) -> Result<MiMap> {
    spec.validate(params)?;
    let src = if spec.is_designated(params) {
        pixel_jacobian_fast(&render_pixel(params, source, n_samples, None)?, spec)?
    } else {
        pixel_jacobian_ad(params, source, spec, n_samples, None)?
    };
    if src.is_degenerate() {
        return Err(Error::Degenerate { norm: src.norm });
    }
    let js = view_jacobians(params, target, spec, n_samples)?;
    let mut values = Vec::with_capacity(js.len());
    let mut degenerate = Vec::with_capacity(js.len());
    for j in &js {
        match cosine_abs(&src, j) {
            Ok(c) => {
                values.push(closed_form_clamped(c));
                degenerate.push(false);
            }
            Err(_) => {
                values.push(0.0);
                degenerate.push(true);
            }
        }
    }
    Ok(MiMap {
        width: target.width,
        height: target.height,
        values,
        degenerate,
    })
}

/// Empirical estimates for a subset of target pixels.
pub fn mi_map_empirical(
    params: &FieldParams,
    source: &Ray,
    target: &Camera,
    pixels: &[usize],
    spec: &PerturbationSpec,
    n_samples: usize,
    n_draws: usize,
    bins: usize,
    seed: u64,
) -> Result<Vec<MiEstimate>> {
    let rays = target.generate_rays();
    pixels
        .iter()
        .map(|&p| {
            let r = rays
                .get(p)
                .ok_or_else(|| Error::invalid(format!("pixel {p} outside target view")))?;
            mc_mi_estimate(params, source, r, spec, n_samples, n_draws, bins, rng::derive(seed, p as u64))
        })
        .collect()
}

/// One line per estimate.
pub fn write_records(path: &Path, estimates: &[MiEstimate]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for e in estimates {
        writeln!(f, "{}", e.record()).map_err(|err| Error::io(path, err))?;
    }
    f.flush().map_err(|err| Error::io(path, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn closed_form_values() {
        assert_eq!(closed_form_mi(0.0).unwrap(), 0.0);
        assert!((closed_form_mi(0.6).unwrap() - 0.22314355).abs() < 1e-8);
        assert_eq!(closed_form_mi(1.0).unwrap(), MI_SATURATED);
        assert_eq!(closed_form_mi(1.0 - 1e-13).unwrap(), MI_SATURATED);
        assert!(closed_form_mi(1.2).is_err());
        assert!(closed_form_mi(-0.1).is_err());
        assert!(closed_form_clamped(1.0).is_finite());
    }

    #[test]
    fn self_pair_hits_upper_bound() {
        let mut r = rng::stream(1, 1);
        let x: Vec<f64> = (0..10_000).map(|_| r.sample(StandardNormal)).collect();
        let h = histogram_mi(&x, &x, 32).unwrap();
        assert!((h.mi - h.upper_bound()).abs() <= 0.05 * h.upper_bound());
        assert!(h.upper_bound() <= (32f64).ln());
    }

    #[test]
    fn shift_leaves_estimate_unchanged() {
        let mut r = rng::stream(2, 1);
        let x: Vec<f64> = (0..5000).map(|_| r.gen::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + r.gen::<f64>() * 0.2).collect();
        let shifted: Vec<f64> = y.iter().map(|v| v + 8.0).collect();
        let a = histogram_mi(&x, &y, 16).unwrap();
        let b = histogram_mi(&x, &shifted, 16).unwrap();
        assert!((a.mi - b.mi).abs() < 1e-12);
    }

    #[test]
    fn constant_sample_is_degenerate() {
        let x = vec![1.0; 100];
        let y: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let h = histogram_mi(&x, &y, 8).unwrap();
        assert!(h.degenerate);
        assert!(h.mi.abs() < 1e-12);
    }

    #[test]
    fn orthogonal_surrogate_has_near_zero_mi() {
        let s = LinearSurrogate::with_cosine(48, 0.0).unwrap();
        let e = estimate_with_model(&s, 1e-3, 100_000, 32, 3).unwrap();
        assert!(e.empirical_mi < 0.05, "{}", e.empirical_mi);
        assert_eq!(e.closed_form, 0.0);
    }

    #[test]
    fn linear_surrogate_matches_closed_form() {
        let zero = estimate_with_model(&LinearSurrogate::with_cosine(48, 0.0).unwrap(), 1e-3, 10_000, 32, 4).unwrap();
        let six = estimate_with_model(&LinearSurrogate::with_cosine(48, 0.6).unwrap(), 1e-3, 10_000, 32, 4).unwrap();
        assert!((six.cos_abs - 0.6).abs() < 1e-12);
        let diff = (six.empirical_mi - zero.empirical_mi) - six.closed_form;
        assert!(diff.abs() < 0.05, "offset-corrected error {diff}");
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 1.0, 2.0], &[1.0, 1.0, 2.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn too_few_draws_rejected() {
        let s = LinearSurrogate::with_cosine(4, 0.5).unwrap();
        assert!(estimate_with_model(&s, 1e-3, 999, 32, 1).is_err());
    }

    #[test]
    fn estimates_are_symmetric_and_seeded() {
        let a = LinearSurrogate::with_cosine(16, 0.8).unwrap();
        let b = LinearSurrogate {
            a: a.b.clone(),
            b: a.a.clone(),
            base: (0.5, 0.5),
        };
        let ea = estimate_with_model(&a, 1e-3, 10_000, 32, 5).unwrap();
        let eb = estimate_with_model(&b, 1e-3, 10_000, 32, 5).unwrap();
        assert!((ea.empirical_mi - eb.empirical_mi).abs() < 0.05);
        assert_eq!(ea, estimate_with_model(&a, 1e-3, 10_000, 32, 5).unwrap());
    }
}
