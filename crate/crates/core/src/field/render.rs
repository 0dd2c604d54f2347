use rand::Rng;
use rayon::prelude::*;

use super::camera::{Camera, Ray};
use super::encoding::encode_into;
use super::geom;
use super::image::RgbImage;
use super::model::{field_graph, FieldConfig, FieldGraph, FieldParams, ParamVars};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{sigmoid, Tape, Tensor, Var};

/// Rays rendered per tape when mapping over whole images.
const CHUNK: usize = 128;

/// Everything the Jacobian and propagation code needs about one rendered ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub rgb: [f64; 3],
    pub gray: f64,
    /// Sample positions along the ray.
    pub t: Vec<f64>,
    /// Quadrature weights `w_k = T_k (1 - exp(-sigma_k delta_k))`.
    pub weights: Vec<f64>,
    /// Row-major `[S x H]` color hidden features.
    pub hidden: Vec<f64>,
    /// Row-major `[S x 3]` RGB pre-activations.
    pub logits: Vec<f64>,
}

impl RenderOutput {
    pub fn n_samples(&self) -> usize {
        self.t.len()
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.len() / self.t.len()
    }

    pub fn hidden_row(&self, k: usize) -> &[f64] {
        let h = self.hidden_width();
        &self.hidden[k * h..(k + 1) * h]
    }

    /// Color of the ray when the RGB weights are shifted by `delta`
    /// (row-major `3 x H`). Density and hidden features do not depend on that
    /// layer, so this equals a full re-render with the shifted weights.
    pub fn rgb_with_delta(&self, delta: &[f64]) -> [f64; 3] {
        let h = self.hidden_width();
        let mut rgb = [0.0; 3];
        for (k, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let hk = self.hidden_row(k);
            for c in 0..3 {
                let dz: f64 = delta[c * h..(c + 1) * h].iter().zip(hk).map(|(d, x)| d * x).sum();
                rgb[c] += w * sigmoid(self.logits[3 * k + c] + dz);
            }
        }
        rgb
    }

    pub fn gray_with_delta(&self, delta: &[f64]) -> f64 {
        let c = self.rgb_with_delta(delta);
        (c[0] + c[1] + c[2]) / 3.0
    }

    /// Per-sample gray radiance, optionally with shifted RGB weights.
    pub fn sample_gray(&self, k: usize, delta: Option<&[f64]>) -> f64 {
        let h = self.hidden_width();
        let hk = self.hidden_row(k);
        let mut acc = 0.0;
        for c in 0..3 {
            let dz: f64 = match delta {
                Some(d) => d[c * h..(c + 1) * h].iter().zip(hk).map(|(a, b)| a * b).sum(),
                None => 0.0,
            };
            acc += sigmoid(self.logits[3 * k + c] + dz);
        }
        acc / 3.0
    }
}

/// Stratified sample positions and encodings for a batch of rays.
pub struct SampleBatch {
    pub n_rays: usize,
    pub n_samples: usize,
    /// `[R x S]`
    pub t: Vec<f64>,
    /// `[R x S]`
    pub deltas: Vec<f64>,
    /// `[R*S x pos_dim]`
    pub enc_pos: Tensor,
    /// `[R*S x dir_dim]`
    pub enc_dir: Tensor,
}

/// Sample positions along one ray: bin midpoints when `seed` is `None`,
/// uniform jitter inside each bin otherwise.
pub fn sample_positions(ray: &Ray, n_samples: usize, seed: Option<u64>) -> (Vec<f64>, Vec<f64>) {
    let step = (ray.far - ray.near) / n_samples as f64;
    let t: Vec<f64> = match seed {
        None => (0..n_samples).map(|k| ray.near + (k as f64 + 0.5) * step).collect(),
        Some(s) => {
            let mut r = rng::stream(s, 0x5A11);
            (0..n_samples)
                .map(|k| ray.near + (k as f64 + r.gen::<f64>()) * step)
                .collect()
        }
    };
    let mut deltas: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    deltas.push(ray.far - t[n_samples - 1]);
    (t, deltas)
}

impl SampleBatch {
    pub fn new(config: &FieldConfig, rays: &[Ray], seeds: &[Option<u64>], n_samples: usize) -> Result<Self> {
        if n_samples < 2 {
            return Err(Error::invalid("need at least 2 samples per ray"));
        }
        if rays.is_empty() || rays.len() != seeds.len() {
            return Err(Error::invalid("one seed per ray required"));
        }
        let n = rays.len() * n_samples;
        let mut ts = Vec::with_capacity(n);
        let mut deltas = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n * config.pos_dim());
        let mut dir = Vec::with_capacity(n * config.dir_dim());
        for (ray, seed) in rays.iter().zip(seeds) {
            let (t, d) = sample_positions(ray, n_samples, *seed);
            let mut denc = Vec::with_capacity(config.dir_dim());
            denc.extend_from_slice(&ray.dir);
            encode_into(ray.dir, config.dir_freqs, &mut denc);
            for &tk in &t {
                let p = geom::at(ray.origin, ray.dir, tk);
                pos.extend_from_slice(&p);
                encode_into(p, config.pos_freqs, &mut pos);
                dir.extend_from_slice(&denc);
            }
            ts.extend(t);
            deltas.extend(d);
        }
        Ok(Self {
            n_rays: rays.len(),
            n_samples,
            t: ts,
            deltas,
            enc_pos: Tensor::matrix(n, config.pos_dim(), pos),
            enc_dir: Tensor::matrix(n, config.dir_dim(), dir),
        })
    }
}

/// Volume-rendered quantities recorded on a tape.
pub struct RenderGraph {
    pub field: FieldGraph,
    /// `[R x S]`
    pub weights: Var,
    /// `[R x 3]`
    pub rgb: Var,
    /// `[R x 1]`
    pub gray: Var,
}

/// Records MLP evaluation plus the discrete quadrature for a batch.
pub fn render_graph(tape: &mut Tape, config: &FieldConfig, vars: &ParamVars, batch: &SampleBatch) -> Result<RenderGraph> {
    let (r, s) = (batch.n_rays, batch.n_samples);
    let enc_pos = tape.constant(batch.enc_pos.clone());
    let enc_dir = tape.constant(batch.enc_dir.clone());
    let field = field_graph(tape, config, vars, enc_pos, enc_dir)?;

    let sigma = tape.reshape(field.density, &[r, s])?;
    let deltas = tape.constant(Tensor::matrix(r, s, batch.deltas.clone()));
    let optical = tape.mul(sigma, deltas)?;
    let neg = tape.scale(optical, -1.0);
    let survive = tape.exp(neg);
    let absorbed = tape.scale(survive, -1.0);
    let alpha = tape.add_scalar(absorbed, 1.0);
    let accum = tape.cumsum_exclusive(optical);
    let neg_accum = tape.scale(accum, -1.0);
    let transmittance = tape.exp(neg_accum);
    let weights = tape.mul(transmittance, alpha)?;

    let wcol = tape.reshape(weights, &[r * s, 1])?;
    let weighted = tape.mul_col(field.rgb, wcol)?;
    let rgb = tape.segment_sum(weighted, s)?;
    let total = tape.sum_rows(rgb);
    let gray = tape.scale(total, 1.0 / 3.0);
    Ok(RenderGraph {
        field,
        weights,
        rgb,
        gray,
    })
}

fn check_finite(tape: &Tape, g: &RenderGraph) -> Result<()> {
    let layers = [
        ("density", g.field.density),
        ("color hidden", g.field.hidden),
        ("rgb", g.field.logits),
        ("quadrature", g.weights),
    ];
    for (name, v) in layers {
        if !tape.value(v).all_finite() {
            return Err(Error::NonFinite { layer: name.into() });
        }
    }
    Ok(())
}

/// Renders a batch of rays on a single tape.
pub fn render_batch(params: &FieldParams, rays: &[Ray], seeds: &[Option<u64>], n_samples: usize) -> Result<Vec<RenderOutput>> {
    let config = params.config();
    let batch = SampleBatch::new(config, rays, seeds, n_samples)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, false);
    let g = render_graph(&mut tape, config, &vars, &batch)?;
    check_finite(&tape, &g)?;
    let (s, h) = (n_samples, config.color_width);
    let w = tape.value(g.weights).data();
    let hidden = tape.value(g.field.hidden).data();
    let logits = tape.value(g.field.logits).data();
    let rgb = tape.value(g.rgb).data();
    Ok((0..rays.len())
        .map(|i| RenderOutput {
            rgb: [rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]],
            gray: (rgb[3 * i] + rgb[3 * i + 1] + rgb[3 * i + 2]) / 3.0,
            t: batch.t[i * s..(i + 1) * s].to_vec(),
            weights: w[i * s..(i + 1) * s].to_vec(),
            hidden: hidden[i * s * h..(i + 1) * s * h].to_vec(),
            logits: logits[i * s * 3..(i + 1) * s * 3].to_vec(),
        })
        .collect())
}

/// Renders many rays, chunked and evaluated in parallel; order is preserved.
pub fn render_rays(params: &FieldParams, rays: &[Ray], seeds: &[Option<u64>], n_samples: usize) -> Result<Vec<RenderOutput>> {
    if rays.len() != seeds.len() {
        return Err(Error::invalid("one seed per ray required"));
    }
    let chunks: Vec<Result<Vec<RenderOutput>>> = rays
        .par_chunks(CHUNK)
        .zip(seeds.par_chunks(CHUNK))
        .map(|(r, s)| render_batch(params, r, s, n_samples))
        .collect();
    let mut out = Vec::with_capacity(rays.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Single-ray quadrature of the volume-rendering integral.
pub fn render_pixel(params: &FieldParams, ray: &Ray, n_samples: usize, seed: Option<u64>) -> Result<RenderOutput> {
    Ok(render_batch(params, std::slice::from_ref(ray), &[seed], n_samples)?.remove(0))
}

/// Per-pixel sample seed used by [`render_image`].
pub fn pixel_seed(seed: Option<u64>, pixel: usize) -> Option<u64> {
    seed.map(|s| rng::derive(s, pixel as u64))
}

/// Renders every pixel of `camera`. `seed = None` uses bin midpoints.
pub fn render_image(params: &FieldParams, camera: &Camera, n_samples: usize, seed: Option<u64>) -> Result<(RgbImage, Vec<RenderOutput>)> {
    let rays = camera.generate_rays();
    let seeds: Vec<Option<u64>> = (0..rays.len()).map(|i| pixel_seed(seed, i)).collect();
    let outs = render_rays(params, &rays, &seeds, n_samples)?;
    let img = RgbImage::new(camera.width, camera.height, outs.iter().map(|o| o.rgb).collect())?;
    Ok((img, outs))
}
