//! Per-pixel Jacobians of the rendered gray value with respect to a chosen
//! parameter subset, and weight-space perturbations along them.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::{render_graph, FieldParams, Ray, RenderOutput, SampleBatch, RGB_WEIGHT};
use crate::rng;
use crate::tensor::{Tape, Tensor};

/// Below this norm a Jacobian carries no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbationPattern {
    RandomNeurons,
    SingleLayer,
    LayerBlock,
}

impl std::str::FromStr for PerturbationPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-neurons" => Ok(Self::RandomNeurons),
            "single-layer" => Ok(Self::SingleLayer),
            "layer-block" => Ok(Self::LayerBlock),
            _ => Err(Error::invalid(format!(
                "unknown pattern `{s}` (random-neurons | single-layer | layer-block)"
            ))),
        }
    }
}

/// The perturbed parameter subset and the perturbation magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationSpec {
    pub pattern: PerturbationPattern,
    /// Indices into [`FieldParams::flatten`].
    pub indices: Vec<usize>,
    pub sigma: f64,
    /// Layer names covered by layer patterns.
    pub layers: Vec<String>,
}

impl PerturbationSpec {
    pub fn new(pattern: PerturbationPattern, indices: Vec<usize>, sigma: f64, params: &FieldParams) -> Result<Self> {
        let spec = Self {
            pattern,
            indices,
            sigma,
            layers: Vec::new(),
        };
        spec.validate(params)?;
        Ok(spec)
    }

    /// Whole `rgb.weight` matrix, the layer shaping and propagation act on.
    pub fn designated(params: &FieldParams, sigma: f64) -> Result<Self> {
        Self::single_layer(params, RGB_WEIGHT, sigma)
    }

    pub fn single_layer(params: &FieldParams, layer: &str, sigma: f64) -> Result<Self> {
        let mut s = Self::layer_block(params, &[layer], sigma)?;
        s.pattern = PerturbationPattern::SingleLayer;
        Ok(s)
    }

    pub fn layer_block(params: &FieldParams, layers: &[&str], sigma: f64) -> Result<Self> {
        let mut indices = Vec::new();
        for l in layers {
            let r = params
                .range_of(l)
                .ok_or_else(|| Error::invalid(format!("no parameter tensor named {l}")))?;
            indices.extend(r);
        }
        let mut s = Self::new(PerturbationPattern::LayerBlock, indices, sigma, params)?;
        s.layers = layers.iter().map(|l| l.to_string()).collect();
        Ok(s)
    }

    /// `d` distinct parameters drawn uniformly from the whole network.
    pub fn random_neurons(params: &FieldParams, d: usize, sigma: f64, seed: u64) -> Result<Self> {
        let n = params.flat_len();
        if d > n {
            return Err(Error::invalid(format!("cannot pick {d} of {n} parameters")));
        }
        let mut r = rng::stream(seed, 0x4E55);
        let mut indices = sample(&mut r, n, d).into_vec();
        indices.sort_unstable();
        Self::new(PerturbationPattern::RandomNeurons, indices, sigma, params)
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(format!("sigma must be finite and non-negative, got {sigma}")));
        }
        Ok(Self { sigma, ..self.clone() })
    }

    pub fn validate(&self, params: &FieldParams) -> Result<()> {
        if self.indices.len() < 2 {
            return Err(Error::invalid("perturbation needs at least 2 parameters"));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::invalid(format!("sigma must be finite and non-negative, got {}", self.sigma)));
        }
        let n = params.flat_len();
        let mut seen = BTreeSet::new();
        for &i in &self.indices {
            if i >= n {
                return Err(Error::invalid(format!("parameter index {i} out of range ({n})")));
            }
            if !seen.insert(i) {
                return Err(Error::invalid(format!("duplicate parameter index {i}")));
            }
        }
        Ok(())
    }

    /// True when the subset is exactly the `3 x H` RGB weight matrix in
    /// storage order.
    pub fn is_designated(&self, params: &FieldParams) -> bool {
        let r = params.designated_range();
        self.indices.len() == r.len() && self.indices.iter().copied().eq(r)
    }
}

/// Gradient of one pixel's gray value with respect to the spec's subset.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelJacobian {
    pub values: Vec<f64>,
    pub norm: f64,
}

impl PixelJacobian {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { layer: "jacobian".into() });
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, norm })
    }

    pub fn is_degenerate(&self) -> bool {
        self.norm <= DEGENERATE_NORM
    }

    /// Unit-length copy; errors on a degenerate Jacobian.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        if self.is_degenerate() {
            return Err(Error::Degenerate { norm: self.norm });
        }
        Ok(self.values.iter().map(|v| v / self.norm).collect())
    }
}

/// Reverse-mode Jacobian through quadrature and MLP.
pub fn pixel_jacobian_ad(params: &FieldParams, ray: &Ray, spec: &PerturbationSpec, n_samples: usize, seed: Option<u64>) -> Result<PixelJacobian> {
    spec.validate(params)?;
    let config = params.config();
    let batch = SampleBatch::new(config, std::slice::from_ref(ray), &[seed], n_samples)?;
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, true);
    let g = render_graph(&mut tape, config, &vars, &batch)?;
    let gray = tape.sum_all(g.gray);
    let grads = tape.backward(gray)?;
    let flat = params.flatten_grads(&grads);
    PixelJacobian::new(spec.indices.iter().map(|&i| flat[i]).collect())
}

/// Closed-form Jacobian on the RGB weight layer from cached forward values:
/// entry `(c, j)` is `(1/3) sum_k w_k s'(z_kc) h_kj`.
pub fn pixel_jacobian_fast(out: &RenderOutput, spec: &PerturbationSpec) -> Result<PixelJacobian> {
    let h = out.hidden_width();
    let on_rgb = matches!(spec.pattern, PerturbationPattern::SingleLayer | PerturbationPattern::LayerBlock)
        && spec.layers.len() == 1
        && spec.layers[0] == RGB_WEIGHT;
    if !on_rgb || spec.dim() != 3 * h {
        return Err(Error::invalid("fast Jacobian requires the single-layer rgb.weight pattern"));
    }
    PixelJacobian::new(gray_jacobian(out))
}

/// Row-major `3 x H` gray Jacobian without validation.
pub(crate) fn gray_jacobian(out: &RenderOutput) -> Vec<f64> {
    let [r, g, b] = channel_jacobians(out);
    r.iter().zip(&g).zip(&b).map(|((x, y), z)| (x + y + z) / 3.0).collect()
}

/// Per-channel Jacobians `d rgb_c / d W_rgb`, each a row-major `3 x H`
/// vector that is non-zero only in row `c`.
pub fn channel_jacobians(out: &RenderOutput) -> [Vec<f64>; 3] {
    let h = out.hidden_width();
    let mut rows = [vec![0.0; h], vec![0.0; h], vec![0.0; h]];
    for (k, &w) in out.weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let hk = out.hidden_row(k);
        for (c, row) in rows.iter_mut().enumerate() {
            let s = crate::tensor::sigmoid(out.logits[3 * k + c]);
            let coef = w * s * (1.0 - s);
            for (r, x) in row.iter_mut().zip(hk) {
                *r += coef * x;
            }
        }
    }
    let mut full = [vec![0.0; 3 * h], vec![0.0; 3 * h], vec![0.0; 3 * h]];
    for c in 0..3 {
        full[c][c * h..(c + 1) * h].copy_from_slice(&rows[c]);
    }
    full
}

/// Fast gray Jacobians for many cached rays as a `[N x 3H]` tensor.
pub fn jacobian_matrix(outs: &[RenderOutput]) -> Result<Tensor> {
    let Some(first) = outs.first() else {
        return Err(Error::invalid("no render outputs"));
    };
    let d = 3 * first.hidden_width();
    let mut data = Vec::with_capacity(outs.len() * d);
    for o in outs {
        data.extend(gray_jacobian(o));
    }
    Tensor::new(vec![outs.len(), d], data)
}

/// `|a.b| / (|a| |b|)`.
pub fn cosine_abs(a: &PixelJacobian, b: &PixelJacobian) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::invalid("Jacobians of different length"));
    }
    for j in [a, b] {
        if j.is_degenerate() {
            return Err(Error::Degenerate { norm: j.norm });
        }
    }
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>();
    let ab = dot(&a.values, &b.values);
    let denom = (dot(&a.values, &a.values) * dot(&b.values, &b.values)).sqrt();
    Ok((ab.abs() / denom).min(1.0))
}

/// `theta^D <- theta^D + sigma * direction`; every other entry is untouched.
pub fn apply_perturbation(params: &FieldParams, spec: &PerturbationSpec, direction: &[f64]) -> Result<FieldParams> {
    if direction.len() != spec.dim() {
        return Err(Error::invalid(format!(
            "direction has {} entries, spec has {}",
            direction.len(),
            spec.dim()
        )));
    }
    let n = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("direction must be unit length, got norm {n}")));
    }
    let mut out = params.clone();
    for (&i, &d) in spec.indices.iter().zip(direction) {
        out.flat_add(i, spec.sigma * d)?;
    }
    Ok(out)
}

/// Isotropic unit vector in `R^d` (normalized standard normal).
pub fn sample_sphere_direction<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d < 2 {
        return Err(Error::invalid("sphere dimension must be at least 2"));
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-300 {
            return Ok(v.into_iter().map(|x| x / n).collect());
        }
    }
}
