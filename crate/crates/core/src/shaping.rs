//! Photometric training and Jacobian shaping of the radiance field.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::field::{pixel_seed, render_batch, render_graph, FieldParams, Ray, RenderOutput, SampleBatch};
use crate::jacobian::{cosine_abs, gray_jacobian, pixel_jacobian_ad, PerturbationSpec, PixelJacobian};
use crate::optim::Adam;
use crate::rng;
use crate::scene::{AffinityProvider, LabelMode, PixelRef, ViewSet};
use crate::tensor::{Tape, Tensor, Var};

const NERF_STREAM: u64 = 0x4E52;
const MIG_STREAM: u64 = 0x4D16;

/// Photometric (reconstruction-only) training settings.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotometricConfig {
    pub steps: usize,
    pub batch_rays: usize,
    pub lr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_rays: 64,
            lr: 5e-4,
            n_samples: 64,
            seed: 0,
        }
    }
}

/// Where pair similarities come from.
#[derive(Clone, Debug, PartialEq)]
pub enum AffinitySource {
    GroundTruth(LabelMode),
    /// JTNS `[views x H x W x F]` per-pixel features of the training views.
    FeatureFile(PathBuf),
}

/// Adaptive positive threshold: moved by `step` whenever the positive ratio
/// leaves `band`, and kept inside `interval`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdRule {
    pub interval: (f64, f64),
    pub step: f64,
    pub band: (f64, f64),
}

impl Default for ThresholdRule {
    fn default() -> Self {
        Self {
            interval: (0.5, 0.8),
            step: 0.001,
            band: (0.05, 0.15),
        }
    }
}

impl ThresholdRule {
    pub fn update(&self, threshold: f64, pos_ratio: f64) -> f64 {
        let t = if pos_ratio < self.band.0 {
            threshold - self.step
        } else if pos_ratio > self.band.1 {
            threshold + self.step
        } else {
            threshold
        };
        t.clamp(self.interval.0, self.interval.1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapingConfig {
    /// Weight of the contrastive term.
    pub lambda: f64,
    /// Weight of the norm penalty.
    pub gamma: f64,
    pub tau: f64,
    /// Foreground rays per contrastive batch; each is an anchor against the
    /// rest.
    pub batch_rays: usize,
    /// Rays per step for the reconstruction term.
    pub nerf_batch_rays: usize,
    pub threshold: ThresholdRule,
    pub threshold_init: f64,
    pub lr: f64,
    pub epochs: usize,
    pub n_samples: usize,
    pub affinity: AffinitySource,
    pub seed: u64,
    /// Compare the closed-form Jacobian against the AD path every this many
    /// steps (0 disables).
    pub validate_every: usize,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.01,
            gamma: 0.01,
            tau: 0.1,
            batch_rays: 64,
            nerf_batch_rays: 64,
            threshold: ThresholdRule::default(),
            threshold_init: 0.65,
            lr: 5e-4,
            epochs: 10_000,
            n_samples: 64,
            affinity: AffinitySource::GroundTruth(LabelMode::Semantic),
            seed: 0,
            validate_every: 500,
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda >= 0.0 && self.gamma >= 0.0) {
            return bad("lambda and gamma must be non-negative");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        let t = &self.threshold;
        if !(t.interval.0 < t.interval.1) || !(t.band.0 < t.band.1) || !(t.step > 0.0) {
            return bad("threshold interval and ratio band must be increasing, step positive");
        }
        if self.batch_rays < 2 || self.nerf_batch_rays == 0 || self.epochs == 0 {
            return bad("batch sizes and epochs must be positive (contrastive batch >= 2)");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }

    /// The photometric settings the reconstruction term of shaping uses.
    pub fn photometric(&self) -> PhotometricConfig {
        PhotometricConfig {
            steps: self.epochs,
            batch_rays: self.nerf_batch_rays,
            lr: self.lr,
            n_samples: self.n_samples,
            seed: self.seed,
        }
    }
}

/// Every pixel of a view set as a ray with its color target.
pub struct RaySet {
    pub rays: Vec<Ray>,
    pub rgb: Vec<[f64; 3]>,
    pub refs: Vec<PixelRef>,
}

impl RaySet {
    pub fn from_views(views: &ViewSet) -> Self {
        let mut rays = Vec::new();
        let mut rgb = Vec::new();
        let mut refs = Vec::new();
        for (v, (cam, gt)) in views.cameras.iter().zip(&views.views).enumerate() {
            for (p, ray) in cam.generate_rays().into_iter().enumerate() {
                rays.push(ray);
                rgb.push(gt.image.pixels[p]);
                refs.push(PixelRef { view: v, pixel: p });
            }
        }
        Self { rays, rgb, refs }
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }
}

/// Anchors with their positive and negative partners, as indices into one
/// ray batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub anchors: Vec<usize>,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
    /// Row-major `n x n` similarities used for the split.
    pub scores: Vec<f64>,
}

impl PairBatch {
    pub fn n_pairs(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn positive_ratio(&self) -> f64 {
        let pos = self.n_pairs();
        let total = pos + self.negatives.iter().map(Vec::len).sum::<usize>();
        if total == 0 {
            0.0
        } else {
            pos as f64 / total as f64
        }
    }
}

/// Splits every other batch member into positive (`score > threshold`) or
/// negative for each anchor, then moves the threshold.
pub fn select_pairs(scores: &[f64], n: usize, threshold: f64, rule: &ThresholdRule) -> Result<(PairBatch, f64)> {
    if scores.len() != n * n {
        return Err(Error::invalid(format!("{} scores for {n} rays", scores.len())));
    }
    let mut positives = Vec::with_capacity(n);
    let mut negatives = Vec::with_capacity(n);
    for i in 0..n {
        let (mut p, mut q) = (Vec::new(), Vec::new());
        for j in (0..n).filter(|&j| j != i) {
            if scores[i * n + j] > threshold {
                p.push(j);
            } else {
                q.push(j);
            }
        }
        positives.push(p);
        negatives.push(q);
    }
    let batch = PairBatch {
        anchors: (0..n).collect(),
        positives,
        negatives,
        scores: scores.to_vec(),
    };
    let t = rule.update(threshold, batch.positive_ratio());
    Ok((batch, t))
}

/// Loss of one (anchor, positive) term:
/// `-log(e^{c+/tau} / (e^{c+/tau} + sum_neg e^{c-/tau}))`.
pub fn info_nce(pos_cos: f64, neg_cos: &[f64], tau: f64) -> f64 {
    let p = pos_cos / tau;
    let mut denom = 1.0;
    for &c in neg_cos {
        denom += (c / tau - p).exp();
    }
    denom.ln()
}

/// Diagnostics from a contrastive loss evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MigStats {
    pub pairs: usize,
    /// Anchors dropped for a near-zero Jacobian.
    pub degenerate: usize,
    /// Anchors without any positive.
    pub no_positive: usize,
}

/// Contrastive loss averaged over (anchor, positive) pairs, evaluated on
/// explicit Jacobians. Degenerate Jacobians are dropped everywhere.
pub fn mig_loss(jacobians: &[PixelJacobian], batch: &PairBatch, tau: f64) -> Result<(f64, MigStats)> {
    let mut stats = MigStats::default();
    let ok: Vec<bool> = jacobians.iter().map(|j| !j.is_degenerate()).collect();
    let mut total = 0.0;
    for (a, &i) in batch.anchors.iter().enumerate() {
        if !ok[i] {
            stats.degenerate += 1;
            continue;
        }
        let negs = batch.negatives[a]
            .iter()
            .filter(|&&j| ok[j])
            .map(|&j| cosine_abs(&jacobians[i], &jacobians[j]))
            .collect::<Result<Vec<f64>>>()?;
        let pos: Vec<usize> = batch.positives[a].iter().copied().filter(|&j| ok[j]).collect();
        if pos.is_empty() {
            stats.no_positive += 1;
        }
        for p in pos {
            total += info_nce(cosine_abs(&jacobians[i], &jacobians[p])?, &negs, tau);
            stats.pairs += 1;
        }
    }
    let loss = if stats.pairs == 0 { 0.0 } else { total / stats.pairs as f64 };
    Ok((loss, stats))
}

/// Mean of `(1 - |J|)^2`.
pub fn norm_penalty(jacobians: &[PixelJacobian]) -> f64 {
    if jacobians.is_empty() {
        return 0.0;
    }
    jacobians.iter().map(|j| (1.0 - j.norm).powi(2)).sum::<f64>() / jacobians.len() as f64
}

/// Mean squared RGB error of a ray batch, recorded on the tape.
fn nerf_loss(tape: &mut Tape, params: &FieldParams, vars: &crate::field::ParamVars, rays: &[Ray], seeds: &[Option<u64>], targets: &[[f64; 3]], n_samples: usize) -> Result<Var> {
    let batch = SampleBatch::new(params.config(), rays, seeds, n_samples)?;
    let g = render_graph(tape, params.config(), vars, &batch)?;
    let t = tape.constant(Tensor::matrix(rays.len(), 3, targets.iter().flatten().copied().collect()));
    let d = tape.sub(g.rgb, t)?;
    let sq = tape.square(d);
    let s = tape.sum_all(sq);
    Ok(tape.scale(s, 1.0 / (3 * rays.len()) as f64))
}

struct NerfSampler {
    rng: rand_chacha::ChaCha8Rng,
    seed: u64,
}

impl NerfSampler {
    fn new(seed: u64) -> Self {
        Self {
            rng: rng::stream(seed, NERF_STREAM),
            seed,
        }
    }

    fn draw(&mut self, step: usize, n_rays: usize, batch: usize) -> (Vec<usize>, Vec<Option<u64>>) {
        let idx: Vec<usize> = (0..batch).map(|_| self.rng.gen_range(0..n_rays)).collect();
        let step_seed = rng::derive(self.seed, step as u64);
        let seeds = (0..batch).map(|i| pixel_seed(Some(step_seed), i)).collect();
        (idx, seeds)
    }
}

/// Minimizes RGB error over random training rays with Adam. Returns the
/// trained parameters and the per-step loss.
pub fn train_photometric(params: &FieldParams, views: &ViewSet, config: &PhotometricConfig) -> Result<(FieldParams, Vec<f64>)> {
    if views.is_empty() {
        return Err(Error::invalid("dataset has no views"));
    }
    let data = RaySet::from_views(views);
    let mut p = params.clone();
    let mut adam = Adam::new(config.lr);
    let mut sampler = NerfSampler::new(config.seed);
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (idx, seeds) = sampler.draw(step, data.len(), config.batch_rays);
        let rays: Vec<Ray> = idx.iter().map(|&i| data.rays[i]).collect();
        let targets: Vec<[f64; 3]> = idx.iter().map(|&i| data.rgb[i]).collect();
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, true);
        let loss = nerf_loss(&mut tape, &p, &vars, &rays, &seeds, &targets, config.n_samples)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        let grads = tape.backward(loss)?;
        adam.step(p.iter_mut(), &grads);
        trace.push(value);
    }
    Ok((p, trace))
}

/// One row of the shaping loss trace.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapingRecord {
    pub step: usize,
    pub l_nerf: f64,
    pub l_mig: f64,
    pub l_norm: f64,
    pub total: f64,
    pub threshold: f64,
    pub pos_ratio: f64,
    pub degenerate: usize,
}

pub fn write_trace_csv(path: &Path, trace: &[ShapingRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    writeln!(f, "step,l_nerf,l_mig,l_norm,threshold,pos_ratio").map_err(io)?;
    for r in trace {
        writeln!(f, "{},{},{},{},{},{}", r.step, r.l_nerf, r.l_mig, r.l_norm, r.threshold, r.pos_ratio).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Affinity from the configured source over the training views.
pub fn build_affinity(source: &AffinitySource, views: &ViewSet) -> Result<Box<dyn AffinityProvider>> {
    Ok(match source {
        AffinitySource::GroundTruth(mode) => Box::new(crate::scene::LabelAffinity {
            labels: views.views.iter().map(|v| mode.select(v).clone()).collect(),
        }),
        AffinitySource::FeatureFile(path) => Box::new(crate::scene::FeatureAffinity::load(path)?),
    })
}

/// Contrastive and norm terms on the tape for one foreground batch.
struct MigGraph {
    l_mig: Var,
    l_norm: Var,
    /// `[R x 3H]` Jacobians.
    jac: Var,
    degenerate: Vec<bool>,
}

fn mig_graph(tape: &mut Tape, params: &FieldParams, vars: &crate::field::ParamVars, rays: &[Ray], seeds: &[Option<u64>], pairs: &PairBatch, config: &ShapingConfig) -> Result<MigGraph> {
    let r = rays.len();
    let s = config.n_samples;
    let batch = SampleBatch::new(params.config(), rays, seeds, s)?;
    let g = render_graph(tape, params.config(), vars, &batch)?;

    // J[r, c*H + j] = (1/3) sum_k w_rk s'(z_rkc) h_rkj
    let neg = tape.scale(g.field.rgb, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let dsig = tape.mul(g.field.rgb, one_minus)?;
    let wcol = tape.reshape(g.weights, &[r * s, 1])?;
    let a = tape.mul_col(dsig, wcol)?;
    let outer = tape.row_outer(a, g.field.hidden)?;
    let summed = tape.segment_sum(outer, s)?;
    let jac = tape.scale(summed, 1.0 / 3.0);

    let sq = tape.square(jac);
    let n2 = tape.sum_rows(sq);
    let degenerate: Vec<bool> = tape.value(n2).data().iter().map(|&v| v.sqrt() <= crate::jacobian::DEGENERATE_NORM).collect();
    let pad = tape.constant(Tensor::matrix(r, 1, degenerate.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect()));
    let n2_safe = tape.add(n2, pad)?;
    let norm = tape.sqrt(n2_safe);

    // norm penalty over non-degenerate rows
    let valid: Vec<f64> = degenerate.iter().map(|&d| if d { 0.0 } else { 1.0 }).collect();
    let n_valid = valid.iter().sum::<f64>();
    let l_norm = if n_valid > 0.0 {
        let dev = tape.add_scalar(norm, -1.0);
        let dev2 = tape.square(dev);
        let mask = tape.constant(Tensor::matrix(r, 1, valid.clone()));
        let m = tape.mul(dev2, mask)?;
        let sum = tape.sum_all(m);
        tape.scale(sum, 1.0 / n_valid)
    } else {
        tape.constant(Tensor::scalar(0.0))
    };

    let mut pos_mask = vec![0.0; r * r];
    let mut neg_mask = vec![0.0; r * r];
    let mut n_pairs = 0usize;
    for (a, &i) in pairs.anchors.iter().enumerate() {
        if degenerate[i] {
            continue;
        }
        for &j in pairs.positives[a].iter().filter(|&&j| !degenerate[j]) {
            pos_mask[i * r + j] = 1.0;
            n_pairs += 1;
        }
        for &j in pairs.negatives[a].iter().filter(|&&j| !degenerate[j]) {
            neg_mask[i * r + j] = 1.0;
        }
    }
    let l_mig = if n_pairs > 0 {
        let inv = tape.recip(norm);
        let unit = tape.mul_col(jac, inv)?;
        let gram = tape.matmul_nt(unit, unit)?;
        let cos = tape.abs(gram);
        let logits = tape.scale(cos, 1.0 / config.tau);
        let e = tape.exp(logits);
        let negm = tape.constant(Tensor::matrix(r, r, neg_mask));
        let en = tape.mul(e, negm)?;
        let negsum = tape.sum_rows(en);
        let ones = tape.constant(Tensor::matrix(1, r, vec![1.0; r]));
        let spread = tape.matmul(negsum, ones)?;
        let denom = tape.add(e, spread)?;
        let logd = tape.log(denom);
        let term = tape.sub(logd, logits)?;
        let posm = tape.constant(Tensor::matrix(r, r, pos_mask));
        let masked = tape.mul(term, posm)?;
        let sum = tape.sum_all(masked);
        tape.scale(sum, 1.0 / n_pairs as f64)
    } else {
        tape.constant(Tensor::scalar(0.0))
    };
    Ok(MigGraph {
        l_mig,
        l_norm,
        jac,
        degenerate,
    })
}

/// Fine-tunes with reconstruction plus `lambda` contrastive and `gamma`
/// norm terms. Returns the shaped parameters and the loss trace.
pub fn shape(params: &FieldParams, views: &ViewSet, affinity: &dyn AffinityProvider, config: &ShapingConfig) -> Result<(FieldParams, Vec<ShapingRecord>)> {
    config.validate()?;
    if views.is_empty() {
        return Err(Error::invalid("dataset has no views"));
    }
    let data = RaySet::from_views(views);
    let fg: Vec<usize> = (0..data.len()).filter(|&i| affinity.is_foreground(data.refs[i])).collect();
    if fg.len() < config.batch_rays {
        return Err(Error::invalid(format!(
            "only {} foreground pixels for a contrastive batch of {}",
            fg.len(),
            config.batch_rays
        )));
    }
    let designated = PerturbationSpec::designated(params, 1.0)?;
    let mut p = params.clone();
    let mut adam = Adam::new(config.lr);
    let mut nerf = NerfSampler::new(config.seed);
    let mut mig_rng = rng::stream(config.seed, MIG_STREAM);
    let mut threshold = config.threshold_init.clamp(config.threshold.interval.0, config.threshold.interval.1);
    let mut trace = Vec::with_capacity(config.epochs);

    for step in 0..config.epochs {
        let (idx, seeds) = nerf.draw(step, data.len(), config.nerf_batch_rays);
        let rays: Vec<Ray> = idx.iter().map(|&i| data.rays[i]).collect();
        let targets: Vec<[f64; 3]> = idx.iter().map(|&i| data.rgb[i]).collect();

        let picks: Vec<usize> = fg.choose_multiple(&mut mig_rng, config.batch_rays).copied().collect();
        let n = picks.len();
        let mut scores = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                if a != b {
                    scores[a * n + b] = affinity.similarity(data.refs[picks[a]], data.refs[picks[b]]);
                }
            }
        }
        let used_threshold = threshold;
        let (pairs, next) = select_pairs(&scores, n, threshold, &config.threshold)?;
        threshold = next;
        let mig_rays: Vec<Ray> = picks.iter().map(|&i| data.rays[i]).collect();
        let mig_seed = rng::derive(config.seed ^ MIG_STREAM, step as u64);
        let mig_seeds: Vec<Option<u64>> = (0..n).map(|i| pixel_seed(Some(mig_seed), i)).collect();

        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, true);
        let l_nerf = nerf_loss(&mut tape, &p, &vars, &rays, &seeds, &targets, config.n_samples)?;
        let mg = mig_graph(&mut tape, &p, &vars, &mig_rays, &mig_seeds, &pairs, config)?;
        let a = tape.scale(mg.l_mig, config.lambda);
        let b = tape.scale(mg.l_norm, config.gamma);
        let reg = tape.add(a, b)?;
        let total = tape.add(l_nerf, reg)?;

        let rec = ShapingRecord {
            step,
            l_nerf: tape.value(l_nerf).item(),
            l_mig: tape.value(mg.l_mig).item(),
            l_norm: tape.value(mg.l_norm).item(),
            total: tape.value(total).item(),
            threshold: used_threshold,
            pos_ratio: pairs.positive_ratio(),
            degenerate: mg.degenerate.iter().filter(|&&d| d).count(),
        };
        if !rec.total.is_finite() {
            return Err(Error::Divergence { step, loss: rec.total });
        }
        if config.validate_every > 0 && step % config.validate_every == 0 {
            if let Some(i) = (0..n).find(|&i| !mg.degenerate[i]) {
                let fast = tape.value(mg.jac).row(i).to_vec();
                let ad = pixel_jacobian_ad(&p, &mig_rays[i], &designated, config.n_samples, mig_seeds[i])?;
                let scale = ad.values.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12);
                let err = fast.iter().zip(&ad.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale;
                if err > 1e-8 {
                    return Err(Error::invalid(format!(
                        "step {step}: closed-form Jacobian deviates from AD by {err:e}"
                    )));
                }
            }
        }
        let grads = tape.backward(total)?;
        adam.step(p.iter_mut(), &grads);
        trace.push(rec);
    }
    Ok((p, trace))
}

/// Held-out foreground pixels with labels and cached renders.
pub struct ProbeSet {
    pub labels: Vec<u32>,
    pub outputs: Vec<RenderOutput>,
    pub jacobians: Vec<PixelJacobian>,
}

/// Renders `n` random foreground pixels of `views` at bin midpoints.
pub fn probe_pixels(params: &FieldParams, views: &ViewSet, mode: LabelMode, n: usize, n_samples: usize, seed: u64) -> Result<ProbeSet> {
    let data = RaySet::from_views(views);
    let fg: Vec<usize> = (0..data.len())
        .filter(|&i| mode.select(&views.views[data.refs[i].view]).ids[data.refs[i].pixel] != 0)
        .collect();
    if fg.is_empty() {
        return Err(Error::invalid("views contain no foreground"));
    }
    let mut r = rng::stream(seed, 0x9B0B);
    let picks: Vec<usize> = (0..n).map(|_| fg[r.gen_range(0..fg.len())]).collect();
    let rays: Vec<Ray> = picks.iter().map(|&i| data.rays[i]).collect();
    let outputs = crate::field::render_rays(params, &rays, &vec![None; rays.len()], n_samples)?;
    let jacobians = outputs.iter().map(|o| PixelJacobian::new(gray_jacobian(o))).collect::<Result<_>>()?;
    let labels = picks
        .iter()
        .map(|&i| mode.select(&views.views[data.refs[i].view]).ids[data.refs[i].pixel])
        .collect();
    Ok(ProbeSet {
        labels,
        outputs,
        jacobians,
    })
}

impl ProbeSet {
    /// Fraction of random (anchor, positive, negative) triples with
    /// `|cos(a, p)| > |cos(a, n)|`.
    pub fn triple_probability(&self, n_triples: usize, seed: u64) -> Result<f64> {
        let ok: Vec<usize> = (0..self.labels.len()).filter(|&i| !self.jacobians[i].is_degenerate()).collect();
        let mut r = rng::stream(seed, 0x7219);
        let mut wins = 0;
        let mut done = 0;
        let mut attempts = 0;
        while done < n_triples {
            attempts += 1;
            if attempts > 1000 * n_triples.max(1) {
                return Err(Error::invalid("cannot form triples: need two classes with two pixels"));
            }
            let a = ok[r.gen_range(0..ok.len())];
            let p = ok[r.gen_range(0..ok.len())];
            let q = ok[r.gen_range(0..ok.len())];
            if p == a || self.labels[p] != self.labels[a] || self.labels[q] == self.labels[a] {
                continue;
            }
            let cp = cosine_abs(&self.jacobians[a], &self.jacobians[p])?;
            let cn = cosine_abs(&self.jacobians[a], &self.jacobians[q])?;
            if cp > cn {
                wins += 1;
            }
            done += 1;
        }
        Ok(wins as f64 / n_triples as f64)
    }

    /// Mean `|cos|` over random same-label and cross-label pairs.
    pub fn class_cosines(&self, n_pairs: usize, seed: u64) -> Result<(f64, f64)> {
        let ok: Vec<usize> = (0..self.labels.len()).filter(|&i| !self.jacobians[i].is_degenerate()).collect();
        let mut r = rng::stream(seed, 0xC05);
        let (mut same, mut cross) = (Vec::new(), Vec::new());
        let mut attempts = 0;
        while same.len() < n_pairs || cross.len() < n_pairs {
            attempts += 1;
            if attempts > 1000 * n_pairs.max(1) {
                return Err(Error::invalid("not enough pixels for class pairs"));
            }
            let a = ok[r.gen_range(0..ok.len())];
            let b = ok[r.gen_range(0..ok.len())];
            if a == b {
                continue;
            }
            let c = cosine_abs(&self.jacobians[a], &self.jacobians[b])?;
            if self.labels[a] == self.labels[b] {
                if same.len() < n_pairs {
                    same.push(c);
                }
            } else if cross.len() < n_pairs {
                cross.push(c);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok((mean(&same), mean(&cross)))
    }

    /// Mean `| |J| - 1 |`.
    pub fn mean_norm_deviation(&self) -> f64 {
        self.jacobians.iter().map(|j| (j.norm - 1.0).abs()).sum::<f64>() / self.jacobians.len() as f64
    }
}

/// Renders all of `views` at bin midpoints and averages PSNR against ground
/// truth.
pub fn mean_psnr(params: &FieldParams, views: &ViewSet, n_samples: usize) -> Result<f64> {
    let mut total = 0.0;
    for (cam, gt) in views.cameras.iter().zip(&views.views) {
        let (img, _) = crate::field::render_image(params, cam, n_samples, None)?;
        total += crate::field::psnr(&img, &gt.image)?;
    }
    Ok(total / views.len() as f64)
}

/// Renders one batch and returns the gray values (for checks in tests and
/// diagnostics).
pub fn render_gray(params: &FieldParams, rays: &[Ray], n_samples: usize) -> Result<Vec<f64>> {
    Ok(render_batch(params, rays, &vec![None; rays.len()], n_samples)?
        .into_iter()
        .map(|o| o.gray)
        .collect())
}
