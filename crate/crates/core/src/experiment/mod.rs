//! End-to-end runs: scene, dataset, training, shaping, propagation, metrics.

mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};

pub use config::{parse_config_text, parse_override, ExperimentConfig, Mode, ViewFilter};

use crate::error::{Error, Result};
use crate::field::{render_image, FieldParams, RenderOutput};
use crate::metrics::{compute_metrics, MetricReport};
use crate::propagation::{
    adaptive_gradient_sampling, argmax_labels, density_patch, palette_image, propagate_cached, seed_directions, train_aggregation_mlp,
    AdaptiveConfig, AdaptiveResult, MlpConfig, PropagationResult, SeedLabels, Variant,
};
use crate::scene::{generate_scene_with_classes, make_dataset, pose_angle, Dataset, DatasetConfig, LabelImage, SceneSpec};
use crate::shaping::{build_affinity, mean_psnr, shape, train_photometric, write_trace_csv, AffinitySource, PhotometricConfig, ShapingConfig, ShapingRecord};

/// Trained and shaped fields plus the data they came from.
pub struct Prepared {
    pub scene: SceneSpec,
    pub dataset: Dataset,
    pub pre: FieldParams,
    /// Equal to `pre` when shaping is off.
    pub shaped: FieldParams,
    pub train_loss: Vec<f64>,
    pub trace: Vec<ShapingRecord>,
}

/// One metrics row.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    /// `sparse`, `dense` or `dense-mlp`.
    pub mode: String,
    pub variant: Variant,
    pub sigma: f64,
    pub density: f64,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub experiment_id: String,
    pub config_hash: String,
    /// First row is the configured setting; sweep rows follow.
    pub rows: Vec<Row>,
    pub psnr_pre: f64,
    pub psnr_post: f64,
    /// Test-view indices used as targets.
    pub targets: Vec<usize>,
    /// Source-view mIoU after each accepted selection (dense only).
    pub adaptive_history: Vec<f64>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Config(_) => e,
        e => e.in_stage(name),
    })
}

fn shaping_config(c: &ExperimentConfig) -> ShapingConfig {
    ShapingConfig {
        lambda: c.lambda,
        gamma: c.gamma,
        tau: c.tau,
        batch_rays: c.shape_batch,
        nerf_batch_rays: c.shape_nerf_batch,
        threshold_init: c.threshold_init,
        lr: c.shape_lr,
        epochs: c.shape_epochs,
        n_samples: c.n_samples,
        affinity: if c.affinity == "gt" {
            AffinitySource::GroundTruth(c.label_mode)
        } else {
            AffinitySource::FeatureFile(PathBuf::from(&c.affinity))
        },
        seed: c.resolved_seed("shape_seed"),
        validate_every: c.validate_every,
        ..ShapingConfig::default()
    }
}

pub fn dataset_config(c: &ExperimentConfig) -> DatasetConfig {
    DatasetConfig {
        width: c.width,
        height: c.height,
        fov_y: c.fov_y,
        ..DatasetConfig::default()
    }
}

pub fn build_scene(c: &ExperimentConfig) -> Result<SceneSpec> {
    stage("scene", generate_scene_with_classes(c.n_objects, c.n_classes_resolved(), c.resolved_seed("scene_seed")))
}

pub fn build_dataset(c: &ExperimentConfig, scene: &SceneSpec) -> Result<Dataset> {
    stage("dataset", make_dataset(scene, &dataset_config(c), c.n_train, c.n_test, c.resolved_seed("dataset_seed")))
}

/// Photometric training, or the configured checkpoint.
pub fn train_stage(c: &ExperimentConfig, dataset: &Dataset) -> Result<(FieldParams, Vec<f64>)> {
    stage("train", (|| {
        if let Some(p) = &c.checkpoint {
            return Ok((FieldParams::load(p)?, Vec::new()));
        }
        let init = FieldParams::init(c.field, c.resolved_seed("init_seed"))?;
        let pc = PhotometricConfig {
            steps: c.train_steps,
            batch_rays: c.train_batch,
            lr: c.train_lr,
            n_samples: c.n_samples,
            seed: c.resolved_seed("train_seed"),
        };
        train_photometric(&init, &dataset.train, &pc)
    })())
}

/// Shaping, the configured shaped checkpoint, or a copy of `pre` when
/// shaping is off.
pub fn shape_stage(c: &ExperimentConfig, dataset: &Dataset, pre: &FieldParams) -> Result<(FieldParams, Vec<ShapingRecord>)> {
    stage("shape", (|| {
        if let Some(p) = &c.shaped_checkpoint {
            return Ok((FieldParams::load(p)?, Vec::new()));
        }
        if !c.shaping {
            return Ok((pre.clone(), Vec::new()));
        }
        let sc = shaping_config(c);
        let affinity = build_affinity(&sc.affinity, &dataset.train)?;
        shape(pre, &dataset.train, affinity.as_ref(), &sc)
    })())
}

/// Runs every stage up to (not including) propagation, writing artifacts
/// into `out` when given.
pub fn prepare(c: &ExperimentConfig, out: Option<&Path>) -> Result<Prepared> {
    c.validate()?;
    let scene = build_scene(c)?;
    let dataset = build_dataset(c, &scene)?;
    if let Some(dir) = out {
        stage("scene", scene.save(&dir.join("scene.txt")))?;
        stage("dataset", dataset.save(&dir.join("dataset")))?;
    }
    let (pre, train_loss) = train_stage(c, &dataset)?;
    if let Some(dir) = out {
        stage("train", pre.save(&dir.join("field_pre.jtns")))?;
        stage("train", write_loss_csv(&dir.join("train_loss.csv"), &train_loss))?;
    }
    let (shaped, trace) = shape_stage(c, &dataset, &pre)?;
    if let Some(dir) = out {
        stage("shape", shaped.save(&dir.join("field_shaped.jtns")))?;
        stage("shape", write_trace_csv(&dir.join("shaping_trace.csv"), &trace))?;
    }
    Ok(Prepared {
        scene,
        dataset,
        pre,
        shaped,
        train_loss,
        trace,
    })
}

pub fn write_loss_csv(path: &Path, loss: &[f64]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "step,loss").map_err(io)?;
    for (i, l) in loss.iter().enumerate() {
        writeln!(f, "{i},{l}").map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Test views passing the configured angle filter.
pub fn target_views(c: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<usize>> {
    let src = &dataset.train.cameras[c.source_view];
    let t: Vec<usize> = (0..dataset.test.len())
        .filter(|&i| c.views.accepts(pose_angle(src, &dataset.test.cameras[i])))
        .collect();
    if t.is_empty() {
        return Err(Error::invalid(format!("no test view matches the `{}` filter", c.views.name())));
    }
    Ok(t)
}

/// Stacks label images vertically so one report covers all of them.
pub fn stack_labels(images: &[LabelImage]) -> Result<LabelImage> {
    let w = images.first().map_or(0, |i| i.width);
    if images.iter().any(|i| i.width != w) {
        return Err(Error::invalid("label images differ in width"));
    }
    let h = images.iter().map(|i| i.height).sum();
    LabelImage::new(w, h, images.iter().flat_map(|i| i.ids.iter().copied()).collect())
}

/// Cached renders of the propagation targets and the source view.
pub struct PropagationInputs<'a> {
    pub params: &'a FieldParams,
    pub dataset: &'a Dataset,
    pub targets: Vec<usize>,
    pub target_outputs: Vec<Vec<RenderOutput>>,
    pub source_outputs: Vec<RenderOutput>,
}

impl<'a> PropagationInputs<'a> {
    pub fn new(c: &ExperimentConfig, params: &'a FieldParams, dataset: &'a Dataset) -> Result<Self> {
        let targets = target_views(c, dataset)?;
        let target_outputs = targets
            .iter()
            .map(|&i| render_image(params, &dataset.test.cameras[i], c.n_samples, None).map(|r| r.1))
            .collect::<Result<_>>()?;
        let (_, source_outputs) = render_image(params, &dataset.train.cameras[c.source_view], c.n_samples, None)?;
        Ok(Self {
            params,
            dataset,
            targets,
            target_outputs,
            source_outputs,
        })
    }

    fn size(&self) -> (usize, usize) {
        let cam = &self.dataset.test.cameras[self.targets[0]];
        (cam.width, cam.height)
    }

    fn gt(&self, c: &ExperimentConfig) -> Vec<LabelImage> {
        self.targets
            .iter()
            .map(|&i| c.label_mode.select(&self.dataset.test.views[i]).clone())
            .collect()
    }

    fn source_labels(&self, c: &ExperimentConfig) -> &LabelImage {
        c.label_mode.select(&self.dataset.train.views[c.source_view])
    }

    /// Sparse propagation of one seed pixel per class at each `sigma`.
    pub fn sparse(&self, c: &ExperimentConfig, sigmas: &[f64], variant: Variant) -> Result<Vec<(Row, Vec<PropagationResult>)>> {
        let seeds = SeedLabels::sample_sparse(self.source_labels(c), c.source_view, c.label_mode, c.resolved_seed("propagate_seed"))?;
        self.sparse_with(c, &seeds, sigmas, variant)
    }

    /// Like [`Self::sparse`] with explicit seed pixels.
    pub fn sparse_with(&self, c: &ExperimentConfig, seeds: &SeedLabels, sigmas: &[f64], variant: Variant) -> Result<Vec<(Row, Vec<PropagationResult>)>> {
        let (classes, dirs) = seed_directions(self.params, &self.dataset.train.cameras[seeds.view], seeds, c.n_samples)?;
        let gt = stack_labels(&self.gt(c))?;
        let (w, h) = self.size();
        sigmas
            .iter()
            .map(|&sigma| {
                let results = self
                    .target_outputs
                    .iter()
                    .map(|outs| propagate_cached(outs, w, h, &classes, &dirs, sigma, variant))
                    .collect::<Result<Vec<_>>>()?;
                let pred = stack_labels(&results.iter().map(|r| r.labels.clone()).collect::<Vec<_>>())?;
                let report = compute_metrics(&pred, &gt, &classes)?;
                Ok((
                    Row {
                        mode: Mode::Sparse.name().into(),
                        variant,
                        sigma,
                        density: 1.0,
                        report,
                    },
                    results,
                ))
            })
            .collect()
    }

    /// Dense propagation from a density-limited source annotation. Returns
    /// the argmax row, the MLP row when enabled, and per-target label maps
    /// (argmax, MLP).
    pub fn dense(&self, c: &ExperimentConfig, sigma: f64, density: f64, variant: Variant) -> Result<DenseOutcome> {
        let seed = c.resolved_seed("propagate_seed");
        let labels = density_patch(self.source_labels(c), density, seed)?;
        let ac = AdaptiveConfig {
            combos: c.combos,
            qualified: c.qualified,
            max_rounds: c.max_rounds,
            sigma,
            variant,
            seed,
        };
        let adaptive = adaptive_gradient_sampling(&self.source_outputs, &labels, &ac)?;
        let classes = adaptive.classes.clone();
        let (w, h) = self.size();
        let gt = stack_labels(&self.gt(c))?;
        let responses: Vec<Vec<f64>> = self
            .target_outputs
            .iter()
            .map(|outs| adaptive.responses(outs, sigma, variant))
            .collect();
        let argmax: Vec<LabelImage> = responses.iter().map(|r| argmax_labels(r, &classes, w, h).0).collect();
        let row = |mode: &str, preds: &[LabelImage]| -> Result<Row> {
            Ok(Row {
                mode: mode.into(),
                variant,
                sigma,
                density,
                report: compute_metrics(&stack_labels(preds)?, &gt, &classes)?,
            })
        };
        let mut rows = vec![row(Mode::Dense.name(), &argmax)?];
        let mut mlp_labels = Vec::new();
        if c.mlp && !adaptive.selections.is_empty() {
            let src = adaptive.responses(&self.source_outputs, sigma, variant);
            let scale = if sigma > 0.0 { 1.0 / sigma } else { 1.0 };
            let mc = MlpConfig {
                iterations: c.mlp_iterations,
                lr: c.mlp_lr,
                seed,
                ..MlpConfig::default()
            };
            let mlp = train_aggregation_mlp(&src, &labels.ids, &classes, scale, &mc)?;
            for r in &responses {
                mlp_labels.push(LabelImage::new(w, h, mlp.predict(r)?)?);
            }
            rows.push(row("dense-mlp", &mlp_labels)?);
        }
        Ok(DenseOutcome {
            rows,
            adaptive,
            argmax,
            mlp: mlp_labels,
        })
    }
}

pub struct DenseOutcome {
    pub rows: Vec<Row>,
    pub adaptive: AdaptiveResult,
    pub argmax: Vec<LabelImage>,
    pub mlp: Vec<LabelImage>,
}

pub fn write_metrics_csv(path: &Path, experiment_id: &str, rows: &[Row]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "experiment_id,mode,variant,sigma,density,mIoU,avg_acc,total_acc").map_err(io)?;
    for r in rows {
        writeln!(
            f,
            "{experiment_id},{},{},{},{},{},{},{}",
            r.mode,
            r.variant.name(),
            r.sigma,
            r.density,
            r.report.miou,
            r.report.avg_class_acc,
            r.report.total_acc
        )
        .map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Config entries, their hash and every resolved seed.
pub fn manifest_text(c: &ExperimentConfig) -> String {
    let mut s = format!("config_hash = {}\n", c.hash());
    for (k, v) in c.resolved_seeds() {
        s.push_str(&format!("resolved.{k} = {v}\n"));
    }
    s.push_str(&c.to_text());
    s
}

fn with_primary(primary: f64, sweep: &[f64]) -> Vec<f64> {
    let mut v = vec![primary];
    v.extend(sweep.iter().copied().filter(|&x| x != primary));
    v
}

/// Full pipeline with artifacts under `config.out_dir`.
pub fn run_experiment(c: &ExperimentConfig) -> Result<ExperimentReport> {
    c.validate()?;
    let out = &c.out_dir;
    stage("setup", std::fs::create_dir_all(out).map_err(|e| Error::io(out, e)))?;
    stage("setup", std::fs::write(out.join("manifest.txt"), manifest_text(c)).map_err(|e| Error::io(out, e)))?;
    let prep = prepare(c, Some(out))?;
    let (psnr_pre, psnr_post) = stage("metrics", (|| {
        let pre = mean_psnr(&prep.pre, &prep.dataset.test, c.n_samples)?;
        let post = if c.shaping || c.shaped_checkpoint.is_some() {
            mean_psnr(&prep.shaped, &prep.dataset.test, c.n_samples)?
        } else {
            pre
        };
        Ok((pre, post))
    })())?;

    let prop_dir = out.join("propagation");
    stage("propagate", std::fs::create_dir_all(&prop_dir).map_err(|e| Error::io(&prop_dir, e)))?;
    let inputs = stage("propagate", PropagationInputs::new(c, &prep.shaped, &prep.dataset))?;
    let sigmas = with_primary(c.sigma, &c.sweep_sigma);
    let mut rows = Vec::new();
    let mut adaptive_history = Vec::new();
    match c.mode {
        Mode::Sparse => {
            let res = stage("propagate", inputs.sparse(c, &sigmas, c.variant))?;
            for (t, r) in inputs.targets.iter().zip(&res[0].1) {
                stage("propagate", r.save(&prop_dir, &format!("target_{t}")))?;
            }
            rows.extend(res.into_iter().map(|(row, _)| row));
        }
        Mode::Dense => {
            let densities = with_primary(c.density, &c.sweep_density);
            for (i, &d) in densities.iter().enumerate() {
                for (j, &s) in sigmas.iter().enumerate() {
                    if i > 0 && j > 0 {
                        continue;
                    }
                    let o = stage("propagate", inputs.dense(c, s, d, c.variant))?;
                    if i == 0 && j == 0 {
                        adaptive_history = o.adaptive.miou_history.clone();
                        for (k, t) in inputs.targets.iter().enumerate() {
                            stage("propagate", save_labels(&prop_dir, &format!("target_{t}_dense"), &o.argmax[k]))?;
                            if let Some(m) = o.mlp.get(k) {
                                stage("propagate", save_labels(&prop_dir, &format!("target_{t}_mlp"), m))?;
                            }
                        }
                    }
                    rows.extend(o.rows);
                }
            }
        }
    }
    stage("metrics", write_metrics_csv(&out.join("metrics.csv"), &c.experiment_id, &rows))?;
    Ok(ExperimentReport {
        experiment_id: c.experiment_id.clone(),
        config_hash: c.hash(),
        rows,
        psnr_pre,
        psnr_post,
        targets: inputs.targets.clone(),
        adaptive_history,
    })
}

pub fn save_labels(dir: &Path, stem: &str, labels: &LabelImage) -> Result<()> {
    labels.save(&dir.join(format!("{stem}_labels.jtns")))?;
    palette_image(labels).write_ppm(&dir.join(format!("{stem}_labels.ppm")))
}
