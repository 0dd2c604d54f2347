use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use jnerf_core::experiment::{
    parse_override, run_experiment, write_loss_csv, write_metrics_csv, ExperimentConfig, Mode, PropagationInputs, Row,
};
use jnerf_core::field::{psnr, render_image, FieldParams};
use jnerf_core::jacobian::{PerturbationPattern, PerturbationSpec};
use jnerf_core::metrics::compute_metrics;
use jnerf_core::mi::{mc_mi_estimate, mi_map, write_records};
use jnerf_core::propagation::{recolor_entity, SeedLabels};
use jnerf_core::scene::{Dataset, LabelImage, ViewSet};
use jnerf_core::shaping::{build_affinity, shape, train_photometric, write_trace_csv, AffinitySource, PhotometricConfig, ShapingConfig};
use jnerf_core::tensor::{write_jtns, Stored};
use jnerf_core::{Error, Result};

/// Options every subcommand accepts.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// `key = value` config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural scene and its posed ground-truth views
    SceneGen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        objects: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// Image width and height
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Render one dataset view from a checkpoint
    Render {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Output PPM
        #[arg(long)]
        out: PathBuf,
    },
    /// Photometric training
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Output checkpoint
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Per-step loss CSV
        #[arg(long)]
        loss: Option<PathBuf>,
    },
    /// Jacobian shaping of a trained checkpoint
    Shape {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        /// `gt` or a feature file
        #[arg(long)]
        affinity: Option<String>,
        /// Loss trace CSV
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Mutual-information probes for pixel pairs or whole maps
    MiProbe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 0)]
        view: usize,
        /// Lines of `u1 v1 u2 v2` in the chosen view
        #[arg(long, conflicts_with = "map")]
        pairs: Option<PathBuf>,
        /// Source pixel `U V` for a closed-form MI map
        #[arg(long, num_args = 2, value_names = ["U", "V"])]
        map: Option<Vec<usize>>,
        /// View of the map (defaults to `--view`)
        #[arg(long)]
        target_view: Option<usize>,
        #[arg(long, default_value_t = 1e-3)]
        sigma: f64,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long, default_value_t = 32)]
        bins: usize,
        /// designated, random-neurons, single-layer or layer-block
        #[arg(long, default_value = "designated")]
        pattern: String,
        /// Neurons for random-neurons; layer name(s) otherwise
        #[arg(long)]
        pattern_arg: Option<String>,
        /// Records file, or map output prefix
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propagate labels from a source view to the test views
    Propagate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// sparse or dense
        #[arg(long)]
        mode: Option<String>,
        /// 2d or 3d
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, default_value_t = jnerf_core::propagation::DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long)]
        source_view: Option<usize>,
        /// Seed file of `view_id u v class_id` lines (sparse)
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long)]
        density: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recolor the entity under one source pixel
    Recolor {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        source_view: usize,
        #[arg(long, num_args = 2, value_names = ["U", "V"])]
        pixel: Vec<usize>,
        #[arg(long, num_args = 3, value_names = ["R", "G", "B"], allow_negative_numbers = true)]
        delta: Vec<f64>,
        #[arg(long, default_value_t = jnerf_core::propagation::DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        target_view: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted label map
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Comma-separated seen classes
        #[arg(long, conflicts_with = "source")]
        seen: Option<String>,
        /// Source-view labels whose classes count as seen
        #[arg(long)]
        source: Option<PathBuf>,
    },
    /// Full pipeline from a config file
    Experiment,
}

#[derive(Parser)]
#[command(name = "jnerf", version, about = "Radiance fields with Jacobian shaping and label propagation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn config_from(common: &Common, extra: Vec<(&str, String)>) -> Result<ExperimentConfig> {
    let mut c = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &common.set {
        let (k, v) = parse_override(s)?;
        c.set(&k, &v)?;
    }
    if let Some(s) = common.seed {
        c.seed = s;
    }
    for (k, v) in extra {
        c.set(k, &v)?;
    }
    Ok(c)
}

fn opt<T: ToString>(key: &'static str, v: &Option<T>) -> Option<(&'static str, String)> {
    v.as_ref().map(|x| (key, x.to_string()))
}

fn split<'a>(d: &'a Dataset, name: &str) -> Result<&'a ViewSet> {
    match name {
        "train" => Ok(&d.train),
        "test" => Ok(&d.test),
        _ => Err(Error::Config(format!("split must be train or test, got `{name}`"))),
    }
}

fn view_index(views: &ViewSet, i: usize) -> Result<usize> {
    if i < views.len() {
        Ok(i)
    } else {
        Err(Error::Config(format!("view {i} out of range ({} views)", views.len())))
    }
}

fn print_row(id: &str, r: &Row) {
    println!(
        "{id} {} {} sigma={} density={} mIoU={:.4} avg_acc={:.4} total_acc={:.4}",
        r.mode,
        r.variant.name(),
        r.sigma,
        r.density,
        r.report.miou,
        r.report.avg_class_acc,
        r.report.total_acc
    );
}

fn perturbation(params: &FieldParams, pattern: &str, arg: Option<&str>, sigma: f64, seed: u64) -> Result<PerturbationSpec> {
    if pattern == "designated" {
        return PerturbationSpec::designated(params, sigma);
    }
    let need = || Error::Config(format!("--pattern-arg is required for `{pattern}`"));
    match pattern.parse::<PerturbationPattern>().map_err(|e| Error::Config(e.to_string()))? {
        PerturbationPattern::RandomNeurons => {
            let d = arg.ok_or_else(need)?.parse().map_err(|_| Error::Config("--pattern-arg must be a count".into()))?;
            PerturbationSpec::random_neurons(params, d, sigma, seed)
        }
        PerturbationPattern::SingleLayer => PerturbationSpec::single_layer(params, arg.ok_or_else(need)?, sigma),
        PerturbationPattern::LayerBlock => {
            let layers: Vec<&str> = arg.ok_or_else(need)?.split(',').collect();
            PerturbationSpec::layer_block(params, &layers, sigma)
        }
    }
}

fn read_pairs(path: &Path) -> Result<Vec<[usize; 4]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: Vec<usize> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format {
                what: "pairs file",
                detail: format!("line {}: expected four pixel coordinates", i + 1),
            })?;
        if v.len() != 4 {
            return Err(Error::Format {
                what: "pairs file",
                detail: format!("line {}: expected `u1 v1 u2 v2`", i + 1),
            });
        }
        out.push([v[0], v[1], v[2], v[3]]);
    }
    Ok(out)
}

fn run(common: &Common, command: Command) -> Result<()> {
    match command {
        Command::SceneGen {
            out,
            objects,
            classes,
            size,
            train,
            test,
        } => {
            let extra = [
                opt("n_objects", &objects),
                opt("n_classes", &classes),
                opt("width", &size),
                opt("height", &size),
                opt("n_train", &train),
                opt("n_test", &test),
            ];
            let c = config_from(common, extra.into_iter().flatten().collect())?;
            let scene = jnerf_core::experiment::build_scene(&c)?;
            let data = jnerf_core::experiment::build_dataset(&c, &scene)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
            scene.save(&out.join("scene.txt"))?;
            data.save(&out.join("dataset"))?;
            std::fs::write(out.join("manifest.txt"), jnerf_core::experiment::manifest_text(&c))
                .map_err(|e| Error::Config(format!("cannot write manifest: {e}")))?;
            println!("{} objects, {} train / {} test views -> {}", scene.primitives.len(), data.train.len(), data.test.len(), out.display());
        }
        Command::Render {
            checkpoint,
            dataset,
            split: s,
            view,
            out,
        } => {
            let c = config_from(common, vec![])?;
            let params = FieldParams::load(&checkpoint)?;
            let d = Dataset::load(&dataset)?;
            let vs = split(&d, &s)?;
            let v = view_index(vs, view)?;
            let (img, _) = render_image(&params, &vs.cameras[v], c.n_samples, None)?;
            img.write_ppm(&out)?;
            println!("psnr={:.4}", psnr(&img, &vs.views[v].image)?);
        }
        Command::Train { dataset, out, steps, loss } => {
            let c = config_from(common, opt("train_steps", &steps).into_iter().collect())?;
            let d = Dataset::load(&dataset)?;
            let init = FieldParams::init(c.field, c.resolved_seed("init_seed"))?;
            let pc = PhotometricConfig {
                steps: c.train_steps,
                batch_rays: c.train_batch,
                lr: c.train_lr,
                n_samples: c.n_samples,
                seed: c.resolved_seed("train_seed"),
            };
            let (p, trace) = train_photometric(&init, &d.train, &pc)?;
            p.save(&out)?;
            if let Some(l) = loss {
                write_loss_csv(&l, &trace)?;
            }
            println!("final loss={:.6}", trace.last().copied().unwrap_or(f64::NAN));
        }
        Command::Shape {
            checkpoint,
            dataset,
            out,
            epochs,
            affinity,
            trace,
        } => {
            let c = config_from(common, [opt("shape_epochs", &epochs), opt("affinity", &affinity)].into_iter().flatten().collect())?;
            let d = Dataset::load(&dataset)?;
            let pre = FieldParams::load(&checkpoint)?;
            let sc = ShapingConfig {
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
            };
            let aff = build_affinity(&sc.affinity, &d.train)?;
            let (p, tr) = shape(&pre, &d.train, aff.as_ref(), &sc)?;
            p.save(&out)?;
            if let Some(t) = trace {
                write_trace_csv(&t, &tr)?;
            }
            if let Some(r) = tr.last() {
                println!("final l_nerf={:.6} l_mig={:.6} l_norm={:.6}", r.l_nerf, r.l_mig, r.l_norm);
            }
        }
        Command::MiProbe {
            checkpoint,
            dataset,
            split: s,
            view,
            pairs,
            map,
            target_view,
            sigma,
            draws,
            bins,
            pattern,
            pattern_arg,
            out,
        } => {
            let c = config_from(common, vec![])?;
            let params = FieldParams::load(&checkpoint)?;
            let d = Dataset::load(&dataset)?;
            let vs = split(&d, &s)?;
            let cam = &vs.cameras[view_index(vs, view)?];
            let spec = perturbation(&params, &pattern, pattern_arg.as_deref(), sigma, c.resolved_seed("propagate_seed"))?;
            let pixel = |u: usize, v: usize| {
                if u < cam.width && v < cam.height {
                    Ok(cam.ray(u, v))
                } else {
                    Err(Error::Config(format!("pixel ({u}, {v}) outside {}x{} view", cam.width, cam.height)))
                }
            };
            match (pairs, map) {
                (Some(p), _) => {
                    let list = read_pairs(&p)?;
                    let mut records = Vec::with_capacity(list.len());
                    for (k, q) in list.iter().enumerate() {
                        let seed = jnerf_core::rng::derive(c.seed, k as u64);
                        let e = mc_mi_estimate(&params, &pixel(q[0], q[1])?, &pixel(q[2], q[3])?, &spec, c.n_samples, draws, bins, seed)?;
                        println!("{}", e.record());
                        records.push(e);
                    }
                    if let Some(o) = out {
                        write_records(&o, &records)?;
                    }
                }
                (None, Some(m)) => {
                    let tcam = &vs.cameras[view_index(vs, target_view.unwrap_or(view))?];
                    let mm = mi_map(&params, &pixel(m[0], m[1])?, tcam, &spec, c.n_samples)?;
                    let prefix = out.unwrap_or_else(|| PathBuf::from("mi_map"));
                    mm.write_ppm(&prefix.with_extension("ppm"))?;
                    let path = prefix.with_extension("jtns");
                    let f = std::fs::File::create(&path).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
                    write_jtns(std::io::BufWriter::new(f), &Stored::F64(mm.to_tensor()))?;
                    let max = mm.values.iter().copied().fold(0.0, f64::max);
                    println!("map {}x{} max={max:.6} -> {}", mm.width, mm.height, prefix.display());
                }
                (None, None) => return Err(Error::Config("mi-probe needs --pairs or --map".into())),
            }
        }
        Command::Propagate {
            checkpoint,
            dataset,
            mode,
            variant,
            sigma,
            source_view,
            seeds,
            density,
            out,
        } => {
            let extra = [
                opt("mode", &mode),
                opt("variant", &variant),
                Some(("sigma", sigma.to_string())),
                opt("source_view", &source_view),
                opt("density", &density),
            ];
            let mut c = config_from(common, extra.into_iter().flatten().collect())?;
            let d = Dataset::load(&dataset)?;
            c.n_train = d.train.len();
            c.n_test = d.test.len();
            c.validate()?;
            let params = FieldParams::load(&checkpoint)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
            let inputs = PropagationInputs::new(&c, &params, &d)?;
            let rows = match c.mode {
                Mode::Sparse => {
                    let res = match &seeds {
                        Some(p) => {
                            let cam = &d.train.cameras[c.source_view];
                            let s = SeedLabels::load(p, c.source_view, cam.width, cam.height, c.label_mode)?;
                            inputs.sparse_with(&c, &s, &[c.sigma], c.variant)?
                        }
                        None => inputs.sparse(&c, &[c.sigma], c.variant)?,
                    };
                    for (t, r) in inputs.targets.iter().zip(&res[0].1) {
                        r.save(&out, &format!("target_{t}"))?;
                    }
                    res.into_iter().map(|r| r.0).collect::<Vec<_>>()
                }
                Mode::Dense => {
                    let o = inputs.dense(&c, c.sigma, c.density, c.variant)?;
                    for (k, t) in inputs.targets.iter().enumerate() {
                        jnerf_core::experiment::save_labels(&out, &format!("target_{t}_dense"), &o.argmax[k])?;
                        if let Some(m) = o.mlp.get(k) {
                            jnerf_core::experiment::save_labels(&out, &format!("target_{t}_mlp"), m)?;
                        }
                    }
                    o.rows
                }
            };
            write_metrics_csv(&out.join("metrics.csv"), &c.experiment_id, &rows)?;
            rows.iter().for_each(|r| print_row(&c.experiment_id, r));
        }
        Command::Recolor {
            checkpoint,
            dataset,
            source_view,
            pixel,
            delta,
            sigma,
            target_view,
            out,
        } => {
            let c = config_from(common, vec![])?;
            let params = FieldParams::load(&checkpoint)?;
            let d = Dataset::load(&dataset)?;
            let src = &d.train.cameras[view_index(&d.train, source_view)?];
            let tgt = &d.test.cameras[view_index(&d.test, target_view)?];
            let (u, v) = (pixel[0], pixel[1]);
            if u >= src.width || v >= src.height {
                return Err(Error::Config(format!("pixel ({u}, {v}) outside the source view")));
            }
            let img = recolor_entity(&params, src, v * src.width + u, [delta[0], delta[1], delta[2]], sigma, tgt, c.n_samples)?;
            img.write_ppm(&out)?;
            println!("recolored view {target_view} -> {}", out.display());
        }
        Command::Eval { pred, gt, seen, source } => {
            let p = LabelImage::load(&pred)?;
            let g = LabelImage::load(&gt)?;
            let classes: Vec<u32> = match (seen, source) {
                (Some(s), _) => s
                    .split(',')
                    .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("bad class id `{x}`"))))
                    .collect::<Result<_>>()?,
                (None, Some(src)) => LabelImage::load(&src)?.classes(),
                (None, None) => g.classes(),
            };
            let r = compute_metrics(&p, &g, &classes)?;
            println!("mIoU={:.6} avg_acc={:.6} total_acc={:.6}", r.miou, r.avg_class_acc, r.total_acc);
            for (k, v) in &r.per_class_iou {
                println!("class {k} iou={v:.6}");
            }
        }
        Command::Experiment => {
            if common.config.is_none() {
                return Err(Error::Config("experiment needs --config".into()));
            }
            let c = config_from(common, vec![])?;
            let report = run_experiment(&c)?;
            println!("config_hash={}", report.config_hash);
            println!("psnr_pre={:.4} psnr_post={:.4}", report.psnr_pre, report.psnr_post);
            report.rows.iter().for_each(|r| print_row(&report.experiment_id, r));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli.common, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(1)
        }
    }
}
