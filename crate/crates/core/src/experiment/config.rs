use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::FieldConfig;
use crate::propagation::Variant;
use crate::rng;
use crate::scene::LabelMode;

/// Sparse (one pixel per class) or dense (labeled source view) setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Sparse,
    Dense,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Sparse => "sparse",
            Mode::Dense => "dense",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse" => Ok(Mode::Sparse),
            "dense" => Ok(Mode::Dense),
            _ => Err(Error::Config(format!("mode must be sparse or dense, got `{s}`"))),
        }
    }
}

/// Which held-out views are propagation targets, by angle to the source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ViewFilter {
    All,
    /// Under 30 degrees.
    Close,
    /// Over 90 degrees.
    Far,
}

impl ViewFilter {
    pub fn name(&self) -> &'static str {
        match self {
            ViewFilter::All => "all",
            ViewFilter::Close => "close",
            ViewFilter::Far => "far",
        }
    }

    pub fn accepts(&self, angle: f64) -> bool {
        match self {
            ViewFilter::All => true,
            ViewFilter::Close => angle < 30f64.to_radians(),
            ViewFilter::Far => angle > 90f64.to_radians(),
        }
    }
}

impl FromStr for ViewFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(ViewFilter::All),
            "close" => Ok(ViewFilter::Close),
            "far" => Ok(ViewFilter::Far),
            _ => Err(Error::Config(format!("views must be all, close or far, got `{s}`"))),
        }
    }
}

/// Everything a run depends on. Sub-seeds left unset are derived from
/// `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub seed: u64,
    pub scene_seed: Option<u64>,
    pub dataset_seed: Option<u64>,
    pub init_seed: Option<u64>,
    pub train_seed: Option<u64>,
    pub shape_seed: Option<u64>,
    pub propagate_seed: Option<u64>,

    pub n_objects: usize,
    /// 0 means one class per object.
    pub n_classes: usize,
    pub label_mode: LabelMode,
    pub width: usize,
    pub height: usize,
    pub fov_y: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub source_view: usize,
    pub views: ViewFilter,

    pub field: FieldConfig,
    pub n_samples: usize,
    pub train_steps: usize,
    pub train_batch: usize,
    pub train_lr: f64,

    pub shaping: bool,
    pub shape_epochs: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub tau: f64,
    pub shape_batch: usize,
    pub shape_nerf_batch: usize,
    pub shape_lr: f64,
    pub threshold_init: f64,
    pub validate_every: usize,
    /// `gt` or a JTNS feature file.
    pub affinity: String,

    pub mode: Mode,
    pub variant: Variant,
    pub sigma: f64,
    pub density: f64,
    pub sweep_sigma: Vec<f64>,
    pub sweep_density: Vec<f64>,
    pub combos: usize,
    pub qualified: usize,
    pub max_rounds: usize,
    pub mlp: bool,
    pub mlp_iterations: usize,
    pub mlp_lr: f64,

    pub checkpoint: Option<PathBuf>,
    pub shaped_checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let field = FieldConfig::default();
        Self {
            experiment_id: "exp".into(),
            seed: 0,
            scene_seed: None,
            dataset_seed: None,
            init_seed: None,
            train_seed: None,
            shape_seed: None,
            propagate_seed: None,
            n_objects: 4,
            n_classes: 0,
            label_mode: LabelMode::Semantic,
            width: 64,
            height: 64,
            fov_y: 0.8,
            n_train: 16,
            n_test: 4,
            source_view: 0,
            views: ViewFilter::All,
            field,
            n_samples: 64,
            train_steps: 5000,
            train_batch: 64,
            train_lr: 5e-4,
            shaping: true,
            shape_epochs: 10_000,
            lambda: 0.01,
            gamma: 0.01,
            tau: 0.1,
            shape_batch: 64,
            shape_nerf_batch: 64,
            shape_lr: 5e-4,
            threshold_init: 0.65,
            validate_every: 500,
            affinity: "gt".into(),
            mode: Mode::Sparse,
            variant: Variant::TwoD,
            sigma: crate::propagation::DEFAULT_SIGMA,
            density: 1.0,
            sweep_sigma: Vec::new(),
            sweep_density: Vec::new(),
            combos: 20,
            qualified: 5,
            max_rounds: 50,
            mlp: true,
            mlp_iterations: 20_000,
            mlp_lr: 1e-3,
            checkpoint: None,
            shaped_checkpoint: None,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("bad value `{v}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad value `{v}` for `{key}`: expected true or false"))),
    }
}

fn parse_opt_seed(key: &str, v: &str) -> Result<Option<u64>> {
    if v == "auto" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.is_empty() || v == "none" {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn parse_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty() && v != "none").then(|| PathBuf::from(v))
}

fn show_seed(s: Option<u64>) -> String {
    s.map_or_else(|| "auto".into(), |v| v.to_string())
}

fn show_list(v: &[f64]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses a `key=value` command-line override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| Error::Config(format!("override `{s}` is not key=value")))
}

const SEED_LABELS: [(&str, u64); 6] = [
    ("scene_seed", 1),
    ("dataset_seed", 2),
    ("init_seed", 3),
    ("train_seed", 4),
    ("shape_seed", 5),
    ("propagate_seed", 6),
];

impl ExperimentConfig {
    /// Canonical `(key, value)` list; its keys are exactly the accepted
    /// ones.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = &self.field;
        vec![
            ("experiment_id", self.experiment_id.clone()),
            ("seed", self.seed.to_string()),
            ("scene_seed", show_seed(self.scene_seed)),
            ("dataset_seed", show_seed(self.dataset_seed)),
            ("init_seed", show_seed(self.init_seed)),
            ("train_seed", show_seed(self.train_seed)),
            ("shape_seed", show_seed(self.shape_seed)),
            ("propagate_seed", show_seed(self.propagate_seed)),
            ("n_objects", self.n_objects.to_string()),
            ("n_classes", self.n_classes.to_string()),
            ("label_mode", self.label_mode.name().into()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("fov_y", self.fov_y.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("source_view", self.source_view.to_string()),
            ("views", self.views.name().into()),
            ("pos_freqs", f.pos_freqs.to_string()),
            ("dir_freqs", f.dir_freqs.to_string()),
            ("field_width", f.width.to_string()),
            ("field_depth", f.depth.to_string()),
            ("color_width", f.color_width.to_string()),
            ("n_samples", self.n_samples.to_string()),
            ("train_steps", self.train_steps.to_string()),
            ("train_batch", self.train_batch.to_string()),
            ("train_lr", self.train_lr.to_string()),
            ("shaping", self.shaping.to_string()),
            ("shape_epochs", self.shape_epochs.to_string()),
            ("lambda", self.lambda.to_string()),
            ("gamma", self.gamma.to_string()),
            ("tau", self.tau.to_string()),
            ("shape_batch", self.shape_batch.to_string()),
            ("shape_nerf_batch", self.shape_nerf_batch.to_string()),
            ("shape_lr", self.shape_lr.to_string()),
            ("threshold_init", self.threshold_init.to_string()),
            ("validate_every", self.validate_every.to_string()),
            ("affinity", self.affinity.clone()),
            ("mode", self.mode.name().into()),
            ("variant", self.variant.name().into()),
            ("sigma", self.sigma.to_string()),
            ("density", self.density.to_string()),
            ("sweep_sigma", show_list(&self.sweep_sigma)),
            ("sweep_density", show_list(&self.sweep_density)),
            ("combos", self.combos.to_string()),
            ("qualified", self.qualified.to_string()),
            ("max_rounds", self.max_rounds.to_string()),
            ("mlp", self.mlp.to_string()),
            ("mlp_iterations", self.mlp_iterations.to_string()),
            ("mlp_lr", self.mlp_lr.to_string()),
            ("checkpoint", show_path(&self.checkpoint)),
            ("shaped_checkpoint", show_path(&self.shaped_checkpoint)),
            ("out_dir", self.out_dir.display().to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "experiment_id" => self.experiment_id = v.to_string(),
            "seed" => self.seed = parse(k, v)?,
            "scene_seed" => self.scene_seed = parse_opt_seed(k, v)?,
            "dataset_seed" => self.dataset_seed = parse_opt_seed(k, v)?,
            "init_seed" => self.init_seed = parse_opt_seed(k, v)?,
            "train_seed" => self.train_seed = parse_opt_seed(k, v)?,
            "shape_seed" => self.shape_seed = parse_opt_seed(k, v)?,
            "propagate_seed" => self.propagate_seed = parse_opt_seed(k, v)?,
            "n_objects" => self.n_objects = parse(k, v)?,
            "n_classes" => self.n_classes = parse(k, v)?,
            "label_mode" => self.label_mode = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "width" => self.width = parse(k, v)?,
            "height" => self.height = parse(k, v)?,
            "fov_y" => self.fov_y = parse(k, v)?,
            "n_train" => self.n_train = parse(k, v)?,
            "n_test" => self.n_test = parse(k, v)?,
            "source_view" => self.source_view = parse(k, v)?,
            "views" => self.views = v.parse()?,
            "pos_freqs" => self.field.pos_freqs = parse(k, v)?,
            "dir_freqs" => self.field.dir_freqs = parse(k, v)?,
            "field_width" => self.field.width = parse(k, v)?,
            "field_depth" => self.field.depth = parse(k, v)?,
            "color_width" => self.field.color_width = parse(k, v)?,
            "n_samples" => self.n_samples = parse(k, v)?,
            "train_steps" => self.train_steps = parse(k, v)?,
            "train_batch" => self.train_batch = parse(k, v)?,
            "train_lr" => self.train_lr = parse(k, v)?,
            "shaping" => self.shaping = parse_bool(k, v)?,
            "shape_epochs" => self.shape_epochs = parse(k, v)?,
            "lambda" => self.lambda = parse(k, v)?,
            "gamma" => self.gamma = parse(k, v)?,
            "tau" => self.tau = parse(k, v)?,
            "shape_batch" => self.shape_batch = parse(k, v)?,
            "shape_nerf_batch" => self.shape_nerf_batch = parse(k, v)?,
            "shape_lr" => self.shape_lr = parse(k, v)?,
            "threshold_init" => self.threshold_init = parse(k, v)?,
            "validate_every" => self.validate_every = parse(k, v)?,
            "affinity" => self.affinity = v.to_string(),
            "mode" => self.mode = v.parse()?,
            "variant" => self.variant = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "sigma" => self.sigma = parse(k, v)?,
            "density" => self.density = parse(k, v)?,
            "sweep_sigma" => self.sweep_sigma = parse_list(k, v)?,
            "sweep_density" => self.sweep_density = parse_list(k, v)?,
            "combos" => self.combos = parse(k, v)?,
            "qualified" => self.qualified = parse(k, v)?,
            "max_rounds" => self.max_rounds = parse(k, v)?,
            "mlp" => self.mlp = parse_bool(k, v)?,
            "mlp_iterations" => self.mlp_iterations = parse(k, v)?,
            "mlp_lr" => self.mlp_lr = parse(k, v)?,
            "checkpoint" => self.checkpoint = parse_path(v),
            "shaped_checkpoint" => self.shaped_checkpoint = parse_path(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => {
                return Err(Error::Config(format!(
                    "unknown key `{key}`; valid keys: {}",
                    Self::keys().join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        pairs.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply(&parse_config_text(text)?)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 over every canonical entry.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// Explicit sub-seed or one derived from `seed`.
    pub fn resolved_seed(&self, key: &str) -> u64 {
        let explicit = match key {
            "scene_seed" => self.scene_seed,
            "dataset_seed" => self.dataset_seed,
            "init_seed" => self.init_seed,
            "train_seed" => self.train_seed,
            "shape_seed" => self.shape_seed,
            "propagate_seed" => self.propagate_seed,
            _ => None,
        };
        let label = SEED_LABELS.iter().find(|(k, _)| *k == key).map_or(0, |(_, l)| *l);
        explicit.unwrap_or_else(|| rng::derive(self.seed, label))
    }

    pub fn resolved_seeds(&self) -> Vec<(&'static str, u64)> {
        SEED_LABELS.iter().map(|(k, _)| (*k, self.resolved_seed(k))).collect()
    }

    pub fn n_classes_resolved(&self) -> usize {
        if self.n_classes == 0 {
            self.n_objects
        } else {
            self.n_classes
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let in_unit = |d: f64| d > 0.0 && d <= 1.0;
        if !in_unit(self.density) || !self.sweep_density.iter().all(|&d| in_unit(d)) {
            return bad("density fractions must lie in (0, 1]".into());
        }
        let sig_ok = |s: f64| s >= 0.0 && s.is_finite();
        if !sig_ok(self.sigma) || !self.sweep_sigma.iter().all(|&s| sig_ok(s)) {
            return bad("sigma values must be finite and non-negative".into());
        }
        if self.source_view >= self.n_train {
            return bad(format!("source_view {} is not among {} training views", self.source_view, self.n_train));
        }
        if self.width == 0 || self.height == 0 || self.n_samples == 0 {
            return bad("image size and sample count must be positive".into());
        }
        if self.train_batch == 0 || !(self.train_lr > 0.0) || !(self.mlp_lr > 0.0) {
            return bad("training batch and learning rates must be positive".into());
        }
        if self.qualified == 0 || self.combos == 0 {
            return bad("combos and qualified must be positive".into());
        }
        for p in [&self.checkpoint, &self.shaped_checkpoint].into_iter().flatten() {
            if !p.exists() {
                return bad(format!("checkpoint {} does not exist", p.display()));
            }
        }
        if self.affinity != "gt" && !Path::new(&self.affinity).exists() {
            return bad(format!("affinity must be `gt` or an existing feature file, got `{}`", self.affinity));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alternate(key: &str) -> &'static str {
        match key {
            "experiment_id" => "other",
            "label_mode" => "instance",
            "views" => "far",
            "shaping" | "mlp" => "false",
            "affinity" => "features.jtns",
            "mode" => "dense",
            "variant" => "3d",
            "sweep_sigma" | "sweep_density" => "0.5,1",
            "checkpoint" | "shaped_checkpoint" => "ck.jtns",
            "out_dir" => "elsewhere",
            "fov_y" | "train_lr" | "lambda" | "gamma" | "tau" | "shape_lr" | "threshold_init" | "sigma" | "density" | "mlp_lr" => "0.7",
            _ => "3",
        }
    }

    #[test]
    fn text_roundtrip() {
        let mut c = ExperimentConfig::default();
        c.set("sweep_sigma", "0.01, 0.1").unwrap();
        c.set("scene_seed", "12").unwrap();
        c.set("checkpoint", "a/b.jtns").unwrap();
        assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap(), c);
        assert_eq!(ExperimentConfig::from_text("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn comments_and_spacing() {
        let c = ExperimentConfig::from_text("# header\n  sigma=0.5   # trailing\n\nmode = dense\n").unwrap();
        assert_eq!(c.sigma, 0.5);
        assert_eq!(c.mode, Mode::Dense);
        assert!(matches!(ExperimentConfig::from_text("sigma 0.5"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let e = ExperimentConfig::from_text("sigmaa = 1").unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, Error::Config(_)));
        for k in ExperimentConfig::keys() {
            assert!(msg.contains(k), "{k} missing from `{msg}`");
        }
        assert!(matches!(ExperimentConfig::from_text("sigma = fast"), Err(Error::Config(_))));
    }

    #[test]
    fn every_key_changes_the_hash() {
        let base = ExperimentConfig::default();
        let h0 = base.hash();
        let keys = ExperimentConfig::keys();
        assert_eq!(keys.len(), keys.iter().collect::<std::collections::BTreeSet<_>>().len());
        for k in keys {
            let mut c = base.clone();
            c.set(k, alternate(k)).unwrap();
            assert_ne!(c.hash(), h0, "changing `{k}` kept the hash");
            assert_eq!(ExperimentConfig::from_text(&c.to_text()).unwrap().hash(), c.hash());
        }
    }

    #[test]
    fn seeds_resolve_from_master_unless_set() {
        let mut c = ExperimentConfig::default();
        let seeds: Vec<u64> = c.resolved_seeds().iter().map(|s| s.1).collect();
        let mut uniq = seeds.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), seeds.len());
        c.seed = 9;
        assert_ne!(c.resolved_seed("scene_seed"), seeds[0]);
        c.scene_seed = Some(4);
        assert_eq!(c.resolved_seed("scene_seed"), 4);
    }

    #[test]
    fn validation() {
        let ok = ExperimentConfig::default();
        assert!(ok.validate().is_ok());
        for (k, v) in [("density", "0"), ("density", "1.5"), ("sweep_density", "0.5,0"), ("sigma", "-1"), ("source_view", "16"), ("checkpoint", "/no/such/file.jtns"), ("affinity", "/no/such/features.jtns")] {
            let mut c = ok.clone();
            c.set(k, v).unwrap();
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{k}={v} accepted");
        }
    }

    #[test]
    fn view_filter_thresholds() {
        let d = |x: f64| x.to_radians();
        assert!(ViewFilter::Close.accepts(d(29.0)) && !ViewFilter::Close.accepts(d(31.0)));
        assert!(ViewFilter::Far.accepts(d(91.0)) && !ViewFilter::Far.accepts(d(89.0)));
        assert!(ViewFilter::All.accepts(d(180.0)));
    }
}
