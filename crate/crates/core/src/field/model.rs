use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use rand::Rng;

use super::encoding::encoded_dim;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{read_archive, write_archive, Stored, Tape, Tensor, Var};

/// Name of the RGB output layer whose weights form the perturbation set.
pub const RGB_WEIGHT: &str = "rgb.weight";
pub const RGB_BIAS: &str = "rgb.bias";

/// Architecture knobs of the radiance MLP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FieldConfig {
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    /// Trunk width.
    pub width: usize,
    /// Number of trunk layers.
    pub depth: usize,
    /// Width `H` of the color hidden layer feeding the RGB layer.
    pub color_width: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            pos_freqs: 6,
            dir_freqs: 4,
            width: 64,
            depth: 4,
            color_width: 64,
        }
    }
}

impl FieldConfig {
    pub fn pos_dim(&self) -> usize {
        encoded_dim(self.pos_freqs)
    }

    pub fn dir_dim(&self) -> usize {
        encoded_dim(self.dir_freqs)
    }

    /// Parameter names and shapes in flattening order. Linear layers are
    /// stored `[out x in]`.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut fan_in = self.pos_dim();
        for i in 0..self.depth {
            out.push((format!("trunk.{i}.weight"), vec![self.width, fan_in]));
            out.push((format!("trunk.{i}.bias"), vec![self.width]));
            fan_in = self.width;
        }
        out.push(("density.weight".into(), vec![1, self.width]));
        out.push(("density.bias".into(), vec![1]));
        out.push(("feature.weight".into(), vec![self.width, self.width]));
        out.push(("feature.bias".into(), vec![self.width]));
        out.push(("color.weight".into(), vec![self.color_width, self.width + self.dir_dim()]));
        out.push(("color.bias".into(), vec![self.color_width]));
        out.push((RGB_WEIGHT.into(), vec![3, self.color_width]));
        out.push((RGB_BIAS.into(), vec![3]));
        out
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 || self.color_width == 0 {
            return Err(Error::Config("field width, depth and color width must be positive".into()));
        }
        Ok(())
    }
}

/// All trainable weights of the field, kept in a fixed flattening order.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    config: FieldConfig,
    tensors: Vec<(String, Tensor)>,
}

impl FieldParams {
    /// Uniform `±1/sqrt(fan_in)` initialization for every layer.
    pub fn init(config: FieldConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, 0x1417);
        let layout = config.layout();
        let mut tensors = Vec::with_capacity(layout.len());
        let mut fan_in = 1;
        for (name, shape) in layout {
            if shape.len() == 2 {
                fan_in = shape[1];
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let mut data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            if name == "density.bias" {
                data[0] = 0.1;
            }
            tensors.push((name, Tensor::new(shape, data)?));
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn flat_len(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Offset range of a named tensor inside the flattened vector.
    pub fn range_of(&self, name: &str) -> Option<Range<usize>> {
        let mut offset = 0;
        for (n, t) in &self.tensors {
            if n == name {
                return Some(offset..offset + t.numel());
            }
            offset += t.numel();
        }
        None
    }

    /// Flattened range of the RGB output weights (`3 x H`, bias excluded).
    pub fn designated_range(&self) -> Range<usize> {
        self.range_of(RGB_WEIGHT).expect("rgb layer is always present")
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn flat_get(&self, idx: usize) -> Option<f64> {
        let mut offset = 0;
        for (_, t) in &self.tensors {
            if idx < offset + t.numel() {
                return Some(t.data()[idx - offset]);
            }
            offset += t.numel();
        }
        None
    }

    /// Adds `delta` to flattened entry `idx`.
    pub fn flat_add(&mut self, idx: usize, delta: f64) -> Result<()> {
        let mut offset = 0;
        for (_, t) in &mut self.tensors {
            if idx < offset + t.numel() {
                t.data_mut()[idx - offset] += delta;
                return Ok(());
            }
            offset += t.numel();
        }
        Err(Error::invalid(format!("parameter index {idx} out of range")))
    }

    /// Flat gradient vector ordered like [`FieldParams::flatten`].
    pub fn flatten_grads(&self, grads: &BTreeMap<String, Tensor>) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for (name, t) in &self.tensors {
            match grads.get(name) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, t.numel())),
            }
        }
        out
    }

    /// Records every tensor on the tape, as named parameters when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    tape.param(name.clone(), t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        ParamVars { vars }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|(_, t)| t.all_finite())
    }

    pub fn to_archive(&self) -> Vec<(String, Stored)> {
        let c = &self.config;
        let cfg = [c.pos_freqs, c.dir_freqs, c.width, c.depth, c.color_width]
            .iter()
            .map(|&v| v as i64)
            .collect();
        let mut out = vec![(
            "config".to_string(),
            Stored::I64 {
                shape: vec![5],
                data: cfg,
            },
        )];
        out.extend(self.tensors.iter().map(|(n, t)| (n.clone(), Stored::F64(t.clone()))));
        out
    }

    pub fn from_archive(entries: Vec<(String, Stored)>) -> Result<Self> {
        let mut map: BTreeMap<String, Stored> = entries.into_iter().collect();
        let bad = |d: String| Error::Format {
            what: "checkpoint",
            detail: d,
        };
        let (_, cfg) = map
            .remove("config")
            .ok_or_else(|| bad("missing config entry".into()))?
            .into_i64()?;
        if cfg.len() != 5 || cfg.iter().any(|&v| v < 0) {
            return Err(bad(format!("invalid config {cfg:?}")));
        }
        let config = FieldConfig {
            pos_freqs: cfg[0] as usize,
            dir_freqs: cfg[1] as usize,
            width: cfg[2] as usize,
            depth: cfg[3] as usize,
            color_width: cfg[4] as usize,
        };
        config.validate()?;
        let mut tensors = Vec::new();
        for (name, shape) in config.layout() {
            let t = map
                .remove(&name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?
                .into_f64()?;
            if t.shape() != shape.as_slice() {
                return Err(bad(format!("{name}: shape {:?}, expected {shape:?}", t.shape())));
            }
            tensors.push((name, t));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_archive(std::io::BufWriter::new(f), &self.to_archive())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_archive(read_archive(std::io::BufReader::new(f))?)
    }
}

/// Tape handles for each parameter tensor.
pub struct ParamVars {
    vars: Vec<(String, Var)>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Var {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
    }
}

/// Per-sample outputs of the MLP recorded on a tape.
pub struct FieldGraph {
    /// `[N x 1]` density after ReLU.
    pub density: Var,
    /// `[N x H]` color hidden features feeding the RGB layer.
    pub hidden: Var,
    /// `[N x 3]` RGB pre-activations.
    pub logits: Var,
    /// `[N x 3]` sigmoid colors.
    pub rgb: Var,
}

fn linear(tape: &mut Tape, vars: &ParamVars, x: Var, layer: &str) -> Result<Var> {
    let h = tape.matmul_nt(x, vars.get(&format!("{layer}.weight")))?;
    tape.add_bias(h, vars.get(&format!("{layer}.bias")))
}

/// Records the MLP on `[N x pos_dim]` and `[N x dir_dim]` encoded inputs.
pub fn field_graph(tape: &mut Tape, config: &FieldConfig, vars: &ParamVars, enc_pos: Var, enc_dir: Var) -> Result<FieldGraph> {
    let mut x = enc_pos;
    for i in 0..config.depth {
        let h = linear(tape, vars, x, &format!("trunk.{i}"))?;
        x = tape.relu(h);
    }
    let d = linear(tape, vars, x, "density")?;
    let density = tape.relu(d);
    let feat = linear(tape, vars, x, "feature")?;
    let cat = tape.concat_cols(&[feat, enc_dir])?;
    let c = linear(tape, vars, cat, "color")?;
    let hidden = tape.relu(c);
    let logits = linear(tape, vars, hidden, "rgb")?;
    let rgb = tape.sigmoid(logits);
    Ok(FieldGraph {
        density,
        hidden,
        logits,
        rgb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FieldConfig {
        FieldConfig {
            pos_freqs: 2,
            dir_freqs: 1,
            width: 8,
            depth: 2,
            color_width: 5,
        }
    }

    #[test]
    fn layout_chains_and_designated_layer_is_3xh() {
        let p = FieldParams::init(small(), 1).unwrap();
        assert_eq!(p.get(RGB_WEIGHT).unwrap().shape(), &[3, 5]);
        assert_eq!(p.designated_range().len(), 15);
        assert_eq!(p.flatten().len(), p.flat_len());
        let r = p.designated_range();
        assert_eq!(p.flat_get(r.start), Some(p.get(RGB_WEIGHT).unwrap().data()[0]));
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(FieldParams::init(small(), 4).unwrap(), FieldParams::init(small(), 4).unwrap());
        assert_ne!(FieldParams::init(small(), 4).unwrap(), FieldParams::init(small(), 5).unwrap());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let p = FieldParams::init(small(), 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.jtns");
        p.save(&path).unwrap();
        assert_eq!(FieldParams::load(&path).unwrap(), p);
    }
}
