use rand::Rng;

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub hidden: (usize, usize),
    pub lr: f64,
    pub iterations: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: (256, 128),
            lr: 1e-3,
            iterations: 20_000,
            batch: 256,
            seed: 0,
        }
    }
}

/// `K -> 256 -> 128 -> K` rectifier network mapping per-pixel responses to
/// class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationMlp {
    pub classes: Vec<u32>,
    /// Responses are multiplied by this before the first layer.
    pub input_scale: f64,
    tensors: Vec<(String, Tensor)>,
}

const LAYERS: [&str; 3] = ["l1", "l2", "l3"];

impl AggregationMlp {
    fn init(classes: &[u32], hidden: (usize, usize), input_scale: f64, seed: u64) -> Self {
        let k = classes.len();
        let dims = [(hidden.0, k), (hidden.1, hidden.0), (k, hidden.1)];
        let mut r = rng::stream(seed, 0xA66);
        let mut tensors = Vec::new();
        for (name, (out, inp)) in LAYERS.iter().zip(dims) {
            let b = 1.0 / (inp as f64).sqrt();
            let w = (0..out * inp).map(|_| r.gen_range(-b..b)).collect();
            tensors.push((format!("{name}.weight"), Tensor::matrix(out, inp, w)));
            tensors.push((format!("{name}.bias"), Tensor::vector(vec![0.0; out])));
        }
        Self {
            classes: classes.to_vec(),
            input_scale,
            tensors,
        }
    }

    fn graph(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<Var> {
        let mut h = x;
        for (i, name) in LAYERS.iter().enumerate() {
            let get = |suffix: &str| {
                self.tensors
                    .iter()
                    .find(|(n, _)| n == &format!("{name}.{suffix}"))
                    .map(|(n, t)| (n.clone(), t.clone()))
                    .expect("layer present")
            };
            let (wn, wt) = get("weight");
            let (bn, bt) = get("bias");
            let (w, b) = if trainable {
                (tape.param(wn, wt), tape.param(bn, bt))
            } else {
                (tape.constant(wt), tape.constant(bt))
            };
            let z = tape.matmul_nt(h, w)?;
            h = tape.add_bias(z, b)?;
            if i < 2 {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Class logits for pixel-major `[P x K]` responses.
    pub fn logits(&self, responses: &[f64]) -> Result<Tensor> {
        let k = self.classes.len();
        if k == 0 || !responses.len().is_multiple_of(k) {
            return Err(Error::invalid("responses do not match the class count"));
        }
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(responses.len() / k, k, responses.iter().map(|v| v * self.input_scale).collect()));
        let out = self.graph(&mut tape, x, false)?;
        Ok(tape.value(out).clone())
    }

    /// Argmax class ids (lowest index wins ties).
    pub fn predict(&self, responses: &[f64]) -> Result<Vec<u32>> {
        let l = self.logits(responses)?;
        Ok((0..l.rows())
            .map(|i| {
                let row = l.row(i);
                let mut best = 0;
                for j in 1..row.len() {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                self.classes[best]
            })
            .collect())
    }
}

/// Fits the aggregation network with cross-entropy on labeled pixels.
/// `responses` is pixel-major `[P x K]`; pixels whose label is not one of
/// `classes` are skipped.
pub fn train_aggregation_mlp(responses: &[f64], labels: &[u32], classes: &[u32], input_scale: f64, config: &MlpConfig) -> Result<AggregationMlp> {
    let k = classes.len();
    if k == 0 || responses.len() != labels.len() * k {
        return Err(Error::invalid("responses, labels and classes disagree"));
    }
    let rows: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(p, l)| classes.iter().position(|c| c == l).map(|ci| (p, ci)))
        .collect();
    if rows.is_empty() {
        return Err(Error::invalid("no labeled pixels to train on"));
    }
    let mut mlp = AggregationMlp::init(classes, config.hidden, input_scale, config.seed);
    let mut adam = Adam::new(config.lr);
    let mut r = rng::stream(config.seed, 0xB47C);
    let b = config.batch.min(rows.len()).max(1);
    for step in 0..config.iterations {
        let pick: Vec<(usize, usize)> = (0..b).map(|_| rows[r.gen_range(0..rows.len())]).collect();
        let x: Vec<f64> = pick
            .iter()
            .flat_map(|&(p, _)| responses[p * k..(p + 1) * k].iter().map(|v| v * input_scale))
            .collect();
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::matrix(b, k, x));
        let logits = mlp.graph(&mut tape, xv, true)?;
        // log-sum-exp with a constant per-row shift
        let lv = tape.value(logits).clone();
        let mut shift = vec![0.0; b * k];
        let mut row_max = vec![0.0; b];
        let mut onehot = vec![0.0; b * k];
        for i in 0..b {
            let m = lv.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row_max[i] = m;
            shift[i * k..(i + 1) * k].fill(m);
            onehot[i * k + pick[i].1] = 1.0;
        }
        let sh = tape.constant(Tensor::matrix(b, k, shift));
        let centered = tape.sub(logits, sh)?;
        let e = tape.exp(centered);
        let s = tape.sum_rows(e);
        let lse = tape.log(s);
        let lse_sum = tape.sum_all(lse);
        let oh = tape.constant(Tensor::matrix(b, k, onehot));
        let picked = tape.mul(centered, oh)?;
        let picked_sum = tape.sum_all(picked);
        let diff = tape.sub(lse_sum, picked_sum)?;
        let loss = tape.scale(diff, 1.0 / b as f64);
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Divergence { step, loss: value });
        }
        let grads = tape.backward(loss)?;
        adam.step(mlp.tensors.iter_mut().map(|(n, t)| (n.as_str(), t)), &grads);
    }
    Ok(mlp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_responses_are_reproduced() {
        let classes = [1, 2, 5];
        let labels: Vec<u32> = (0..60).map(|i| classes[i % 3]).collect();
        let resp: Vec<f64> = labels
            .iter()
            .flat_map(|l| classes.iter().map(move |c| if c == l { 1.0 } else { 0.0 }))
            .collect();
        let cfg = MlpConfig {
            hidden: (32, 16),
            iterations: 300,
            batch: 30,
            ..MlpConfig::default()
        };
        let mlp = train_aggregation_mlp(&resp, &labels, &classes, 1.0, &cfg).unwrap();
        assert_eq!(mlp.predict(&resp).unwrap(), labels);
    }

    #[test]
    fn default_shape_matches_spec() {
        let mlp = AggregationMlp::init(&[1, 2, 3, 4], (256, 128), 1.0, 0);
        let shapes: Vec<Vec<usize>> = mlp.tensors.iter().filter(|(n, _)| n.ends_with("weight")).map(|(_, t)| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![256, 4], vec![128, 256], vec![4, 128]]);
    }
}
