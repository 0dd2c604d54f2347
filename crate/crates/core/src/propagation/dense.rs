use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use super::{argmax_labels, response_logits, seed_direction, Variant};
use crate::error::{Error, Result};
use crate::field::RenderOutput;
use crate::metrics::compute_metrics;
use crate::rng;
use crate::scene::LabelImage;

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveConfig {
    /// Candidate combinations per round.
    pub combos: usize,
    /// Accepted selections to collect.
    pub qualified: usize,
    pub max_rounds: usize,
    pub sigma: f64,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            combos: 20,
            qualified: 5,
            max_rounds: 50,
            sigma: super::DEFAULT_SIGMA,
            variant: Variant::TwoD,
            seed: 0,
        }
    }
}

/// One accepted combination: a labeled pixel per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// `(pixel, class)` ordered like the result's classes.
    pub pixels: Vec<(usize, u32)>,
    pub directions: Vec<Option<Vec<f64>>>,
    /// Source-view mIoU once this selection is included.
    pub miou_after: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveResult {
    pub classes: Vec<u32>,
    pub selections: Vec<Selection>,
    pub miou_history: Vec<f64>,
    pub rounds: usize,
    /// All requested selections were found within the round budget.
    pub complete: bool,
}

impl AdaptiveResult {
    /// Per-class maximum over the selections' responses on a cached view.
    pub fn responses(&self, target: &[RenderOutput], sigma: f64, variant: Variant) -> Vec<f64> {
        let per: Vec<Vec<f64>> = self
            .selections
            .iter()
            .map(|s| response_logits(target, &s.directions, sigma, variant))
            .collect();
        reduce_max(&per, target.len() * self.classes.len())
    }
}

/// Elementwise maximum of equally long response arrays (zeros when empty).
pub fn reduce_max(parts: &[Vec<f64>], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for p in parts {
        for (o, v) in out.iter_mut().zip(p) {
            *o = f64::max(*o, *v);
        }
    }
    out
}

fn miou_of(logits: &[f64], classes: &[u32], labels: &LabelImage) -> Result<f64> {
    let (pred, _) = argmax_labels(logits, classes, labels.width, labels.height);
    Ok(compute_metrics(&pred, labels, classes)?.miou)
}

/// Repeatedly draws `combos` random one-pixel-per-class combinations from
/// the labeled source pixels, keeps the one whose responses raise the
/// source-view mIoU the most, and stops after `qualified` acceptances. A
/// round whose best gain is not positive is discarded, except that once the
/// reconstruction is perfect a candidate that keeps it perfect is accepted.
pub fn adaptive_gradient_sampling(source: &[RenderOutput], labels: &LabelImage, config: &AdaptiveConfig) -> Result<AdaptiveResult> {
    if source.len() != labels.len() {
        return Err(Error::invalid("source cache and labels differ in size"));
    }
    let classes = labels.classes();
    if classes.is_empty() {
        return Err(Error::invalid("source labels contain no classes"));
    }
    let pools: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..labels.len()).filter(|&i| labels.ids[i] == c).collect())
        .collect();
    let mut cache: BTreeMap<usize, Option<Vec<f64>>> = BTreeMap::new();
    let mut r = rng::stream(config.seed, 0xADA9);
    let n = source.len() * classes.len();
    let mut current = vec![0.0; n];
    let mut current_miou = 0.0;
    let mut selections = Vec::new();
    let mut history = Vec::new();
    let mut rounds = 0;

    while selections.len() < config.qualified && rounds < config.max_rounds {
        rounds += 1;
        let mut best: Option<(f64, Selection, Vec<f64>)> = None;
        for _ in 0..config.combos {
            let pixels: Vec<(usize, u32)> = pools
                .iter()
                .zip(&classes)
                .map(|(pool, &c)| (pool[r.gen_range(0..pool.len())], c))
                .collect();
            let directions: Vec<Option<Vec<f64>>> = pixels
                .iter()
                .map(|&(p, _)| cache.entry(p).or_insert_with(|| seed_direction(&source[p])).clone())
                .collect();
            let resp = response_logits(source, &directions, config.sigma, config.variant);
            let merged = reduce_max(&[current.clone(), resp], n);
            let miou = miou_of(&merged, &classes, labels)?;
            if best.as_ref().is_none_or(|b| miou > b.0) {
                best = Some((
                    miou,
                    Selection {
                        pixels,
                        directions,
                        miou_after: miou,
                    },
                    merged,
                ));
            }
        }
        let Some((miou, sel, merged)) = best else { break };
        let gain = miou - current_miou;
        let keeps_perfect = current_miou >= 1.0 && miou >= 1.0;
        if gain > 0.0 || keeps_perfect {
            current = merged;
            current_miou = miou;
            history.push(miou);
            selections.push(sel);
        }
    }
    let complete = selections.len() >= config.qualified;
    if !complete {
        log::warn!(
            "adaptive sampling found {} of {} selections in {rounds} rounds",
            selections.len(),
            config.qualified
        );
    }
    Ok(AdaptiveResult {
        classes,
        selections,
        miou_history: history,
        rounds,
        complete,
    })
}

/// Keeps, for every class, one connected 4-neighbour patch covering
/// `fraction` of the class area (grown from a random pixel; further patches
/// are started only if the first component is too small). Other pixels
/// become 0.
pub fn density_patch(labels: &LabelImage, fraction: f64, seed: u64) -> Result<LabelImage> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("density fraction must be in (0, 1], got {fraction}")));
    }
    let (w, h) = (labels.width, labels.height);
    let mut out = vec![0u32; labels.len()];
    let mut r = rng::stream(seed, 0xDE45);
    for c in labels.classes() {
        let pixels: Vec<usize> = (0..labels.len()).filter(|&i| labels.ids[i] == c).collect();
        let want = ((pixels.len() as f64 * fraction).ceil() as usize).clamp(1, pixels.len());
        let mut taken = 0;
        while taken < want {
            let free: Vec<usize> = pixels.iter().copied().filter(|&p| out[p] == 0).collect();
            let start = free[r.gen_range(0..free.len())];
            let mut queue = VecDeque::from([start]);
            out[start] = c;
            taken += 1;
            while let Some(p) = queue.pop_front() {
                if taken >= want {
                    break;
                }
                let (x, y) = (p % w, p / w);
                let mut nb = Vec::with_capacity(4);
                if x > 0 {
                    nb.push(p - 1);
                }
                if x + 1 < w {
                    nb.push(p + 1);
                }
                if y > 0 {
                    nb.push(p - w);
                }
                if y + 1 < h {
                    nb.push(p + w);
                }
                for q in nb {
                    if taken < want && labels.ids[q] == c && out[q] == 0 {
                        out[q] = c;
                        taken += 1;
                        queue.push_back(q);
                    }
                }
            }
        }
    }
    LabelImage::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_covers_requested_fraction() {
        let ids: Vec<u32> = (0..100).map(|i| if i % 10 < 5 { 1 } else { 2 }).collect();
        let l = LabelImage::new(10, 10, ids).unwrap();
        let p = density_patch(&l, 0.3, 4).unwrap();
        for c in [1, 2] {
            assert_eq!(p.ids.iter().filter(|&&v| v == c).count(), 15);
        }
        for (a, b) in p.ids.iter().zip(&l.ids) {
            assert!(*a == 0 || a == b);
        }
        assert_eq!(density_patch(&l, 1.0, 1).unwrap(), l);
        assert!(density_patch(&l, 0.0, 1).is_err());
        assert_eq!(density_patch(&l, 0.3, 4).unwrap(), p);
    }

    #[test]
    fn reduce_max_elementwise() {
        assert_eq!(reduce_max(&[vec![1.0, 0.0], vec![0.5, 2.0]], 2), vec![1.0, 2.0]);
        assert_eq!(reduce_max(&[], 2), vec![0.0, 0.0]);
    }
}
