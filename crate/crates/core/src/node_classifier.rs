//! Feature-hashed linear softmax classifier over `|A′| + 1` classes.
//!
//! Teacher training minimizes mean cross-entropy. Student training scales each
//! sample's cross-entropy gradient by `c · e^{(1-k)c}`, the parameter-dependent
//! part of the weighted noise-robust loss; the `e^c · U(0,1)` term has no
//! gradient and only shows up in reported loss values.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dom_model::{DetailPage, DomNodeRecord};
use crate::error::{LeastError, Result};
use crate::labels::Label;

pub const DEFAULT_DIM: usize = 1 << 15;
pub const PROB_FLOOR: f64 = 1e-12;
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Sparse `(index, value)` pairs sorted by index, indices unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureVector {
    pub entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Merge duplicate indices by summation and sort.
    pub fn from_unsorted(mut raw: Vec<(u32, f64)>) -> Self {
        raw.sort_by_key(|e| e.0);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(raw.len());
        for (i, v) in raw {
            match entries.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => entries.push((i, v)),
            }
        }
        FeatureVector { entries }
    }

    pub fn l2_normalized(mut self) -> Self {
        let norm = self.entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
        if norm > 0.0 {
            self.entries.iter_mut().for_each(|e| e.1 /= norm);
        }
        self
    }

    pub fn get(&self, index: u32) -> Option<f64> {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .ok()
            .map(|i| self.entries[i].1)
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Deterministic hashed node featurizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Featurizer {
    pub dim: usize,
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer { dim: DEFAULT_DIM }
    }
}

impl Featurizer {
    pub fn new(dim: usize) -> Self {
        Featurizer { dim }
    }

    pub fn index_of(&self, feature: &str) -> u32 {
        (fnv1a(feature) % self.dim as u64) as u32
    }

    /// Feature names of a node, before hashing.
    pub fn feature_names(&self, node: &DomNodeRecord) -> Vec<String> {
        let mut f = Vec::new();
        let lower = node.text.to_lowercase();
        let words: Vec<&str> = lower.split_whitespace().collect();
        for w in &words {
            f.push(format!("w:{w}"));
        }
        let chars: Vec<char> = format!("^{lower}$").chars().collect();
        for tri in chars.windows(3) {
            f.push(format!("c:{}", tri.iter().collect::<String>()));
        }

        let steps: Vec<&str> = node
            .xpath
            .split('/')
            .filter(|s| !s.is_empty())
            .map(|s| s.split('[').next().unwrap_or(s))
            .collect();
        let tail: Vec<&str> = steps.iter().rev().take(3).copied().collect();
        for (depth, tag) in tail.iter().enumerate() {
            f.push(format!("t{depth}:{tag}"));
        }
        let mut joined = tail.clone();
        joined.reverse();
        f.push(format!("tp:{}", joined.join("/")));
        f.push(format!("tag:{}", node.tag));

        let bucket = ((node.rel_position * 10.0) as usize).min(9);
        f.push(format!("pos:{bucket}"));

        if node.text.chars().any(|c| c.is_ascii_digit()) {
            f.push("has_digit".into());
        }
        let letters: Vec<char> = node.text.chars().filter(|c| c.is_alphabetic()).collect();
        if !letters.is_empty() && letters.iter().all(|c| c.is_uppercase()) {
            f.push("all_caps".into());
        }
        if node.text.chars().any(|c| matches!(c, '$' | '€' | '£' | '¥')) {
            f.push("currency".into());
        }
        let ntok = match words.len() {
            0..=1 => "1",
            2 => "2",
            3 => "3",
            4..=5 => "4-5",
            6..=10 => "6-10",
            _ => "11+",
        };
        f.push(format!("ntok:{ntok}"));
        f
    }

    pub fn featurize(&self, node: &DomNodeRecord, _page: &DetailPage) -> FeatureVector {
        let raw = self
            .feature_names(node)
            .iter()
            .map(|name| (self.index_of(name), 1.0))
            .collect();
        FeatureVector::from_unsorted(raw).l2_normalized()
    }

    pub fn featurize_page(&self, page: &DetailPage) -> Vec<FeatureVector> {
        page.nodes.iter().map(|n| self.featurize(n, page)).collect()
    }
}

/// Featurize with the default dimension.
pub fn featurize(node: &DomNodeRecord, page: &DetailPage) -> FeatureVector {
    Featurizer::default().featurize(node, page)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln y'[ŷ]` with the probability clamped to [`PROB_FLOOR`].
pub fn cross_entropy(soft: &[f64], hard: Label) -> f64 {
    -soft[hard.index()].max(PROB_FLOOR).ln()
}

/// `e^{(1-k)c} · base + e^c · u`.
pub fn noise_robust_value(base_loss: f64, c: f64, k: f64, u: f64) -> f64 {
    ((1.0 - k) * c).exp() * base_loss + c.exp() * u
}

/// Noise-robust loss with its own uniform stream.
#[derive(Debug, Clone)]
pub struct NoiseRobustLoss {
    pub k: f64,
    rng: ChaCha8Rng,
}

impl NoiseRobustLoss {
    pub fn new(k: f64, seed: u64) -> Self {
        NoiseRobustLoss {
            k,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Loss of one sample, drawing a fresh `u ~ U(0,1)`.
    pub fn evaluate(&mut self, soft: &[f64], hard: Label, c: f64) -> f64 {
        let u: f64 = self.rng.gen();
        noise_robust_value(cross_entropy(soft, hard), c, self.k, u)
    }

    /// Multiplier of the cross-entropy gradient for a sample of weight `c`
    /// in the weighted objective `c · L_ua`.
    pub fn gradient_scale(&self, c: f64) -> f64 {
        c * ((1.0 - self.k) * c).exp()
    }
}

/// One training example: features, target class and gradient multiplier.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub features: &'a FeatureVector,
    pub target: Label,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub alpha: f64,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 1,
            alpha: 0.01,
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

/// Dense gradient of the mean weighted cross-entropy.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    pub dim: usize,
    pub class_names: Vec<String>,
    /// Row-major `classes × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub rng_seed: u64,
}

impl ClassifierState {
    pub fn zeros(dim: usize, class_names: Vec<String>, rng_seed: u64) -> Self {
        let k = class_names.len();
        ClassifierState {
            dim,
            class_names,
            weights: vec![0.0; k * dim],
            bias: vec![0.0; k],
            rng_seed,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn logits(&self, fv: &FeatureVector) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            for &(i, v) in &fv.entries {
                *zc += row[i as usize] * v;
            }
        }
        z
    }

    pub fn predict(&self, fv: &FeatureVector) -> Vec<f64> {
        softmax(&self.logits(fv))
    }

    pub fn predict_label(&self, fv: &FeatureVector) -> Label {
        Label(crate::corpus::argmax(&self.predict(fv)))
    }

    /// Mean over the batch of `scale · cross-entropy`.
    pub fn batch_loss(&self, batch: &[Example<'_>]) -> f64 {
        batch
            .iter()
            .map(|e| e.scale * cross_entropy(&self.predict(e.features), e.target))
            .sum::<f64>()
            / batch.len() as f64
    }

    /// Analytic gradient of [`Self::batch_loss`].
    pub fn batch_gradient(&self, batch: &[Example<'_>]) -> Gradient {
        let k = self.num_classes();
        let mut g = Gradient {
            weights: vec![0.0; k * self.dim],
            bias: vec![0.0; k],
        };
        let n = batch.len() as f64;
        for e in batch {
            for (c, coef) in self.output_coefficients(e).into_iter().enumerate() {
                let coef = coef / n;
                g.bias[c] += coef;
                for &(i, v) in &e.features.entries {
                    g.weights[c * self.dim + i as usize] += coef * v;
                }
            }
        }
        g
    }

    /// `scale · ∂CE/∂logit_c` for each class. Zero where the clamp is active.
    fn output_coefficients(&self, e: &Example<'_>) -> Vec<f64> {
        let p = self.predict(e.features);
        let t = e.target.index();
        if p[t] < PROB_FLOOR {
            return vec![0.0; p.len()];
        }
        p.iter()
            .enumerate()
            .map(|(c, &pc)| e.scale * (pc - if c == t { 1.0 } else { 0.0 }))
            .collect()
    }

    fn sgd_step(&mut self, batch: &[Example<'_>], alpha: f64) {
        let coefs: Vec<Vec<f64>> = batch.iter().map(|e| self.output_coefficients(e)).collect();
        let step = alpha / batch.len() as f64;
        for (e, coef) in batch.iter().zip(coefs) {
            for (c, g) in coef.into_iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                self.bias[c] -= step * g;
                let row = &mut self.weights[c * self.dim..(c + 1) * self.dim];
                for &(i, v) in &e.features.entries {
                    row[i as usize] -= step * g * v;
                }
            }
        }
    }

    /// Mini-batch gradient descent over shuffled examples.
    pub fn fit<R: Rng + ?Sized>(&mut self, examples: &[Example<'_>], opts: &TrainOptions, rng: &mut R) {
        if examples.is_empty() {
            return;
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let batch_size = opts.batch_size.max(1);
        let mut batch = Vec::with_capacity(batch_size);
        for _ in 0..opts.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(batch_size) {
                batch.clear();
                batch.extend(chunk.iter().map(|&i| examples[i]));
                self.sgd_step(&batch, opts.alpha);
            }
        }
    }

    /// Cross-entropy training on human-labeled samples.
    pub fn train_supervised<R: Rng + ?Sized>(
        &mut self,
        samples: &[(&FeatureVector, Label)],
        opts: &TrainOptions,
        rng: &mut R,
    ) {
        let examples: Vec<Example<'_>> = samples
            .iter()
            .map(|&(features, target)| Example {
                features,
                target,
                scale: 1.0,
            })
            .collect();
        self.fit(&examples, opts, rng);
    }

    /// Weighted noise-robust training of a student initialized from its
    /// teacher. Returns the mean reported loss `c · L_ua` of each epoch,
    /// evaluated before the epoch's updates.
    pub fn train_student<R: Rng + ?Sized>(
        &mut self,
        samples: &[(&FeatureVector, Label, f64)],
        opts: &TrainOptions,
        loss: &mut NoiseRobustLoss,
        rng: &mut R,
    ) -> Vec<f64> {
        let examples: Vec<Example<'_>> = samples
            .iter()
            .map(|&(features, target, c)| Example {
                features,
                target,
                scale: loss.gradient_scale(c),
            })
            .collect();
        let mut losses = Vec::with_capacity(opts.epochs);
        let one_epoch = TrainOptions { epochs: 1, ..*opts };
        for _ in 0..opts.epochs {
            let total: f64 = samples
                .iter()
                .map(|&(fv, target, c)| c * loss.evaluate(&self.predict(fv), target, c))
                .sum();
            losses.push(if samples.is_empty() { 0.0 } else { total / samples.len() as f64 });
            self.fit(&examples, &one_epoch, rng);
        }
        losses
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|x| x.is_finite())
    }
}

const CHECKPOINT_FORMAT: &str = "least-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(flatten)]
    state: ClassifierState,
}

pub fn save_checkpoint(model: &ClassifierState, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        state: model.clone(),
    };
    let bytes = serde_json::to_vec(&ck)?;
    fs::write(path, bytes).map_err(|e| LeastError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierState> {
    let bytes = fs::read(path).map_err(|e| LeastError::io(path, e))?;
    let ck: Checkpoint = serde_json::from_slice(&bytes)?;
    let malformed = |reason: String| LeastError::Malformed {
        what: "checkpoint",
        path: path.to_path_buf(),
        line: 1,
        reason,
    };
    if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
        return Err(malformed(format!("unsupported format {} v{}", ck.format, ck.version)));
    }
    let s = ck.state;
    if s.weights.len() != s.dim * s.class_names.len() || s.bias.len() != s.class_names.len() {
        return Err(malformed("parameter shape mismatch".into()));
    }
    Ok(s)
}
