//! The teacher/student self-training loop.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    argmax, one_hot, split_initial, AugmentedCorpus, LabelSource, LabeledSample, NodeKey,
    PageStore, PseudoLabeledSample, UnlabeledPool, ValidationSet,
};
use crate::evaluation::{evaluate, extract_with_features, GroundTruth};
use crate::error::{LeastError, Result};
use crate::labels::{AttributeSet, Label};
use crate::node_classifier::{
    ClassifierState, FeatureVector, Featurizer, NoiseRobustLoss, TrainOptions, DEFAULT_BATCH_SIZE,
    DEFAULT_DIM,
};
use crate::reweighting::{compute_page_weight, PageFlags, PageSignature, ReweightConfig, WeightRecord};
use crate::weak_supervision::{
    assert_sound, build_site_relations, infer_overlap_rules, DistantLabeler, LabelingFunction,
    DEFAULT_MIN_OVERLAP,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LeastConfig {
    /// Number of self-training iterations.
    #[serde(rename = "T")]
    pub iterations: usize,
    /// Maximum unlabeled nodes drawn per iteration.
    #[serde(rename = "L")]
    pub max_new_samples: usize,
    pub beta0: f64,
    pub k_beta1: f64,
    pub k_beta2: f64,
    pub k0: f64,
    pub k_c1: f64,
    pub k_c2: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub epochs_teacher: usize,
    pub epochs_student: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub weight_floor: f64,
    pub min_overlap: f64,
    pub validation_pages_per_site: usize,
    pub feature_dim: usize,
    /// Fuse generative pseudo-labels; off means teacher-only pseudo-labels.
    pub use_generative: bool,
    /// Force every sample weight to 1.
    pub uniform_weights: bool,
    /// Re-infer earlier pseudo-labels every iteration instead of freezing them.
    pub refresh_pseudo_labels: bool,
    /// Stop when validation macro-F1 fails to improve for two iterations.
    pub early_stop: bool,
}

impl Default for LeastConfig {
    fn default() -> Self {
        LeastConfig {
            iterations: 5,
            max_new_samples: 100_000,
            beta0: 0.6,
            k_beta1: 0.1,
            k_beta2: 1.0,
            k0: 1.0,
            k_c1: 0.1,
            k_c2: 1.0,
            epsilon: 0.0005,
            alpha: 0.01,
            epochs_teacher: 10,
            epochs_student: 5,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            weight_floor: 0.01,
            min_overlap: DEFAULT_MIN_OVERLAP,
            validation_pages_per_site: 2,
            feature_dim: DEFAULT_DIM,
            use_generative: true,
            uniform_weights: false,
            refresh_pseudo_labels: false,
            early_stop: false,
        }
    }
}

impl LeastConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LeastError::InvalidConfig(m));
        if self.iterations < 1 {
            return bad("T must be at least 1".into());
        }
        if self.max_new_samples < 1 {
            return bad("L must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.beta0) {
            return bad(format!("beta0 must lie in [0,1], got {}", self.beta0));
        }
        let named = [
            ("k_beta1", self.k_beta1),
            ("k_beta2", self.k_beta2),
            ("k0", self.k0),
            ("k_c1", self.k_c1),
            ("k_c2", self.k_c2),
            ("min_overlap", self.min_overlap),
        ];
        for (name, v) in named {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.batch_size == 0 || self.feature_dim == 0 {
            return bad("batch_size and feature_dim must be positive".into());
        }
        self.reweight().validate()
    }

    pub fn reweight(&self) -> ReweightConfig {
        ReweightConfig {
            epsilon: self.epsilon,
            weight_floor: self.weight_floor,
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: LeastConfig =
            toml::from_str(s).map_err(|e| LeastError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LeastError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    fn options(&self, epochs: usize) -> TrainOptions {
        TrainOptions {
            epochs,
            alpha: self.alpha,
            batch_size: self.batch_size,
        }
    }
}

/// `β(t) = β(t-1) - k_β1·e^{-k_β2·t}`, clamped to [0,1].
pub fn beta_schedule(t: usize, prior: f64, cfg: &LeastConfig) -> f64 {
    (prior - cfg.k_beta1 * (-cfg.k_beta2 * t as f64).exp()).clamp(0.0, 1.0)
}

/// `k(t) = k(t-1) - k_c1·e^{-k_c2·t}`.
pub fn k_schedule(t: usize, prior: f64, cfg: &LeastConfig) -> f64 {
    prior - cfg.k_c1 * (-cfg.k_c2 * t as f64).exp()
}

/// Choose between the generative label and the teacher's prediction.
/// Exactly one uniform draw is consumed per call.
pub fn fuse_pseudo_label<R: Rng + ?Sized>(
    gamma: Option<Label>,
    teacher_soft: &[f64],
    beta: f64,
    rng: &mut R,
) -> (Label, Vec<f64>, LabelSource) {
    let u: f64 = rng.gen();
    match gamma {
        Some(g) if u < beta => (g, one_hot(g, teacher_soft.len()), LabelSource::Generative),
        _ => (Label(argmax(teacher_soft)), teacher_soft.to_vec(), LabelSource::Teacher),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub beta: f64,
    pub k: f64,
    pub corpus_size: usize,
    pub new_samples: usize,
    pub validation_macro_f1: f64,
    pub mean_weight: f64,
    pub source_counts: BTreeMap<LabelSource, usize>,
    /// Mean reported student loss over the last training epoch.
    pub student_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub iteration: usize,
    pub added: Vec<String>,
    pub corpus_size: usize,
}

/// Per-iteration record of which nodes entered the corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub initial_corpus_size: usize,
    pub entries: Vec<AuditEntry>,
}

impl RunAudit {
    /// No node added twice, and each iteration adds at most `max_new`.
    pub fn without_replacement(&self, max_new: usize) -> bool {
        let mut seen = BTreeSet::new();
        let mut prev = self.initial_corpus_size;
        for e in &self.entries {
            if e.added.len() > max_new || e.corpus_size != prev + e.added.len() {
                return false;
            }
            if !e.added.iter().all(|id| seen.insert(id.clone())) {
                return false;
            }
            prev = e.corpus_size;
        }
        true
    }
}

/// Everything `run_least` reads.
#[derive(Clone, Copy)]
pub struct TrainingInput<'a> {
    pub store: &'a PageStore,
    /// `features[page][node]`.
    pub features: &'a [Vec<FeatureVector>],
    pub labeled: &'a [LabeledSample],
    pub pool: &'a [NodeKey],
    pub attrs: &'a AttributeSet,
}

pub fn featurize_store(store: &PageStore, featurizer: &Featurizer) -> Vec<Vec<FeatureVector>> {
    store.pages().iter().map(|p| featurizer.featurize_page(p)).collect()
}

#[derive(Debug, Clone)]
pub struct LeastRun {
    pub student: ClassifierState,
    /// The teacher trained on human labels at the first iteration.
    pub initial_teacher: ClassifierState,
    pub reports: Vec<IterationReport>,
    pub audit: RunAudit,
    /// Page weights of the final iteration.
    pub weights: Vec<WeightRecord>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_SPLIT: u64 = 1;
const STREAM_POOL: u64 = 2;
const STREAM_FUSE: u64 = 3;
const STREAM_TRAIN: u64 = 4;
const STREAM_LOSS: u64 = 5;

fn human_examples<'a>(
    corpus: &AugmentedCorpus,
    features: &'a [Vec<FeatureVector>],
) -> Vec<(&'a FeatureVector, Label)> {
    corpus
        .samples()
        .iter()
        .filter(|s| s.source == LabelSource::Human)
        .map(|s| (&features[s.node.page][s.node.node], s.hard_label))
        .collect()
}

fn sorted_sites(store: &PageStore, labeled: &[LabeledSample]) -> Vec<String> {
    let set: BTreeSet<&str> = labeled.iter().map(|s| store.website_of(s.node)).collect();
    set.into_iter().map(String::from).collect()
}

/// Ground truth of the validation pages, from their human labels.
fn validation_truth(v: &ValidationSet, store: &PageStore, attrs: &AttributeSet) -> GroundTruth {
    let mut gt = GroundTruth::new();
    for p in v.pages() {
        gt.entry(store.page(p).page_id.clone()).or_default();
    }
    for e in &v.entries {
        if attrs.is_none(e.human) {
            continue;
        }
        gt.entry(store.page(e.node.page).page_id.clone())
            .or_default()
            .entry(attrs.name(e.human).to_string())
            .or_default()
            .insert(store.node(e.node).text.clone());
    }
    gt
}

fn validation_f1(
    model: &ClassifierState,
    v: &ValidationSet,
    truth: &GroundTruth,
    input: &TrainingInput<'_>,
) -> f64 {
    let results: Vec<_> = v
        .pages()
        .into_iter()
        .map(|p| extract_with_features(model, input.store.page(p), &input.features[p], input.attrs, true))
        .collect();
    evaluate(&results, truth, input.attrs.attributes()).macro_f1
}

/// Train on human labels only, from scratch: the teacher-only baseline.
pub fn train_teacher_only(cfg: &LeastConfig, input: &TrainingInput<'_>) -> Result<ClassifierState> {
    cfg.validate()?;
    let mut model = ClassifierState::zeros(cfg.feature_dim, input.attrs.class_names(), cfg.seed);
    let examples: Vec<(&FeatureVector, Label)> = input
        .labeled
        .iter()
        .map(|s| (&input.features[s.node.page][s.node.node], s.label))
        .collect();
    model.train_supervised(&examples, &cfg.options(cfg.epochs_teacher), &mut stream(cfg.seed, STREAM_TRAIN));
    Ok(model)
}

/// Run the full self-training procedure and return the final student.
pub fn run_least(
    cfg: &LeastConfig,
    input: &TrainingInput<'_>,
    functions: &[Box<dyn LabelingFunction>],
) -> Result<LeastRun> {
    cfg.validate()?;
    let TrainingInput { store, features, labeled, attrs, .. } = *input;
    let k_classes = attrs.num_classes();
    let rw = cfg.reweight();

    assert_sound(store, labeled, functions, attrs)?;
    let seed_sites = sorted_sites(store, labeled);
    if seed_sites.len() < 2 {
        return Err(LeastError::InsufficientLabeledPages {
            website: seed_sites.first().cloned().unwrap_or_default(),
            available: seed_sites.len(),
            required: 2,
        });
    }
    let (mut corpus, mut validation) =
        split_initial(store, labeled, cfg.validation_pages_per_site, k_classes, cfg.seed ^ STREAM_SPLIT)?;
    if validation.is_empty() {
        return Err(LeastError::NoValidationEntries("validation set".into()));
    }
    let human_pages: BTreeSet<usize> = corpus.samples().iter().map(|s| s.node.page).collect();
    let validation_pages: BTreeSet<usize> = validation.pages().into_iter().collect();
    let seed_set: BTreeSet<&str> = seed_sites.iter().map(String::as_str).collect();
    let truth = validation_truth(&validation, store, attrs);

    // The generative labeler depends on human labels only and is built once.
    let train_labeled: Vec<LabeledSample> = corpus
        .samples()
        .iter()
        .map(|s| LabeledSample { node: s.node, label: s.hard_label })
        .collect();
    let labeler = if cfg.use_generative {
        let rules = infer_overlap_rules(store, &seed_sites, &train_labeled, attrs, cfg.min_overlap);
        let relations = build_site_relations(store, &train_labeled, functions, &rules, &seed_sites, attrs);
        log::info!("{} overlap rules, {} site relations", rules.len(), relations.len());
        Some(DistantLabeler::new(&relations))
    } else {
        None
    };

    let mut pool = UnlabeledPool::new(
        input
            .pool
            .iter()
            .copied()
            .filter(|n| !human_pages.contains(&n.page) && !validation_pages.contains(&n.page))
            .collect(),
    );
    let mut pool_rng = stream(cfg.seed, STREAM_POOL);
    let mut fuse_rng = stream(cfg.seed, STREAM_FUSE);
    let mut train_rng = stream(cfg.seed, STREAM_TRAIN);

    let mut teacher = ClassifierState::zeros(cfg.feature_dim, attrs.class_names(), cfg.seed);
    let mut initial_teacher = None;
    let mut beta = cfg.beta0;
    let mut k = cfg.k0;
    let mut reports = Vec::new();
    let mut audit = RunAudit {
        initial_corpus_size: corpus.len(),
        entries: Vec::new(),
    };
    let mut weights = Vec::new();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut stale = 0;

    for i in 1..=cfg.iterations {
        beta = beta_schedule(i, beta, cfg);
        k = k_schedule(i, k, cfg);

        let human = human_examples(&corpus, features);
        teacher.train_supervised(&human, &cfg.options(cfg.epochs_teacher), &mut train_rng);
        if initial_teacher.is_none() {
            initial_teacher = Some(teacher.clone());
        }

        let gamma = |node: NodeKey| labeler.as_ref().and_then(|l| l.label_text(&store.node(node).text)).map(|(l, _)| l);
        if cfg.refresh_pseudo_labels {
            for s in corpus.samples_mut().iter_mut().filter(|s| s.source != LabelSource::Human) {
                let soft = teacher.predict(&features[s.node.page][s.node.node]);
                let (hard, soft, source) = fuse_pseudo_label(gamma(s.node), &soft, beta, &mut fuse_rng);
                s.hard_label = hard;
                s.soft_label = soft;
                s.source = source;
            }
        }
        let drawn = pool.sample(cfg.max_new_samples, &mut pool_rng);
        let mut added = Vec::with_capacity(drawn.len());
        for node in &drawn {
            let soft = teacher.predict(&features[node.page][node.node]);
            let (hard, soft, source) = fuse_pseudo_label(gamma(*node), &soft, beta, &mut fuse_rng);
            corpus.push(PseudoLabeledSample {
                node: *node,
                hard_label: hard,
                soft_label: soft,
                source,
                weight: 1.0,
                weight_iteration: 0,
                iteration_added: i,
            })?;
            added.push(store.node_id_string(*node));
        }

        validation.refresh(|n| teacher.predict(&features[n.page][n.node]));

        let corpus_pages: BTreeSet<usize> = corpus.samples().iter().map(|s| s.node.page).collect();
        let mut signatures = BTreeMap::new();
        for &p in corpus_pages.iter().chain(&validation_pages) {
            let needs = validation_pages.contains(&p) || !seed_set.contains(store.page(p).website_id.as_str());
            if needs && !signatures.contains_key(&p) {
                let labels: Vec<Label> = features[p].iter().map(|f| teacher.predict_label(f)).collect();
                signatures.insert(p, PageSignature::from_predictions(store.page(p), &labels));
            }
        }
        let mut page_weight = BTreeMap::new();
        weights.clear();
        for &p in &corpus_pages {
            let flags = PageFlags {
                is_human_labeled_seed_page: human_pages.contains(&p),
                is_seed_site: seed_set.contains(store.page(p).website_id.as_str()),
            };
            let w = compute_page_weight(p, store, &validation, &signatures, flags, &rw)?;
            let value = if cfg.uniform_weights { 1.0 } else { w.weight };
            page_weight.insert(p, value);
            weights.push(WeightRecord {
                page: store.page(p).page_id.clone(),
                weight: value,
                case: w.case,
                matched_validation_page: w.matched_validation_page.map(|v| store.page(v).page_id.clone()),
            });
        }
        for s in corpus.samples_mut() {
            s.weight = page_weight[&s.node.page];
            s.weight_iteration = i;
        }
        debug_assert!(corpus.samples().iter().all(|s| s.weight_iteration == i && s.weight > 0.0 && s.weight <= 1.0));

        let mut student = teacher.clone();
        let mut loss = NoiseRobustLoss::new(k, stream(cfg.seed, STREAM_LOSS + i as u64).gen());
        let samples: Vec<(&FeatureVector, Label, f64)> = corpus
            .samples()
            .iter()
            .map(|s| (&features[s.node.page][s.node.node], s.hard_label, s.weight))
            .collect();
        let losses = student.train_student(&samples, &cfg.options(cfg.epochs_student), &mut loss, &mut train_rng);
        if !student.is_finite() {
            return Err(LeastError::InvalidConfig(format!("training diverged at iteration {i}; lower alpha")));
        }
        teacher = student;

        let mut source_counts = BTreeMap::new();
        for s in corpus.samples() {
            *source_counts.entry(s.source).or_insert(0) += 1;
        }
        let f1 = validation_f1(&teacher, &validation, &truth, input);
        let report = IterationReport {
            iteration: i,
            beta,
            k,
            corpus_size: corpus.len(),
            new_samples: added.len(),
            validation_macro_f1: f1,
            mean_weight: corpus.samples().iter().map(|s| s.weight).sum::<f64>() / corpus.len().max(1) as f64,
            source_counts,
            student_loss: losses.last().copied().unwrap_or(0.0),
        };
        log::info!(
            "iteration {i}: corpus {} (+{}), validation F1 {:.2}, mean weight {:.3}",
            report.corpus_size,
            report.new_samples,
            f1,
            report.mean_weight
        );
        audit.entries.push(AuditEntry {
            iteration: i,
            added,
            corpus_size: corpus.len(),
        });
        reports.push(report);

        if cfg.early_stop {
            if f1 > best_f1 {
                best_f1 = f1;
                stale = 0;
            } else {
                stale += 1;
                if stale >= 2 {
                    break;
                }
            }
        }
    }

    Ok(LeastRun {
        student: teacher,
        initial_teacher: initial_teacher.expect("at least one iteration"),
        reports,
        audit,
        weights,
    })
}
