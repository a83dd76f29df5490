//! Top-1 extraction, page-level scoring and experiment splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelRecord, LabeledSample, NodeKey, PageStore};
use crate::dom_model::{normalize_text, DetailPage};
use crate::error::{LeastError, Result};
use crate::labels::AttributeSet;
use crate::node_classifier::{ClassifierState, FeatureVector, Featurizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub xpath: String,
    pub text: String,
    pub confidence: f64,
}

/// At most one prediction per attribute for one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub page_id: String,
    pub predictions: BTreeMap<String, Option<Prediction>>,
}

/// Pick, for each attribute, the node with the highest probability for it.
/// With `abstain`, the pick is emitted only if that probability is strictly
/// above the node's NONE probability.
pub fn extract_page(
    model: &ClassifierState,
    featurizer: &Featurizer,
    page: &DetailPage,
    attrs: &AttributeSet,
    abstain: bool,
) -> ExtractionResult {
    let features = featurizer.featurize_page(page);
    extract_with_features(model, page, &features, attrs, abstain)
}

/// [`extract_page`] with precomputed node features.
pub fn extract_with_features(
    model: &ClassifierState,
    page: &DetailPage,
    features: &[FeatureVector],
    attrs: &AttributeSet,
    abstain: bool,
) -> ExtractionResult {
    let probs: Vec<Vec<f64>> = features.iter().map(|f| model.predict(f)).collect();
    let none = attrs.none().index();
    let mut predictions = BTreeMap::new();
    for a in attrs.attribute_labels() {
        let mut best: Option<usize> = None;
        for (i, p) in probs.iter().enumerate() {
            if best.is_none_or(|b| p[a.index()] > probs[b][a.index()]) {
                best = Some(i);
            }
        }
        let pred = best
            .filter(|&i| !abstain || probs[i][a.index()] > probs[i][none])
            .map(|i| Prediction {
                xpath: page.nodes[i].xpath.clone(),
                text: page.nodes[i].text.clone(),
                confidence: probs[i][a.index()],
            });
        predictions.insert(attrs.name(a).to_string(), pred);
    }
    ExtractionResult {
        page_id: page.page_id.clone(),
        predictions,
    }
}

/// page id -> attribute -> normalized ground-truth texts.
pub type GroundTruth = BTreeMap<String, BTreeMap<String, BTreeSet<String>>>;

/// Build ground truth from label lines. Lines without text are resolved
/// against `store` when given.
pub fn ground_truth(records: &[LabelRecord], store: Option<&PageStore>) -> Result<GroundTruth> {
    let mut gt = GroundTruth::new();
    for r in records {
        let text = match (&r.text, store) {
            (Some(t), _) => normalize_text(t),
            (None, Some(store)) => {
                let idx = store
                    .index_of(&r.page)
                    .ok_or_else(|| LeastError::UnknownPage(r.page.clone()))?;
                store
                    .page(idx)
                    .node_by_xpath(&r.xpath)
                    .ok_or_else(|| LeastError::DanglingXPath {
                        page: r.page.clone(),
                        xpath: r.xpath.clone(),
                    })?
                    .text
                    .clone()
            }
            (None, None) => {
                return Err(LeastError::InvalidConfig(format!(
                    "ground truth for {} {} has no text",
                    r.page, r.xpath
                )))
            }
        };
        gt.entry(r.page.clone())
            .or_default()
            .entry(r.attribute.clone())
            .or_default()
            .insert(text);
    }
    Ok(gt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: usize,
    pub correct: usize,
    pub pages_with_truth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_attribute: BTreeMap<String, AttributeScore>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub pages: usize,
}

/// Page-level scores in percent over the pages present in `truth`.
///
/// Result pages absent from `truth` are ignored; truth pages without a result
/// count as abstentions. A prediction is correct when its normalized text
/// equals any ground-truth text of that attribute on that page.
pub fn evaluate(results: &[ExtractionResult], truth: &GroundTruth, attributes: &[String]) -> EvalReport {
    let by_page: BTreeMap<&str, &ExtractionResult> =
        results.iter().map(|r| (r.page_id.as_str(), r)).collect();
    let empty = BTreeSet::new();
    let mut per_attribute = BTreeMap::new();
    for a in attributes {
        let (mut predicted, mut correct, mut with_truth) = (0, 0, 0);
        for (page, attrs) in truth {
            let texts = attrs.get(a).unwrap_or(&empty);
            if !texts.is_empty() {
                with_truth += 1;
            }
            let pred = by_page
                .get(page.as_str())
                .and_then(|r| r.predictions.get(a))
                .and_then(Option::as_ref);
            if let Some(p) = pred {
                predicted += 1;
                if texts.contains(&normalize_text(&p.text)) {
                    correct += 1;
                }
            }
        }
        let precision = ratio(correct, predicted);
        let recall = ratio(correct, with_truth);
        per_attribute.insert(
            a.clone(),
            AttributeScore {
                precision,
                recall,
                f1: harmonic(precision, recall),
                predicted,
                correct,
                pages_with_truth: with_truth,
            },
        );
    }
    let mean = |f: fn(&AttributeScore) -> f64| {
        if per_attribute.is_empty() {
            0.0
        } else {
            per_attribute.values().map(f).sum::<f64>() / per_attribute.len() as f64
        }
    };
    EvalReport {
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_attribute,
        pages: truth.len(),
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ZeroShot,
    InDomain,
}

impl std::str::FromStr for SplitMode {
    type Err = LeastError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero_shot" | "zero-shot" => Ok(SplitMode::ZeroShot),
            "in_domain" | "in-domain" => Ok(SplitMode::InDomain),
            other => Err(LeastError::InvalidConfig(format!("unknown split mode {other}"))),
        }
    }
}

/// Training inputs and test pages of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSplit {
    pub mode: SplitMode,
    pub labeled: Vec<LabeledSample>,
    pub pool: Vec<NodeKey>,
    pub test_pages: BTreeSet<usize>,
}

/// Split a vertical for evaluation. Target sites never contribute training
/// nodes; test pages are removed from the unlabeled pool.
pub fn split_experiment(
    store: &PageStore,
    labeled: &[LabeledSample],
    mode: SplitMode,
    seed_sites: &[String],
    target_sites: &[String],
    held_out_per_seed: usize,
    seed: u64,
) -> Result<ExperimentSplit> {
    let seeds: BTreeSet<&str> = seed_sites.iter().map(String::as_str).collect();
    let targets: BTreeSet<&str> = target_sites.iter().map(String::as_str).collect();
    let overlap: Vec<String> = seeds.intersection(&targets).map(|s| s.to_string()).collect();
    if !overlap.is_empty() {
        return Err(LeastError::OverlappingSiteSets(overlap));
    }
    let known: BTreeSet<String> = store.websites().into_iter().collect();
    for s in seeds.iter().chain(&targets) {
        if !known.contains(*s) {
            return Err(LeastError::InsufficientPages {
                website: s.to_string(),
                available: 0,
                required: 1,
            });
        }
    }
    let labeled_pages: BTreeSet<usize> = labeled.iter().map(|s| s.node.page).collect();

    let mut test_pages = BTreeSet::new();
    match mode {
        SplitMode::ZeroShot => {
            for t in &targets {
                test_pages.extend(store.site_pages(t));
            }
        }
        SplitMode::InDomain => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for s in &seeds {
                let mut free: Vec<usize> = store
                    .site_pages(s)
                    .into_iter()
                    .filter(|p| !labeled_pages.contains(p))
                    .collect();
                if free.len() < held_out_per_seed {
                    return Err(LeastError::InsufficientPages {
                        website: s.to_string(),
                        available: free.len(),
                        required: held_out_per_seed,
                    });
                }
                free.shuffle(&mut rng);
                test_pages.extend(free.into_iter().take(held_out_per_seed));
            }
        }
    }

    let pool = (0..store.len())
        .filter(|p| {
            !labeled_pages.contains(p)
                && !test_pages.contains(p)
                && !targets.contains(store.page(*p).website_id.as_str())
        })
        .flat_map(|p| store.node_keys(p))
        .collect();
    let labeled = labeled
        .iter()
        .filter(|s| !test_pages.contains(&s.node.page))
        .copied()
        .collect();
    Ok(ExperimentSplit {
        mode,
        labeled,
        pool,
        test_pages,
    })
}

/// Extract every page in `pages` and score against `truth`.
pub fn evaluate_pages(
    model: &ClassifierState,
    store: &PageStore,
    features: &[Vec<FeatureVector>],
    pages: &BTreeSet<usize>,
    truth: &GroundTruth,
    attrs: &AttributeSet,
    abstain: bool,
) -> EvalReport {
    let results: Vec<ExtractionResult> = pages
        .iter()
        .map(|&p| extract_with_features(model, store.page(p), &features[p], attrs, abstain))
        .collect();
    let page_truth: GroundTruth = pages
        .iter()
        .map(|&p| {
            let id = &store.page(p).page_id;
            (id.clone(), truth.get(id).cloned().unwrap_or_default())
        })
        .collect();
    evaluate(&results, &page_truth, attrs.attributes())
}
