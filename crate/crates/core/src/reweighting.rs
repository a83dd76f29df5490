//! Per-page sample weights from validation-set pseudo-label accuracy and
//! floored Jaccard page overlap.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{PageStore, ValidationSet};
use crate::dom_model::{normalize_text, DetailPage};
use crate::error::{LeastError, Result};
use crate::labels::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightConfig {
    /// Floor of the page overlap.
    pub epsilon: f64,
    /// Lower clamp applied to accuracies and weights.
    pub weight_floor: f64,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        ReweightConfig {
            epsilon: 0.0005,
            weight_floor: 0.01,
        }
    }
}

impl ReweightConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.epsilon) || !open_unit(self.weight_floor) {
            return Err(LeastError::InvalidConfig(format!(
                "epsilon and weight_floor must lie in (0,1), got {} and {}",
                self.epsilon, self.weight_floor
            )));
        }
        Ok(())
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.weight_floor, 1.0)
    }
}

/// Distinct `(predicted label, node text)` pairs of one page.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PageSignature {
    pub pairs: BTreeSet<(Label, String)>,
}

impl PageSignature {
    /// `labels[i]` is the hard prediction for `page.nodes[i]`.
    pub fn from_predictions(page: &DetailPage, labels: &[Label]) -> Self {
        PageSignature {
            pairs: page
                .nodes
                .iter()
                .zip(labels)
                .map(|(n, &l)| (l, normalize_text(&n.text)))
                .collect(),
        }
    }
}

/// `max(ε, Jaccard)`; two empty signatures give `ε`.
pub fn page_overlap(a: &PageSignature, b: &PageSignature, cfg: &ReweightConfig) -> f64 {
    let inter = a.pairs.intersection(&b.pairs).count();
    let union = a.pairs.len() + b.pairs.len() - inter;
    if union == 0 {
        return cfg.epsilon;
    }
    (inter as f64 / union as f64).max(cfg.epsilon)
}

/// Fraction of the site's validation nodes whose hard pseudo-label is right.
pub fn hard_accuracy_for_site(
    v: &ValidationSet,
    store: &PageStore,
    website_id: &str,
    cfg: &ReweightConfig,
) -> Result<f64> {
    let (mut n, mut correct) = (0usize, 0usize);
    for e in v.entries.iter().filter(|e| store.website_of(e.node) == website_id) {
        n += 1;
        correct += usize::from(e.hard == e.human);
    }
    if n == 0 {
        return Err(LeastError::NoValidationEntries(website_id.to_string()));
    }
    Ok(cfg.clamp(correct as f64 / n as f64))
}

/// Mean probability mass the soft pseudo-labels of the page put on the
/// human label.
pub fn soft_accuracy_for_page(v: &ValidationSet, page: usize, cfg: &ReweightConfig) -> Result<f64> {
    let (mut n, mut mass) = (0usize, 0.0);
    for e in v.entries.iter().filter(|e| e.node.page == page) {
        n += 1;
        mass += e.soft[e.human.index()];
    }
    if n == 0 {
        return Err(LeastError::NoValidationEntries(format!("page {page}")));
    }
    Ok(cfg.clamp(mass / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightCase {
    /// Human-labeled page of a seed site.
    A,
    /// Unlabeled page of a seed site.
    B,
    /// Page of a non-seed site.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageWeight {
    pub weight: f64,
    pub case: WeightCase,
    pub matched_validation_page: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageFlags {
    pub is_human_labeled_seed_page: bool,
    pub is_seed_site: bool,
}

/// Weight shared by every node of `page`.
///
/// In the non-seed case the page is matched against every validation page;
/// the lowest page index wins overlap ties.
pub fn compute_page_weight(
    page: usize,
    store: &PageStore,
    v: &ValidationSet,
    signatures: &BTreeMap<usize, PageSignature>,
    flags: PageFlags,
    cfg: &ReweightConfig,
) -> Result<PageWeight> {
    if v.is_empty() {
        return Err(LeastError::NoValidationEntries("validation set".into()));
    }
    if flags.is_human_labeled_seed_page {
        return Ok(PageWeight {
            weight: 1.0,
            case: WeightCase::A,
            matched_validation_page: None,
        });
    }
    if flags.is_seed_site {
        let website = &store.page(page).website_id;
        return Ok(PageWeight {
            weight: hard_accuracy_for_site(v, store, website, cfg)?,
            case: WeightCase::B,
            matched_validation_page: None,
        });
    }
    let sig = signature(signatures, page)?;
    let mut best: Option<(usize, f64)> = None;
    for vp in v.pages() {
        let po = page_overlap(sig, signature(signatures, vp)?, cfg);
        if best.is_none_or(|(_, b)| po > b) {
            best = Some((vp, po));
        }
    }
    let (vp, po) = best.expect("non-empty validation set has pages");
    let acc = soft_accuracy_for_page(v, vp, cfg)?;
    Ok(PageWeight {
        weight: cfg.clamp(acc * po),
        case: WeightCase::C,
        matched_validation_page: Some(vp),
    })
}

fn signature(signatures: &BTreeMap<usize, PageSignature>, page: usize) -> Result<&PageSignature> {
    signatures
        .get(&page)
        .ok_or_else(|| LeastError::InvalidConfig(format!("no signature for page {page}")))
}

/// Audit line for `--dump-weights`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub page: String,
    pub weight: f64,
    pub case: WeightCase,
    pub matched_validation_page: Option<String>,
}
