//! Distant-supervision labeler recovered from a few human-labeled pages.
//!
//! Website-specific relations (attribute -> value strings) are assembled from
//! human labels, sound labeling functions, and xpath templates whose values
//! overlap across seed websites. Unlabeled pages are then labeled by exact
//! text lookup with majority voting across relations.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{LabeledSample, PageStore};
use crate::dom_model::{normalize_text, DetailPage, DomNodeRecord};
use crate::error::{LeastError, Result};
use crate::labels::{AttributeSet, Label};

pub const DEFAULT_MIN_OVERLAP: f64 = 0.3;

/// A heuristic that, given human-labeled instances of one attribute, picks
/// further instances on a page. Implementations must be sound: on a
/// human-labeled page they may only return nodes labeled with that attribute.
pub trait LabelingFunction: Send + Sync {
    fn name(&self) -> &str;

    /// Node ids on `page` judged to be instances of `attribute`.
    fn apply(&self, node_list: &[&DomNodeRecord], attribute: Label, page: &DetailPage)
        -> Vec<usize>;
}

/// Matches nodes whose text has the same word count as a labeled node and
/// whose positionally aligned words are each within a small edit distance.
#[derive(Debug, Clone)]
pub struct FuzzyStringMatcher {
    pub max_word_distance: usize,
}

impl Default for FuzzyStringMatcher {
    fn default() -> Self {
        FuzzyStringMatcher {
            max_word_distance: 3,
        }
    }
}

impl FuzzyStringMatcher {
    pub fn matches(&self, a: &str, b: &str) -> bool {
        let wa: Vec<&str> = a.split_whitespace().collect();
        let wb: Vec<&str> = b.split_whitespace().collect();
        !wa.is_empty()
            && wa.len() == wb.len()
            && wa
                .iter()
                .zip(&wb)
                .all(|(x, y)| levenshtein(x, y) <= self.max_word_distance)
    }
}

impl LabelingFunction for FuzzyStringMatcher {
    fn name(&self) -> &str {
        "fuzzy_string_matcher"
    }

    fn apply(&self, node_list: &[&DomNodeRecord], _attribute: Label, page: &DetailPage) -> Vec<usize> {
        let seeds: BTreeSet<&str> = node_list.iter().map(|n| n.text.as_str()).collect();
        page.nodes
            .iter()
            .filter(|node| seeds.iter().any(|s| self.matches(s, &node.text)))
            .map(|node| node.node_id)
            .collect()
    }
}

/// Character-level Levenshtein distance.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// A page with a human label for every node, in node order.
#[derive(Debug, Clone, Copy)]
pub struct LabeledPage<'a> {
    pub page: &'a DetailPage,
    pub labels: &'a [Label],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoundnessReport {
    pub sound: bool,
    /// `(page_id, node_id)` of returned nodes not labeled with the attribute.
    pub violations: Vec<(String, usize)>,
}

/// Apply `lf` to every labeled page, seeded with all nodes labeled
/// `attribute` across those pages, and report outputs outside that label.
pub fn check_soundness(
    lf: &dyn LabelingFunction,
    attribute: Label,
    pages: &[LabeledPage<'_>],
) -> SoundnessReport {
    let node_list: Vec<&DomNodeRecord> = pages
        .iter()
        .flat_map(|lp| {
            lp.page
                .nodes
                .iter()
                .zip(lp.labels)
                .filter(|(_, &l)| l == attribute)
                .map(|(n, _)| n)
        })
        .collect();
    let mut violations = Vec::new();
    for lp in pages {
        for id in lf.apply(&node_list, attribute, lp.page) {
            if lp.labels[id] != attribute {
                violations.push((lp.page.page_id.clone(), id));
            }
        }
    }
    SoundnessReport {
        sound: violations.is_empty(),
        violations,
    }
}

/// Group labeled samples into per-page label vectors, keyed by page index.
pub fn labeled_pages_of(store: &PageStore, labeled: &[LabeledSample], none: Label) -> BTreeMap<usize, Vec<Label>> {
    let mut out: BTreeMap<usize, Vec<Label>> = BTreeMap::new();
    for s in labeled {
        let labels = out
            .entry(s.node.page)
            .or_insert_with(|| vec![none; store.page(s.node.page).nodes.len()]);
        labels[s.node.node] = s.label;
    }
    out
}

/// The labeling functions registered with the pipeline.
pub fn default_labeling_functions() -> Vec<Box<dyn LabelingFunction>> {
    vec![Box::new(FuzzyStringMatcher::default())]
}

/// Check every function on every attribute, one seed site at a time: the
/// node list is the site's human-labeled nodes, as in relation building.
pub fn assert_sound(
    store: &PageStore,
    labeled: &[LabeledSample],
    functions: &[Box<dyn LabelingFunction>],
    attrs: &AttributeSet,
) -> Result<()> {
    let per_page = labeled_pages_of(store, labeled, attrs.none());
    let mut by_site: BTreeMap<&str, Vec<LabeledPage<'_>>> = BTreeMap::new();
    for (&p, labels) in &per_page {
        let page = store.page(p);
        by_site.entry(page.website_id.as_str()).or_default().push(LabeledPage { page, labels });
    }
    for (site, pages) in &by_site {
        for f in functions {
            for a in attrs.attribute_labels() {
                let report = check_soundness(f.as_ref(), a, pages);
                if !report.sound {
                    return Err(LeastError::UnsoundLabelingFunction {
                        function: f.name().to_string(),
                        attribute: attrs.name(a).to_string(),
                        website: site.to_string(),
                        violations: report.violations.len(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Recovered website-specific relation: attribute -> normalized values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRelation {
    pub website_id: String,
    pub rows: BTreeMap<Label, BTreeSet<String>>,
}

/// An xpath template (final sibling index wildcarded) mapped to an attribute.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OverlapRule {
    pub website_id: String,
    pub xpath_template: String,
    pub attribute: Label,
}

/// Replace the sibling index of the final xpath step with `*`.
pub fn xpath_template(xpath: &str) -> String {
    match xpath.rfind('[') {
        Some(i) if xpath.ends_with(']') && i > xpath.rfind('/').unwrap_or(0) => {
            format!("{}[*]", &xpath[..i])
        }
        _ => xpath.to_string(),
    }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn site_templates(store: &PageStore, site: &str) -> BTreeMap<String, BTreeSet<String>> {
    let mut t: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for p in store.site_pages(site) {
        for n in &store.page(p).nodes {
            t.entry(xpath_template(&n.xpath))
                .or_default()
                .insert(n.text.clone());
        }
    }
    t
}

/// Align xpath templates across seed websites by value overlap and bootstrap
/// their attribute from human-labeled values.
///
/// A template is kept when its value set has Jaccard overlap of at least
/// `min_overlap` with some template of another seed site. Its attribute is
/// the label (NONE included) whose human-labeled texts it intersects most;
/// templates won by NONE or tied between labels are dropped.
pub fn infer_overlap_rules(
    store: &PageStore,
    seed_sites: &[String],
    labeled: &[LabeledSample],
    attrs: &AttributeSet,
    min_overlap: f64,
) -> Vec<OverlapRule> {
    let mut labeled_texts: HashMap<&str, BTreeSet<Label>> = HashMap::new();
    for s in labeled {
        labeled_texts
            .entry(store.node(s.node).text.as_str())
            .or_default()
            .insert(s.label);
    }

    let templates: Vec<(&String, BTreeMap<String, BTreeSet<String>>)> = seed_sites
        .iter()
        .map(|s| (s, site_templates(store, s)))
        .collect();

    let mut rules = Vec::new();
    for (i, (site, tmpl)) in templates.iter().enumerate() {
        for (template, values) in tmpl {
            let overlaps = templates.iter().enumerate().any(|(j, (_, other))| {
                j != i && other.values().any(|ov| jaccard(values, ov) >= min_overlap)
            });
            if !overlaps {
                continue;
            }
            let mut votes: BTreeMap<Label, usize> = BTreeMap::new();
            for v in values {
                if let Some(ls) = labeled_texts.get(v.as_str()) {
                    for &l in ls {
                        *votes.entry(l).or_default() += 1;
                    }
                }
            }
            if let Some(winner) = unique_max(&votes) {
                if !attrs.is_none(winner) {
                    rules.push(OverlapRule {
                        website_id: (*site).clone(),
                        xpath_template: template.clone(),
                        attribute: winner,
                    });
                }
            }
        }
    }
    rules
}

fn unique_max(votes: &BTreeMap<Label, usize>) -> Option<Label> {
    let best = *votes.values().max()?;
    let mut winners = votes.iter().filter(|(_, &c)| c == best);
    let (&label, _) = winners.next()?;
    winners.next().is_none().then_some(label)
}

/// Assemble one relation per seed site from human labels, labeling-function
/// outputs over the site's pages, and overlap-rule extractions. A rule does
/// not contribute texts that humans labeled with another class on the site.
pub fn build_site_relations(
    store: &PageStore,
    labeled: &[LabeledSample],
    functions: &[Box<dyn LabelingFunction>],
    rules: &[OverlapRule],
    seed_sites: &[String],
    attrs: &AttributeSet,
) -> Vec<SiteRelation> {
    seed_sites
        .iter()
        .map(|site| {
            let mut rows: BTreeMap<Label, BTreeSet<String>> = attrs
                .attribute_labels()
                .map(|a| (a, BTreeSet::new()))
                .collect();
            let site_pages = store.site_pages(site);
            for a in attrs.attribute_labels() {
                let node_list: Vec<&DomNodeRecord> = labeled
                    .iter()
                    .filter(|s| s.label == a && store.website_of(s.node) == site)
                    .map(|s| store.node(s.node))
                    .collect();
                let row = rows.get_mut(&a).expect("row per attribute");
                row.extend(node_list.iter().map(|n| normalize_text(&n.text)));
                if node_list.is_empty() {
                    continue;
                }
                for f in functions {
                    for &p in &site_pages {
                        let page = store.page(p);
                        for id in f.apply(&node_list, a, page) {
                            row.insert(normalize_text(&page.nodes[id].text));
                        }
                    }
                }
            }
            // Rule extractions never contradict a human label on the site.
            let mut human: HashMap<String, BTreeSet<Label>> = HashMap::new();
            for s in labeled.iter().filter(|s| store.website_of(s.node) == site) {
                human
                    .entry(normalize_text(&store.node(s.node).text))
                    .or_default()
                    .insert(s.label);
            }
            for rule in rules.iter().filter(|r| &r.website_id == site) {
                let Some(row) = rows.get_mut(&rule.attribute) else {
                    continue;
                };
                for &p in &site_pages {
                    for n in &store.page(p).nodes {
                        if xpath_template(&n.xpath) != rule.xpath_template {
                            continue;
                        }
                        let text = normalize_text(&n.text);
                        if human.get(&text).is_none_or(|ls| ls.contains(&rule.attribute)) {
                            row.insert(text);
                        }
                    }
                }
            }
            SiteRelation {
                website_id: site.clone(),
                rows,
            }
        })
        .collect()
}

/// Inverted index over frozen relations: text -> votes per attribute.
#[derive(Debug, Clone, Default)]
pub struct DistantLabeler {
    index: HashMap<String, BTreeMap<Label, usize>>,
}

impl DistantLabeler {
    pub fn new(relations: &[SiteRelation]) -> Self {
        let mut index: HashMap<String, BTreeMap<Label, usize>> = HashMap::new();
        for rel in relations {
            for (&a, values) in &rel.rows {
                for v in values {
                    *index.entry(v.clone()).or_default().entry(a).or_default() += 1;
                }
            }
        }
        DistantLabeler { index }
    }

    /// Majority label for `text` and its vote count; `None` when no relation
    /// holds the text or the top vote is tied.
    pub fn label_text(&self, text: &str) -> Option<(Label, usize)> {
        let votes = self.index.get(text)?;
        let label = unique_max(votes)?;
        Some((label, votes[&label]))
    }

    /// `(node_id, label, votes)` for every node the labeler does not abstain on.
    pub fn label_page(&self, page: &DetailPage) -> Vec<(usize, Label, usize)> {
        page.nodes
            .iter()
            .filter_map(|n| {
                self.label_text(&n.text)
                    .map(|(l, votes)| (n.node_id, l, votes))
            })
            .collect()
    }
}

pub fn distant_label_page(relations: &[SiteRelation], page: &DetailPage) -> Vec<(usize, Label)> {
    DistantLabeler::new(relations)
        .label_page(page)
        .into_iter()
        .map(|(id, l, _)| (id, l))
        .collect()
}
