//! Labeled, unlabeled, validation and augmented corpora.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dom_model::{parse_page, DetailPage, DomNodeRecord};
use crate::error::{LeastError, Result};
use crate::labels::{AttributeSet, Label};

/// Identifies one node: page index into a [`PageStore`] and node id on the page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeKey {
    pub page: usize,
    pub node: usize,
}

/// All parsed pages of a vertical, addressed by index.
#[derive(Debug, Clone, Default)]
pub struct PageStore {
    pages: Vec<DetailPage>,
    by_id: HashMap<String, usize>,
}

impl PageStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pages(pages: impl IntoIterator<Item = DetailPage>) -> Result<Self> {
        let mut store = Self::new();
        for p in pages {
            store.push(p)?;
        }
        Ok(store)
    }

    pub fn push(&mut self, page: DetailPage) -> Result<usize> {
        if self.by_id.contains_key(&page.page_id) {
            return Err(LeastError::InvalidConfig(format!(
                "duplicate page id {}",
                page.page_id
            )));
        }
        let idx = self.pages.len();
        self.by_id.insert(page.page_id.clone(), idx);
        self.pages.push(page);
        Ok(idx)
    }

    pub fn pages(&self) -> &[DetailPage] {
        &self.pages
    }

    pub fn page(&self, idx: usize) -> &DetailPage {
        &self.pages[idx]
    }

    pub fn index_of(&self, page_id: &str) -> Option<usize> {
        self.by_id.get(page_id).copied()
    }

    pub fn node(&self, key: NodeKey) -> &DomNodeRecord {
        &self.pages[key.page].nodes[key.node]
    }

    pub fn website_of(&self, key: NodeKey) -> &str {
        &self.pages[key.page].website_id
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    /// Website ids in sorted order.
    pub fn websites(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.pages.iter().map(|p| p.website_id.as_str()).collect();
        set.into_iter().map(str::to_string).collect()
    }

    pub fn site_pages(&self, website: &str) -> Vec<usize> {
        (0..self.pages.len())
            .filter(|&i| self.pages[i].website_id == website)
            .collect()
    }

    pub fn node_keys(&self, page: usize) -> impl Iterator<Item = NodeKey> {
        (0..self.pages[page].nodes.len()).map(move |node| NodeKey { page, node })
    }

    /// Stable textual id used in audit logs.
    pub fn node_id_string(&self, key: NodeKey) -> String {
        format!("{}#{}", self.pages[key.page].page_id, key.node)
    }
}

/// One line of a label, ground-truth or pseudo-label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub page: String,
    pub xpath: String,
    pub attribute: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub votes: Option<usize>,
}

impl LabelRecord {
    pub fn new(page: impl Into<String>, xpath: impl Into<String>, attribute: impl Into<String>) -> Self {
        LabelRecord {
            page: page.into(),
            xpath: xpath.into(),
            attribute: attribute.into(),
            text: None,
            source: None,
            votes: None,
        }
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, what: &'static str) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| LeastError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| LeastError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| LeastError::Malformed {
            what,
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| LeastError::io(dir, e))?;
        }
    }
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| LeastError::io(path, e))?;
    f.write_all(&buf).map_err(|e| LeastError::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledSample {
    pub node: NodeKey,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Generative,
    Teacher,
    Human,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSample {
    pub node: NodeKey,
    pub hard_label: Label,
    pub soft_label: Vec<f64>,
    pub source: LabelSource,
    pub weight: f64,
    /// Iteration whose validation snapshot produced `weight`.
    pub weight_iteration: usize,
    pub iteration_added: usize,
}

impl PseudoLabeledSample {
    pub fn human(node: NodeKey, label: Label, num_classes: usize) -> Self {
        PseudoLabeledSample {
            node,
            hard_label: label,
            soft_label: one_hot(label, num_classes),
            source: LabelSource::Human,
            weight: 1.0,
            weight_iteration: 0,
            iteration_added: 0,
        }
    }
}

pub fn one_hot(label: Label, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[label.index()] = 1.0;
    v
}

/// Index of the largest component; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The training corpus `A^(t)`.
#[derive(Debug, Clone, Default)]
pub struct AugmentedCorpus {
    samples: Vec<PseudoLabeledSample>,
    consumed: HashSet<NodeKey>,
}

impl AugmentedCorpus {
    pub fn push(&mut self, sample: PseudoLabeledSample) -> Result<()> {
        if !self.consumed.insert(sample.node) {
            return Err(LeastError::DuplicateNode(format!(
                "{}#{}",
                sample.node.page, sample.node.node
            )));
        }
        self.samples.push(sample);
        Ok(())
    }

    pub fn samples(&self) -> &[PseudoLabeledSample] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [PseudoLabeledSample] {
        &mut self.samples
    }

    pub fn contains(&self, node: NodeKey) -> bool {
        self.consumed.contains(&node)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationEntry {
    pub node: NodeKey,
    pub human: Label,
    pub soft: Vec<f64>,
    pub hard: Label,
}

/// `V^(t)`: held-out human-labeled nodes plus the current teacher's pseudo-labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationSet {
    pub entries: Vec<ValidationEntry>,
}

impl ValidationSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Page indices in ascending order.
    pub fn pages(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.entries.iter().map(|e| e.node.page).collect();
        set.into_iter().collect()
    }

    /// Replace the pseudo-label columns with `predict(node)`; human labels stay.
    pub fn refresh(&mut self, mut predict: impl FnMut(NodeKey) -> Vec<f64>) {
        for e in &mut self.entries {
            let soft = predict(e.node);
            e.hard = Label(argmax(&soft));
            e.soft = soft;
        }
    }
}

/// Pages, human labels and the unlabeled node pool of one vertical.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub store: PageStore,
    pub labeled: Vec<LabeledSample>,
    pub labeled_pages: BTreeSet<usize>,
    pub pool: Vec<NodeKey>,
}

/// Parse every `<website>/<page>.html` under `page_dir`. Page ids are
/// `<website>/<file stem>`.
pub fn load_pages(page_dir: &Path) -> Result<PageStore> {
    let mut store = PageStore::new();
    for site in sorted_entries(page_dir)? {
        if !site.is_dir() {
            continue;
        }
        let website = file_name(&site);
        for file in sorted_entries(&site)? {
            let is_html = file
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| e.eq_ignore_ascii_case("html") || e.eq_ignore_ascii_case("htm"))
                .unwrap_or(false);
            if !is_html || !file.is_file() {
                continue;
            }
            let stem = file.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let bytes = fs::read(&file).map_err(|e| LeastError::io(&file, e))?;
            let page_id = format!("{website}/{stem}");
            store.push(parse_page(&bytes, &page_id, &website)?)?;
        }
    }
    Ok(store)
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .map_err(|e| LeastError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| LeastError::io(dir, err)))
        .collect::<Result<_>>()?;
    v.sort();
    Ok(v)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Turn label records into samples. Every node of a labeled page becomes a
/// sample; nodes absent from the records are NONE.
pub fn apply_labels(
    store: &PageStore,
    records: &[LabelRecord],
    attrs: &AttributeSet,
) -> Result<(Vec<LabeledSample>, BTreeSet<usize>)> {
    let mut per_page: BTreeMap<usize, HashMap<usize, Label>> = BTreeMap::new();
    for r in records {
        let page_idx = store
            .index_of(&r.page)
            .ok_or_else(|| LeastError::UnknownPage(r.page.clone()))?;
        let label = attrs.label(&r.attribute)?;
        let node = store
            .page(page_idx)
            .node_by_xpath(&r.xpath)
            .ok_or_else(|| LeastError::DanglingXPath {
                page: r.page.clone(),
                xpath: r.xpath.clone(),
            })?
            .node_id;
        let labels = per_page.entry(page_idx).or_default();
        if let Some(prev) = labels.insert(node, label) {
            if prev != label {
                return Err(LeastError::InvalidConfig(format!(
                    "conflicting labels for {} {}",
                    r.page, r.xpath
                )));
            }
        }
    }
    let mut samples = Vec::new();
    for (&page, labels) in &per_page {
        for key in store.node_keys(page) {
            let label = labels.get(&key.node).copied().unwrap_or(attrs.none());
            samples.push(LabeledSample { node: key, label });
        }
    }
    let pages = per_page.keys().copied().collect();
    Ok((samples, pages))
}

/// Load a vertical directory and an optional label file.
pub fn load_corpus(
    page_dir: &Path,
    label_file: Option<&Path>,
    attrs: &AttributeSet,
) -> Result<LoadedCorpus> {
    let store = load_pages(page_dir)?;
    let records = match label_file {
        Some(p) => read_jsonl::<LabelRecord>(p, "label file")?,
        None => Vec::new(),
    };
    let (labeled, labeled_pages) = apply_labels(&store, &records, attrs)?;
    let pool = unlabeled_nodes(&store, &labeled_pages, |_| true);
    Ok(LoadedCorpus {
        store,
        labeled,
        labeled_pages,
        pool,
    })
}

/// All nodes of pages that are not labeled and pass `keep_page`.
pub fn unlabeled_nodes(
    store: &PageStore,
    labeled_pages: &BTreeSet<usize>,
    mut keep_page: impl FnMut(usize) -> bool,
) -> Vec<NodeKey> {
    (0..store.len())
        .filter(|p| !labeled_pages.contains(p) && keep_page(*p))
        .flat_map(|p| store.node_keys(p))
        .collect()
}

/// Page-level split of the human-labeled nodes into `A^(0)` and `V^(0)`.
///
/// Each website holding labeled pages contributes `validation_pages_per_site`
/// randomly chosen pages to the validation side.
pub fn split_initial(
    store: &PageStore,
    labeled: &[LabeledSample],
    validation_pages_per_site: usize,
    num_classes: usize,
    seed: u64,
) -> Result<(AugmentedCorpus, ValidationSet)> {
    if validation_pages_per_site == 0 {
        return Err(LeastError::InvalidConfig(
            "validation_pages_per_site must be at least 1".into(),
        ));
    }
    let mut by_site: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for s in labeled {
        by_site
            .entry(store.website_of(s.node))
            .or_default()
            .insert(s.node.page);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut validation_pages = HashSet::new();
    for (site, pages) in &by_site {
        if pages.len() < validation_pages_per_site + 1 {
            return Err(LeastError::InsufficientLabeledPages {
                website: site.to_string(),
                available: pages.len(),
                required: validation_pages_per_site + 1,
            });
        }
        let mut pages: Vec<usize> = pages.iter().copied().collect();
        pages.shuffle(&mut rng);
        validation_pages.extend(pages.into_iter().take(validation_pages_per_site));
    }

    let mut corpus = AugmentedCorpus::default();
    let mut validation = ValidationSet::default();
    let uniform = vec![1.0 / num_classes as f64; num_classes];
    for s in labeled {
        if validation_pages.contains(&s.node.page) {
            validation.entries.push(ValidationEntry {
                node: s.node,
                human: s.label,
                soft: uniform.clone(),
                hard: Label(num_classes - 1),
            });
        } else {
            corpus.push(PseudoLabeledSample::human(s.node, s.label, num_classes))?;
        }
    }
    Ok((corpus, validation))
}

/// Unlabeled nodes not yet drawn into the training corpus.
#[derive(Debug, Clone, Default)]
pub struct UnlabeledPool {
    remaining: Vec<NodeKey>,
    drawn: HashSet<NodeKey>,
}

impl UnlabeledPool {
    pub fn new(mut nodes: Vec<NodeKey>) -> Self {
        nodes.sort();
        nodes.dedup();
        UnlabeledPool {
            remaining: nodes,
            drawn: HashSet::new(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.remaining.len()
    }

    pub fn drawn(&self) -> &HashSet<NodeKey> {
        &self.drawn
    }

    /// Draw up to `max` nodes uniformly without replacement.
    pub fn sample<R: Rng + ?Sized>(&mut self, max: usize, rng: &mut R) -> Vec<NodeKey> {
        let n = max.min(self.remaining.len());
        let keep = self.remaining.len() - n;
        // partial_shuffle moves the chosen elements to the tail.
        self.remaining.partial_shuffle(rng, n);
        let chosen: Vec<NodeKey> = self.remaining.split_off(keep);
        self.drawn.extend(chosen.iter().copied());
        chosen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page_with(n: usize, id: &str, site: &str) -> DetailPage {
        let body: String = (0..n).map(|i| format!("<p>text {i}</p>")).collect();
        parse_page(format!("<html><body>{body}</body></html>").as_bytes(), id, site).unwrap()
    }

    fn movie_attrs() -> AttributeSet {
        AttributeSet::new(["title", "director", "genre", "mpaa_rating"]).unwrap()
    }

    #[test]
    fn labeled_page_yields_all_nodes() {
        let store = PageStore::from_pages([page_with(10, "s/p0", "s")]).unwrap();
        let recs = vec![
            LabelRecord::new("s/p0", "/html[1]/body[1]/p[1]", "title"),
            LabelRecord::new("s/p0", "/html[1]/body[1]/p[4]", "director"),
        ];
        let attrs = movie_attrs();
        let (samples, pages) = apply_labels(&store, &recs, &attrs).unwrap();
        assert_eq!(samples.len(), 10);
        assert_eq!(pages.len(), 1);
        let none = samples.iter().filter(|s| attrs.is_none(s.label)).count();
        assert_eq!(none, 8);
    }

    #[test]
    fn dangling_xpath_and_unknown_attribute() {
        let store = PageStore::from_pages([page_with(3, "s/p0", "s")]).unwrap();
        let attrs = movie_attrs();
        let bad = vec![LabelRecord::new("s/p0", "/html[1]/body[1]/p[9]", "title")];
        assert!(matches!(
            apply_labels(&store, &bad, &attrs),
            Err(LeastError::DanglingXPath { .. })
        ));
        let bad = vec![LabelRecord::new("s/p0", "/html[1]/body[1]/p[1]", "budget")];
        assert!(matches!(
            apply_labels(&store, &bad, &attrs),
            Err(LeastError::UnknownAttribute(_))
        ));
    }

    #[test]
    fn unlabeled_page_is_pool() {
        let store = PageStore::from_pages([page_with(10, "s/p0", "s")]).unwrap();
        let pool = unlabeled_nodes(&store, &BTreeSet::new(), |_| true);
        assert_eq!(pool.len(), 10);
    }

    fn seeded_store(sites: usize, pages: usize) -> (PageStore, Vec<LabeledSample>) {
        let mut store = PageStore::new();
        let mut labeled = Vec::new();
        for s in 0..sites {
            for p in 0..pages {
                let idx = store
                    .push(page_with(3, &format!("site{s}/p{p}"), &format!("site{s}")))
                    .unwrap();
                for key in store.node_keys(idx).collect::<Vec<_>>() {
                    labeled.push(LabeledSample {
                        node: key,
                        label: Label(4),
                    });
                }
            }
        }
        (store, labeled)
    }

    #[test]
    fn split_is_page_level_and_exhaustive() {
        let (store, labeled) = seeded_store(2, 19);
        let (a0, v0) = split_initial(&store, &labeled, 10, 5, 7).unwrap();
        let a_pages: BTreeSet<usize> = a0.samples().iter().map(|s| s.node.page).collect();
        let v_pages: BTreeSet<usize> = v0.entries.iter().map(|e| e.node.page).collect();
        assert_eq!(v_pages.len(), 20);
        assert_eq!(a_pages.len(), 18);
        assert!(a_pages.is_disjoint(&v_pages));
        assert_eq!(a0.len() + v0.len(), labeled.len());
        assert!(a0
            .samples()
            .iter()
            .all(|s| s.weight == 1.0 && s.source == LabelSource::Human));

        let (a1, v1) = split_initial(&store, &labeled, 10, 5, 7).unwrap();
        assert_eq!(a0.samples(), a1.samples());
        assert_eq!(v0, v1);
    }

    #[test]
    fn split_rejects_degenerate_or_short_sites() {
        let (store, labeled) = seeded_store(2, 19);
        assert!(matches!(
            split_initial(&store, &labeled, 0, 5, 1),
            Err(LeastError::InvalidConfig(_))
        ));
        assert!(matches!(
            split_initial(&store, &labeled, 19, 5, 1),
            Err(LeastError::InsufficientLabeledPages { .. })
        ));
    }

    fn keys(n: usize) -> Vec<NodeKey> {
        (0..n).map(|i| NodeKey { page: 0, node: i }).collect()
    }

    #[test]
    fn sample_more_than_pool() {
        let mut pool = UnlabeledPool::new(keys(10));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(pool.sample(100_000, &mut rng).len(), 10);
        assert!(pool.sample(5, &mut rng).is_empty());
    }

    #[test]
    fn sampling_exhausts_without_replacement() {
        let mut pool = UnlabeledPool::new(keys(10));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = pool.sample(4, &mut rng);
        let b = pool.sample(4, &mut rng);
        let c = pool.sample(4, &mut rng);
        assert_eq!((a.len(), b.len(), c.len()), (4, 4, 2));
        let mut all: Vec<_> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, keys(10));
        assert_eq!(pool.drawn().len(), 10);
    }

    #[test]
    fn empty_pool() {
        let mut pool = UnlabeledPool::new(Vec::new());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(pool.sample(4, &mut rng).is_empty());
    }

    #[test]
    fn corpus_rejects_duplicate_nodes() {
        let mut c = AugmentedCorpus::default();
        let k = NodeKey { page: 0, node: 0 };
        c.push(PseudoLabeledSample::human(k, Label(0), 3)).unwrap();
        assert!(matches!(
            c.push(PseudoLabeledSample::human(k, Label(1), 3)),
            Err(LeastError::DuplicateNode(_))
        ));
    }

    #[test]
    fn load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let site = dir.path().join("siteA");
        fs::create_dir_all(&site).unwrap();
        fs::write(site.join("p0.html"), "<p>Inception</p><p>Nolan</p>").unwrap();
        fs::write(site.join("p1.htm"), "<p>Memento</p>").unwrap();
        fs::write(site.join("notes.txt"), "ignored").unwrap();
        let labels = dir.path().join("labels.jsonl");
        write_jsonl(
            &labels,
            &[LabelRecord::new("siteA/p0", "/html[1]/body[1]/p[1]", "title")],
        )
        .unwrap();
        let c = load_corpus(dir.path(), Some(&labels), &movie_attrs()).unwrap();
        assert_eq!(c.store.len(), 2);
        assert_eq!(c.labeled.len(), 2);
        assert_eq!(c.pool.len(), 1);
    }
}
