//! Synthetic verticals rendered from an abstract relation.
//!
//! Each website selects a fraction of the relation's tuples, projects a subset
//! of attributes, applies page-consistent noise, and renders every surviving
//! tuple through a site-specific HTML template. Ground truth is recorded while
//! rendering, so xpaths and node texts are exact.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, LabelRecord, PageStore};
use crate::dom_model::parse_page;
use crate::error::{LeastError, Result};
use crate::labels::AttributeSet;

const TITLE_WORDS: &[&str] = &[
    "Silent", "River", "Shadow", "Empire", "Midnight", "Crimson", "Harbor", "Falcon", "Winter",
    "Garden", "Echo", "Iron", "Velvet", "Storm", "Hollow", "Lantern", "Paper", "Orbit", "Desert",
    "Glass", "Marble", "Thunder", "Whisper", "Cobalt", "Ember", "Frontier", "Mirror", "Canyon",
    "Horizon", "Voyage", "Legacy", "Phantom", "Summit", "Tide", "Meadow", "Cipher", "Anthem",
    "Beacon", "Citadel", "Dune", "Eclipse", "Fable", "Glacier", "Haven", "Island", "Jungle",
    "Kingdom", "Labyrinth", "Monsoon", "Nebula", "Oasis", "Prairie", "Quarry", "Relic", "Saga",
    "Tempest", "Utopia", "Vertigo", "Wildfire", "Zenith", "Amber", "Bishop", "Carnival", "Dagger",
    "Emerald", "Fortress", "Gambit", "Hunter", "Ivory", "Jester", "Knight", "Lotus", "Mariner",
    "Nomad", "Outlaw", "Pilgrim", "Quest", "Raven", "Sentinel", "Titan", "Umbra", "Vandal",
    "Warden", "Yonder", "Aurora", "Bastion", "Comet", "Delta", "Exile", "Fjord", "Grove",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ren", "tha", "vo", "sel", "dri", "no", "bar", "el", "qui", "zan", "tor",
    "pe", "li", "mar", "gus", "ta", "ven", "ro", "sha", "dun", "fi", "ha", "jo", "ber", "cal",
    "dor", "em", "gar", "is", "kel", "lan", "mor", "nel", "os", "pra", "rik", "sto", "ul", "wen",
];

const FILLER_WORDS: &[&str] = &[
    "a", "truly", "remarkable", "story", "about", "people", "who", "find", "their", "way", "through",
    "difficult", "times", "with", "humor", "and", "heart", "the", "performances", "are", "strong",
    "but", "pacing", "drags", "in", "middle", "act", "overall", "worth", "watching", "for", "fans",
    "of", "genre", "visuals", "stunning", "script", "clever", "ending", "surprising", "music",
    "memorable", "camera", "work", "bold", "characters", "feel", "real",
];

const NAV_ITEMS: &[&str] = &[
    "Back to the home page", "Browse the full catalog", "See our editors top picks",
    "Check out new arrivals", "Contact our support team", "Sign in to your account",
    "Subscribe to our newsletter", "Learn more about this site", "Visit the help center",
    "See what is trending now",
];

const MONTHS: &[&str] = &[
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

const FOOTER_ITEMS: &[&str] = &[
    "Read our privacy policy", "Terms and conditions of use", "Manage your cookie settings",
    "Advertise with us today", "View the full site map", "All rights reserved worldwide",
];

/// How values of one attribute are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ValueKind {
    Title,
    Person,
    /// Several distinct persons rendered as a list; stored `|`-separated.
    PersonList { min: usize, max: usize },
    Category(Vec<String>),
    Year,
    Runtime,
    Money,
    Height,
    Weight,
    Phone,
    Url,
    Engine,
    FuelEconomy,
    Organization { suffix: String },
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    /// Label texts a site may print next to the value.
    pub captions: Vec<String>,
    pub kind: ValueKind,
    /// Number of distinct values; fewer than the tuple count forces sharing.
    pub vocab_size: usize,
}

fn spec(name: &str, captions: &[&str], kind: ValueKind, vocab_size: usize) -> AttributeSpec {
    AttributeSpec {
        name: name.into(),
        captions: captions.iter().map(|s| s.to_string()).collect(),
        kind,
        vocab_size,
    }
}

fn cats(v: &[&str]) -> ValueKind {
    ValueKind::Category(v.iter().map(|s| s.to_string()).collect())
}

/// Schema of a synthetic vertical: the attributes to extract plus extra
/// relation attributes that are rendered but never extracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalSchema {
    pub name: String,
    pub targets: Vec<AttributeSpec>,
    pub extras: Vec<AttributeSpec>,
}

impl VerticalSchema {
    pub fn by_name(name: &str, n_tuples: usize) -> Result<Self> {
        match name {
            "movie" => Ok(Self::movie(n_tuples)),
            "nba-player" | "nba_player" => Ok(Self::nba_player(n_tuples)),
            "auto" => Ok(Self::auto(n_tuples)),
            "university" => Ok(Self::university(n_tuples)),
            other => Err(LeastError::InvalidConfig(format!("unknown vertical {other}"))),
        }
    }

    pub fn movie(n: usize) -> Self {
        VerticalSchema {
            name: "movie".into(),
            targets: vec![
                spec("title", &[], ValueKind::Title, n),
                spec("director", &["Directed by", "Film director:", "Director of film"], ValueKind::Person, (n * 2 / 3).max(1)),
                spec(
                    "genre",
                    &["Film genre:", "Listed genres", "Filed under"],
                    cats(&[
                        "Drama", "Comedy", "Thriller", "Documentary", "Animation", "Romance",
                        "Western", "Horror", "Adventure", "Mystery", "Fantasy", "Musical",
                    ]),
                    12,
                ),
                spec(
                    "mpaa_rating",
                    &["MPAA rating:", "Rated for audiences", "Content certificate"],
                    cats(&["G", "PG", "PG-13", "R", "NC-17"]),
                    5,
                ),
            ],
            extras: vec![
                spec("cast", &["Starring cast members", "Top billed cast", "Full cast listing"], ValueKind::PersonList { min: 2, max: 5 }, 3 * n),
                spec("release_year", &["Release year:", "Released in year", "Theatrical release"], ValueKind::Year, 40),
                spec("runtime", &["Total runtime:", "Running length", "Duration in minutes"], ValueKind::Runtime, 80),
                spec("studio", &["Production studio:", "Production company", "Distributed by"], ValueKind::Organization { suffix: "Pictures".into() }, 30),
                spec("language", &["Original language:", "Spoken language", "Audio language"], cats(&["English", "French", "Spanish", "Japanese", "Korean", "Italian"]), 6),
            ],
        }
    }

    pub fn nba_player(n: usize) -> Self {
        VerticalSchema {
            name: "nba-player".into(),
            targets: vec![
                spec("name", &[], ValueKind::Person, n),
                spec("team", &["Current team:", "Currently plays for", "Team affiliation"], ValueKind::Organization { suffix: "Hawks".into() }, 30),
                spec("height", &["Listed height:", "Player height", "Height measured"], ValueKind::Height, 20),
                spec("weight", &["Listed weight:", "Player weight", "Weight measured"], ValueKind::Weight, 60),
            ],
            extras: vec![
                spec("position", &["Playing position:", "Primary position", "Court position"], cats(&["Guard", "Forward", "Center", "Point guard", "Small forward"]), 5),
                spec("college", &["College attended:", "Former school", "Alma mater"], ValueKind::Organization { suffix: "State".into() }, 50),
                spec("birth_year", &["Birth year:", "Born in year", "Year of birth"], ValueKind::Year, 20),
                spec("teammates", &["Current teammates", "Team roster listing", "Also on team"], ValueKind::PersonList { min: 2, max: 4 }, 3 * n),
            ],
        }
    }

    pub fn auto(n: usize) -> Self {
        VerticalSchema {
            name: "auto".into(),
            targets: vec![
                spec("model", &[], ValueKind::Model, n),
                spec("price", &["Starting price:", "Manufacturer suggested price", "Base price"], ValueKind::Money, n),
                spec("engine", &["Engine options:", "Standard powertrain", "Engine type"], ValueKind::Engine, 25),
                spec("fuel_economy", &["Fuel economy:", "Estimated efficiency", "Combined mileage"], ValueKind::FuelEconomy, 40),
            ],
            extras: vec![
                spec("body", &["Body style:", "Vehicle body type", "Body configuration"], cats(&["Sedan", "Coupe", "Hatchback", "Wagon", "Convertible", "Crossover"]), 6),
                spec("year", &["Model year:", "Production year", "Year of manufacture"], ValueKind::Year, 12),
                spec("dealers", &["Nearby dealers", "Sold by dealers", "Find a dealer"], ValueKind::PersonList { min: 1, max: 3 }, 2 * n),
            ],
        }
    }

    pub fn university(n: usize) -> Self {
        VerticalSchema {
            name: "university".into(),
            targets: vec![
                spec("name", &[], ValueKind::Organization { suffix: "University".into() }, n),
                spec("phone", &["Phone number:", "Main telephone", "Call admissions"], ValueKind::Phone, n),
                spec("website", &["Official website:", "Campus homepage", "Web address"], ValueKind::Url, n),
                spec("type", &["Institution type:", "Type of control", "Governance model"], cats(&["Public", "Private", "Private nonprofit", "Public research"]), 4),
            ],
            extras: vec![
                spec("founded", &["Year founded:", "Established in year", "Founding date"], ValueKind::Year, 120),
                spec("president", &["Current president:", "Chancellor of campus", "Head of institution"], ValueKind::Person, n),
                spec("city", &["Campus city:", "Main location", "Located in"], ValueKind::Organization { suffix: "City".into() }, 60),
            ],
        }
    }

    pub fn attribute_set(&self) -> AttributeSet {
        AttributeSet::new(self.targets.iter().map(|s| s.name.clone()))
            .expect("schema target names are valid and distinct")
    }

    pub fn all_specs(&self) -> impl Iterator<Item = &AttributeSpec> {
        self.targets.iter().chain(&self.extras)
    }

    fn spec(&self, name: &str) -> Option<&AttributeSpec> {
        self.all_specs().find(|s| s.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuple {
    pub entity_id: usize,
    pub values: BTreeMap<String, Option<String>>,
}

/// The vertical-wide relation from which all sites are rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractRelation {
    pub attributes: Vec<String>,
    pub tuples: Vec<Tuple>,
}

impl AbstractRelation {
    /// Distinct non-null values of `attribute`.
    pub fn values_of(&self, attribute: &str) -> BTreeSet<String> {
        self.tuples
            .iter()
            .filter_map(|t| t.values.get(attribute).cloned().flatten())
            .collect()
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn word<R: Rng>(rng: &mut R, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    capitalize(&(0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect::<String>())
}

fn person<R: Rng>(rng: &mut R) -> String {
    format!("{} {}", word(rng, 2, 3), word(rng, 4, 5))
}

impl ValueKind {
    fn draw<R: Rng>(&self, rng: &mut R) -> String {
        match self {
            ValueKind::Title => {
                let n = rng.gen_range(2..=3);
                let long: Vec<&str> = TITLE_WORDS.iter().copied().filter(|w| w.len() >= 5).collect();
                let words: Vec<&str> = long.choose_multiple(rng, n).copied().collect();
                let mut t = words.join(" ");
                if rng.gen_bool(0.3) {
                    t = format!("The {t}");
                }
                if rng.gen_bool(0.15) {
                    t = format!("{t} {}", rng.gen_range(2..=4));
                }
                t
            }
            ValueKind::Person => person(rng),
            ValueKind::PersonList { min, max } => {
                let n = rng.gen_range(*min..=*max);
                (0..n).map(|_| person(rng)).collect::<Vec<_>>().join("|")
            }
            ValueKind::Category(v) => v.choose(rng).cloned().unwrap_or_default(),
            ValueKind::Year => format!("{} {}", MONTHS.choose(rng).unwrap(), rng.gen_range(1950..=2023)),
            ValueKind::Runtime => format!("{} min", rng.gen_range(78..=190)),
            ValueKind::Money => {
                let v: u32 = rng.gen_range(15..=95) * 1000 + rng.gen_range(0..10) * 100;
                format!("${},{:03}", v / 1000, v % 1000)
            }
            ValueKind::Height => format!("{} ft {} in", rng.gen_range(5..=7), rng.gen_range(0..=11)),
            ValueKind::Weight => format!("{} pounds", rng.gen_range(160..=290)),
            ValueKind::Phone => format!(
                "({}) {}-{:04}",
                rng.gen_range(200..=989),
                rng.gen_range(200..=989),
                rng.gen_range(0..10000)
            ),
            ValueKind::Url => format!("www.{}.edu", word(rng, 2, 4).to_lowercase()),
            ValueKind::Engine => format!(
                "{}.{}-liter {} engine",
                rng.gen_range(1..=5),
                rng.gen_range(0..=9),
                ["I4", "V6", "V8", "H4", "I6"].choose(rng).unwrap()
            ),
            ValueKind::FuelEconomy => {
                let city = rng.gen_range(14..=40);
                format!("{}/{} mpg", city, city + rng.gen_range(3..=10))
            }
            ValueKind::Organization { suffix } => format!("{} {}", word(rng, 3, 4), suffix),
            ValueKind::Model => format!(
                "{} {}-{}",
                word(rng, 3, 4),
                ["GX", "LS", "RT", "ZX", "EV"].choose(rng).unwrap(),
                rng.gen_range(10..=90) * 10
            ),
        }
    }

    fn max_distinct(&self) -> Option<usize> {
        match self {
            ValueKind::Category(v) => Some(v.len()),
            _ => None,
        }
    }
}

/// Build `vocab_size` distinct values for one attribute. Person-like values
/// never repeat across attributes (`used` spans the whole relation).
fn vocabulary<R: Rng>(spec: &AttributeSpec, used: &mut HashSet<String>, rng: &mut R) -> Vec<String> {
    if let ValueKind::Category(v) = &spec.kind {
        return v.iter().take(spec.vocab_size.max(1)).cloned().collect();
    }
    let target = spec.vocab_size.max(1);
    let cap = spec.kind.max_distinct().unwrap_or(usize::MAX);
    let mut out = Vec::with_capacity(target);
    let mut attempts = 0;
    while out.len() < target.min(cap) && attempts < target * 200 {
        attempts += 1;
        let v = spec.kind.draw(rng);
        let parts: Vec<&str> = v.split('|').collect();
        if parts.iter().any(|p| used.contains(*p)) || used.contains(&v) {
            continue;
        }
        for p in parts {
            used.insert(p.to_string());
        }
        used.insert(v.clone());
        out.push(v);
    }
    out
}

/// Draw `n_tuples` tuples over `specs`. An attribute whose vocabulary is at
/// least `n_tuples` gets distinct values; smaller vocabularies are sampled
/// with replacement.
pub fn generate_relation<R: Rng>(n_tuples: usize, specs: &[AttributeSpec], rng: &mut R) -> AbstractRelation {
    let n = n_tuples.max(1);
    let mut used = HashSet::new();
    let mut columns: Vec<Vec<String>> = Vec::with_capacity(specs.len());
    for s in specs {
        let vocab = vocabulary(s, &mut used, rng);
        let col = if vocab.len() >= n {
            let mut v = vocab;
            v.shuffle(rng);
            v.truncate(n);
            v
        } else {
            (0..n).map(|_| vocab.choose(rng).cloned().unwrap_or_default()).collect()
        };
        columns.push(col);
    }
    let tuples = (0..n)
        .map(|i| Tuple {
            entity_id: i,
            values: specs
                .iter()
                .zip(&columns)
                .map(|(s, col)| (s.name.clone(), Some(col[i].clone())))
                .collect(),
        })
        .collect();
    AbstractRelation {
        attributes: specs.iter().map(|s| s.name.clone()).collect(),
        tuples,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub extraneous_attr_count: usize,
    pub null_rate: f64,
    pub wrong_value_rate: f64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            extraneous_attr_count: 0,
            null_rate: 0.0,
            wrong_value_rate: 0.0,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            extraneous_attr_count: 1,
            null_rate: 0.05,
            wrong_value_rate: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InfoLayout {
    /// `<div><span>caption</span><span>value</span></div>` rows.
    Rows,
    /// `<dl><dt>caption</dt><dd>value</dd></dl>`.
    DefinitionList,
    /// `<ul><li><b>caption</b><em>value</em></li></ul>`.
    List,
    /// `<p><strong>caption</strong></p><p>value</p>` pairs.
    Paragraphs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Header,
    Info,
    People,
    Reviews,
}

/// Site-specific rendering choices, fixed for every page of the site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteTemplate {
    pub display_name: String,
    pub wrapper_depth: usize,
    pub wrapper_tag: String,
    pub header_tag: String,
    pub info_layout: InfoLayout,
    pub show_captions: bool,
    pub caption_choice: usize,
    pub blocks: Vec<Block>,
    pub nav: Vec<String>,
    pub footer: Vec<String>,
    pub max_reviews: usize,
    pub attribute_order_seed: u64,
}

impl SiteTemplate {
    pub fn random<R: Rng>(rng: &mut R) -> Self {
        let mut blocks = vec![Block::Info, Block::People, Block::Reviews];
        blocks.shuffle(rng);
        // The entity headline usually leads the content.
        let header_at = if rng.gen_bool(0.7) { 0 } else { rng.gen_range(0..=blocks.len()) };
        blocks.insert(header_at, Block::Header);
        let nav_n = rng.gen_range(3..=6);
        SiteTemplate {
            display_name: format!("{}{}", word(rng, 2, 3), ["Hub", "Base", "World", "Central", "Zone"].choose(rng).unwrap()),
            wrapper_depth: rng.gen_range(0..=3),
            wrapper_tag: ["div", "section", "main"].choose(rng).unwrap().to_string(),
            header_tag: ["h1", "h2", "div", "span"].choose(rng).unwrap().to_string(),
            info_layout: *[InfoLayout::Rows, InfoLayout::DefinitionList, InfoLayout::List, InfoLayout::Paragraphs]
                .choose(rng)
                .unwrap(),
            show_captions: rng.gen_bool(0.8),
            caption_choice: rng.gen_range(0..3),
            blocks,
            nav: NAV_ITEMS.choose_multiple(rng, nav_n).map(|s| s.to_string()).collect(),
            footer: FOOTER_ITEMS.choose_multiple(rng, 3).map(|s| s.to_string()).collect(),
            max_reviews: rng.gen_range(0..=4),
            attribute_order_seed: rng.gen(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteGenConfig {
    pub website_id: String,
    /// Fraction of relation tuples published by the site, in (0,1].
    pub select_fraction: f64,
    /// Relation attributes the site shows (targets and extras).
    pub projected_attributes: Vec<String>,
    pub noise: NoiseConfig,
    pub template: SiteTemplate,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthNode {
    pub xpath: String,
    pub attribute: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPage {
    pub page_id: String,
    pub entity_id: usize,
    pub html: String,
    pub truth: Vec<TruthNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSite {
    pub website_id: String,
    pub pages: Vec<RenderedPage>,
    /// The post-noise relation the site's pages encode.
    pub relation: AbstractRelation,
}

enum Child {
    El(El),
    Text(String),
}

struct El {
    tag: String,
    class: Option<String>,
    children: Vec<Child>,
    truth: Option<String>,
}

impl El {
    fn new(tag: &str) -> Self {
        El {
            tag: tag.to_string(),
            class: None,
            children: Vec::new(),
            truth: None,
        }
    }

    fn class(mut self, c: &str) -> Self {
        self.class = Some(c.to_string());
        self
    }

    fn text(mut self, t: &str) -> Self {
        self.children.push(Child::Text(t.to_string()));
        self
    }

    fn truth(mut self, attribute: &str) -> Self {
        self.truth = Some(attribute.to_string());
        self
    }

    fn child(mut self, c: El) -> Self {
        self.children.push(Child::El(c));
        self
    }

    fn push(&mut self, c: El) {
        self.children.push(Child::El(c));
    }

    fn render(&self, xpath: &str, out: &mut String, truth: &mut Vec<TruthNode>) {
        let _ = write!(out, "<{}", self.tag);
        if let Some(c) = &self.class {
            let _ = write!(out, " class=\"{}\"", escape(c));
        }
        out.push('>');
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for child in &self.children {
            match child {
                Child::Text(t) => out.push_str(&escape(t)),
                Child::El(el) => {
                    let n = counts.entry(el.tag.as_str()).or_default();
                    *n += 1;
                    let path = format!("{xpath}/{}[{}]", el.tag, n);
                    if let Some(attr) = &el.truth {
                        let text: String = el
                            .children
                            .iter()
                            .filter_map(|c| match c {
                                Child::Text(t) => Some(t.as_str()),
                                Child::El(_) => None,
                            })
                            .collect();
                        truth.push(TruthNode {
                            xpath: path.clone(),
                            attribute: attr.clone(),
                            text,
                        });
                    }
                    el.render(&path, out, truth);
                }
            }
        }
        let _ = write!(out, "</{}>", self.tag);
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn sentence<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(7..=14);
    let words: Vec<&str> = (0..n).map(|_| *FILLER_WORDS.choose(rng).unwrap()).collect();
    format!("{}.", capitalize(&words.join(" ")))
}

fn caption<'a>(spec: &'a AttributeSpec, template: &SiteTemplate) -> Option<&'a str> {
    if spec.captions.is_empty() {
        None
    } else {
        Some(spec.captions[template.caption_choice % spec.captions.len()].as_str())
    }
}

/// Render one site. `schema` supplies captions and value kinds; extraneous
/// noise attributes are drawn from its extras that the site does not project.
pub fn render_website(relation: &AbstractRelation, schema: &VerticalSchema, cfg: &SiteGenConfig) -> Result<RenderedSite> {
    if cfg.projected_attributes.is_empty() {
        return Err(LeastError::InvalidConfig(format!("{} projects no attributes", cfg.website_id)));
    }
    if !(cfg.select_fraction > 0.0 && cfg.select_fraction <= 1.0) {
        return Err(LeastError::InvalidConfig("select_fraction must lie in (0,1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = relation.tuples.len();
    let keep = ((cfg.select_fraction * n as f64).ceil() as usize).min(n);
    // A permutation prefix, so larger fractions select supersets.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut selected: Vec<usize> = order[..keep].to_vec();
    selected.sort_unstable();

    let target_names: BTreeSet<&str> = schema.targets.iter().map(|s| s.name.as_str()).collect();
    let extraneous: Vec<&AttributeSpec> = schema
        .extras
        .iter()
        .filter(|s| !cfg.projected_attributes.contains(&s.name) && !matches!(s.kind, ValueKind::PersonList { .. }))
        .take(cfg.noise.extraneous_attr_count)
        .collect();

    let mut info_order: Vec<String> = cfg
        .projected_attributes
        .iter()
        .filter(|a| schema.spec(a).is_some_and(|s| !matches!(s.kind, ValueKind::PersonList { .. })))
        .cloned()
        .chain(extraneous.iter().map(|s| s.name.clone()))
        .collect();
    let headline = schema.targets.first().map(|s| s.name.clone());
    info_order.retain(|a| Some(a) != headline.as_ref());
    info_order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.template.attribute_order_seed));

    let mut view = AbstractRelation {
        attributes: cfg.projected_attributes.iter().chain(extraneous.iter().map(|s| &s.name)).cloned().collect(),
        tuples: Vec::new(),
    };
    let mut pages = Vec::new();
    for (page_no, &ti) in selected.iter().enumerate() {
        let tuple = &relation.tuples[ti];
        let mut values: BTreeMap<String, Option<String>> = BTreeMap::new();
        for a in &cfg.projected_attributes {
            let Some(spec) = schema.spec(a) else {
                return Err(LeastError::InvalidConfig(format!("unknown attribute {a}")));
            };
            let mut v = tuple.values.get(a).cloned().flatten();
            if rng.gen_bool(cfg.noise.null_rate.clamp(0.0, 1.0)) && Some(a) != headline.as_ref() {
                v = None;
            } else if v.is_some() && rng.gen_bool(cfg.noise.wrong_value_rate.clamp(0.0, 1.0)) {
                let original = v.clone();
                // Another entity's value for the same attribute, else a fresh draw.
                let other = relation.tuples.choose(&mut rng).and_then(|t| t.values.get(a).cloned().flatten());
                v = match other {
                    Some(o) if Some(&o) != original.as_ref() => Some(o),
                    _ => Some(spec.kind.draw(&mut rng)),
                };
            }
            values.insert(a.clone(), v);
        }
        for s in &extraneous {
            values.insert(s.name.clone(), Some(s.kind.draw(&mut rng)));
        }

        let n_reviews = rng.gen_range(0..=cfg.template.max_reviews);
        let reviews: Vec<String> = (0..n_reviews).map(|_| sentence(&mut rng)).collect();

        let page_id = format!("{}/page-{:04}", cfg.website_id, page_no);
        let html_body = build_body(schema, cfg, &target_names, headline.as_deref(), &info_order, &values, &reviews);
        let head_title = headline
            .as_ref()
            .and_then(|h| values.get(h).cloned().flatten())
            .map(|t| format!("{t} | {}", cfg.template.display_name))
            .unwrap_or_else(|| cfg.template.display_name.clone());

        let mut html = String::from("<!DOCTYPE html>");
        let mut truth = Vec::new();
        let root = El::new("html")
            .child(El::new("head").child(El::new("title").text(&head_title)))
            .child(html_body);
        root.render("/html[1]", &mut html, &mut truth);
        pages.push(RenderedPage {
            page_id,
            entity_id: tuple.entity_id,
            html,
            truth,
        });
        view.tuples.push(Tuple {
            entity_id: tuple.entity_id,
            values,
        });
    }
    Ok(RenderedSite {
        website_id: cfg.website_id.clone(),
        pages,
        relation: view,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_body(
    schema: &VerticalSchema,
    cfg: &SiteGenConfig,
    targets: &BTreeSet<&str>,
    headline: Option<&str>,
    info_order: &[String],
    values: &BTreeMap<String, Option<String>>,
    reviews: &[String],
) -> El {
    let t = &cfg.template;
    let mut nav = El::new("ul").class("nav");
    for item in &t.nav {
        nav.push(El::new("li").text(item));
    }

    let mut content = El::new("div").class("content");
    for block in &t.blocks {
        match block {
            Block::Header => {
                if let Some(h) = headline {
                    if let Some(Some(v)) = values.get(h) {
                        let mut el = El::new(&t.header_tag).class("headline").text(v);
                        if targets.contains(h) {
                            el = el.truth(h);
                        }
                        content.push(El::new("div").class("header").child(el));
                    }
                }
            }
            Block::Info => content.push(info_block(schema, t, targets, info_order, values)),
            Block::People => {
                for s in schema.extras.iter().filter(|s| matches!(s.kind, ValueKind::PersonList { .. })) {
                    let Some(Some(v)) = values.get(&s.name) else { continue };
                    let mut list = El::new("ul");
                    for p in v.split('|') {
                        list.push(El::new("li").text(p));
                    }
                    let mut block = El::new("div").class("people");
                    if let Some(c) = caption(s, t) {
                        block.push(El::new("h3").text(c));
                    }
                    content.push(block.child(list));
                }
            }
            Block::Reviews => {
                if !reviews.is_empty() {
                    let mut block = El::new("div").class("reviews").child(El::new("h3").text("User reviews"));
                    for r in reviews {
                        block.push(El::new("p").text(r));
                    }
                    content.push(block);
                }
            }
        }
    }

    let mut footer = El::new("div").class("footer");
    for f in &t.footer {
        footer.push(El::new("span").text(f));
    }

    let mut inner = content;
    for depth in 0..t.wrapper_depth {
        inner = El::new(&t.wrapper_tag).class(&format!("wrap{depth}")).child(inner);
    }
    El::new("body").child(nav).child(inner).child(footer)
}

/// One row element per projected slot, so a slot keeps its xpath on every
/// page. A null value leaves the row with its caption only.
fn info_block(
    schema: &VerticalSchema,
    t: &SiteTemplate,
    targets: &BTreeSet<&str>,
    order: &[String],
    values: &BTreeMap<String, Option<String>>,
) -> El {
    let mut info = match t.info_layout {
        InfoLayout::Rows | InfoLayout::Paragraphs => El::new("div").class("info"),
        InfoLayout::DefinitionList => El::new("dl").class("info"),
        InfoLayout::List => El::new("ul").class("info"),
    };
    for a in order {
        let Some(value) = values.get(a) else { continue };
        let Some(spec) = schema.spec(a) else { continue };
        let cap = if t.show_captions { caption(spec, t) } else { None };
        let value_el = value.as_ref().map(|v| {
            let el = match t.info_layout {
                InfoLayout::Rows => El::new("span").class("value"),
                InfoLayout::DefinitionList => El::new("dd"),
                InfoLayout::List => El::new("em"),
                InfoLayout::Paragraphs => El::new("p"),
            }
            .text(v);
            if targets.contains(a.as_str()) {
                el.truth(a)
            } else {
                el
            }
        });
        let (mut row, caption_el) = match t.info_layout {
            InfoLayout::Rows => (El::new("div").class("row"), cap.map(|c| El::new("span").class("label").text(c))),
            InfoLayout::DefinitionList => (El::new("div"), cap.map(|c| El::new("dt").text(c))),
            InfoLayout::List => (El::new("li"), cap.map(|c| El::new("b").text(c))),
            InfoLayout::Paragraphs => (
                El::new("div").class("field"),
                cap.map(|c| El::new("p").child(El::new("strong").text(c))),
            ),
        };
        if let Some(c) = caption_el {
            row.push(c);
        }
        if let Some(v) = value_el {
            row.push(v);
        }
        info.push(row);
    }
    info
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// High cross-site tuple overlap.
    Dense,
    /// Low cross-site tuple overlap.
    Sparse,
}

impl Preset {
    /// Per-site selection fraction; also the expected pairwise page overlap.
    pub fn select_fraction(self) -> f64 {
        match self {
            Preset::Dense => 0.6,
            Preset::Sparse => 0.1,
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = LeastError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Preset::Dense),
            "sparse" => Ok(Preset::Sparse),
            other => Err(LeastError::InvalidConfig(format!("unknown preset {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerticalConfig {
    pub vertical: String,
    pub preset: Preset,
    pub sites: usize,
    pub seed_sites: usize,
    /// Human-labeled training pages per seed site.
    pub labeled_pages: usize,
    /// Extra human-labeled pages per seed site on top of `labeled_pages`.
    pub validation_pages: usize,
    pub pages_per_site: usize,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl Default for VerticalConfig {
    fn default() -> Self {
        VerticalConfig {
            vertical: "movie".into(),
            preset: Preset::Dense,
            sites: 5,
            seed_sites: 2,
            labeled_pages: 9,
            validation_pages: 0,
            pages_per_site: 200,
            noise: NoiseConfig::default(),
            seed: 0,
        }
    }
}

/// A rendered vertical with ground truth and seed-site human labels.
#[derive(Debug, Clone)]
pub struct SyntheticVertical {
    pub config: VerticalConfig,
    pub attributes: AttributeSet,
    pub relation: AbstractRelation,
    pub sites: Vec<RenderedSite>,
    pub seed_sites: Vec<String>,
    pub target_sites: Vec<String>,
    /// Label-file lines for the seed sites' human-labeled pages.
    pub human_labels: Vec<LabelRecord>,
}

impl SyntheticVertical {
    pub fn page_store(&self) -> Result<PageStore> {
        let mut store = PageStore::new();
        for site in &self.sites {
            for p in &site.pages {
                store.push(parse_page(p.html.as_bytes(), &p.page_id, &site.website_id)?)?;
            }
        }
        Ok(store)
    }

    /// Ground-truth lines (with text) for every page of `site`.
    pub fn truth_records(&self, site: &RenderedSite) -> Vec<LabelRecord> {
        site.pages
            .iter()
            .flat_map(|p| {
                p.truth.iter().map(|t| LabelRecord {
                    text: Some(t.text.clone()),
                    ..LabelRecord::new(p.page_id.clone(), t.xpath.clone(), t.attribute.clone())
                })
            })
            .collect()
    }

    pub fn all_truth(&self) -> Vec<LabelRecord> {
        self.sites.iter().flat_map(|s| self.truth_records(s)).collect()
    }

    /// Write `<out>/<vertical>/<site>/<page>.html`, `truth/<site>.jsonl`,
    /// `labels/<site>.jsonl`, combined `labels.jsonl` and `manifest.json`.
    pub fn write(&self, out: &Path) -> Result<()> {
        let vdir = out.join(&self.config.vertical);
        for site in &self.sites {
            let sdir = vdir.join(&site.website_id);
            fs::create_dir_all(&sdir).map_err(|e| LeastError::io(&sdir, e))?;
            for p in &site.pages {
                let stem = p.page_id.rsplit('/').next().unwrap_or(&p.page_id);
                let path = sdir.join(format!("{stem}.html"));
                fs::write(&path, &p.html).map_err(|e| LeastError::io(&path, e))?;
            }
            write_jsonl(&out.join("truth").join(format!("{}.jsonl", site.website_id)), &self.truth_records(site))?;
        }
        for seed in &self.seed_sites {
            let prefix = format!("{seed}/");
            let recs: Vec<LabelRecord> = self.human_labels.iter().filter(|r| r.page.starts_with(&prefix)).cloned().collect();
            write_jsonl(&out.join("labels").join(format!("{seed}.jsonl")), &recs)?;
        }
        write_jsonl(&out.join("labels.jsonl"), &self.human_labels)?;
        let manifest = serde_json::json!({
            "vertical": self.config.vertical,
            "attributes": self.attributes.attributes(),
            "seed_sites": self.seed_sites,
            "target_sites": self.target_sites,
            "config": self.config,
        });
        let path = out.join("manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| LeastError::io(&path, e))
    }
}

/// Render a whole vertical in memory.
pub fn build_vertical(cfg: &VerticalConfig) -> Result<SyntheticVertical> {
    if cfg.sites < cfg.seed_sites + 1 || cfg.seed_sites == 0 {
        return Err(LeastError::InvalidConfig(format!(
            "need at least one seed and one target site, got {} sites / {} seeds",
            cfg.sites, cfg.seed_sites
        )));
    }
    let labeled_total = cfg.labeled_pages + cfg.validation_pages;
    let sigma = cfg.preset.select_fraction();
    let n_tuples = (cfg.pages_per_site as f64 / sigma).round().max(1.0) as usize;
    let schema = VerticalSchema::by_name(&cfg.vertical, n_tuples)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let specs: Vec<AttributeSpec> = schema.all_specs().cloned().collect();
    let relation = generate_relation(n_tuples, &specs, &mut rng);

    let mut sites = Vec::new();
    let mut site_ids = Vec::new();
    for i in 0..cfg.sites {
        let website_id = format!("site-{i:02}");
        let template = SiteTemplate::random(&mut rng);
        let mut projected: Vec<String> = schema.targets.iter().map(|s| s.name.clone()).collect();
        for e in &schema.extras {
            if rng.gen_bool(0.6) {
                projected.push(e.name.clone());
            }
        }
        let site_cfg = SiteGenConfig {
            website_id: website_id.clone(),
            select_fraction: sigma,
            projected_attributes: projected,
            noise: cfg.noise,
            template,
            seed: rng.gen(),
        };
        let site = render_website(&relation, &schema, &site_cfg)?;
        if site.pages.len() < labeled_total && i < cfg.seed_sites {
            return Err(LeastError::InsufficientLabeledPages {
                website: website_id,
                available: site.pages.len(),
                required: labeled_total,
            });
        }
        site_ids.push(website_id);
        sites.push(site);
    }

    let seed_sites: Vec<String> = site_ids[..cfg.seed_sites].to_vec();
    let target_sites: Vec<String> = site_ids[cfg.seed_sites..].to_vec();
    let mut human_labels = Vec::new();
    for site in &sites[..cfg.seed_sites] {
        let mut idx: Vec<usize> = (0..site.pages.len()).collect();
        idx.shuffle(&mut rng);
        let mut chosen: Vec<usize> = idx.into_iter().take(labeled_total).collect();
        chosen.sort_unstable();
        for i in chosen {
            let p = &site.pages[i];
            for t in &p.truth {
                human_labels.push(LabelRecord::new(p.page_id.clone(), t.xpath.clone(), t.attribute.clone()));
            }
        }
    }
    Ok(SyntheticVertical {
        config: cfg.clone(),
        attributes: schema.attribute_set(),
        relation,
        sites,
        seed_sites,
        target_sites,
        human_labels,
    })
}

/// Render a vertical and write it under `out`.
pub fn generate_vertical(cfg: &VerticalConfig, out: &Path) -> Result<SyntheticVertical> {
    let v = build_vertical(cfg)?;
    v.write(out)?;
    Ok(v)
}
