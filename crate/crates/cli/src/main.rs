use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use least_core::corpus::{apply_labels, load_pages, read_jsonl, unlabeled_nodes, write_jsonl, LabelRecord, PageStore};
use least_core::evaluation::{evaluate, extract_page, ground_truth, ExtractionResult, SplitMode};
use least_core::experiment::{median, run_arm, Arm, PreparedVertical};
use least_core::node_classifier::{load_checkpoint, save_checkpoint, Featurizer};
use least_core::self_training::{featurize_store, run_least, LeastConfig, TrainingInput};
use least_core::synth_vertical::{generate_vertical, NoiseConfig, Preset, VerticalConfig};
use least_core::weak_supervision::{
    build_site_relations, default_labeling_functions, infer_overlap_rules, DistantLabeler, DEFAULT_MIN_OVERLAP,
};
use least_core::{AttributeSet, LeastError};

#[derive(Parser)]
#[command(name = "least", version, about = "Attribute extraction from templated HTML pages with few labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a vertical directory and optional label file.
    Ingest(IngestArgs),
    /// Render a synthetic vertical with ground truth and seed-site labels.
    Synth(SynthArgs),
    /// Emit generative pseudo-labels for unlabeled pages.
    PseudoLabel(PseudoLabelArgs),
    /// Run self-training and write the final student checkpoint.
    Train(TrainArgs),
    /// Extract top-1 attribute values from pages with a checkpoint.
    Extract(ExtractArgs),
    /// Score extractions against ground truth.
    Eval(EvalArgs),
    /// Paired baseline, self-training and ablation comparison on synthetic verticals.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Directory holding one subdirectory of HTML pages per website.
    #[arg(long)]
    vertical_dir: PathBuf,
    /// JSON-lines human labels.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Comma-separated attribute names; defaults to the synth manifest or the label file.
    #[arg(long, value_delimiter = ',')]
    attributes: Option<Vec<String>>,
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "movie")]
    vertical: String,
    #[arg(long, default_value = "dense")]
    preset: String,
    #[arg(long, default_value_t = 5)]
    sites: usize,
    #[arg(long, default_value_t = 2)]
    seed_sites: usize,
    #[arg(long, default_value_t = 9)]
    labeled_pages: usize,
    #[arg(long, default_value_t = 200)]
    pages_per_site: usize,
    /// Disable nulls, corrupted values and extraneous attributes.
    #[arg(long)]
    no_noise: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PseudoLabelArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = DEFAULT_MIN_OVERLAP)]
    min_overlap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// TOML file with LeastConfig keys; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSON-lines iteration reports.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value = "model.json")]
    checkpoint_out: PathBuf,
    /// JSON-lines final page weights.
    #[arg(long)]
    dump_weights: Option<PathBuf>,
    /// JSON audit of nodes added per iteration.
    #[arg(long)]
    audit: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    refresh_pseudo_labels: bool,
    /// Websites whose pages never enter the unlabeled pool.
    #[arg(long, value_delimiter = ',')]
    exclude_sites: Vec<String>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long, alias = "checkpoint-in")]
    checkpoint: PathBuf,
    /// Vertical directory of pages to extract from.
    #[arg(long)]
    pages: PathBuf,
    /// Restrict extraction to these websites.
    #[arg(long, value_delimiter = ',')]
    sites: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Always emit the top-1 node, even when NONE is more likely.
    #[arg(long)]
    no_abstain: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// JSON-lines extraction results.
    #[arg(long)]
    pred: PathBuf,
    /// JSON-lines ground truth with text, or a directory of such files.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "movie")]
    vertical: String,
    #[arg(long, default_value = "dense")]
    preset: String,
    #[arg(long, default_value = "zero_shot")]
    mode: String,
    #[arg(long, default_value_t = 100)]
    held_out_per_seed: usize,
    /// Number of seeds, starting at 0.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    no_abstain: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .chain()
                .find_map(|c| c.downcast_ref::<LeastError>())
                .is_some_and(LeastError::is_validation);
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => synth(a),
        Command::PseudoLabel(a) => pseudo_label(a),
        Command::Train(a) => train(a),
        Command::Extract(a) => extract(a),
        Command::Eval(a) => eval(a),
        Command::Experiment(a) => experiment(a),
    }
}

/// Explicit list, else the manifest written by `synth`, else label-file order.
fn resolve_attributes(args: &CorpusArgs, records: &[LabelRecord]) -> Result<AttributeSet> {
    if let Some(names) = &args.attributes {
        return Ok(AttributeSet::new(names.iter().cloned())?);
    }
    let dir = &args.vertical_dir;
    for candidate in [dir.join("manifest.json"), dir.parent().map(|p| p.join("manifest.json")).unwrap_or_default()] {
        if candidate.is_file() {
            let text = fs::read_to_string(&candidate).with_context(|| format!("reading {}", candidate.display()))?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(LeastError::from)?;
            if let Some(list) = v.get("attributes").and_then(|a| a.as_array()) {
                let names = list.iter().filter_map(|x| x.as_str().map(String::from));
                return Ok(AttributeSet::new(names)?);
            }
        }
    }
    let mut seen = Vec::new();
    for r in records {
        if r.attribute != "NONE" && !seen.contains(&r.attribute) {
            seen.push(r.attribute.clone());
        }
    }
    if seen.is_empty() {
        return Err(LeastError::InvalidConfig("no attributes given and none found in manifest or labels".into()).into());
    }
    Ok(AttributeSet::new(seen)?)
}

struct Loaded {
    store: PageStore,
    records: Vec<LabelRecord>,
    attrs: AttributeSet,
}

fn load(args: &CorpusArgs) -> Result<Loaded> {
    let store = load_pages(&args.vertical_dir)?;
    let records = match &args.labels {
        Some(p) => read_jsonl::<LabelRecord>(p, "label file")?,
        None => Vec::new(),
    };
    let attrs = resolve_attributes(args, &records)?;
    Ok(Loaded { store, records, attrs })
}

fn print_json(v: &serde_json::Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v)?;
    writeln!(out)?;
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let l = load(&a.corpus)?;
    let (labeled, labeled_pages) = apply_labels(&l.store, &l.records, &l.attrs)?;
    let nodes: usize = l.store.pages().iter().map(|p| p.nodes.len()).sum();
    print_json(&serde_json::json!({
        "pages": l.store.len(),
        "nodes": nodes,
        "websites": l.store.websites(),
        "attributes": l.attrs.attributes(),
        "labeled_pages": labeled_pages.len(),
        "labeled_nodes": labeled.len(),
    }))
}

fn synth(a: SynthArgs) -> Result<()> {
    let preset: Preset = a.preset.parse()?;
    let cfg = VerticalConfig {
        vertical: a.vertical,
        preset,
        sites: a.sites,
        seed_sites: a.seed_sites,
        labeled_pages: a.labeled_pages,
        validation_pages: 0,
        pages_per_site: a.pages_per_site,
        noise: if a.no_noise { NoiseConfig::none() } else { NoiseConfig::default() },
        seed: a.seed,
    };
    let v = generate_vertical(&cfg, &a.out)?;
    print_json(&serde_json::json!({
        "vertical_dir": a.out.join(&cfg.vertical),
        "labels": a.out.join("labels.jsonl"),
        "truth": a.out.join("truth"),
        "pages": v.sites.iter().map(|s| s.pages.len()).sum::<usize>(),
        "seed_sites": v.seed_sites,
        "target_sites": v.target_sites,
    }))
}

fn pseudo_label(a: PseudoLabelArgs) -> Result<()> {
    let l = load(&a.corpus)?;
    let (labeled, labeled_pages) = apply_labels(&l.store, &l.records, &l.attrs)?;
    let seeds: Vec<String> = labeled
        .iter()
        .map(|s| l.store.website_of(s.node).to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let functions = default_labeling_functions();
    let rules = infer_overlap_rules(&l.store, &seeds, &labeled, &l.attrs, a.min_overlap);
    let relations = build_site_relations(&l.store, &labeled, &functions, &rules, &seeds, &l.attrs);
    let labeler = DistantLabeler::new(&relations);
    let mut out = Vec::new();
    for (idx, page) in l.store.pages().iter().enumerate() {
        if labeled_pages.contains(&idx) {
            continue;
        }
        for (node, label, votes) in labeler.label_page(page) {
            let n = &page.nodes[node];
            out.push(LabelRecord {
                text: Some(n.text.clone()),
                source: Some("generative".into()),
                votes: Some(votes),
                ..LabelRecord::new(page.page_id.clone(), n.xpath.clone(), l.attrs.name(label))
            });
        }
    }
    write_jsonl(&a.out, &out)?;
    eprintln!("{} pseudo-labels from {} overlap rules", out.len(), rules.len());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => LeastConfig::load(p)?,
        None => LeastConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.refresh_pseudo_labels {
        cfg.refresh_pseudo_labels = true;
    }
    let l = load(&a.corpus)?;
    let (labeled, labeled_pages) = apply_labels(&l.store, &l.records, &l.attrs)?;
    let excluded: BTreeSet<&str> = a.exclude_sites.iter().map(String::as_str).collect();
    let pool = unlabeled_nodes(&l.store, &labeled_pages, |p| {
        !excluded.contains(l.store.page(p).website_id.as_str())
    });
    let features = featurize_store(&l.store, &Featurizer::new(cfg.feature_dim));
    let input = TrainingInput {
        store: &l.store,
        features: &features,
        labeled: &labeled,
        pool: &pool,
        attrs: &l.attrs,
    };
    let run = run_least(&cfg, &input, &default_labeling_functions())?;
    if let Some(p) = &a.report {
        write_jsonl(p, &run.reports)?;
    }
    if let Some(p) = &a.dump_weights {
        write_jsonl(p, &run.weights)?;
    }
    if let Some(p) = &a.audit {
        fs::write(p, serde_json::to_vec_pretty(&run.audit)?).with_context(|| format!("writing {}", p.display()))?;
    }
    save_checkpoint(&run.student, &a.checkpoint_out)?;
    println!("{}", a.checkpoint_out.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let model = load_checkpoint(&a.checkpoint)?;
    let names: Vec<String> = model.class_names[..model.class_names.len().saturating_sub(1)].to_vec();
    let attrs = AttributeSet::new(names)?;
    let store = load_pages(&a.pages)?;
    let featurizer = Featurizer::new(model.dim);
    let results: Vec<ExtractionResult> = store
        .pages()
        .iter()
        .filter(|p| a.sites.is_empty() || a.sites.contains(&p.website_id))
        .map(|p| extract_page(&model, &featurizer, p, &attrs, !a.no_abstain))
        .collect();
    write_jsonl(&a.out, &results)?;
    eprintln!("{} pages extracted", results.len());
    Ok(())
}

fn truth_records(path: &Path) -> Result<Vec<LabelRecord>> {
    if !path.is_dir() {
        return Ok(read_jsonl(path, "ground truth")?);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        out.extend(read_jsonl::<LabelRecord>(&f, "ground truth")?);
    }
    Ok(out)
}

fn eval(a: EvalArgs) -> Result<()> {
    let results: Vec<ExtractionResult> = read_jsonl(&a.pred, "predictions")?;
    let truth = ground_truth(&truth_records(&a.truth)?, None)?;
    let pages: BTreeSet<&str> = results.iter().map(|r| r.page_id.as_str()).collect();
    // Score only pages that were extracted, so one truth directory serves any split.
    let truth: least_core::evaluation::GroundTruth =
        truth.into_iter().filter(|(p, _)| pages.contains(p.as_str())).collect();
    let mut attributes: BTreeSet<String> = truth.values().flat_map(|m| m.keys().cloned()).collect();
    for r in &results {
        attributes.extend(r.predictions.keys().cloned());
    }
    let attributes: Vec<String> = attributes.into_iter().collect();
    let report = evaluate(&results, &truth, &attributes);
    let json = serde_json::to_value(&report)?;
    if let Some(p) = &a.report {
        fs::write(p, serde_json::to_vec_pretty(&json)?).with_context(|| format!("writing {}", p.display()))?;
    }
    print_json(&json)
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let base = match &a.config {
        Some(p) => LeastConfig::load(p)?,
        None => LeastConfig::default(),
    };
    let mode: SplitMode = a.mode.parse()?;
    let preset: Preset = a.preset.parse()?;
    let mut scores: Vec<(Arm, Vec<f64>)> = Arm::ALL.iter().map(|&arm| (arm, Vec::new())).collect();
    for seed in 0..a.seeds {
        let vcfg = VerticalConfig {
            vertical: a.vertical.clone(),
            preset,
            seed,
            ..Default::default()
        };
        let prepared = PreparedVertical::new(&vcfg, &Featurizer::new(base.feature_dim))?;
        let cfg = LeastConfig { seed, ..base.clone() };
        let mut row = serde_json::Map::new();
        row.insert("seed".into(), seed.into());
        for (arm, list) in scores.iter_mut() {
            let out = run_arm(&prepared, mode, a.held_out_per_seed, *arm, &cfg, !a.no_abstain)?;
            row.insert(arm.name().into(), out.report.macro_f1.into());
            list.push(out.report.macro_f1);
        }
        println!("{}", serde_json::Value::Object(row));
    }
    let medians: serde_json::Map<String, serde_json::Value> = scores
        .iter()
        .map(|(arm, v)| (arm.name().to_string(), median(v).into()))
        .collect();
    print_json(&serde_json::json!({ "median_macro_f1": medians }))
}
