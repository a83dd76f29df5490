use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use least_core::corpus::{apply_labels, LabelRecord, NodeKey, PageStore, ValidationEntry, ValidationSet};
use least_core::dom_model::{normalize_text, DetailPage, DomNodeRecord};
use least_core::evaluation::SplitMode;
use least_core::experiment::{median, run_arm, Arm, PreparedVertical};
use least_core::node_classifier::{
    cross_entropy, noise_robust_value, save_checkpoint, ClassifierState, Example, FeatureVector, Featurizer,
    NoiseRobustLoss,
};
use least_core::reweighting::{compute_page_weight, PageFlags, PageSignature, ReweightConfig};
use least_core::self_training::{beta_schedule, fuse_pseudo_label, k_schedule, LeastConfig};
use least_core::synth_vertical::{build_vertical, NoiseConfig, Preset, VerticalConfig};
use least_core::weak_supervision::{assert_sound, default_labeling_functions, DistantLabeler, SiteRelation};
use least_core::{corpus::LabelSource, Label};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 5;
const HELD_OUT_PER_SEED: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn experiment_config() -> LeastConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.toml");
    LeastConfig::load(&path).expect("configs/synthetic.toml")
}

fn schedules() -> Outcome {
    let cfg = LeastConfig::default();
    let b1 = beta_schedule(1, cfg.beta0, &cfg);
    let b2 = beta_schedule(2, b1, &cfg);
    let k1 = k_schedule(1, cfg.k0, &cfg);
    let k2 = k_schedule(2, k1, &cfg);
    let expected = [0.5632120558828557, 0.5496785275591944, 0.9632120558828557, 0.9496785275591945];
    let got = [b1, b2, k1, k2];
    let err = got.iter().zip(expected).map(|(g, e)| (g - e).abs()).fold(0.0, f64::max);
    outcome(err <= 1e-9, format!("beta {b1:.7} {b2:.7}, k {k1:.7} {k2:.7}, max error {err:.1e}"))
}

fn random_features(rng: &mut ChaCha8Rng, dim: usize) -> FeatureVector {
    let n = rng.gen_range(1..=6);
    let raw = (0..n).map(|_| (rng.gen_range(0..dim as u32), rng.gen_range(-1.0..1.0))).collect();
    FeatureVector::from_unsorted(raw)
}

/// Mean over the batch of `c · L_ua` with the uniform draws held fixed.
fn weighted_student_loss(model: &ClassifierState, batch: &[(FeatureVector, Label, f64, f64)], k: f64) -> f64 {
    batch
        .iter()
        .map(|(fv, target, c, u)| c * noise_robust_value(cross_entropy(&model.predict(fv), *target), *c, k, *u))
        .sum::<f64>()
        / batch.len() as f64
}

fn loss_and_gradient() -> Outcome {
    let value = noise_robust_value(0.5, 1.0, 1.0, 0.2);
    let expected = 0.5 + std::f64::consts::E * 0.2;
    let value_ok = (value - expected).abs() <= 1e-9;

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (dim, classes) = (24, 4);
    let names = (0..classes).map(|c| format!("c{c}")).collect();
    let mut model = ClassifierState::zeros(dim, names, 0);
    model.weights.iter_mut().for_each(|w| *w = rng.gen_range(-0.5..0.5));
    model.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    let k = rng.gen_range(0.9..1.0);
    let scaler = NoiseRobustLoss::new(k, 0);
    let batch: Vec<(FeatureVector, Label, f64, f64)> = (0..8)
        .map(|_| {
            (
                random_features(&mut rng, dim),
                Label(rng.gen_range(0..classes)),
                rng.gen_range(0.01..1.0),
                rng.gen::<f64>(),
            )
        })
        .collect();
    let examples: Vec<Example<'_>> = batch
        .iter()
        .map(|(fv, target, c, _)| Example { features: fv, target: *target, scale: scaler.gradient_scale(*c) })
        .collect();
    let grad = model.batch_gradient(&examples);
    let touched: Vec<usize> = batch
        .iter()
        .flat_map(|(fv, ..)| fv.entries.iter().map(|&(i, _)| i as usize))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for probe in 0..10 {
        let class = rng.gen_range(0..classes);
        let (analytic, slot) = if probe % 3 == 0 {
            (grad.bias[class], None)
        } else {
            let i = class * dim + touched[rng.gen_range(0..touched.len())];
            (grad.weights[i], Some(i))
        };
        let shifted = |delta: f64| {
            let mut m = model.clone();
            match slot {
                Some(i) => m.weights[i] += delta,
                None => m.bias[class] += delta,
            }
            weighted_student_loss(&m, &batch, k)
        };
        let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < 1e-12 { 0.0 } else { (analytic - numeric).abs() / scale };
        worst = worst.max(rel);
    }
    outcome(
        value_ok && worst <= 1e-5,
        format!("loss {value:.12} (expected {expected:.12}), worst relative gradient error {worst:.1e}"),
    )
}

const VOCAB: [&str; 5] = ["alpha", "beta", "gamma", "delta", "omega"];

fn micro_page(rng: &mut ChaCha8Rng, id: usize, site: usize) -> DetailPage {
    let n = rng.gen_range(1..=20);
    let nodes = (0..n)
        .map(|i| DomNodeRecord {
            node_id: i,
            xpath: format!("/html[1]/body[1]/p[{}]", i + 1),
            tag: "p".into(),
            text: VOCAB[rng.gen_range(0..VOCAB.len())].to_string(),
            rel_position: i as f64 / n as f64,
        })
        .collect();
    DetailPage { page_id: format!("s{site}/p{id}"), website_id: format!("s{site}"), nodes }
}

fn random_distribution(rng: &mut ChaCha8Rng, classes: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..classes).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

/// Independent weight computation straight from the definitions.
fn brute_force_weight(
    page: usize,
    pages: &[DetailPage],
    entries: &[ValidationEntry],
    predictions: &[Vec<Label>],
    flags: PageFlags,
    cfg: &ReweightConfig,
) -> Option<f64> {
    let clamp = |x: f64| x.max(cfg.weight_floor).min(1.0);
    if entries.is_empty() {
        return None;
    }
    if flags.is_human_labeled_seed_page {
        return Some(1.0);
    }
    if flags.is_seed_site {
        let site = &pages[page].website_id;
        let on_site: Vec<&ValidationEntry> =
            entries.iter().filter(|e| &pages[e.node.page].website_id == site).collect();
        if on_site.is_empty() {
            return None;
        }
        let correct = on_site.iter().filter(|e| e.hard == e.human).count();
        return Some(clamp(correct as f64 / on_site.len() as f64));
    }
    let signature = |p: usize| -> BTreeSet<(usize, String)> {
        pages[p].nodes.iter().zip(&predictions[p]).map(|(n, l)| (l.0, n.text.clone())).collect()
    };
    let target = signature(page);
    let validation_pages: BTreeSet<usize> = entries.iter().map(|e| e.node.page).collect();
    let mut best = (usize::MAX, -1.0);
    for &vp in &validation_pages {
        let other = signature(vp);
        let inter = target.intersection(&other).count() as f64;
        let union = target.union(&other).count() as f64;
        let jaccard = if union == 0.0 { 0.0 } else { inter / union };
        let overlap = if jaccard > cfg.epsilon { jaccard } else { cfg.epsilon };
        if overlap > best.1 {
            best = (vp, overlap);
        }
    }
    let mut mass = 0.0;
    let mut n = 0usize;
    for e in entries.iter().filter(|e| e.node.page == best.0) {
        mass += e.soft[e.human.0];
        n += 1;
    }
    Some(clamp(clamp(mass / n as f64) * best.1))
}

fn reweighting_oracle() -> Outcome {
    let cfg = ReweightConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let classes = 3;
    let mut mismatches = 0;
    let mut cases = BTreeMap::new();
    for _ in 0..100 {
        let sites = rng.gen_range(1..=3);
        let n_pages = rng.gen_range(2..=10);
        let pages: Vec<DetailPage> = (0..n_pages)
            .map(|i| {
                let site = rng.gen_range(0..sites);
                micro_page(&mut rng, i, site)
            })
            .collect();
        let store = PageStore::from_pages(pages.clone()).unwrap();
        let seed_sites: BTreeSet<String> =
            (0..sites).filter(|_| rng.gen_bool(0.5)).map(|s| format!("s{s}")).collect();
        let n_validation = rng.gen_range(0..=n_pages.min(5));
        let mut order: Vec<usize> = (0..n_pages).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
        let mut entries = Vec::new();
        for &p in &order[..n_validation] {
            for node in 0..pages[p].nodes.len() {
                entries.push(ValidationEntry {
                    node: NodeKey { page: p, node },
                    human: Label(rng.gen_range(0..classes)),
                    soft: random_distribution(&mut rng, classes),
                    hard: Label(rng.gen_range(0..classes)),
                });
            }
        }
        let predictions: Vec<Vec<Label>> =
            pages.iter().map(|p| p.nodes.iter().map(|_| Label(rng.gen_range(0..classes))).collect()).collect();
        let signatures: BTreeMap<usize, PageSignature> = pages
            .iter()
            .enumerate()
            .map(|(i, p)| (i, PageSignature::from_predictions(p, &predictions[i])))
            .collect();
        let v = ValidationSet { entries: entries.clone() };
        for page in 0..n_pages {
            let is_seed_site = seed_sites.contains(&pages[page].website_id);
            let flags = PageFlags { is_human_labeled_seed_page: is_seed_site && rng.gen_bool(0.3), is_seed_site };
            let got = compute_page_weight(page, &store, &v, &signatures, flags, &cfg).ok();
            let want = brute_force_weight(page, &pages, &entries, &predictions, flags, &cfg);
            if let Some(w) = &got {
                *cases.entry(format!("{:?}", w.case)).or_insert(0) += 1;
            }
            if got.map(|w| w.weight) != want {
                mismatches += 1;
            }
        }
    }
    let sig = PageSignature { pairs: [(Label(0), "x".to_string()), (Label(1), "y".to_string())].into() };
    let disjoint = PageSignature { pairs: [(Label(0), "z".to_string())].into() };
    let same = least_core::reweighting::page_overlap(&sig, &sig, &cfg);
    let apart = least_core::reweighting::page_overlap(&sig, &disjoint, &cfg);
    outcome(
        mismatches == 0 && same == 1.0 && apart == 0.0005,
        format!("{mismatches} mismatches over 100 corpora (cases {cases:?}), overlap(s,s)={same}, disjoint={apart}"),
    )
}

fn soundness() -> Outcome {
    let mut checked = 0;
    let mut failures = Vec::new();
    for vertical in ["movie", "nba-player", "auto", "university"] {
        let cfg = VerticalConfig { vertical: vertical.into(), ..Default::default() };
        let v = build_vertical(&cfg).unwrap();
        let store = v.page_store().unwrap();
        // Label the first pages of every site, not only the seed sites.
        let records: Vec<LabelRecord> = v
            .sites
            .iter()
            .flat_map(|site| {
                let keep: BTreeSet<&str> =
                    site.pages.iter().take(cfg.labeled_pages).map(|p| p.page_id.as_str()).collect();
                v.truth_records(site).into_iter().filter(move |r| keep.contains(r.page.as_str()))
            })
            .collect();
        let (labeled, pages) = apply_labels(&store, &records, &v.attributes).unwrap();
        checked += pages.len();
        if let Err(e) = assert_sound(&store, &labeled, &default_labeling_functions(), &v.attributes) {
            failures.push(format!("{vertical}: {e}"));
        }
    }
    outcome(failures.is_empty(), format!("{checked} labeled pages across 4 verticals x 5 sites {failures:?}"))
}

fn fusion_statistics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let soft = [0.2, 0.5, 0.3];
    let draws = 10_000;
    let generative = (0..draws)
        .filter(|_| fuse_pseudo_label(Some(Label(0)), &soft, 0.6, &mut rng).2 == LabelSource::Generative)
        .count();
    let fraction = generative as f64 / draws as f64;
    outcome((0.585..=0.615).contains(&fraction), format!("generative fraction {fraction:.4}"))
}

fn zero_noise_round_trip() -> Outcome {
    let cfg = VerticalConfig { noise: NoiseConfig::none(), ..Default::default() };
    let v = build_vertical(&cfg).unwrap();
    let store = v.page_store().unwrap();
    let attrs = &v.attributes;
    let relations: Vec<SiteRelation> = v
        .sites
        .iter()
        .map(|site| {
            let mut rows: BTreeMap<Label, BTreeSet<String>> = BTreeMap::new();
            for name in attrs.attributes() {
                let values = site.relation.values_of(name).iter().map(|t| normalize_text(t)).collect();
                rows.insert(attrs.label(name).unwrap(), values);
            }
            SiteRelation { website_id: site.website_id.clone(), rows }
        })
        .collect();
    let labeler = DistantLabeler::new(&relations);
    let human_pages: BTreeSet<&str> = v.human_labels.iter().map(|r| r.page.as_str()).collect();
    let (mut labeled, mut correct) = (0usize, 0usize);
    for site in &v.sites {
        for p in site.pages.iter().filter(|p| !human_pages.contains(p.page_id.as_str())) {
            let page = store.page(store.index_of(&p.page_id).unwrap());
            let truth: BTreeSet<(&str, &str)> =
                p.truth.iter().map(|t| (t.xpath.as_str(), t.attribute.as_str())).collect();
            for (node, label, _) in labeler.label_page(page) {
                labeled += 1;
                correct += usize::from(truth.contains(&(page.nodes[node].xpath.as_str(), attrs.name(label))));
            }
        }
    }
    let precision = correct as f64 / labeled.max(1) as f64;
    outcome(labeled > 0 && correct == labeled, format!("precision {precision:.4} over {labeled} labeled nodes"))
}

struct ExperimentResults {
    zero_shot: BTreeMap<&'static str, Vec<f64>>,
    in_domain: BTreeMap<&'static str, Vec<f64>>,
    zero_shot_time: BTreeMap<&'static str, Duration>,
    in_domain_time: Duration,
    audits_ok: Vec<bool>,
    iterations: Vec<usize>,
    max_added: usize,
}

fn run_experiments(base: &LeastConfig) -> ExperimentResults {
    let mut r = ExperimentResults {
        zero_shot: BTreeMap::new(),
        in_domain: BTreeMap::new(),
        zero_shot_time: BTreeMap::new(),
        in_domain_time: Duration::ZERO,
        audits_ok: Vec::new(),
        iterations: Vec::new(),
        max_added: 0,
    };
    for seed in 0..SEEDS {
        let vcfg = VerticalConfig { preset: Preset::Dense, seed, ..Default::default() };
        let prepared = PreparedVertical::new(&vcfg, &Featurizer::new(base.feature_dim)).unwrap();
        let cfg = LeastConfig { seed, ..base.clone() };
        for arm in Arm::ALL {
            let start = Instant::now();
            let out = run_arm(&prepared, SplitMode::ZeroShot, HELD_OUT_PER_SEED, arm, &cfg, true).unwrap();
            *r.zero_shot_time.entry(arm.name()).or_default() += start.elapsed();
            r.zero_shot.entry(arm.name()).or_default().push(out.report.macro_f1);
            if let (Arm::Least, Some(run)) = (arm, &out.run) {
                r.audits_ok.push(run.audit.without_replacement(cfg.max_new_samples));
                r.iterations.push(run.audit.entries.len());
                r.max_added = r.max_added.max(run.audit.entries.iter().map(|e| e.added.len()).max().unwrap_or(0));
            }
        }
        for arm in [Arm::TeacherOnly, Arm::Least] {
            let start = Instant::now();
            let out = run_arm(&prepared, SplitMode::InDomain, HELD_OUT_PER_SEED, arm, &cfg, true).unwrap();
            r.in_domain_time += start.elapsed();
            r.in_domain.entry(arm.name()).or_default().push(out.report.macro_f1);
        }
    }
    r
}

fn fmt_scores(scores: &[f64]) -> String {
    scores.iter().map(|s| format!("{s:.1}")).collect::<Vec<_>>().join(",")
}

fn end_to_end(r: &ExperimentResults) -> Outcome {
    let least = median(&r.zero_shot["least"]);
    let teacher = median(&r.zero_shot["teacher_only"]);
    let time = r.zero_shot_time["least"] + r.zero_shot_time["teacher_only"];
    outcome(
        least - teacher >= 5.0 && time < Duration::from_secs(300),
        format!(
            "median zero-shot macro-F1 least {least:.2} [{}] vs teacher-only {teacher:.2} [{}], gain {:.2}, {:.1}s",
            fmt_scores(&r.zero_shot["least"]),
            fmt_scores(&r.zero_shot["teacher_only"]),
            least - teacher,
            time.as_secs_f64()
        ),
    )
}

fn ablations(r: &ExperimentResults) -> Outcome {
    let least = median(&r.zero_shot["least"]);
    let no_gen = median(&r.zero_shot["no_generative"]);
    let uniform = median(&r.zero_shot["uniform_weights"]);
    let time: Duration = r.zero_shot_time.values().sum();
    outcome(
        least - no_gen >= 2.0 && uniform <= least && time < Duration::from_secs(900),
        format!(
            "least {least:.2}, no generative labeler {no_gen:.2} (drop {:.2}), uniform weights {uniform:.2} (drop {:.2}), {:.1}s",
            least - no_gen,
            least - uniform,
            time.as_secs_f64()
        ),
    )
}

fn in_domain(r: &ExperimentResults) -> Outcome {
    let least = median(&r.in_domain["least"]);
    let teacher = median(&r.in_domain["teacher_only"]);
    outcome(
        least >= teacher && r.in_domain_time < Duration::from_secs(300),
        format!(
            "median in-domain macro-F1 least {least:.2} [{}] vs teacher-only {teacher:.2} [{}], {:.1}s",
            fmt_scores(&r.in_domain["least"]),
            fmt_scores(&r.in_domain["teacher_only"]),
            r.in_domain_time.as_secs_f64()
        ),
    )
}

fn without_replacement(r: &ExperimentResults, cfg: &LeastConfig) -> Outcome {
    let full_runs = r.iterations.iter().all(|&t| t == cfg.iterations);
    outcome(
        full_runs && r.audits_ok.iter().all(|&ok| ok),
        format!(
            "{} runs, iterations {:?}, largest per-iteration addition {} (limit {})",
            r.audits_ok.len(),
            r.iterations,
            r.max_added,
            cfg.max_new_samples
        ),
    )
}

fn determinism(base: &LeastConfig) -> Outcome {
    let vcfg = VerticalConfig { preset: Preset::Dense, seed: 0, ..Default::default() };
    let dir = tempfile::tempdir().unwrap();
    let mut artifacts = Vec::new();
    for run in 0..2 {
        let prepared = PreparedVertical::new(&vcfg, &Featurizer::new(base.feature_dim)).unwrap();
        let out = run_arm(&prepared, SplitMode::ZeroShot, HELD_OUT_PER_SEED, Arm::Least, base, true).unwrap();
        let least = out.run.unwrap();
        let path = dir.path().join(format!("model-{run}.json"));
        save_checkpoint(&least.student, &path).unwrap();
        let checkpoint = std::fs::read(&path).unwrap();
        let reports = serde_json::to_vec(&least.reports).unwrap();
        let eval = serde_json::to_vec(&out.report).unwrap();
        artifacts.push((checkpoint, reports, eval));
    }
    let same = artifacts[0] == artifacts[1];
    outcome(same, format!("checkpoint {} bytes, reports identical: {same}", artifacts[0].0.len()))
}

fn main() -> ExitCode {
    let base = experiment_config();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!("{} criterion {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    record(1, "schedule exactness", schedules());
    record(2, "loss exactness and gradient", loss_and_gradient());
    record(3, "reweighting oracle", reweighting_oracle());
    record(4, "labeling function soundness", soundness());
    record(5, "fusion statistics", fusion_statistics());
    record(6, "zero-noise distant labeling", zero_noise_round_trip());
    let experiments = run_experiments(&base);
    record(7, "zero-shot gain over teacher-only", end_to_end(&experiments));
    record(8, "ablation direction", ablations(&experiments));
    record(9, "in-domain non-regression", in_domain(&experiments));
    record(10, "sampling without replacement", without_replacement(&experiments, &base));
    record(11, "determinism", determinism(&base));
    let failed: Vec<usize> = results.iter().filter(|(_, _, o)| !o.pass).map(|(n, ..)| *n).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
