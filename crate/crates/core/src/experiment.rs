//! Paired experiments on synthetic verticals: the teacher-only baseline,
//! the full pipeline and its ablations, scored on the same split.

use serde::{Deserialize, Serialize};

use crate::corpus::{apply_labels, LabeledSample, PageStore};
use crate::error::Result;
use crate::evaluation::{evaluate_pages, ground_truth, split_experiment, EvalReport, GroundTruth, SplitMode};
use crate::labels::AttributeSet;
use crate::node_classifier::{FeatureVector, Featurizer};
use crate::self_training::{featurize_store, run_least, train_teacher_only, LeastConfig, LeastRun, TrainingInput};
use crate::synth_vertical::{build_vertical, SyntheticVertical, VerticalConfig};
use crate::weak_supervision::default_labeling_functions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// Human labels only.
    TeacherOnly,
    Least,
    /// Teacher-only pseudo-labels.
    NoGenerative,
    /// Every sample weight forced to 1.
    UniformWeights,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::TeacherOnly, Arm::Least, Arm::NoGenerative, Arm::UniformWeights];

    pub fn name(self) -> &'static str {
        match self {
            Arm::TeacherOnly => "teacher_only",
            Arm::Least => "least",
            Arm::NoGenerative => "no_generative",
            Arm::UniformWeights => "uniform_weights",
        }
    }

    fn configure(self, base: &LeastConfig) -> LeastConfig {
        let mut cfg = base.clone();
        match self {
            Arm::NoGenerative => cfg.use_generative = false,
            Arm::UniformWeights => cfg.uniform_weights = true,
            Arm::TeacherOnly | Arm::Least => {}
        }
        cfg
    }
}

/// A rendered vertical with parsed pages, node features and ground truth.
pub struct PreparedVertical {
    pub vertical: SyntheticVertical,
    pub store: PageStore,
    pub features: Vec<Vec<FeatureVector>>,
    pub labeled: Vec<LabeledSample>,
    pub truth: GroundTruth,
}

impl PreparedVertical {
    pub fn new(cfg: &VerticalConfig, featurizer: &Featurizer) -> Result<Self> {
        let vertical = build_vertical(cfg)?;
        let store = vertical.page_store()?;
        let (labeled, _) = apply_labels(&store, &vertical.human_labels, &vertical.attributes)?;
        let truth = ground_truth(&vertical.all_truth(), None)?;
        let features = featurize_store(&store, featurizer);
        Ok(PreparedVertical {
            vertical,
            store,
            features,
            labeled,
            truth,
        })
    }

    pub fn attributes(&self) -> &AttributeSet {
        &self.vertical.attributes
    }
}

#[derive(Debug, Clone)]
pub struct ArmOutcome {
    pub arm: Arm,
    pub report: EvalReport,
    pub run: Option<LeastRun>,
}

/// Train one arm on the split and score it on the split's test pages.
pub fn run_arm(
    prepared: &PreparedVertical,
    mode: SplitMode,
    held_out_per_seed: usize,
    arm: Arm,
    base: &LeastConfig,
    abstain: bool,
) -> Result<ArmOutcome> {
    let v = &prepared.vertical;
    let split = split_experiment(
        &prepared.store,
        &prepared.labeled,
        mode,
        &v.seed_sites,
        &v.target_sites,
        held_out_per_seed,
        base.seed,
    )?;
    let input = TrainingInput {
        store: &prepared.store,
        features: &prepared.features,
        labeled: &split.labeled,
        pool: &split.pool,
        attrs: prepared.attributes(),
    };
    let cfg = arm.configure(base);
    let (model, run) = match arm {
        Arm::TeacherOnly => (train_teacher_only(&cfg, &input)?, None),
        _ => {
            let run = run_least(&cfg, &input, &default_labeling_functions())?;
            (run.student.clone(), Some(run))
        }
    };
    let report = evaluate_pages(
        &model,
        &prepared.store,
        &prepared.features,
        &split.test_pages,
        &prepared.truth,
        prepared.attributes(),
        abstain,
    );
    Ok(ArmOutcome { arm, report, run })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
