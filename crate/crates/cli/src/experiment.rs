//! Experiment orchestration: dataset acquisition, detector and geometry
//! training, target sampling, the editing/injection attack protocols, and
//! the constrained-random baseline.
//!
//! All randomness derives from the master seed, so reruns with an
//! identical config produce byte-identical reports. Wall-clock timing is
//! kept out of the serialized report for the same reason.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use otcloak_core::attack::{
    editing_attack_with_candidates, injection_attack_with_candidates, mine_candidates,
    AttackConfig, AttackTrace, Outcome,
};
use otcloak_core::cost_model::OtGeometry;
use otcloak_core::datagen::{generate, GenParams};
use otcloak_core::detector::{
    train_detector, Detector, DetectorModel, DetectorTrainConfig, NearestCentroidDetector,
    OracleDetector, PredictionSet,
};
use otcloak_core::geometry::CloakCandidate;
use otcloak_core::graph::{EdgeEdit, EditSet, Label};
use otcloak_core::training::{train_geometry, EpochStats, TrainConfig};
use otcloak_core::{DirectedSocialGraph, NodeId};

use crate::error::{Error, Result};
use crate::io::load_dataset;

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DatasetConfig {
    /// Named generator preset (cresci-like, twibot-like, botsim-like).
    pub preset: Option<String>,
    /// Explicit generator parameters; overrides `preset`.
    pub gen: Option<GenParams>,
    /// Node/edge files; override both preset and gen.
    pub node_path: Option<PathBuf>,
    pub edge_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    MessagePassing,
    Centroid,
    Oracle,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    pub train: DetectorTrainConfig,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::MessagePassing,
            train: DetectorTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub detector: DetectorConfig,
    pub geometry: TrainConfig,
    pub attack: AttackConfig,
    pub n_targets: usize,
    pub parallel_targets: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            detector: DetectorConfig::default(),
            geometry: TrainConfig::default(),
            attack: AttackConfig::default(),
            n_targets: 50,
            parallel_targets: 1,
            seed: 0,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

impl ExperimentConfig {
    /// Derives every sub-seed from the master seed so one knob controls
    /// all randomness. The echoed config in the report shows the resolved
    /// values.
    pub fn resolved(mut self) -> Self {
        if self.n_targets == 0 {
            self.n_targets = 1;
        }
        self.detector.train.seed = splitmix(self.seed ^ 0x01);
        self.geometry.seed = splitmix(self.seed ^ 0x02);
        self.attack.seed = splitmix(self.seed ^ 0x03);
        if let Some(gen) = self.dataset.gen.as_mut() {
            gen.seed = splitmix(self.seed ^ 0x04);
        }
        self
    }
}

/// A trained victim model of any supported kind.
#[allow(clippy::large_enum_variant)]
pub enum TrainedDetector {
    MessagePassing(DetectorModel),
    Centroid(NearestCentroidDetector),
    Oracle(OracleDetector),
}

impl Detector for TrainedDetector {
    fn predict(&self, g: &DirectedSocialGraph, v: NodeId) -> otcloak_core::Result<Label> {
        match self {
            Self::MessagePassing(m) => m.predict(g, v),
            Self::Centroid(m) => m.predict(g, v),
            Self::Oracle(m) => m.predict(g, v),
        }
    }

    fn predict_all(&self, g: &DirectedSocialGraph) -> otcloak_core::Result<PredictionSet> {
        match self {
            Self::MessagePassing(m) => m.predict_all(g),
            Self::Centroid(m) => m.predict_all(g),
            Self::Oracle(m) => m.predict_all(g),
        }
    }
}

/// Everything a run needs: the graph, the frozen detector with its clean
/// predictions, and the trained OT geometry.
pub struct Artifacts {
    pub graph: DirectedSocialGraph,
    pub detector: TrainedDetector,
    pub predictions: PredictionSet,
    pub geometry: OtGeometry,
    pub geometry_history: Vec<EpochStats>,
    pub detector_clean_accuracy: f64,
}

pub fn acquire_graph(cfg: &ExperimentConfig) -> Result<DirectedSocialGraph> {
    match (&cfg.dataset.node_path, &cfg.dataset.edge_path) {
        (Some(nodes), Some(edges)) => return load_dataset(nodes, edges),
        (None, None) => {}
        _ => {
            return Err(Error::Config(
                "dataset file loading needs both node_path and edge_path".into(),
            ))
        }
    }
    let params = match (&cfg.dataset.gen, &cfg.dataset.preset) {
        (Some(gen), _) => gen.clone(),
        (None, Some(name)) => GenParams::preset(name)
            .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?,
        (None, None) => {
            return Err(Error::Config(
                "dataset needs node/edge paths, a preset, or generator params".into(),
            ))
        }
    };
    let mut params = params;
    params.seed = splitmix(cfg.seed ^ 0x04);
    Ok(generate(&params)?)
}

pub fn train_victim(g: &DirectedSocialGraph, cfg: &DetectorConfig) -> Result<TrainedDetector> {
    Ok(match cfg.kind {
        DetectorKind::MessagePassing => {
            TrainedDetector::MessagePassing(train_detector(g, &cfg.train)?)
        }
        DetectorKind::Centroid => TrainedDetector::Centroid(NearestCentroidDetector::fit(g)?),
        DetectorKind::Oracle => TrainedDetector::Oracle(OracleDetector),
    })
}

/// Builds all run artifacts from a resolved config.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Artifacts> {
    let graph = acquire_graph(cfg)?;
    let detector = train_victim(&graph, &cfg.detector)?;
    let predictions = detector.predict_all(&graph)?;
    let all: Vec<NodeId> = graph.node_ids().collect();
    let correct = all
        .iter()
        .filter(|&&v| predictions.label(v) == graph.label(v))
        .count();
    let detector_clean_accuracy = correct as f64 / all.len().max(1) as f64;
    let (geometry, geometry_history) = train_geometry(&graph, &predictions, &cfg.geometry)?;
    Ok(Artifacts {
        graph,
        detector,
        predictions,
        geometry,
        geometry_history,
        detector_clean_accuracy,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TargetSummary {
    pub target: NodeId,
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub budget_exceeded: usize,
    pub flipped: bool,
    pub baseline_flipped: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EditSemantics {
    /// Editing wipes the target's pre-existing incident edges before adds.
    pub neighborhood_replacement: bool,
    /// Deletes never count against the budget; only adds do.
    pub deletes_counted_in_budget: bool,
}

#[derive(Serialize)]
pub struct ExperimentReport {
    pub mode: String,
    pub config: ExperimentConfig,
    pub detector_clean_accuracy: f64,
    pub n_targets_requested: usize,
    pub n_targets: usize,
    pub targets: Vec<TargetSummary>,
    pub misclassification_rate: f64,
    pub baseline_random_rate: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_human_rate: Option<f64>,
    pub edit_semantics: EditSemantics,
    /// Wall-clock time; excluded from the serialized report so reruns are
    /// byte-identical.
    #[serde(skip)]
    pub timing_seconds: f64,
}

enum Mode {
    Editing,
    Injection,
}

/// Editing protocol: sample correctly classified bots, attack each with
/// the cloak-decoding driver, and compare against the constrained-random
/// baseline.
pub fn run_editing_experiment(
    cfg: &ExperimentConfig,
) -> Result<(ExperimentReport, Vec<Vec<AttackTrace>>)> {
    let cfg = cfg.clone().resolved();
    let mut artifacts = prepare(&cfg)?;
    run_with_artifacts(&cfg, &mut artifacts, Mode::Editing)
}

/// Injection protocol: n_targets independent fresh-bot attacks; only adds
/// are possible.
pub fn run_injection_experiment(
    cfg: &ExperimentConfig,
) -> Result<(ExperimentReport, Vec<Vec<AttackTrace>>)> {
    let cfg = cfg.clone().resolved();
    let mut artifacts = prepare(&cfg)?;
    run_with_artifacts(&cfg, &mut artifacts, Mode::Injection)
}

fn run_with_artifacts(
    cfg: &ExperimentConfig,
    artifacts: &mut Artifacts,
    mode: Mode,
) -> Result<(ExperimentReport, Vec<Vec<AttackTrace>>)> {
    let started = std::time::Instant::now();
    let zero_budget = cfg.attack.budget_delta == 0;

    let targets: Vec<NodeId> = match mode {
        Mode::Editing => {
            let mut eligible: Vec<NodeId> = artifacts
                .graph
                .node_ids()
                .filter(|&v| {
                    artifacts.graph.label(v) == Some(Label::Bot)
                        && artifacts.predictions.label(v) == Some(Label::Bot)
                })
                .collect();
            if eligible.len() < cfg.n_targets {
                log::warn!(
                    "only {} correctly classified bots available, requested {}",
                    eligible.len(),
                    cfg.n_targets
                );
            }
            let mut rng = ChaCha20Rng::seed_from_u64(splitmix(cfg.seed ^ 0x05));
            eligible.shuffle(&mut rng);
            eligible.truncate(cfg.n_targets);
            eligible.sort_unstable();
            eligible
        }
        // Injection instances are indexed, not tied to existing nodes.
        Mode::Injection => (0..cfg.n_targets as u64).map(NodeId).collect(),
    };

    let candidates = if zero_budget {
        Vec::new()
    } else {
        mine_candidates(
            &artifacts.geometry,
            &artifacts.graph,
            &artifacts.predictions,
            &cfg.attack,
        )?
    };

    let per_target: Vec<(Vec<AttackTrace>, bool)> = if cfg.parallel_targets > 1 {
        run_targets_parallel(cfg, artifacts, &mode, &targets, &candidates)?
    } else {
        let mut out = Vec::with_capacity(targets.len());
        for &t in &targets {
            out.push(run_one_target(cfg, artifacts, &mode, t, &candidates)?);
        }
        out
    };

    let traces: Vec<Vec<AttackTrace>> = per_target.iter().map(|(t, _)| t.clone()).collect();
    let summaries: Vec<TargetSummary> = targets
        .iter()
        .zip(&per_target)
        .map(|(&target, (traces, baseline_flipped))| {
            let count = |o: Outcome| traces.iter().filter(|t| t.outcome == o).count();
            TargetSummary {
                target,
                trials: traces.len(),
                successes: count(Outcome::Success),
                failures: count(Outcome::Failure),
                budget_exceeded: count(Outcome::BudgetExceeded),
                flipped: traces.iter().any(|t| t.outcome == Outcome::Success),
                baseline_flipped: *baseline_flipped,
            }
        })
        .collect();

    let flipped = summaries.iter().filter(|s| s.flipped).count();
    let baseline = summaries.iter().filter(|s| s.baseline_flipped).count();
    let n = targets.len().max(1) as f64;
    let predicted_human_rate = match mode {
        Mode::Editing => None,
        Mode::Injection => Some(
            per_target
                .iter()
                .filter(|(traces, _)| {
                    traces
                        .iter()
                        .any(|t| t.detector_after == Some(Label::Human))
                })
                .count() as f64
                / n,
        ),
    };
    let report = ExperimentReport {
        mode: match mode {
            Mode::Editing => "editing".into(),
            Mode::Injection => "injection".into(),
        },
        config: cfg.clone(),
        detector_clean_accuracy: artifacts.detector_clean_accuracy,
        n_targets_requested: cfg.n_targets,
        n_targets: targets.len(),
        targets: summaries,
        misclassification_rate: flipped as f64 / n,
        baseline_random_rate: baseline as f64 / n,
        predicted_human_rate,
        edit_semantics: EditSemantics {
            neighborhood_replacement: matches!(mode, Mode::Editing),
            deletes_counted_in_budget: false,
        },
        timing_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((report, traces))
}

fn per_target_attack_config(cfg: &ExperimentConfig, key: u64) -> AttackConfig {
    AttackConfig {
        seed: splitmix(cfg.attack.seed ^ key),
        ..cfg.attack.clone()
    }
}

fn run_one_target(
    cfg: &ExperimentConfig,
    artifacts: &Artifacts,
    mode: &Mode,
    target: NodeId,
    candidates: &[CloakCandidate],
) -> Result<(Vec<AttackTrace>, bool)> {
    let mut graph = artifacts.graph.clone();
    if cfg.attack.budget_delta == 0 {
        return Ok((Vec::new(), false));
    }
    let attack_cfg = per_target_attack_config(cfg, target.0);
    let traces = match mode {
        Mode::Editing => editing_attack_with_candidates(
            &mut graph,
            &artifacts.geometry,
            &artifacts.detector,
            target,
            candidates,
            &attack_cfg,
        )?,
        Mode::Injection => injection_attack_with_candidates(
            &mut graph,
            &artifacts.geometry,
            &artifacts.detector,
            candidates,
            &attack_cfg,
        )?,
    };
    let baseline_cfg = AttackConfig {
        seed: splitmix(attack_cfg.seed ^ 0xBA5E),
        ..attack_cfg
    };
    let baseline_flipped =
        random_baseline(&mut graph, &artifacts.detector, mode, target, &baseline_cfg)?;
    Ok((traces, baseline_flipped))
}

fn run_targets_parallel(
    cfg: &ExperimentConfig,
    artifacts: &Artifacts,
    mode: &Mode,
    targets: &[NodeId],
    candidates: &[CloakCandidate],
) -> Result<Vec<(Vec<AttackTrace>, bool)>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel_targets)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        targets
            .par_iter()
            .map(|&t| run_one_target(cfg, artifacts, mode, t, candidates))
            .collect()
    })
}

/// Constrained-random baseline: identical mechanics (reset per trial,
/// neighborhood replacement in editing, fresh age, incident-only adds, no
/// human follow-backs, budget), with uniformly random edge choices in
/// place of cloak decoding. Content is left untouched (there is no
/// template to copy).
fn random_baseline(
    g: &mut DirectedSocialGraph,
    detector: &dyn Detector,
    mode: &Mode,
    target: NodeId,
    cfg: &AttackConfig,
) -> Result<bool> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let node_pool: Vec<NodeId> = g.node_ids().collect();
    let mut flipped = false;
    for _trial in 0..cfg.trials {
        let v_tar = match mode {
            Mode::Editing => target,
            Mode::Injection => g.inject_node(otcloak_core::NodeRecord::new(
                Label::Bot,
                0.0,
                vec![0.0; g.content_dim()],
            )),
        };
        let before = detector.predict(g, v_tar)?;
        let mut edits = EditSet::new(v_tar);
        if matches!(mode, Mode::Editing) {
            for &(dst, tag) in g.out_edges(v_tar) {
                edits.edits.push(EdgeEdit::delete(v_tar, dst, tag));
            }
            for &(src, tag) in g.in_edges(v_tar) {
                edits.edits.push(EdgeEdit::delete(src, v_tar, tag));
            }
        }
        let mut planned: std::collections::BTreeSet<(NodeId, NodeId)> =
            std::collections::BTreeSet::new();
        for _ in 0..cfg.budget_delta {
            for _attempt in 0..64 {
                let other = node_pool[rng.gen_range(0..node_pool.len())];
                if other == v_tar {
                    continue;
                }
                let outgoing = rng.gen_bool(0.5);
                if !outgoing && cfg.flag_hb && g.label(other) == Some(Label::Human) {
                    continue;
                }
                let (src, dst) = if outgoing {
                    (v_tar, other)
                } else {
                    (other, v_tar)
                };
                if planned.contains(&(src, dst)) {
                    continue;
                }
                planned.insert((src, dst));
                edits.edits.push(EdgeEdit::add(src, dst));
                break;
            }
        }
        g.apply_edits(&edits)?;
        g.set_age_norm(v_tar, rng.gen_range(0.0..=cfg.fresh_age_max))?;
        let after = detector.predict(g, v_tar)?;
        if before == Label::Bot && after == Label::Human {
            flipped = true;
        }
        g.reset_to_baseline();
    }
    Ok(flipped)
}

/// Recomputes outcome statistics from trace report lines; the `eval`
/// subcommand uses this to double-check reports.
#[derive(Debug, Default, Serialize, PartialEq)]
pub struct TraceAggregate {
    pub trials: usize,
    pub successes: usize,
    pub failures: usize,
    pub budget_exceeded: usize,
    pub targets: usize,
    pub flipped_targets: usize,
    pub misclassification_rate: f64,
}

pub fn aggregate_trace_lines(lines: &[serde_json::Value]) -> TraceAggregate {
    use std::collections::BTreeMap;
    let mut by_target: BTreeMap<String, bool> = BTreeMap::new();
    let mut agg = TraceAggregate::default();
    for line in lines {
        agg.trials += 1;
        let outcome = line["outcome"].as_str().unwrap_or("");
        match outcome {
            "success" => agg.successes += 1,
            "failure" => agg.failures += 1,
            "budget_exceeded" => agg.budget_exceeded += 1,
            _ => {}
        }
        let key = line["target"].to_string();
        let entry = by_target.entry(key).or_insert(false);
        *entry |= outcome == "success";
    }
    agg.targets = by_target.len();
    agg.flipped_targets = by_target.values().filter(|&&f| f).count();
    agg.misclassification_rate = if agg.targets > 0 {
        agg.flipped_targets as f64 / agg.targets as f64
    } else {
        0.0
    };
    agg
}
