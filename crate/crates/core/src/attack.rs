//! Attack drivers: OT-guided neighbor restriction, cloak cloning into
//! edge edits, the editing and injection trial loops, and the
//! human-template fallback for graphs with no misclassified bots.
//!
//! Every trial runs against the baseline graph and restores it afterwards;
//! adds count against the budget, deletes (neighborhood replacement in
//! editing mode) do not.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use serde_json::json;

use crate::cost_model::OtGeometry;
use crate::detector::{Detector, PredictionSet};
use crate::error::{Error, Result};
use crate::features::{neighborhood_measure, MeasureParams};
use crate::geometry::{
    boundary_candidates, eligible_pool, measure_distance, ot_distance, CloakCandidate,
    DistanceCache,
};
use crate::graph::{DirectedSocialGraph, EdgeEdit, EditSet, Label, NodeId, NodeRecord, FOLLOW};
use crate::ot::{row_masses, sinkhorn, SinkhornConfig};
use crate::sampler::{build_profile, importance_weights, sample_cloak};

/// Attack settings; defaults follow the reference configuration.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub budget_delta: usize,
    /// 0 disables OT-guided outgoing restriction.
    pub top_k: usize,
    pub reuse_cap: u32,
    /// Forbid human -> target follow-back edges.
    pub flag_hb: bool,
    pub trials: usize,
    pub sinkhorn: SinkhornConfig,
    pub measure: MeasureParams,
    pub tau_bdry: f64,
    /// Max cloak-candidate degree; defaults to the edge budget.
    pub degree_cap: Option<usize>,
    pub max_candidates: usize,
    /// Fresh-account ages are drawn uniformly from [0, fresh_age_max].
    pub fresh_age_max: f64,
    /// Clear use counters instead of unrestricted sampling once every
    /// template reaches the reuse cap.
    pub reset_on_saturation: bool,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            budget_delta: 5,
            top_k: 0,
            reuse_cap: 3,
            flag_hb: true,
            trials: 50,
            sinkhorn: SinkhornConfig::default(),
            measure: MeasureParams::default(),
            tau_bdry: 0.1,
            degree_cap: None,
            max_candidates: 50,
            fresh_age_max: 0.1,
            reset_on_saturation: false,
            seed: 0,
        }
    }
}

impl AttackConfig {
    pub fn effective_degree_cap(&self) -> usize {
        self.degree_cap.unwrap_or(self.budget_delta)
    }

    fn validate(&self) -> Result<()> {
        if self.budget_delta == 0 {
            return Err(Error::InvalidParams("budget must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    BudgetExceeded,
}

/// Record of one attack trial.
#[derive(Debug, Clone, Serialize)]
pub struct AttackTrace {
    pub trial: usize,
    pub target: NodeId,
    pub cloak: Option<NodeId>,
    pub edits: EditSet,
    pub outcome: Outcome,
    pub detector_before: Label,
    pub detector_after: Option<Label>,
}

impl AttackTrace {
    /// One newline-delimited report object:
    /// {trial, target, cloak, edits:[{op,src,dst}], outcome,
    ///  detector_before, detector_after}.
    pub fn to_report_line(&self) -> serde_json::Value {
        let edits: Vec<serde_json::Value> = self
            .edits
            .edits
            .iter()
            .map(|e| {
                if e.relation == FOLLOW {
                    json!({"op": e.op, "src": e.src, "dst": e.dst})
                } else {
                    json!({"op": e.op, "src": e.src, "dst": e.dst, "relation": e.relation})
                }
            })
            .collect();
        json!({
            "trial": self.trial,
            "target": self.target,
            "cloak": self.cloak,
            "edits": edits,
            "outcome": self.outcome,
            "detector_before": self.detector_before,
            "detector_after": self.detector_after,
        })
    }
}

/// OT-guided restriction of which outgoing neighbors of a cloak get
/// cloned: `None` means no restriction; otherwise the top-k out-neighbors
/// by transport-plan row mass against the cloak's nearest human.
pub fn ot_guided_neighbors(
    geo: &OtGeometry,
    g: &DirectedSocialGraph,
    t: NodeId,
    cfg: &AttackConfig,
    cache: &mut DistanceCache,
) -> Result<Option<BTreeSet<NodeId>>> {
    if cfg.sinkhorn.epsilon <= 0.0 || cfg.top_k == 0 {
        return Ok(None);
    }
    let humans = eligible_pool(g, Label::Human);
    if humans.is_empty() {
        return Err(Error::EmptyPool("no connected humans".into()));
    }
    let mu_t = neighborhood_measure(g, t, &cfg.measure)?;
    let mut nearest: Option<(NodeId, f64)> = None;
    for &h in &humans {
        if h == t {
            continue;
        }
        let d = ot_distance(geo, g, t, h, &cfg.measure, &cfg.sinkhorn, cache)?;
        if nearest.map(|(_, bd)| d < bd).unwrap_or(true) {
            nearest = Some((h, d));
        }
    }
    let (h_star, _) = nearest.ok_or_else(|| Error::EmptyPool("no usable human anchor".into()))?;
    let mu_h = neighborhood_measure(g, h_star, &cfg.measure)?;
    let cost = geo.cost_matrix_for(&mu_t, &mu_h)?;
    let plan = sinkhorn(&cost, &cfg.sinkhorn)?;
    let rho = row_masses(&plan);

    let out_neighbors: BTreeSet<NodeId> = g.out_neighbors(t, FOLLOW).into_iter().collect();
    let mut scored: Vec<(NodeId, f64)> = mu_t
        .atoms
        .iter()
        .enumerate()
        .filter(|(_, atom)| out_neighbors.contains(&atom.neighbor))
        .map(|(i, atom)| (atom.neighbor, rho[i]))
        .collect();
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(cfg.top_k);
    Ok(Some(scored.into_iter().map(|(v, _)| v).collect()))
}

/// Summary of what a clone will do, recorded alongside the edit set.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CloneSummary {
    pub cloned_out: usize,
    pub cloned_in: usize,
    pub skipped_human_inbound: usize,
    pub deletes: usize,
}

/// Planned clone: edits plus the node-record updates to apply with them.
#[derive(Debug, Clone)]
pub struct ClonePlan {
    pub edits: EditSet,
    pub content: Vec<f64>,
    pub summary: CloneSummary,
}

/// Decodes a cloak template into concrete incident edits for the target:
/// copy content, replace the target's incident edges (editing mode emits
/// deletes first), clone the cloak's outgoing follows within the
/// restriction and its incoming follows except human sources under
/// `flag_hb`.
pub fn clone_cloak(
    g: &DirectedSocialGraph,
    v_tar: NodeId,
    t: NodeId,
    restriction: Option<&BTreeSet<NodeId>>,
    flag_hb: bool,
) -> Result<ClonePlan> {
    if v_tar == t {
        return Err(Error::ConstraintViolation(
            "cloak template equals the target".into(),
        ));
    }
    let cloak_rec = g.node(t).ok_or(Error::NodeNotFound(t))?;
    g.node(v_tar).ok_or(Error::NodeNotFound(v_tar))?;

    let mut edits = EditSet::new(v_tar);
    let mut deletes = 0usize;
    // Neighborhood replacement: wipe the target's existing incident edges.
    for &(dst, tag) in g.out_edges(v_tar) {
        edits.edits.push(EdgeEdit::delete(v_tar, dst, tag));
        deletes += 1;
    }
    for &(src, tag) in g.in_edges(v_tar) {
        edits.edits.push(EdgeEdit::delete(src, v_tar, tag));
        deletes += 1;
    }

    let out_all = g.out_neighbors(t, FOLLOW);
    let allowed_out: Vec<NodeId> = match restriction {
        None => out_all,
        Some(set) => {
            let restricted: Vec<NodeId> = out_all
                .iter()
                .copied()
                .filter(|v| set.contains(v))
                .collect();
            // An empty intersection would orphan the outgoing side; clone
            // the full set instead.
            if restricted.is_empty() {
                out_all
            } else {
                restricted
            }
        }
    };
    let mut cloned_out = 0usize;
    for x in allowed_out {
        if x == v_tar {
            continue;
        }
        edits.edits.push(EdgeEdit::add(v_tar, x));
        cloned_out += 1;
    }

    let mut cloned_in = 0usize;
    let mut skipped_human_inbound = 0usize;
    for x in g.in_neighbors(t, FOLLOW) {
        if x == v_tar {
            continue;
        }
        if flag_hb && g.label(x) == Some(Label::Human) {
            skipped_human_inbound += 1;
            continue;
        }
        edits.edits.push(EdgeEdit::add(x, v_tar));
        cloned_in += 1;
    }

    Ok(ClonePlan {
        edits,
        content: cloak_rec.content.clone(),
        summary: CloneSummary {
            cloned_out,
            cloned_in,
            skipped_human_inbound,
            deletes,
        },
    })
}

/// Mines the cloak candidate pool on the clean graph.
pub fn mine_candidates(
    geo: &OtGeometry,
    g: &DirectedSocialGraph,
    predictions: &PredictionSet,
    cfg: &AttackConfig,
) -> Result<Vec<CloakCandidate>> {
    let mut cache = DistanceCache::new();
    boundary_candidates(
        geo,
        g,
        predictions,
        cfg.tau_bdry,
        cfg.effective_degree_cap(),
        cfg.max_candidates,
        &cfg.measure,
        &cfg.sinkhorn,
        &mut cache,
    )
}

enum TargetMode {
    Edit(NodeId),
    Inject,
}

impl TargetMode {
    fn is_injection(&self) -> bool {
        matches!(self, TargetMode::Inject)
    }
}

/// Node-editing attack against an existing, correctly classified bot.
pub fn editing_attack(
    g: &mut DirectedSocialGraph,
    predictions: &PredictionSet,
    geo: &OtGeometry,
    detector: &dyn Detector,
    v_tar: NodeId,
    cfg: &AttackConfig,
) -> Result<Vec<AttackTrace>> {
    let candidates = mine_candidates(geo, g, predictions, cfg)?;
    editing_attack_with_candidates(g, geo, detector, v_tar, &candidates, cfg)
}

/// Editing attack with a precomputed candidate pool (shared across
/// targets by the experiment harness).
pub fn editing_attack_with_candidates(
    g: &mut DirectedSocialGraph,
    geo: &OtGeometry,
    detector: &dyn Detector,
    v_tar: NodeId,
    candidates: &[CloakCandidate],
    cfg: &AttackConfig,
) -> Result<Vec<AttackTrace>> {
    cfg.validate()?;
    if g.label(v_tar) != Some(Label::Bot) {
        return Err(Error::InvalidParams(format!(
            "edit target {v_tar} is not a labeled bot"
        )));
    }
    run_driver(g, geo, detector, TargetMode::Edit(v_tar), candidates, cfg)
}

/// Node-injection attack: a fresh bot is created per trial and removed by
/// the trial reset. Only additions are possible (the fresh node has no
/// incident edges to delete).
pub fn injection_attack(
    g: &mut DirectedSocialGraph,
    predictions: &PredictionSet,
    geo: &OtGeometry,
    detector: &dyn Detector,
    cfg: &AttackConfig,
) -> Result<Vec<AttackTrace>> {
    let candidates = mine_candidates(geo, g, predictions, cfg)?;
    injection_attack_with_candidates(g, geo, detector, &candidates, cfg)
}

pub fn injection_attack_with_candidates(
    g: &mut DirectedSocialGraph,
    geo: &OtGeometry,
    detector: &dyn Detector,
    candidates: &[CloakCandidate],
    cfg: &AttackConfig,
) -> Result<Vec<AttackTrace>> {
    cfg.validate()?;
    run_driver(g, geo, detector, TargetMode::Inject, candidates, cfg)
}

fn fresh_bot_record(g: &DirectedSocialGraph) -> NodeRecord {
    NodeRecord::new(Label::Bot, 0.0, vec![0.0; g.content_dim()])
}

fn run_driver(
    g: &mut DirectedSocialGraph,
    geo: &OtGeometry,
    detector: &dyn Detector,
    mode: TargetMode,
    candidates: &[CloakCandidate],
    cfg: &AttackConfig,
) -> Result<Vec<AttackTrace>> {
    let candidates: Vec<CloakCandidate> = match &mode {
        TargetMode::Edit(v_tar) => candidates
            .iter()
            .copied()
            .filter(|c| c.node != *v_tar)
            .collect(),
        TargetMode::Inject => candidates.to_vec(),
    };
    if candidates.is_empty() {
        return human_fallback_mode(g, geo, detector, mode, cfg);
    }

    let profiles = candidates
        .iter()
        .map(|c| build_profile(g, c))
        .collect::<Result<Vec<_>>>()?;
    let weights = importance_weights(&profiles)?;
    let mut use_counts: BTreeMap<NodeId, u32> = BTreeMap::new();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut restriction_by_cloak: BTreeMap<NodeId, Option<BTreeSet<NodeId>>> = BTreeMap::new();
    let mut cache = DistanceCache::new();
    let mut traces = Vec::with_capacity(cfg.trials);

    for trial in 0..cfg.trials {
        if cfg.reset_on_saturation {
            let all_capped = candidates
                .iter()
                .all(|c| use_counts.get(&c.node).copied().unwrap_or(0) >= cfg.reuse_cap);
            if all_capped {
                use_counts.clear();
            }
        }
        let v_tar = match &mode {
            TargetMode::Edit(v) => *v,
            TargetMode::Inject => g.inject_node(fresh_bot_record(g)),
        };
        let detector_before = detector.predict(g, v_tar)?;
        let cloak = sample_cloak(&weights, &use_counts, cfg.reuse_cap, &mut rng);
        if let std::collections::btree_map::Entry::Vacant(slot) = restriction_by_cloak.entry(cloak)
        {
            slot.insert(ot_guided_neighbors(geo, g, cloak, cfg, &mut cache)?);
        }
        let restriction = restriction_by_cloak[&cloak].as_ref();
        let plan = clone_cloak(g, v_tar, cloak, restriction, cfg.flag_hb)?;

        if plan.edits.add_count() > cfg.budget_delta {
            traces.push(AttackTrace {
                trial,
                target: v_tar,
                cloak: Some(cloak),
                edits: plan.edits,
                outcome: Outcome::BudgetExceeded,
                detector_before,
                detector_after: None,
            });
            g.reset_to_baseline();
            continue;
        }

        g.set_content(v_tar, plan.content.clone())?;
        g.set_age_norm(v_tar, rng.gen_range(0.0..=cfg.fresh_age_max))?;
        g.apply_edits(&plan.edits)?;
        let detector_after = detector.predict(g, v_tar)?;
        let success = detector_before == Label::Bot && detector_after == Label::Human;
        if success {
            *use_counts.entry(cloak).or_insert(0) += 1;
        }
        traces.push(AttackTrace {
            trial,
            target: v_tar,
            cloak: Some(cloak),
            edits: plan.edits,
            outcome: if success {
                Outcome::Success
            } else {
                Outcome::Failure
            },
            detector_before,
            detector_after: Some(detector_after),
        });
        g.reset_to_baseline();
    }
    debug_assert!(mode.is_injection() || g.matches_baseline());
    Ok(traces)
}

/// Fallback when no misclassified boundary bots exist: mimic the
/// OT-nearest human whose cloned neighborhood fits the budget.
pub fn human_fallback(
    g: &mut DirectedSocialGraph,
    geo: &OtGeometry,
    detector: &dyn Detector,
    v_tar: NodeId,
    cfg: &AttackConfig,
) -> Result<Vec<AttackTrace>> {
    cfg.validate()?;
    human_fallback_mode(g, geo, detector, TargetMode::Edit(v_tar), cfg)
}

fn human_fallback_mode(
    g: &mut DirectedSocialGraph,
    geo: &OtGeometry,
    detector: &dyn Detector,
    mode: TargetMode,
    cfg: &AttackConfig,
) -> Result<Vec<AttackTrace>> {
    let humans = eligible_pool(g, Label::Human);
    if humans.is_empty() {
        return Err(Error::EmptyPool("no connected humans to mimic".into()));
    }

    // Rank templates by OT distance from the target when the target has a
    // neighborhood; an injected (or isolated) target has no measure, so
    // rank by clone cost instead.
    let reference_measure = match &mode {
        TargetMode::Edit(v) => neighborhood_measure(g, *v, &cfg.measure).ok(),
        TargetMode::Inject => None,
    };
    let mut ordered: Vec<(f64, NodeId)> = Vec::with_capacity(humans.len());
    for &h in &humans {
        if let TargetMode::Edit(v) = &mode {
            if h == *v {
                continue;
            }
        }
        let key = match &reference_measure {
            Some(mu_v) => {
                let mu_h = neighborhood_measure(g, h, &cfg.measure)?;
                measure_distance(geo, mu_v, &mu_h, &cfg.sinkhorn)?
            }
            None => clone_add_count(g, h, cfg.flag_hb) as f64,
        };
        ordered.push((key, h));
    }
    ordered.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.1.cmp(&b.1))
    });

    // Humans whose clone exceeds the budget are skipped.
    let chosen = ordered
        .iter()
        .map(|&(_, h)| h)
        .find(|&h| clone_add_count(g, h, cfg.flag_hb) <= cfg.budget_delta);

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut traces = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let v_tar = match &mode {
            TargetMode::Edit(v) => *v,
            TargetMode::Inject => g.inject_node(fresh_bot_record(g)),
        };
        let detector_before = detector.predict(g, v_tar)?;
        match chosen {
            None => {
                traces.push(AttackTrace {
                    trial,
                    target: v_tar,
                    cloak: None,
                    edits: EditSet::new(v_tar),
                    outcome: Outcome::Failure,
                    detector_before,
                    detector_after: None,
                });
            }
            Some(h) => {
                let plan = clone_cloak(g, v_tar, h, None, cfg.flag_hb)?;
                debug_assert!(plan.edits.add_count() <= cfg.budget_delta);
                g.set_content(v_tar, plan.content.clone())?;
                g.set_age_norm(v_tar, rng.gen_range(0.0..=cfg.fresh_age_max))?;
                g.apply_edits(&plan.edits)?;
                let detector_after = detector.predict(g, v_tar)?;
                let success = detector_before == Label::Bot && detector_after == Label::Human;
                traces.push(AttackTrace {
                    trial,
                    target: v_tar,
                    cloak: Some(h),
                    edits: plan.edits,
                    outcome: if success {
                        Outcome::Success
                    } else {
                        Outcome::Failure
                    },
                    detector_before,
                    detector_after: Some(detector_after),
                });
            }
        }
        g.reset_to_baseline();
    }
    Ok(traces)
}

/// Adds a clone of `template` would emit for a fresh target under the
/// follow-back flag, before any restriction.
fn clone_add_count(g: &DirectedSocialGraph, template: NodeId, flag_hb: bool) -> usize {
    let out = g.out_neighbors(template, FOLLOW).len();
    let inc = g
        .in_neighbors(template, FOLLOW)
        .into_iter()
        .filter(|&x| !(flag_hb && g.label(x) == Some(Label::Human)))
        .count();
    out + inc
}

/// Misclassification rate over a set of targets: a target counts as
/// flipped when any of its trials succeeded.
pub fn misclassification_rate(traces_by_target: &[Vec<AttackTrace>]) -> f64 {
    if traces_by_target.is_empty() {
        return 0.0;
    }
    let flipped = traces_by_target
        .iter()
        .filter(|traces| traces.iter().any(|t| t.outcome == Outcome::Success))
        .count();
    flipped as f64 / traces_by_target.len() as f64
}
