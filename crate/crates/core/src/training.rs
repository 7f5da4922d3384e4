//! Offline trainer for the OT geometry: nearest-neighbor mining over
//! human/bot pools, the margin / sparsity / plausibility losses, and
//! minibatch gradient descent on the cost parameters.
//!
//! Gradients to the parameters flow through the margin term only: the
//! converged plan is held fixed (envelope route `dD/dC = P`), while the
//! sparsity and plausibility terms are plan functionals that contribute to
//! the monitored loss but vanish under the fixed-plan first-order scheme.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::cost_model::{cost_matrix_from_embeddings, CostGradients, CostPair, OtGeometry};
use crate::detector::PredictionSet;
use crate::error::{Error, Result};
use crate::features::{
    feature_dim, neighborhood_measure, MeasureParams, NeighborAtom, NeighborMeasure,
};
use crate::geometry::DistanceCache;
use crate::graph::{DirectedSocialGraph, Label, NodeId};
use crate::ot::{conditional_entropies, sinkhorn, SinkhornConfig, TransportPlan};

const PROB_CLAMP: f64 = 1e-12;

/// Trainer settings. Loss weights and temperatures default to the
/// reference configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_bce: f64,
    pub lambda_sp: f64,
    pub lambda_pl: f64,
    pub tau_bce: f64,
    pub tau_bdry: f64,
    pub alpha_deg_pl: f64,
    pub alpha_age_pl: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub human_pool_size: usize,
    pub bot_pool_size: usize,
    pub hidden_dim: usize,
    pub emb_dim: usize,
    /// Reserved margin for a pairwise contrastive objective; the trainer
    /// does not consume it.
    pub contrastive_margin: f64,
    pub measure: MeasureParams,
    pub sinkhorn: SinkhornConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_bce: 2.0,
            lambda_sp: 0.05,
            lambda_pl: 0.10,
            tau_bce: 0.01,
            tau_bdry: 0.1,
            alpha_deg_pl: 0.8,
            alpha_age_pl: 0.2,
            batch_size: 128,
            epochs: 20,
            learning_rate: 1e-3,
            human_pool_size: 200,
            bot_pool_size: 200,
            hidden_dim: crate::cost_model::DEFAULT_HIDDEN_DIM,
            emb_dim: crate::cost_model::DEFAULT_EMB_DIM,
            contrastive_margin: 1e-3,
            measure: MeasureParams::default(),
            sinkhorn: SinkhornConfig::default(),
            seed: 0,
        }
    }
}

/// Nearest human / nearest other bot distances and the resulting margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginRecord {
    pub node: NodeId,
    pub d_hum: f64,
    pub d_bot: f64,
    pub margin: f64,
    pub nearest_human: NodeId,
    pub nearest_bot: NodeId,
    pub mislabeled: bool,
}

/// Argmin of the OT distance over each pool (ties to the lowest NodeId),
/// margin = d_hum - d_bot. The query node is excluded from the bot pool.
#[allow(clippy::too_many_arguments)]
pub fn mine_nearest(
    geo: &OtGeometry,
    g: &DirectedSocialGraph,
    v: NodeId,
    humans: &[NodeId],
    bots: &[NodeId],
    mislabeled: bool,
    measure: &MeasureParams,
    cfg: &SinkhornConfig,
    cache: &mut DistanceCache,
) -> Result<MarginRecord> {
    let (nearest_human, d_hum) = nearest_in_pool(geo, g, v, humans, measure, cfg, cache, "human")?;
    let (nearest_bot, d_bot) = nearest_in_pool(
        geo,
        g,
        v,
        &bots.iter().copied().filter(|&b| b != v).collect::<Vec<_>>(),
        measure,
        cfg,
        cache,
        "bot",
    )?;
    Ok(MarginRecord {
        node: v,
        d_hum,
        d_bot,
        margin: d_hum - d_bot,
        nearest_human,
        nearest_bot,
        mislabeled,
    })
}

#[allow(clippy::too_many_arguments)]
fn nearest_in_pool(
    geo: &OtGeometry,
    g: &DirectedSocialGraph,
    v: NodeId,
    pool: &[NodeId],
    measure: &MeasureParams,
    cfg: &SinkhornConfig,
    cache: &mut DistanceCache,
    pool_name: &str,
) -> Result<(NodeId, f64)> {
    if pool.is_empty() {
        return Err(Error::EmptyPool(format!("{pool_name} pool is empty")));
    }
    let mut best: Option<(NodeId, f64)> = None;
    for &candidate in pool {
        let d = crate::geometry::ot_distance(geo, g, v, candidate, measure, cfg, cache)?;
        let better = match best {
            None => true,
            // Strict < keeps the lowest NodeId on ties (pool is ascending).
            Some((_, best_d)) => d < best_d,
        };
        if better {
            best = Some((candidate, d));
        }
    }
    Ok(best.expect("pool checked nonempty"))
}

/// Logistic margin surrogate: BCE(sigma(-m / tau), y) with clamped
/// probabilities.
pub fn loss_bce(margin: f64, y: bool, tau_bce: f64) -> f64 {
    let p = sigmoid(-margin / tau_bce).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// d loss_bce / d margin, with the same clamped probability.
pub fn loss_bce_grad(margin: f64, y: bool, tau_bce: f64) -> f64 {
    let p = sigmoid(-margin / tau_bce).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = if y { 1.0 } else { 0.0 };
    (y - p) / tau_bce
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Plan-diffuseness penalty: sum of row- and column-conditional entropies.
pub fn loss_sparsity(plan: &TransportPlan) -> f64 {
    let (h_row, h_col) = conditional_entropies(plan);
    h_row + h_col
}

/// Per-pair plausibility cost: weighted degree and account-age mismatch
/// between two neighbor atoms.
pub fn plausibility_cost(
    atom_i: &NeighborAtom,
    atom_j: &NeighborAtom,
    alpha_deg_pl: f64,
    alpha_age_pl: f64,
) -> f64 {
    alpha_deg_pl * (atom_i.total_degree() - atom_j.total_degree()).abs()
        + alpha_age_pl * (atom_i.age_norm() - atom_j.age_norm()).abs()
}

/// Transport-weighted plausibility penalty over a plan.
pub fn loss_plausibility(
    plan: &TransportPlan,
    mu_a: &NeighborMeasure,
    mu_b: &NeighborMeasure,
    cfg: &TrainConfig,
) -> Result<f64> {
    if plan.dim() != (mu_a.len(), mu_b.len()) {
        return Err(Error::ShapeError(format!(
            "plan {:?} vs measures ({}, {})",
            plan.dim(),
            mu_a.len(),
            mu_b.len()
        )));
    }
    let mut total = 0.0;
    for ((i, j), &p) in plan.plan.indexed_iter() {
        total += p * plausibility_cost(
            &mu_a.atoms[i],
            &mu_b.atoms[j],
            cfg.alpha_deg_pl,
            cfg.alpha_age_pl,
        );
    }
    Ok(total)
}

/// Per-epoch loss summary, also the line format of the training log.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_bce: f64,
    pub loss_sp: f64,
    pub loss_pl: f64,
}

/// Appends one JSON object per epoch to a newline-delimited log file.
pub fn append_training_log(path: &Path, stats: &[EpochStats]) -> Result<()> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    for s in stats {
        let line = serde_json::to_string(s).map_err(|e| Error::FormatError(e.to_string()))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Trains the OT geometry on the labeled graph against frozen detector
/// predictions. Returns the final geometry and the per-epoch loss history.
pub fn train_geometry(
    g: &DirectedSocialGraph,
    predictions: &PredictionSet,
    cfg: &TrainConfig,
) -> Result<(OtGeometry, Vec<EpochStats>)> {
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    // Features are static while the graph is frozen; build measures once.
    let mut measures: BTreeMap<NodeId, NeighborMeasure> = BTreeMap::new();
    for v in g.node_ids() {
        if let Ok(mu) = neighborhood_measure(g, v, &cfg.measure) {
            measures.insert(v, mu);
        }
    }

    let humans_all: Vec<NodeId> = measures
        .keys()
        .copied()
        .filter(|&v| g.label(v) == Some(Label::Human))
        .collect();
    let bots_all: Vec<NodeId> = measures
        .keys()
        .copied()
        .filter(|&v| g.label(v) == Some(Label::Bot))
        .collect();
    if humans_all.is_empty() {
        return Err(Error::EmptyPool(
            "no connected humans to train against".into(),
        ));
    }
    if bots_all.len() < 2 {
        return Err(Error::EmptyTrainingSet(
            "need at least two connected bots".into(),
        ));
    }

    let humans = sample_pool(&humans_all, cfg.human_pool_size, &mut rng);
    let bots = sample_pool(&bots_all, cfg.bot_pool_size, &mut rng);

    let mut geo = OtGeometry::new(
        feature_dim(g.content_dim()),
        cfg.hidden_dim,
        cfg.emb_dim,
        cfg.seed,
    );
    geo.fit_standardization(measures.values().flat_map(|mu| mu.atoms.iter()));

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut train_order = bots_all.clone();
    for epoch in 0..cfg.epochs {
        train_order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0); // (bce, sp, pl)
        let mut seen = 0usize;
        for batch in train_order.chunks(cfg.batch_size.max(1)) {
            // The geometry is fixed within a batch: embed every measure's
            // atoms once and assemble pair costs from the cache.
            let mut embedded: BTreeMap<NodeId, Vec<ndarray::Array1<f64>>> = BTreeMap::new();
            for (&v, mu) in &measures {
                embedded.insert(v, geo.metric_embeddings(mu)?);
            }
            let mut grads = CostGradients::zeros_like(&geo);
            let mut active = 0usize;
            for &v in batch {
                let step = bot_step(v, predictions, &humans, &bots, &measures, &embedded, cfg)?;
                sums.0 += step.bce;
                sums.1 += step.sp;
                sums.2 += step.pl;
                seen += 1;
                active += 1;
                accumulate_margin_gradient(&geo, &step, &measures, cfg, &mut grads)?;
            }
            if active > 0 {
                grads.scale(1.0 / active as f64);
                geo.apply_step(&grads, cfg.learning_rate);
            }
        }
        let n = seen.max(1) as f64;
        let (bce, sp, pl) = (sums.0 / n, sums.1 / n, sums.2 / n);
        let stats = EpochStats {
            epoch,
            loss_total: cfg.lambda_bce * bce + cfg.lambda_sp * sp + cfg.lambda_pl * pl,
            loss_bce: bce,
            loss_sp: sp,
            loss_pl: pl,
        };
        log::debug!(
            "epoch {}: total {:.6} bce {:.6} sp {:.6} pl {:.6}",
            stats.epoch,
            stats.loss_total,
            stats.loss_bce,
            stats.loss_sp,
            stats.loss_pl
        );
        history.push(stats);
    }
    Ok((geo, history))
}

struct BotStep {
    v: NodeId,
    nearest_human: NodeId,
    nearest_bot: NodeId,
    plan_vh: TransportPlan,
    plan_vb: TransportPlan,
    margin_grad: f64,
    bce: f64,
    sp: f64,
    pl: f64,
}

#[allow(clippy::too_many_arguments)]
fn bot_step(
    v: NodeId,
    predictions: &PredictionSet,
    humans: &[NodeId],
    bots: &[NodeId],
    measures: &BTreeMap<NodeId, NeighborMeasure>,
    embedded: &BTreeMap<NodeId, Vec<ndarray::Array1<f64>>>,
    cfg: &TrainConfig,
) -> Result<BotStep> {
    let mislabeled = predictions.label(v) == Some(Label::Human);
    let mu_v = &measures[&v];
    let solve_pair = |other: NodeId| -> Result<f64> {
        let cost =
            cost_matrix_from_embeddings(&embedded[&v], &embedded[&other], mu_v, &measures[&other])?;
        let plan = sinkhorn(&cost, &cfg.sinkhorn)?;
        crate::ot::transport_cost(&plan, &cost)
    };
    let solve_against = |pool: &[NodeId], name: &str| -> Result<(NodeId, f64)> {
        let mut best: Option<(NodeId, f64)> = None;
        for &other in pool {
            if other == v {
                continue;
            }
            let d = solve_pair(other)?;
            if best.map(|(_, bd)| d < bd).unwrap_or(true) {
                best = Some((other, d));
            }
        }
        best.ok_or_else(|| Error::EmptyPool(format!("{name} pool is empty")))
    };
    let (nearest_human, d_hum) = solve_against(humans, "human")?;
    let (nearest_bot, d_bot) = solve_against(bots, "bot")?;
    let margin = d_hum - d_bot;

    let cost_vh = cost_matrix_from_embeddings(
        &embedded[&v],
        &embedded[&nearest_human],
        mu_v,
        &measures[&nearest_human],
    )?;
    let plan_vh = sinkhorn(&cost_vh, &cfg.sinkhorn)?;
    let cost_vb = cost_matrix_from_embeddings(
        &embedded[&v],
        &embedded[&nearest_bot],
        mu_v,
        &measures[&nearest_bot],
    )?;
    let plan_vb = sinkhorn(&cost_vb, &cfg.sinkhorn)?;

    let bce = loss_bce(margin, mislabeled, cfg.tau_bce);
    let sp = loss_sparsity(&plan_vh);
    let pl = loss_plausibility(&plan_vh, mu_v, &measures[&nearest_human], cfg)?;
    Ok(BotStep {
        v,
        nearest_human,
        nearest_bot,
        plan_vh,
        plan_vb,
        margin_grad: cfg.lambda_bce * loss_bce_grad(margin, mislabeled, cfg.tau_bce),
        bce,
        sp,
        pl,
    })
}

/// Envelope route: d margin / d C_vh = P_vh, d margin / d C_vb = -P_vb,
/// then chain through the ground cost into (theta, L).
fn accumulate_margin_gradient(
    geo: &OtGeometry,
    step: &BotStep,
    measures: &BTreeMap<NodeId, NeighborMeasure>,
    _cfg: &TrainConfig,
    grads: &mut CostGradients,
) -> Result<()> {
    if step.margin_grad == 0.0 {
        return Ok(());
    }
    let mu_v = &measures[&step.v];
    for (anchor, plan, sign) in [
        (step.nearest_human, &step.plan_vh, 1.0),
        (step.nearest_bot, &step.plan_vb, -1.0),
    ] {
        let mu_anchor = &measures[&anchor];
        let mut pairs = Vec::with_capacity(plan.plan.len());
        for ((i, j), &p) in plan.plan.indexed_iter() {
            pairs.push(CostPair {
                z: &mu_v.atoms[i].feat,
                z_prime: &mu_anchor.atoms[j].feat,
                upstream: step.margin_grad * sign * p,
            });
        }
        let partial = geo.backward(&pairs)?;
        grads.w1 += &partial.w1;
        grads.b1 += &partial.b1;
        grads.w2 += &partial.w2;
        grads.b2 += &partial.b2;
        grads.l += &partial.l;
    }
    Ok(())
}

fn sample_pool(pool: &[NodeId], cap: usize, rng: &mut ChaCha20Rng) -> Vec<NodeId> {
    if pool.len() <= cap {
        return pool.to_vec();
    }
    let mut picked: Vec<NodeId> = pool.to_vec();
    // Seeded partial Fisher-Yates, then restore ascending order.
    for i in 0..cap {
        let j = rng.gen_range(i..picked.len());
        picked.swap(i, j);
    }
    picked.truncate(cap);
    picked.sort_unstable();
    picked
}
