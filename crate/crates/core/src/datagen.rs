//! Synthetic social-graph generator with planted human/bot structure.
//!
//! Edge counts are derived from per-class degree budgets so empirical class
//! mean degrees land on the requested values: with `budget_c = n_c * deg_c`,
//! cross-class edges consume `(1 - homophily)` of the smaller budget and
//! same-class edges absorb the rest. A configurable fraction of bots is
//! planted with human-statistic neighborhoods, content, and ages so the
//! detector has boundary bots to misclassify.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DirectedSocialGraph, GraphBuilder, Label, NodeId, NodeRecord, FOLLOW};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgeRange {
    pub min: f64,
    pub max: f64,
}

impl AgeRange {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.max > self.min {
            rng.gen_range(self.min..self.max)
        } else {
            self.min
        }
    }
}

/// Generator parameters. Degree targets are mean total degree per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub n_humans: usize,
    pub n_bots: usize,
    pub human_mean_degree: f64,
    pub bot_mean_degree: f64,
    pub homophily: f64,
    pub content_dim: usize,
    pub content_separation: f64,
    pub human_age: AgeRange,
    pub bot_age: AgeRange,
    /// Fraction of bots rebuilt with human-statistic neighborhoods.
    pub planted_boundary_fraction: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n_humans: 50,
            n_bots: 50,
            human_mean_degree: 4.0,
            bot_mean_degree: 1.0,
            homophily: 0.7,
            content_dim: 4,
            content_separation: 2.0,
            human_age: AgeRange { min: 0.3, max: 1.0 },
            bot_age: AgeRange { min: 0.0, max: 0.4 },
            planted_boundary_fraction: 0.1,
            seed: 0,
        }
    }
}

impl GenParams {
    /// Sparse graph with a strong degree gap between classes.
    pub fn cresci_like() -> Self {
        Self {
            n_humans: 195,
            n_bots: 335,
            human_mean_degree: 5.18,
            bot_mean_degree: 0.22,
            homophily: 0.7,
            content_dim: 8,
            content_separation: 2.0,
            planted_boundary_fraction: 0.1,
            ..Self::default()
        }
    }

    /// Larger graph, mild degree gap, weaker content separation.
    pub fn twibot_like() -> Self {
        Self {
            n_humans: 860,
            n_bots: 140,
            human_mean_degree: 7.0,
            bot_mean_degree: 3.56,
            homophily: 0.6,
            content_dim: 8,
            content_separation: 1.0,
            planted_boundary_fraction: 0.1,
            ..Self::default()
        }
    }

    /// Dense graph where structure, not features, separates the classes.
    pub fn botsim_like() -> Self {
        Self {
            n_humans: 190,
            n_bots: 100,
            human_mean_degree: 59.12,
            bot_mean_degree: 19.23,
            homophily: 0.5,
            content_dim: 8,
            content_separation: 0.5,
            planted_boundary_fraction: 0.1,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "cresci-like" => Some(Self::cresci_like()),
            "twibot-like" => Some(Self::twibot_like()),
            "botsim-like" => Some(Self::botsim_like()),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_humans < 2 || self.n_bots < 2 {
            return Err(Error::InvalidParams(
                "need at least two nodes per class".into(),
            ));
        }
        let n = self.n_humans + self.n_bots;
        for (name, deg) in [
            ("human", self.human_mean_degree),
            ("bot", self.bot_mean_degree),
        ] {
            if deg < 0.0 || !deg.is_finite() {
                return Err(Error::InvalidParams(format!("negative {name} degree")));
            }
            if deg > (n - 1) as f64 {
                return Err(Error::InvalidParams(format!(
                    "{name} mean degree {deg} exceeds n-1 = {}",
                    n - 1
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return Err(Error::InvalidParams("homophily outside [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.planted_boundary_fraction) {
            return Err(Error::InvalidParams(
                "planted fraction outside [0,1]".into(),
            ));
        }
        for range in [self.human_age, self.bot_age] {
            if !(0.0..=1.0).contains(&range.min) || !(0.0..=1.0).contains(&range.max) {
                return Err(Error::InvalidParams("age range outside [0,1]".into()));
            }
        }
        Ok(())
    }
}

/// Generates a labeled directed graph. Deterministic under the seed.
pub fn generate(params: &GenParams) -> Result<DirectedSocialGraph> {
    params.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(params.seed);
    let n_humans = params.n_humans;
    let n_bots = params.n_bots;

    // Planted bots: human-like in structure, content, and age.
    let mut bot_indices: Vec<usize> = (0..n_bots).collect();
    bot_indices.shuffle(&mut rng);
    let n_planted =
        ((params.planted_boundary_fraction * n_bots as f64).round() as usize).min(n_bots);
    let planted: std::collections::BTreeSet<usize> =
        bot_indices.into_iter().take(n_planted).collect();

    let mut gb = GraphBuilder::new();
    let human_content = Normal::new(params.content_separation / 2.0, 1.0)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let bot_content = Normal::new(-params.content_separation / 2.0, 1.0)
        .map_err(|e| Error::InvalidParams(e.to_string()))?;

    let humans: Vec<NodeId> = (0..n_humans).map(|i| NodeId(i as u64)).collect();
    let bots: Vec<NodeId> = (0..n_bots).map(|i| NodeId((n_humans + i) as u64)).collect();

    for &id in &humans {
        let content = (0..params.content_dim)
            .map(|_| human_content.sample(&mut rng))
            .collect();
        let age = params.human_age.sample(&mut rng).clamp(0.0, 1.0);
        gb.add_node(id, NodeRecord::new(Label::Human, age, content))?;
    }
    for (idx, &id) in bots.iter().enumerate() {
        let dist = if planted.contains(&idx) {
            &human_content
        } else {
            &bot_content
        };
        let range = if planted.contains(&idx) {
            params.human_age
        } else {
            params.bot_age
        };
        let content = (0..params.content_dim)
            .map(|_| dist.sample(&mut rng))
            .collect();
        let age = range.sample(&mut rng).clamp(0.0, 1.0);
        gb.add_node(id, NodeRecord::new(Label::Bot, age, content))?;
    }

    // Degree-budget edge counts.
    let budget_h = n_humans as f64 * params.human_mean_degree;
    let budget_b = n_bots as f64 * params.bot_mean_degree;
    let cross_mass = (1.0 - params.homophily) * budget_h.min(budget_b);
    // cross_mass <= min(budgets), so both differences are nonnegative;
    // the saturating cast covers any rounding slip.
    let e_hh = ((budget_h - cross_mass) / 2.0).round() as usize;
    let e_bb = ((budget_b - cross_mass) / 2.0).round() as usize;
    let e_cross = cross_mass.round() as usize;

    let add_random_edge =
        |gb: &mut GraphBuilder, rng: &mut ChaCha20Rng, from_pool: &[NodeId], to_pool: &[NodeId]| {
            for _attempt in 0..32 {
                let a = from_pool[rng.gen_range(0..from_pool.len())];
                let b = to_pool[rng.gen_range(0..to_pool.len())];
                if a == b {
                    continue;
                }
                // Random direction within the chosen endpoint pair.
                let (src, dst) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
                if gb.add_edge(src, dst, FOLLOW).is_ok() {
                    return;
                }
            }
        };

    for _ in 0..e_hh {
        add_random_edge(&mut gb, &mut rng, &humans, &humans);
    }
    for _ in 0..e_bb {
        add_random_edge(&mut gb, &mut rng, &bots, &bots);
    }
    for _ in 0..e_cross {
        add_random_edge(&mut gb, &mut rng, &humans, &bots);
    }

    // Planted bots pick up a human-sized neighborhood wired to humans;
    // incoming human follows give them the misclassification signature.
    for (idx, &bot) in bots.iter().enumerate() {
        if !planted.contains(&idx) {
            continue;
        }
        let k = if params.human_mean_degree > 0.0 {
            Poisson::new(params.human_mean_degree)
                .map_err(|e| Error::InvalidParams(e.to_string()))?
                .sample(&mut rng) as usize
        } else {
            0
        };
        for _ in 0..k.min(n_humans) {
            for _attempt in 0..32 {
                let h = humans[rng.gen_range(0..humans.len())];
                let (src, dst) = if rng.gen_bool(0.5) {
                    (bot, h)
                } else {
                    (h, bot)
                };
                if gb.add_edge(src, dst, FOLLOW).is_ok() {
                    break;
                }
            }
        }
    }

    gb.build()
}
