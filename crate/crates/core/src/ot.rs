//! Entropic optimal transport between neighborhood measures.
//!
//! The solver alternates scaling updates `u <- a / (K v)`, `v <- b / (K^T u)`
//! against the Gibbs kernel `K = exp(-C / eps)` and declares convergence on
//! the L1 marginal residuals. When the kernel underflows (small `eps` or
//! large costs) the same iteration runs in the log domain on the dual
//! potentials, with `u = exp(f/eps)`, `v = exp(g/eps)`.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::features::NeighborMeasure;

/// Epsilon below which the scaling iteration always runs in the log domain.
const LOG_DOMAIN_EPSILON: f64 = 0.05;
/// Kernel entries below this trigger log-domain stabilization.
const KERNEL_UNDERFLOW: f64 = 1e-300;

/// Nonnegative ground-cost matrix with simplex marginals.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub values: Array2<f64>,
    pub row_marginal: Array1<f64>,
    pub col_marginal: Array1<f64>,
}

impl CostMatrix {
    pub fn new(
        values: Array2<f64>,
        row_marginal: Array1<f64>,
        col_marginal: Array1<f64>,
    ) -> Result<Self> {
        let (m, n) = values.dim();
        if row_marginal.len() != m || col_marginal.len() != n {
            return Err(Error::ShapeError(format!(
                "cost is {m}x{n} but marginals have lengths {} and {}",
                row_marginal.len(),
                col_marginal.len()
            )));
        }
        if values.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::InvalidCost(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        for (name, marg) in [("row", &row_marginal), ("col", &col_marginal)] {
            if marg.iter().any(|&w| !w.is_finite() || w <= 0.0) {
                return Err(Error::InvalidMarginal(format!(
                    "{name} marginal entries must be strictly positive"
                )));
            }
            let total: f64 = marg.sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidMarginal(format!(
                    "{name} marginal sums to {total}, not 1"
                )));
            }
        }
        Ok(Self {
            values,
            row_marginal,
            col_marginal,
        })
    }

    /// Builds a cost matrix from explicit values and the two measures'
    /// weights as marginals.
    pub fn from_measures(
        values: Array2<f64>,
        mu_a: &NeighborMeasure,
        mu_b: &NeighborMeasure,
    ) -> Result<Self> {
        Self::new(
            values,
            Array1::from_vec(mu_a.weights.clone()),
            Array1::from_vec(mu_b.weights.clone()),
        )
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

/// Sinkhorn solver settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    pub max_iterations: usize,
    pub marginal_tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            max_iterations: 30,
            marginal_tolerance: 1e-6,
        }
    }
}

/// An entropic coupling with its scaling vectors and convergence metadata.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: Array2<f64>,
    pub scaling_u: Array1<f64>,
    pub scaling_v: Array1<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_residual: f64,
}

impl TransportPlan {
    pub fn dim(&self) -> (usize, usize) {
        self.plan.dim()
    }
}

fn residuals(plan: &Array2<f64>, a: &Array1<f64>, b: &Array1<f64>) -> (f64, f64) {
    let row: f64 = (&plan.sum_axis(Axis(1)) - a).mapv(f64::abs).sum();
    let col: f64 = (&plan.sum_axis(Axis(0)) - b).mapv(f64::abs).sum();
    (row, col)
}

fn logsumexp(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Solves the entropic OT problem by alternating marginal scaling.
pub fn sinkhorn(c: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    if !cfg.epsilon.is_finite() || cfg.epsilon <= 0.0 {
        return Err(Error::InvalidParams(format!(
            "epsilon must be positive, got {}",
            cfg.epsilon
        )));
    }
    if c.values.iter().any(|&x| !x.is_finite()) {
        return Err(Error::InvalidCost("non-finite cost entry".into()));
    }
    let max_cost = c.values.iter().cloned().fold(0.0, f64::max);
    let needs_log =
        cfg.epsilon < LOG_DOMAIN_EPSILON || (-max_cost / cfg.epsilon).exp() < KERNEL_UNDERFLOW;
    if needs_log {
        sinkhorn_log_domain(c, cfg)
    } else {
        match sinkhorn_scaling(c, cfg) {
            Ok(plan) => Ok(plan),
            // Over/underflow mid-iteration: retry stabilized.
            Err(Error::NumericalFailure(_)) => sinkhorn_log_domain(c, cfg),
            Err(e) => Err(e),
        }
    }
}

fn sinkhorn_scaling(c: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (m, n) = c.dim();
    let a = &c.row_marginal;
    let b = &c.col_marginal;
    let kernel = c.values.mapv(|x| (-x / cfg.epsilon).exp());
    for (axis, name) in [(Axis(1), "row"), (Axis(0), "column")] {
        if kernel.sum_axis(axis).iter().any(|&s| s <= 0.0) {
            return Err(Error::NumericalFailure(format!(
                "kernel has an all-zero {name}"
            )));
        }
    }

    let mut u = Array1::<f64>::ones(m);
    let mut v = Array1::<f64>::ones(n);
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    while iterations < cfg.max_iterations {
        u = a / &kernel.dot(&v);
        v = b / &kernel.t().dot(&u);
        iterations += 1;
        if u.iter()
            .chain(v.iter())
            .any(|&x| !x.is_finite() || x <= 0.0)
        {
            return Err(Error::NumericalFailure(
                "scaling vector left the positive range".into(),
            ));
        }
        let plan = assemble(&u, &kernel, &v);
        let (r_row, r_col) = residuals(&plan, a, b);
        residual = r_row.max(r_col);
        if r_row <= cfg.marginal_tolerance && r_col <= cfg.marginal_tolerance {
            converged = true;
            break;
        }
    }
    let plan = assemble(&u, &kernel, &v);
    Ok(TransportPlan {
        plan,
        scaling_u: u,
        scaling_v: v,
        epsilon: cfg.epsilon,
        iterations,
        converged,
        marginal_residual: residual,
    })
}

fn assemble(u: &Array1<f64>, kernel: &Array2<f64>, v: &Array1<f64>) -> Array2<f64> {
    let mut plan = kernel.clone();
    for ((i, j), p) in plan.indexed_iter_mut() {
        *p *= u[i] * v[j];
    }
    plan
}

fn sinkhorn_log_domain(c: &CostMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let (m, n) = c.dim();
    let eps = cfg.epsilon;
    let a = &c.row_marginal;
    let b = &c.col_marginal;
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();

    // Dual potentials; u = exp(f/eps), v = exp(g/eps), g starts at 0 (v = 1).
    let mut f = vec![0.0_f64; m];
    let mut g = vec![0.0_f64; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;

    let plan_from = |f: &[f64], g: &[f64]| -> Array2<f64> {
        Array2::from_shape_fn((m, n), |(i, j)| {
            ((f[i] + g[j] - c.values[(i, j)]) / eps).exp()
        })
    };

    while iterations < cfg.max_iterations {
        for i in 0..m {
            let lse = logsumexp((0..n).map(|j| (g[j] - c.values[(i, j)]) / eps));
            f[i] = eps * (log_a[i] - lse);
        }
        for j in 0..n {
            let lse = logsumexp((0..m).map(|i| (f[i] - c.values[(i, j)]) / eps));
            g[j] = eps * (log_b[j] - lse);
        }
        iterations += 1;
        if f.iter().chain(g.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure(
                "dual potential diverged in log-domain iteration".into(),
            ));
        }
        let plan = plan_from(&f, &g);
        let (r_row, r_col) = residuals(&plan, a, b);
        residual = r_row.max(r_col);
        if r_row <= cfg.marginal_tolerance && r_col <= cfg.marginal_tolerance {
            converged = true;
            break;
        }
    }

    let plan = plan_from(&f, &g);
    let scaling_u = Array1::from_iter(f.iter().map(|x| (x / eps).exp()));
    let scaling_v = Array1::from_iter(g.iter().map(|x| (x / eps).exp()));
    Ok(TransportPlan {
        plan,
        scaling_u,
        scaling_v,
        epsilon: eps,
        iterations,
        converged,
        marginal_residual: residual,
    })
}

fn check_shapes(plan: &TransportPlan, c: &CostMatrix) -> Result<()> {
    if plan.dim() != c.dim() {
        return Err(Error::ShapeError(format!(
            "plan is {:?}, cost is {:?}",
            plan.dim(),
            c.dim()
        )));
    }
    Ok(())
}

/// Transport cost `<P, C>` of a plan under a cost matrix.
pub fn transport_cost(plan: &TransportPlan, c: &CostMatrix) -> Result<f64> {
    check_shapes(plan, c)?;
    Ok((&plan.plan * &c.values).sum())
}

/// Full entropic objective `<P, C> + eps * sum P (ln P - 1)`.
///
/// This is the value function the envelope gradient `dOT/dC = P` is exact
/// for; it differs from [`transport_cost`] by the entropy term.
pub fn entropic_objective(plan: &TransportPlan, c: &CostMatrix) -> Result<f64> {
    let cost = transport_cost(plan, c)?;
    let entropy_term: f64 = plan
        .plan
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p.ln() - 1.0))
        .sum();
    Ok(cost + plan.epsilon * entropy_term)
}

/// Row masses `rho_i = sum_j P_ij`.
pub fn row_masses(plan: &TransportPlan) -> Array1<f64> {
    plan.plan.sum_axis(Axis(1))
}

/// Column masses `sum_i P_ij`.
pub fn col_masses(plan: &TransportPlan) -> Array1<f64> {
    plan.plan.sum_axis(Axis(0))
}

/// Row- and column-conditional entropies of the plan, both nonnegative,
/// with the 0 log 0 = 0 convention. Conditionals are taken against the
/// plan's realized marginals.
pub fn conditional_entropies(plan: &TransportPlan) -> (f64, f64) {
    let rho = row_masses(plan);
    let kappa = col_masses(plan);
    let mut h_row = 0.0;
    let mut h_col = 0.0;
    for ((i, j), &p) in plan.plan.indexed_iter() {
        if p > 0.0 {
            h_row -= p * (p / rho[i]).ln();
            h_col -= p * (p / kappa[j]).ln();
        }
    }
    (h_row.max(0.0), h_col.max(0.0))
}

/// Joint Shannon entropy `H(P) = -sum P ln P`.
pub fn plan_entropy(plan: &TransportPlan) -> f64 {
    plan.plan
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}

/// Gradient of the entropic transport objective with respect to the cost
/// matrix: the converged plan itself (envelope property). Warns and returns
/// the current plan when the solver did not converge.
pub fn cost_gradient(plan: &TransportPlan) -> Array2<f64> {
    if !plan.converged {
        log::warn!(
            "cost_gradient on unconverged plan (residual {:.3e} after {} iterations)",
            plan.marginal_residual,
            plan.iterations
        );
    }
    plan.plan.clone()
}
