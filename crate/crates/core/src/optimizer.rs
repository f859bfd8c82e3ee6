//! Gradient descent with an adaptive search horizon and Armijo stepsize,
//! explicit-Euler integration of the gradient flows, multi-start
//! orchestration and the local convergence-rate estimate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::calculus::{
    balance_residual, directional_second_derivative, gradient, gradient_at, hessian_vector_product,
    modified_direction_from, tangent_map, GradientTriple, TANGENT_PINV_CUTOFF,
};
use crate::closed_loop::{lqg_cost_with_margin, ClosedLoopPoint};
use crate::error::{Error, Result};
use crate::matlib::DEFAULT_HURWITZ_MARGIN;
use crate::model::{random_stabilizing, ControllerParams, PlantModel, Triple};
use crate::par::{map_indexed, ExecPolicy};

/// How the per-step curvature `𝒟²_g ℰ` feeding the search horizon is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CurvatureMode {
    #[default]
    Analytic,
    /// Second central difference along `g`.
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub h_max: f64,
    pub f: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub armijo_max_mu: usize,
    pub hurwitz_margin: f64,
    pub rng_seed: u64,
    pub curvature: CurvatureMode,
    /// Budget of random draws per start when searching for a stabilizing
    /// initial controller.
    pub max_stabilize_tries: usize,
    pub exec: ExecPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            h_max: 1.0,
            f: 0.5,
            sigma: 0.9,
            epsilon: 1e-6,
            max_iters: 50_000,
            armijo_max_mu: 60,
            hurwitz_margin: DEFAULT_HURWITZ_MARGIN,
            rng_seed: 0,
            curvature: CurvatureMode::Analytic,
            max_stabilize_tries: 100_000,
            exec: ExecPolicy::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Precondition(msg.to_string()));
        if !(self.h_max > 0.0 && self.h_max.is_finite()) {
            return bad("h_max must be positive and finite");
        }
        if !(self.f > 0.0 && self.f < 1.0) {
            return bad("f must lie in (0, 1)");
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad("sigma must lie in (0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return bad("epsilon must be nonnegative");
        }
        if self.max_iters == 0 || self.armijo_max_mu == 0 || self.max_stabilize_tries == 0 {
            return bad("max_iters, armijo_max_mu and max_stabilize_tries must be positive");
        }
        if self.hurwitz_margin.is_nan() || self.hurwitz_margin < 0.0 {
            return bad("hurwitz_margin must be nonnegative");
        }
        Ok(())
    }
}

/// One row of a descent trace. Row `k` describes the iterate `u_k` and the
/// step taken from it; the terminal row has zero horizon and stepsize.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateRecord {
    pub k: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub horizon: f64,
    pub stepsize: f64,
    pub armijo_j: usize,
    pub u_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientSmall,
    MaxIters,
    ArmijoExhausted,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::GradientSmall => "gradient_small",
            Termination::MaxIters => "max_iters",
            Termination::ArmijoExhausted => "armijo_exhausted",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_u: ControllerParams,
    pub final_cost: f64,
    pub final_grad_norm: f64,
    /// Number of accepted steps.
    pub iterations: usize,
    pub terminated: Termination,
    pub trace: Vec<IterateRecord>,
}

/// `min(h_max, ‖g‖²/|d2|)`, or `h_max` when the curvature vanishes.
pub fn search_horizon(g_norm_sq: f64, d2: f64, h_max: f64) -> f64 {
    let a = d2.abs();
    let h = g_norm_sq / a;
    if a <= f64::MIN_POSITIVE || !h.is_finite() || h <= 0.0 {
        return h_max;
    }
    h_max.min(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmijoStep {
    pub stepsize: f64,
    pub j: usize,
    pub cost: f64,
}

/// Backtracking over `s = h fʲ`, `j = 0, 1, …, max_mu`, on an arbitrary cost
/// along the ray: `cost_at(s)` must return `ℰ(u − s g)` (`+∞` outside the
/// admissible set).
pub fn armijo_search<C>(
    cost_at: C,
    cost_u: f64,
    g_norm_sq: f64,
    h: f64,
    f: f64,
    sigma: f64,
    max_mu: usize,
) -> Result<ArmijoStep>
where
    C: Fn(f64) -> f64,
{
    let mut s = h;
    for j in 0..=max_mu {
        let c = cost_at(s);
        if c.is_finite() && cost_u - c >= sigma * s * g_norm_sq {
            return Ok(ArmijoStep { stepsize: s, j, cost: c });
        }
        s *= f;
    }
    Err(Error::ArmijoExhausted { max_mu })
}

/// Armijo step along `−g` for the LQG cost.
pub fn armijo_step(
    plant: &PlantModel,
    u: &ControllerParams,
    g: &GradientTriple,
    cost_u: f64,
    h: f64,
    cfg: &SolverConfig,
) -> Result<ArmijoStep> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::Precondition("armijo_step: horizon must be positive".into()));
    }
    let g2 = g.norm_squared();
    if g2 == 0.0 {
        return Err(Error::Precondition("armijo_step: gradient vanishes".into()));
    }
    armijo_search(
        |s| lqg_cost_with_margin(plant, &u.axpy(-s, g), cfg.hurwitz_margin).value,
        cost_u,
        g2,
        h,
        cfg.f,
        cfg.sigma,
        cfg.armijo_max_mu,
    )
}

fn curvature_along_gradient(
    plant: &PlantModel,
    u: &ControllerParams,
    g: &GradientTriple,
    ws: &crate::calculus::GradientWorkspace,
    cfg: &SolverConfig,
) -> f64 {
    match cfg.curvature {
        CurvatureMode::Analytic => {
            directional_second_derivative(plant, u, ws, g).unwrap_or(f64::NAN)
        }
        CurvatureMode::FiniteDifference => {
            let t = 1e-4 * (1.0 + u.norm()) / g.norm();
            let c = |s: f64| lqg_cost_with_margin(plant, &u.axpy(s, g), cfg.hurwitz_margin).value;
            (c(t) - 2.0 * ws.cost() + c(-t)) / (t * t)
        }
    }
}

/// Gradient descent from a stabilizing `u0`.
pub fn descend(plant: &PlantModel, u0: &ControllerParams, cfg: &SolverConfig) -> Result<RunResult> {
    cfg.validate()?;
    u0.check_dims(&plant.dims)?;
    let point = ClosedLoopPoint::new(plant, u0, cfg.hurwitz_margin).map_err(|e| match e {
        Error::Unstable { abscissa } => Error::Precondition(format!(
            "initial controller is not stabilizing (spectral abscissa {abscissa:.3e})"
        )),
        other => other,
    })?;

    let mut u = u0.clone();
    let (mut g, mut ws) = gradient_at(plant, &u, point);
    let mut cost = ws.cost();
    let mut trace = Vec::new();
    let mut k = 0;
    let terminated = loop {
        let g2 = g.norm_squared();
        let g_norm = g2.sqrt();
        let u_norm = u.norm();
        let mut row = IterateRecord {
            k,
            cost,
            grad_norm: g_norm,
            horizon: 0.0,
            stepsize: 0.0,
            armijo_j: 0,
            u_norm,
        };
        if g2 == 0.0 {
            trace.push(row);
            break Termination::GradientSmall;
        }
        if k >= cfg.max_iters {
            trace.push(row);
            break Termination::MaxIters;
        }
        let d2 = curvature_along_gradient(plant, &u, &g, &ws, cfg);
        let h = if d2.is_finite() { search_horizon(g2, d2, cfg.h_max) } else { cfg.h_max };
        let step = match armijo_step(plant, &u, &g, cost, h, cfg) {
            Ok(s) => s,
            Err(Error::ArmijoExhausted { .. }) => {
                row.horizon = h;
                trace.push(row);
                break Termination::ArmijoExhausted;
            }
            Err(e) => return Err(e),
        };
        row.horizon = h;
        row.stepsize = step.stepsize;
        row.armijo_j = step.j;
        trace.push(row);

        let small = step.stepsize * g_norm <= cfg.epsilon * u_norm;
        u = u.axpy(-step.stepsize, &g);
        let (g_new, ws_new) = gradient(plant, &u, cfg.hurwitz_margin)?;
        g = g_new;
        ws = ws_new;
        cost = ws.cost();
        k += 1;
        if small {
            trace.push(IterateRecord {
                k,
                cost,
                grad_norm: g.norm(),
                horizon: 0.0,
                stepsize: 0.0,
                armijo_j: 0,
                u_norm: u.norm(),
            });
            break Termination::GradientSmall;
        }
    };
    Ok(RunResult {
        final_grad_norm: g.norm(),
        final_cost: cost,
        final_u: u,
        iterations: k,
        terminated,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMode {
    /// `u̇ = −g(u)`.
    Plain,
    /// `u̇ = γ(u) − g(u)`, which keeps `‖u‖` constant.
    Balanced,
}

impl std::str::FromStr for FlowMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(FlowMode::Plain),
            "balanced" => Ok(FlowMode::Balanced),
            other => Err(Error::Parse(format!("unknown flow mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub step: usize,
    pub tau: f64,
    pub cost: f64,
    pub grad_norm: f64,
    pub u_norm: f64,
    /// Frobenius norm of `sym(Θ₂(2R² − bbᵀ − eeᵀ))`.
    pub balance_residual: f64,
    /// `⟨u, u̇⟩`.
    pub u_dot_udot: f64,
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub mode: FlowMode,
    pub dtau: f64,
    pub records: Vec<FlowRecord>,
    /// Last admissible state.
    pub final_u: ControllerParams,
    /// Balance-residual matrix at the first and last admissible state.
    pub balance_start: crate::matlib::RealMatrix,
    pub balance_end: crate::matlib::RealMatrix,
}

impl FlowTrace {
    /// `‖B(u_N) − B(u_0)‖` for the balance-residual matrix `B`.
    pub fn balance_drift(&self) -> f64 {
        (&self.balance_end - &self.balance_start).norm()
    }

    /// `|‖u_N‖ − ‖u_0‖|`.
    pub fn norm_drift(&self) -> f64 {
        match (self.records.first(), self.records.last()) {
            (Some(a), Some(b)) => (b.u_norm - a.u_norm).abs(),
            _ => 0.0,
        }
    }
}

/// Explicit-Euler integration of the plain or balanced gradient flow.
pub fn integrate_flow(
    plant: &PlantModel,
    u0: &ControllerParams,
    mode: FlowMode,
    dtau: f64,
    steps: usize,
    margin: f64,
) -> Result<FlowTrace> {
    if !(dtau > 0.0 && dtau.is_finite()) {
        return Err(Error::Precondition("dtau must be positive".into()));
    }
    u0.check_dims(&plant.dims)?;
    let theta2 = &plant.theta2;
    let mut u = u0.clone();
    let (mut g, mut ws) = gradient(plant, &u, margin).map_err(|e| match e {
        Error::Unstable { .. } => Error::Precondition("initial controller is not stabilizing".into()),
        other => other,
    })?;
    let balance_start = balance_residual(&u, theta2);
    let mut trace = FlowTrace {
        mode,
        dtau,
        records: Vec::with_capacity(steps + 1),
        final_u: u.clone(),
        balance_end: balance_start.clone(),
        balance_start,
    };
    for step in 0..=steps {
        let velocity = match mode {
            FlowMode::Plain => g.scale(-1.0),
            FlowMode::Balanced => modified_direction_from(&u, &g, theta2)?.dir,
        };
        let balance = balance_residual(&u, theta2);
        trace.records.push(FlowRecord {
            step,
            tau: step as f64 * dtau,
            cost: ws.cost(),
            grad_norm: g.norm(),
            u_norm: u.norm(),
            balance_residual: balance.norm(),
            u_dot_udot: u.inner(&velocity),
        });
        trace.final_u = u.clone();
        trace.balance_end = balance;
        if step == steps {
            break;
        }
        let next = u.axpy(dtau, &velocity);
        match gradient(plant, &next, margin) {
            Ok((g_new, ws_new)) => {
                u = next;
                g = g_new;
                ws = ws_new;
            }
            Err(Error::Unstable { .. }) => {
                return Err(Error::FlowEscaped { step: step + 1, trace: Box::new(trace) });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(trace)
}

/// `1 − 4fσ(1−σ)ℓ/L`.
pub fn rate_from_bounds(f: f64, sigma: f64, ell: f64, big_l: f64) -> f64 {
    1.0 - 4.0 * f * sigma * (1.0 - sigma) * ell / big_l
}

#[derive(Debug, Clone)]
pub struct RateEstimate {
    /// Smallest eigenvalue of the Hessian restricted to the normal space.
    pub ell: f64,
    /// Largest eigenvalue of the Hessian restricted to the normal space.
    pub big_l: f64,
    pub r: f64,
    /// Ascending eigenvalues of the normal-space Hessian.
    pub hessian_spectrum_normal: Vec<f64>,
    pub tangent_dim: usize,
    /// `max |⟨∂²ℰ t, t⟩|` over an orthonormal basis of the tangent space.
    pub tangent_curvature_max: f64,
    /// Relative asymmetry of the assembled Hessian before symmetrization.
    pub hessian_asymmetry: f64,
    /// Number of normal-space eigenvalues below `1e-12·L`, a rank proxy
    /// for the condition that the Hessian kernel equals the tangent space.
    pub normal_near_null: usize,
    pub grad_norm: f64,
    pub warning: Option<String>,
}

/// Dense Hessian in orthonormal coordinates of `U`, one Hessian-vector
/// product per column.
pub fn dense_hessian(
    plant: &PlantModel,
    u: &ControllerParams,
    margin: f64,
    exec: ExecPolicy,
) -> Result<(DMatrix<f64>, f64)> {
    let (_, ws) = gradient(plant, u, margin)?;
    let dims = plant.dims;
    let dim = dims.param_dim();
    let cols = map_indexed(exec, dim, |k| {
        let mut x = DVector::zeros(dim);
        x[k] = 1.0;
        let v = Triple::from_coords(&dims, &x);
        hessian_vector_product(plant, u, &ws, &v).map(|hv| hv.to_coords())
    });
    let mut h = DMatrix::zeros(dim, dim);
    for (k, col) in cols.into_iter().enumerate() {
        h.set_column(k, &col?);
    }
    let asym = (&h - h.transpose()).norm() / h.norm().max(f64::MIN_POSITIVE);
    let hs = (&h + h.transpose()) * 0.5;
    Ok((hs, asym))
}

/// `ℓ`, `L` and the guaranteed linear rate at a near-stationary point.
pub fn estimate_rate(
    plant: &PlantModel,
    u_star: &ControllerParams,
    f: f64,
    sigma: f64,
    margin: f64,
    exec: ExecPolicy,
) -> Result<RateEstimate> {
    if !(f > 0.0 && f < 1.0 && sigma > 0.0 && sigma < 1.0) {
        return Err(Error::Precondition("f and sigma must lie in (0, 1)".into()));
    }
    let (g, _) = gradient(plant, u_star, margin)?;
    let (h, asym) = dense_hessian(plant, u_star, margin, exec)?;
    let dim = h.nrows();

    // Orthonormal tangent basis from the left singular vectors of the lift map.
    let svd = tangent_map(u_star, &plant.theta2).svd(true, false);
    let smax = svd.singular_values.max();
    let left = svd.u.expect("left singular vectors requested");
    let tangent_cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > TANGENT_PINV_CUTOFF * smax)
        .collect();
    let k = tangent_cols.len();
    let tangent = DMatrix::from_fn(dim, k, |i, j| left[(i, tangent_cols[j])]);

    // Normal basis: eigenvectors of I − TTᵀ with unit eigenvalue.
    let proj = DMatrix::<f64>::identity(dim, dim) - &tangent * tangent.transpose();
    let eig = SymmetricEigen::new(proj);
    let normal_idx: Vec<usize> = (0..dim).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    let normal = DMatrix::from_fn(dim, normal_idx.len(), |i, j| eig.eigenvectors[(i, normal_idx[j])]);

    let hn = normal.transpose() * &h * &normal;
    let hn = (&hn + hn.transpose()) * 0.5;
    let mut spectrum: Vec<f64> = SymmetricEigen::new(hn).eigenvalues.iter().copied().collect();
    spectrum.sort_by(|a, b| a.total_cmp(b));
    let ell = *spectrum.first().ok_or_else(|| Error::Numerical("empty normal space".into()))?;
    let big_l = *spectrum.last().expect("nonempty");

    let ht = tangent.transpose() * &h * &tangent;
    let tangent_curvature_max = ht.diagonal().iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let normal_near_null = spectrum.iter().filter(|&&x| x.abs() <= 1e-12 * big_l.abs()).count();

    let warning = if ell < -1e-9 * big_l.abs() {
        Some(format!("normal-space Hessian has a negative eigenvalue {ell:.3e}; not a local minimum"))
    } else {
        None
    };
    Ok(RateEstimate {
        r: rate_from_bounds(f, sigma, ell, big_l),
        ell,
        big_l,
        hessian_spectrum_normal: spectrum,
        tangent_dim: k,
        tangent_curvature_max,
        hessian_asymmetry: asym,
        normal_near_null,
        grad_norm: g.norm(),
        warning,
    })
}

/// Per-start seeds derived deterministically from one master seed.
pub fn start_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..n).map(|_| rng.next_u64()).collect()
}

#[derive(Debug, Clone)]
pub struct StartRun {
    pub seed: u64,
    /// Random draws needed to find the stabilizing initial point.
    pub tries: usize,
    pub u0: ControllerParams,
    pub result: RunResult,
}

#[derive(Debug, Clone)]
pub struct MultiStart {
    /// Successful starts in seed order.
    pub runs: Vec<StartRun>,
    /// Seeds for which no stabilizing start was found.
    pub failed_seeds: Vec<u64>,
    pub best_index: usize,
}

impl MultiStart {
    pub fn best(&self) -> &StartRun {
        &self.runs[self.best_index]
    }
}

/// Independent descents from random stabilizing starts, one per seed.
pub fn multi_start_from_seeds(
    plant: &PlantModel,
    cfg: &SolverConfig,
    seeds: &[u64],
    scale: f64,
) -> Result<MultiStart> {
    cfg.validate()?;
    if seeds.is_empty() {
        return Err(Error::Precondition("at least one start is required".into()));
    }
    let outcomes = map_indexed(cfg.exec, seeds.len(), |i| -> Result<Option<StartRun>> {
        let seed = seeds[i];
        match random_stabilizing(plant, seed, scale, cfg.max_stabilize_tries, cfg.hurwitz_margin) {
            Ok((u0, tries)) => {
                let result = descend(plant, &u0, cfg)?;
                Ok(Some(StartRun { seed, tries, u0, result }))
            }
            Err(Error::StabilizationNotFound { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    });
    let mut runs = Vec::new();
    let mut failed_seeds = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        match o? {
            Some(r) => runs.push(r),
            None => failed_seeds.push(seeds[i]),
        }
    }
    if runs.is_empty() {
        return Err(Error::AllStartsFailed { starts: seeds.len() });
    }
    let best_index = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.result.final_cost.total_cmp(&b.1.result.final_cost))
        .map(|(i, _)| i)
        .expect("nonempty");
    Ok(MultiStart { runs, failed_seeds, best_index })
}

/// [`multi_start_from_seeds`] with seeds derived from `cfg.rng_seed`.
pub fn multi_start(
    plant: &PlantModel,
    cfg: &SolverConfig,
    n_starts: usize,
    scale: f64,
) -> Result<MultiStart> {
    if n_starts == 0 {
        return Err(Error::Precondition("n_starts must be at least 1".into()));
    }
    multi_start_from_seeds(plant, cfg, &start_seeds(cfg.rng_seed, n_starts), scale)
}
