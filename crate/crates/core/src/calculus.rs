//! First and second derivatives of the LQG cost in the Hamiltonian
//! parameterization, and the geometry of the symplectic orbits of
//! equivalent controller realizations.

use nalgebra::{DMatrix, DVector, SVD};

use crate::closed_loop::{block, ClosedLoopPoint};
use crate::error::{Error, Result};
use crate::matlib::{
    asym, block2x2, solve_lyapunov_unchecked, sym, CcrMatrix, LyapunovMethod, RealMatrix,
};
use crate::model::{ControllerParams, ControllerRealization, Dims, PlantModel, Triple};

pub type GradientTriple = Triple;

/// Relative singular-value cutoff for the tangent-space pseudo-inverse.
pub const TANGENT_PINV_CUTOFF: f64 = 1e-12;

/// `‖Π_u(u)‖ ≤ DEGENERATE_BALANCE · ‖u‖` selects the plain-gradient
/// fallback in [`modified_direction`].
pub const DEGENERATE_BALANCE: f64 = 1e-8;

/// Intermediate quantities of a gradient evaluation, reused by the
/// second-order routines.
#[derive(Debug, Clone)]
pub struct GradientWorkspace {
    /// `asym(H₂₂ Θ₂⁻¹)`.
    pub psi: RealMatrix,
    /// `Θ₂⁻¹(H₁₂ᵀE + P₂₁FᵀG + P₂₂cᵀGᵀG)`.
    pub chi: RealMatrix,
    pub point: ClosedLoopPoint,
}

impl GradientWorkspace {
    pub fn realization(&self) -> &ControllerRealization {
        &self.point.realization
    }

    pub fn cost(&self) -> f64 {
        self.point.cost()
    }
}

/// Gradient of the LQG cost at a stabilizing `u`.
pub fn gradient(
    plant: &PlantModel,
    u: &ControllerParams,
    margin: f64,
) -> Result<(GradientTriple, GradientWorkspace)> {
    let point = ClosedLoopPoint::new(plant, u, margin)?;
    Ok(gradient_at(plant, u, point))
}

/// Gradient from an already evaluated closed-loop point.
pub fn gradient_at(
    plant: &PlantModel,
    u: &ControllerParams,
    point: ClosedLoopPoint,
) -> (GradientTriple, GradientWorkspace) {
    let t2 = plant.theta2.matrix();
    let t2_inv = plant.theta2.inverse();
    let j2 = plant.j2.matrix();
    let g = &point.gramians;
    let c = &point.realization.c;

    let h22 = g.h_block(1, 1);
    let h21 = g.h_block(1, 0);
    let h12 = g.h_block(0, 1);
    let q21 = g.q_block(1, 0);
    let q22 = g.q_block(1, 1);
    let p21 = g.p_block(1, 0);
    let p22 = g.p_block(1, 1);

    let psi = asym(&(&h22 * &t2_inv));
    let gtg = plant.g.transpose() * &plant.g;
    let chi = &t2_inv
        * (h12.transpose() * &plant.e
            + &p21 * plant.f.transpose() * &plant.g
            + &p22 * c.transpose() * &gtg);

    let d_r = sym(&(t2 * &h22)) * -2.0;
    let d_b = &q21 * &plant.e * &plant.d_ctrl + &q22 * &u.b
        - &psi * &u.b * j2
        - &chi * &plant.d_ctrl * j2;
    let d_e = &h21 * plant.c.transpose() + &q21 * &plant.b * plant.d.transpose() + &q22 * &u.e
        - &psi * &u.e * plant.djd();

    (Triple { r: d_r, b: d_b, e: d_e }, GradientWorkspace { psi, chi, point })
}

/// Which linearised observability equation to use for the directional
/// derivative of `Q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ObservabilityLinearization {
    /// Derivative of `𝒜ᵀQ + Q𝒜 + 𝒞ᵀ𝒞 = 0`.
    Exact,
    /// `𝒜ᵀX + X𝒜 + 2sym(𝒜ᵀX + 𝒞ᵀ𝒟𝒞) = 0`, which drops the `𝒟𝒜` terms.
    #[cfg_attr(not(test), allow(dead_code))]
    Misprinted,
}

/// Directional derivative `𝒟_v g` of the gradient, i.e. the Hessian applied
/// to `v`.
pub fn hessian_vector_product(
    plant: &PlantModel,
    u: &ControllerParams,
    ws: &GradientWorkspace,
    v: &Triple,
) -> Result<GradientTriple> {
    gradient_derivative(plant, u, ws, v, ObservabilityLinearization::Exact)
}

pub(crate) fn gradient_derivative(
    plant: &PlantModel,
    u: &ControllerParams,
    ws: &GradientWorkspace,
    v: &Triple,
    dq_form: ObservabilityLinearization,
) -> Result<GradientTriple> {
    v.check_dims(&plant.dims)?;
    let dims = plant.dims;
    let n = dims.n;
    let t2 = plant.theta2.matrix();
    let t2_inv = plant.theta2.inverse();
    let j2 = plant.j2.matrix();
    let djd = plant.djd();
    let sys = &ws.point.system;
    let gram = &ws.point.gramians;
    let c = &ws.point.realization.c;

    // Directional derivatives of the controller and closed-loop matrices.
    let dc = -(&plant.d_ctrl * j2 * v.b.transpose() * &t2_inv);
    let da = t2 * &v.r * 2.0
        - asym(&(&v.e * &djd * u.e.transpose() + &v.b * j2 * u.b.transpose())) * &t2_inv;
    let d_sys_a = block2x2(
        &RealMatrix::zeros(n, n),
        &(&plant.e * &dc),
        &(&v.e * &plant.c),
        &da,
    );
    let d_sys_b = block2x2(
        &RealMatrix::zeros(n, dims.m1),
        &RealMatrix::zeros(n, dims.m2),
        &(&v.e * &plant.d),
        &v.b,
    );
    let mut d_sys_c = RealMatrix::zeros(dims.r, 2 * n);
    d_sys_c.view_mut((0, n), (dims.r, n)).copy_from(&(&plant.g * &dc));

    let (p, q) = (&gram.p, &gram.q);
    let forcing_p = &d_sys_a * p
        + p * d_sys_a.transpose()
        + &d_sys_b * sys.b.transpose()
        + &sys.b * d_sys_b.transpose();
    let dp = solve_lyapunov_unchecked(&sys.a, &forcing_p, LyapunovMethod::Kronecker)?;
    let dq = match dq_form {
        ObservabilityLinearization::Exact => {
            let forcing_q = d_sys_a.transpose() * q
                + q * &d_sys_a
                + d_sys_c.transpose() * &sys.c
                + sys.c.transpose() * &d_sys_c;
            solve_lyapunov_unchecked(&sys.a.transpose(), &forcing_q, LyapunovMethod::Kronecker)?
        }
        ObservabilityLinearization::Misprinted => {
            let forcing_q = sym(&(sys.c.transpose() * &d_sys_c));
            solve_lyapunov_unchecked(&sys.a.transpose(), &forcing_q, LyapunovMethod::Kronecker)?
        }
    };
    let dh = &dq * p + q * &dp;

    let dh22 = block(&dh, 1, 1);
    let dh21 = block(&dh, 1, 0);
    let dh12 = block(&dh, 0, 1);
    let dq21 = block(&dq, 1, 0);
    let dq22 = block(&dq, 1, 1);
    let dp21 = block(&dp, 1, 0);
    let dp22 = block(&dp, 1, 1);
    let q22 = gram.q_block(1, 1);
    let p22 = gram.p_block(1, 1);

    let gtg = plant.g.transpose() * &plant.g;
    let dpsi = asym(&(&dh22 * &t2_inv));
    let dchi = &t2_inv
        * (dh12.transpose() * &plant.e
            + &dp21 * plant.f.transpose() * &plant.g
            + &dp22 * c.transpose() * &gtg
            + &p22 * dc.transpose() * &gtg);

    let d_r = sym(&(t2 * &dh22)) * -2.0;
    let d_b = &dq21 * &plant.e * &plant.d_ctrl + &dq22 * &u.b + &q22 * &v.b
        - (&dpsi * &u.b + &ws.psi * &v.b) * j2
        - &dchi * &plant.d_ctrl * j2;
    let d_e = &dh21 * plant.c.transpose()
        + &dq21 * &plant.b * plant.d.transpose()
        + &dq22 * &u.e
        + &q22 * &v.e
        - (&dpsi * &u.e + &ws.psi * &v.e) * &djd;
    Ok(Triple { r: d_r, b: d_b, e: d_e })
}

/// Second-order Gâteaux derivative `∂²_s ℰ(u + s v)` at `s = 0`.
pub fn directional_second_derivative(
    plant: &PlantModel,
    u: &ControllerParams,
    ws: &GradientWorkspace,
    v: &Triple,
) -> Result<f64> {
    Ok(hessian_vector_product(plant, u, ws, v)?.inner(v))
}

/// Convenience wrapper that evaluates the workspace first.
pub fn second_derivative_at(
    plant: &PlantModel,
    u: &ControllerParams,
    v: &Triple,
    margin: f64,
) -> Result<f64> {
    let (_, ws) = gradient(plant, u, margin)?;
    directional_second_derivative(plant, u, &ws, v)
}

/// `⟨∂²ℰ(u) v, w⟩` by polarization of the quadratic form.
pub fn hessian_quadratic_form(
    plant: &PlantModel,
    u: &ControllerParams,
    ws: &GradientWorkspace,
    v: &Triple,
    w: &Triple,
) -> Result<f64> {
    let plus = directional_second_derivative(plant, u, ws, &v.add(w))?;
    let minus = directional_second_derivative(plant, u, ws, &v.sub(w))?;
    Ok((plus - minus) / 4.0)
}

/// `‖sym(Θ₂(2Rρ − βbᵀ − εeᵀ))‖`: zero exactly when `w = (ρ, β, ε)` is
/// normal to the orbit through `u`.
pub fn normal_residual(u: &ControllerParams, w: &Triple, theta2: &CcrMatrix) -> f64 {
    let m = &u.r * &w.r * 2.0 - &w.b * u.b.transpose() - &w.e * u.e.transpose();
    sym(&(theta2.matrix() * m)).norm()
}

/// Orthogonality residual of a gradient to the symplectic orbit.
pub fn orthogonality_residual(u: &ControllerParams, g: &GradientTriple, theta2: &CcrMatrix) -> f64 {
    normal_residual(u, g, theta2)
}

/// `sym(Θ₂(2R² − bbᵀ − eeᵀ))`; vanishes for norm-balanced realizations and
/// is conserved along the plain gradient flow.
pub fn balance_residual(u: &ControllerParams, theta2: &CcrMatrix) -> RealMatrix {
    let m = &u.r * &u.r * 2.0 - &u.b * u.b.transpose() - &u.e * u.e.transpose();
    sym(&(theta2.matrix() * m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub triple: Triple,
    /// Symmetric generator `φ` when the vector was obtained by lifting.
    pub generator: Option<RealMatrix>,
}

fn lift_unchecked(u: &ControllerParams, phi: &RealMatrix, theta2: &CcrMatrix) -> Triple {
    let sigma = theta2.matrix() * phi;
    Triple {
        r: sym(&(&u.r * &sigma)) * -2.0,
        b: &sigma * &u.b,
        e: &sigma * &u.e,
    }
}

/// `(−2sym(RΘ₂φ), Θ₂φb, Θ₂φe)`, the infinitesimal action of the
/// Hamiltonian generator `Θ₂φ`.
pub fn tangent_lift(
    u: &ControllerParams,
    phi: &RealMatrix,
    theta2: &CcrMatrix,
) -> Result<TangentVector> {
    let n = u.r.nrows();
    if phi.shape() != (n, n) {
        return Err(Error::Dimension(format!("tangent_lift: phi must be {n}x{n}")));
    }
    if (phi - phi.transpose()).norm() > 1e-12 * (1.0 + phi.norm()) {
        return Err(Error::Precondition("tangent_lift: phi must be symmetric".into()));
    }
    Ok(TangentVector { triple: lift_unchecked(u, phi, theta2), generator: Some(phi.clone()) })
}

/// Orthonormal basis of symmetric `n × n` matrices: `E_ii`, then
/// `(E_ij + E_ji)/√2` for `i < j`.
pub fn symmetric_basis(n: usize) -> Vec<RealMatrix> {
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        let mut m = RealMatrix::zeros(n, n);
        m[(i, i)] = 1.0;
        out.push(m);
    }
    let h = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..n {
        for i in 0..j {
            let mut m = RealMatrix::zeros(n, n);
            m[(i, j)] = h;
            m[(j, i)] = h;
            out.push(m);
        }
    }
    out
}

/// Matrix of the lift map in orthonormal coordinates: column `k` holds the
/// coordinates of the lift of the `k`-th symmetric basis matrix.
pub fn tangent_map(u: &ControllerParams, theta2: &CcrMatrix) -> DMatrix<f64> {
    let n = u.r.nrows();
    let basis = symmetric_basis(n);
    let dim = n * (n + 1) / 2 + u.b.len() + u.e.len();
    let mut m = DMatrix::zeros(dim, basis.len());
    for (k, phi) in basis.iter().enumerate() {
        m.set_column(k, &lift_unchecked(u, phi, theta2).to_coords());
    }
    m
}

/// Numerical rank of the lift map, i.e. the dimension of the tangent space.
pub fn tangent_dim(u: &ControllerParams, theta2: &CcrMatrix) -> usize {
    let sv = tangent_map(u, theta2).singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > TANGENT_PINV_CUTOFF * smax).count()
}

#[derive(Debug, Clone)]
pub struct Projection {
    /// `Π_u v`.
    pub tangent: TangentVector,
    /// `Π_u⊥ v = v − Π_u v`.
    pub normal: Triple,
    /// Least-squares generator of the tangent part.
    pub phi: RealMatrix,
}

fn dims_of(u: &ControllerParams) -> Dims {
    Dims { n: u.r.nrows(), m1: 0, m2: u.b.ncols(), p1: u.e.ncols(), p2: 0, r: 0 }
}

/// Orthogonal decomposition of `v` into tangent and normal parts with
/// respect to the orbit through `u`.
pub fn project_tangent(u: &ControllerParams, v: &Triple, theta2: &CcrMatrix) -> Result<Projection> {
    let dims = dims_of(u);
    v.check_dims(&dims)?;
    let n = dims.n;
    let basis = symmetric_basis(n);
    let t = tangent_map(u, theta2);
    let svd = SVD::new(t, true, true);
    let smax = svd.singular_values.max();
    let phi_coords: DVector<f64> = if smax == 0.0 {
        DVector::zeros(basis.len())
    } else {
        svd.solve(&v.to_coords(), TANGENT_PINV_CUTOFF * smax)
            .map_err(|e| Error::Numerical(format!("tangent projection: {e}")))?
    };
    let mut phi = RealMatrix::zeros(n, n);
    for (k, b) in basis.iter().enumerate() {
        phi += b * phi_coords[k];
    }
    let tangent = lift_unchecked(u, &phi, theta2);
    let normal = v.sub(&tangent);
    Ok(Projection { tangent: TangentVector { triple: tangent, generator: Some(phi.clone()) }, normal, phi })
}

#[derive(Debug, Clone)]
pub struct ModifiedDirection {
    /// `γ(u) − g(u)`.
    pub dir: Triple,
    pub gamma: TangentVector,
    /// Set when `u` is (numerically) norm-balanced and `dir = −g`.
    pub fallback: bool,
}

/// Norm-preserving descent direction from a precomputed gradient: the
/// minimum-norm tangent correction `γ` making `⟨u, γ − g⟩ = 0`.
pub fn modified_direction_from(
    u: &ControllerParams,
    g: &GradientTriple,
    theta2: &CcrMatrix,
) -> Result<ModifiedDirection> {
    let proj = project_tangent(u, u, theta2)?;
    let pu = &proj.tangent.triple;
    let pu_norm = pu.norm();
    if pu_norm <= DEGENERATE_BALANCE * u.norm() || pu_norm == 0.0 {
        let zero = Triple { r: u.r.scale(0.0), b: u.b.scale(0.0), e: u.e.scale(0.0) };
        return Ok(ModifiedDirection {
            dir: g.scale(-1.0),
            gamma: TangentVector { triple: zero, generator: None },
            fallback: true,
        });
    }
    let coef = proj.normal.inner(g) / (pu_norm * pu_norm);
    let gamma = pu.scale(coef);
    Ok(ModifiedDirection {
        dir: gamma.sub(g),
        gamma: TangentVector { triple: gamma, generator: Some(proj.phi * coef) },
        fallback: false,
    })
}

pub fn modified_direction(
    plant: &PlantModel,
    u: &ControllerParams,
    margin: f64,
) -> Result<ModifiedDirection> {
    let (g, _) = gradient(plant, u, margin)?;
    modified_direction_from(u, &g, &plant.theta2)
}

/// Symplectic similarity `(Σ⁻ᵀRΣ⁻¹, Σb, Σe)`.
pub fn apply_symplectic(
    u: &ControllerParams,
    sigma: &RealMatrix,
    theta2: &CcrMatrix,
) -> Result<ControllerParams> {
    let n = u.r.nrows();
    if sigma.shape() != (n, n) {
        return Err(Error::Dimension(format!("apply_symplectic: Sigma must be {n}x{n}")));
    }
    let t = theta2.matrix();
    let res = (sigma * t * sigma.transpose() - t).norm();
    if res > 1e-9 * (1.0 + sigma.norm_squared()) {
        return Err(Error::Precondition(format!(
            "apply_symplectic: Sigma is not symplectic (residual {res:.3e})"
        )));
    }
    // Σ⁻¹ = Θ Σᵀ Θ⁻¹ for symplectic Σ.
    let sigma_inv = t * sigma.transpose() * theta2.inverse();
    let r = sigma_inv.transpose() * &u.r * &sigma_inv;
    Ok(Triple::new(r, sigma * &u.b, sigma * &u.e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_loop::lqg_cost;
    use crate::fixtures;
    use crate::matlib::{symplectic_exp, DEFAULT_HURWITZ_MARGIN};
    use crate::model::random_controller;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const M: f64 = DEFAULT_HURWITZ_MARGIN;

    fn stabilizing(plant: &PlantModel, seed: u64) -> ControllerParams {
        let fx = fixtures::Fixture::ALL.into_iter().find(|f| f.plant().a == plant.a).unwrap();
        fx.sample_stabilizing(seed).unwrap()
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> RealMatrix {
        sym(&RealMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)))
    }

    fn cost(plant: &PlantModel, u: &Triple) -> f64 {
        lqg_cost(plant, u).value
    }

    #[test]
    fn gradient_matches_central_differences_n2() {
        let plant = fixtures::example8_plant();
        let u = stabilizing(&plant, 3);
        let (g, _) = gradient(&plant, &u, M).unwrap();
        let dims = plant.dims;
        let x0 = u.to_coords();
        let gc = g.to_coords();
        for k in 0..x0.len() {
            let h = 1e-6 * (1.0 + x0[k].abs());
            let mut xp = x0.clone();
            xp[k] += h;
            let mut xm = x0.clone();
            xm[k] -= h;
            let fd = (cost(&plant, &Triple::from_coords(&dims, &xp))
                - cost(&plant, &Triple::from_coords(&dims, &xm)))
                / (2.0 * h);
            let rel = (fd - gc[k]).abs() / gc[k].abs().max(1e-3 * g.norm());
            assert!(rel < 1e-5, "coord {k}: fd {fd} vs analytic {}", gc[k]);
        }
        assert_eq!(g.r, g.r.transpose());
    }

    #[test]
    fn gradient_is_small_at_reported_optimum() {
        let plant = fixtures::example8_plant();
        let (g_opt, _) = gradient(&plant, &fixtures::example8_optimum(), M).unwrap();
        for seed in 0..5 {
            let (g0, _) = gradient(&plant, &stabilizing(&plant, seed), M).unwrap();
            assert!(g_opt.norm() < 0.1 * g0.norm(), "{} vs {}", g_opt.norm(), g0.norm());
        }
    }

    #[test]
    fn gradient_rejects_unstable_point() {
        let plant = fixtures::example8_plant();
        assert!(matches!(
            gradient(&plant, &plant.zero_controller(), M),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn second_derivative_matches_finite_differences_and_printed_form_does_not() {
        let plant = fixtures::example10_plant();
        let mut worst_printed: f64 = 0.0;
        for seed in 0..5 {
            let u = stabilizing(&plant, seed);
            let v = random_controller(&plant, 100 + seed, 1.0);
            let (_, ws) = gradient(&plant, &u, M).unwrap();
            let exact = directional_second_derivative(&plant, &u, &ws, &v).unwrap();
            let h = 1e-4 * (1.0 + u.norm()) / (1.0 + v.norm());
            let fd = (cost(&plant, &u.axpy(h, &v)) - 2.0 * cost(&plant, &u) + cost(&plant, &u.axpy(-h, &v)))
                / (h * h);
            assert!((exact - fd).abs() < 1e-4 * exact.abs().max(1e-8), "{exact} vs {fd}");
            let printed = gradient_derivative(&plant, &u, &ws, &v, ObservabilityLinearization::Misprinted)
                .unwrap()
                .inner(&v);
            worst_printed = worst_printed.max((printed - fd).abs() / fd.abs());
        }
        assert!(worst_printed > 1e-2, "misprinted ALE unexpectedly agrees ({worst_printed})");
    }

    #[test]
    fn second_derivative_is_even_and_quadratic() {
        let plant = fixtures::example8_plant();
        let u = stabilizing(&plant, 9);
        let v = random_controller(&plant, 19, 1.0);
        let (_, ws) = gradient(&plant, &u, M).unwrap();
        let d = directional_second_derivative(&plant, &u, &ws, &v).unwrap();
        let dm = directional_second_derivative(&plant, &u, &ws, &v.scale(-1.0)).unwrap();
        let d3 = directional_second_derivative(&plant, &u, &ws, &v.scale(3.0)).unwrap();
        assert_eq!(d, dm);
        assert!((d3 - 9.0 * d).abs() <= 1e-10 * d.abs() * 9.0);
    }

    #[test]
    fn hessian_form_symmetric_and_bilinear() {
        let plant = fixtures::example9_plant();
        let u = stabilizing(&plant, 2);
        let (_, ws) = gradient(&plant, &u, M).unwrap();
        let v = random_controller(&plant, 31, 1.0);
        let w = random_controller(&plant, 32, 1.0);
        let z = random_controller(&plant, 33, 1.0);
        let vw = hessian_quadratic_form(&plant, &u, &ws, &v, &w).unwrap();
        let wv = hessian_quadratic_form(&plant, &u, &ws, &w, &v).unwrap();
        let scale = hessian_quadratic_form(&plant, &u, &ws, &v, &v).unwrap().abs()
            + hessian_quadratic_form(&plant, &u, &ws, &w, &w).unwrap().abs();
        assert!((vw - wv).abs() <= 1e-9 * scale);
        let vv = hessian_quadratic_form(&plant, &u, &ws, &v, &v).unwrap();
        let d2 = directional_second_derivative(&plant, &u, &ws, &v).unwrap();
        assert!((vv - d2).abs() <= 1e-10 * d2.abs());
        let comb = v.scale(2.0).axpy(-0.5, &z);
        let lhs = hessian_quadratic_form(&plant, &u, &ws, &comb, &w).unwrap();
        let rhs = 2.0 * vw - 0.5 * hessian_quadratic_form(&plant, &u, &ws, &z, &w).unwrap();
        assert!((lhs - rhs).abs() <= 1e-9 * scale * 4.0);
        // Hessian-vector product agrees with the polarized form.
        let hv = hessian_vector_product(&plant, &u, &ws, &v).unwrap();
        assert!((hv.inner(&w) - vw).abs() <= 1e-9 * scale);
    }

    #[test]
    fn gradient_is_orthogonal_to_orbit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for plant in [fixtures::example8_plant(), fixtures::example9_plant(), fixtures::example10_plant()] {
            for seed in 0..10 {
                let u = stabilizing(&plant, seed);
                let (g, _) = gradient(&plant, &u, M).unwrap();
                let res = orthogonality_residual(&u, &g, &plant.theta2);
                assert!(res < 1e-8 * (1.0 + u.norm()) * (1.0 + g.norm()), "residual {res}");
                let phi = random_sym(&mut rng, plant.dims.n);
                let lift = tangent_lift(&u, &phi, &plant.theta2).unwrap().triple;
                let cos = g.inner(&lift).abs() / (g.norm() * lift.norm() + 1e-300);
                assert!(cos < 1e-8, "cosine {cos}");
            }
        }
    }

    #[test]
    fn random_triples_are_not_normal() {
        let plant = fixtures::example9_plant();
        let u = stabilizing(&plant, 4);
        for seed in 0..10 {
            let w = random_controller(&plant, 500 + seed, 1.0);
            assert!(orthogonality_residual(&u, &w, &plant.theta2) > 1e-2);
        }
        let zero = plant.zero_controller();
        assert_eq!(orthogonality_residual(&zero, &w_of(&plant), &plant.theta2), 0.0);
    }

    fn w_of(plant: &PlantModel) -> Triple {
        random_controller(plant, 77, 1.0)
    }

    #[test]
    fn tangent_lift_basics() {
        let plant = fixtures::example9_plant();
        let u = random_controller(&plant, 1, 1.0);
        let t2 = &plant.theta2;
        let zero = tangent_lift(&u, &RealMatrix::zeros(4, 4), t2).unwrap().triple;
        assert_eq!(zero.norm(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (p1, p2) = (random_sym(&mut rng, 4), random_sym(&mut rng, 4));
        let sum = tangent_lift(&u, &(&p1 + &p2), t2).unwrap().triple;
        let parts = tangent_lift(&u, &p1, t2).unwrap().triple.add(&tangent_lift(&u, &p2, t2).unwrap().triple);
        assert!(sum.sub(&parts).norm() < 1e-12);
        let mut bad = p1.clone();
        bad[(0, 1)] += 1.0;
        assert!(tangent_lift(&u, &bad, t2).is_err());
    }

    #[test]
    fn tangent_lift_is_derivative_of_orbit() {
        let plant = fixtures::example8_plant();
        let u = random_controller(&plant, 3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = random_sym(&mut rng, 2);
        let h = 1e-6;
        let up = apply_symplectic(&u, &symplectic_exp(&plant.theta2, &phi, h).unwrap(), &plant.theta2).unwrap();
        let um = apply_symplectic(&u, &symplectic_exp(&plant.theta2, &phi, -h).unwrap(), &plant.theta2).unwrap();
        let fd = up.sub(&um).scale(0.5 / h);
        let lift = tangent_lift(&u, &phi, &plant.theta2).unwrap().triple;
        assert!(fd.sub(&lift).norm() < 1e-7 * (1.0 + lift.norm()));
    }

    #[test]
    fn projection_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for plant in [fixtures::example8_plant(), fixtures::example9_plant()] {
            let n = plant.dims.n;
            let t2 = &plant.theta2;
            for seed in 0..10 {
                let u = stabilizing(&plant, seed);
                let v = random_controller(&plant, 900 + seed, 1.0);
                let proj = project_tangent(&u, &v, t2).unwrap();
                let pt = &proj.tangent.triple;
                let vn2 = v.norm_squared();
                assert!(pt.inner(&proj.normal).abs() <= 1e-10 * vn2);
                assert!((pt.norm_squared() + proj.normal.norm_squared() - vn2).abs() <= 1e-10 * vn2);
                let scale = (1.0 + u.norm()) * (1.0 + v.norm());
                assert!(normal_residual(&u, &proj.normal, t2) < 1e-8 * scale);

                let inside = tangent_lift(&u, &random_sym(&mut rng, n), t2).unwrap().triple;
                let p2 = project_tangent(&u, &inside, t2).unwrap();
                assert!(p2.normal.norm() <= 1e-10 * inside.norm());
                assert!(p2.tangent.triple.sub(&inside).norm() <= 1e-10 * inside.norm());

                let (g, _) = gradient(&plant, &u, M).unwrap();
                let pg = project_tangent(&u, &g, t2).unwrap();
                assert!(pg.tangent.triple.norm() <= 1e-8 * g.norm());
            }
        }
    }

    #[test]
    fn tangent_dimension_bounds() {
        for plant in [fixtures::example8_plant(), fixtures::example9_plant()] {
            let dims = plant.dims;
            let u = stabilizing(&plant, 1);
            let k = tangent_dim(&u, &plant.theta2);
            assert!(k <= dims.n * (dims.n + 1) / 2);
            assert!(k < dims.param_dim());
            // Generic points have an injective lift.
            assert_eq!(k, dims.n * (dims.n + 1) / 2);
        }
        let plant = fixtures::example8_plant();
        assert_eq!(tangent_dim(&plant.zero_controller(), &plant.theta2), 0);
    }

    #[test]
    fn balance_residual_examples() {
        let plant = fixtures::example9_plant();
        let t2 = &plant.theta2;
        assert_eq!(balance_residual(&plant.zero_controller(), t2).norm(), 0.0);
        let mut u = random_controller(&plant, 8, 1.0);
        u.r = RealMatrix::zeros(4, 4);
        let expected = sym(&(t2.matrix() * (&u.b * u.b.transpose() + &u.e * u.e.transpose()))) * -1.0;
        let got = balance_residual(&u, t2);
        assert!((got - &expected).norm() < 1e-12);
        assert!(expected.norm() > 1e-3);
    }

    #[test]
    fn modified_direction_contracts() {
        for plant in [fixtures::example8_plant(), fixtures::example10_plant()] {
            for seed in 0..10 {
                let u = stabilizing(&plant, seed);
                let (g, _) = gradient(&plant, &u, M).unwrap();
                let md = modified_direction_from(&u, &g, &plant.theta2).unwrap();
                assert!(!md.fallback);
                let scale = u.norm() * md.dir.norm();
                assert!(u.inner(&md.dir).abs() <= 1e-8 * scale);
                let g2 = g.norm_squared();
                assert!((g.inner(&md.dir) + g2).abs() <= 1e-8 * g2);
                let pg = project_tangent(&u, &md.gamma.triple, &plant.theta2).unwrap();
                assert!(pg.normal.norm() <= 1e-10 * md.gamma.triple.norm().max(1e-300));
            }
        }
    }

    #[test]
    fn modified_direction_falls_back_when_balanced() {
        // With R = 0 and bbᵀ + eeᵀ = I the balance residual is −sym(Θ₂) = 0.
        let plant = fixtures::example8_plant();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = Triple::new(RealMatrix::zeros(2, 2), RealMatrix::identity(2, 2) * s, RealMatrix::identity(2, 2) * s);
        assert!(balance_residual(&u, &plant.theta2).norm() < 1e-15);
        let g = random_controller(&plant, 1, 1.0);
        let md = modified_direction_from(&u, &g, &plant.theta2).unwrap();
        assert!(md.fallback);
        assert_eq!(md.dir, g.scale(-1.0));
    }

    #[test]
    fn symplectic_action_identity_homomorphism_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let plant = fixtures::example9_plant();
        let t2 = &plant.theta2;
        let u = stabilizing(&plant, 5);
        assert!(apply_symplectic(&u, &RealMatrix::identity(4, 4), t2).unwrap().sub(&u).norm() < 1e-14);
        for _ in 0..10 {
            let s1 = symplectic_exp(t2, &random_sym(&mut rng, 4), rng.random_range(-1.0..1.0) / 4.0).unwrap();
            let s2 = symplectic_exp(t2, &random_sym(&mut rng, 4), rng.random_range(-1.0..1.0) / 4.0).unwrap();
            let lhs = apply_symplectic(&apply_symplectic(&u, &s2, t2).unwrap(), &s1, t2).unwrap();
            let rhs = apply_symplectic(&u, &(&s1 * &s2), t2).unwrap();
            assert!(lhs.sub(&rhs).norm() <= 1e-10 * (1.0 + u.norm()));
            let e0 = cost(&plant, &u);
            let e1 = cost(&plant, &apply_symplectic(&u, &s1, t2).unwrap());
            assert!((e1 - e0).abs() <= 1e-8 * e0);
        }
        let not_symplectic = RealMatrix::identity(4, 4) * 2.0;
        assert!(apply_symplectic(&u, &not_symplectic, t2).is_err());
    }
}
