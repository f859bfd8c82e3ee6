//! Closed-loop assembly, Gramians, the Hankelian and the LQG cost.

use crate::error::{Error, Result};
use crate::matlib::{
    block2x2, block_diag, frob_inner, hermitian_min_eig, is_hurwitz, kron_sum,
    solve_lyapunov_unchecked, vec, LyapunovMethod, RealMatrix, DEFAULT_HURWITZ_MARGIN,
};
use crate::model::{realize_controller, ControllerParams, ControllerRealization, PlantModel};

/// Relative residual accepted from the Gramian solves.
pub const DEFAULT_GRAMIAN_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub c: RealMatrix,
    /// `blkdiag(Θ₁, Θ₂)`.
    pub theta: RealMatrix,
    /// `blkdiag(J₁, J₂)`.
    pub j: RealMatrix,
    pub hurwitz: bool,
    pub spectral_abscissa: f64,
}

/// `𝒜 = [[A, Ec], [eC, a]]`, `ℬ = [[B, Ed], [eD, b]]`, `𝒞 = [F, Gc]`.
pub fn assemble(
    plant: &PlantModel,
    real: &ControllerRealization,
    margin: f64,
) -> Result<ClosedLoopSystem> {
    let s = assemble_matrices(plant, real)?;
    let verdict = is_hurwitz(&s.0, margin)?;
    Ok(ClosedLoopSystem {
        a: s.0,
        b: s.1,
        c: s.2,
        theta: block_diag(plant.theta1.matrix(), plant.theta2.matrix()),
        j: block_diag(plant.j1.matrix(), plant.j2.matrix()),
        hurwitz: verdict.is_hurwitz,
        spectral_abscissa: verdict.spectral_abscissa,
    })
}

fn assemble_matrices(
    plant: &PlantModel,
    real: &ControllerRealization,
) -> Result<(RealMatrix, RealMatrix, RealMatrix)> {
    let dims = plant.dims;
    let shapes = [
        (real.a.shape(), (dims.n, dims.n), "a"),
        (real.b.shape(), (dims.n, dims.m2), "b"),
        (real.c.shape(), (dims.p2, dims.n), "c"),
        (real.e.shape(), (dims.n, dims.p1), "e"),
        (real.d.shape(), (dims.p2, dims.m2), "d"),
    ];
    for (got, want, name) in shapes {
        if got != want {
            return Err(Error::Dimension(format!(
                "controller {name}: expected {}x{}, got {}x{}",
                want.0, want.1, got.0, got.1
            )));
        }
    }
    let a = block2x2(&plant.a, &(&plant.e * &real.c), &(&real.e * &plant.c), &real.a);
    let b = block2x2(&plant.b, &(&plant.e * &real.d), &(&real.e * &plant.d), &real.b);
    let mut c = RealMatrix::zeros(dims.r, 2 * dims.n);
    c.view_mut((0, 0), (dims.r, dims.n)).copy_from(&plant.f);
    c.view_mut((0, dims.n), (dims.r, dims.n)).copy_from(&(&plant.g * &real.c));
    Ok((a, b, c))
}

/// `n × n` block `(i, j)` (zero-based) of a `2n × 2n` matrix.
pub fn block(m: &RealMatrix, i: usize, j: usize) -> RealMatrix {
    let n = m.nrows() / 2;
    m.view((i * n, j * n), (n, n)).into_owned()
}

#[derive(Debug, Clone)]
pub struct GramianSet {
    /// Controllability Gramian.
    pub p: RealMatrix,
    /// Observability Gramian.
    pub q: RealMatrix,
    /// Hankelian `QP` (not symmetric in general).
    pub h: RealMatrix,
}

impl GramianSet {
    pub fn p_block(&self, i: usize, j: usize) -> RealMatrix {
        block(&self.p, i, j)
    }
    pub fn q_block(&self, i: usize, j: usize) -> RealMatrix {
        block(&self.q, i, j)
    }
    pub fn h_block(&self, i: usize, j: usize) -> RealMatrix {
        block(&self.h, i, j)
    }
}

/// Solves `𝒜P + P𝒜ᵀ + ℬℬᵀ = 0` and `𝒜ᵀQ + Q𝒜 + 𝒞ᵀ𝒞 = 0`; `tol` bounds the
/// relative residual of each solve.
pub fn gramians(sys: &ClosedLoopSystem, tol: f64) -> Result<GramianSet> {
    gramians_with(sys, tol, LyapunovMethod::Kronecker)
}

pub fn gramians_with(
    sys: &ClosedLoopSystem,
    tol: f64,
    method: LyapunovMethod,
) -> Result<GramianSet> {
    if !sys.hurwitz {
        return Err(Error::Unstable { abscissa: sys.spectral_abscissa });
    }
    let bb = &sys.b * sys.b.transpose();
    let cc = sys.c.transpose() * &sys.c;
    let at = sys.a.transpose();
    let p = solve_lyapunov_unchecked(&sys.a, &bb, method)?;
    let q = solve_lyapunov_unchecked(&at, &cc, method)?;
    let an = sys.a.norm();
    let rp = (&sys.a * &p + &p * &at + &bb).norm() / (2.0 * an * p.norm() + bb.norm());
    let rq = (&at * &q + &q * &sys.a + &cc).norm() / (2.0 * an * q.norm() + cc.norm());
    if !(rp <= tol && rq <= tol) {
        return Err(Error::Numerical(format!(
            "Gramian residuals too large (P: {rp:.3e}, Q: {rq:.3e})"
        )));
    }
    let h = &q * &p;
    Ok(GramianSet { p, q, h })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostValue {
    /// `+∞` for a non-stabilizing controller, never NaN.
    pub value: f64,
    pub stabilizing: bool,
}

impl CostValue {
    pub const UNSTABLE: CostValue = CostValue { value: f64::INFINITY, stabilizing: false };
}

/// Everything evaluated at one stabilizing point: realization, closed loop,
/// Gramians.
#[derive(Debug, Clone)]
pub struct ClosedLoopPoint {
    pub realization: ControllerRealization,
    pub system: ClosedLoopSystem,
    pub gramians: GramianSet,
}

impl ClosedLoopPoint {
    /// Errors with [`Error::Unstable`] if `u` is not stabilizing under the
    /// given margin.
    pub fn new(plant: &PlantModel, u: &ControllerParams, margin: f64) -> Result<Self> {
        let realization = realize_controller(plant, u)?;
        let system = assemble(plant, &realization, margin)?;
        let gramians = gramians(&system, DEFAULT_GRAMIAN_TOL)?;
        Ok(Self { realization, system, gramians })
    }

    /// `½⟨𝒞ᵀ𝒞, P⟩`.
    pub fn cost(&self) -> f64 {
        let cc = self.system.c.transpose() * &self.system.c;
        0.5 * frob_inner(&cc, &self.gramians.p)
    }

    /// `½⟨Q, ℬℬᵀ⟩`.
    pub fn cost_dual(&self) -> f64 {
        let bb = &self.system.b * self.system.b.transpose();
        0.5 * frob_inner(&self.gramians.q, &bb)
    }

    /// `−⟨H, 𝒜⟩`.
    pub fn cost_hankel(&self) -> f64 {
        -frob_inner(&self.gramians.h, &self.system.a)
    }
}

pub fn is_stabilizing(plant: &PlantModel, u: &ControllerParams, margin: f64) -> Result<bool> {
    let real = realize_controller(plant, u)?;
    let (a, _, _) = assemble_matrices(plant, &real)?;
    Ok(is_hurwitz(&a, margin)?.is_hurwitz)
}

pub fn lqg_cost(plant: &PlantModel, u: &ControllerParams) -> CostValue {
    lqg_cost_with_margin(plant, u, DEFAULT_HURWITZ_MARGIN)
}

/// LQG cost with the `+∞` convention for anything that is not a stabilizing
/// point with well-conditioned Gramians.
pub fn lqg_cost_with_margin(plant: &PlantModel, u: &ControllerParams, margin: f64) -> CostValue {
    if !u.is_finite() {
        return CostValue::UNSTABLE;
    }
    match ClosedLoopPoint::new(plant, u, margin) {
        Ok(pt) => {
            let value = pt.cost();
            if value.is_finite() {
                CostValue { value, stabilizing: true }
            } else {
                CostValue::UNSTABLE
            }
        }
        Err(_) => CostValue::UNSTABLE,
    }
}

/// `−½ vec(𝒞ᵀ𝒞)ᵀ (𝒜 ⊕ 𝒜)⁻¹ vec(ℬℬᵀ)`, evaluated without forming the Gramian.
pub fn lqg_cost_vectorized(plant: &PlantModel, u: &ControllerParams) -> Result<CostValue> {
    let real = realize_controller(plant, u)?;
    let sys = assemble(plant, &real, DEFAULT_HURWITZ_MARGIN)?;
    if !sys.hurwitz {
        return Err(Error::Unstable { abscissa: sys.spectral_abscissa });
    }
    Ok(CostValue { value: vectorized_cost(&sys)?, stabilizing: true })
}

pub(crate) fn vectorized_cost(sys: &ClosedLoopSystem) -> Result<f64> {
    let ks = kron_sum(&sys.a)?;
    let rhs = vec(&(&sys.b * sys.b.transpose()));
    let x = ks
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("Kronecker sum is singular".into()))?;
    let cc = vec(&(sys.c.transpose() * &sys.c));
    Ok(-0.5 * cc.dot(&x))
}

/// `‖𝒜Θ + Θ𝒜ᵀ + ℬJℬᵀ‖`.
pub fn ccr_preservation_residual(sys: &ClosedLoopSystem) -> f64 {
    (&sys.a * &sys.theta + &sys.theta * sys.a.transpose() + &sys.b * &sys.j * sys.b.transpose())
        .norm()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositivityCheck {
    pub min_eig: f64,
    pub pass: bool,
}

/// Smallest eigenvalue of the quantum covariance `P + iΘ`.
pub fn covariance_positivity(gram: &GramianSet, theta: &RealMatrix, tol: f64) -> PositivityCheck {
    let min_eig = hermitian_min_eig(&gram.p, theta);
    PositivityCheck { min_eig, pass: min_eig >= -tol }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::matlib::{eigenvalues, LyapunovMethod};
    use crate::model::{random_controller, random_stabilizing, realize_controller};
    use approx::assert_relative_eq;

    fn minus_identity_system() -> ClosedLoopSystem {
        let n = 4;
        ClosedLoopSystem {
            a: -RealMatrix::identity(n, n),
            b: RealMatrix::identity(n, n),
            c: RealMatrix::identity(n, n),
            theta: RealMatrix::zeros(n, n),
            j: RealMatrix::zeros(n, n),
            hurwitz: true,
            spectral_abscissa: -1.0,
        }
    }

    #[test]
    fn zero_controller_example8_is_block_diagonal_and_unstable() {
        let plant = fixtures::example8_plant();
        let real = realize_controller(&plant, &plant.zero_controller()).unwrap();
        let sys = assemble(&plant, &real, DEFAULT_HURWITZ_MARGIN).unwrap();
        assert_eq!(block(&sys.a, 0, 0), plant.a);
        assert_eq!(block(&sys.a, 0, 1), RealMatrix::zeros(2, 2));
        assert_eq!(block(&sys.a, 1, 0), RealMatrix::zeros(2, 2));
        assert_eq!(block(&sys.a, 1, 1), RealMatrix::zeros(2, 2));
        assert!(!sys.hurwitz);
        assert_eq!(lqg_cost(&plant, &plant.zero_controller()), CostValue::UNSTABLE);
    }

    #[test]
    fn assembly_is_blockwise_affine() {
        let plant = fixtures::example9_plant();
        let r1 = realize_controller(&plant, &random_controller(&plant, 1, 1.0)).unwrap();
        let r2 = realize_controller(&plant, &random_controller(&plant, 2, 1.0)).unwrap();
        let avg = ControllerRealization {
            a: (&r1.a + &r2.a) * 0.5,
            b: (&r1.b + &r2.b) * 0.5,
            c: (&r1.c + &r2.c) * 0.5,
            e: (&r1.e + &r2.e) * 0.5,
            d: r1.d.clone(),
        };
        let s1 = assemble(&plant, &r1, 0.0).unwrap();
        let s2 = assemble(&plant, &r2, 0.0).unwrap();
        let sa = assemble(&plant, &avg, 0.0).unwrap();
        assert!((&sa.a - (&s1.a + &s2.a) * 0.5).norm() < 1e-12);
        assert!((&sa.b - (&s1.b + &s2.b) * 0.5).norm() < 1e-12);
        assert!((&sa.c - (&s1.c + &s2.c) * 0.5).norm() < 1e-12);
    }

    #[test]
    fn example10_optimum_spectrum() {
        let plant = fixtures::example10_plant();
        let real = realize_controller(&plant, &fixtures::example10_optimum()).unwrap();
        let sys = assemble(&plant, &real, DEFAULT_HURWITZ_MARGIN).unwrap();
        assert!(sys.hurwitz);
        let eigs = eigenvalues(&sys.a).unwrap();
        for (re, im) in [(-0.0245, 0.1019), (-0.0852, 0.0485)] {
            let hit = eigs.iter().any(|z| (z.re - re).abs() < 5e-4 && (z.im.abs() - im).abs() < 5e-4);
            assert!(hit, "missing {re}±{im}i in {eigs:?}");
        }
    }

    #[test]
    fn gramians_closed_form() {
        let g = gramians(&minus_identity_system(), DEFAULT_GRAMIAN_TOL).unwrap();
        assert_relative_eq!(g.p, RealMatrix::identity(4, 4) * 0.5, epsilon = 1e-14);
        assert_relative_eq!(g.q, RealMatrix::identity(4, 4) * 0.5, epsilon = 1e-14);
        assert_relative_eq!(g.h, RealMatrix::identity(4, 4) * 0.25, epsilon = 1e-14);
    }

    #[test]
    fn gramians_reject_unstable() {
        let mut sys = minus_identity_system();
        sys.hurwitz = false;
        assert!(matches!(gramians(&sys, 1e-8), Err(Error::Unstable { .. })));
    }

    #[test]
    fn gramian_residuals_at_example8_optimum() {
        let plant = fixtures::example8_plant();
        let pt = ClosedLoopPoint::new(&plant, &fixtures::example8_optimum(), DEFAULT_HURWITZ_MARGIN).unwrap();
        let s = &pt.system;
        let (p, q) = (&pt.gramians.p, &pt.gramians.q);
        let bb = &s.b * s.b.transpose();
        let cc = s.c.transpose() * &s.c;
        let rp = (&s.a * p + p * s.a.transpose() + &bb).norm() / (s.a.norm() * p.norm() + bb.norm());
        let rq = (s.a.transpose() * q + q * &s.a + &cc).norm() / (s.a.norm() * q.norm() + cc.norm());
        assert!(rp < 1e-10 && rq < 1e-10, "{rp} {rq}");
        assert_eq!(pt.gramians.h, q * p);
    }

    #[test]
    fn gramians_are_psd_and_cost_identities_hold_on_random_points() {
        for (i, (plant, scale)) in [(fixtures::example8_plant(), 3.0), (fixtures::example10_plant(), 1.0)].iter().enumerate() {
            for seed in 0..50u64 {
                let (u, _) = random_stabilizing(plant, 1000 * i as u64 + seed, *scale, 100_000, DEFAULT_HURWITZ_MARGIN).unwrap();
                let pt = ClosedLoopPoint::new(plant, &u, DEFAULT_HURWITZ_MARGIN).unwrap();
                let g = &pt.gramians;
                assert!(g.p.symmetric_eigenvalues().min() >= -1e-10 * g.p.norm());
                assert!(g.q.symmetric_eigenvalues().min() >= -1e-10 * g.q.norm());
                let e = pt.cost();
                assert!((pt.cost_dual() - e).abs() <= 1e-9 * e);
                assert!((pt.cost_hankel() - e).abs() <= 1e-9 * e);
                let v = lqg_cost_vectorized(plant, &u).unwrap().value;
                assert!((v - e).abs() <= 1e-9 * e);
                let schur = gramians_with(&pt.system, 1e-8, LyapunovMethod::Schur).unwrap();
                assert!((&schur.p - &g.p).norm() <= 1e-9 * g.p.norm());
                let pos = covariance_positivity(g, &pt.system.theta, 1e-9 * g.p.norm());
                assert!(pos.pass, "{pos:?}");
            }
        }
    }

    #[test]
    fn example8_printed_sign_of_r11_is_inconsistent() {
        let plant = fixtures::example8_plant();
        let mut u = fixtures::example8_optimum();
        u.r[(0, 0)] = -0.5611;
        let e = lqg_cost(&plant, &u).value;
        assert!((e - 13.1296).abs() < 1e-3, "{e}");
    }

    #[test]
    fn reported_optimum_costs() {
        let e8 = lqg_cost(&fixtures::example8_plant(), &fixtures::example8_optimum());
        assert!(e8.stabilizing);
        assert!((e8.value - 12.1026).abs() < 5e-3, "{}", e8.value);
        let e10 = lqg_cost(&fixtures::example10_plant(), &fixtures::example10_optimum());
        assert!((e10.value - 2.0418).abs() < 5e-3, "{}", e10.value);
        let v8 = lqg_cost_vectorized(&fixtures::example8_plant(), &fixtures::example8_optimum()).unwrap();
        assert!((v8.value - e8.value).abs() <= 1e-9 * e8.value);
    }

    #[test]
    fn vectorized_cost_closed_form() {
        assert_relative_eq!(vectorized_cost(&minus_identity_system()).unwrap(), 1.0, epsilon = 1e-14);
        let plant = fixtures::example8_plant();
        assert!(matches!(
            lqg_cost_vectorized(&plant, &plant.zero_controller()),
            Err(Error::Unstable { .. })
        ));
    }

    #[test]
    fn ccr_preservation() {
        let plant = fixtures::example10_plant();
        for seed in 0..10 {
            let u = random_controller(&plant, seed, 1.0);
            let sys = assemble(&plant, &realize_controller(&plant, &u).unwrap(), 0.0).unwrap();
            let scale = 1.0 + plant.input_norm() + u.norm_squared();
            assert!(ccr_preservation_residual(&sys) < 1e-9 * scale);
        }
        let u = fixtures::example10_optimum();
        let real = realize_controller(&plant, &u).unwrap();
        let sys = assemble(&plant, &real, 0.0).unwrap();
        assert!(ccr_preservation_residual(&sys) < 1e-3);

        let mut stale = real.clone();
        stale.b[(0, 0)] += 0.1;
        let sys = assemble(&plant, &stale, 0.0).unwrap();
        assert!(ccr_preservation_residual(&sys) > 1e-2);
    }

    #[test]
    fn covariance_positivity_examples() {
        let p = nalgebra::dmatrix![2.0, 0.3; 0.3, 1.0];
        let g = GramianSet { p: p.clone(), q: p.clone(), h: &p * &p };
        let c = covariance_positivity(&g, &RealMatrix::zeros(2, 2), 0.0);
        assert_relative_eq!(c.min_eig, p.symmetric_eigenvalues().min(), epsilon = 1e-14);

        let g = GramianSet { p: RealMatrix::identity(2, 2), q: RealMatrix::identity(2, 2), h: RealMatrix::identity(2, 2) };
        let c = covariance_positivity(&g, crate::matlib::ccr_block(2).unwrap().matrix(), 1e-12);
        assert!(c.min_eig.abs() < 1e-14 && c.pass);

        let plant = fixtures::example8_plant();
        let pt = ClosedLoopPoint::new(&plant, &fixtures::example8_optimum(), DEFAULT_HURWITZ_MARGIN).unwrap();
        let c = covariance_positivity(&pt.gramians, &pt.system.theta, 1e-9 * pt.gramians.p.norm());
        assert!(c.pass, "{c:?}");
    }
}
