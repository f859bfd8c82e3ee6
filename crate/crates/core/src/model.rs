//! Plant and controller data, physical-realizability checks, the
//! Hamiltonian parameterization `u = (R, b, e) ↦ (a, c)` and random search
//! for stabilizing starting points.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::closed_loop;
use crate::error::{Error, Result};
use crate::matlib::{all_finite, ensure_shape, sym, CcrMatrix, RealMatrix};

/// PR tolerance factor for exact inputs; the absolute tolerance is this
/// times `1 + ‖inputs‖`.
pub const DEFAULT_PR_RELATIVE_TOL: f64 = 1e-9;

/// Looser PR tolerance for matrices transcribed with four decimals.
pub const TRANSCRIBED_PR_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub p1: usize,
    pub p2: usize,
    pub r: usize,
}

impl Dims {
    /// Dimension of the parameter space `S_n × R^{n×m2} × R^{n×p1}`.
    pub fn param_dim(&self) -> usize {
        self.n * (self.n + 1) / 2 + self.n * self.m2 + self.n * self.p1
    }
}

/// The fixed quantum plant together with its weighting matrices and the CCR
/// structure of the plant, controller and both noise processes.
#[derive(Debug, Clone)]
pub struct PlantModel {
    pub dims: Dims,
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub c: RealMatrix,
    pub d: RealMatrix,
    pub e: RealMatrix,
    pub f: RealMatrix,
    pub g: RealMatrix,
    /// Controller noise feedthrough `d` (`p2 × m2`).
    pub d_ctrl: RealMatrix,
    pub theta1: CcrMatrix,
    pub theta2: CcrMatrix,
    pub j1: CcrMatrix,
    pub j2: CcrMatrix,
}

/// Raw matrices of a plant, before validation.
#[derive(Debug, Clone)]
pub struct PlantMatrices {
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub c: RealMatrix,
    pub d: RealMatrix,
    pub e: RealMatrix,
    pub f: RealMatrix,
    pub g: RealMatrix,
    pub d_ctrl: RealMatrix,
}

impl PlantModel {
    /// Builds a plant with standard CCR matrices, inferring dimensions from
    /// the matrices and checking that they conform.
    pub fn new(m: PlantMatrices) -> Result<Self> {
        Self::with_theta1(m, None)
    }

    pub fn with_theta1(m: PlantMatrices, theta1: Option<RealMatrix>) -> Result<Self> {
        let n = m.a.nrows();
        let dims = Dims {
            n,
            m1: m.b.ncols(),
            m2: m.d_ctrl.ncols(),
            p1: m.c.nrows(),
            p2: m.e.ncols(),
            r: m.f.nrows(),
        };
        let Dims { m1, m2, p1, p2, r, .. } = dims;
        ensure_shape(&m.a, n, n, "A")?;
        ensure_shape(&m.b, n, m1, "B")?;
        ensure_shape(&m.c, p1, n, "C")?;
        ensure_shape(&m.d, p1, m1, "D")?;
        ensure_shape(&m.e, n, p2, "E")?;
        ensure_shape(&m.f, r, n, "F")?;
        ensure_shape(&m.g, r, p2, "G")?;
        ensure_shape(&m.d_ctrl, p2, m2, "d")?;
        for (name, mat) in [
            ("A", &m.a),
            ("B", &m.b),
            ("C", &m.c),
            ("D", &m.d),
            ("E", &m.e),
            ("F", &m.f),
            ("G", &m.g),
            ("d", &m.d_ctrl),
        ] {
            if !all_finite(mat) {
                return Err(Error::Precondition(format!("{name} has non-finite entries")));
            }
        }
        if n == 0 || r == 0 || p1 == 0 || p2 == 0 {
            return Err(Error::Dimension("plant dimensions must be positive".into()));
        }
        let theta1 = match theta1 {
            Some(t) => {
                ensure_shape(&t, n, n, "theta1")?;
                CcrMatrix::from_matrix(t)?
            }
            None => CcrMatrix::new(n)?,
        };
        Ok(Self {
            dims,
            theta2: CcrMatrix::new(n)?,
            j1: CcrMatrix::new(m1)?,
            j2: CcrMatrix::new(m2)?,
            theta1,
            a: m.a,
            b: m.b,
            c: m.c,
            d: m.d,
            e: m.e,
            f: m.f,
            g: m.g,
            d_ctrl: m.d_ctrl,
        })
    }

    /// Frobenius norm of all plant matrices stacked, used to scale
    /// tolerances.
    pub fn input_norm(&self) -> f64 {
        [&self.a, &self.b, &self.c, &self.d, &self.e, &self.f, &self.g, &self.d_ctrl]
            .iter()
            .map(|m| m.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// `D J₁ Dᵀ`, which appears in the controller drift and the gradient.
    pub fn djd(&self) -> RealMatrix {
        &self.d * self.j1.matrix() * self.d.transpose()
    }

    pub fn zero_controller(&self) -> Triple {
        Triple::zeros(&self.dims)
    }
}

/// An element `(R, b, e)` of the parameter Hilbert space with the
/// direct-sum Frobenius inner product. Used both for controller parameters
/// and for gradients and search directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub r: RealMatrix,
    pub b: RealMatrix,
    pub e: RealMatrix,
}

pub type ControllerParams = Triple;

impl Triple {
    /// Stores `R` symmetrized.
    pub fn new(r: RealMatrix, b: RealMatrix, e: RealMatrix) -> Self {
        Self { r: sym(&r), b, e }
    }

    pub fn zeros(dims: &Dims) -> Self {
        Self {
            r: RealMatrix::zeros(dims.n, dims.n),
            b: RealMatrix::zeros(dims.n, dims.m2),
            e: RealMatrix::zeros(dims.n, dims.p1),
        }
    }

    pub fn check_dims(&self, dims: &Dims) -> Result<()> {
        ensure_shape(&self.r, dims.n, dims.n, "R")?;
        ensure_shape(&self.b, dims.n, dims.m2, "b")?;
        ensure_shape(&self.e, dims.n, dims.p1, "e")?;
        Ok(())
    }

    pub fn inner(&self, other: &Triple) -> f64 {
        self.r.dot(&other.r) + self.b.dot(&other.b) + self.e.dot(&other.e)
    }

    pub fn norm_squared(&self) -> f64 {
        self.inner(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(&self, s: f64) -> Triple {
        Triple { r: &self.r * s, b: &self.b * s, e: &self.e * s }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Triple) -> Triple {
        Triple {
            r: &self.r + &other.r * s,
            b: &self.b + &other.b * s,
            e: &self.e + &other.e * s,
        }
    }

    pub fn add(&self, other: &Triple) -> Triple {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Triple) -> Triple {
        self.axpy(-1.0, other)
    }

    /// Coordinates in an orthonormal basis of the parameter space: diagonal
    /// of `R`, `√2·R_ij` for `i < j`, then `b` and `e` column-major.
    pub fn to_coords(&self) -> DVector<f64> {
        let n = self.r.nrows();
        let mut out = Vec::with_capacity(n * (n + 1) / 2 + self.b.len() + self.e.len());
        for i in 0..n {
            out.push(self.r[(i, i)]);
        }
        let s2 = std::f64::consts::SQRT_2;
        for j in 0..n {
            for i in 0..j {
                out.push(s2 * 0.5 * (self.r[(i, j)] + self.r[(j, i)]));
            }
        }
        out.extend_from_slice(self.b.as_slice());
        out.extend_from_slice(self.e.as_slice());
        DVector::from_vec(out)
    }

    pub fn from_coords(dims: &Dims, x: &DVector<f64>) -> Triple {
        let n = dims.n;
        assert_eq!(x.len(), dims.param_dim());
        let mut r = RealMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            r[(i, i)] = x[k];
            k += 1;
        }
        let inv_s2 = std::f64::consts::FRAC_1_SQRT_2;
        for j in 0..n {
            for i in 0..j {
                r[(i, j)] = x[k] * inv_s2;
                r[(j, i)] = x[k] * inv_s2;
                k += 1;
            }
        }
        let nb = n * dims.m2;
        let b = RealMatrix::from_column_slice(n, dims.m2, &x.as_slice()[k..k + nb]);
        k += nb;
        let e = RealMatrix::from_column_slice(n, dims.p1, &x.as_slice()[k..]);
        Triple { r, b, e }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.r) && all_finite(&self.b) && all_finite(&self.e)
    }
}

/// State-space matrices of a physically realizable controller.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRealization {
    pub a: RealMatrix,
    pub b: RealMatrix,
    pub c: RealMatrix,
    pub e: RealMatrix,
    pub d: RealMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrReport {
    pub residuals: BTreeMap<String, f64>,
    pub pass: bool,
    pub tolerance: f64,
}

impl PrReport {
    fn from_residuals(residuals: BTreeMap<String, f64>, tolerance: f64) -> Self {
        let pass = residuals.values().all(|&r| r <= tolerance);
        Self { residuals, pass, tolerance }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.residuals.get(name).copied()
    }
}

/// Plant PR residuals (CCR preservation, non-demolition of the output, and
/// the feedthrough normalisation), each as a Frobenius norm.
pub fn check_plant_pr(plant: &PlantModel, tol: f64) -> PrReport {
    let t1 = plant.theta1.matrix();
    let ed = &plant.e * &plant.d_ctrl;
    let eq19 = &plant.a * t1
        + t1 * plant.a.transpose()
        + &plant.b * plant.j1.matrix() * plant.b.transpose()
        + &ed * plant.j2.matrix() * ed.transpose();
    let eq22 = t1 * plant.c.transpose() + &plant.b * plant.j1.matrix() * plant.d.transpose();
    let dims = plant.dims;
    let eq26_d_plant = &plant.d * plant.d.transpose() - RealMatrix::identity(dims.p1, dims.p1);
    let eq26_d_ctrl =
        &plant.d_ctrl * plant.d_ctrl.transpose() - RealMatrix::identity(dims.p2, dims.p2);

    let mut residuals = BTreeMap::new();
    residuals.insert("eq19".to_string(), eq19.norm());
    residuals.insert("eq22".to_string(), eq22.norm());
    residuals.insert("eq26_D".to_string(), eq26_d_plant.norm());
    residuals.insert("eq26_d".to_string(), eq26_d_ctrl.norm());
    PrReport::from_residuals(residuals, tol)
}

/// Default absolute PR tolerance for a plant with exact entries.
pub fn default_plant_tol(plant: &PlantModel) -> f64 {
    DEFAULT_PR_RELATIVE_TOL * (1.0 + plant.input_norm())
}

/// Maps Hamiltonian parameters to the unique PR controller matrices:
/// `a = 2Θ₂R − ½(e D J₁ Dᵀ eᵀ + b J₂ bᵀ)Θ₂⁻¹`, `c = −d J₂ bᵀ Θ₂⁻¹`.
pub fn realize_controller(plant: &PlantModel, u: &ControllerParams) -> Result<ControllerRealization> {
    u.check_dims(&plant.dims)?;
    let t2 = plant.theta2.matrix();
    let t2_inv = plant.theta2.inverse();
    let j2 = plant.j2.matrix();
    let djd = plant.djd();
    let a = t2 * &u.r * 2.0
        - (&u.e * &djd * u.e.transpose() + &u.b * j2 * u.b.transpose()) * &t2_inv * 0.5;
    let c = -(&plant.d_ctrl * j2 * u.b.transpose() * &t2_inv);
    Ok(ControllerRealization { a, b: u.b.clone(), c, e: u.e.clone(), d: plant.d_ctrl.clone() })
}

/// Controller PR residuals, plus the cross condition that couples the plant
/// and controller.
pub fn check_controller_pr(
    plant: &PlantModel,
    real: &ControllerRealization,
    tol: f64,
) -> Result<PrReport> {
    let dims = plant.dims;
    ensure_shape(&real.a, dims.n, dims.n, "a")?;
    ensure_shape(&real.b, dims.n, dims.m2, "b")?;
    ensure_shape(&real.c, dims.p2, dims.n, "c")?;
    ensure_shape(&real.e, dims.n, dims.p1, "e")?;
    ensure_shape(&real.d, dims.p2, dims.m2, "d")?;
    let t1 = plant.theta1.matrix();
    let t2 = plant.theta2.matrix();
    let j2 = plant.j2.matrix();
    let eq20 = &real.a * t2
        + t2 * real.a.transpose()
        + &real.e * plant.djd() * real.e.transpose()
        + &real.b * j2 * real.b.transpose();
    let eq23 = &real.c * t2 + &real.d * j2 * real.b.transpose();
    let eq21 = (t1 * plant.c.transpose() + &plant.b * plant.j1.matrix() * plant.d.transpose())
        * real.e.transpose()
        + &plant.e * &eq23;
    let mut residuals = BTreeMap::new();
    residuals.insert("eq20".to_string(), eq20.norm());
    residuals.insert("eq21".to_string(), eq21.norm());
    residuals.insert("eq23".to_string(), eq23.norm());
    residuals.insert(
        "eq26_d".to_string(),
        (&real.d * real.d.transpose() - RealMatrix::identity(dims.p2, dims.p2)).norm(),
    );
    Ok(PrReport::from_residuals(residuals, tol))
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> RealMatrix {
    RealMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

fn draw_controller(rng: &mut ChaCha8Rng, dims: &Dims, scale: f64) -> ControllerParams {
    let r = normal_matrix(rng, dims.n, dims.n, scale);
    let b = normal_matrix(rng, dims.n, dims.m2, scale);
    let e = normal_matrix(rng, dims.n, dims.p1, scale);
    Triple::new(r, b, e)
}

/// One Gaussian draw: `R = sym(scale·Z)`, `b`, `e` with i.i.d. `N(0, scale²)`
/// entries.
pub fn random_controller(plant: &PlantModel, rng_seed: u64, scale: f64) -> ControllerParams {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    draw_controller(&mut rng, &plant.dims, scale)
}

/// Pure random search for a stabilizing controller. Draws are taken from a
/// single stream seeded by `rng_seed`.
pub fn random_stabilizing(
    plant: &PlantModel,
    rng_seed: u64,
    scale: f64,
    max_tries: usize,
    margin: f64,
) -> Result<(ControllerParams, usize)> {
    search_stabilizing(plant, None, rng_seed, scale, max_tries, margin)
}

/// Random search restricted to Gaussian perturbations `center + scale·Z`
/// of a known controller. Useful for plants whose stabilizing set is too
/// thin for unstructured draws.
pub fn random_stabilizing_near(
    plant: &PlantModel,
    center: &ControllerParams,
    rng_seed: u64,
    scale: f64,
    max_tries: usize,
    margin: f64,
) -> Result<(ControllerParams, usize)> {
    center.check_dims(&plant.dims)?;
    search_stabilizing(plant, Some(center), rng_seed, scale, max_tries, margin)
}

fn search_stabilizing(
    plant: &PlantModel,
    center: Option<&ControllerParams>,
    rng_seed: u64,
    scale: f64,
    max_tries: usize,
    margin: f64,
) -> Result<(ControllerParams, usize)> {
    if max_tries == 0 {
        return Err(Error::Precondition("max_tries must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    for tries in 1..=max_tries {
        let mut u = draw_controller(&mut rng, &plant.dims, scale);
        if let Some(c) = center {
            u = c.add(&u);
        }
        // A draw whose spectrum cannot be computed is treated as a miss.
        match closed_loop::is_stabilizing(plant, &u, margin) {
            Ok(true) => return Ok((u, tries)),
            Ok(false) | Err(Error::Numerical(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Err(Error::StabilizationNotFound { tries: max_tries })
}
