//! On-disk formats: plant specifications, controller files and iterate
//! traces.
//!
//! Plant and controller files are JSON with row-major nested arrays.
//! Numbers are written in shortest round-trip form, so loading and storing a
//! controller file reproduces its bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matlib::RealMatrix;
use crate::closed_loop::{assemble, lqg_cost};
use crate::matlib::{eigenvalues, DEFAULT_HURWITZ_MARGIN};
use crate::model::{
    check_controller_pr, realize_controller, ControllerParams, PlantMatrices, PlantModel, Triple,
    DEFAULT_PR_RELATIVE_TOL,
};
use crate::optimizer::{FlowRecord, IterateRecord};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DimsSpec {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub p1: usize,
    pub p2: usize,
    pub r: usize,
}

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlantSpecFile {
    pub dims: DimsSpec,
    #[serde(rename = "A")]
    pub a: Rows,
    #[serde(rename = "B")]
    pub b: Rows,
    #[serde(rename = "C")]
    pub c: Rows,
    #[serde(rename = "D")]
    pub d: Rows,
    #[serde(rename = "E")]
    pub e: Rows,
    #[serde(rename = "F")]
    pub f: Rows,
    #[serde(rename = "G")]
    pub g: Rows,
    #[serde(rename = "d")]
    pub d_ctrl: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta1: Option<Rows>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    #[serde(rename = "R")]
    pub r: Rows,
    pub b: Rows,
    pub e: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr_residuals: Option<BTreeMap<String, f64>>,
    /// `null` when the controller is not stabilizing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<Option<f64>>,
    /// Closed-loop eigenvalues as `[re, im]` pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigenvalues: Option<Vec<[f64; 2]>>,
}

pub fn matrix_from_rows(rows: &Rows, name: &str) -> Result<RealMatrix> {
    let nr = rows.len();
    if nr == 0 {
        return Err(Error::Parse(format!("{name}: matrix has no rows")));
    }
    let nc = rows[0].len();
    if nc == 0 {
        return Err(Error::Parse(format!("{name}: matrix has empty rows")));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != nc) {
        return Err(Error::Parse(format!(
            "{name}: ragged rows (row 0 has {nc} entries, row {i} has {})",
            row.len()
        )));
    }
    Ok(RealMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &RealMatrix) -> Rows {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn check_shape(m: &RealMatrix, rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Parse(format!(
            "{name}: dims say {rows}x{cols}, array is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

impl PlantSpecFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn to_plant(&self) -> Result<PlantModel> {
        let DimsSpec { n, m1, m2, p1, p2, r } = self.dims;
        let a = matrix_from_rows(&self.a, "A")?;
        let b = matrix_from_rows(&self.b, "B")?;
        let c = matrix_from_rows(&self.c, "C")?;
        let d = matrix_from_rows(&self.d, "D")?;
        let e = matrix_from_rows(&self.e, "E")?;
        let f = matrix_from_rows(&self.f, "F")?;
        let g = matrix_from_rows(&self.g, "G")?;
        let d_ctrl = matrix_from_rows(&self.d_ctrl, "d")?;
        check_shape(&a, n, n, "A")?;
        check_shape(&b, n, m1, "B")?;
        check_shape(&c, p1, n, "C")?;
        check_shape(&d, p1, m1, "D")?;
        check_shape(&e, n, p2, "E")?;
        check_shape(&f, r, n, "F")?;
        check_shape(&g, r, p2, "G")?;
        check_shape(&d_ctrl, p2, m2, "d")?;
        let theta1 = match &self.theta1 {
            Some(rows) => {
                let t = matrix_from_rows(rows, "theta1")?;
                check_shape(&t, n, n, "theta1")?;
                Some(t)
            }
            None => None,
        };
        PlantModel::with_theta1(PlantMatrices { a, b, c, d, e, f, g, d_ctrl }, theta1)
    }

    pub fn from_plant(p: &PlantModel) -> Self {
        let dm = p.dims;
        Self {
            dims: DimsSpec { n: dm.n, m1: dm.m1, m2: dm.m2, p1: dm.p1, p2: dm.p2, r: dm.r },
            a: matrix_to_rows(&p.a),
            b: matrix_to_rows(&p.b),
            c: matrix_to_rows(&p.c),
            d: matrix_to_rows(&p.d),
            e: matrix_to_rows(&p.e),
            f: matrix_to_rows(&p.f),
            g: matrix_to_rows(&p.g),
            d_ctrl: matrix_to_rows(&p.d_ctrl),
            theta1: if p.theta1.is_standard() { None } else { Some(matrix_to_rows(p.theta1.matrix())) },
        }
    }
}

pub fn parse_plant(text: &str) -> Result<PlantModel> {
    PlantSpecFile::parse(text)?.to_plant()
}

impl ControllerFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    /// Canonical text form (pretty JSON, trailing newline).
    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("controller file serializes");
        s.push('\n');
        s
    }

    pub fn params(&self) -> Result<ControllerParams> {
        let r = matrix_from_rows(&self.r, "R")?;
        if r.nrows() != r.ncols() {
            return Err(Error::Parse("R must be square".into()));
        }
        if (&r - r.transpose()).norm() > 1e-12 * (1.0 + r.norm()) {
            return Err(Error::Parse("R must be symmetric".into()));
        }
        Ok(Triple {
            r,
            b: matrix_from_rows(&self.b, "b")?,
            e: matrix_from_rows(&self.e, "e")?,
        })
    }

    /// File holding only `(R, b, e)`.
    pub fn from_params(u: &ControllerParams) -> Self {
        Self {
            r: matrix_to_rows(&u.r),
            b: matrix_to_rows(&u.b),
            e: matrix_to_rows(&u.e),
            a: None,
            c: None,
            pr_residuals: None,
            cost: None,
            eigenvalues: None,
        }
    }

    /// File with the derived fields filled in: `a`, `c`, the controller PR
    /// residuals, the cost (`null` if not stabilizing) and the closed-loop
    /// eigenvalues sorted by real then imaginary part.
    pub fn with_report(plant: &PlantModel, u: &ControllerParams) -> Result<Self> {
        let real = realize_controller(plant, u)?;
        let pr = check_controller_pr(plant, &real, DEFAULT_PR_RELATIVE_TOL * (1.0 + plant.input_norm()))?;
        let sys = assemble(plant, &real, DEFAULT_HURWITZ_MARGIN)?;
        let mut eigs: Vec<[f64; 2]> = eigenvalues(&sys.a)?.into_iter().map(|z| [z.re, z.im]).collect();
        eigs.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
        let cost = lqg_cost(plant, u);
        Ok(Self {
            a: Some(matrix_to_rows(&real.a)),
            c: Some(matrix_to_rows(&real.c)),
            pr_residuals: Some(pr.residuals),
            cost: Some(cost.stabilizing.then_some(cost.value)),
            eigenvalues: Some(eigs),
            ..Self::from_params(u)
        })
    }
}

pub const TRACE_HEADER: &str = "k,cost,grad_norm,horizon,stepsize,armijo_j,u_norm";

fn num(out: &mut String, x: f64) {
    // `{}` on f64 is the shortest round-trip decimal and never locale dependent.
    if x.is_finite() {
        let _ = write!(out, "{x}");
    } else if x.is_nan() {
        out.push_str("nan");
    } else if x > 0.0 {
        out.push_str("inf");
    } else {
        out.push_str("-inf");
    }
}

/// Comma-separated trace, header first, one row per iterate.
pub fn trace_to_csv(trace: &[IterateRecord]) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for rec in trace {
        let _ = write!(out, "{},", rec.k);
        num(&mut out, rec.cost);
        out.push(',');
        num(&mut out, rec.grad_norm);
        out.push(',');
        num(&mut out, rec.horizon);
        out.push(',');
        num(&mut out, rec.stepsize);
        let _ = write!(out, ",{},", rec.armijo_j);
        num(&mut out, rec.u_norm);
        out.push('\n');
    }
    out
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<IterateRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRACE_HEADER => {}
        _ => return Err(Error::Parse(format!("trace: expected header `{TRACE_HEADER}`"))),
    }
    let mut out = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse(format!("trace line {}: expected 7 fields", lineno + 2)));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("trace line {}: {e}", lineno + 2)))
        };
        let k = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("trace line {}: {e}", lineno + 2)))?;
        let armijo_j = fields[5]
            .trim()
            .parse::<usize>()
            .map_err(|e| Error::Parse(format!("trace line {}: {e}", lineno + 2)))?;
        out.push(IterateRecord {
            k,
            cost: f(1)?,
            grad_norm: f(2)?,
            horizon: f(3)?,
            stepsize: f(4)?,
            armijo_j,
            u_norm: f(6)?,
        });
    }
    Ok(out)
}

pub const FLOW_HEADER: &str = "step,tau,cost,grad_norm,u_norm,balance_residual,u_dot_udot";

pub fn flow_to_csv(trace: &[FlowRecord]) -> String {
    let mut out = String::new();
    out.push_str(FLOW_HEADER);
    out.push('\n');
    for rec in trace {
        let _ = write!(out, "{},", rec.step);
        for (i, x) in [rec.tau, rec.cost, rec.grad_norm, rec.u_norm, rec.balance_residual, rec.u_dot_udot]
            .into_iter()
            .enumerate()
        {
            if i > 0 {
                out.push(',');
            }
            num(&mut out, x);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn ragged_rows_are_rejected() {
        let rows = vec![vec![1.0, 2.0], vec![3.0]];
        assert!(matches!(matrix_from_rows(&rows, "X"), Err(Error::Parse(_))));
    }

    #[test]
    fn truncated_plant_reports_position() {
        let text = fixtures::EXAMPLE8_PLANT;
        let cut = &text[..text.len() / 2];
        match parse_plant(cut) {
            Err(Error::Parse(msg)) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn dims_mismatch_is_rejected() {
        let mut spec = PlantSpecFile::parse(fixtures::EXAMPLE8_PLANT).unwrap();
        spec.dims.m1 = 3;
        assert!(matches!(spec.to_plant(), Err(Error::Parse(_))));
    }

    #[test]
    fn plant_file_roundtrip() {
        let plant = fixtures::example9_plant();
        let spec = PlantSpecFile::from_plant(&plant);
        let text = serde_json::to_string(&spec).unwrap();
        let back = parse_plant(&text).unwrap();
        assert_eq!(back.a, plant.a);
        assert_eq!(back.b, plant.b);
        assert_eq!(back.dims, plant.dims);
    }

    #[test]
    fn trace_roundtrip() {
        let recs = vec![
            IterateRecord { k: 0, cost: 3.5, grad_norm: 0.1, horizon: 1.0, stepsize: 0.5, armijo_j: 1, u_norm: 2.0 },
            IterateRecord { k: 1, cost: 1.0 / 3.0, grad_norm: 1e-300, horizon: 0.125, stepsize: 0.0625, armijo_j: 3, u_norm: 2.1 },
        ];
        let csv = trace_to_csv(&recs);
        assert!(csv.starts_with(TRACE_HEADER));
        assert_eq!(parse_trace_csv(&csv).unwrap(), recs);
    }

    #[test]
    fn report_fields_and_roundtrip() {
        let plant = fixtures::example10_plant();
        let file = ControllerFile::with_report(&plant, &fixtures::example10_optimum()).unwrap();
        let cost = file.cost.unwrap().unwrap();
        assert!((cost - fixtures::EXAMPLE10_MIN_COST).abs() < 5e-3, "{cost}");
        let eigs = file.eigenvalues.as_ref().unwrap();
        assert_eq!(eigs.len(), 4);
        for want in [[-0.0852, -0.0485], [-0.0852, 0.0485], [-0.0245, -0.1019], [-0.0245, 0.1019]] {
            assert!(eigs.iter().any(|z| (z[0] - want[0]).abs() < 5e-4 && (z[1] - want[1]).abs() < 5e-4), "{eigs:?}");
        }
        assert!(file.pr_residuals.as_ref().unwrap().values().all(|&r| r < 1e-9));
        let text = file.to_text();
        assert_eq!(ControllerFile::parse(&text).unwrap().to_text(), text);

        let zero = fixtures::example8_plant().zero_controller();
        let file = ControllerFile::with_report(&fixtures::example8_plant(), &zero).unwrap();
        assert_eq!(file.cost, Some(None));
    }

    proptest::proptest! {
        #[test]
        fn controller_file_is_byte_stable(
            vals in proptest::collection::vec(-1e6f64..1e6, 12),
        ) {
            let r = RealMatrix::from_row_slice(2, 2, &[vals[0], vals[1], vals[1], vals[2]]);
            let b = RealMatrix::from_row_slice(2, 2, &vals[3..7]);
            let e = RealMatrix::from_row_slice(2, 2, &vals[7..11]);
            let file = ControllerFile::from_params(&Triple { r, b, e });
            let text = file.to_text();
            let again = ControllerFile::parse(&text).unwrap();
            proptest::prop_assert_eq!(&again, &file);
            proptest::prop_assert_eq!(again.to_text(), text);
        }
    }
}
