//! Worst-case expectation of a piecewise quadratic over the sets `P` and
//! `Q`, minimized over a decision `x`, each lowered to one SDP.

use serde::{Deserialize, Serialize};

use super::{k_certificate_matrix, p_interior, p_nonempty, q_nonempty, ConePoint, MomentSpec, INTERIOR_MARGIN};
use crate::conic::{
    validate_solution, LmiBlock, LmiBuilder, SolveStatus, SolverSettings, ValidationReport, VALIDATION_TOL,
};
use crate::error::{Error, Result};
use crate::symmat::SymMatrix;

/// Tolerance at which returned dual certificates are checked.
pub const CERTIFICATE_TOL: f64 = 1e-7;
/// Tolerance of the submodularity and concavity checks on `A_k(x)`.
const SHAPE_TOL: f64 = 1e-8;

/// `coef^T x <= rhs` or `coef^T x = rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConstraint {
    pub coef: Vec<f64>,
    pub rhs: f64,
}

/// `lower <= x <= upper`, linear constraints and matrix inequalities
/// `F_0 + Σ x_l F_l ⪰ 0` (each given as `[F_0, F_1, .., F_m]`).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecisionSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub ineq: Vec<LinearConstraint>,
    #[serde(default)]
    pub eq: Vec<LinearConstraint>,
    #[serde(default)]
    pub psd: Vec<Vec<SymMatrix>>,
}

impl DecisionSet {
    /// The empty decision space (`m = 0`).
    pub fn none() -> Self {
        Self::default()
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        DecisionSet { lower, upper, ..Default::default() }
    }

    pub fn m(&self) -> usize {
        self.lower.len()
    }

    fn check(&self) -> Result<()> {
        let m = self.m();
        if self.upper.len() != m {
            return Err(Error::DimensionMismatch("decision bounds differ in length".into()));
        }
        for c in self.ineq.iter().chain(&self.eq) {
            if c.coef.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "linear constraint has {} coefficients, expected {m}",
                    c.coef.len()
                )));
            }
        }
        for lmi in &self.psd {
            if lmi.len() != m + 1 || lmi.iter().any(|f| f.n() != lmi[0].n()) {
                return Err(Error::DimensionMismatch("matrix inequality needs m + 1 equal-size terms".into()));
            }
        }
        Ok(())
    }

    fn check_compact(&self) -> Result<()> {
        for l in 0..self.m() {
            let (lo, hi) = (self.lower[l], self.upper[l]);
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::precondition(
                    "a",
                    format!("decision {l} needs finite bounds lower <= upper, got [{lo}, {hi}]"),
                ));
            }
        }
        Ok(())
    }

    fn add_to(&self, b: &mut LmiBuilder, x0: usize) {
        let m = self.m();
        if m > 0 {
            let rows = b.add_block(LmiBlock::NonNeg(2 * m + self.ineq.len()));
            for l in 0..m {
                b.row_constant(rows, 2 * l, -self.lower[l]);
                b.row_term(rows, 2 * l, x0 + l, 1.0);
                b.row_constant(rows, 2 * l + 1, self.upper[l]);
                b.row_term(rows, 2 * l + 1, x0 + l, -1.0);
            }
            for (r, c) in self.ineq.iter().enumerate() {
                b.row_constant(rows, 2 * m + r, c.rhs);
                for (l, &a) in c.coef.iter().enumerate() {
                    if a != 0.0 {
                        b.row_term(rows, 2 * m + r, x0 + l, -a);
                    }
                }
            }
        }
        if !self.eq.is_empty() {
            let rows = b.add_block(LmiBlock::Zero(self.eq.len()));
            for (r, c) in self.eq.iter().enumerate() {
                b.row_constant(rows, r, -c.rhs);
                for (l, &a) in c.coef.iter().enumerate() {
                    if a != 0.0 {
                        b.row_term(rows, r, x0 + l, a);
                    }
                }
            }
        }
        for lmi in &self.psd {
            let d = lmi[0].n();
            let blk = b.add_block(LmiBlock::Psd(d));
            for i in 0..d {
                for j in 0..=i {
                    b.psd_constant(blk, i, j, lmi[0].get(i, j));
                    for l in 0..m {
                        let v = lmi[l + 1].get(i, j);
                        if v != 0.0 {
                            b.psd_term(blk, i, j, x0 + l, v);
                        }
                    }
                }
            }
        }
    }
}

/// `ξ^T A(x) ξ + b(x)^T ξ + c(x)` with `A(x) = a[0] + Σ x_l a[l+1]` and
/// likewise for `b` and `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    #[serde(rename = "A")]
    pub a: Vec<SymMatrix>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl Piece {
    /// A piece that does not depend on the first `m` decisions.
    pub fn constant_in(m: usize, a: SymMatrix, b: Vec<f64>, c: f64) -> Self {
        let n = a.n();
        let mut p = Piece { a: vec![a], b: vec![b], c: vec![c] };
        for _ in 0..m {
            p.a.push(SymMatrix::zeros(n));
            p.b.push(vec![0.0; n]);
            p.c.push(0.0);
        }
        p
    }

    pub fn a_at(&self, x: &[f64]) -> SymMatrix {
        let n = self.a[0].n();
        SymMatrix::from_fn(n, |i, j| {
            self.a[0].get(i, j) + x.iter().zip(&self.a[1..]).map(|(xl, al)| xl * al.get(i, j)).sum::<f64>()
        })
    }

    pub fn b_at(&self, x: &[f64]) -> Vec<f64> {
        (0..self.b[0].len())
            .map(|i| self.b[0][i] + x.iter().zip(&self.b[1..]).map(|(xl, bl)| xl * bl[i]).sum::<f64>())
            .collect()
    }

    pub fn c_at(&self, x: &[f64]) -> f64 {
        self.c[0] + x.iter().zip(&self.c[1..]).map(|(xl, cl)| xl * cl).sum::<f64>()
    }

    pub fn evaluate(&self, xi: &[f64], x: &[f64]) -> f64 {
        self.a_at(x).quad_form(xi) + crate::linalg::dot(&self.b_at(x), xi) + self.c_at(x)
    }

    /// Smallest value of each off-diagonal of `A(x)` over the decision box.
    fn min_offdiag_over_box(&self, d: &DecisionSet) -> f64 {
        let n = self.a[0].n();
        let mut worst = f64::INFINITY;
        for i in 0..n {
            for j in 0..i {
                let mut v = self.a[0].get(i, j);
                for l in 0..d.m() {
                    let a = self.a[l + 1].get(i, j);
                    v += (d.lower[l] * a).min(d.upper[l] * a);
                }
                worst = worst.min(v);
            }
        }
        worst
    }
}

/// `f(ξ, x) = max_k piece_k(ξ, x)` together with the decision set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PwqJson", into = "PwqJson")]
pub struct PiecewiseQuadratic {
    n: usize,
    pieces: Vec<Piece>,
    decision: DecisionSet,
}

#[derive(Serialize, Deserialize)]
struct PwqJson {
    n: usize,
    pieces: Vec<Piece>,
    #[serde(default)]
    decision: DecisionSet,
}

impl TryFrom<PwqJson> for PiecewiseQuadratic {
    type Error = Error;
    fn try_from(j: PwqJson) -> Result<Self> {
        PiecewiseQuadratic::new(j.n, j.pieces, j.decision)
    }
}

impl From<PiecewiseQuadratic> for PwqJson {
    fn from(p: PiecewiseQuadratic) -> Self {
        PwqJson { n: p.n, pieces: p.pieces, decision: p.decision }
    }
}

impl PiecewiseQuadratic {
    pub fn new(n: usize, pieces: Vec<Piece>, decision: DecisionSet) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::InvalidInput("at least one piece is required".into()));
        }
        decision.check()?;
        let m = decision.m();
        for (k, p) in pieces.iter().enumerate() {
            let ok = p.a.len() == m + 1
                && p.b.len() == m + 1
                && p.c.len() == m + 1
                && p.a.iter().all(|a| a.n() == n)
                && p.b.iter().all(|b| b.len() == n);
            if !ok {
                return Err(Error::DimensionMismatch(format!(
                    "piece {k} must have m + 1 = {} terms of size n = {n}",
                    m + 1
                )));
            }
        }
        Ok(PiecewiseQuadratic { n, pieces, decision })
    }

    /// One piece, no decision.
    pub fn single(a: SymMatrix, b: Vec<f64>, c: f64) -> Result<Self> {
        let n = a.n();
        Self::new(n, vec![Piece::constant_in(0, a, b, c)], DecisionSet::none())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.decision.m()
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn decision(&self) -> &DecisionSet {
        &self.decision
    }

    pub fn evaluate(&self, xi: &[f64], x: &[f64]) -> f64 {
        self.pieces.iter().map(|p| p.evaluate(xi, x)).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DroCertificate {
    /// One square `Z_k >= 0` per piece.
    P { z: Vec<Vec<Vec<f64>>> },
    /// Box multipliers per piece: `z_k` for `ξ <= e`, `w_k` for `ξ >= 0`.
    Q { z: Vec<Vec<f64>>, w: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroResult {
    pub value: f64,
    pub x: Vec<f64>,
    pub y0: f64,
    pub y: Vec<f64>,
    #[serde(rename = "Y")]
    pub big_y: SymMatrix,
    pub certificate: DroCertificate,
    /// Whether the moment data passed the interior margin test (set `P` only).
    pub interior: Option<bool>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub validation: ValidationReport,
}

/// Variable layout shared by both programs.
struct Layout {
    y0: usize,
    y: usize,
    /// `big_y[i][j]` for all `i, j`.
    big_y: Vec<Vec<usize>>,
    x: usize,
}

fn common_layout(b: &mut LmiBuilder, spec: &MomentSpec, m: usize) -> Layout {
    let n = spec.n();
    let y0 = b.add_var();
    let y = b.add_vars(n);
    let mut big_y = vec![vec![0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let v = b.add_var();
            big_y[i][j] = v;
            big_y[j][i] = v;
        }
    }
    let x = b.add_vars(m);
    // maximize -(y0 + mu^T y + Sigma . Y)
    b.add_gain(y0, -1.0);
    for i in 0..n {
        b.add_gain(y + i, -spec.mu()[i]);
        for j in 0..=i {
            let w = if i == j { 1.0 } else { 2.0 };
            b.add_gain(big_y[i][j], -w * spec.sigma().get(i, j));
        }
    }
    Layout { y0, y, big_y, x }
}

/// Adds `-c_k(x)`, `-b_k(x)/2` and `-A_k(x)` to a bordered block.
fn subtract_piece(b: &mut LmiBuilder, blk: usize, piece: &Piece, x0: usize) {
    let n = piece.a[0].n();
    let m = piece.c.len() - 1;
    b.psd_constant(blk, 0, 0, -piece.c[0]);
    for l in 0..m {
        if piece.c[l + 1] != 0.0 {
            b.psd_term(blk, 0, 0, x0 + l, -piece.c[l + 1]);
        }
    }
    for i in 0..n {
        b.psd_constant(blk, i + 1, 0, -0.5 * piece.b[0][i]);
        for l in 0..m {
            if piece.b[l + 1][i] != 0.0 {
                b.psd_term(blk, i + 1, 0, x0 + l, -0.5 * piece.b[l + 1][i]);
            }
        }
        for j in 0..=i {
            b.psd_constant(blk, i + 1, j + 1, -piece.a[0].get(i, j));
            for l in 0..m {
                let a = piece.a[l + 1].get(i, j);
                if a != 0.0 {
                    b.psd_term(blk, i + 1, j + 1, x0 + l, -a);
                }
            }
        }
    }
}

fn check_sizes(spec: &MomentSpec, f: &PiecewiseQuadratic) -> Result<()> {
    if spec.n() != f.n() {
        return Err(Error::DimensionMismatch(format!(
            "moment data has n = {} but the objective has n = {}",
            spec.n(),
            f.n()
        )));
    }
    Ok(())
}

fn symmetric_from(vars: &[f64], idx: &[Vec<usize>]) -> SymMatrix {
    SymMatrix::from_fn(idx.len(), |i, j| vars[idx[i][j]])
}

/// Solver settings used by [`solve_dro_p`] and [`solve_dro_q`].
pub fn dro_settings() -> SolverSettings {
    SolverSettings::with_tolerance(1e-10)
}

/// Runs `solve` at [`dro_settings`] and, if the solver stalls short of that
/// accuracy, once more at the default tolerance.
fn with_fallback(solve: impl Fn(&SolverSettings) -> Result<DroResult>) -> Result<DroResult> {
    match solve(&dro_settings()) {
        Err(Error::Solver { status: SolveStatus::NumericalFailure | SolveStatus::MaxIterations }) => {
            solve(&SolverSettings::default())
        }
        other => other,
    }
}

/// [`solve_dro_p_with`] under [`dro_settings`], falling back to the default
/// tolerance when the tighter one cannot be reached.
pub fn solve_dro_p(spec: &MomentSpec, f: &PiecewiseQuadratic) -> Result<DroResult> {
    with_fallback(|s| solve_dro_p_with(spec, f, s))
}

/// `min_x sup_{P} E[f(ξ, x)]` over the set `P`, through its dual: minimize
/// `y0 + mu^T y + Sigma . Y` with `Y` submodular and
/// `(y0 - c_k(x), y - b_k(x), Y - A_k(x))` in `K` for every piece.
pub fn solve_dro_p_with(spec: &MomentSpec, f: &PiecewiseQuadratic, s: &SolverSettings) -> Result<DroResult> {
    check_sizes(spec, f)?;
    let d = f.decision();
    d.check_compact()?;
    let structural = f.pieces().iter().all(|p| p.min_offdiag_over_box(d) >= -SHAPE_TOL);
    let (nonempty, _) = p_nonempty(spec)?;
    if !nonempty {
        return Err(Error::precondition("c", "the moment data admit no distribution on the box"));
    }
    let interior = p_interior(spec, INTERIOR_MARGIN)?;

    let n = spec.n();
    let mut b = LmiBuilder::new();
    let lay = common_layout(&mut b, spec, d.m());
    let pairs = n * n.saturating_sub(1) / 2;
    if pairs > 0 {
        let rows = b.add_block(LmiBlock::NonNeg(pairs));
        let mut r = 0;
        for i in 0..n {
            for j in 0..i {
                b.row_term(rows, r, lay.big_y[i][j], -1.0);
                r += 1;
            }
        }
    }
    let mut z_vars = Vec::new();
    for piece in f.pieces() {
        // z0 + r * n + c holds Z[r][c]
        let z0 = b.add_vars(n * n);
        z_vars.push(z0);
        let zrows = b.add_block(LmiBlock::NonNeg(n * n));
        for k in 0..n * n {
            b.row_term(zrows, k, z0 + k, 1.0);
        }
        let blk = b.add_block(LmiBlock::Psd(n + 1));
        b.psd_term(blk, 0, 0, lay.y0, 1.0);
        for i in 0..n {
            b.psd_term(blk, i + 1, 0, lay.y + i, 0.5);
            for r in 0..n {
                b.psd_term(blk, i + 1, 0, z0 + r * n + i, -0.5);
            }
            for j in 0..=i {
                b.psd_term(blk, i + 1, j + 1, lay.big_y[i][j], 1.0);
                if i == j {
                    b.psd_term(blk, i + 1, i + 1, z0 + i * n + i, 1.0);
                } else {
                    b.psd_term(blk, i + 1, j + 1, z0 + i * n + j, 0.5);
                    b.psd_term(blk, i + 1, j + 1, z0 + j * n + i, 0.5);
                }
            }
        }
        subtract_piece(&mut b, blk, piece, lay.x);
    }
    d.add_to(&mut b, lay.x);

    let lmi = b.build()?;
    let sol = lmi.solve(s).into_result()?;
    let validation = validate_solution(&lmi.program, &sol, VALIDATION_TOL);
    let v = lmi.vars(&sol);
    let x = v[lay.x..lay.x + d.m()].to_vec();
    if !structural {
        for (k, p) in f.pieces().iter().enumerate() {
            let a = p.a_at(&x);
            let scale = 1.0 + a.max_abs();
            if !a.scale(-1.0).is_submodular(SHAPE_TOL * scale) {
                return Err(Error::precondition("b", format!("-A_{k}(x*) is not submodular")));
            }
        }
    }

    let y0 = v[lay.y0];
    let y = v[lay.y..lay.y + n].to_vec();
    let big_y = symmetric_from(v, &lay.big_y);
    let mut zs: Vec<Vec<Vec<f64>>> = z_vars
        .iter()
        .map(|&z0| (0..n).map(|r| (0..n).map(|c| v[z0 + r * n + c]).collect()).collect())
        .collect();

    // verify, then clip round-off
    let tol = CERTIFICATE_TOL * (1.0 + big_y.max_abs().max(y0.abs()));
    if !big_y.is_submodular(tol) {
        return Err(Error::Certificate("Y is not submodular".into()));
    }
    for (k, (p, z)) in f.pieces().iter().zip(&zs).enumerate() {
        if z.iter().flatten().any(|&e| e < -tol) {
            return Err(Error::Certificate(format!("Z_{k} has a negative entry")));
        }
        let pt = ConePoint {
            scalar: y0 - p.c_at(&x),
            vector: y.iter().zip(p.b_at(&x)).map(|(a, b)| a - b).collect(),
            matrix: big_y.sub(&p.a_at(&x)),
        };
        let cert = k_certificate_matrix(&pt, z);
        let scale = 1.0 + cert.max_abs();
        if cert.min_eigenvalue()? < -CERTIFICATE_TOL * scale {
            return Err(Error::Certificate(format!("bordered matrix of piece {k} is not PSD")));
        }
    }
    let big_y = SymMatrix::from_fn(n, |i, j| if i == j { big_y.get(i, i) } else { big_y.get(i, j).min(0.0) });
    for e in zs.iter_mut().flatten().flatten() {
        *e = e.max(0.0);
    }

    Ok(DroResult {
        value: -lmi.value(&sol),
        x,
        y0,
        y,
        big_y,
        certificate: DroCertificate::P { z: zs },
        interior: Some(interior),
        status: sol.status,
        iterations: sol.iterations,
        validation,
    })
}

/// [`solve_dro_q_with`] with the same fallback as [`solve_dro_p`].
pub fn solve_dro_q(spec: &MomentSpec, f: &PiecewiseQuadratic) -> Result<DroResult> {
    with_fallback(|s| solve_dro_q_with(spec, f, s))
}

/// `min_x sup_{Q} E[f(ξ, x)]` over the set `Q` (mean fixed, second moment
/// bounded above in the PSD order, support in the box), through its dual
/// with `Y ⪰ 0` and box multipliers `z_k, w_k >= 0`.
pub fn solve_dro_q_with(spec: &MomentSpec, f: &PiecewiseQuadratic, s: &SolverSettings) -> Result<DroResult> {
    check_sizes(spec, f)?;
    let d = f.decision();
    d.check_compact()?;
    if !q_nonempty(spec) {
        return Err(Error::precondition("c", "the moment data admit no distribution on the box"));
    }

    let n = spec.n();
    let mut b = LmiBuilder::new();
    let lay = common_layout(&mut b, spec, d.m());
    let yblk = b.add_block(LmiBlock::Psd(n));
    for i in 0..n {
        for j in 0..=i {
            b.psd_term(yblk, i, j, lay.big_y[i][j], 1.0);
        }
    }
    let mut mult = Vec::new();
    for piece in f.pieces() {
        let z0 = b.add_vars(n);
        let w0 = b.add_vars(n);
        mult.push((z0, w0));
        let rows = b.add_block(LmiBlock::NonNeg(2 * n));
        for i in 0..n {
            b.row_term(rows, i, z0 + i, 1.0);
            b.row_term(rows, n + i, w0 + i, 1.0);
        }
        let blk = b.add_block(LmiBlock::Psd(n + 1));
        b.psd_term(blk, 0, 0, lay.y0, 1.0);
        for i in 0..n {
            b.psd_term(blk, 0, 0, z0 + i, -1.0);
            b.psd_term(blk, i + 1, 0, lay.y + i, 0.5);
            b.psd_term(blk, i + 1, 0, z0 + i, 0.5);
            b.psd_term(blk, i + 1, 0, w0 + i, -0.5);
            for j in 0..=i {
                b.psd_term(blk, i + 1, j + 1, lay.big_y[i][j], 1.0);
            }
        }
        subtract_piece(&mut b, blk, piece, lay.x);
    }
    d.add_to(&mut b, lay.x);

    let lmi = b.build()?;
    let sol = lmi.solve(s).into_result()?;
    let validation = validate_solution(&lmi.program, &sol, VALIDATION_TOL);
    let v = lmi.vars(&sol);
    let x = v[lay.x..lay.x + d.m()].to_vec();
    for (k, p) in f.pieces().iter().enumerate() {
        let a = p.a_at(&x);
        if a.max_abs() > 0.0 && a.eigen()?.values.last().copied().unwrap_or(0.0) > SHAPE_TOL * (1.0 + a.max_abs()) {
            return Err(Error::precondition("b", format!("A_{k}(x*) is not negative semidefinite")));
        }
    }

    let y0 = v[lay.y0];
    let y = v[lay.y..lay.y + n].to_vec();
    let big_y = symmetric_from(v, &lay.big_y);
    let mut zs: Vec<Vec<f64>> = mult.iter().map(|&(z0, _)| v[z0..z0 + n].to_vec()).collect();
    let mut ws: Vec<Vec<f64>> = mult.iter().map(|&(_, w0)| v[w0..w0 + n].to_vec()).collect();

    let tol = CERTIFICATE_TOL * (1.0 + big_y.max_abs().max(y0.abs()));
    if n > 0 && big_y.min_eigenvalue()? < -tol {
        return Err(Error::Certificate("Y is not PSD".into()));
    }
    for (k, p) in f.pieces().iter().enumerate() {
        if zs[k].iter().chain(&ws[k]).any(|&e| e < -tol) {
            return Err(Error::Certificate(format!("box multipliers of piece {k} are negative")));
        }
        let border: Vec<f64> = (0..n)
            .map(|i| 0.5 * (y[i] + zs[k][i] - ws[k][i] - p.b_at(&x)[i]))
            .collect();
        let corner = y0 - zs[k].iter().sum::<f64>() - p.c_at(&x);
        let cert = big_y.sub(&p.a_at(&x)).bordered(corner, &border);
        if cert.min_eigenvalue()? < -CERTIFICATE_TOL * (1.0 + cert.max_abs()) {
            return Err(Error::Certificate(format!("bordered matrix of piece {k} is not PSD")));
        }
    }
    for e in zs.iter_mut().chain(ws.iter_mut()).flatten() {
        *e = e.max(0.0);
    }

    Ok(DroResult {
        value: -lmi.value(&sol),
        x,
        y0,
        y,
        big_y,
        certificate: DroCertificate::Q { z: zs, w: ws },
        interior: None,
        status: sol.status,
        iterations: sol.iterations,
        validation,
    })
}
