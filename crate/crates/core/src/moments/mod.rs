//! Moment data on `[0,1]^n`, the moment cone `M` (first moments fixed,
//! diagonal second moments fixed, cross moments bounded below) and its dual
//! cone `K` of box-nonnegative quadratics with submodular Hessian, plus the
//! two distributionally robust programs built on them.

mod dro;

use serde::{Deserialize, Serialize};

use crate::conic::{LmiBlock, LmiBuilder, SolverSettings};
use crate::error::{Error, Result};
use crate::qsmb::{build_relaxation, QsmbProblem, RelaxKind};
use crate::symmat::SymMatrix;

pub use dro::{
    dro_settings, solve_dro_p, solve_dro_p_with, solve_dro_q, solve_dro_q_with, DecisionSet, DroCertificate,
    DroResult, LinearConstraint, Piece, PiecewiseQuadratic, CERTIFICATE_TOL,
};

/// Default tolerance for membership and nonemptiness decisions.
pub const MEMBERSHIP_TOL: f64 = 1e-7;
/// Margin required of the feasibility system before `(1, mu, Sigma)` is
/// treated as an interior point of `M`.
pub const INTERIOR_MARGIN: f64 = 1e-6;
/// Tolerance of the PSD test in [`q_nonempty`].
pub const Q_PSD_TOL: f64 = 1e-9;

/// Means `mu` and a matrix `Sigma` whose diagonal fixes `E[xi_i^2]`. For the
/// set `P` the off-diagonals are lower bounds on `E[xi_i xi_j]`; for `Q` the
/// whole matrix bounds `E[xi xi^T]` from above in the PSD order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecJson", into = "SpecJson")]
pub struct MomentSpec {
    mu: Vec<f64>,
    sigma: SymMatrix,
}

#[derive(Serialize, Deserialize)]
struct SpecJson {
    mu: Vec<f64>,
    #[serde(rename = "Sigma")]
    sigma: SymMatrix,
}

impl TryFrom<SpecJson> for MomentSpec {
    type Error = Error;
    fn try_from(j: SpecJson) -> Result<Self> {
        MomentSpec::new(j.mu, j.sigma)
    }
}

impl From<MomentSpec> for SpecJson {
    fn from(s: MomentSpec) -> Self {
        SpecJson { mu: s.mu, sigma: s.sigma }
    }
}

impl MomentSpec {
    pub fn new(mu: Vec<f64>, sigma: SymMatrix) -> Result<Self> {
        if mu.len() != sigma.n() {
            return Err(Error::DimensionMismatch(format!(
                "mu has length {} but Sigma is {}x{}",
                mu.len(),
                sigma.n(),
                sigma.n()
            )));
        }
        if let Some(bad) = mu.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("mean {bad} outside [0, 1]")));
        }
        Ok(MomentSpec { mu, sigma })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &SymMatrix {
        &self.sigma
    }

    /// `mu^T y + Sigma . Y`.
    pub fn pair(&self, y: &[f64], big_y: &SymMatrix) -> f64 {
        crate::linalg::dot(&self.mu, y) + self.sigma.dot(big_y)
    }
}

/// A point `(s0, s, S)` of either cone: `(lambda0, lambda, Lambda)` for `M`,
/// `(y0, y, Y)` for `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConePoint {
    pub scalar: f64,
    pub vector: Vec<f64>,
    pub matrix: SymMatrix,
}

impl ConePoint {
    pub fn new(scalar: f64, vector: Vec<f64>, matrix: SymMatrix) -> Result<Self> {
        if vector.len() != matrix.n() {
            return Err(Error::DimensionMismatch(format!(
                "vector of length {} with a {}x{} matrix",
                vector.len(),
                matrix.n(),
                matrix.n()
            )));
        }
        Ok(ConePoint { scalar, vector, matrix })
    }

    pub fn n(&self) -> usize {
        self.vector.len()
    }

    /// `s0 t0 + s^T t + S . T`.
    pub fn pair(&self, other: &ConePoint) -> f64 {
        self.scalar * other.scalar + crate::linalg::dot(&self.vector, &other.vector) + self.matrix.dot(&other.matrix)
    }
}

/// Outcome of the feasibility system `Lambda <= W <= lambda e^T`,
/// `diag(W) = diag(Lambda)`, `[[lambda0, lambda^T], [lambda, W]] ⪰ 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WSystem {
    /// Smallest uniform violation `t` achievable; feasible iff `t <= tol`.
    pub violation: f64,
    pub w: SymMatrix,
}

/// Minimizes the largest violation `t` of the W-system: every inequality
/// and the PSD block (shifted by `t I`) are relaxed by `t`.
pub fn w_system(lambda0: f64, lambda: &[f64], big_lambda: &SymMatrix, s: &SolverSettings) -> Result<WSystem> {
    let n = lambda.len();
    if big_lambda.n() != n {
        return Err(Error::DimensionMismatch("lambda and Lambda sizes differ".into()));
    }
    let mut b = LmiBuilder::new();
    let t = b.add_var();
    let mut w_var = vec![vec![usize::MAX; n]; n];
    for i in 0..n {
        for j in 0..i {
            let v = b.add_var();
            w_var[i][j] = v;
            w_var[j][i] = v;
        }
    }
    b.add_gain(t, -1.0);

    let psd = b.add_block(LmiBlock::Psd(n + 1));
    b.psd_constant(psd, 0, 0, lambda0);
    for i in 0..n {
        b.psd_constant(psd, i + 1, 0, lambda[i]);
        b.psd_constant(psd, i + 1, i + 1, big_lambda.get(i, i));
    }
    for d in 0..=n {
        b.psd_term(psd, d, d, t, 1.0);
    }
    for i in 0..n {
        for j in 0..i {
            b.psd_term(psd, i + 1, j + 1, w_var[i][j], 1.0);
        }
    }

    // W_ij >= Lambda_ij, W_ij <= lambda_i, W_ij <= lambda_j (i > j); Lambda_ii <= lambda_i.
    let pairs = n * (n - 1) / 2;
    let rows = b.add_block(LmiBlock::NonNeg(3 * pairs + n));
    let mut r = 0;
    for i in 0..n {
        for j in 0..i {
            let v = w_var[i][j];
            b.row_constant(rows, r, -big_lambda.get(i, j));
            b.row_term(rows, r, v, 1.0);
            b.row_term(rows, r, t, 1.0);
            r += 1;
            for bound in [lambda[i], lambda[j]] {
                b.row_constant(rows, r, bound);
                b.row_term(rows, r, v, -1.0);
                b.row_term(rows, r, t, 1.0);
                r += 1;
            }
        }
    }
    for i in 0..n {
        b.row_constant(rows, r, lambda[i] - big_lambda.get(i, i));
        b.row_term(rows, r, t, 1.0);
        r += 1;
    }

    let lmi = b.build()?;
    let sol = lmi.solve(s).into_result()?;
    let v = lmi.vars(&sol);
    let w = SymMatrix::from_fn(n, |i, j| if i == j { big_lambda.get(i, i) } else { v[w_var[i][j]] });
    Ok(WSystem { violation: v[t], w })
}

fn feasibility_settings() -> SolverSettings {
    SolverSettings::with_tolerance(1e-10)
}

/// Whether some distribution on `[0,1]^n` matches `spec` in the sense of
/// the set `P`; returns the certificate `W` when it does.
pub fn p_nonempty(spec: &MomentSpec) -> Result<(bool, Option<SymMatrix>)> {
    p_nonempty_with(spec, MEMBERSHIP_TOL, &feasibility_settings())
}

pub fn p_nonempty_with(spec: &MomentSpec, tol: f64, s: &SolverSettings) -> Result<(bool, Option<SymMatrix>)> {
    let sys = w_system(1.0, spec.mu(), spec.sigma(), s)?;
    if sys.violation <= tol {
        Ok((true, Some(sys.w)))
    } else {
        Ok((false, None))
    }
}

/// Interior test used before solving over `P`: the W-system must hold with
/// every inequality and the PSD block slack by at least `margin`.
pub fn p_interior(spec: &MomentSpec, margin: f64) -> Result<bool> {
    let sys = w_system(1.0, spec.mu(), spec.sigma(), &feasibility_settings())?;
    Ok(sys.violation < -margin)
}

/// Nonemptiness of the set `Q` on the unit box: `mu in [0,1]^n` and
/// `[[1, mu^T], [mu, Sigma]] ⪰ 0` within [`Q_PSD_TOL`].
pub fn q_nonempty(spec: &MomentSpec) -> bool {
    spec.mu().iter().all(|v| (0.0..=1.0).contains(v))
        && spec
            .sigma()
            .bordered(1.0, spec.mu())
            .is_psd(Q_PSD_TOL)
            .unwrap_or(false)
}

/// Membership of `(lambda0, lambda, Lambda)` in the moment cone `M`.
pub fn m_cone_member(pt: &ConePoint, tol: f64) -> Result<(bool, Option<SymMatrix>)> {
    let sys = w_system(pt.scalar, &pt.vector, &pt.matrix, &feasibility_settings())?;
    Ok(if sys.violation <= tol { (true, Some(sys.w)) } else { (false, None) })
}

/// Result of a `K`-cone membership query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMembership {
    pub member: bool,
    /// `min { y0 + y^T xi + xi^T Y xi : xi in [0,1]^n }` from the tight
    /// relaxation; absent when `Y` is not submodular.
    pub box_minimum: Option<f64>,
    /// Square (generally nonsymmetric) `Z >= 0` such that
    /// `[[y0, (y - Z^T e)^T/2], [(y - Z^T e)/2, Y + (Z + Z^T)/2]] ⪰ 0`.
    pub z: Option<Vec<Vec<f64>>>,
}

/// Membership of `(y0, y, Y)` in `K`: `Y` submodular and the quadratic
/// nonnegative on the box, decided through the tight relaxation.
pub fn k_cone_member(pt: &ConePoint, tol: f64) -> Result<KMembership> {
    if !pt.matrix.is_submodular(0.0) {
        return Ok(KMembership { member: false, box_minimum: None, z: None });
    }
    let p = QsmbProblem::new(pt.matrix.clone(), pt.vector.clone(), pt.scalar)?;
    let (nu, z) = k_certificate(&p)?;
    let member = nu >= -tol;
    Ok(KMembership { member, box_minimum: Some(nu), z: member.then_some(z) })
}

/// Box minimum and the multiplier matrix of the rows `X_ij <= x_i`.
fn k_certificate(p: &QsmbProblem) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = p.n();
    let prog = build_relaxation(p, RelaxKind::TightRlt);
    let sol = crate::conic::solve_conic(&prog, &SolverSettings::default()).into_result()?;
    // Row 0 pins the corner; row 1 + i*n + j is X_ij <= x_i with slack
    // multiplier -y. Transposing matches the (y - Z^T e) convention.
    let z: Vec<Vec<f64>> = (0..n)
        .map(|a| (0..n).map(|b| (-sol.y[1 + b * n + a]).max(0.0)).collect())
        .collect();
    Ok((sol.primal_objective, z))
}

/// `[[y0, (y - Z^T e)^T/2], [(y - Z^T e)/2, Y + (Z + Z^T)/2]]`.
pub fn k_certificate_matrix(pt: &ConePoint, z: &[Vec<f64>]) -> SymMatrix {
    let (y0, y, big_y) = (pt.scalar, &pt.vector, &pt.matrix);
    let n = y.len();
    let col_sums: Vec<f64> = (0..n).map(|j| (0..n).map(|i| z[i][j]).sum()).collect();
    let border: Vec<f64> = (0..n).map(|i| 0.5 * (y[i] - col_sums[i])).collect();
    let inner = SymMatrix::from_fn(n, |i, j| big_y.get(i, j) + 0.5 * (z[i][j] + z[j][i]));
    inner.bordered(y0, &border)
}
