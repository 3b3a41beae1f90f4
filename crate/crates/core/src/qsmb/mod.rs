//! Box-constrained quadratic minimization `min x^T Q x + c^T x + kappa`,
//! `x in [0,1]^n`, its semidefinite relaxations, point recovery, and an
//! exact enumeration oracle for small `n`.
//!
//! All relaxations work on the moment matrix `M = [[1, x^T], [x, X]] ⪰ 0`
//! with objective `<[[kappa, c^T/2], [c/2, Q]], M>`. They differ in the
//! linear inequalities linking `X` to `x`.

mod oracle;
mod recover;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, Cone, ConicProgram, SolverSettings, ValidationReport};
use crate::conic::{validate_solution, VALIDATION_TOL};
use crate::error::{Error, Result};
use crate::symmat::SymMatrix;

pub use oracle::{oracle_global_min, oracle_global_min_box, ORACLE_MAX_N};
pub use recover::{recover_point, recover_point_with, RecoveryMethod};

/// Eigenvalues above this fraction of the largest count toward the rank.
pub const RANK_TOL: f64 = 1e-6;
/// Relative agreement between a recovered value and the relaxation value.
pub const RECOVERY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProblemJson", into = "ProblemJson")]
pub struct QsmbProblem {
    q: SymMatrix,
    c: Vec<f64>,
    kappa: f64,
}

#[derive(Serialize, Deserialize)]
struct ProblemJson {
    #[serde(rename = "Q")]
    q: SymMatrix,
    c: Vec<f64>,
    #[serde(default)]
    kappa: f64,
}

impl TryFrom<ProblemJson> for QsmbProblem {
    type Error = Error;
    fn try_from(j: ProblemJson) -> Result<Self> {
        QsmbProblem::new(j.q, j.c, j.kappa)
    }
}

impl From<QsmbProblem> for ProblemJson {
    fn from(p: QsmbProblem) -> Self {
        ProblemJson { q: p.q, c: p.c, kappa: p.kappa }
    }
}

impl QsmbProblem {
    pub fn new(q: SymMatrix, c: Vec<f64>, kappa: f64) -> Result<Self> {
        if c.len() != q.n() {
            return Err(Error::DimensionMismatch(format!(
                "Q is {0}x{0} but c has length {1}",
                q.n(),
                c.len()
            )));
        }
        if c.iter().chain([&kappa]).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("c and kappa must be finite".into()));
        }
        Ok(QsmbProblem { q, c, kappa })
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn q(&self) -> &SymMatrix {
        &self.q
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn is_submodular(&self) -> bool {
        self.q.is_submodular(0.0)
    }

    /// `x^T Q x + c^T x + kappa`.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        evaluate_qp(self, x)
    }

    /// Objective matrix `[[kappa, c^T/2], [c/2, Q]]` over the moment matrix.
    pub fn moment_objective(&self) -> SymMatrix {
        let half: Vec<f64> = self.c.iter().map(|v| 0.5 * v).collect();
        self.q.bordered(self.kappa, &half)
    }

    /// Magnitude used for relative tolerances.
    pub fn scale(&self) -> f64 {
        1.0 + self.q.max_abs() + self.c.iter().fold(0.0_f64, |m, v| m.max(v.abs())) + self.kappa.abs()
    }

    /// Problem on `[0,1]^n` equivalent to minimizing this objective over
    /// `[l, u]` through `x = l + diag(u - l) t`.
    pub fn to_unit_box(&self, l: &[f64], u: &[f64]) -> Result<QsmbProblem> {
        let n = self.n();
        if l.len() != n || u.len() != n {
            return Err(Error::DimensionMismatch("box bounds must have length n".into()));
        }
        if l.iter().zip(u).any(|(a, b)| !(a <= b)) {
            return Err(Error::InvalidInput("box needs l <= u".into()));
        }
        let d: Vec<f64> = l.iter().zip(u).map(|(a, b)| b - a).collect();
        let ql = self.q.mul_vec(l);
        let q = SymMatrix::from_fn(n, |i, j| d[i] * self.q.get(i, j) * d[j]);
        let c = (0..n).map(|i| d[i] * (2.0 * ql[i] + self.c[i])).collect();
        let kappa = self.q.quad_form(l) + crate::linalg::dot(&self.c, l) + self.kappa;
        QsmbProblem::new(q, c, kappa)
    }

    /// Fixes the coordinates in `ones` to 1 and those in `zeros` to 0.
    /// Returns the free coordinates (increasing), the constant term after
    /// fixing, and the problem over the free coordinates if any remain.
    pub fn fix(&self, ones: &[usize], zeros: &[usize]) -> (Vec<usize>, f64, Option<QsmbProblem>) {
        let n = self.n();
        let free: Vec<usize> = (0..n).filter(|i| !ones.contains(i) && !zeros.contains(i)).collect();
        let mut kappa = self.kappa;
        for &j in ones {
            kappa += self.c[j];
            for &k in ones {
                kappa += self.q.get(j, k);
            }
        }
        if free.is_empty() {
            return (free, kappa, None);
        }
        let c: Vec<f64> = free
            .iter()
            .map(|&i| self.c[i] + ones.iter().map(|&j| 2.0 * self.q.get(i, j)).sum::<f64>())
            .collect();
        let reduced = QsmbProblem { q: self.q.principal(&free), c, kappa };
        (free, kappa, Some(reduced))
    }
}

/// Seeded instance with off-diagonals `-U(0,1)`, diagonal `U(-1,1)`,
/// `c ~ U(-1,1)^n` and `kappa = 0`; always submodular.
pub fn random_submodular<R: Rng>(n: usize, rng: &mut R) -> QsmbProblem {
    let q = SymMatrix::from_fn(n, |i, j| {
        if i == j {
            rng.gen_range(-1.0..1.0)
        } else {
            -rng.gen_range(0.0..1.0)
        }
    });
    let c = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    QsmbProblem { q, c, kappa: 0.0 }
}

/// Objective value at `x` (points outside the box are evaluated as is).
pub fn evaluate_qp(p: &QsmbProblem, x: &[f64]) -> f64 {
    assert_eq!(x.len(), p.n(), "point has the wrong length");
    p.q.quad_form(x) + crate::linalg::dot(&p.c, x) + p.kappa
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxKind {
    /// `diag(X) <= 1`.
    Basic,
    /// `X_ij <= x_i` for all `i, j`.
    TightRlt,
    /// All four product inequalities: `X <= x e^T`, `X <= e x^T`, `X >= 0`,
    /// `X >= x e^T + e x^T - e e^T`.
    FullRlt,
}

impl RelaxKind {
    /// Number of inequality rows for dimension `n`.
    pub fn row_count(self, n: usize) -> usize {
        match self {
            RelaxKind::Basic => n,
            RelaxKind::TightRlt => n * n,
            RelaxKind::FullRlt => 2 * n * n + n * (n + 1),
        }
    }
}

/// Lowers the relaxation to a standard-form program: block 0 is the
/// `(n+1)`-dimensional moment matrix, block 1 holds one slack per inequality.
pub fn build_relaxation(p: &QsmbProblem, kind: RelaxKind) -> ConicProgram {
    let n = p.n();
    let rows = kind.row_count(n);
    let mut prog = ConicProgram::new(vec![Cone::Psd(n + 1), Cone::NonNeg(rows)]);
    prog.set_psd_objective(0, &p.moment_objective());
    let slack0 = prog.block_offset(1);
    let entry = |prog: &ConicProgram, a: usize, b: usize, coef: f64| {
        let (k, f) = prog.psd_entry(0, a, b);
        (k, coef * f)
    };
    prog.add_constraint(&[entry(&prog, 0, 0, 1.0)], 1.0).expect("corner row");

    let mut s = slack0;
    let mut push = |prog: &mut ConicProgram, mut row: Vec<(usize, f64)>, slack: f64, rhs: f64| {
        row.push((s, slack));
        s += 1;
        prog.add_constraint(&row, rhs).expect("relaxation row");
    };
    // X_ij <= x_i
    let upper_i = |prog: &ConicProgram, i: usize, j: usize| {
        vec![entry(prog, i + 1, j + 1, 1.0), entry(prog, i + 1, 0, -1.0)]
    };
    match kind {
        RelaxKind::Basic => {
            for i in 0..n {
                let row = vec![entry(&prog, i + 1, i + 1, 1.0)];
                push(&mut prog, row, 1.0, 1.0);
            }
        }
        RelaxKind::TightRlt => {
            for i in 0..n {
                for j in 0..n {
                    let row = upper_i(&prog, i, j);
                    push(&mut prog, row, 1.0, 0.0);
                }
            }
        }
        RelaxKind::FullRlt => {
            for i in 0..n {
                for j in 0..n {
                    let row = upper_i(&prog, i, j);
                    push(&mut prog, row, 1.0, 0.0);
                }
            }
            // X_ij <= x_j
            for i in 0..n {
                for j in 0..n {
                    let row = vec![entry(&prog, i + 1, j + 1, 1.0), entry(&prog, j + 1, 0, -1.0)];
                    push(&mut prog, row, 1.0, 0.0);
                }
            }
            // X_ij >= 0
            for i in 0..n {
                for j in i..n {
                    let row = vec![entry(&prog, i + 1, j + 1, 1.0)];
                    push(&mut prog, row, -1.0, 0.0);
                }
            }
            // X_ij >= x_i + x_j - 1
            for i in 0..n {
                for j in i..n {
                    let row = vec![
                        entry(&prog, i + 1, j + 1, 1.0),
                        entry(&prog, i + 1, 0, -1.0),
                        entry(&prog, j + 1, 0, -1.0),
                    ];
                    push(&mut prog, row, -1.0, -1.0);
                }
            }
        }
    }
    debug_assert_eq!(s, slack0 + rows);
    prog
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovered {
    pub x: Vec<f64>,
    pub value: f64,
    pub method: RecoveryMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QsmbResult {
    pub kind: RelaxKind,
    /// Relaxation value `r*`.
    pub value: f64,
    pub x: Vec<f64>,
    #[serde(rename = "X")]
    pub big_x: SymMatrix,
    /// Numeric rank of the moment matrix at [`RANK_TOL`].
    pub rank: usize,
    pub recovered: Option<Recovered>,
    /// Whether `r*` matched the exact minimum; unset until compared.
    pub tight: Option<bool>,
    pub iterations: usize,
    pub rel_gap: f64,
    pub validation: ValidationReport,
}

impl QsmbResult {
    /// Moment matrix `[[1, x^T], [x, X]]`.
    pub fn moment_matrix(&self) -> SymMatrix {
        self.big_x.bordered(1.0, &self.x)
    }

    /// Compares against the exact minimum and records the tight flag.
    pub fn compare_with_oracle(&mut self, p: &QsmbProblem, tol: f64) -> Result<f64> {
        let (best, _) = oracle_global_min(p)?;
        self.tight = Some((self.value - best).abs() <= tol * (1.0 + best.abs()));
        Ok(best)
    }
}

pub(crate) fn numeric_rank(m: &SymMatrix) -> Result<usize> {
    let e = m.eigen()?;
    let top = e.values.last().copied().unwrap_or(0.0).max(0.0);
    Ok(e.values.iter().filter(|&&v| v > RANK_TOL * top).count())
}

/// Solves the relaxation without attempting recovery.
pub fn solve_relaxation(p: &QsmbProblem, kind: RelaxKind, s: &SolverSettings) -> Result<QsmbResult> {
    s.validate()?;
    let prog = build_relaxation(p, kind);
    let sol = solve_conic(&prog, s).into_result()?;
    let validation = validate_solution(&prog, &sol, VALIDATION_TOL);
    let n = p.n();
    let m = prog.psd_block_matrix(&sol.x, 0);
    let x: Vec<f64> = (0..n).map(|i| m[(i + 1, 0)]).collect();
    let big_x = SymMatrix::from_fn(n, |i, j| m[(i + 1, j + 1)]);
    let moment = big_x.bordered(1.0, &x);
    Ok(QsmbResult {
        kind,
        value: sol.primal_objective,
        x,
        big_x,
        rank: numeric_rank(&moment)?,
        recovered: None,
        tight: None,
        iterations: sol.iterations,
        rel_gap: sol.rel_gap,
        validation,
    })
}

/// Solves the relaxation and tries to recover a box point attaining its value.
pub fn solve_qsmb(p: &QsmbProblem, kind: RelaxKind, s: &SolverSettings) -> Result<QsmbResult> {
    let mut res = solve_relaxation(p, kind, s)?;
    res.recovered = recover_point_with(p, &res, RECOVERY_TOL, s)
        .map(|(x, method)| Recovered { value: p.evaluate(&x), x, method });
    Ok(res)
}

#[cfg(test)]
mod tests;
