//! Best-effort extraction of a box point whose objective matches the
//! relaxation value.

use serde::{Deserialize, Serialize};

use super::{solve_relaxation, QsmbProblem, QsmbResult, RelaxKind};
use crate::conic::SolverSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMethod {
    /// The moment matrix has rank one, so `x*` itself attains the value.
    Rank1,
    /// `sqrt(diag(X*))`, valid when `c <= 0`.
    SqrtDiagonal,
    /// Coordinates of `x*` at 0 or 1 are fixed and the smaller problem re-solved.
    BoundaryFixing,
    /// Projected gradient descent started from `x*`.
    ProjectedGradient,
}

const PG_MAX_ITERS: usize = 20_000;
/// Distance from 0 or 1 at which a coordinate counts as on the boundary.
const BOUNDARY_TOL: f64 = 1e-5;

fn clip(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn matches(p: &QsmbProblem, x: &[f64], target: f64, tol: f64) -> bool {
    (p.evaluate(x) - target).abs() <= tol * (1.0 + target.abs())
}

/// [`recover_point_with`] under default solver settings.
pub fn recover_point(p: &QsmbProblem, res: &QsmbResult, tol: f64) -> Option<(Vec<f64>, RecoveryMethod)> {
    recover_point_with(p, res, tol, &SolverSettings::default())
}

/// Tries rank-1 extraction, the square-root-of-diagonal point (when
/// `c <= 0`), boundary fixing and projected-gradient polishing, in that
/// order, and returns the first point whose value is within
/// `tol * (1 + |r*|)` of the relaxation value `r*`.
pub fn recover_point_with(
    p: &QsmbProblem,
    res: &QsmbResult,
    tol: f64,
    s: &SolverSettings,
) -> Option<(Vec<f64>, RecoveryMethod)> {
    let target = res.value;
    if res.rank == 1 {
        let x = clip(&res.x);
        if matches(p, &x, target, tol) {
            return Some((x, RecoveryMethod::Rank1));
        }
    }
    if p.c().iter().all(|&v| v <= 0.0) {
        let x: Vec<f64> = res.big_x.diag().iter().map(|v| v.max(0.0).sqrt().min(1.0)).collect();
        if matches(p, &x, target, tol) {
            return Some((x, RecoveryMethod::SqrtDiagonal));
        }
    }
    if let Some(x) = boundary_fixing(p, &res.x, res.kind, s, p.n()) {
        if matches(p, &x, target, tol) {
            return Some((x, RecoveryMethod::BoundaryFixing));
        }
    }
    let x = projected_gradient(p, &clip(&res.x));
    if matches(p, &x, target, tol) {
        return Some((x, RecoveryMethod::ProjectedGradient));
    }
    None
}

/// Fixes every coordinate of `x` near 0 or 1, solves the relaxation of the
/// remaining problem, and recurses (at most `depth` levels).
fn boundary_fixing(
    p: &QsmbProblem,
    x: &[f64],
    kind: RelaxKind,
    s: &SolverSettings,
    depth: usize,
) -> Option<Vec<f64>> {
    let ones: Vec<usize> = (0..p.n()).filter(|&i| x[i] >= 1.0 - BOUNDARY_TOL).collect();
    let zeros: Vec<usize> = (0..p.n()).filter(|&i| x[i] <= BOUNDARY_TOL).collect();
    if ones.is_empty() && zeros.is_empty() {
        return None;
    }
    let mut point = vec![0.0; p.n()];
    for &i in &ones {
        point[i] = 1.0;
    }
    let (free, _, reduced) = p.fix(&ones, &zeros);
    let Some(reduced) = reduced else {
        return Some(point);
    };
    if depth == 0 {
        return None;
    }
    let sub = solve_relaxation(&reduced, kind, s).ok()?;
    let target = sub.value;
    let candidates = [
        (sub.rank == 1).then(|| clip(&sub.x)),
        reduced.c().iter().all(|&v| v <= 0.0).then(|| {
            sub.big_x.diag().iter().map(|v| v.max(0.0).sqrt().min(1.0)).collect()
        }),
        boundary_fixing(&reduced, &sub.x, kind, s, depth - 1),
        Some(projected_gradient(&reduced, &clip(&sub.x))),
    ];
    let sub_x = candidates
        .into_iter()
        .flatten()
        .find(|y| matches(&reduced, y, target, super::RECOVERY_TOL))?;
    for (a, &i) in free.iter().enumerate() {
        point[i] = sub_x[a];
    }
    Some(point)
}

/// Projected gradient descent on the box with step `1 / (2 ||Q||_inf)`.
fn projected_gradient(p: &QsmbProblem, start: &[f64]) -> Vec<f64> {
    let n = p.n();
    let q = p.q();
    let lip = (0..n)
        .map(|i| (0..n).map(|j| q.get(i, j).abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let step = 1.0 / (2.0 * lip).max(1e-12);
    let mut x = start.to_vec();
    for _ in 0..PG_MAX_ITERS {
        let qx = q.mul_vec(&x);
        let mut moved: f64 = 0.0;
        for i in 0..n {
            let g = 2.0 * qx[i] + p.c()[i];
            let nx = (x[i] - step * g).clamp(0.0, 1.0);
            moved = moved.max((nx - x[i]).abs());
            x[i] = nx;
        }
        if moved <= 1e-15 {
            break;
        }
    }
    x
}
