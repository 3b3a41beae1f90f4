//! Exact global minimum for small `n` by enumerating face patterns.
//!
//! A global minimizer of a quadratic over a box lies in the relative
//! interior of some face. If the restricted Hessian `Q_II` on that face is
//! singular the objective is constant along its null space inside the face,
//! so the minimum is also attained on a smaller face. Hence solving the
//! stationarity system on every face with nonsingular `Q_II`, plus all
//! vertices, is exact; singular faces contribute extra candidates only.

use super::QsmbProblem;
use crate::error::{Error, Result};
use crate::symmat::SymMatrix;

pub const ORACLE_MAX_N: usize = 12;
const GRID_POINTS: usize = 101;
/// Singular faces up to this many free coordinates also get a grid sweep.
const GRID_MAX_DIM: usize = 2;
const SINGULAR_TOL: f64 = 1e-12;

/// Exact minimum over `[0,1]^n`, with a minimizer.
pub fn oracle_global_min(p: &QsmbProblem) -> Result<(f64, Vec<f64>)> {
    let n = p.n();
    oracle_global_min_box(p, &vec![0.0; n], &vec![1.0; n])
}

/// Exact minimum over `[l, u]`. Vertices are scanned first and only
/// strictly better candidates replace the incumbent.
pub fn oracle_global_min_box(p: &QsmbProblem, l: &[f64], u: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = p.n();
    if n > ORACLE_MAX_N {
        return Err(Error::DimensionTooLarge { n, max: ORACLE_MAX_N });
    }
    if l.len() != n || u.len() != n || l.iter().zip(u).any(|(a, b)| !(a <= b)) {
        return Err(Error::InvalidInput("oracle box must have length n and l <= u".into()));
    }
    let mut best_x: Vec<f64> = l.to_vec();
    let mut best = p.evaluate(&best_x);
    let consider = |x: Vec<f64>, best: &mut f64, best_x: &mut Vec<f64>| {
        let v = p.evaluate(&x);
        if v < *best {
            *best = v;
            *best_x = x;
        }
    };

    for mask in 0u32..(1 << n) {
        let x: Vec<f64> = (0..n).map(|i| if mask >> i & 1 == 1 { u[i] } else { l[i] }).collect();
        consider(x, &mut best, &mut best_x);
    }

    // Patterns in base 3: digit 0 -> lower, 1 -> upper, 2 -> interior.
    let total = 3usize.pow(n as u32);
    let mut digits = vec![0u8; n];
    for code in 0..total {
        let mut c = code;
        for d in digits.iter_mut() {
            *d = (c % 3) as u8;
            c /= 3;
        }
        let interior: Vec<usize> = (0..n).filter(|&i| digits[i] == 2).collect();
        if interior.is_empty() {
            continue;
        }
        let mut x: Vec<f64> = (0..n)
            .map(|i| match digits[i] {
                0 => l[i],
                1 => u[i],
                _ => 0.0,
            })
            .collect();
        for cand in face_candidates(p, &interior, &x, l, u)? {
            for (&i, v) in interior.iter().zip(&cand) {
                x[i] = *v;
            }
            consider(x.clone(), &mut best, &mut best_x);
        }
    }
    Ok((best, best_x))
}

/// Candidate values for the interior coordinates of one face; `x` holds the
/// fixed coordinates.
fn face_candidates(
    p: &QsmbProblem,
    interior: &[usize],
    x: &[f64],
    l: &[f64],
    u: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = p.n();
    let q = p.q();
    // Stationarity on the face: 2 Q_II x_I = -(c_I + 2 Q_IF x_F).
    let rhs: Vec<f64> = interior
        .iter()
        .map(|&i| {
            let fixed: f64 = (0..n)
                .filter(|j| !interior.contains(j))
                .map(|j| q.get(i, j) * x[j])
                .sum();
            -0.5 * p.c()[i] - fixed
        })
        .collect();
    let qii: SymMatrix = q.principal(interior);
    let e = qii.eigen()?;
    let top = e.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let cutoff = SINGULAR_TOL * top.max(1.0);
    let k = interior.len();
    // Least-norm solution through the eigenbasis.
    let mut sol = vec![0.0; k];
    let mut singular = false;
    for (col, &lam) in e.values.iter().enumerate() {
        if lam.abs() <= cutoff {
            singular = true;
            continue;
        }
        let proj: f64 = (0..k).map(|r| e.vectors[(r, col)] * rhs[r]).sum::<f64>() / lam;
        for r in 0..k {
            sol[r] += proj * e.vectors[(r, col)];
        }
    }
    let clip = |a: usize, v: f64| v.clamp(l[interior[a]], u[interior[a]]);
    let mut out = vec![sol.iter().enumerate().map(|(a, &v)| clip(a, v)).collect::<Vec<f64>>()];
    if singular && k <= GRID_MAX_DIM {
        let axis = |a: usize, t: usize| {
            let (lo, hi) = (l[interior[a]], u[interior[a]]);
            lo + (hi - lo) * t as f64 / (GRID_POINTS - 1) as f64
        };
        if k == 1 {
            out.extend((0..GRID_POINTS).map(|t| vec![axis(0, t)]));
        } else {
            for t0 in 0..GRID_POINTS {
                for t1 in 0..GRID_POINTS {
                    out.push(vec![axis(0, t0), axis(1, t1)]);
                }
            }
        }
    }
    Ok(out)
}
