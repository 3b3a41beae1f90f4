//! Infeasible-start primal-dual interior-point method with Nesterov-Todd
//! scaling and Mehrotra predictor-corrector steps.
//!
//! Each iteration scales every cone block so the primal and dual iterates
//! coincide at a point `lambda` (diagonal for PSD blocks), solves the
//! Newton system through the dense Schur complement `A W A^T`, and takes a
//! common primal/dual step. Free blocks are eliminated through a second
//! Schur complement `A_F^T M^{-1} A_F`.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};

use super::presolve::{presolve, Presolved};
use super::{Cone, ConicProgram, ConicSolution, SolveStatus, SolverSettings};
use crate::linalg::{dot, norm_inf, sym_eigen, Cholesky, Mat};
use crate::symmat::{pack, svec_len, svec_position, unpack};

const REG_START: f64 = 1e-12;
const REG_CAP: f64 = 1e-6;
/// Iterations before divergence-based infeasibility classification.
const INFEASIBILITY_MIN_ITER: usize = 50;
/// Certificate quality that classifies infeasibility immediately.
const INFEASIBILITY_CLEAR: f64 = 1e-12;
const STALL_LIMIT: usize = 8;
const TINY_STEP: f64 = 1e-9;

struct Block {
    cone: Cone,
    offset: usize,
    /// Rows touching the block with their local `(coord, value)` entries.
    rows: Vec<(usize, Vec<(usize, f64)>)>,
    /// Column lists `(row, value)` per local coordinate (orthant and free blocks).
    cols: Vec<Vec<(usize, f64)>>,
}

enum Scaling {
    Psd { r: Mat, w: Mat, lambda: Vec<f64> },
    NonNeg { d: Vec<f64>, lambda: Vec<f64> },
    Free,
}

/// Per-block vectors in scaled coordinates.
#[derive(Clone)]
enum Scaled {
    Psd(Mat),
    Vec(Vec<f64>),
    Free,
}

struct Direction {
    dx: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<f64>,
    dxt: Vec<Scaled>,
    dst: Vec<Scaled>,
}

struct Problem<'a> {
    original: &'a ConicProgram,
    pre: Presolved,
    blocks: Vec<Block>,
    c: Vec<f64>,
    m: usize,
    n: usize,
    degree: usize,
    b_norm: f64,
    c_norm: f64,
    orig_b_norm: f64,
}

impl<'a> Problem<'a> {
    fn new(p: &'a ConicProgram) -> Self {
        let pre = presolve(p);
        let n = p.num_coords();
        let m = pre.rows.len();
        let mut blocks: Vec<Block> = p
            .cones()
            .iter()
            .enumerate()
            .map(|(k, &cone)| Block {
                cone,
                offset: p.block_offset(k),
                rows: Vec::new(),
                cols: match cone {
                    Cone::Psd(_) => Vec::new(),
                    _ => vec![Vec::new(); cone.dim()],
                },
            })
            .collect();
        let mut block_of = vec![0; n];
        for (k, blk) in blocks.iter().enumerate() {
            block_of[blk.offset..blk.offset + blk.cone.dim()].iter_mut().for_each(|b| *b = k);
        }
        for (i, row) in pre.rows.iter().enumerate() {
            for &(j, v) in row {
                let k = block_of[j];
                let local = j - blocks[k].offset;
                match blocks[k].cone {
                    Cone::Psd(_) => {
                        if blocks[k].rows.last().map(|r| r.0) != Some(i) {
                            blocks[k].rows.push((i, Vec::new()));
                        }
                        blocks[k].rows.last_mut().unwrap().1.push((local, v));
                    }
                    _ => blocks[k].cols[local].push((i, v)),
                }
            }
        }
        let degree = p.cones().iter().map(|c| c.degree()).sum();
        let c = p.objective().to_vec();
        let b_norm = norm_inf(&pre.rhs);
        let c_norm = norm_inf(&c);
        let orig_b_norm = p.constraints().iter().fold(0.0_f64, |a, r| a.max(r.rhs.abs()));
        Problem { original: p, pre, blocks, c, m, n, degree, b_norm, c_norm, orig_b_norm }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.pre.rows.iter().map(|r| r.iter().map(|&(j, v)| v * x[j]).sum()).collect()
    }

    fn apply_t(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (r, &yi) in self.pre.rows.iter().zip(y) {
            if yi != 0.0 {
                for &(j, v) in r {
                    out[j] += v * yi;
                }
            }
        }
        out
    }
}

struct Iterate {
    x: Vec<f64>,
    y: Vec<f64>,
    s: Vec<f64>,
}

pub(crate) fn solve(p: &ConicProgram, settings: &SolverSettings) -> ConicSolution {
    let prob = Problem::new(p);
    if prob.pre.inconsistent.is_some() {
        let it = Iterate { x: vec![0.0; prob.n], y: vec![0.0; prob.m], s: vec![0.0; prob.n] };
        return finish(&prob, &it, SolveStatus::PrimalInfeasible, 0, settings);
    }
    let mut it = initial_point(&prob);
    let mut stalled = 0;

    for iter in 0..=settings.max_iterations {
        let ax = prob.apply(&it.x);
        let r_p: Vec<f64> = prob.pre.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let aty = prob.apply_t(&it.y);
        let mut r_d: Vec<f64> = (0..prob.n).map(|j| prob.c[j] - aty[j] - it.s[j]).collect();
        for blk in &prob.blocks {
            if let Cone::Free(f) = blk.cone {
                for j in blk.offset..blk.offset + f {
                    r_d[j] = prob.c[j] - aty[j];
                }
            }
        }
        let pobj = dot(&prob.c, &it.x);
        let dobj = dot(&prob.pre.rhs, &it.y);
        let pres = (norm_inf(&r_p) / (1.0 + prob.b_norm)).max(original_residual(&prob, &it.x));
        let dres = norm_inf(&r_d) / (1.0 + prob.c_norm);
        let rel_gap = (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs()));
        let complementarity = cone_dot(&prob, &it.x, &it.s);
        let rel_comp = complementarity.abs() / (1.0 + pobj.abs().max(dobj.abs()));

        if !(pobj.is_finite() && dobj.is_finite() && pres.is_finite() && dres.is_finite()) {
            return finish(&prob, &it, SolveStatus::NumericalFailure, iter, settings);
        }
        if pres <= settings.feas_tol
            && dres <= settings.feas_tol
            && rel_gap <= settings.gap_tol
            && rel_comp <= settings.gap_tol
        {
            return finish(&prob, &it, SolveStatus::Optimal, iter, settings);
        }
        if let Some(status) = classify_infeasibility(&prob, &it, iter, settings) {
            return finish(&prob, &it, status, iter, settings);
        }
        if iter == settings.max_iterations {
            return finish(&prob, &it, SolveStatus::MaxIterations, iter, settings);
        }

        let mu = if prob.degree > 0 { complementarity / prob.degree as f64 } else { 0.0 };
        let scalings = match compute_scalings(&prob, &it) {
            Some(s) => s,
            None => return finish(&prob, &it, SolveStatus::NumericalFailure, iter, settings),
        };
        let system = match NewtonSystem::assemble(&prob, &scalings) {
            Some(s) => s,
            None => return finish(&prob, &it, SolveStatus::NumericalFailure, iter, settings),
        };

        // Predictor.
        let u_aff: Vec<Scaled> = scalings
            .iter()
            .map(|sc| match sc {
                Scaling::Psd { lambda, .. } => Scaled::Psd(Mat::from_diag(&neg(lambda))),
                Scaling::NonNeg { lambda, .. } => Scaled::Vec(neg(lambda)),
                Scaling::Free => Scaled::Free,
            })
            .collect();
        let aff = system.direction(&prob, &scalings, &u_aff, &r_p, &r_d);
        let alpha_aff = max_step(&scalings, &aff).min(1.0);
        let mu_aff = if prob.degree > 0 {
            let xa: Vec<f64> = it.x.iter().zip(&aff.dx).map(|(a, b)| a + alpha_aff * b).collect();
            let sa: Vec<f64> = it.s.iter().zip(&aff.ds).map(|(a, b)| a + alpha_aff * b).collect();
            cone_dot(&prob, &xa, &sa) / prob.degree as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff.max(0.0) / mu).powi(3).clamp(0.0, 1.0) } else { 0.0 };

        // Corrector.
        let u_cc: Vec<Scaled> = scalings
            .iter()
            .enumerate()
            .map(|(k, sc)| corrector_target(sc, &aff.dxt[k], &aff.dst[k], sigma * mu))
            .collect();
        let dir = system.direction(&prob, &scalings, &u_cc, &r_p, &r_d);
        let alpha_max = max_step(&scalings, &dir);
        let alpha = (settings.step_fraction * alpha_max).min(1.0);
        if !alpha.is_finite() || alpha <= 0.0 {
            return finish(&prob, &it, SolveStatus::NumericalFailure, iter, settings);
        }
        stalled = if alpha < TINY_STEP { stalled + 1 } else { 0 };
        if stalled >= STALL_LIMIT {
            return finish(&prob, &it, SolveStatus::NumericalFailure, iter, settings);
        }
        for (x, d) in it.x.iter_mut().zip(&dir.dx) {
            *x += alpha * d;
        }
        for (s, d) in it.s.iter_mut().zip(&dir.ds) {
            *s += alpha * d;
        }
        for (y, d) in it.y.iter_mut().zip(&dir.dy) {
            *y += alpha * d;
        }
    }
    unreachable!("loop returns at max_iterations")
}

fn neg(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

fn original_residual(prob: &Problem, x: &[f64]) -> f64 {
    let ax = prob.original.apply(x);
    let r = prob
        .original
        .constraints()
        .iter()
        .zip(&ax)
        .fold(0.0_f64, |m, (c, a)| m.max((c.rhs - a).abs()));
    r / (1.0 + prob.orig_b_norm)
}

fn initial_point(prob: &Problem) -> Iterate {
    let zeta = 1.0_f64.max(prob.b_norm).max(prob.c_norm);
    let mut x = vec![0.0; prob.n];
    let mut s = vec![0.0; prob.n];
    for blk in &prob.blocks {
        match blk.cone {
            Cone::Psd(d) => {
                for i in 0..d {
                    let k = blk.offset + i * (i + 1) / 2 + i;
                    x[k] = zeta;
                    s[k] = zeta;
                }
            }
            Cone::NonNeg(m) => {
                for k in blk.offset..blk.offset + m {
                    x[k] = zeta;
                    s[k] = zeta;
                }
            }
            Cone::Free(_) => {}
        }
    }
    Iterate { x, y: vec![0.0; prob.m], s }
}

/// `<x, s>` over the non-free blocks.
fn cone_dot(prob: &Problem, x: &[f64], s: &[f64]) -> f64 {
    prob.blocks
        .iter()
        .filter(|b| !matches!(b.cone, Cone::Free(_)))
        .map(|b| {
            let r = b.offset..b.offset + b.cone.dim();
            dot(&x[r.clone()], &s[r])
        })
        .sum()
}

fn classify_infeasibility(
    prob: &Problem,
    it: &Iterate,
    iter: usize,
    settings: &SolverSettings,
) -> Option<SolveStatus> {
    let threshold = if iter >= INFEASIBILITY_MIN_ITER { settings.feas_tol } else { INFEASIBILITY_CLEAR };
    let by = dot(&prob.pre.rhs, &it.y);
    if by > 0.0 {
        let mut ray = prob.apply_t(&it.y);
        for (r, s) in ray.iter_mut().zip(&it.s) {
            *r += s;
        }
        if norm_inf(&ray) / by <= threshold {
            return Some(SolveStatus::PrimalInfeasible);
        }
    }
    let cx = dot(&prob.c, &it.x);
    if cx < 0.0 {
        let ax = prob.apply(&it.x);
        if norm_inf(&ax) / -cx <= threshold {
            return Some(SolveStatus::DualInfeasible);
        }
    }
    None
}

fn compute_scalings(prob: &Problem, it: &Iterate) -> Option<Vec<Scaling>> {
    prob.blocks
        .iter()
        .map(|blk| match blk.cone {
            Cone::Psd(d) => {
                let r = blk.offset..blk.offset + svec_len(d);
                psd_scaling(&it.x[r.clone()], &it.s[r], d)
            }
            Cone::NonNeg(m) => {
                let r = blk.offset..blk.offset + m;
                let (x, s) = (&it.x[r.clone()], &it.s[r]);
                if x.iter().chain(s).any(|&v| !(v > 0.0)) {
                    return None;
                }
                let d = x.iter().zip(s).map(|(a, b)| (a / b).sqrt()).collect();
                let lambda = x.iter().zip(s).map(|(a, b)| (a * b).sqrt()).collect();
                Some(Scaling::NonNeg { d, lambda })
            }
            Cone::Free(_) => Some(Scaling::Free),
        })
        .collect()
}

/// NT scaling `R` with `R^{-1} X R^{-T} = R^T S R = diag(lambda)`.
fn psd_scaling(xv: &[f64], sv: &[f64], d: usize) -> Option<Scaling> {
    let x = unpack(xv, d);
    let s = unpack(sv, d);
    let ex = sym_eigen(&x).ok()?;
    if !(ex.values[0] > 0.0) {
        return None;
    }
    let p = ex.map(f64::sqrt);
    let t = s.congruence(&p);
    let et = sym_eigen(&t).ok()?;
    if !(et.values[0] > 0.0) {
        return None;
    }
    let lambda: Vec<f64> = et.values.iter().map(|v| v.sqrt()).collect();
    let mut r = p.matmul(&et.vectors);
    for i in 0..d {
        for (j, l) in lambda.iter().enumerate() {
            r[(i, j)] /= l.sqrt();
        }
    }
    let w = Mat::identity(d).congruence(&r);
    Some(Scaling::Psd { r, w, lambda })
}

/// Corrector target `u` with `lambda o u = -lambda o lambda - dxt o dst + sigma_mu e`.
fn corrector_target(sc: &Scaling, dxt: &Scaled, dst: &Scaled, sigma_mu: f64) -> Scaled {
    match (sc, dxt, dst) {
        (Scaling::Psd { lambda, .. }, Scaled::Psd(a), Scaled::Psd(b)) => {
            let d = lambda.len();
            let ab = a.matmul(b);
            let mut u = Mat::zeros(d);
            for i in 0..d {
                for j in 0..d {
                    let mut rc = -0.5 * (ab[(i, j)] + ab[(j, i)]);
                    if i == j {
                        rc += sigma_mu - lambda[i] * lambda[i];
                    }
                    u[(i, j)] = 2.0 * rc / (lambda[i] + lambda[j]);
                }
            }
            Scaled::Psd(u)
        }
        (Scaling::NonNeg { lambda, .. }, Scaled::Vec(a), Scaled::Vec(b)) => Scaled::Vec(
            lambda
                .iter()
                .zip(a.iter().zip(b))
                .map(|(l, (x, s))| (-l * l - x * s + sigma_mu) / l)
                .collect(),
        ),
        _ => Scaled::Free,
    }
}

/// Largest step keeping both scaled iterates in their cones.
fn max_step(scalings: &[Scaling], dir: &Direction) -> f64 {
    let mut alpha = f64::INFINITY;
    for (k, sc) in scalings.iter().enumerate() {
        match sc {
            Scaling::Psd { lambda, .. } => {
                for v in [&dir.dxt[k], &dir.dst[k]] {
                    if let Scaled::Psd(dm) = v {
                        alpha = alpha.min(psd_step(lambda, dm));
                    }
                }
            }
            Scaling::NonNeg { lambda, .. } => {
                for v in [&dir.dxt[k], &dir.dst[k]] {
                    if let Scaled::Vec(dv) = v {
                        for (l, dl) in lambda.iter().zip(dv) {
                            if *dl < 0.0 {
                                alpha = alpha.min(-l / dl);
                            }
                        }
                    }
                }
            }
            Scaling::Free => {}
        }
    }
    alpha
}

fn psd_step(lambda: &[f64], dm: &Mat) -> f64 {
    let d = lambda.len();
    let mut k = Mat::zeros(d);
    for i in 0..d {
        for j in 0..d {
            k[(i, j)] = dm[(i, j)] / (lambda[i] * lambda[j]).sqrt();
        }
    }
    match sym_eigen(&k) {
        Ok(e) if e.values[0] < 0.0 => -1.0 / e.values[0],
        Ok(_) => f64::INFINITY,
        Err(_) => 0.0,
    }
}

struct NewtonSystem {
    m_mat: Vec<f64>,
    chol: Cholesky,
    /// Free columns `a_f`, `M^{-1} a_f`, and the factored `A_F^T M^{-1} A_F`,
    /// where `M` includes the `rho A_F A_F^T` term.
    free: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>, Cholesky)>,
    rho: f64,
}

impl NewtonSystem {
    fn assemble(prob: &Problem, scalings: &[Scaling]) -> Option<Self> {
        let m = prob.m;
        let mut mm = vec![0.0; m * m];
        for (blk, sc) in prob.blocks.iter().zip(scalings) {
            match (blk.cone, sc) {
                (Cone::Psd(d), Scaling::Psd { w, .. }) => assemble_psd(&mut mm, m, blk, d, w),
                (Cone::NonNeg(_), Scaling::NonNeg { d, .. }) => {
                    for (col, dk) in blk.cols.iter().zip(d) {
                        let wk = dk * dk;
                        for (p, &(i, a)) in col.iter().enumerate() {
                            for &(j, b) in &col[..=p] {
                                let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
                                mm[hi * m + lo] += wk * a * b;
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        let free_cols: Vec<Vec<f64>> = prob
            .blocks
            .iter()
            .filter(|b| matches!(b.cone, Cone::Free(_)))
            .flat_map(|b| b.cols.iter())
            .map(|col| {
                let mut v = vec![0.0; m];
                for &(i, a) in col {
                    v[i] += a;
                }
                v
            })
            .collect();
        // Rows touching only free coordinates leave M singular; adding
        // rho A_F A_F^T (balanced against M) keeps it definite, and the
        // right-hand side is corrected by rho A_F r_dF in `direction`.
        let mut rho = 0.0;
        if !free_cols.is_empty() {
            let m_diag = (0..m).fold(0.0_f64, |a, i| a.max(mm[i * m + i]));
            let f_diag = (0..m).fold(0.0_f64, |a, i| {
                a.max(free_cols.iter().map(|c| c[i] * c[i]).sum::<f64>())
            });
            rho = m_diag.max(1.0) / f_diag.max(f64::MIN_POSITIVE);
            for col in &free_cols {
                let nz: Vec<(usize, f64)> =
                    col.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect();
                for &(i, a) in &nz {
                    for &(j, b) in &nz {
                        if j <= i {
                            mm[i * m + j] += rho * a * b;
                        }
                    }
                }
            }
        }
        for i in 0..m {
            for j in 0..i {
                mm[j * m + i] = mm[i * m + j];
            }
        }
        let chol = Cholesky::factor_regularized(m, &mm, REG_START, REG_CAP)?;

        let free = if free_cols.is_empty() {
            None
        } else {
            let z: Vec<Vec<f64>> = free_cols
                .iter()
                .map(|a| {
                    let mut v = a.clone();
                    chol.solve_in_place(&mut v);
                    v
                })
                .collect();
            let f = free_cols.len();
            let mut fm = vec![0.0; f * f];
            for i in 0..f {
                for j in 0..=i {
                    let v = 0.5 * (dot(&free_cols[i], &z[j]) + dot(&free_cols[j], &z[i]));
                    fm[i * f + j] = v;
                    fm[j * f + i] = v;
                }
            }
            let fchol = Cholesky::factor_regularized(f, &fm, REG_START, REG_CAP)?;
            Some((free_cols, z, fchol))
        };
        Some(NewtonSystem { m_mat: mm, chol, free, rho })
    }

    /// Solves `M v = h` with one step of iterative refinement.
    fn solve_m(&self, h: &[f64]) -> Vec<f64> {
        let m = h.len();
        let mut v = h.to_vec();
        self.chol.solve_in_place(&mut v);
        let mut r: Vec<f64> = (0..m)
            .map(|i| h[i] - dot(&self.m_mat[i * m..(i + 1) * m], &v))
            .collect();
        self.chol.solve_in_place(&mut r);
        for (a, b) in v.iter_mut().zip(&r) {
            *a += b;
        }
        v
    }

    fn direction(
        &self,
        prob: &Problem,
        scalings: &[Scaling],
        u: &[Scaled],
        r_p: &[f64],
        r_d: &[f64],
    ) -> Direction {
        let n = prob.n;
        // q = W r_d W - R u R^T per block, so that M dy + A_F dx_F = r_p + A q.
        let mut q = vec![0.0; n];
        let mut rur: Vec<Option<Mat>> = Vec::with_capacity(scalings.len());
        for ((blk, sc), uk) in prob.blocks.iter().zip(scalings).zip(u) {
            match (blk.cone, sc, uk) {
                (Cone::Psd(d), Scaling::Psd { r, w, .. }, Scaled::Psd(um)) => {
                    let off = blk.offset;
                    let rd = unpack(&r_d[off..off + svec_len(d)], d);
                    let wrw = rd.congruence(w);
                    let rurt = um.congruence(r);
                    let mut diff = wrw;
                    for (a, b) in diff.as_mut_slice().iter_mut().zip(rurt.as_slice()) {
                        *a -= b;
                    }
                    q[off..off + svec_len(d)].copy_from_slice(&pack(&diff));
                    rur.push(Some(rurt));
                }
                (Cone::NonNeg(m), Scaling::NonNeg { d, .. }, Scaled::Vec(uv)) => {
                    for k in 0..m {
                        let j = blk.offset + k;
                        q[j] = d[k] * d[k] * r_d[j] - d[k] * uv[k];
                    }
                    rur.push(None);
                }
                _ => rur.push(None),
            }
        }
        for blk in &prob.blocks {
            if let Cone::Free(f) = blk.cone {
                q[blk.offset..blk.offset + f].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let aq = prob.apply(&q);
        let h: Vec<f64> = r_p.iter().zip(&aq).map(|(a, b)| a + b).collect();
        let mut dx = vec![0.0; n];
        let dy = match &self.free {
            None => self.solve_m(&h),
            Some((cols, z, fchol)) => {
                let free_rd: Vec<f64> = prob
                    .blocks
                    .iter()
                    .filter(|b| matches!(b.cone, Cone::Free(_)))
                    .flat_map(|b| r_d[b.offset..b.offset + b.cone.dim()].iter().copied())
                    .collect();
                let mut h = h;
                for (col, rd) in cols.iter().zip(&free_rd) {
                    for (a, b) in h.iter_mut().zip(col) {
                        *a += self.rho * rd * b;
                    }
                }
                let t = self.solve_m(&h);
                let mut dxf: Vec<f64> =
                    cols.iter().zip(&free_rd).map(|(a, rd)| dot(a, &t) - rd).collect();
                fchol.solve_in_place(&mut dxf);
                let mut dy = t;
                for (zf, v) in z.iter().zip(&dxf) {
                    for (a, b) in dy.iter_mut().zip(zf) {
                        *a -= v * b;
                    }
                }
                let mut idx = 0;
                for blk in prob.blocks.iter().filter(|b| matches!(b.cone, Cone::Free(_))) {
                    for j in blk.offset..blk.offset + blk.cone.dim() {
                        dx[j] = dxf[idx];
                        idx += 1;
                    }
                }
                dy
            }
        };

        let atdy = prob.apply_t(&dy);
        let mut ds: Vec<f64> = r_d.iter().zip(&atdy).map(|(a, b)| a - b).collect();
        let mut dxt = Vec::with_capacity(scalings.len());
        let mut dst = Vec::with_capacity(scalings.len());
        for (((blk, sc), uk), rurt) in prob.blocks.iter().zip(scalings).zip(u).zip(&rur) {
            match (blk.cone, sc, uk) {
                (Cone::Psd(d), Scaling::Psd { r, w, .. }, Scaled::Psd(um)) => {
                    let off = blk.offset;
                    let dsm = unpack(&ds[off..off + svec_len(d)], d);
                    let wdsw = dsm.congruence(w);
                    let mut dxm = rurt.clone().expect("psd block keeps R u R^T");
                    for (a, b) in dxm.as_mut_slice().iter_mut().zip(wdsw.as_slice()) {
                        *a -= b;
                    }
                    dx[off..off + svec_len(d)].copy_from_slice(&pack(&dxm));
                    let dstm = dsm.congruence_t(r);
                    let mut dxtm = um.clone();
                    for (a, b) in dxtm.as_mut_slice().iter_mut().zip(dstm.as_slice()) {
                        *a -= b;
                    }
                    dxt.push(Scaled::Psd(dxtm));
                    dst.push(Scaled::Psd(dstm));
                }
                (Cone::NonNeg(m), Scaling::NonNeg { d, .. }, Scaled::Vec(uv)) => {
                    let mut xt = Vec::with_capacity(m);
                    let mut st = Vec::with_capacity(m);
                    for k in 0..m {
                        let j = blk.offset + k;
                        dx[j] = d[k] * uv[k] - d[k] * d[k] * ds[j];
                        let sk = d[k] * ds[j];
                        st.push(sk);
                        xt.push(uv[k] - sk);
                    }
                    dxt.push(Scaled::Vec(xt));
                    dst.push(Scaled::Vec(st));
                }
                (Cone::Free(f), _, _) => {
                    ds[blk.offset..blk.offset + f].iter_mut().for_each(|v| *v = 0.0);
                    dxt.push(Scaled::Free);
                    dst.push(Scaled::Free);
                }
                _ => unreachable!("scaling kinds follow the cone layout"),
            }
        }
        Direction { dx, dy, ds, dxt, dst }
    }
}

/// Adds `A_blk (W (.) W) A_blk^T` to the lower triangle of `mm`.
fn assemble_psd(mm: &mut [f64], m: usize, blk: &Block, d: usize, w: &Mat) {
    let len = svec_len(d);
    let positions: Vec<(usize, usize)> = (0..len).map(svec_position).collect();
    let mut g = Mat::zeros(d);
    for (p, (i, entries)) in blk.rows.iter().enumerate() {
        // G = W A_i W
        g.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
        if entries.len() > d {
            let mut a = Mat::zeros(d);
            for &(k, v) in entries {
                let (r, c) = positions[k];
                if r == c {
                    a[(r, r)] += v;
                } else {
                    a[(r, c)] += v * FRAC_1_SQRT_2;
                    a[(c, r)] += v * FRAC_1_SQRT_2;
                }
            }
            g = a.congruence(w);
        } else {
            for &(k, v) in entries {
                let (r, c) = positions[k];
                let wr = w.row(r);
                let wc = w.row(c);
                let gs = g.as_mut_slice();
                if r == c {
                    for a in 0..d {
                        let f = v * wr[a];
                        for b in 0..d {
                            gs[a * d + b] += f * wr[b];
                        }
                    }
                } else {
                    let h = v * FRAC_1_SQRT_2;
                    for a in 0..d {
                        let fr = h * wr[a];
                        let fc = h * wc[a];
                        for b in 0..d {
                            gs[a * d + b] += fr * wc[b] + fc * wr[b];
                        }
                    }
                }
            }
        }
        let gv: Vec<f64> = positions
            .iter()
            .map(|&(r, c)| if r == c { g[(r, r)] } else { SQRT_2 * g[(r, c)] })
            .collect();
        for (j, entries_j) in &blk.rows[..=p] {
            let val: f64 = entries_j.iter().map(|&(k, v)| v * gv[k]).sum();
            let (hi, lo) = if i >= j { (*i, *j) } else { (*j, *i) };
            mm[hi * m + lo] += val;
        }
    }
}

fn finish(
    prob: &Problem,
    it: &Iterate,
    status: SolveStatus,
    iterations: usize,
    settings: &SolverSettings,
) -> ConicSolution {
    let p = prob.original;
    let mut y = vec![0.0; p.num_constraints()];
    for ((&orig, &scale), &ys) in prob.pre.kept.iter().zip(&prob.pre.scale).zip(&it.y) {
        y[orig] = scale * ys;
    }
    let pobj = dot(p.objective(), &it.x);
    let dobj: f64 = p.constraints().iter().zip(&y).map(|(c, yi)| c.rhs * yi).sum();
    let ax = p.apply(&it.x);
    let b_norm = p.constraints().iter().fold(0.0_f64, |a, c| a.max(c.rhs.abs()));
    let pres = p
        .constraints()
        .iter()
        .zip(&ax)
        .fold(0.0_f64, |a, (c, v)| a.max((c.rhs - v).abs()))
        / (1.0 + b_norm);
    let aty = p.apply_transpose(&y);
    let c = p.objective();
    let dres = (0..p.num_coords())
        .fold(0.0_f64, |a, j| a.max((c[j] - aty[j] - it.s[j]).abs()))
        / (1.0 + norm_inf(c));
    ConicSolution {
        status,
        x: it.x.clone(),
        y,
        s: it.s.clone(),
        primal_objective: pobj + p.offset,
        dual_objective: dobj + p.offset,
        iterations,
        rel_gap: (pobj - dobj).abs() / (1.0 + pobj.abs().max(dobj.abs())),
        primal_residual: pres,
        dual_residual: dres,
        gap_tol: settings.gap_tol,
        feas_tol: settings.feas_tol,
    }
}
