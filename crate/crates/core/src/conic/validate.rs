//! Solver-independent checks of a conic solution.

use serde::{Deserialize, Serialize};

use super::{Cone, ConicProgram, ConicSolution};
use crate::linalg::{dot, norm_inf, sym_eigen};
use crate::symmat::unpack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// Vector lengths do not match the program.
    Shape(String),
    PrimalResidual(f64),
    DualResidual(f64),
    /// Most negative eigenvalue (or entry) of a primal block, relative to its size.
    PrimalCone { block: usize, margin: f64 },
    /// Same for the dual slack `c - A^T y` recomputed from the multipliers.
    DualCone { block: usize, margin: f64 },
    DualityGap(f64),
    ObjectiveMismatch { which: String, reported: f64, recomputed: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tol: f64,
    /// `||A z - b||_inf / (1 + ||b||_inf)`.
    pub primal_residual: f64,
    /// `||c_F - A_F^T y||_inf / (1 + ||c||_inf)` over free blocks.
    pub dual_residual: f64,
    /// Smallest relative cone margin over primal blocks (negative means outside).
    pub primal_cone_margin: f64,
    pub dual_cone_margin: f64,
    /// `(pobj - dobj) / (1 + max(|pobj|, |dobj|))` from recomputed objectives.
    pub rel_gap: f64,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    /// True if every recorded quantity passes at `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        !self.violations.iter().any(|v| matches!(v, Violation::Shape(_) | Violation::ObjectiveMismatch { .. }))
            && self.primal_residual <= tol
            && self.dual_residual <= tol
            && self.primal_cone_margin >= -tol
            && self.dual_cone_margin >= -tol
            && self.rel_gap.abs() <= tol
    }
}

/// Recomputes residuals, cone margins and the duality gap from `sol.x` and
/// `sol.y` alone and lists everything exceeding `tol`.
pub fn validate_solution(p: &ConicProgram, sol: &ConicSolution, tol: f64) -> ValidationReport {
    let mut report = ValidationReport {
        tol,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        primal_cone_margin: f64::NEG_INFINITY,
        dual_cone_margin: f64::NEG_INFINITY,
        rel_gap: f64::INFINITY,
        violations: Vec::new(),
    };
    if sol.x.len() != p.num_coords() || sol.y.len() != p.num_constraints() {
        report.violations.push(Violation::Shape(format!(
            "solution has {} coordinates and {} multipliers, program has {} and {}",
            sol.x.len(),
            sol.y.len(),
            p.num_coords(),
            p.num_constraints()
        )));
        return report;
    }
    let c = p.objective();
    let c_scale = 1.0 + norm_inf(c);

    let ax = p.apply(&sol.x);
    let b_norm = p.constraints().iter().fold(0.0_f64, |m, r| m.max(r.rhs.abs()));
    let pres = p.constraints().iter().zip(&ax).fold(0.0_f64, |m, (r, a)| m.max((r.rhs - a).abs()));
    report.primal_residual = pres / (1.0 + b_norm);

    let aty = p.apply_transpose(&sol.y);
    let slack: Vec<f64> = c.iter().zip(&aty).map(|(a, b)| a - b).collect();
    let mut dres: f64 = 0.0;
    let mut pmargin = f64::INFINITY;
    let mut dmargin = f64::INFINITY;
    for (k, cone) in p.cones().iter().enumerate() {
        let xs = p.block_slice(&sol.x, k);
        let ss = p.block_slice(&slack, k);
        let x_scale = 1.0 + norm_inf(xs);
        let (pm, dm) = match *cone {
            Cone::Psd(d) => (psd_margin(xs, d), psd_margin(ss, d)),
            Cone::NonNeg(_) => (min_entry(xs), min_entry(ss)),
            Cone::Free(_) => {
                dres = dres.max(norm_inf(ss));
                continue;
            }
        };
        let (pm, dm) = (pm / x_scale, dm / c_scale);
        if pm < -tol {
            report.violations.push(Violation::PrimalCone { block: k, margin: pm });
        }
        if dm < -tol {
            report.violations.push(Violation::DualCone { block: k, margin: dm });
        }
        pmargin = pmargin.min(pm);
        dmargin = dmargin.min(dm);
    }
    report.dual_residual = dres / c_scale;
    report.primal_cone_margin = if pmargin.is_finite() { pmargin } else { 0.0 };
    report.dual_cone_margin = if dmargin.is_finite() { dmargin } else { 0.0 };

    let pobj = dot(c, &sol.x) + p.offset;
    let dobj: f64 = p.constraints().iter().zip(&sol.y).map(|(r, y)| r.rhs * y).sum::<f64>() + p.offset;
    report.rel_gap = (pobj - dobj) / (1.0 + pobj.abs().max(dobj.abs()));

    if report.primal_residual > tol {
        report.violations.push(Violation::PrimalResidual(report.primal_residual));
    }
    if report.dual_residual > tol {
        report.violations.push(Violation::DualResidual(report.dual_residual));
    }
    if report.rel_gap.abs() > tol {
        report.violations.push(Violation::DualityGap(report.rel_gap));
    }
    for (which, reported, recomputed) in
        [("primal", sol.primal_objective, pobj), ("dual", sol.dual_objective, dobj)]
    {
        if !((reported - recomputed).abs() <= tol * (1.0 + recomputed.abs())) {
            report.violations.push(Violation::ObjectiveMismatch {
                which: which.to_string(),
                reported,
                recomputed,
            });
        }
    }
    report
}

fn min_entry(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

fn psd_margin(v: &[f64], d: usize) -> f64 {
    match sym_eigen(&unpack(v, d)) {
        Ok(e) => e.values[0],
        Err(_) => f64::NEG_INFINITY,
    }
}
