//! Standard-form conic programs and a primal-dual interior-point solver.
//!
//! A [`ConicProgram`] is
//!
//! ```text
//! minimize    c^T z + offset
//! subject to  A z = b,   z in K = K_1 x ... x K_p
//! ```
//!
//! where each block `K_i` is a PSD cone (stored with the scaled
//! lower-triangle packing of [`crate::symmat::pack`]), a nonnegative
//! orthant, or a free block. The dual is
//!
//! ```text
//! maximize    b^T y + offset
//! subject to  A^T y + s = c,   s in K*   (s = 0 on free blocks)
//! ```

mod dump;
mod ipm;
mod lmi;
mod presolve;
mod validate;

use std::f64::consts::FRAC_1_SQRT_2;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::symmat::{svec_index, svec_len, unpack, SymMatrix};

pub use dump::{read_dump, write_dump};
pub use lmi::{LmiBlock, LmiBuilder, LmiProgram};
pub use validate::{validate_solution, ValidationReport, Violation};

/// Tolerance at which higher-level results validate their conic solves.
pub const VALIDATION_TOL: f64 = 1e-6;

/// One block of the cone layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cone {
    /// `d x d` PSD matrices, `d(d+1)/2` packed coordinates.
    Psd(usize),
    NonNeg(usize),
    Free(usize),
}

impl Cone {
    pub fn dim(&self) -> usize {
        match *self {
            Cone::Psd(d) => svec_len(d),
            Cone::NonNeg(m) | Cone::Free(m) => m,
        }
    }

    /// Barrier degree: `d` for PSD(d), `m` for the orthant, zero for free.
    pub fn degree(&self) -> usize {
        match *self {
            Cone::Psd(d) => d,
            Cone::NonNeg(m) => m,
            Cone::Free(_) => 0,
        }
    }
}

/// One equality row `a^T z = rhs` with sparse coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// `(coordinate, coefficient)` pairs sorted by coordinate, no duplicates.
    pub row: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    cones: Vec<Cone>,
    offsets: Vec<usize>,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
    /// Constant added to both objectives.
    pub offset: f64,
}

impl ConicProgram {
    pub fn new(cones: Vec<Cone>) -> Self {
        let mut offsets = Vec::with_capacity(cones.len());
        let mut total = 0;
        for c in &cones {
            offsets.push(total);
            total += c.dim();
        }
        ConicProgram {
            cones,
            offsets,
            objective: vec![0.0; total],
            constraints: Vec::new(),
            offset: 0.0,
        }
    }

    pub fn cones(&self) -> &[Cone] {
        &self.cones
    }

    /// First coordinate of block `k`.
    pub fn block_offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    pub fn num_coords(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn set_objective(&mut self, coord: usize, value: f64) {
        self.objective[coord] = value;
    }

    pub fn add_objective(&mut self, coord: usize, value: f64) {
        self.objective[coord] += value;
    }

    /// Adds `Σ coef * z[coord] = rhs`. Repeated coordinates are summed and
    /// exact zeros dropped.
    pub fn add_constraint(&mut self, entries: &[(usize, f64)], rhs: f64) -> Result<usize> {
        let n = self.num_coords();
        let mut row: Vec<(usize, f64)> = entries.to_vec();
        if let Some(&(bad, _)) = row.iter().find(|(c, _)| *c >= n) {
            return Err(Error::DimensionMismatch(format!(
                "constraint references coordinate {bad} but the cone layout has {n}"
            )));
        }
        if !rhs.is_finite() || row.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite constraint data".into()));
        }
        row.sort_by_key(|&(c, _)| c);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (c, v) in row {
            match merged.last_mut() {
                Some((lc, lv)) if *lc == c => *lv += v,
                _ => merged.push((c, v)),
            }
        }
        merged.retain(|&(_, v)| v != 0.0);
        self.constraints.push(Constraint { row: merged, rhs });
        Ok(self.constraints.len() - 1)
    }

    /// Coordinate and coefficient such that `coef * z[coord] == M_ij` for the
    /// PSD block `k` holding `M`.
    pub fn psd_entry(&self, k: usize, i: usize, j: usize) -> (usize, f64) {
        let d = match self.cones[k] {
            Cone::Psd(d) => d,
            other => panic!("block {k} is {other:?}, not PSD"),
        };
        assert!(i < d && j < d);
        let coord = self.offsets[k] + svec_index(i, j);
        (coord, if i == j { 1.0 } else { FRAC_1_SQRT_2 })
    }

    /// Sets the objective over PSD block `k` to `C . M`.
    pub fn set_psd_objective(&mut self, k: usize, c: &SymMatrix) {
        let off = self.offsets[k];
        for (idx, v) in c.svec().into_iter().enumerate() {
            self.objective[off + idx] = v;
        }
    }

    /// Unpacks PSD block `k` of a coordinate vector.
    pub fn psd_block_matrix(&self, z: &[f64], k: usize) -> Mat {
        match self.cones[k] {
            Cone::Psd(d) => {
                let off = self.offsets[k];
                unpack(&z[off..off + svec_len(d)], d)
            }
            other => panic!("block {k} is {other:?}, not PSD"),
        }
    }

    pub fn block_slice<'a>(&self, z: &'a [f64], k: usize) -> &'a [f64] {
        let off = self.offsets[k];
        &z[off..off + self.cones[k].dim()]
    }

    /// `A z` in original row order.
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        self.constraints
            .iter()
            .map(|c| c.row.iter().map(|&(j, v)| v * z[j]).sum())
            .collect()
    }

    /// `A^T y`.
    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_coords()];
        for (c, &yi) in self.constraints.iter().zip(y) {
            for &(j, v) in &c.row {
                out[j] += v * yi;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Primal point `z`.
    pub x: Vec<f64>,
    /// Equality multipliers.
    pub y: Vec<f64>,
    /// Dual cone slack `s = c - A^T y` as tracked by the solver.
    pub s: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// `|pobj - dobj| / (1 + max(|pobj|, |dobj|))` at exit.
    pub rel_gap: f64,
    /// `||A z - b||_inf / (1 + ||b||_inf)` at exit.
    pub primal_residual: f64,
    /// `||A^T y + s - c||_inf / (1 + ||c||_inf)` at exit.
    pub dual_residual: f64,
    pub gap_tol: f64,
    pub feas_tol: f64,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn into_result(self) -> Result<Self> {
        if self.is_optimal() {
            Ok(self)
        } else {
            Err(Error::Solver { status: self.status })
        }
    }
}

/// Where a solve is dispatched.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Backend {
    #[default]
    Internal,
    /// Writes each program to a numbered file in the directory (see
    /// [`write_dump`]) before solving it with the internal solver.
    Dump(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iterations: usize,
    /// Fraction of the step to the cone boundary actually taken.
    pub step_fraction: f64,
    pub backend: Backend,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            max_iterations: 200,
            step_fraction: 0.99,
            backend: Backend::Internal,
        }
    }
}

impl SolverSettings {
    pub fn with_tolerance(tol: f64) -> Self {
        SolverSettings { gap_tol: tol, feas_tol: tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0 && self.feas_tol > 0.0) {
            return Err(Error::InvalidInput("solver tolerances must be positive".into()));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction < 1.0) {
            return Err(Error::InvalidInput("step fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Seam for swapping the internal interior-point method for another solver.
pub trait ConicBackend {
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> ConicSolution;
}

/// Nesterov-Todd / Mehrotra primal-dual interior-point method.
#[derive(Debug, Default, Clone, Copy)]
pub struct InteriorPoint;

impl ConicBackend for InteriorPoint {
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> ConicSolution {
        ipm::solve(program, settings)
    }
}

/// Writes the program to disk, then delegates to the internal solver.
#[derive(Debug, Clone)]
pub struct DumpBackend {
    pub dir: PathBuf,
}

static DUMP_COUNTER: std::sync::atomic::AtomicUsize = std::sync::atomic::AtomicUsize::new(0);

impl ConicBackend for DumpBackend {
    fn solve(&self, program: &ConicProgram, settings: &SolverSettings) -> ConicSolution {
        let k = DUMP_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let path = self.dir.join(format!("program_{k:05}.txt"));
        // The dump is a side channel; a write failure must not change the solve.
        if let Err(e) = std::fs::create_dir_all(&self.dir).and_then(|_| {
            let f = std::fs::File::create(&path)?;
            write_dump(program, std::io::BufWriter::new(f))
        }) {
            eprintln!("warning: could not dump conic program to {}: {e}", path.display());
        }
        ipm::solve(program, settings)
    }
}

/// Solves `program` with the backend named in `settings`.
pub fn solve_conic(program: &ConicProgram, settings: &SolverSettings) -> ConicSolution {
    match &settings.backend {
        Backend::Internal => InteriorPoint.solve(program, settings),
        Backend::Dump(dir) => DumpBackend { dir: dir.clone() }.solve(program, settings),
    }
}

/// Solves and validates at `tol`, returning an error for any non-optimal status.
pub fn solve_validated(
    program: &ConicProgram,
    settings: &SolverSettings,
    tol: f64,
) -> Result<(ConicSolution, ValidationReport)> {
    settings.validate()?;
    let sol = solve_conic(program, settings).into_result()?;
    let report = validate_solution(program, &sol, tol);
    Ok((sol, report))
}
