//! Builder for problems stated over free variables `v`:
//!
//! ```text
//! maximize    g^T v + offset
//! subject to  F_0 + Σ v_i F_i  ⪰ 0   (PSD blocks)
//!             f_0 + Σ v_i f_i  ≥ 0   (orthant blocks)
//!             h_0 + Σ v_i h_i  = 0   (zero blocks)
//! ```
//!
//! This is exactly the dual of a standard-form [`ConicProgram`] with
//! `c = F_0`, `A_i = -F_i` and `b = g`; the variables are the equality
//! multipliers `y` and the affine block values are the dual slack `s`.

use std::f64::consts::SQRT_2;

use super::{solve_conic, Cone, ConicProgram, ConicSolution, SolverSettings};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::symmat::{svec_index, svec_len, unpack};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmiBlock {
    /// `d x d` matrix inequality.
    Psd(usize),
    /// `m` scalar inequalities.
    NonNeg(usize),
    /// `m` scalar equalities.
    Zero(usize),
}

impl LmiBlock {
    fn cone(self) -> Cone {
        match self {
            LmiBlock::Psd(d) => Cone::Psd(d),
            LmiBlock::NonNeg(m) => Cone::NonNeg(m),
            LmiBlock::Zero(m) => Cone::Free(m),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LmiBuilder {
    nvars: usize,
    blocks: Vec<LmiBlock>,
    /// `(block, local coord) -> F_0` in packed coordinates.
    constant: Vec<(usize, usize, f64)>,
    /// `(var, block, local coord, coefficient)` in packed coordinates.
    terms: Vec<(usize, usize, usize, f64)>,
    gain: Vec<f64>,
    offset: f64,
}

impl LmiBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self) -> usize {
        self.nvars += 1;
        self.gain.push(0.0);
        self.nvars - 1
    }

    /// Adds `k` variables and returns the index of the first.
    pub fn add_vars(&mut self, k: usize) -> usize {
        let first = self.nvars;
        for _ in 0..k {
            self.add_var();
        }
        first
    }

    pub fn num_vars(&self) -> usize {
        self.nvars
    }

    pub fn add_block(&mut self, block: LmiBlock) -> usize {
        self.blocks.push(block);
        self.blocks.len() - 1
    }

    /// Adds `coef * v[var]` to the maximized objective.
    pub fn add_gain(&mut self, var: usize, coef: f64) {
        self.gain[var] += coef;
    }

    pub fn add_offset(&mut self, value: f64) {
        self.offset += value;
    }

    fn psd_coord(&self, block: usize, i: usize, j: usize) -> (usize, f64) {
        match self.blocks[block] {
            LmiBlock::Psd(d) => {
                assert!(i < d && j < d, "entry ({i}, {j}) outside a {d}x{d} block");
                (svec_index(i, j), if i == j { 1.0 } else { SQRT_2 })
            }
            other => panic!("block {block} is {other:?}, not PSD"),
        }
    }

    fn row_coord(&self, block: usize, i: usize) -> usize {
        match self.blocks[block] {
            LmiBlock::NonNeg(m) | LmiBlock::Zero(m) => {
                assert!(i < m, "row {i} outside a block of {m}");
                i
            }
            other => panic!("block {block} is {other:?}, not a row block"),
        }
    }

    /// Adds `value` to the symmetric pair of entries `(i, j)`, `(j, i)` of the
    /// constant matrix of PSD block `block`.
    pub fn psd_constant(&mut self, block: usize, i: usize, j: usize, value: f64) {
        let (k, f) = self.psd_coord(block, i, j);
        self.constant.push((block, k, f * value));
    }

    /// Adds `coef * v[var]` to entries `(i, j)` and `(j, i)` of PSD block `block`.
    pub fn psd_term(&mut self, block: usize, i: usize, j: usize, var: usize, coef: f64) {
        assert!(var < self.nvars);
        let (k, f) = self.psd_coord(block, i, j);
        self.terms.push((var, block, k, f * coef));
    }

    pub fn row_constant(&mut self, block: usize, i: usize, value: f64) {
        let k = self.row_coord(block, i);
        self.constant.push((block, k, value));
    }

    pub fn row_term(&mut self, block: usize, i: usize, var: usize, coef: f64) {
        assert!(var < self.nvars);
        let k = self.row_coord(block, i);
        self.terms.push((var, block, k, coef));
    }

    pub fn build(&self) -> Result<LmiProgram> {
        if self.gain.iter().chain([&self.offset]).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite objective coefficient".into()));
        }
        let cones: Vec<Cone> = self.blocks.iter().map(|b| b.cone()).collect();
        let mut p = ConicProgram::new(cones);
        for &(b, k, v) in &self.constant {
            if !v.is_finite() {
                return Err(Error::InvalidInput("non-finite constant term".into()));
            }
            p.add_objective(p.block_offset(b) + k, v);
        }
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.nvars];
        for &(var, b, k, v) in &self.terms {
            rows[var].push((p.block_offset(b) + k, -v));
        }
        for (row, &g) in rows.iter().zip(&self.gain) {
            p.add_constraint(row, g)?;
        }
        p.offset = self.offset;
        Ok(LmiProgram { program: p, blocks: self.blocks.clone() })
    }
}

#[derive(Debug, Clone)]
pub struct LmiProgram {
    pub program: ConicProgram,
    blocks: Vec<LmiBlock>,
}

impl LmiProgram {
    pub fn solve(&self, settings: &SolverSettings) -> ConicSolution {
        solve_conic(&self.program, settings)
    }

    /// Values of the free variables.
    pub fn vars<'a>(&self, sol: &'a ConicSolution) -> &'a [f64] {
        &sol.y
    }

    /// Maximized objective at the solution (the conic dual objective).
    pub fn value(&self, sol: &ConicSolution) -> f64 {
        sol.dual_objective
    }

    /// Affine value `F_0 + Σ v_i F_i` of PSD block `block`.
    pub fn psd_value(&self, sol: &ConicSolution, block: usize) -> Mat {
        let d = self.psd_dim(block);
        let off = self.program.block_offset(block);
        unpack(&self.affine(sol)[off..off + svec_len(d)], d)
    }

    /// Affine value of a row block.
    pub fn row_value(&self, sol: &ConicSolution, block: usize) -> Vec<f64> {
        self.program.block_slice(&self.affine(sol), block).to_vec()
    }

    /// Multiplier of PSD block `block` (the primal matrix).
    pub fn psd_multiplier(&self, sol: &ConicSolution, block: usize) -> Mat {
        let _ = self.psd_dim(block);
        self.program.psd_block_matrix(&sol.x, block)
    }

    pub fn row_multiplier(&self, sol: &ConicSolution, block: usize) -> Vec<f64> {
        self.program.block_slice(&sol.x, block).to_vec()
    }

    fn psd_dim(&self, block: usize) -> usize {
        match self.blocks[block] {
            LmiBlock::Psd(d) => d,
            other => panic!("block {block} is {other:?}, not PSD"),
        }
    }

    /// `c - A^T y`, exact in the variables rather than the solver's tracked slack.
    fn affine(&self, sol: &ConicSolution) -> Vec<f64> {
        let aty = self.program.apply_transpose(&sol.y);
        self.program.objective().iter().zip(&aty).map(|(c, a)| c - a).collect()
    }
}
