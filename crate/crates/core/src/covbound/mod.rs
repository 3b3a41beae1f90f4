//! Tightest upper bound on `E[ξ^T A ξ]` over distributions on `[0,1]^n`
//! with given means and standard deviations, when `-A` is submodular, plus
//! the closed form and an attaining distribution for a single product
//! `ξ_1 ξ_2`.

use serde::{Deserialize, Serialize};

use crate::conic::{solve_conic, validate_solution, Cone, ConicProgram, SolverSettings, ValidationReport, VALIDATION_TOL};
use crate::error::{Error, Result};
use crate::symmat::SymMatrix;

/// Slack allowed on the variance bound `σ^2 <= μ(1 - μ)` and on the
/// admissible probability interval of a two-point marginal.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeanStdJson", into = "MeanStdJson")]
pub struct MeanStd {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MeanStdJson {
    mu: Vec<f64>,
    sigma: Vec<f64>,
}

impl TryFrom<MeanStdJson> for MeanStd {
    type Error = Error;
    fn try_from(j: MeanStdJson) -> Result<Self> {
        MeanStd::new(j.mu, j.sigma)
    }
}

impl From<MeanStd> for MeanStdJson {
    fn from(m: MeanStd) -> Self {
        MeanStdJson { mu: m.mu, sigma: m.sigma }
    }
}

impl MeanStd {
    /// Requires equal lengths and finite entries; feasibility is checked
    /// separately by [`mean_std_feasible`].
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} means but {} standard deviations",
                mu.len(),
                sigma.len()
            )));
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("means and standard deviations must be finite".into()));
        }
        Ok(MeanStd { mu, sigma })
    }

    pub fn n(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    /// `diag(μμ^T + σσ^T)`.
    pub fn second_moments(&self) -> Vec<f64> {
        self.mu.iter().zip(&self.sigma).map(|(m, s)| m * m + s * s).collect()
    }

    /// The pair `(i, j)` as a two-dimensional instance.
    pub fn pair(&self, i: usize, j: usize) -> MeanStd {
        MeanStd { mu: vec![self.mu[i], self.mu[j]], sigma: vec![self.sigma[i], self.sigma[j]] }
    }
}

/// Finitely supported distribution on `[0,1]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    pub points: Vec<Vec<f64>>,
    pub probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn point_mass(x: Vec<f64>) -> Self {
        DiscreteDistribution { points: vec![x], probs: vec![1.0] }
    }

    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.points.iter().zip(&self.probs).map(|(x, p)| p * f(x)).sum()
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.expect(|x| x[i])
    }

    pub fn second_moment(&self, i: usize, j: usize) -> f64 {
        self.expect(|x| x[i] * x[j])
    }

    /// Probabilities sum to one and every point lies in the box, both within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        (self.probs.iter().sum::<f64>() - 1.0).abs() <= tol
            && self.probs.iter().all(|&p| p >= -tol)
            && self.points.iter().flatten().all(|&v| (-tol..=1.0 + tol).contains(&v))
    }
}

/// `0 <= σ_i <= sqrt(μ_i (1 - μ_i))` and `μ_i in [0, 1]` for every `i`.
pub fn mean_std_feasible(ms: &MeanStd) -> bool {
    ms.mu.iter().zip(&ms.sigma).all(|(&m, &s)| {
        (0.0..=1.0).contains(&m) && s >= 0.0 && s * s <= m * (1.0 - m) + BOUNDARY_TOL
    })
}

fn require_feasible(ms: &MeanStd) -> Result<()> {
    if mean_std_feasible(ms) {
        Ok(())
    } else {
        Err(Error::precondition("a", "some sigma_i exceeds sqrt(mu_i (1 - mu_i)) or mu_i is outside [0, 1]"))
    }
}

/// Admissible interval `[σ^2 / ((1-μ)^2 + σ^2), μ^2 / (μ^2 + σ^2)]` for the
/// upper-atom probability of a two-point marginal; `[0, 1]` when `σ = 0`.
pub fn p_interval(mu: f64, sigma: f64) -> (f64, f64) {
    if sigma == 0.0 {
        return (0.0, 1.0);
    }
    let s2 = sigma * sigma;
    (s2 / ((1.0 - mu).powi(2) + s2), mu * mu / (mu * mu + s2))
}

/// Two-point law on `[0,1]` with mean `mu` and variance `sigma^2` that puts
/// probability `p` on its upper atom.
pub fn two_point_marginal(mu: f64, sigma: f64, p: f64) -> Result<DiscreteDistribution> {
    let ms = MeanStd::new(vec![mu], vec![sigma])?;
    require_feasible(&ms)?;
    let (lo, hi) = p_interval(mu, sigma);
    if !(p >= lo - BOUNDARY_TOL && p <= hi + BOUNDARY_TOL) {
        return Err(Error::PInterval { p, lo, hi });
    }
    if sigma == 0.0 {
        return Ok(DiscreteDistribution::point_mass(vec![mu]));
    }
    let p = p.clamp(lo, hi);
    let low = (mu - sigma * (p / (1.0 - p)).sqrt()).clamp(0.0, 1.0);
    let high = (mu + sigma * ((1.0 - p) / p).sqrt()).clamp(0.0, 1.0);
    Ok(DiscreteDistribution { points: vec![vec![low], vec![high]], probs: vec![1.0 - p, p] })
}

/// `max E[ξ_1 ξ_2] = min(μ_1, μ_2, μ_1 μ_2 + σ_1 σ_2)`.
pub fn bivariate_bound(ms: &MeanStd) -> Result<f64> {
    if ms.n() != 2 {
        return Err(Error::DimensionMismatch(format!("bivariate bound needs n = 2, got {}", ms.n())));
    }
    require_feasible(ms)?;
    let (m, s) = (&ms.mu, &ms.sigma);
    Ok(m[0].min(m[1]).min(m[0] * m[1] + s[0] * s[1]))
}

/// Lower and upper atoms of a two-point marginal and the upper probability.
fn atoms(d: &DiscreteDistribution) -> (f64, f64, f64) {
    match d.points.len() {
        1 => (d.points[0][0], d.points[0][0], 1.0),
        _ => (d.points[0][0], d.points[1][0], d.probs[1]),
    }
}

fn joint(points: Vec<[f64; 2]>, probs: Vec<f64>) -> DiscreteDistribution {
    let mut out = DiscreteDistribution { points: Vec::new(), probs: Vec::new() };
    for (pt, p) in points.into_iter().zip(probs) {
        if p > 0.0 {
            out.points.push(pt.to_vec());
            out.probs.push(p);
        }
    }
    out
}

/// Which construction [`extremal_bivariate`] used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremalCase {
    /// Some standard deviation is zero.
    Degenerate,
    /// Probability intervals overlap: two atoms, common `p`.
    Overlap,
    /// Disjoint intervals: three atoms.
    Disjoint,
}

/// Comonotone joint law of two two-point marginals attaining
/// [`bivariate_bound`].
pub fn extremal_bivariate(ms: &MeanStd) -> Result<(DiscreteDistribution, ExtremalCase)> {
    bivariate_bound(ms)?;
    let (m, s) = (&ms.mu, &ms.sigma);
    if s[0] == 0.0 || s[1] == 0.0 {
        // one coordinate is constant: pair it with each atom of the other
        let d = if s[0] == 0.0 { 1 } else { 0 };
        let other = two_point_marginal(m[d], s[d], p_interval(m[d], s[d]).0)?;
        let (lo, hi, p) = atoms(&other);
        let place = |v: f64| if d == 0 { [v, m[1]] } else { [m[0], v] };
        let dist = if lo == hi { joint(vec![place(lo)], vec![1.0]) } else { joint(vec![place(lo), place(hi)], vec![1.0 - p, p]) };
        return Ok((dist, ExtremalCase::Degenerate));
    }
    let (lo1, hi1) = p_interval(m[0], s[0]);
    let (lo2, hi2) = p_interval(m[1], s[1]);
    let (lo, hi) = (lo1.max(lo2), hi1.min(hi2));
    if lo <= hi {
        let p = 0.5 * (lo + hi);
        let (a0, a1, _) = atoms(&two_point_marginal(m[0], s[0], p)?);
        let (b0, b1, _) = atoms(&two_point_marginal(m[1], s[1], p)?);
        return Ok((joint(vec![[a0, b0], [a1, b1]], vec![1.0 - p, p]), ExtremalCase::Overlap));
    }
    // the interval of `f` lies entirely below that of `g`: f at its largest
    // admissible p (lower atom 0), g at its smallest (upper atom 1)
    let (f, g) = if hi1 < lo2 { (0, 1) } else { (1, 0) };
    let (f0, f1, pf) = atoms(&two_point_marginal(m[f], s[f], p_interval(m[f], s[f]).1)?);
    let (g0, g1, pg) = atoms(&two_point_marginal(m[g], s[g], p_interval(m[g], s[g]).0)?);
    let order = |x: f64, y: f64| if f == 0 { [x, y] } else { [y, x] };
    let dist = joint(vec![order(f0, g0), order(f0, g1), order(f1, g1)], vec![1.0 - pg, pg - pf, pf]);
    Ok((dist, ExtremalCase::Disjoint))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovBound {
    pub value: f64,
    /// Maximizing second-moment matrix.
    #[serde(rename = "Sigma")]
    pub sigma: SymMatrix,
    pub iterations: usize,
    /// Report of the reduced SDP; absent when every coordinate is deterministic.
    pub validation: Option<ValidationReport>,
}

/// [`solve_cov_bound_with`] under default solver settings.
pub fn solve_cov_bound(a: &SymMatrix, ms: &MeanStd) -> Result<CovBound> {
    solve_cov_bound_with(a, ms, &SolverSettings::default())
}

/// `max A . Σ` subject to `diag(Σ) = diag(μμ^T + σσ^T)`, `Σ <= e μ^T` and
/// `[[1, μ^T], [μ, Σ]] ⪰ 0`.
///
/// Solved over the correlation matrix `C` of the coordinates with
/// `σ_i > 0`, where `Σ = μμ^T + D C D` and `D = diag(σ)`: the bordered
/// constraint becomes `C ⪰ 0` with unit diagonal, and `Σ_ij <= min(μ_i, μ_j)`
/// becomes `C_ij <= (min(μ_i, μ_j) - μ_i μ_j) / (σ_i σ_j)`, dropped when
/// the right side is at least 1. Deterministic coordinates contribute only
/// through `μ^T A μ`.
pub fn solve_cov_bound_with(a: &SymMatrix, ms: &MeanStd, s: &SolverSettings) -> Result<CovBound> {
    let n = ms.n();
    if a.n() != n {
        return Err(Error::DimensionMismatch(format!("A is {}x{} but n = {n}", a.n(), a.n())));
    }
    require_feasible(ms)?;
    if !a.scale(-1.0).is_submodular(0.0) {
        return Err(Error::precondition("b", "-A must have nonpositive off-diagonal entries"));
    }
    let (mu, sd) = (ms.mu(), ms.sigma());
    let base = a.quad_form(mu);
    let free: Vec<usize> = (0..n).filter(|&i| sd[i] > 0.0).collect();
    let k = free.len();
    let assemble = |c: &dyn Fn(usize, usize) -> f64| {
        let pos: Vec<Option<usize>> = (0..n).map(|i| free.iter().position(|&v| v == i)).collect();
        SymMatrix::from_fn(n, |i, j| {
            let cov = match (pos[i], pos[j]) {
                (Some(p), Some(q)) => sd[i] * sd[j] * c(p, q),
                _ => 0.0,
            };
            mu[i] * mu[j] + cov
        })
    };
    if k == 0 {
        return Ok(CovBound { value: base, sigma: assemble(&|_, _| 0.0), iterations: 0, validation: None });
    }

    let mut caps = Vec::new();
    for p in 0..k {
        for q in 0..p {
            let (i, j) = (free[p], free[q]);
            let cap = (mu[i].min(mu[j]) - mu[i] * mu[j]) / (sd[i] * sd[j]);
            if cap < 1.0 {
                caps.push((p, q, cap));
            }
        }
    }
    let mut prog = ConicProgram::new(vec![Cone::Psd(k), Cone::NonNeg(caps.len())]);
    let weights = SymMatrix::from_fn(k, |p, q| -a.get(free[p], free[q]) * sd[free[p]] * sd[free[q]]);
    prog.set_psd_objective(0, &weights);
    for p in 0..k {
        prog.add_constraint(&[prog.psd_entry(0, p, p)], 1.0)?;
    }
    let slack0 = prog.block_offset(1);
    for (r, &(p, q, cap)) in caps.iter().enumerate() {
        prog.add_constraint(&[prog.psd_entry(0, p, q), (slack0 + r, 1.0)], cap)?;
    }
    let sol = solve_conic(&prog, s).into_result()?;
    let validation = validate_solution(&prog, &sol, VALIDATION_TOL);
    let c = prog.psd_block_matrix(&sol.x, 0);
    let sigma = assemble(&|p, q| c[(p, q)]);
    Ok(CovBound { value: base - sol.primal_objective, sigma, iterations: sol.iterations, validation: Some(validation) })
}

/// Checks that `l` is a graph Laplacian: symmetric, nonpositive
/// off-diagonals, zero row sums.
pub fn check_laplacian(l: &SymMatrix) -> Result<()> {
    let n = l.n();
    let scale = 1.0 + l.max_abs();
    for i in 0..n {
        let row: f64 = (0..n).map(|j| l.get(i, j)).sum();
        if row.abs() > 1e-12 * scale * n as f64 {
            return Err(Error::InvalidInput(format!("Laplacian row {i} sums to {row}")));
        }
    }
    if !l.is_submodular(0.0) {
        return Err(Error::InvalidInput("Laplacian has a positive off-diagonal entry".into()));
    }
    Ok(())
}

/// Sum over edges (weighted by `-L_ij`) of the smallest expected
/// `(ξ_i - ξ_j)^2` compatible with each pair's moments.
pub fn pairwise_energy_lower_bound(l: &SymMatrix, ms: &MeanStd) -> Result<f64> {
    if l.n() != ms.n() {
        return Err(Error::DimensionMismatch("Laplacian and moments differ in size".into()));
    }
    check_laplacian(l)?;
    require_feasible(ms)?;
    let (mu, sd) = (ms.mu(), ms.sigma());
    let mut total = 0.0;
    for i in 0..ms.n() {
        for j in 0..i {
            let w = -l.get(i, j);
            if w == 0.0 {
                continue;
            }
            let cross = bivariate_bound(&ms.pair(i, j))?;
            total += w
                * (sd[i] * sd[i] + sd[j] * sd[j] + (mu[i] - mu[j]).powi(2) - 2.0 * (cross - mu[i] * mu[j]));
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
