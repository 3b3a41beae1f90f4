//! Graph Laplacians, the energy `ξ^T L ξ`, and worst-case bounds on the
//! energy of random vertex potentials in `[0,1]^n`.

mod experiments;

use serde::{Deserialize, Serialize};

use crate::covbound::{solve_cov_bound_with, MeanStd};
use crate::conic::{SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::moments::{
    solve_dro_p, solve_dro_q, DecisionSet, DroResult, MomentSpec, Piece, PiecewiseQuadratic,
};
use crate::symmat::SymMatrix;

pub use experiments::{
    default_workers, figure1, figure1_alpha_grid, gap_experiment, parallel_map, random_mean_std, Figure1Row,
    GapInstance, GapStats, ZERO_ENERGY_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Path,
    /// Vertex 0 is the center.
    Star,
    Complete,
    Custom,
}

impl std::str::FromStr for GraphKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "path" => Ok(GraphKind::Path),
            "star" => Ok(GraphKind::Star),
            "complete" => Ok(GraphKind::Complete),
            "custom" => Ok(GraphKind::Custom),
            _ => Err(Error::InvalidInput(format!("unknown graph kind {s:?}"))),
        }
    }
}

impl std::fmt::Display for GraphKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GraphKind::Path => "path",
            GraphKind::Star => "star",
            GraphKind::Complete => "complete",
            GraphKind::Custom => "custom",
        })
    }
}

/// Simple undirected graph. Edges are stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphJson", into = "GraphJson")]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    kind: GraphKind,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GraphJson {
    Named { kind: GraphKind, n: usize },
    Edges { edges: Vec<[usize; 2]>, #[serde(default, skip_serializing_if = "Option::is_none")] n: Option<usize> },
}

impl TryFrom<GraphJson> for Graph {
    type Error = Error;
    fn try_from(j: GraphJson) -> Result<Self> {
        match j {
            GraphJson::Named { kind, n } => Graph::of_kind(kind, n),
            GraphJson::Edges { edges, n } => {
                let n = n.unwrap_or_else(|| edges.iter().flatten().map(|&v| v + 1).max().unwrap_or(0));
                Graph::from_edges(n, edges.into_iter().map(|[i, j]| (i, j)).collect())
            }
        }
    }
}

impl From<Graph> for GraphJson {
    fn from(g: Graph) -> Self {
        match g.kind {
            GraphKind::Custom => {
                GraphJson::Edges { edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(), n: Some(g.n) }
            }
            kind => GraphJson::Named { kind, n: g.n },
        }
    }
}

impl Graph {
    /// Graph with the given edges, tagged `Custom`. Rejects self-loops,
    /// duplicates (in either orientation) and out-of-range vertices.
    pub fn from_edges(n: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(edges.len());
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidInput(format!("edge ({i}, {j}) outside {n} vertices")));
            }
            if i == j {
                return Err(Error::InvalidInput(format!("self-loop at vertex {i}")));
            }
            let e = (i.min(j), i.max(j));
            if !seen.insert(e) {
                return Err(Error::InvalidInput(format!("duplicate edge ({i}, {j})")));
            }
            out.push(e);
        }
        Ok(Graph { n, edges: out, kind: GraphKind::Custom })
    }

    pub fn path(n: usize) -> Self {
        Graph { n, edges: (1..n).map(|i| (i - 1, i)).collect(), kind: GraphKind::Path }
    }

    pub fn star(n: usize) -> Self {
        Graph { n, edges: (1..n).map(|i| (0, i)).collect(), kind: GraphKind::Star }
    }

    pub fn complete(n: usize) -> Self {
        let edges = (0..n).flat_map(|j| (j + 1..n).map(move |i| (j, i))).collect();
        Graph { n, edges, kind: GraphKind::Complete }
    }

    pub fn of_kind(kind: GraphKind, n: usize) -> Result<Self> {
        match kind {
            GraphKind::Path => Ok(Self::path(n)),
            GraphKind::Star => Ok(Self::star(n)),
            GraphKind::Complete => Ok(Self::complete(n)),
            GraphKind::Custom => Err(Error::InvalidInput("a custom graph needs an edge list".into())),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(i, j)| i == v || j == v).count()
    }
}

pub fn laplacian(g: &Graph) -> SymMatrix {
    let mut rows = vec![vec![0.0; g.n]; g.n];
    for &(i, j) in &g.edges {
        rows[i][i] += 1.0;
        rows[j][j] += 1.0;
        rows[i][j] -= 1.0;
        rows[j][i] -= 1.0;
    }
    SymMatrix::from_rows(&rows).expect("Laplacian is symmetric by construction")
}

/// `Σ_{(i,j) in E} (ξ_i - ξ_j)^2`.
pub fn energy(g: &Graph, xi: &[f64]) -> Result<f64> {
    if xi.len() != g.n {
        return Err(Error::DimensionMismatch(format!("graph has {} vertices, ξ has {}", g.n, xi.len())));
    }
    Ok(g.edges.iter().map(|&(i, j)| (xi[i] - xi[j]).powi(2)).sum())
}

/// Mean `1/2` and second moments `1/3` (diagonal), `1/4` (off-diagonal) of
/// independent uniforms on `[0,1]`.
pub fn uniform_iid_moments(n: usize) -> MomentSpec {
    let sigma = SymMatrix::from_fn(n, |i, j| if i == j { 1.0 / 3.0 } else { 0.25 });
    MomentSpec::new(vec![0.5; n], sigma).expect("uniform moments are valid")
}

/// Solver settings for [`min_expected_energy`].
pub fn energy_settings() -> SolverSettings {
    SolverSettings::with_tolerance(1e-12)
}

/// Smallest `E[ξ^T L ξ]` over distributions on `[0,1]^n` with the given
/// means and standard deviations. Solved at [`energy_settings`], retried
/// at the default tolerance if the solver stalls.
pub fn min_expected_energy(g: &Graph, ms: &MeanStd) -> Result<f64> {
    match min_expected_energy_with(g, ms, &energy_settings()) {
        Err(Error::Solver { status: SolveStatus::NumericalFailure | SolveStatus::MaxIterations }) => {
            min_expected_energy_with(g, ms, &SolverSettings::default())
        }
        other => other,
    }
}

pub fn min_expected_energy_with(g: &Graph, ms: &MeanStd, s: &SolverSettings) -> Result<f64> {
    let l = laplacian(g);
    let bound = solve_cov_bound_with(&l.scale(-1.0), ms, s)?;
    Ok((-bound.value).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ambiguity {
    /// Moment data on the box, exact for submodular objectives.
    P,
    /// Mean and second-moment matrix with support in the box, handled through
    /// convex quadratic duality.
    Q,
}

impl std::str::FromStr for Ambiguity {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p" | "P" => Ok(Ambiguity::P),
            "q" | "Q" => Ok(Ambiguity::Q),
            _ => Err(Error::InvalidInput(format!("unknown ambiguity set {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubquantileQuery {
    pub alphas: Vec<f64>,
    pub ambiguity: Ambiguity,
    pub moments: MomentSpec,
    /// Upper bound of the threshold variable; `None` means `|E|`.
    pub x_max: Option<f64>,
}

impl SubquantileQuery {
    fn check(&self) -> Result<()> {
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
            return Err(Error::InvalidInput(format!("alpha = {a} is outside [0, 1)")));
        }
        if let Some(x) = self.x_max {
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::InvalidInput(format!("x_max = {x} must be finite and nonnegative")));
            }
        }
        Ok(())
    }
}

/// `f(ξ, t) = max(-t, (c - 1) t - c ξ^T L ξ)` with `c = 1 / (1 - α)`, so
/// that `min_t sup E[f] = -max_t (t - c sup E[max(0, t - ξ^T L ξ)])`.
pub fn subquantile_objective(g: &Graph, alpha: f64, x_max: f64) -> Result<PiecewiseQuadratic> {
    let n = g.n();
    let c = 1.0 / (1.0 - alpha);
    let zero = SymMatrix::zeros(n);
    let lower = Piece { a: vec![zero.clone(), zero.clone()], b: vec![vec![0.0; n]; 2], c: vec![0.0, -1.0] };
    let upper = Piece { a: vec![laplacian(g).scale(-c), zero], b: vec![vec![0.0; n]; 2], c: vec![0.0, c - 1.0] };
    PiecewiseQuadratic::new(n, vec![lower, upper], DecisionSet::boxed(vec![0.0], vec![x_max]))
}

/// Worst-case lower `(1 - α)`-tail expectation of the energy, with its
/// DRO solve.
pub fn subquantile_bound(
    g: &Graph,
    alpha: f64,
    ambiguity: Ambiguity,
    spec: &MomentSpec,
    x_max: Option<f64>,
) -> Result<(f64, DroResult)> {
    let x_max = x_max.unwrap_or(g.edges().len() as f64);
    let f = subquantile_objective(g, alpha, x_max)?;
    let res = match ambiguity {
        Ambiguity::P => solve_dro_p(spec, &f)?,
        Ambiguity::Q => solve_dro_q(spec, &f)?,
    };
    Ok((-res.value, res))
}

/// `(α, bound)` for every `α` of the query, in order.
pub fn subquantile_curve(g: &Graph, q: &SubquantileQuery, workers: usize) -> Result<Vec<(f64, f64)>> {
    q.check()?;
    if q.moments.n() != g.n() {
        return Err(Error::DimensionMismatch("moment data and graph differ in size".into()));
    }
    parallel_map(q.alphas.len(), workers, |k| {
        let alpha = q.alphas[k];
        subquantile_bound(g, alpha, q.ambiguity, &q.moments, q.x_max).map(|(v, _)| (alpha, v))
    })
}
