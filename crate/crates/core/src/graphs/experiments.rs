//! Batch experiments: the relative gap of the pairwise energy bound, and
//! worst-case subquantile curves for both moment ambiguity sets.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{min_expected_energy, subquantile_bound, uniform_iid_moments, Ambiguity, Graph, GraphKind};
use crate::covbound::{pairwise_energy_lower_bound, MeanStd};
use crate::error::{Error, Result};

/// Instances with `e* <= ZERO_ENERGY_TOL` are redrawn.
pub const ZERO_ENERGY_TOL: f64 = 1e-9;
const MAX_REDRAWS: usize = 1000;

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Evaluates `f(0), .., f(count - 1)` on `workers` threads pulling indices
/// from a shared counter. Results come back in index order. On failure the
/// error of the smallest failing index is returned; indices above it are
/// not started.
pub fn parallel_map<T, F>(count: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let next = AtomicUsize::new(0);
    let first_failure = AtomicUsize::new(usize::MAX);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..count).map(|_| None).collect());
    let workers = workers.clamp(1, count.max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count || i > first_failure.load(Ordering::Relaxed) {
                    break;
                }
                let r = f(i);
                if r.is_err() {
                    first_failure.fetch_min(i, Ordering::Relaxed);
                }
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let slots = slots.into_inner().unwrap();
    let mut out = Vec::with_capacity(count);
    for s in slots {
        match s {
            Some(r) => out.push(r?),
            None => unreachable!("an index below the first failure was skipped"),
        }
    }
    Ok(out)
}

/// `μ_i ~ U(0,1)` and `σ_i = t_i sqrt(μ_i (1 - μ_i))` with `t_i ~ U(0,1)`.
pub fn random_mean_std<R: Rng>(n: usize, rng: &mut R) -> MeanStd {
    let mut mu = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    for _ in 0..n {
        let m: f64 = rng.gen();
        let t: f64 = rng.gen();
        mu.push(m);
        sigma.push(t * (m * (1.0 - m)).sqrt());
    }
    MeanStd::new(mu, sigma).expect("finite draws")
}

/// One accepted instance of the gap experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapInstance {
    pub moments: MeanStd,
    pub exact: f64,
    pub pairwise: f64,
    pub gap_pct: f64,
    pub redraws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    pub kind: GraphKind,
    pub n: usize,
    pub instances: usize,
    pub seed: u64,
    pub mean_gap_pct: f64,
    /// Sample standard deviation (zero for a single instance).
    pub std_gap_pct: f64,
    /// Draws rejected because the minimum expected energy was zero.
    pub redraws: usize,
    pub per_instance: Vec<GapInstance>,
}

#[derive(Serialize)]
struct Replay<'a> {
    kind: GraphKind,
    n: usize,
    seed: u64,
    index: usize,
    moments: &'a MeanStd,
}

fn gap_instance(g: &Graph, seed: u64, index: usize) -> Result<GapInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let l = super::laplacian(g);
    for redraws in 0..MAX_REDRAWS {
        let ms = random_mean_std(g.n(), &mut rng);
        let attempt = min_expected_energy(g, &ms)
            .and_then(|exact| pairwise_energy_lower_bound(&l, &ms).map(|lb| (exact, lb)));
        let (exact, pairwise) = match attempt {
            Ok(v) => v,
            Err(e) => {
                let replay = Replay { kind: g.kind(), n: g.n(), seed, index, moments: &ms };
                return Err(Error::InstanceFailed {
                    index,
                    instance: serde_json::to_string(&replay)?,
                    source: Box::new(e),
                });
            }
        };
        if exact > ZERO_ENERGY_TOL {
            let gap_pct = (exact - pairwise) / exact * 100.0;
            return Ok(GapInstance { moments: ms, exact, pairwise, gap_pct, redraws });
        }
    }
    Err(Error::InvalidInput(format!("instance {index}: {MAX_REDRAWS} draws in a row had zero minimum energy")))
}

/// Relative gap between the minimum expected energy and the pairwise lower
/// bound over `instances` random moment data. Instance `i` draws from the
/// ChaCha8 stream `i` of `seed`, so results do not depend on `workers`.
pub fn gap_experiment(kind: GraphKind, n: usize, instances: usize, seed: u64, workers: usize) -> Result<GapStats> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("gap experiment needs n >= 2, got {n}")));
    }
    let g = Graph::of_kind(kind, n)?;
    let per_instance = parallel_map(instances, workers, |i| gap_instance(&g, seed, i))?;
    let gaps: Vec<f64> = per_instance.iter().map(|r| r.gap_pct).collect();
    let k = gaps.len() as f64;
    let mean = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / k };
    let std = if gaps.len() < 2 {
        0.0
    } else {
        (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    Ok(GapStats {
        kind,
        n,
        instances,
        seed,
        mean_gap_pct: mean,
        std_gap_pct: std,
        redraws: per_instance.iter().map(|r| r.redraws).sum(),
        per_instance,
    })
}

/// `0.0, 0.05, .., 0.9`.
pub fn figure1_alpha_grid() -> Vec<f64> {
    (0..=18).map(|k| k as f64 * 0.05).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Figure1Row {
    pub alpha: f64,
    pub bound_p: f64,
    pub bound_q: f64,
}

/// Subquantile bounds of the path graph on `n` vertices under independent
/// uniform moments, for both ambiguity sets.
pub fn figure1(n: usize, alphas: &[f64], workers: usize) -> Result<Vec<Figure1Row>> {
    let g = Graph::path(n);
    let spec = uniform_iid_moments(n);
    let sets = [Ambiguity::P, Ambiguity::Q];
    let values = parallel_map(2 * alphas.len(), workers, |k| {
        let (alpha, set) = (alphas[k / 2], sets[k % 2]);
        subquantile_bound(&g, alpha, set, &spec, None).map(|(v, _)| v)
    })?;
    Ok(alphas
        .iter()
        .enumerate()
        .map(|(k, &alpha)| Figure1Row { alpha, bound_p: values[2 * k], bound_q: values[2 * k + 1] })
        .collect())
}
