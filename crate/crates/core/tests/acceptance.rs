//! Acceptance suite. Every test prints one `criterion N PASS|FAIL` line to
//! the real stdout (bypassing the harness capture) and then asserts.
//!
//! Criterion 7 runs the full-size path graph and is ignored by default:
//! `cargo test --release --test acceptance -- --ignored`.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tightbox_core::conic::{SolverSettings, ValidationReport, VALIDATION_TOL};
use tightbox_core::covbound::{extremal_bivariate, solve_cov_bound};
use tightbox_core::graphs::{
    energy, figure1_alpha_grid, gap_experiment, laplacian, random_mean_std, subquantile_bound, uniform_iid_moments,
    Ambiguity, Graph, GraphKind,
};
use tightbox_core::moments::{k_cone_member, solve_dro_p, ConePoint, MomentSpec, PiecewiseQuadratic, MEMBERSHIP_TOL};
use tightbox_core::qsmb::{
    oracle_global_min, random_submodular, solve_qsmb, solve_relaxation, QsmbProblem, QsmbResult, RelaxKind,
};
use tightbox_core::symmat::SymMatrix;

/// Relative agreement with the exact oracle.
const ORACLE_TOL: f64 = 1e-5;
/// Margin by which the basic relaxation must miss the optimum.
const GAP_WITNESS_MARGIN: f64 = 1e-3;
const CLOSED_FORM_TOL: f64 = 1e-6;
const MOMENT_TOL: f64 = 1e-10;
const EXACT_GAP_TOL: f64 = 1e-6;
const GAP_SIGN_TOL: f64 = 1e-7;
const CURVE_TOL: f64 = 1e-6;
const MEMBERSHIP_BAND: f64 = 1e-6;
const DUALITY_GAP_TOL: f64 = 1e-7;

fn report(id: u32, what: &str, ok: bool, detail: String, started: Instant) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    let line = format!("criterion {id:>2} {verdict}: {what} ({detail}; {:.1?})\n", started.elapsed());
    let mut out = std::io::stdout().lock();
    out.write_all(line.as_bytes()).unwrap();
    out.flush().unwrap();
    assert!(ok, "{}", line.trim_end());
}

/// Counts solves whose report fails at the hygiene tolerance.
#[derive(Default)]
struct Hygiene {
    solves: usize,
    failures: Vec<String>,
}

impl Hygiene {
    fn check(&mut self, label: impl FnOnce() -> String, v: &ValidationReport) {
        self.solves += 1;
        if !v.passes(VALIDATION_TOL) {
            self.failures.push(format!("{}: {:?}", label(), v));
        }
    }

    fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn summary(&self) -> String {
        match self.failures.first() {
            None => format!("{} solves validated", self.solves),
            Some(f) => format!("{} of {} solves fail validation, first {f}", self.failures.len(), self.solves),
        }
    }
}

fn settings() -> SolverSettings {
    SolverSettings::default()
}

fn submodular_instance(index: u64) -> QsmbProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    rng.set_stream(index);
    random_submodular(2 + (index as usize) % 5, &mut rng)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn criterion_01_tight_relaxation_matches_oracle() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    let mut hygiene = Hygiene::default();
    for i in 0..200 {
        let p = submodular_instance(i);
        let r = solve_relaxation(&p, RelaxKind::TightRlt, &settings()).unwrap();
        hygiene.check(|| format!("instance {i}"), &r.validation);
        let (best, _) = oracle_global_min(&p).unwrap();
        let err = (r.value - best).abs() / (1.0 + best.abs());
        worst = worst.max(err);
        if err > ORACLE_TOL {
            bad.push(i);
        }
    }
    let ok = bad.is_empty() && hygiene.ok();
    report(
        1,
        "tight relaxation equals the exact minimum on 200 submodular instances, n in 2..=6",
        ok,
        format!("worst relative error {worst:.2e}, failing {bad:?}; {}", hygiene.summary()),
        t,
    );
}

#[test]
fn criterion_02_basic_relaxation_exact_for_nonpositive_linear_term() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut worst_value, mut worst_point) = (0.0f64, 0.0f64);
    let mut bad = Vec::new();
    let mut hygiene = Hygiene::default();
    for i in 0..100 {
        let n = rng.gen_range(1..=6);
        let p = random_submodular(n, &mut rng);
        let c: Vec<f64> = p.c().iter().map(|v| -v.abs()).collect();
        let p = QsmbProblem::new(p.q().clone(), c, 0.0).unwrap();
        let r = solve_relaxation(&p, RelaxKind::Basic, &settings()).unwrap();
        hygiene.check(|| format!("instance {i}"), &r.validation);
        let (best, _) = oracle_global_min(&p).unwrap();
        let scale = p.scale();
        let x: Vec<f64> = r.big_x.diag().iter().map(|v| v.max(0.0).sqrt()).collect();
        let value_err = (r.value - best).abs() / scale;
        let point_err = (p.evaluate(&x) - best).abs() / scale;
        worst_value = worst_value.max(value_err);
        worst_point = worst_point.max(point_err);
        if value_err > ORACLE_TOL || point_err > ORACLE_TOL || x.iter().any(|v| *v > 1.0 + 1e-9) {
            bad.push(i);
        }
    }
    report(
        2,
        "basic relaxation is exact and sqrt(diag X*) attains it when c <= 0, 100 instances",
        bad.is_empty() && hygiene.ok(),
        format!(
            "worst value error {worst_value:.2e}, worst point error {worst_point:.2e}, failing {bad:?}; {}",
            hygiene.summary()
        ),
        t,
    );
}

#[test]
fn criterion_03_basic_relaxation_gap_witness() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hygiene = Hygiene::default();
    let mut found = None;
    for k in 0..10_000 {
        let p = random_submodular(2, &mut rng);
        if p.c().iter().all(|&v| v <= 0.0) {
            continue;
        }
        let basic = solve_relaxation(&p, RelaxKind::Basic, &settings()).unwrap();
        hygiene.check(|| format!("basic candidate {k}"), &basic.validation);
        let (best, _) = oracle_global_min(&p).unwrap();
        if basic.value < best - GAP_WITNESS_MARGIN {
            let tight = solve_relaxation(&p, RelaxKind::TightRlt, &settings()).unwrap();
            hygiene.check(|| format!("tight candidate {k}"), &tight.validation);
            if close(tight.value, best, ORACLE_TOL) {
                found = Some((k, p, basic.value, tight.value, best));
                break;
            }
        }
    }
    let detail = match &found {
        Some((k, p, basic, tight, best)) => format!(
            "candidate {k}: Q = {:?}, c = {:?}, basic {basic:.6}, tight {tight:.6}, exact {best:.6}",
            p.q().rows(),
            p.c()
        ),
        None => "no witness among 10^4 candidates".into(),
    };
    report(
        3,
        "an n = 2 instance with a positive linear term where only the basic relaxation has a gap",
        found.is_some() && hygiene.ok(),
        format!("{detail}; {}", hygiene.summary()),
        t,
    );
}

#[test]
fn criterion_04_bivariate_closed_form_and_extremal_distribution() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = SymMatrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap();
    let (mut worst_sdp, mut worst_moment) = (0.0f64, 0.0f64);
    let mut hygiene = Hygiene::default();
    for i in 0..100 {
        let ms = random_mean_std(2, &mut rng);
        let (mu, sd) = (ms.mu(), ms.sigma());
        let closed = mu[0].min(mu[1]).min(mu[0] * mu[1] + sd[0] * sd[1]);
        let sdp = solve_cov_bound(&a, &ms).unwrap();
        if let Some(v) = &sdp.validation {
            hygiene.check(|| format!("instance {i}"), v);
        }
        worst_sdp = worst_sdp.max((sdp.value - closed).abs());

        let (dist, _) = extremal_bivariate(&ms).unwrap();
        let errs = [
            dist.probs.iter().sum::<f64>() - 1.0,
            dist.mean(0) - mu[0],
            dist.mean(1) - mu[1],
            dist.second_moment(0, 0) - (mu[0] * mu[0] + sd[0] * sd[0]),
            dist.second_moment(1, 1) - (mu[1] * mu[1] + sd[1] * sd[1]),
            dist.second_moment(0, 1) - closed,
        ];
        let support_ok = dist.points.iter().flatten().all(|v| (0.0..=1.0).contains(v))
            && dist.probs.iter().all(|p| *p >= 0.0);
        let e = errs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst_moment = worst_moment.max(if support_ok { e } else { f64::INFINITY });
    }
    report(
        4,
        "SDP bound on E[xi_1 xi_2] equals min(mu_1, mu_2, mu_1 mu_2 + s_1 s_2) and is attained, 100 instances",
        worst_sdp <= CLOSED_FORM_TOL && worst_moment <= MOMENT_TOL && hygiene.ok(),
        format!("worst SDP error {worst_sdp:.2e}, worst moment error {worst_moment:.2e}; {}", hygiene.summary()),
        t,
    );
}

#[test]
fn criterion_05_covariance_bound_equals_moment_dro() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut hygiene = Hygiene::default();
    for i in 0..50 {
        let n = rng.gen_range(1..=5);
        let ms = random_mean_std(n, &mut rng);
        // -A submodular: nonnegative off-diagonals, any diagonal.
        let mut rows = vec![vec![0.0; n]; n];
        for p in 0..n {
            rows[p][p] = rng.gen_range(-1.0..1.0);
            for q in 0..p {
                let v = rng.gen_range(0.0..1.0);
                rows[p][q] = v;
                rows[q][p] = v;
            }
        }
        let a = SymMatrix::from_rows(&rows).unwrap();
        let cov = solve_cov_bound(&a, &ms).unwrap();
        if let Some(v) = &cov.validation {
            hygiene.check(|| format!("covariance instance {i}"), v);
        }
        let second = ms.second_moments();
        let sigma = SymMatrix::from_fn(n, |p, q| if p == q { second[p] } else { 0.0 });
        let spec = MomentSpec::new(ms.mu().to_vec(), sigma).unwrap();
        let f = PiecewiseQuadratic::single(a.clone(), vec![0.0; n], 0.0).unwrap();
        let dro = solve_dro_p(&spec, &f).unwrap();
        hygiene.check(|| format!("DRO instance {i}"), &dro.validation);
        let scale = 1.0 + a.max_abs();
        worst = worst.max((cov.value - dro.value).abs() / scale);
    }
    report(
        5,
        "covariance bound equals the single-piece DRO over P with zero cross-moment bounds, 50 instances",
        worst <= ORACLE_TOL && hygiene.ok(),
        format!("worst scaled difference {worst:.2e}; {}", hygiene.summary()),
        t,
    );
}

#[test]
fn criterion_06_pairwise_energy_gap() {
    let t = Instant::now();
    let kinds = [GraphKind::Path, GraphKind::Star, GraphKind::Complete];
    let mut lines = Vec::new();
    let mut ok = true;
    for &kind in &kinds {
        let s = gap_experiment(kind, 2, 100, 6, 1).unwrap();
        ok &= s.mean_gap_pct.abs() <= EXACT_GAP_TOL && s.std_gap_pct <= EXACT_GAP_TOL;
        lines.push(format!("{kind} n=2 {:.1e} ({:.1e})", s.mean_gap_pct, s.std_gap_pct));
    }
    for n in [10, 20] {
        let mut means = Vec::new();
        for &kind in &kinds {
            let s = gap_experiment(kind, n, 100, 6, 1).unwrap();
            let lowest = s.per_instance.iter().map(|r| r.gap_pct).fold(f64::INFINITY, f64::min);
            ok &= lowest >= -GAP_SIGN_TOL;
            means.push(s.mean_gap_pct);
            lines.push(format!("{kind} n={n} {:.3} ({:.3}) min {lowest:.1e}", s.mean_gap_pct, s.std_gap_pct));
        }
        ok &= means[2] > means[1] && means[1] > means[0];
    }
    report(
        6,
        "pairwise energy bound: no gap at n = 2, nonnegative gaps and complete > star > path at n = 10, 20",
        ok,
        lines.join("; "),
        t,
    );
}

fn curve(n: usize, alphas: &[f64], hygiene: &mut Hygiene) -> Vec<(f64, f64, f64)> {
    let g = Graph::path(n);
    let spec = uniform_iid_moments(n);
    alphas
        .iter()
        .map(|&alpha| {
            let mut pair = [0.0; 2];
            for (k, set) in [Ambiguity::P, Ambiguity::Q].into_iter().enumerate() {
                let (v, res) = subquantile_bound(&g, alpha, set, &spec, None).unwrap();
                hygiene.check(|| format!("{set:?} at alpha {alpha}"), &res.validation);
                pair[k] = v;
            }
            (alpha, pair[0], pair[1])
        })
        .collect()
}

#[test]
#[ignore = "full-size path graph, long running"]
fn criterion_07_subquantile_bounds_cross() {
    let t = Instant::now();
    let alphas = [0.1, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
    let mut hygiene = Hygiene::default();
    let rows = curve(50, &alphas, &mut hygiene);
    let mut ok = hygiene.ok();
    for &(alpha, p, q) in &rows {
        ok &= if alpha <= 0.2 { p >= q - CURVE_TOL } else { p <= q + CURVE_TOL };
    }
    let detail: Vec<String> = rows.iter().map(|(a, p, q)| format!("{a}: P {p:.3e} Q {q:.3e}")).collect();
    report(
        7,
        "path on 50 vertices: P bound >= Q bound at alpha 0.1, <= at alpha 0.3..0.9",
        ok,
        format!("{}; {}", detail.join(", "), hygiene.summary()),
        t,
    );
}

/// Lower-tail expectation estimate `x + c mean(min(0, E - x))` at the
/// empirical `(1 - alpha)`-quantile `x`, with its standard error.
fn monte_carlo_subquantile(sorted: &[f64], alpha: f64) -> (f64, f64) {
    let n = sorted.len();
    let c = 1.0 / (1.0 - alpha);
    let k = (((1.0 - alpha) * n as f64).ceil() as usize).clamp(1, n);
    let x = sorted[k - 1];
    let g: Vec<f64> = sorted.iter().map(|e| x + c * (e - x).min(0.0)).collect();
    let mean = g.iter().sum::<f64>() / n as f64;
    let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

#[test]
fn criterion_08_subquantile_curves_at_desk_scale() {
    let t = Instant::now();
    let n = 15;
    let alphas = figure1_alpha_grid();
    let mut hygiene = Hygiene::default();
    let rows = curve(n, &alphas, &mut hygiene);
    let mut failures = Vec::new();

    for w in rows.windows(2) {
        if w[1].1 > w[0].1 + CURVE_TOL || w[1].2 > w[0].2 + CURVE_TOL {
            failures.push(format!("increase between alpha {} and {}", w[0].0, w[1].0));
        }
    }

    let g = Graph::path(n);
    let spec = uniform_iid_moments(n);
    let single = PiecewiseQuadratic::single(laplacian(&g).scale(-1.0), vec![0.0; n], 0.0).unwrap();
    let worst = solve_dro_p(&spec, &single).unwrap();
    hygiene.check(|| "single-piece DRO".into(), &worst.validation);
    if (rows[0].1 + worst.value).abs() > CURVE_TOL {
        failures.push(format!("P at alpha 0 is {} but the single-piece value gives {}", rows[0].1, -worst.value));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut xi = vec![0.0; n];
    let mut energies: Vec<f64> = (0..1_000_000)
        .map(|_| {
            xi.iter_mut().for_each(|v| *v = rng.gen::<f64>());
            energy(&g, &xi).unwrap()
        })
        .collect();
    energies.sort_by(f64::total_cmp);
    let mut slack = f64::INFINITY;
    for &(alpha, p, q) in &rows {
        let (mc, se) = monte_carlo_subquantile(&energies, alpha);
        let limit = mc + 3.0 * se;
        slack = slack.min(limit - p.max(q));
        if p > limit || q > limit {
            failures.push(format!("alpha {alpha}: P {p} Q {q} above Monte Carlo {mc} + 3 x {se}"));
        }
    }

    let ok = failures.is_empty() && hygiene.ok();
    report(
        8,
        "path on 15 vertices: both curves nonincreasing, P at alpha 0 matches, both below Monte Carlo + 3 SE",
        ok,
        format!(
            "P range [{:.2e}, {:.2e}], Q range [{:.2e}, {:.2e}], smallest Monte Carlo slack {slack:.3}; {}; {}",
            rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min),
            rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
            rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min),
            rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max),
            if failures.is_empty() { "no violations".to_string() } else { failures.join("; ") },
            hygiene.summary()
        ),
        t,
    );
}

#[test]
fn criterion_09_k_membership_agrees_with_oracle() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut tested, mut skipped, mut disagreements) = (0, 0, Vec::new());
    while tested < 100 {
        let n = rng.gen_range(1..=5);
        let p = random_submodular(n, &mut rng);
        let (base, _) = oracle_global_min(&p).unwrap();
        let y0 = rng.gen_range(-0.5..0.5) - base;
        let pt = ConePoint::new(y0, p.c().to_vec(), p.q().clone()).unwrap();
        let shifted = QsmbProblem::new(p.q().clone(), p.c().to_vec(), y0).unwrap();
        let (minimum, _) = oracle_global_min(&shifted).unwrap();
        if minimum.abs() <= MEMBERSHIP_BAND {
            skipped += 1;
            continue;
        }
        let member = k_cone_member(&pt, MEMBERSHIP_TOL).unwrap().member;
        if member != (minimum > 0.0) {
            disagreements.push(format!("minimum {minimum:.3e}, member {member}"));
        }
        tested += 1;
    }
    report(
        9,
        "K membership agrees with the sign of the exact box minimum, 100 points",
        disagreements.is_empty(),
        format!("{tested} tested, {skipped} inside the +-1e-6 band skipped, disagreements {disagreements:?}"),
        t,
    );
}

fn tight_gap(r: &QsmbResult) -> f64 {
    r.rel_gap.abs().max(r.validation.rel_gap.abs())
}

#[test]
fn criterion_10_solver_hygiene() {
    let t = Instant::now();
    let mut hygiene = Hygiene::default();
    let mut worst_gap = 0.0f64;
    for i in 0..200 {
        let p = submodular_instance(i);
        let r = solve_qsmb(&p, RelaxKind::TightRlt, &settings()).unwrap();
        hygiene.check(|| format!("criterion 1 instance {i}"), &r.validation);
        worst_gap = worst_gap.max(tight_gap(&r));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..20 {
        let n = rng.gen_range(2..=5);
        let p = random_submodular(n, &mut rng);
        for kind in [RelaxKind::Basic, RelaxKind::FullRlt] {
            let r = solve_relaxation(&p, kind, &settings()).unwrap();
            hygiene.check(|| format!("{kind:?} instance {i}"), &r.validation);
        }
        let ms = random_mean_std(n, &mut rng);
        let l = laplacian(&Graph::complete(n)).scale(-1.0);
        if let Some(v) = &solve_cov_bound(&l, &ms).unwrap().validation {
            hygiene.check(|| format!("covariance instance {i}"), v);
        }
        let spec = uniform_iid_moments(n);
        for set in [Ambiguity::P, Ambiguity::Q] {
            let (_, res) = subquantile_bound(&Graph::star(n), rng.gen_range(0.0..0.9), set, &spec, None).unwrap();
            hygiene.check(|| format!("{set:?} subquantile instance {i}"), &res.validation);
        }
    }
    report(
        10,
        "every optimal solve validates at 1e-6; duality gap <= 1e-7 on the criterion-1 instances",
        hygiene.ok() && worst_gap <= DUALITY_GAP_TOL,
        format!("worst relative duality gap {worst_gap:.2e}; {}", hygiene.summary()),
        t,
    );
}
