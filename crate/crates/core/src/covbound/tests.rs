use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::moments::{solve_dro_p, MomentSpec, PiecewiseQuadratic};

fn ms(mu: &[f64], sigma: &[f64]) -> MeanStd {
    MeanStd::new(mu.to_vec(), sigma.to_vec()).unwrap()
}

fn half_offdiag() -> SymMatrix {
    SymMatrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 0.0]]).unwrap()
}

fn uniform_sd() -> f64 {
    (1.0f64 / 12.0).sqrt()
}

#[test]
fn feasibility_examples() {
    assert!(mean_std_feasible(&ms(&[0.5], &[0.5])));
    assert!(!mean_std_feasible(&ms(&[0.5], &[0.6])));
    assert!(mean_std_feasible(&ms(&[0.0], &[0.0])));
    assert!(!mean_std_feasible(&ms(&[0.5], &[-0.1])));
    assert!(MeanStd::new(vec![0.5], vec![]).is_err());
}

#[test]
fn bivariate_examples() {
    assert_eq!(bivariate_bound(&ms(&[0.5, 0.5], &[0.5, 0.5])).unwrap(), 0.5);
    assert!((bivariate_bound(&ms(&[0.3, 0.8], &[0.0, 0.0])).unwrap() - 0.24).abs() < 1e-15);
    assert!((bivariate_bound(&ms(&[0.2, 0.9], &[0.4, 0.3])).unwrap() - 0.2).abs() < 1e-15);
    assert!(matches!(
        bivariate_bound(&ms(&[0.5, 0.5], &[0.6, 0.1])),
        Err(Error::PreconditionViolated { which: "a", .. })
    ));
}

#[test]
fn two_point_examples() {
    let d = two_point_marginal(0.5, 0.5, 0.5).unwrap();
    assert_eq!(d.points, vec![vec![0.0], vec![1.0]]);
    assert_eq!(d.probs, vec![0.5, 0.5]);

    let d = two_point_marginal(0.3, 0.0, 0.7).unwrap();
    assert_eq!(d, DiscreteDistribution::point_mass(vec![0.3]));

    let s = uniform_sd();
    let d = two_point_marginal(0.5, s, 0.5).unwrap();
    assert!((d.points[0][0] - (0.5 - s)).abs() < 1e-15 && (d.points[1][0] - (0.5 + s)).abs() < 1e-15);
    assert!((d.mean(0) - 0.5).abs() < 1e-15);
    assert!((d.second_moment(0, 0) - (0.25 + 1.0 / 12.0)).abs() < 1e-15);

    // interval for (0.5, 0.5) is the single point 0.5
    assert!(matches!(two_point_marginal(0.5, 0.5, 0.7), Err(Error::PInterval { .. })));
}

fn check_attains(m: &MeanStd, tol: f64) -> ExtremalCase {
    let (d, case) = extremal_bivariate(m).unwrap();
    assert!(d.is_valid(1e-12), "{d:?}");
    for i in 0..2 {
        assert!((d.mean(i) - m.mu()[i]).abs() <= tol, "mean {i}: {d:?}");
        assert!((d.second_moment(i, i) - m.second_moments()[i]).abs() <= tol, "second moment {i}: {d:?}");
    }
    let bound = bivariate_bound(m).unwrap();
    assert!((d.second_moment(0, 1) - bound).abs() <= tol, "{} vs {bound}", d.second_moment(0, 1));
    case
}

#[test]
fn extremal_examples() {
    let s = uniform_sd();
    let m = ms(&[0.5, 0.5], &[s, s]);
    assert_eq!(check_attains(&m, 1e-10), ExtremalCase::Overlap);
    let (d, _) = extremal_bivariate(&m).unwrap();
    assert_eq!(d.points.len(), 2);
    assert!((d.second_moment(0, 1) - 1.0 / 3.0).abs() < 1e-10);

    let m = ms(&[0.2, 0.9], &[0.4, 0.3]);
    assert_eq!(check_attains(&m, 1e-10), ExtremalCase::Disjoint);
    let (d, _) = extremal_bivariate(&m).unwrap();
    assert_eq!(d.points.len(), 3);

    // the mirrored instance takes the swapped branch
    let m = ms(&[0.9, 0.2], &[0.3, 0.4]);
    assert_eq!(check_attains(&m, 1e-10), ExtremalCase::Disjoint);

    let (d, case) = extremal_bivariate(&ms(&[0.5, 0.5], &[0.0, 0.0])).unwrap();
    assert_eq!(case, ExtremalCase::Degenerate);
    assert_eq!(d, DiscreteDistribution::point_mass(vec![0.5, 0.5]));
    check_attains(&ms(&[0.3, 0.6], &[0.0, 0.2]), 1e-10);
}

#[test]
fn cov_bound_examples() {
    let r = solve_cov_bound(&half_offdiag(), &ms(&[0.5, 0.5], &[0.5, 0.5])).unwrap();
    assert!((r.value - 0.5).abs() < 1e-7, "{}", r.value);

    let r = solve_cov_bound(&SymMatrix::zeros(3), &ms(&[0.2, 0.5, 0.7], &[0.1, 0.2, 0.3])).unwrap();
    assert!(r.value.abs() < 1e-8);

    let mu = [0.2, 0.5, 0.7];
    let a = SymMatrix::from_rows(&[vec![1.0, 0.3, 0.0], vec![0.3, -2.0, 0.5], vec![0.0, 0.5, 0.4]]).unwrap();
    let r = solve_cov_bound(&a, &ms(&mu, &[0.0; 3])).unwrap();
    assert!((r.value - a.quad_form(&mu)).abs() < 1e-12);
    assert!(r.validation.is_none());

    assert!(matches!(
        solve_cov_bound(&a.scale(-1.0), &ms(&mu, &[0.1; 3])),
        Err(Error::PreconditionViolated { which: "b", .. })
    ));
    assert!(matches!(
        solve_cov_bound(&a, &ms(&mu, &[0.9; 3])),
        Err(Error::PreconditionViolated { which: "a", .. })
    ));
}

#[test]
fn cov_bound_matrix_is_feasible() {
    let mu = [0.3, 0.5, 0.6, 0.8];
    let sd = [0.2, 0.4, 0.0, 0.25];
    let m = ms(&mu, &sd);
    let a = SymMatrix::from_fn(4, |i, j| if i == j { -1.0 } else { 0.2 + 0.1 * (i + j) as f64 });
    let r = solve_cov_bound(&a, &m).unwrap();
    let sigma = &r.sigma;
    for i in 0..4 {
        assert!((sigma.get(i, i) - m.second_moments()[i]).abs() <= 1e-8);
        for j in 0..4 {
            assert!(sigma.get(i, j) <= mu[j] + 1e-8);
        }
    }
    assert!(sigma.bordered(1.0, &mu).min_eigenvalue().unwrap() >= -1e-8);
    assert!((a.dot(sigma) - r.value).abs() <= 1e-7);
}

#[test]
fn pairwise_examples() {
    let path2 = SymMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    let s = uniform_sd();
    let v = pairwise_energy_lower_bound(&path2, &ms(&[0.5, 0.5], &[s, s])).unwrap();
    assert!(v.abs() < 1e-15);

    let tri = SymMatrix::from_rows(&[vec![2.0, -1.0, -1.0], vec![-1.0, 2.0, -1.0], vec![-1.0, -1.0, 2.0]])
        .unwrap();
    let mu = [0.1, 0.4, 0.8];
    let v = pairwise_energy_lower_bound(&tri, &ms(&mu, &[0.0; 3])).unwrap();
    let expect = (0.1f64 - 0.4).powi(2) + (0.1f64 - 0.8).powi(2) + (0.4f64 - 0.8).powi(2);
    assert!((v - expect).abs() < 1e-14);
    assert!((tri.quad_form(&mu) - expect).abs() < 1e-14);

    let not_laplacian = SymMatrix::identity(2);
    assert!(pairwise_energy_lower_bound(&not_laplacian, &ms(&[0.5, 0.5], &[0.1, 0.1])).is_err());
}

#[test]
fn pairwise_bound_is_exact_for_two_vertices() {
    // min expected energy = -max E[ξ^T(-L)ξ]
    let path2 = SymMatrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let m = random_ms(&mut rng, 2);
        let exact = -solve_cov_bound(&path2.scale(-1.0), &m).unwrap().value;
        let pairwise = pairwise_energy_lower_bound(&path2, &m).unwrap();
        assert!((exact - pairwise).abs() < 1e-6, "{exact} vs {pairwise}");
    }
}

fn random_ms(rng: &mut ChaCha8Rng, n: usize) -> MeanStd {
    let mu: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let sd = mu.iter().map(|m| rng.gen_range(0.0..1.0) * (m * (1.0 - m)).sqrt()).collect();
    MeanStd::new(mu, sd).unwrap()
}

#[test]
fn closed_form_matches_the_sdp() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let m = random_ms(&mut rng, 2);
        let sdp = match solve_cov_bound(&half_offdiag(), &m) { Ok(r) => r.value, Err(e) => panic!("{e} for {m:?}") };
        let closed = bivariate_bound(&m).unwrap();
        assert!((sdp - closed).abs() <= 1e-6, "{sdp} vs {closed} for {m:?}");
    }
}

#[test]
fn pairwise_bound_never_exceeds_the_exact_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let n = rng.gen_range(3..6);
        let mut l = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..i {
                if rng.gen_bool(0.6) {
                    let e: Vec<f64> = (0..n).map(|k| (k == i) as u8 as f64 - (k == j) as u8 as f64).collect();
                    l = l.add(&SymMatrix::sym_outer(&e, &e));
                }
            }
        }
        let m = random_ms(&mut rng, n);
        let exact = -solve_cov_bound(&l.scale(-1.0), &m).unwrap().value;
        let pairwise = pairwise_energy_lower_bound(&l, &m).unwrap();
        assert!(pairwise <= exact + 1e-7, "{pairwise} > {exact}");
    }
}

#[test]
fn matches_the_moment_cone_program() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..8 {
        let n = rng.gen_range(2..4);
        let m = random_ms(&mut rng, n);
        let a = SymMatrix::from_fn(n, |i, j| if i == j { rng.gen_range(-1.0..1.0) } else { rng.gen_range(0.0..1.0) });
        let direct = solve_cov_bound(&a, &m).unwrap().value;
        let second = m.second_moments();
        let sigma = SymMatrix::from_fn(n, |i, j| if i == j { second[i] } else { 0.0 });
        let spec = MomentSpec::new(m.mu().to_vec(), sigma).unwrap();
        let f = PiecewiseQuadratic::single(a.clone(), vec![0.0; n], 0.0).unwrap();
        let via_p = solve_dro_p(&spec, &f).unwrap().value;
        assert!((direct - via_p).abs() <= 1e-5 * (1.0 + a.max_abs()), "{direct} vs {via_p}");
    }
}

#[test]
fn json_shapes() {
    let m = ms(&[0.5, 0.2], &[0.1, 0.3]);
    let s = serde_json::to_string(&m).unwrap();
    assert_eq!(serde_json::from_str::<MeanStd>(&s).unwrap(), m);
    let d = two_point_marginal(0.5, 0.5, 0.5).unwrap();
    let s = serde_json::to_string(&d).unwrap();
    assert!(s.contains("\"points\"") && s.contains("\"probs\""));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn extremal_distribution_certifies_the_bound(
        m1 in 0.0f64..=1.0, m2 in 0.0f64..=1.0, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0,
    ) {
        let m = ms(&[m1, m2], &[t1 * (m1 * (1.0 - m1)).sqrt(), t2 * (m2 * (1.0 - m2)).sqrt()]);
        check_attains(&m, 1e-10);
    }

    #[test]
    fn bound_is_below_cauchy_schwarz(
        m1 in 0.0f64..=1.0, m2 in 0.0f64..=1.0, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0,
    ) {
        let (s1, s2) = (t1 * (m1 * (1.0 - m1)).sqrt(), t2 * (m2 * (1.0 - m2)).sqrt());
        let b = bivariate_bound(&ms(&[m1, m2], &[s1, s2])).unwrap();
        let cs = m1 * m2 + s1 * s2;
        prop_assert!(b <= cs);
        prop_assert_eq!(b == cs, cs <= m1.min(m2));
    }

    #[test]
    fn two_point_marginals_match_their_moments(mu in 0.0f64..=1.0, t in 0.0f64..=1.0, u in 0.0f64..=1.0) {
        let sigma = t * (mu * (1.0 - mu)).sqrt();
        let (lo, hi) = p_interval(mu, sigma);
        let d = two_point_marginal(mu, sigma, lo + u * (hi - lo)).unwrap();
        prop_assert!(d.is_valid(1e-12));
        prop_assert!((d.mean(0) - mu).abs() <= 1e-12);
        prop_assert!((d.second_moment(0, 0) - (mu * mu + sigma * sigma)).abs() <= 1e-12);
    }
}
