use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::conic::SolveStatus;

fn prob(q: &[Vec<f64>], c: &[f64], kappa: f64) -> QsmbProblem {
    QsmbProblem::new(SymMatrix::from_rows(q).unwrap(), c.to_vec(), kappa).unwrap()
}

fn path_example() -> QsmbProblem {
    prob(&[vec![1.0, -1.0], vec![-1.0, 1.0]], &[1.0, -1.0], 0.0)
}

fn settings() -> SolverSettings {
    SolverSettings::default()
}

#[test]
fn evaluate_examples() {
    let p = prob(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[0.0, 0.0], 5.0);
    assert_eq!(p.evaluate(&[0.3, -7.0]), 5.0);
    assert_eq!(prob(&[vec![1.0]], &[-2.0], 0.0).evaluate(&[1.0]), -1.0);
    assert!((path_example().evaluate(&[0.0, 0.5]) + 0.25).abs() < 1e-15);
}

#[test]
fn constraint_census() {
    let p = path_example();
    for (kind, rows) in [(RelaxKind::TightRlt, 4), (RelaxKind::Basic, 2), (RelaxKind::FullRlt, 14)] {
        let prog = build_relaxation(&p, kind);
        assert_eq!(prog.cones(), &[Cone::Psd(3), Cone::NonNeg(rows)]);
        assert_eq!(prog.num_constraints(), rows + 1);
    }
    let one = prob(&[vec![1.0]], &[0.0], 0.0);
    let prog = build_relaxation(&one, RelaxKind::FullRlt);
    assert_eq!(prog.cones(), &[Cone::Psd(2), Cone::NonNeg(4)]);
}

#[test]
fn lowered_tight_relaxation_solves_directly() {
    let prog = build_relaxation(&prob(&[vec![1.0]], &[-2.0], 0.0), RelaxKind::TightRlt);
    let sol = solve_conic(&prog, &settings());
    assert_eq!(sol.status, SolveStatus::Optimal);
    assert!((sol.primal_objective + 1.0).abs() < 1e-7);
}

#[test]
fn solve_examples() {
    let r = solve_qsmb(&prob(&[vec![1.0]], &[-2.0], 0.0), RelaxKind::TightRlt, &settings()).unwrap();
    assert!((r.value + 1.0).abs() < 1e-7);
    // the objective is quadratic in x near the optimum, so x is only O(sqrt(gap)) accurate
    assert!((r.x[0] - 1.0).abs() < 1e-3);

    let r = solve_qsmb(&prob(&[vec![-1.0]], &[0.0], 0.0), RelaxKind::TightRlt, &settings()).unwrap();
    assert!((r.value + 1.0).abs() < 1e-7);
    assert!((r.big_x.get(0, 0) - r.x[0]).abs() < 1e-6);

    let r = solve_qsmb(&path_example(), RelaxKind::TightRlt, &settings()).unwrap();
    assert!((r.value + 0.25).abs() < 1e-7);
    assert!(r.validation.is_clean());
}

#[test]
fn recovery_examples() {
    let r = solve_qsmb(&prob(&[vec![1.0]], &[-2.0], 0.0), RelaxKind::TightRlt, &settings()).unwrap();
    assert_eq!(r.rank, 1);
    assert_eq!(r.recovered.as_ref().unwrap().method, RecoveryMethod::Rank1);

    let p = prob(&[vec![0.0, -1.0], vec![-1.0, 0.0]], &[0.0, 0.0], 0.0);
    let r = solve_qsmb(&p, RelaxKind::TightRlt, &settings()).unwrap();
    let rec = r.recovered.unwrap();
    assert!((rec.value + 2.0).abs() < 1e-6);
    assert!(rec.x.iter().all(|v| (v - 1.0).abs() < 1e-3));

    let p = path_example();
    let r = solve_qsmb(&p, RelaxKind::TightRlt, &settings()).unwrap();
    let (x, _) = recover_point(&p, &r, RECOVERY_TOL).unwrap();
    assert!((p.evaluate(&x) + 0.25).abs() < 1e-6);
    assert!(x.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
}

#[test]
fn oracle_examples() {
    let (v, x) = oracle_global_min(&prob(&[vec![1.0]], &[-2.0], 0.0)).unwrap();
    assert_eq!((v, x), (-1.0, vec![1.0]));

    let (v, x) = oracle_global_min(&prob(&[vec![-1.0, 0.0], vec![0.0, -1.0]], &[1.0, 1.0], 0.0)).unwrap();
    assert_eq!(v, 0.0);
    assert!(x.iter().all(|&t| t == 0.0 || t == 1.0));

    let (v, _) = oracle_global_min(&path_example()).unwrap();
    assert!((v + 0.25).abs() < 1e-14);

    let big = QsmbProblem::new(SymMatrix::identity(13), vec![0.0; 13], 0.0).unwrap();
    assert!(matches!(oracle_global_min(&big), Err(Error::DimensionTooLarge { n: 13, max: 12 })));
}

#[test]
fn oracle_beats_dense_grid_in_two_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let q = SymMatrix::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        let c: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let p = QsmbProblem::new(q, c, 0.0).unwrap();
        let (v, x) = oracle_global_min(&p).unwrap();
        assert!((p.evaluate(&x) - v).abs() < 1e-14);
        let mut grid = f64::INFINITY;
        for a in 0..=400 {
            for b in 0..=400 {
                grid = grid.min(p.evaluate(&[a as f64 / 400.0, b as f64 / 400.0]));
            }
        }
        assert!(v <= grid + 1e-12);
        assert!(grid - v < 1e-3);
    }
}

#[test]
fn json_round_trip() {
    let p = path_example();
    let s = serde_json::to_string(&p).unwrap();
    assert!(s.contains("\"Q\""));
    assert_eq!(serde_json::from_str::<QsmbProblem>(&s).unwrap(), p);
    let bad = r#"{"Q": [[1,0],[0,1]], "c": [1], "kappa": 0}"#;
    assert!(serde_json::from_str::<QsmbProblem>(bad).is_err());
}

#[test]
fn fixing_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random_submodular(5, &mut rng);
    let (free, _, reduced) = p.fix(&[1, 3], &[0]);
    assert_eq!(free, vec![2, 4]);
    let reduced = reduced.unwrap();
    let y = [0.3, 0.8];
    let x = [0.0, 1.0, 0.3, 1.0, 0.8];
    assert!((reduced.evaluate(&y) - p.evaluate(&x)).abs() < 1e-12);
    let (free, kappa, none) = p.fix(&[0, 1, 2, 3, 4], &[]);
    assert!(free.is_empty() && none.is_none());
    assert!((kappa - p.evaluate(&[1.0; 5])).abs() < 1e-12);
}

fn instance(seed: u64, n: usize) -> QsmbProblem {
    random_submodular(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relaxations_are_ordered(seed in any::<u64>(), n in 1usize..5, flip in any::<bool>()) {
        let mut p = instance(seed, n);
        if flip {
            // also cover non-submodular data
            p = QsmbProblem::new(p.q().scale(-1.0), p.c().to_vec(), 0.0).unwrap();
        }
        let s = settings();
        let basic = solve_relaxation(&p, RelaxKind::Basic, &s).unwrap().value;
        let tight = solve_relaxation(&p, RelaxKind::TightRlt, &s).unwrap().value;
        let full = solve_relaxation(&p, RelaxKind::FullRlt, &s).unwrap().value;
        let scale = 1e-7 * p.scale();
        prop_assert!(full >= tight - scale);
        prop_assert!(tight >= basic - scale);
        let (best, _) = oracle_global_min(&p).unwrap();
        prop_assert!(full <= best + scale);
    }

    #[test]
    fn tight_relaxation_is_exact_when_submodular(seed in any::<u64>(), n in 1usize..7) {
        let p = instance(seed, n);
        let r = solve_qsmb(&p, RelaxKind::TightRlt, &settings()).unwrap();
        let (best, _) = oracle_global_min(&p).unwrap();
        prop_assert!((r.value - best).abs() <= 1e-5 * (1.0 + best.abs()), "{} vs {}", r.value, best);
        if let Some(rec) = &r.recovered {
            prop_assert!(rec.x.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
            prop_assert!(rec.value >= r.value - 1e-6 * (1.0 + r.value.abs()));
        }
    }

    #[test]
    fn basic_relaxation_is_exact_for_nonpositive_linear_term(seed in any::<u64>(), n in 1usize..7) {
        let p = instance(seed, n);
        let c: Vec<f64> = p.c().iter().map(|v| -v.abs()).collect();
        let p = QsmbProblem::new(p.q().clone(), c, 0.0).unwrap();
        let r = solve_relaxation(&p, RelaxKind::Basic, &settings()).unwrap();
        let (best, _) = oracle_global_min(&p).unwrap();
        let scale = p.scale();
        prop_assert!((r.value - best).abs() <= 1e-5 * scale);
        let x: Vec<f64> = r.big_x.diag().iter().map(|v| v.max(0.0).sqrt().min(1.0)).collect();
        prop_assert!((p.evaluate(&x) - best).abs() <= 1e-5 * scale);
    }

    #[test]
    fn nonpositive_diagonal_minimum_is_at_a_vertex(seed in any::<u64>(), n in 1usize..7) {
        let p = instance(seed, n);
        let q = SymMatrix::from_fn(n, |i, j| if i == j { -p.q().get(i, i).abs() } else { p.q().get(i, j) });
        let p = QsmbProblem::new(q, p.c().to_vec(), 0.0).unwrap();
        let (best, x) = oracle_global_min(&p).unwrap();
        let vertex_best = (0u32..1 << n)
            .map(|m| p.evaluate(&(0..n).map(|i| (m >> i & 1) as f64).collect::<Vec<_>>()))
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(best, vertex_best);
        prop_assert!(x.iter().all(|&t| t == 0.0 || t == 1.0));
    }

    #[test]
    fn affine_box_change_preserves_the_minimum(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_submodular(n, &mut rng);
        let l: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..1.0)).collect();
        let u: Vec<f64> = l.iter().map(|a| a + rng.gen_range(0.1..3.0)).collect();
        let (direct, _) = oracle_global_min_box(&p, &l, &u).unwrap();
        let unit = p.to_unit_box(&l, &u).unwrap();
        let (mapped, _) = oracle_global_min(&unit).unwrap();
        prop_assert!((direct - mapped).abs() <= 1e-8 * unit.scale().max(p.scale()));
    }
}
