//! Randomized structural properties. Each case draws a tree and data from a
//! proptest-chosen seed; oracles here are written independently of the
//! library code paths they check.

use proptest::prelude::*;
use rbsde_core::random::{self, PairKind, Rng64, TreeShape};
use rbsde_core::snell::snell_oracle;
use rbsde_core::{
    doob_decomposition, jordan_split, snell_envelope, solve_reflected, AdaptedProcess, FilteredSpace,
    MartingaleBasis, StoppingTime,
};

const TOL: f64 = 1e-12;

fn tree(seed: u64, depth: usize, branch: usize) -> (FilteredSpace, Rng64) {
    let mut rng = random::rng(seed);
    let space = random::random_tree(&mut rng, TreeShape::new(depth, branch)).expect("tree");
    (space, rng)
}

/// Probability-weighted atom means computed from the outcome lists alone.
fn naive_cond_expect(space: &FilteredSpace, x: &[f64], k: usize) -> Vec<f64> {
    let p = space.probs();
    let mut out = vec![0.0; x.len()];
    for members in space.atoms(k) {
        let mass: f64 = members.iter().map(|&w| p[w]).sum();
        let mean = members.iter().map(|&w| p[w] * x[w]).sum::<f64>() / mass;
        for &w in members {
            out[w] = mean;
        }
    }
    out
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn constant_on_atoms(space: &FilteredSpace, row: &[f64], k: usize) -> bool {
    space
        .atoms(k)
        .iter()
        .all(|members| members.iter().all(|&w| row[w] == row[members[0]]))
}

/// Counts stopping times by testing every map outcome -> {start..N}.
fn brute_force_stopping_times(space: &FilteredSpace, start: usize) -> usize {
    let n = space.n_outcomes();
    let choices = space.steps() + 1 - start;
    let total = choices.pow(n as u32);
    (0..total)
        .filter(|&code| {
            let mut c = code;
            let value: Vec<usize> = (0..n)
                .map(|_| {
                    let v = start + c % choices;
                    c /= choices;
                    v
                })
                .collect();
            StoppingTime::new(space, value).is_ok()
        })
        .count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conditional_expectation_matches_atom_means_and_tower(seed in any::<u64>()) {
        let (s, mut rng) = tree(seed, 4, 3);
        let x = random::terminal(&s, &mut rng, -5.0, 5.0);
        for k in 0..=s.steps() {
            let e = s.cond_expect(&x, k).unwrap();
            prop_assert!(max_gap(&e, &naive_cond_expect(&s, &x, k)) <= TOL);
            if k < s.steps() {
                let inner = s.cond_expect(&x, k + 1).unwrap();
                prop_assert!(max_gap(&s.cond_expect(&inner, k).unwrap(), &e) <= TOL);
            }
        }
    }

    #[test]
    fn projections_are_measurable_one_step_earlier(seed in any::<u64>()) {
        let (s, mut rng) = tree(seed, 4, 3);
        let x = random::adapted(&s, &mut rng, -2.0, 2.0);
        let a = random::adapted_from_zero(&s, &mut rng, 0.0, 1.0);
        let px = s.predictable_projection(&x).unwrap();
        let ap = s.dual_predictable_projection(&a).unwrap();
        for k in 1..=s.steps() {
            prop_assert!(constant_on_atoms(&s, px.step(k), k - 1));
            prop_assert!(constant_on_atoms(&s, ap.step(k), k - 1));
            prop_assert!(max_gap(px.step(k), &naive_cond_expect(&s, x.step(k), k - 1)) <= TOL);
        }
        // the compensator of an increasing process is increasing
        for k in 1..=s.steps() {
            prop_assert!(ap.step(k).iter().zip(ap.step(k - 1)).all(|(b, a)| b >= a));
        }
    }

    #[test]
    fn martingales_project_to_their_previous_value(seed in any::<u64>()) {
        let (s, mut rng) = tree(seed, 4, 3);
        let basis = MartingaleBasis::build(&s);
        let x = random::martingale(&s, &mut rng, 3.0);
        let z = basis.represent(&s, &x).unwrap();
        prop_assert!(basis.reconstruction_error(&s, &x, &z) <= 1e-10);
        let px = s.predictable_projection(&x).unwrap();
        for k in 1..=s.steps() {
            prop_assert!(max_gap(px.step(k), x.step(k - 1)) <= TOL);
        }
        for i in 0..basis.basis_count() {
            let m = basis.martingale(&s, i);
            let pm = s.predictable_projection(&m).unwrap();
            for k in 1..=s.steps() {
                prop_assert!(max_gap(pm.step(k), m.step(k - 1)) <= TOL);
            }
        }
    }

    #[test]
    fn stopping_time_enumeration_matches_brute_force(seed in any::<u64>(), start in 0usize..3) {
        let (s, _) = tree(seed, 3, 2);
        let listed = s.enumerate_stopping_times(start, 1 << 20).unwrap();
        let expected = brute_force_stopping_times(&s, start);
        prop_assert_eq!(listed.len(), expected);
        prop_assert_eq!(s.count_stopping_times(start).unwrap(), expected as u128);
        let unique: std::collections::HashSet<_> = listed.iter().collect();
        prop_assert_eq!(unique.len(), listed.len());
        for tau in &listed {
            prop_assert!(StoppingTime::new(&s, tau.values().to_vec()).is_ok());
            prop_assert!(tau.values().iter().all(|&k| k >= start));
        }
    }

    #[test]
    fn doob_decomposition_reassembles_the_supermartingale(seed in any::<u64>()) {
        let (s, mut rng) = tree(seed, 4, 3);
        let x = random::supermartingale(&s, &mut rng);
        let d = doob_decomposition(&s, &x).unwrap();
        let k = &d.compensator;
        for j in 1..=s.steps() {
            prop_assert!(constant_on_atoms(&s, k.step(j), j - 1));
            prop_assert!(k.step(j).iter().zip(k.step(j - 1)).all(|(b, a)| b >= a));
            let inc = d.martingale.increment(j);
            let drift = naive_cond_expect(&s, &inc, j - 1);
            prop_assert!(drift.iter().all(|v| v.abs() <= 1e-12));
            for w in 0..s.n_outcomes() {
                let rebuilt = x.at(0, w) - k.at(j, w) + d.martingale.at(j, w);
                prop_assert!((rebuilt - x.at(j, w)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn jordan_split_is_minimal(seed in any::<u64>()) {
        let (s, mut rng) = tree(seed, 4, 3);
        let p = random::predictable_from_zero(&s, &mut rng, 0.0, 1.0);
        let q = random::predictable_from_zero(&s, &mut rng, 0.0, 1.0);
        let r = p.zip_with(&q, |a, b| a - b);
        let split = jordan_split(&s, &r).unwrap();
        prop_assert!(split.net().max_abs_diff(&r) <= 1e-12);
        for w in 0..s.n_outcomes() {
            prop_assert!(split.plus.terminal()[w] <= p.terminal()[w] + 1e-12);
            prop_assert!(split.minus.terminal()[w] <= q.terminal()[w] + 1e-12);
        }
    }

    #[test]
    fn basis_is_orthogonal_and_brackets_match_norms(seed in any::<u64>()) {
        let (s, mut rng) = tree(seed, 3, 4);
        let basis = MartingaleBasis::build(&s);
        prop_assert!(basis.orthogonality_defect() <= 1e-10);
        let x = random::martingale(&s, &mut rng, 2.0);
        let z = basis.represent(&s, &x).unwrap();
        for k in 0..s.steps() {
            let sq: Vec<f64> = x.increment(k + 1).iter().map(|v| v * v).collect();
            let cond = naive_cond_expect(&s, &sq, k);
            for a in 0..s.n_atoms(k) {
                let w = s.representative(k, a);
                let norm = basis.m_norm(k, a, z.get(k, a));
                prop_assert!((cond[w] - norm * norm * s.dt(k)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn snell_envelope_is_the_oracle_value_and_smallest_supermajorant(seed in any::<u64>()) {
        let mut rng = random::rng(seed);
        let s = random::random_tree(&mut rng, TreeShape::new(3, 3).with_max_stopping_times(10_000)).unwrap();
        let prob = random::snell_problem(&s, &mut rng);
        let y = snell_envelope(&s, &prob).unwrap();
        for k in 0..=s.steps() {
            let o = snell_oracle(&s, &prob, k, 10_000).unwrap();
            prop_assert!(max_gap(&o.on_outcomes(&s, k), y.step(k)) <= 1e-12);
        }
        // Any supermajorant of the V-compensated problem dominates Y. Build
        // one by lifting a random supermartingale above the reward.
        let t = random::supermartingale(&s, &mut rng);
        let base = t.zip_with(&prob.v, |a, b| a - b);
        let n = s.steps();
        let mut lift = 0.0f64;
        for k in 0..n {
            for w in 0..s.n_outcomes() {
                lift = lift.max(prob.lower.at(k, w) - base.at(k, w));
            }
        }
        for w in 0..s.n_outcomes() {
            lift = lift.max(prob.xi[w] - base.at(n, w));
        }
        let cover: AdaptedProcess = base.map(|_, _, v| v + lift);
        for k in 0..=n {
            for w in 0..s.n_outcomes() {
                prop_assert!(cover.at(k, w) >= y.at(k, w) - 1e-10);
            }
        }
    }

    #[test]
    fn ordered_data_give_ordered_solutions(seed in any::<u64>(), kind in 0usize..3) {
        let (s, mut rng) = tree(seed, 4, 3);
        let basis = MartingaleBasis::build(&s);
        let kind = [PairKind::OneBarrier, PairKind::TwoBarrier, PairKind::SharedLower][kind];
        let (first, second) = random::comparison_pair(&s, &mut rng, kind);
        let y1 = solve_reflected(&s, &basis, &first).unwrap();
        let y2 = solve_reflected(&s, &basis, &second).unwrap();
        for k in 0..=s.steps() {
            for w in 0..s.n_outcomes() {
                prop_assert!(y1.y.at(k, w) <= y2.y.at(k, w) + 1e-10);
            }
        }
        if kind == PairKind::SharedLower {
            for k in 1..=s.steps() {
                let d1 = y1.k().increment(k);
                let d2 = y2.k().increment(k);
                prop_assert!(d2.iter().zip(&d1).all(|(b, a)| *b <= a + 1e-10));
            }
        }
    }

    #[test]
    fn space_json_round_trips(seed in any::<u64>()) {
        let (s, _) = tree(seed, 3, 3);
        let back = FilteredSpace::from_json(&s.to_json()).unwrap();
        prop_assert_eq!(back, s);
    }
}
