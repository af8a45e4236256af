use super::*;
use proptest::prelude::*;

/// Every non-negative integer grid with the given row and column sums.
fn grids(rows: &[u64], cols: &[u64]) -> Vec<Vec<Vec<u64>>> {
    fn fill(
        d: usize,
        t: usize,
        rows: &mut Vec<u64>,
        cols: &mut Vec<u64>,
        cur: &mut Vec<Vec<u64>>,
        out: &mut Vec<Vec<Vec<u64>>>,
    ) {
        let nt = cols.len();
        if d == rows.len() {
            if cols.iter().all(|&c| c == 0) {
                out.push(cur.clone());
            }
            return;
        }
        if t + 1 == nt {
            let v = rows[d];
            if v > cols[t] {
                return;
            }
            cur[d][t] = v;
            cols[t] -= v;
            let saved = rows[d];
            rows[d] = 0;
            fill(d + 1, 0, rows, cols, cur, out);
            rows[d] = saved;
            cols[t] += v;
            cur[d][t] = 0;
            return;
        }
        for v in 0..=rows[d].min(cols[t]) {
            cur[d][t] = v;
            rows[d] -= v;
            cols[t] -= v;
            fill(d, t + 1, rows, cols, cur, out);
            rows[d] += v;
            cols[t] += v;
        }
        cur[d][t] = 0;
    }
    let mut out = Vec::new();
    let mut cur = vec![vec![0; cols.len()]; rows.len()];
    fill(0, 0, &mut rows.to_vec(), &mut cols.to_vec(), &mut cur, &mut out);
    out
}

/// Best (objective, L1 distance) over all feasible grids.
fn oracle(p: &CalibrationProblem) -> (f64, u64) {
    grids(&p.dest_targets, &p.block_targets)
        .iter()
        .map(|a| {
            let e = p.evaluate(a);
            (e.objective, e.zeta_total)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .unwrap()
}

fn two_by_two(alpha: f64, beta: f64) -> CalibrationProblem {
    CalibrationProblem {
        origin: "o".into(),
        n_o: 2,
        dest_targets: vec![1, 1],
        block_targets: vec![1, 1],
        bin_targets: vec![0, 0, 1, 1],
        initial: vec![vec![1, 0], vec![0, 1]],
        bin_of: vec![vec![0, 2], vec![3, 1]],
        alpha,
        beta,
    }
}

#[test]
fn tie_breaks_toward_initial() {
    let s = solve_origin(&two_by_two(1.0, 1.0)).unwrap();
    assert_eq!(s.counts, vec![vec![1, 0], vec![0, 1]]);
    assert_eq!(s.objective, 4.0);
    assert_eq!(s.eps_total(), 4.0);
    assert_eq!(s.zeta_total(), 0.0);
}

#[test]
fn heavier_alpha_moves_to_anti_diagonal() {
    let s = solve_origin(&two_by_two(2.0, 1.0)).unwrap();
    assert_eq!(s.counts, vec![vec![0, 1], vec![1, 0]]);
    assert_eq!(s.objective, 4.0);
    assert_eq!(s.zeta_total(), 4.0);
}

#[test]
fn zero_beta_matches_bins_exactly_when_possible() {
    let s = solve_origin(&two_by_two(1.0, 0.0)).unwrap();
    assert_eq!(s.eps_total(), 0.0);
}

#[test]
fn slacks_are_consistent() {
    let p = two_by_two(1.0, 1.0);
    let s = solve_origin(&p).unwrap();
    let mut bins = vec![0.0; 4];
    for d in 0..2 {
        for t in 0..2 {
            bins[p.bin_of[d][t]] += s.counts[d][t] as f64;
            let z = s.counts[d][t] as f64 - p.initial[d][t] as f64;
            assert_eq!(s.zeta_plus[d][t] - s.zeta_minus[d][t], z);
        }
    }
    for j in 0..4 {
        assert_eq!(bins[j] + s.eps_minus[j] - s.eps_plus[j], p.bin_targets[j] as f64);
    }
}

#[test]
fn infeasible_initial_still_solves() {
    let mut p = two_by_two(1.0, 1.0);
    p.initial = vec![vec![2, 0], vec![0, 0]];
    let s = solve_origin(&p).unwrap();
    assert!(p.is_feasible(&s.counts));
    assert_eq!((s.objective, s.zeta_total() as u64), oracle(&p));
}

#[test]
fn zero_target_cells_are_fixed_at_zero() {
    let p = CalibrationProblem {
        origin: "o".into(),
        n_o: 3,
        dest_targets: vec![3, 0],
        block_targets: vec![0, 3],
        bin_targets: vec![3, 0],
        initial: vec![vec![1, 1], vec![1, 0]],
        bin_of: vec![vec![0, 0], vec![0, 1]],
        alpha: 1.0,
        beta: 1.0,
    };
    let s = solve_origin(&p).unwrap();
    assert_eq!(s.counts, vec![vec![0, 3], vec![0, 0]]);
    assert_eq!(s.zeta_total(), 4.0);
    assert_eq!(s.objective, 4.0);
}

#[test]
fn rejects_inconsistent_targets() {
    let mut p = two_by_two(1.0, 1.0);
    p.bin_targets = vec![0, 0, 1, 2];
    assert!(matches!(solve_origin(&p), Err(Error::Calibrate(_))));
}

#[test]
fn objective_lattice_step() {
    assert_eq!(objective_step(1.0, 1.0), 1.0);
    assert_eq!(objective_step(2.0, 1.0), 1.0);
    assert_eq!(objective_step(1.5, 0.5), 0.5);
    assert_eq!(objective_step(0.0, 3.0), 3.0);
    assert!((objective_step(0.3, 0.2) - 0.1).abs() < 1e-12);
    assert_eq!(objective_step(std::f64::consts::PI, 1.0), 0.0);
}

fn split(total: u64, parts: usize, weights: &[u64]) -> Vec<u64> {
    let sum: u64 = weights.iter().sum::<u64>().max(1);
    let mut out: Vec<u64> = weights.iter().map(|w| total * w / sum).collect();
    let short = total - out.iter().sum::<u64>();
    for i in 0..short as usize {
        out[i % parts] += 1;
    }
    out
}

fn problem_strategy() -> impl Strategy<Value = CalibrationProblem> {
    (2usize..=3, 2usize..=3, 2usize..=4, 1u64..=6).prop_flat_map(|(nd, nt, nj, n)| {
        (
            prop::collection::vec(0u64..4, nd),
            prop::collection::vec(0u64..4, nt),
            prop::collection::vec(0u64..4, nj),
            prop::collection::vec(prop::collection::vec(0usize..nj, nt), nd),
            prop::collection::vec(prop::collection::vec(0u64..3, nt), nd),
            0u32..4,
            0u32..4,
        )
            .prop_map(move |(dw, tw, jw, bin_of, raw_init, a, b)| {
                let dest_targets = split(n, nd, &dw);
                let block_targets = split(n, nt, &tw);
                let bin_targets = split(n, nj, &jw);
                let initial = raw_init;
                CalibrationProblem {
                    origin: "o".into(),
                    n_o: n,
                    dest_targets,
                    block_targets,
                    bin_targets,
                    initial,
                    bin_of,
                    alpha: a as f64 * 0.5,
                    beta: b as f64 * 0.5,
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_enumeration(p in problem_strategy()) {
        let s = solve_origin(&p).unwrap();
        prop_assert!(p.is_feasible(&s.counts));
        prop_assert!(s.optimal);
        let (best, closest) = oracle(&p);
        prop_assert!((s.objective - best).abs() < 1e-9, "{} vs {}", s.objective, best);
        prop_assert_eq!(s.zeta_total() as u64, closest);
    }

    #[test]
    fn node_limit_returns_a_feasible_grid(p in problem_strategy()) {
        let s = solve_origin_with_limit(&p, 1).unwrap();
        prop_assert!(p.is_feasible(&s.counts));
        let (best, closest) = oracle(&p);
        prop_assert!(s.objective >= best - 1e-9);
        if s.optimal {
            prop_assert!((s.objective - best).abs() < 1e-9);
            prop_assert_eq!(s.zeta_total() as u64, closest);
        }
    }

    #[test]
    fn raising_alpha_never_increases_bin_slack(p in problem_strategy(), extra in 1u32..4) {
        let low = solve_origin(&p).unwrap();
        let mut q = p.clone();
        q.alpha += extra as f64 * 0.5;
        let high = solve_origin(&q).unwrap();
        prop_assert!(high.eps_total() <= low.eps_total());
    }

    #[test]
    fn solving_is_deterministic(p in problem_strategy()) {
        prop_assert_eq!(solve_origin(&p).unwrap(), solve_origin(&p).unwrap());
    }
}
