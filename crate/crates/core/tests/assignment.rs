use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vlpipe_core::assignment::solve_assignment;

/// Minimum over all injections of the smaller side into the larger one.
fn brute_force(cost: &[Vec<f64>]) -> f64 {
    let rows = cost.len();
    let cols = cost[0].len();
    let transposed = rows > cols;
    let (n, m) = if transposed { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transposed { cost[j][i] } else { cost[i][j] };
    let mut best = f64::INFINITY;
    let mut used = vec![false; m];
    fn go(i: usize, n: usize, m: usize, acc: f64, used: &mut [bool], best: &mut f64, at: &dyn Fn(usize, usize) -> f64) {
        if i == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                go(i + 1, n, m, acc + at(i, j), used, best, at);
                used[j] = false;
            }
        }
    }
    go(0, n, m, 0.0, &mut used, &mut best, &at);
    best
}

fn random_matrix(rng: &mut ChaCha8Rng, integer: bool) -> Vec<Vec<f64>> {
    let rows = rng.random_range(1..=7);
    let cols = rng.random_range(1..=7);
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| if integer { rng.random_range(0..10) as f64 } else { rng.random_range(0.0..100.0) })
                .collect()
        })
        .collect()
}

fn pair_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[r][c]).sum()
}

#[test]
fn matches_permutation_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for k in 0..600 {
        let cost = random_matrix(&mut rng, k % 3 == 0);
        let got = solve_assignment(&cost).unwrap();
        let want = brute_force(&cost);
        assert_eq!(got.pairs.len(), cost.len().min(cost[0].len()));
        // The optimum as a set of entries is exact; compare sums computed the same way.
        let mut sorted = got.pairs.clone();
        sorted.sort();
        assert!((got.total_cost - want).abs() <= 1e-9 * want.max(1.0), "{cost:?}");
        assert_eq!(got.total_cost, pair_cost(&cost, &sorted));
        let mut rows: Vec<_> = got.pairs.iter().map(|p| p.0).collect();
        let mut cols: Vec<_> = got.pairs.iter().map(|p| p.1).collect();
        rows.dedup();
        cols.sort();
        cols.dedup();
        assert_eq!(rows.len() + got.unmatched_rows.len(), cost.len());
        assert_eq!(cols.len() + got.unmatched_cols.len(), cost[0].len());
    }
}

#[test]
fn integer_costs_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..300 {
        let cost = random_matrix(&mut rng, true);
        assert_eq!(solve_assignment(&cost).unwrap().total_cost, brute_force(&cost));
    }
}

#[test]
fn row_permutation_keeps_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..200 {
        let cost = random_matrix(&mut rng, true);
        let mut perm: Vec<usize> = (0..cost.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<Vec<f64>> = perm.iter().map(|&i| cost[i].clone()).collect();
        assert_eq!(
            solve_assignment(&cost).unwrap().total_cost,
            solve_assignment(&shuffled).unwrap().total_cost
        );
    }
}
