use super::glr::ScoreMatrix;

/// Minimum-cost perfect assignment on a square matrix by successive shortest
/// augmenting paths with row/column potentials. Returns `col[row]`.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based; index 0 is the virtual source column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col = vec![0usize; n];
    for j in 1..=n {
        col[row_of[j] - 1] = j - 1;
    }
    col
}

/// Permutation maximizing the summed score; `col[row]`.
pub fn max_score_permutation(scores: &ScoreMatrix) -> Vec<usize> {
    let cost: Vec<f64> = scores.values().iter().map(|&f| -f).collect();
    min_cost_assignment(&cost, scores.size())
}

/// One-to-one triangle assignment maximizing the total likelihood ratio.
/// Pairs that land on zero padding are dropped.
pub fn solve_assignment(scores: &ScoreMatrix) -> Vec<(usize, usize)> {
    let (n_p, n_q) = scores.real_dims();
    max_score_permutation(scores)
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < n_p && j < n_q)
        .collect()
}
