//! Dense Hungarian algorithm (Kuhn–Munkres with row/column potentials).

/// Solve the square linear assignment problem, minimizing total cost.
///
/// Returns `assignment` with `assignment[row] = column`. Columns are scanned
/// in increasing index order with strict comparisons, so among equally good
/// augmenting choices the lowest column index wins.
///
/// # Panics
/// If `cost` is not square or contains non-finite values.
pub fn solve_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    assert!(cost.iter().all(|row| row.len() == n), "cost matrix must be square");
    assert!(
        cost.iter().flatten().all(|v| v.is_finite()),
        "cost matrix must be finite"
    );
    if n == 0 {
        return Vec::new();
    }

    // 1-based internal indexing; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[owner[j] - 1] = j - 1;
    }
    assignment
}

/// Maximize total score instead of minimizing cost.
pub fn solve_max(score: &[Vec<f64>]) -> Vec<usize> {
    let top = score.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let cost: Vec<Vec<f64>> = score.iter().map(|row| row.iter().map(|s| top - s).collect()).collect();
    solve_min(&cost)
}

pub fn total(score: &[Vec<f64>], assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(i, &j)| score[i][j]).sum()
}
