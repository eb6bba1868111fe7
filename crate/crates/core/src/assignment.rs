//! Optimal linear assignment.
//!
//! `solve` is the shortest-augmenting-path Hungarian method over a dense
//! row-major cost matrix, O(r^2 c) for r <= c. Rectangular inputs are
//! handled by transposing so that rows never outnumber columns.

/// Minimum-cost assignment. Returns, for each row, its assigned column.
/// When `rows <= cols` every row is assigned; otherwise every column is, and
/// surplus rows get `None`.
pub fn solve(cost: &[f64], rows: usize, cols: usize) -> Vec<Option<usize>> {
    assert_eq!(cost.len(), rows * cols, "cost matrix shape mismatch");
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        solve_wide(|i, j| cost[i * cols + j], rows, cols)
            .into_iter()
            .map(Some)
            .collect()
    } else {
        let col_to_row = solve_wide(|i, j| cost[j * cols + i], cols, rows);
        let mut out = vec![None; rows];
        for (c, r) in col_to_row.into_iter().enumerate() {
            out[r] = Some(c);
        }
        out
    }
}

// Requires n <= m. Potentials u (rows) and v (cols), 1-based with a sentinel column 0.
fn solve_wide(cost: impl Fn(usize, usize) -> f64, n: usize, m: usize) -> Vec<usize> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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

    let mut row_to_col = vec![0usize; n];
    for j in 1..=m {
        if owner[j] != 0 {
            row_to_col[owner[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Result of a gated assignment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Minimum-cost partial assignment in which only pairs with
/// `cost <= cost_limit` may be matched and leaving a row and a column
/// unmatched costs `cost_limit` in total.
///
/// The bipartite graph of admissible pairs is split into connected
/// components and each component is solved exactly on its own, which keeps
/// sparse frame-to-frame association cheap.
pub fn solve_gated(cost: &[f64], rows: usize, cols: usize, cost_limit: f64) -> Assignment {
    assert_eq!(cost.len(), rows * cols, "cost matrix shape mismatch");
    let admissible = |i: usize, j: usize| cost[i * cols + j] <= cost_limit;

    // union-find over rows (0..rows) and cols (rows..rows+cols)
    let mut parent: Vec<usize> = (0..rows + cols).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for i in 0..rows {
        for j in 0..cols {
            if admissible(i, j) {
                let a = find(&mut parent, i);
                let b = find(&mut parent, rows + j);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }

    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut group_of = vec![usize::MAX; rows + cols];
    let mut out = Assignment::default();
    for node in 0..rows + cols {
        let root = find(&mut parent, node);
        if group_of[root] == usize::MAX {
            group_of[root] = groups.len();
            groups.push((Vec::new(), Vec::new()));
        }
        let g = &mut groups[group_of[root]];
        if node < rows {
            g.0.push(node);
        } else {
            g.1.push(node - rows);
        }
    }

    for (grows, gcols) in groups {
        match (grows.len(), gcols.len()) {
            (0, _) => out.unmatched_cols.extend(gcols),
            (_, 0) => out.unmatched_rows.extend(grows),
            (1, 1) => out.matches.push((grows[0], gcols[0])),
            (r, c) => {
                // Augmented square problem: real block, row-dummies, col-dummies, zero block.
                let n = r + c;
                let forbidden = 1e9 + cost_limit.abs() * 1e3;
                let half = cost_limit / 2.0;
                let mut m = vec![0.0; n * n];
                for a in 0..n {
                    for b in 0..n {
                        m[a * n + b] = match (a < r, b < c) {
                            (true, true) => {
                                let x = cost[grows[a] * cols + gcols[b]];
                                if x <= cost_limit {
                                    x
                                } else {
                                    forbidden
                                }
                            }
                            (true, false) => {
                                if b - c == a {
                                    half
                                } else {
                                    forbidden
                                }
                            }
                            (false, true) => {
                                if a - r == b {
                                    half
                                } else {
                                    forbidden
                                }
                            }
                            (false, false) => 0.0,
                        };
                    }
                }
                let sol = solve(&m, n, n);
                let mut col_used = vec![false; c];
                for a in 0..r {
                    match sol[a] {
                        Some(b) if b < c => {
                            out.matches.push((grows[a], gcols[b]));
                            col_used[b] = true;
                        }
                        _ => out.unmatched_rows.push(grows[a]),
                    }
                }
                for b in 0..c {
                    if !col_used[b] {
                        out.unmatched_cols.push(gcols[b]);
                    }
                }
            }
        }
    }
    out.matches.sort_unstable();
    out.unmatched_rows.sort_unstable();
    out.unmatched_cols.sort_unstable();
    out
}
