//! Agreement statistics and the two-sided Mann-Whitney U test.

use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("correlation undefined for zero-variance input")]
    ZeroVariance,
}

fn check_pair(xs: &[f64], ys: &[f64], need: usize) -> Result<(), StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < need {
        return Err(StatsError::TooFew { need, got: xs.len() });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    check_pair(xs, ys, 2)?;
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean absolute error.
pub fn mae(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    check_pair(xs, ys, 1)?;
    Ok(xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MwuMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_value: f64,
    pub method: MwuMethod,
}

/// Largest `|xs| * |ys|` handled by exact enumeration.
pub const EXACT_MAX_PRODUCT: usize = 400;

/// Ranks with ties averaged (midranks), 1-based.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            tie_sizes.push(j - i);
        }
        i = j;
    }
    (ranks, tie_sizes)
}

/// Counts of each U value over all arrangements of `m` x's and `n` y's.
///
/// Built from `c(m, n, u) = c(m-1, n, u-n) + c(m, n-1, u)`: the largest
/// observation is either an x (beating all n y's) or a y.
pub fn exact_u_counts(m: usize, n: usize) -> Vec<u64> {
    // prev[j] holds counts for (i-1, j); cur[j] for (i, j).
    let mut prev: Vec<Vec<u64>> = (0..=n).map(|_| vec![1u64]).collect();
    for i in 1..=m {
        let mut cur: Vec<Vec<u64>> = Vec::with_capacity(n + 1);
        cur.push(vec![1u64]);
        for j in 1..=n {
            let mut c = vec![0u64; i * j + 1];
            for (u, &k) in prev[j].iter().enumerate() {
                c[u + j] += k;
            }
            for (u, &k) in cur[j - 1].iter().enumerate() {
                c[u] += k;
            }
            cur.push(c);
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// Two-sided Mann-Whitney U test.
///
/// Exact null distribution when `|xs| * |ys| <= 400` and there are no ties;
/// otherwise the normal approximation with tie and continuity corrections.
pub fn mann_whitney_u(xs: &[f64], ys: &[f64]) -> Result<MannWhitney, StatsError> {
    if xs.is_empty() || ys.is_empty() {
        return Err(StatsError::TooFew {
            need: 1,
            got: xs.len().min(ys.len()),
        });
    }
    let (nx, ny) = (xs.len(), ys.len());
    let all: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let (ranks, ties) = midranks(&all);
    let rank_sum: f64 = ranks[..nx].iter().sum();
    let u = rank_sum - (nx * (nx + 1)) as f64 / 2.0;

    if ties.is_empty() && nx * ny <= EXACT_MAX_PRODUCT {
        let counts = exact_u_counts(nx, ny);
        let total: f64 = counts.iter().map(|&c| c as f64).sum();
        let k = u.round() as usize;
        let lower: u64 = counts[..=k].iter().sum();
        let upper: u64 = counts[k..].iter().sum();
        let p = 2.0 * lower.min(upper) as f64 / total;
        return Ok(MannWhitney {
            u,
            p_value: p.clamp(0.0, 1.0),
            method: MwuMethod::Exact,
        });
    }

    let (fx, fy) = (nx as f64, ny as f64);
    let n = fx + fy;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = fx * fy / 12.0 * ((n + 1.0) - tie_term);
    let mu = fx * fy / 2.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2)
    };
    Ok(MannWhitney {
        u,
        p_value: p.clamp(0.0, 1.0),
        method: MwuMethod::Normal,
    })
}
