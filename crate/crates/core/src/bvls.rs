//! Bounded-variable least squares `min |M z - r|` s.t. `lo <= z <= hi`.
//!
//! Active-set iteration in the style of Lawson and Hanson, with free
//! subproblems solved by minimum-norm least squares so rank-deficient columns
//! are tolerated. Small problems are cross-checked by enumerating every
//! bound pattern.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::linalg::lstsq;

/// Problems with at most this many finitely bounded variables are also solved
/// by pattern enumeration.
pub const ENUMERATION_LIMIT: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundedLsq {
    pub z: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    /// Whether the result was confirmed by enumeration.
    pub verified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Free,
    Lower,
    Upper,
}

fn residual_norm(m: &DMatrix<f64>, r: &DVector<f64>, z: &DVector<f64>) -> f64 {
    (m * z - r).norm()
}

/// Minimum-norm solution for the free columns with the others held fixed.
fn solve_free(m: &DMatrix<f64>, r: &DVector<f64>, z: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    let mut rhs = r.clone();
    for j in 0..m.ncols() {
        if !free.contains(&j) && z[j] != 0.0 {
            rhs -= m.column(j) * z[j];
        }
    }
    let sub = m.select_columns(free.iter());
    lstsq(&sub, &rhs)
}

pub fn bounded_least_squares(m: &DMatrix<f64>, r: &DVector<f64>, lo: &[f64], hi: &[f64]) -> BoundedLsq {
    let n = m.ncols();
    assert_eq!(lo.len(), n);
    assert_eq!(hi.len(), n);
    let (mut best, iterations) = active_set(m, r, lo, hi);
    let bounded = (0..n).filter(|&i| lo[i].is_finite() || hi[i].is_finite()).count();
    let mut verified = false;
    if bounded <= ENUMERATION_LIMIT {
        let (z, res) = enumerate(m, r, lo, hi);
        if res < residual_norm(m, r, &best) {
            best = z;
        }
        verified = true;
    }
    BoundedLsq {
        residual: residual_norm(m, r, &best),
        z: best,
        iterations,
        verified,
    }
}

fn active_set(m: &DMatrix<f64>, r: &DVector<f64>, lo: &[f64], hi: &[f64]) -> (DVector<f64>, usize) {
    let n = m.ncols();
    let mut z = DVector::from_fn(n, |i, _| 0.0f64.clamp(lo[i], hi[i]));
    let mut state: Vec<State> = (0..n)
        .map(|i| {
            if z[i] == lo[i] && lo[i].is_finite() {
                State::Lower
            } else if z[i] == hi[i] && hi[i].is_finite() {
                State::Upper
            } else {
                State::Free
            }
        })
        .collect();
    let scale = 1.0 + (m.transpose() * r).amax() + m.amax() * r.amax();
    let grad_tol = 1e-13 * scale;
    let max_iters = 20 * (n + 1) + 50;
    let mut stuck = vec![false; n];
    let mut iters = 0;

    loop {
        // Solve on the current free set, backing off to the first bound hit.
        for _ in 0..=n {
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == State::Free).collect();
            if free.is_empty() {
                break;
            }
            let p = solve_free(m, r, &z, &free);
            let mut alpha = 1.0f64;
            for (k, &i) in free.iter().enumerate() {
                let step = p[k] - z[i];
                if p[k] < lo[i] && step < 0.0 {
                    alpha = alpha.min((lo[i] - z[i]) / step);
                } else if p[k] > hi[i] && step > 0.0 {
                    alpha = alpha.min((hi[i] - z[i]) / step);
                }
            }
            let alpha = alpha.clamp(0.0, 1.0);
            for (k, &i) in free.iter().enumerate() {
                z[i] += alpha * (p[k] - z[i]);
            }
            if alpha >= 1.0 {
                break;
            }
            for &i in &free {
                let span = 1e-14 * (1.0 + z[i].abs());
                if lo[i].is_finite() && z[i] <= lo[i] + span {
                    z[i] = lo[i];
                    state[i] = State::Lower;
                } else if hi[i].is_finite() && z[i] >= hi[i] - span {
                    z[i] = hi[i];
                    state[i] = State::Upper;
                }
            }
        }

        iters += 1;
        if iters >= max_iters {
            break;
        }
        let g = m.transpose() * (m * &z - r);
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..n {
            if stuck[i] || lo[i] == hi[i] {
                continue;
            }
            let violation = match state[i] {
                State::Lower => -g[i],
                State::Upper => g[i],
                State::Free => 0.0,
            };
            if violation > grad_tol && pick.is_none_or(|(_, v)| violation > v) {
                pick = Some((i, violation));
            }
        }
        let Some((i, _)) = pick else { break };
        let previous = state[i];
        state[i] = State::Free;
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == State::Free).collect();
        let p = solve_free(m, r, &z, &free);
        let k = free.iter().position(|&j| j == i).unwrap_or(0);
        let moves_inward = match previous {
            State::Lower => p[k] > z[i],
            State::Upper => p[k] < z[i],
            State::Free => true,
        };
        if moves_inward {
            stuck.iter_mut().for_each(|s| *s = false);
        } else {
            state[i] = previous;
            stuck[i] = true;
        }
    }
    (z, iters)
}

/// Exhaustive search over lower/upper/free patterns of the bounded variables.
fn enumerate(m: &DMatrix<f64>, r: &DVector<f64>, lo: &[f64], hi: &[f64]) -> (DVector<f64>, f64) {
    let n = m.ncols();
    let bounded: Vec<usize> = (0..n).filter(|&i| lo[i].is_finite() || hi[i].is_finite()).collect();
    let patterns = 3usize.pow(bounded.len() as u32);
    let mut best = DVector::from_fn(n, |i, _| 0.0f64.clamp(lo[i], hi[i]));
    let mut best_res = residual_norm(m, r, &best);
    'pattern: for code in 0..patterns {
        let mut z = DVector::zeros(n);
        let mut c = code;
        let mut fixed = vec![false; n];
        for &i in &bounded {
            let choice = c % 3;
            c /= 3;
            match choice {
                0 => {}
                1 if lo[i].is_finite() => {
                    z[i] = lo[i];
                    fixed[i] = true;
                }
                2 if hi[i].is_finite() => {
                    z[i] = hi[i];
                    fixed[i] = true;
                }
                _ => continue 'pattern,
            }
        }
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        if !free.is_empty() {
            let p = solve_free(m, r, &z, &free);
            for (k, &i) in free.iter().enumerate() {
                let slack = 1e-12 * (1.0 + p[k].abs());
                if p[k] < lo[i] - slack || p[k] > hi[i] + slack {
                    continue 'pattern;
                }
                z[i] = p[k].clamp(lo[i], hi[i]);
            }
        }
        let res = residual_norm(m, r, &z);
        if res < best_res {
            best_res = res;
            best = z;
        }
    }
    (best, best_res)
}
