//! Exhaustive grid search over the consensus-reduced variables.
//!
//! Imposing consensus leaves a shared block `s ∈ R^n` plus each agent's
//! free coordinates. For fixed `s` the agents decouple, so the minimum over
//! the full product grid equals `min_s Σ_i min_{free_i} f_i(s, free_i)`,
//! which is what gets enumerated. This is used as an independent reference
//! for the flow, not as a solver.

use rayon::prelude::*;

use super::ProblemInstance;
use crate::error::{Error, Result};

/// Largest number of reduced variables (shared plus free) accepted.
pub const MAX_REDUCED_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleOptions {
    /// Grid spacing on every reduced coordinate.
    pub step: f64,
    /// Rounds of local refinement around the best cell, each with a ten
    /// times finer grid.
    pub refine: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            refine: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution {
    /// Stacked point `col[x_1, ..., x_N]`.
    pub x: Vec<f64>,
    pub value: f64,
    /// The shared consensus block.
    pub shared: Vec<f64>,
    /// Grid spacing of the final pass.
    pub resolution: f64,
}

/// Points `lo = p_0 < ... < p_k = hi` with spacing at most `step`.
fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi <= lo {
        return vec![lo];
    }
    let k = (((hi - lo) / step) - 1e-9).ceil().max(1.0) as usize;
    (0..=k)
        .map(|j| lo + (hi - lo) * j as f64 / k as f64)
        .collect()
}

/// Calls `visit` with every point of the product of `axes`.
fn for_each_point(axes: &[Vec<f64>], mut visit: impl FnMut(&[f64])) {
    let mut idx = vec![0usize; axes.len()];
    let mut point: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        visit(&point);
        let mut d = 0;
        loop {
            if d == axes.len() {
                return;
            }
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                point[d] = axes[d][idx[d]];
                break;
            }
            idx[d] = 0;
            point[d] = axes[d][0];
            d += 1;
        }
    }
}

type Bounds = Vec<(f64, f64)>;

struct Best {
    value: f64,
    shared: Vec<f64>,
    frees: Vec<Vec<f64>>,
}

fn search(p: &ProblemInstance, shared: &Bounds, frees: &[Bounds], step: f64) -> Option<Best> {
    let shared_axes: Vec<Vec<f64>> = shared.iter().map(|&(l, h)| grid(l, h, step)).collect();
    let free_axes: Vec<Vec<Vec<f64>>> = frees
        .iter()
        .map(|b| b.iter().map(|&(l, h)| grid(l, h, step)).collect())
        .collect();
    let mut shared_points = Vec::new();
    for_each_point(&shared_axes, |s| shared_points.push(s.to_vec()));

    let n = p.depth();
    let evaluate = |s: &Vec<f64>| -> Option<(f64, Vec<Vec<f64>>)> {
        let mut total = 0.0;
        let mut chosen = Vec::with_capacity(p.agents().len());
        for (i, a) in p.agents().iter().enumerate() {
            let mut xi = s.clone();
            xi.resize(a.dim(), 0.0);
            let mut best: Option<(f64, Vec<f64>)> = None;
            for_each_point(&free_axes[i], |free| {
                xi[n..].copy_from_slice(free);
                if a.constraints
                    .components()
                    .iter()
                    .any(|g| g.eval_unchecked(&xi) > 0.0)
                {
                    return;
                }
                let f = a.objective.eval_unchecked(&xi);
                if best.as_ref().map_or(true, |(bv, _)| f < *bv) {
                    best = Some((f, free.to_vec()));
                }
            });
            let (f, free) = best?;
            total += f;
            chosen.push(free);
        }
        Some((total, chosen))
    };

    shared_points
        .par_iter()
        .enumerate()
        .filter_map(|(j, s)| evaluate(s).map(|(v, frees)| (j, v, frees)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(j, value, frees)| Best {
            value,
            shared: shared_points[j].clone(),
            frees,
        })
}

pub fn brute_force_solve(p: &ProblemInstance, opts: &OracleOptions) -> Result<OracleSolution> {
    if !(opts.step > 0.0 && opts.step.is_finite()) {
        return Err(Error::invalid(format!(
            "grid step must be positive, got {}",
            opts.step
        )));
    }
    let n = p.depth();
    let reduced = n + p.agents().iter().map(|a| a.dim() - n).sum::<usize>();
    if reduced > MAX_REDUCED_DIM {
        return Err(Error::invalid(format!(
            "reduced dimension {reduced} exceeds the brute-force limit {MAX_REDUCED_DIM}"
        )));
    }
    for (i, a) in p.agents().iter().enumerate() {
        if !a.local_set.is_bounded() {
            return Err(Error::invalid(format!(
                "agent {} has an unbounded local set; brute force needs finite boxes",
                i + 1
            )));
        }
    }
    let shared: Bounds = (0..n)
        .map(|k| {
            let lo = p
                .agents()
                .iter()
                .map(|a| a.local_set.bounds(k).0)
                .fold(f64::NEG_INFINITY, f64::max);
            let hi = p
                .agents()
                .iter()
                .map(|a| a.local_set.bounds(k).1)
                .fold(f64::INFINITY, f64::min);
            (lo, hi)
        })
        .collect();
    if let Some(k) = shared.iter().position(|(l, h)| l > h) {
        return Err(Error::invalid(format!(
            "local sets do not overlap on consensus component {}",
            k + 1
        )));
    }
    let frees: Vec<Bounds> = p
        .agents()
        .iter()
        .map(|a| (n..a.dim()).map(|k| a.local_set.bounds(k)).collect())
        .collect();

    let mut step = opts.step;
    let mut best = search(p, &shared, &frees, step)
        .ok_or_else(|| Error::invalid("no feasible grid point; try a finer grid"))?;

    for _ in 0..opts.refine {
        let around = |b: &Bounds, c: &[f64]| -> Bounds {
            b.iter()
                .zip(c)
                .map(|(&(l, h), &v)| ((v - step).max(l), (v + step).min(h)))
                .collect()
        };
        let s_b = around(&shared, &best.shared);
        let f_b: Vec<Bounds> = frees
            .iter()
            .zip(&best.frees)
            .map(|(b, c)| around(b, c))
            .collect();
        step /= 10.0;
        if let Some(fine) = search(p, &s_b, &f_b, step) {
            if fine.value < best.value {
                best = fine;
            }
        }
    }

    let mut x = Vec::with_capacity(p.dims().total());
    for free in &best.frees {
        x.extend_from_slice(&best.shared);
        x.extend_from_slice(free);
    }
    Ok(OracleSolution {
        x,
        value: best.value,
        shared: best.shared,
        resolution: step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_hits_endpoints_and_midpoint() {
        let g = grid(1.0, 2.0, 1e-3);
        assert_eq!(g.len(), 1001);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[500], 1.5);
        assert_eq!(*g.last().unwrap(), 2.0);
        assert_eq!(grid(3.0, 3.0, 0.1), vec![3.0]);
        assert_eq!(grid(0.0, 1.0, 0.3).len(), 5);
    }

    #[test]
    fn product_enumeration() {
        let mut seen = Vec::new();
        for_each_point(&[vec![0.0, 1.0], vec![5.0, 6.0, 7.0]], |p| {
            seen.push(p.to_vec())
        });
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0.0, 5.0]);
        assert_eq!(seen[5], vec![1.0, 7.0]);
        let mut count = 0;
        for_each_point(&[], |_| count += 1);
        assert_eq!(count, 1);
    }
}
