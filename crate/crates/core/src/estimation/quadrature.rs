//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands.
//!
//! Intervals are bisected greedily, always splitting the one with the largest
//! error estimate, until every component meets its tolerance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_41,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the odd Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub initial_intervals: usize,
    pub max_intervals: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 1e-15, initial_intervals: 32, max_intervals: 4000 }
    }
}

struct Segment {
    lo: f64,
    hi: f64,
    value: Vec<f64>,
    error: Vec<f64>,
    priority: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.priority == other.priority
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority.total_cmp(&other.priority)
    }
}

fn gk15<F>(f: &F, lo: f64, hi: f64, dim: usize, buf: &mut [f64]) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(f64, &mut [f64]),
{
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut accumulate = |x: f64, wk: f64, wg: Option<f64>, buf: &mut [f64]| {
        f(x, buf);
        for i in 0..dim {
            kronrod[i] += wk * buf[i];
            if let Some(wg) = wg {
                gauss[i] += wg * buf[i];
            }
        }
    };
    accumulate(center, WGK[7], Some(WG[3]), buf);
    for k in 0..7 {
        let wg = (k % 2 == 1).then(|| WG[k / 2]);
        let dx = half * XGK[k];
        accumulate(center - dx, WGK[k], wg, buf);
        accumulate(center + dx, WGK[k], wg, buf);
    }
    let value: Vec<f64> = kronrod.iter().map(|v| v * half).collect();
    let error = kronrod.iter().zip(&gauss).map(|(k, g)| ((k - g) * half).abs()).collect();
    (value, error)
}

/// Integrates a `dim`-component function over `[lo, hi]`.
///
/// `breakpoints` are added to the initial uniform partition; pass the location
/// of a sharp peak so it cannot fall between the first sample points.
pub fn integrate_vec<F>(
    f: F,
    dim: usize,
    lo: f64,
    hi: f64,
    breakpoints: &[f64],
    opts: QuadratureOptions,
) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]),
{
    let mut cuts: Vec<f64> = (0..=opts.initial_intervals)
        .map(|i| lo + (hi - lo) * i as f64 / opts.initial_intervals as f64)
        .chain(breakpoints.iter().copied().filter(|b| *b > lo && *b < hi))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut buf = vec![0.0; dim];
    let mut heap = BinaryHeap::new();
    let mut total = vec![0.0; dim];
    let mut total_err = vec![0.0; dim];
    let make = |lo: f64, hi: f64, buf: &mut [f64]| {
        let (value, error) = gk15(&f, lo, hi, dim, buf);
        let priority = error.iter().copied().fold(0.0, f64::max);
        Segment { lo, hi, value, error, priority }
    };
    for w in cuts.windows(2) {
        let seg = make(w[0], w[1], &mut buf);
        for i in 0..dim {
            total[i] += seg.value[i];
            total_err[i] += seg.error[i];
        }
        heap.push(seg);
    }

    let done = |total: &[f64], err: &[f64]| {
        total.iter().zip(err).all(|(v, e)| *e <= (opts.rel_tol * v.abs()).max(opts.abs_tol))
    };
    while !done(&total, &total_err) {
        if heap.len() >= opts.max_intervals {
            let worst = total_err.iter().copied().fold(0.0, f64::max);
            return Err(Error::Quadrature { intervals: heap.len(), error_estimate: worst });
        }
        let seg = heap.pop().expect("non-empty partition");
        let mid = 0.5 * (seg.lo + seg.hi);
        let left = make(seg.lo, mid, &mut buf);
        let right = make(mid, seg.hi, &mut buf);
        for i in 0..dim {
            total[i] += left.value[i] + right.value[i] - seg.value[i];
            total_err[i] += left.error[i] + right.error[i] - seg.error[i];
        }
        heap.push(left);
        heap.push(right);
    }
    // Re-sum from the leaves to drop the drift of incremental updates.
    let mut exact = vec![0.0; dim];
    for seg in heap.iter() {
        for i in 0..dim {
            exact[i] += seg.value[i];
        }
    }
    Ok(exact)
}
