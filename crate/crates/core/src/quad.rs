//! Adaptive Gauss–Kronrod quadrature on finite intervals and on `(0, ∞)`
//! through the substitution `t = e^s`.

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
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_err: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_segments: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            rel_tol: 1e-8,
            abs_tol: 0.0,
            max_segments: 2000,
        }
    }
}

impl QuadOptions {
    pub fn rel(rel_tol: f64) -> Self {
        QuadOptions {
            rel_tol,
            ..Default::default()
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
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
        self.err.total_cmp(&other.err)
    }
}

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let hw = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let dx = hw * XGK[j];
        let s = f(c - dx) + f(c + dx);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    let k = k * hw;
    let g = g * hw;
    (k, (k - g).abs())
}

/// Adaptive G7–K15 quadrature of `f` over `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    opts: QuadOptions,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            abs_err: 0.0,
            evals: 0,
        });
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Usage(format!("finite interval required, got [{a}, {b}]")));
    }
    let (v, e) = kronrod15(&mut f, a, b);
    let mut evals = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, err: e });
    let mut total = v;
    let mut total_err = e;
    loop {
        if !total.is_finite() {
            return Err(Error::numerical(
                "quadrature",
                format!("non-finite integrand on [{a}, {b}]"),
            ));
        }
        let target = opts.abs_tol.max(opts.rel_tol * total.abs());
        if total_err <= target {
            break;
        }
        if heap.len() >= opts.max_segments {
            return Err(Error::numerical(
                "quadrature",
                format!(
                    "no convergence on [{a:.3e}, {b:.3e}] after {} segments: value {total:.6e}, error {total_err:.3e}, target {target:.3e}",
                    heap.len()
                ),
            ));
        }
        let seg = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // Interval can no longer be bisected in floating point.
            heap.push(Segment { err: 0.0, ..seg });
            total_err = heap.iter().map(|s| s.err).sum();
            if total_err <= target {
                break;
            }
            continue;
        }
        let (v1, e1) = kronrod15(&mut f, seg.a, mid);
        let (v2, e2) = kronrod15(&mut f, mid, seg.b);
        evals += 30;
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.err;
        heap.push(Segment { a: seg.a, b: mid, value: v1, err: e1 });
        heap.push(Segment { a: mid, b: seg.b, value: v2, err: e2 });
    }
    // Re-sum to wash out drift from the incremental updates.
    let value = heap.iter().map(|s| s.value).sum();
    let abs_err = heap.iter().map(|s| s.err).sum();
    Ok(QuadResult { value, abs_err, evals })
}

/// Integral of `f` over `(0, ∞)`, computed as `∫ f(e^s) e^s ds` over
/// doubling panels growing outward from `center_log` (the log of the scale
/// where the integrand lives). `breaks_log` lists extra panel edges in the
/// `s` variable, e.g. kinks of the integrand.
pub fn integrate_positive_axis<F: FnMut(f64) -> f64>(
    mut f: F,
    center_log: f64,
    breaks_log: &[f64],
    rel_tol: f64,
) -> Result<QuadResult> {
    const S_LIMIT: f64 = 700.0;
    let mut g = |s: f64| {
        let t = s.exp();
        let v = f(t);
        if v == 0.0 {
            0.0
        } else {
            v * t
        }
    };
    let mut panel = |lo: f64, hi: f64, abs_tol: f64| -> Result<QuadResult> {
        let mut edges = vec![lo];
        edges.extend(breaks_log.iter().copied().filter(|&b| b > lo && b < hi));
        edges.push(hi);
        let mut acc = QuadResult {
            value: 0.0,
            abs_err: 0.0,
            evals: 0,
        };
        for w in edges.windows(2) {
            let r = integrate(
                &mut g,
                w[0],
                w[1],
                QuadOptions {
                    rel_tol,
                    abs_tol,
                    max_segments: 4000,
                },
            )?;
            acc.value += r.value;
            acc.abs_err += r.abs_err;
            acc.evals += r.evals;
        }
        Ok(acc)
    };

    let c = center_log.clamp(-S_LIMIT + 2.0, S_LIMIT - 2.0);
    let left = panel(c - 1.0, c, 0.0)?;
    let right = panel(c, c + 1.0, 0.0)?;
    let mut total = left.value + right.value;
    let mut err = left.abs_err + right.abs_err;
    let mut evals = left.evals + right.evals;

    for dir in [1.0_f64, -1.0] {
        let mut inner = 1.0;
        let mut width = 2.0;
        let mut quiet = 0;
        while quiet < 2 {
            let outer = inner + width;
            let (lo, hi) = if dir > 0.0 {
                (c + inner, (c + outer).min(S_LIMIT))
            } else {
                ((c - outer).max(-S_LIMIT), c - inner)
            };
            if hi <= lo {
                break;
            }
            let r = panel(lo, hi, 1e-3 * rel_tol * total.abs())?;
            total += r.value;
            err += r.abs_err;
            evals += r.evals;
            if r.value.abs() <= 1e-3 * rel_tol * total.abs() {
                quiet += 1;
            } else {
                quiet = 0;
            }
            if (dir > 0.0 && hi >= S_LIMIT) || (dir < 0.0 && lo <= -S_LIMIT) {
                break;
            }
            inner = outer;
            width *= 2.0;
        }
    }
    if !total.is_finite() {
        return Err(Error::numerical(
            "half-line quadrature",
            format!("non-finite value around scale e^{center_log:.2}"),
        ));
    }
    Ok(QuadResult {
        value: total,
        abs_err: err,
        evals,
    })
}
