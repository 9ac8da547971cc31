//! Bounded one-dimensional maximization.
//!
//! A coarse equispaced scan locates the best cell of `[lo, hi]`, Brent's
//! golden-section/parabolic hybrid refines inside that cell, and the lower
//! boundary is compared explicitly so that boundary optima come back as exact
//! values rather than as points a few tolerances inside the interval.

/// Settings for [`maximize_bounded`].
#[derive(Debug, Clone, Copy)]
pub struct ScalarSearch {
    /// Number of equispaced scan points, endpoints included.
    pub scan_points: usize,
    /// Target width of the final Brent bracket.
    pub bracket_width: f64,
    pub max_iter: usize,
}

impl ScalarSearch {
    /// Tolerance rule used by the variance-component searches: the final
    /// bracket must be narrower than `1e-8 * (1 + hi)`.
    pub fn for_upper_bound(hi: f64) -> Self {
        Self {
            scan_points: 41,
            bracket_width: 1e-8 * (1.0 + hi.abs()),
            max_iter: 500,
        }
    }
}

/// Result of a bounded scalar search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptimum {
    pub x: f64,
    pub value: f64,
    pub converged: bool,
    pub evaluations: usize,
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NEG_INFINITY
    }
}

/// Maximize `f` over `[lo, hi]`. `start` is evaluated alongside the scan and
/// seeds Brent when it beats every scan point.
pub fn maximize_bounded<F>(mut f: F, lo: f64, hi: f64, start: f64, opts: ScalarSearch) -> ScalarOptimum
where
    F: FnMut(f64) -> f64,
{
    let mut evals = 0usize;
    let mut eval = |x: f64| {
        evals += 1;
        finite_or_neg_inf(f(x))
    };

    if !(hi > lo) {
        let value = eval(lo);
        return ScalarOptimum { x: lo, value, converged: true, evaluations: evals };
    }

    let n = opts.scan_points.max(3);
    let step = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| eval(x)).collect();

    let mut best = 0;
    for i in 1..n {
        if values[i] > values[best] {
            best = i;
        }
    }

    let start = start.clamp(lo, hi);
    let start_value = eval(start);

    let (a, b, x0, fx0) = if start_value > values[best] {
        // widen by a cell each side: a start that ties a scan point up to
        // rounding says nothing about which neighbouring cell holds the peak
        let cell = (((start - lo) / step).floor() as usize).min(n - 2);
        (grid[cell.saturating_sub(1)], grid[(cell + 2).min(n - 1)], start, start_value)
    } else {
        let a = grid[best.saturating_sub(1)];
        let b = grid[(best + 1).min(n - 1)];
        (a, b, grid[best], values[best])
    };

    let (mut x, mut fx, mut converged) = brent_max(&mut eval, a, b, x0, fx0, opts);

    if values[0] >= fx {
        x = lo;
        fx = values[0];
        converged = true;
    }
    if values[n - 1] > fx {
        x = hi;
        fx = values[n - 1];
    }

    ScalarOptimum { x, value: fx, converged, evaluations: evals }
}

/// Brent's method (maximizing) on `[a, b]` started from `x0` with known `f(x0)`.
fn brent_max<F>(f: &mut F, mut a: f64, mut b: f64, x0: f64, fx0: f64, opts: ScalarSearch) -> (f64, f64, bool)
where
    F: FnMut(f64) -> f64,
{
    const CGOLD: f64 = 0.381_966_011_250_105_1;
    let tol_abs = 0.245 * opts.bracket_width;

    // Work with g = -f so the textbook minimization steps apply unchanged.
    let mut x = x0;
    let mut w = x0;
    let mut v = x0;
    let mut gx = -fx0;
    let mut gw = gx;
    let mut gv = gx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    if x <= a || x >= b {
        x = a + CGOLD * (b - a);
        w = x;
        v = x;
        gx = -f(x);
        gw = gx;
        gv = gx;
    }

    for _ in 0..opts.max_iter {
        let xm = 0.5 * (a + b);
        let tol1 = 4.0 * f64::EPSILON * x.abs() + tol_abs;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return (x, -gx, true);
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (gx - gv);
            let mut q = (x - v) * (gx - gw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if xm >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = CGOLD * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let gu = -f(u);
        if gu <= gx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            gv = gw;
            w = x;
            gw = gx;
            x = u;
            gx = gu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if gu <= gw || w == x {
                v = w;
                gv = gw;
                w = u;
                gw = gu;
            } else if gu <= gv || v == x || v == w {
                v = u;
                gv = gu;
            }
        }
    }
    (x, -gx, false)
}

/// Sharpen an interior maximum `x` by bisecting the derivative `score` on
/// `[x − width, x + width] ∩ [lo, hi]`.
///
/// Value-based searches cannot place a flat maximum closer than about
/// `√ε` relative; a sign change of the derivative can be located to machine
/// precision. Returns `x` unchanged when the interval does not straddle a
/// downward zero crossing.
pub fn refine_by_score<G>(mut score: G, x: f64, lo: f64, hi: f64, width: f64) -> f64
where
    G: FnMut(f64) -> f64,
{
    let (mut a, mut b) = ((x - width).max(lo), (x + width).min(hi));
    if !(a < b) {
        return x;
    }
    let (sa, sb) = (score(a), score(b));
    if !(sa > 0.0 && sb < 0.0) {
        return x;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let s = score(mid);
        if !s.is_finite() {
            return x;
        }
        if s > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}
