//! Scalar numerical kernels: adaptive quadrature, monotone root finding and
//! golden-section minimization.

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
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = h * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature of `f` over `[a, b]`.
///
/// Returns `+inf`/`-inf` if the integrand overflows; NaN integrands
/// propagate.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    if b < a {
        return -integrate(f, b, a, rel_tol, abs_tol);
    }
    let (total, err) = gauss_kronrod(&f, a, b);
    if !total.is_finite() {
        return total;
    }
    if err <= abs_tol.max(rel_tol * total.abs()) {
        return total;
    }
    let mut stack = vec![(a, b, total, err, 0u32)];
    let mut acc = 0.0;
    let tol = abs_tol.max(rel_tol * total.abs());
    let width = b - a;
    while let Some((lo, hi, val, e, depth)) = stack.pop() {
        let share = tol * (hi - lo) / width;
        if e <= share || depth >= 48 {
            acc += val;
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gauss_kronrod(&f, lo, mid);
        let (v2, e2) = gauss_kronrod(&f, mid, hi);
        if !(v1 + v2).is_finite() {
            return v1 + v2;
        }
        stack.push((lo, mid, v1, e1, depth + 1));
        stack.push((mid, hi, v2, e2, depth + 1));
    }
    acc
}

/// Solves `f(x) = target` for a strictly increasing `f` with derivative
/// `df`, by safeguarded Newton iteration inside an expanding bracket.
pub fn solve_increasing<F, D>(f: F, df: D, target: f64, x0: f64) -> f64
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    let g = |x: f64| f(x) - target;
    let mut lo = x0;
    let mut hi = x0;
    let mut step = 1.0_f64.max(x0.abs());
    let g0 = g(x0);
    if g0 == 0.0 {
        return x0;
    }
    if g0 < 0.0 {
        loop {
            hi = lo + step;
            if g(hi) >= 0.0 {
                break;
            }
            lo = hi;
            step *= 2.0;
            if !hi.is_finite() {
                return f64::INFINITY;
            }
        }
    } else {
        loop {
            lo = hi - step;
            if g(lo) <= 0.0 {
                break;
            }
            hi = lo;
            step *= 2.0;
            if !lo.is_finite() {
                return f64::NEG_INFINITY;
            }
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = df(x);
        let mut next = if d > 0.0 && d.is_finite() { x - gx / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300)
            || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1e-300)
        {
            return next;
        }
        x = next;
    }
    x
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
/// Returns `(argmin, min)`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, x_tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > x_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    let mut best = (x, fx);
    for (xx, ff) in [(c, fc), (d, fd)] {
        if ff < best.1 {
            best = (xx, ff);
        }
    }
    best
}

/// Central finite-difference derivative with a scale-aware step.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    let h = 1e-5 * x.abs().max(1e-3);
    (f(x + h) - f(x - h)) / (2.0 * h)
}
