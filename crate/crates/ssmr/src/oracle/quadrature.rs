//! Adaptive Gauss-Kronrod (7/15) integration on the real line and nested over a few dimensions.

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
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Kronrod estimate of `f` on `[a, b]` plus an error bound: the QUADPACK-scaled Gauss/Kronrod
/// gap of the first component and the Kronrod integral of the second (an error density carried
/// up from inner integrals).
fn gk15(f: &mut dyn FnMut(f64) -> (f64, f64), a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut fv = [(0.0, 0.0); 15];
    fv[7] = f(c);
    for i in 0..7 {
        let x = h * XGK[i];
        fv[i] = f(c - x);
        fv[14 - i] = f(c + x);
    }
    let wk = |i: usize| WGK[if i <= 7 { i } else { 14 - i }];
    let mut k = 0.0;
    let mut e = 0.0;
    for (i, v) in fv.iter().enumerate() {
        k += wk(i) * v.0;
        e += wk(i) * v.1;
    }
    let mut g = WG[3] * fv[7].0;
    for i in [1usize, 3, 5] {
        g += WG[i / 2] * (fv[i].0 + fv[14 - i].0);
    }
    let mean = 0.5 * k;
    let resasc: f64 = fv.iter().enumerate().map(|(i, v)| wk(i) * (v.0 - mean).abs()).sum::<f64>() * h.abs();
    let mut gap = ((k - g) * h).abs();
    if resasc != 0.0 && gap != 0.0 {
        gap = resasc * (200.0 * gap / resasc).powf(1.5).min(1.0);
    }
    let resabs: f64 = fv.iter().enumerate().map(|(i, v)| wk(i) * v.0.abs()).sum::<f64>() * h.abs();
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        gap = gap.max(50.0 * f64::EPSILON * resabs);
    }
    (k * h, gap + e * h.abs())
}

/// Integrates `f` over `[a, b]`, bisecting the worst interval until the summed error estimate
/// drops below `max(abs_tol, rel_tol * |value|)`. The second output of `f` is an error density
/// that is integrated into the error bound.
pub fn adaptive(
    f: &mut dyn FnMut(f64) -> (f64, f64),
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Integral {
    let (v, e) = gk15(f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let value: f64 = parts.iter().map(|p| p.2).sum();
        let error: f64 = parts.iter().map(|p| p.3).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Integral { value, error, converged: true };
        }
        if parts.len() >= max_intervals {
            return Integral { value, error, converged: false };
        }
        let worst = (0..parts.len()).max_by(|&x, &y| parts[x].3.total_cmp(&parts[y].3)).expect("nonempty");
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
}

/// Maps `t` in (-1, 1) to `center + scale * t / (1 - t^2)`; returns the point and Jacobian.
#[inline]
pub fn map_line(t: f64, center: f64, scale: f64) -> (f64, f64) {
    let d = 1.0 - t * t;
    (center + scale * t / d, scale * (1.0 + t * t) / (d * d))
}

fn mapped(
    f: &mut dyn FnMut(f64) -> (f64, f64),
    center: f64,
    scale: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Integral {
    let mut g = |t: f64| {
        if t <= -1.0 || t >= 1.0 {
            return (0.0, 0.0);
        }
        let (x, jac) = map_line(t, center, scale);
        let (v, e) = f(x);
        if v == 0.0 && e == 0.0 {
            (0.0, 0.0)
        } else {
            (v * jac, e * jac)
        }
    };
    adaptive(&mut g, -1.0, 1.0, abs_tol, rel_tol, 400)
}

/// Integrates `f` over the real line (for `f` concentrated near `center` with width ~`scale`).
pub fn integrate_line(
    f: &mut dyn FnMut(f64) -> f64,
    center: f64,
    scale: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Integral {
    let mut g = |x: f64| (f(x), 0.0);
    mapped(&mut g, center, scale, abs_tol, rel_tol)
}

/// Nested integration of `f` over R^d, innermost dimension last. Inner error estimates are
/// integrated into the outer error bound.
pub fn integrate_nested(
    f: &dyn Fn(&[f64]) -> f64,
    centers: &[f64],
    scales: &[f64],
    rel_tol: f64,
) -> Integral {
    let mut point = vec![0.0; centers.len()];
    let mut converged = true;
    // Absolute floor relative to a unit-peak integrand.
    let abs_tol = 1e-2 * rel_tol * scales.iter().product::<f64>();
    let out = nested_level(f, centers, scales, rel_tol, abs_tol, 0, &mut point, &mut converged);
    Integral { converged: out.converged && converged, ..out }
}

#[allow(clippy::too_many_arguments)]
fn nested_level(
    f: &dyn Fn(&[f64]) -> f64,
    centers: &[f64],
    scales: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    level: usize,
    point: &mut [f64],
    converged: &mut bool,
) -> Integral {
    if level + 1 == centers.len() {
        let mut g = |x: f64| {
            point[level] = x;
            (f(point), 0.0)
        };
        return mapped(&mut g, centers[level], scales[level], abs_tol, rel_tol);
    }
    // Inner errors are integrated over this dimension, so their budget shrinks by its width.
    let inner_abs = abs_tol / (10.0 * scales[level]);
    let mut g = |x: f64| {
        point[level] = x;
        let r = nested_level(f, centers, scales, rel_tol * 0.3, inner_abs, level + 1, point, converged);
        if !r.converged {
            *converged = false;
        }
        (r.value, r.error)
    };
    mapped(&mut g, centers[level], scales[level], abs_tol, rel_tol)
}
