//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite intervals,
//! plus a nested product rule for low-dimensional boxes. Only the exact
//! oracles use this; nothing on the training path does.

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
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
    /// Equal sub-intervals the range is cut into before adapting, so narrow
    /// peaks are not missed by the first rule.
    pub pieces: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_intervals: 2000,
            pieces: 1,
        }
    }
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// `∫_a^b f(x) dx` to within `max(abs_tol, rel_tol |I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let n = opts.pieces.max(1);
    let width = (b - a) / n as f64;
    let mut segs = Vec::with_capacity(n);
    for i in 0..n {
        let lo = a + width * i as f64;
        let hi = if i + 1 == n { b } else { lo + width };
        let (v, e) = kronrod(&mut f, lo, hi);
        segs.push((lo, hi, v, e));
    }
    let mut total: f64 = segs.iter().map(|s| s.2).sum();
    let mut err: f64 = segs.iter().map(|s| s.3).sum();
    loop {
        if !total.is_finite() {
            return Err(Error::Quadrature("integrand produced a non-finite value".into()));
        }
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            return Ok(total);
        }
        if segs.len() >= opts.max_intervals {
            return Err(Error::Quadrature(format!(
                "error estimate {err:.3e} after {} intervals",
                segs.len()
            )));
        }
        let worst = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("at least one segment");
        let (lo, hi, v, e) = segs.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = kronrod(&mut f, lo, mid);
        let (v2, e2) = kronrod(&mut f, mid, hi);
        total += v1 + v2 - v;
        err += e1 + e2 - e;
        segs.push((lo, mid, v1, e1));
        segs.push((mid, hi, v2, e2));
        // Resum occasionally to keep the running totals honest.
        if segs.len() % 64 == 0 {
            total = segs.iter().map(|s| s.2).sum();
            err = segs.iter().map(|s| s.3).sum();
        }
    }
}

/// Iterated integral over a box, innermost dimension last.
pub fn integrate_box<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    bounds: &[(f64, f64)],
    opts: QuadOptions,
) -> Result<f64> {
    let mut point = vec![0.0; bounds.len()];
    nested(&mut f, bounds, 0, &mut point, opts)
}

fn nested<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    bounds: &[(f64, f64)],
    depth: usize,
    point: &mut Vec<f64>,
    opts: QuadOptions,
) -> Result<f64> {
    if depth == bounds.len() {
        return Ok(f(point));
    }
    let (a, b) = bounds[depth];
    let mut failure = None;
    let v = integrate(
        |x| {
            point[depth] = x;
            match nested(f, bounds, depth + 1, point, opts) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        a,
        b,
        opts,
    )?;
    match failure {
        Some(e) => Err(e),
        None => Ok(v),
    }
}
