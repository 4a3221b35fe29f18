//! Adaptive Gauss–Kronrod (7/15) quadrature on finite and semi-infinite ranges.

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
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Stopping rule: the global error estimate must fall below both `abs` and
/// `rel·|I|` (or below the round-off floor of the sum).
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            abs: 1e-8,
            rel: 1e-9,
            max_intervals: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs_value: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Piece {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = resk * 0.5;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let h = half.abs();
    let resasc = resasc * h;
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    let resabs = resabs * h;
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    Piece {
        a,
        b,
        value: resk * half,
        error: err,
        abs_value: resabs,
    }
}

/// Integrates `f` over the union of consecutive intervals `[p_k, p_{k+1}]`.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: &F,
    points: &[f64],
    tol: Tolerance,
) -> Result<Integral> {
    if points.len() < 2 {
        return Ok(Integral {
            value: 0.0,
            error: 0.0,
            intervals: 0,
        });
    }
    let mut heap: BinaryHeap<Piece> = points
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| kronrod15(f, w[0], w[1]))
        .collect();
    loop {
        let value: f64 = heap.iter().map(|p| p.value).sum();
        let error: f64 = heap.iter().map(|p| p.error).sum();
        let abs_sum: f64 = heap.iter().map(|p| p.abs_value).sum();
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite integrand sum (value={value}, error={error})"
            )));
        }
        let target = tol.abs.min(tol.rel * value.abs());
        let floor = 64.0 * f64::EPSILON * abs_sum;
        if error <= target.max(floor) || error == 0.0 {
            return Ok(Integral {
                value,
                error,
                intervals: heap.len(),
            });
        }
        if heap.len() >= tol.max_intervals {
            return Err(Error::Numeric(format!(
                "{} intervals exhausted: estimate {value:e}, error {error:e}, target {target:e}",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("nonempty heap");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval below float resolution, accept its contribution
            return Ok(Integral {
                value,
                error,
                intervals: heap.len() + 1,
            });
        }
        heap.push(kronrod15(f, worst.a, mid));
        heap.push(kronrod15(f, mid, worst.b));
    }
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: Tolerance) -> Result<Integral> {
    integrate_pieces(f, &[a, b], tol)
}

/// Integrates `f` over `[start, ∞)` with breakpoints at the given interior
/// points. The tail beyond the last point `c` is mapped onto `[c, c + 1)` by
/// `t = c + u / (1 - u)` so one error heap refines finite and tail pieces
/// together.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: &F,
    start: f64,
    breakpoints: &[f64],
    tol: Tolerance,
) -> Result<Integral> {
    let mut points = vec![start];
    points.extend(
        breakpoints
            .iter()
            .copied()
            .filter(|&p| p > start && p.is_finite()),
    );
    points.sort_by(f64::total_cmp);
    points.dedup();
    let last = *points.last().expect("at least start");
    let g = |t: f64| {
        if t <= last {
            return f(t);
        }
        let u = t - last;
        if u >= 1.0 {
            return 0.0;
        }
        let one_minus = 1.0 - u;
        f(last + u / one_minus) / (one_minus * one_minus)
    };
    points.push(last + 1.0);
    integrate_pieces(&g, &points, tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = integrate(&|x: f64| 3.0 * x * x, 0.0, 2.0, Tolerance::default()).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
    }

    #[test]
    fn gaussian_over_half_line() {
        let f = |x: f64| (-x * x / 2.0).exp();
        let r = integrate_to_infinity(&f, 0.0, &[1.0, 3.0], Tolerance::default()).unwrap();
        let exact = (std::f64::consts::PI / 2.0).sqrt();
        assert!((r.value - exact).abs() < 1e-9, "{}", r.value);
    }

    #[test]
    fn exponential_tail() {
        let f = |x: f64| (-0.01 * x).exp();
        let r = integrate_to_infinity(&f, 0.0, &[100.0], Tolerance::default()).unwrap();
        assert!((r.value - 100.0).abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn reports_non_convergence() {
        let tol = Tolerance {
            abs: 1e-14,
            rel: 1e-14,
            max_intervals: 3,
        };
        let f = |x: f64| (1.0 / x).sin();
        assert!(integrate(&f, 1e-3, 1.0, tol).is_err());
    }
}
