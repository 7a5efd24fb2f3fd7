//! Special functions and adaptive quadrature.

use std::collections::BinaryHeap;

use crate::error::{Error, Result};

/// Exponentially scaled modified Bessel functions of the second kind,
/// `(e^x K_0(x), e^x K_1(x))`, for `x > 0`.
///
/// Uses the trapezoidal rule on `e^x K_ν(x) = ∫_0^∞ exp(-x(cosh t - 1)) cosh(νt) dt`,
/// which converges geometrically because the integrand is analytic in a strip.
pub fn bessel_k01_scaled(x: f64) -> (f64, f64) {
    assert!(x > 0.0, "bessel_k01_scaled requires x > 0, got {x}");
    // Gaussian width near t = 0 is ~1/sqrt(x); the strip half-width is pi/2.
    let h = (0.1f64).min(0.5 / x.sqrt());
    let t_max = (1.0 + 45.0 / x).acosh();
    let mut k0 = 0.5;
    let mut k1 = 0.5;
    let mut k = 1usize;
    loop {
        let t = k as f64 * h;
        if t > t_max {
            break;
        }
        let c = t.cosh();
        let e = (-x * (c - 1.0)).exp();
        k0 += e;
        k1 += e * c;
        k += 1;
    }
    (k0 * h, k1 * h)
}

/// `K_0(x)` for `x > 0`.
pub fn bessel_k0(x: f64) -> f64 {
    bessel_k01_scaled(x).0 * (-x).exp()
}

/// `K_1(x)` for `x > 0`.
pub fn bessel_k1(x: f64) -> f64 {
    bessel_k01_scaled(x).1 * (-x).exp()
}

/// `x K_1(x) / K_0(x)`, continuous at 0 where it vanishes.
pub fn x_k1_over_k0(x: f64) -> f64 {
    let x = x.abs();
    if x == 0.0 {
        return 0.0;
    }
    if x < 1e-300 {
        // x K_1 -> 1 and K_0 ~ -ln(x/2) - euler_gamma.
        return 1.0 / (-(x / 2.0).ln() - 0.577_215_664_901_532_9);
    }
    let (k0, k1) = bessel_k01_scaled(x);
    x * k1 / k0
}

/// Integration domain, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Finite(f64, f64),
    /// `[a, ∞)`
    Above(f64),
    /// `(-∞, b]`
    Below(f64),
    /// `(-∞, ∞)`, split at 0.
    Real,
}

/// Tolerances and limits for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-14,
            max_intervals: 4000,
        }
    }
}

/// Result of a vector-valued quadrature.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub value: Vec<f64>,
    /// Estimated absolute error (max over components).
    pub error: f64,
    pub evaluations: usize,
}

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

struct Segment {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Gauss–Kronrod 7/15 on `[a, b]` for a vector integrand on the unit-interval
/// variable `t`. `f` writes `dim` values into its buffer.
fn gk15<F>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> (Vec<f64>, f64)
where
    F: FnMut(f64, &mut [f64]),
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];
    let mut absk = vec![0.0; dim];
    let mut hi_vals: Vec<Vec<f64>> = Vec::with_capacity(7);
    let mut lo_vals: Vec<Vec<f64>> = Vec::with_capacity(7);
    let mut center_val = vec![0.0; dim];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        if x == 0.0 {
            buf.fill(0.0);
            f(c, buf);
            center_val.copy_from_slice(buf);
            for k in 0..dim {
                kron[k] += wk * buf[k];
                absk[k] += wk * buf[k].abs();
                gauss[k] += WG[3] * buf[k];
            }
            continue;
        }
        for s in [-1.0, 1.0] {
            buf.fill(0.0);
            f(c + s * h * x, buf);
            for k in 0..dim {
                kron[k] += wk * buf[k];
                absk[k] += wk * buf[k].abs();
                if j % 2 == 1 {
                    gauss[k] += WG[j / 2] * buf[k];
                }
            }
            if s < 0.0 {
                lo_vals.push(buf.to_vec());
            } else {
                hi_vals.push(buf.to_vec());
            }
        }
    }
    // QUADPACK-style error estimate, per component.
    let mut err = 0.0f64;
    for k in 0..dim {
        let mean = 0.5 * kron[k];
        let mut asc = WGK[7] * (center_val[k] - mean).abs();
        for j in 0..7 {
            asc += WGK[j] * ((lo_vals[j][k] - mean).abs() + (hi_vals[j][k] - mean).abs());
        }
        asc *= h.abs();
        kron[k] *= h;
        gauss[k] *= h;
        let raw = (kron[k] - gauss[k]).abs();
        let mut e = if asc > 0.0 && raw > 0.0 {
            asc * (200.0 * raw / asc).powf(1.5).min(1.0)
        } else {
            raw
        };
        let abs_k = absk[k] * h.abs();
        if abs_k > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            e = e.max(50.0 * f64::EPSILON * abs_k);
        }
        err = err.max(e);
    }
    (kron, err)
}

/// Adaptive vector-valued integration of `f` over `domain`.
///
/// `f(y, out)` must write the `dim` integrand components at `y` into `out`.
/// Half-lines are mapped to `(0, 1)` via `y = a + u²`, `u = (1 - t)/t`, which also
/// smooths square-root singularities at the finite end. The integrand is never
/// evaluated at an endpoint.
pub fn integrate<F>(mut f: F, domain: Domain, dim: usize, opts: QuadOptions) -> Result<Quadrature>
where
    F: FnMut(f64, &mut [f64]),
{
    integrate_dyn(&mut f, domain, dim, opts)
}

fn integrate_dyn(
    f: &mut dyn FnMut(f64, &mut [f64]),
    domain: Domain,
    dim: usize,
    opts: QuadOptions,
) -> Result<Quadrature> {
    match domain {
        Domain::Real => {
            let mut total = integrate_dyn(f, Domain::Below(0.0), dim, opts)?;
            let upper = integrate_dyn(f, Domain::Above(0.0), dim, opts)?;
            for (v, u) in total.value.iter_mut().zip(upper.value) {
                *v += u;
            }
            total.error += upper.error;
            total.evaluations += upper.evaluations;
            Ok(total)
        }
        Domain::Finite(a, b) => adaptive(f, a, b, dim, opts),
        Domain::Above(a) => adaptive(
            |t, out| {
                let u = (1.0 - t) / t;
                f(a + u * u, out);
                let jac = 2.0 * u / (t * t);
                out.iter_mut().for_each(|v| *v *= jac);
            },
            0.0,
            1.0,
            dim,
            opts,
        ),
        Domain::Below(b) => adaptive(
            |t, out| {
                let u = (1.0 - t) / t;
                f(b - u * u, out);
                let jac = 2.0 * u / (t * t);
                out.iter_mut().for_each(|v| *v *= jac);
            },
            0.0,
            1.0,
            dim,
            opts,
        ),
    }
}

fn adaptive<F>(mut f: F, a: f64, b: f64, dim: usize, opts: QuadOptions) -> Result<Quadrature>
where
    F: FnMut(f64, &mut [f64]),
{
    let mut buf = vec![0.0; dim];
    let (value, error) = gk15(&mut f, a, b, dim, &mut buf);
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total_err = heap.peek().map(|s| s.error).unwrap_or(0.0);
    loop {
        let mut total = vec![0.0; dim];
        // Σ|segment values| bounds the scale of integrands that cancel.
        let mut l1 = vec![0.0; dim];
        for s in heap.iter() {
            for k in 0..dim {
                total[k] += s.value[k];
                l1[k] += s.value[k].abs();
            }
        }
        let scale = total.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let l1_scale = l1.iter().fold(0.0f64, |m, v| m.max(*v));
        if total_err <= opts.abs_tol.max(opts.rel_tol * scale.max(1e-3 * l1_scale)) {
            return Ok(Quadrature {
                value: total,
                error: total_err,
                evaluations,
            });
        }
        if heap.len() >= opts.max_intervals {
            return Err(Error::Quadrature(format!(
                "{} intervals, error estimate {total_err:.3e} vs scale {scale:.3e}",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval can no longer be split in floating point; accept it.
            return Err(Error::Quadrature(format!(
                "interval [{}, {}] underflowed with error {:.3e}",
                worst.a, worst.b, worst.error
            )));
        }
        let (lv, le) = gk15(&mut f, worst.a, mid, dim, &mut buf);
        let (rv, re) = gk15(&mut f, mid, worst.b, dim, &mut buf);
        evaluations += 30;
        total_err += le + re - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: lv,
            error: le,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: rv,
            error: re,
        });
        // Recompute from scratch occasionally to avoid drift in the running sum.
        if heap.len() % 64 == 0 {
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
}

/// Scalar convenience wrapper around [`integrate`].
pub fn integrate_scalar<F>(mut f: F, domain: Domain, opts: QuadOptions) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let q = integrate(|y, out| out[0] = f(y), domain, 1, opts)?;
    Ok((q.value[0], q.error))
}

/// Bisection for a sign change of `f` on `[lo, hi]`, to `x_tol` in the argument
/// or `f_tol` in the value.
pub fn bisect<F>(mut f: F, mut lo: f64, mut hi: f64, x_tol: f64, f_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Bracket(format!(
            "no sign change on [{lo}, {hi}]: f = {flo:.3e}, {fhi:.3e}"
        )));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= x_tol * (1.0 + mid.abs()) {
            return Ok(mid);
        }
        let fm = f(mid)?;
        if fm.abs() <= f_tol {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
