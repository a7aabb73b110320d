//! Bracketed scalar root finding.

use crate::scalar::Real;

/// Bisection on a sign-changing bracket until the interval is shorter than `xtol`
/// or the bracket can no longer be split in floating point.
///
/// Returns `None` if `f(a)` and `f(b)` have the same strict sign.
pub fn bisect<T: Real>(mut f: impl FnMut(T) -> T, mut a: T, mut b: T, xtol: T) -> Option<T> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == T::zero() {
        return Some(a);
    }
    if fb == T::zero() {
        return Some(b);
    }
    if fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..400 {
        let m = a + (b - a) / (T::one() + T::one());
        if m == a || m == b || (b - a).abs() <= xtol {
            break;
        }
        let fm = f(m);
        if fm == T::zero() {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(a + (b - a) / (T::one() + T::one()))
}

/// Newton iteration safeguarded by a bracket `[lo, hi]` on which `f` changes sign.
///
/// `fdf` returns `(f(x), f'(x))`. Falls back to bisection whenever the Newton
/// step leaves the bracket or fails to halve the residual. Iterates until the
/// bracket collapses to machine precision, so the result is accurate in `x`
/// even where `f'` vanishes at the root.
pub fn safeguarded_newton<T: Real>(mut fdf: impl FnMut(T) -> (T, T), lo: T, hi: T) -> Option<T> {
    let two = T::one() + T::one();
    let (flo, _) = fdf(lo);
    let (fhi, _) = fdf(hi);
    if flo == T::zero() {
        return Some(lo);
    }
    if fhi == T::zero() {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() {
        return None;
    }
    // orient so that f(a) < 0 < f(b)
    let (mut a, mut b) = if flo < T::zero() { (lo, hi) } else { (hi, lo) };
    let mut x = lo + (hi - lo) / two;
    let (mut fx, mut dfx) = fdf(x);
    let mut dx_old = (hi - lo).abs();
    let mut dx = dx_old;
    let eps = T::epsilon();
    for _ in 0..300 {
        if fx == T::zero() {
            return Some(x);
        }
        if fx < T::zero() {
            a = x;
        } else {
            b = x;
        }
        let newton_ok = dfx != T::zero() && {
            let xn = x - fx / dfx;
            (xn - a) * (xn - b) < T::zero() && (two * fx).abs() <= (dx_old * dfx).abs()
        };
        dx_old = dx;
        let xn = if newton_ok {
            dx = fx / dfx;
            x - dx
        } else {
            dx = (b - a) / two;
            a + dx
        };
        let scale = x.abs().max(T::one());
        if (xn - x).abs() <= two * eps * scale || (b - a).abs() <= two * eps * scale {
            return Some(xn);
        }
        x = xn;
        let r = fdf(x);
        fx = r.0;
        dfx = r.1;
    }
    Some(x)
}

/// Expands `[a, b]` outward from `a` (doubling the step) until `f` changes sign.
/// Gives up after `max_doublings`.
pub fn expand_bracket<T: Real>(mut f: impl FnMut(T) -> T, a: T, step: T, max_doublings: usize) -> Option<(T, T)> {
    let fa = f(a);
    let mut h = step;
    for _ in 0..max_doublings {
        let b = a + h;
        let fb = f(b);
        if fb == T::zero() || fb.signum() != fa.signum() {
            return Some(if b > a { (a, b) } else { (b, a) });
        }
        h = h + h;
    }
    None
}
