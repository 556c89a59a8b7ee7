//! Gauss-Legendre rules and adaptive tensor cubature on boxes.

use std::f64::consts::PI;

/// Nodes and weights of the `p`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(p: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(p >= 1);
    let mut nodes = vec![0.0; p];
    let mut weights = vec![0.0; p];
    for i in 0..p.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_p
        let mut x = (PI * (i as f64 + 0.75) / (p as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (pn, dpn) = legendre(p, x);
            let dx = pn / dpn;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(p, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[p - 1 - i] = x;
        weights[i] = w;
        weights[p - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre(p: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if p == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=p {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = p as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Tensor Gauss rule on an axis-aligned box.
pub struct BoxRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl BoxRule {
    pub fn new(points: usize) -> Self {
        let (nodes, weights) = gauss_legendre(points);
        Self { nodes, weights }
    }

    pub fn integrate(&self, lo: &[f64], hi: &[f64], f: &impl Fn(&[f64]) -> f64) -> f64 {
        let d = lo.len();
        let p = self.nodes.len();
        let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
        let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b + a)).collect();
        let jac: f64 = half.iter().product();
        let mut x = vec![0.0; d];
        let mut idx = vec![0usize; d];
        let mut total = 0.0;
        loop {
            let mut w = 1.0;
            for j in 0..d {
                x[j] = mid[j] + half[j] * self.nodes[idx[j]];
                w *= self.weights[idx[j]];
            }
            total += w * f(&x);
            // odometer increment
            let mut axis = 0;
            loop {
                if axis == d {
                    return total * jac;
                }
                idx[axis] += 1;
                if idx[axis] < p {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }

    /// Adaptive bisection of every axis until the refined estimate changes by
    /// less than `rel_tol` (relative) or `abs_tol`. Returns the estimate and
    /// whether the tolerance was met everywhere.
    pub fn integrate_adaptive(
        &self,
        lo: &[f64],
        hi: &[f64],
        f: &impl Fn(&[f64]) -> f64,
        rel_tol: f64,
        abs_tol: f64,
        max_depth: usize,
    ) -> (f64, bool) {
        let coarse = self.integrate(lo, hi, f);
        self.refine(lo, hi, f, coarse, rel_tol, abs_tol, max_depth)
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &self,
        lo: &[f64],
        hi: &[f64],
        f: &impl Fn(&[f64]) -> f64,
        coarse: f64,
        rel_tol: f64,
        abs_tol: f64,
        depth: usize,
    ) -> (f64, bool) {
        let d = lo.len();
        let children: Vec<(Vec<f64>, Vec<f64>)> = (0..1usize << d)
            .map(|c| {
                let mut clo = lo.to_vec();
                let mut chi = hi.to_vec();
                for j in 0..d {
                    let mid = 0.5 * (lo[j] + hi[j]);
                    if c >> j & 1 == 0 {
                        chi[j] = mid;
                    } else {
                        clo[j] = mid;
                    }
                }
                (clo, chi)
            })
            .collect();
        let parts: Vec<f64> = children.iter().map(|(a, b)| self.integrate(a, b, f)).collect();
        let fine: f64 = parts.iter().sum();
        if (fine - coarse).abs() <= rel_tol * fine.abs() + abs_tol {
            return (fine, true);
        }
        if depth == 0 {
            return (fine, false);
        }
        let child_abs = 0.5 * abs_tol;
        let mut total = 0.0;
        let mut ok = true;
        for ((a, b), part) in children.iter().zip(parts) {
            let (v, good) = self.refine(a, b, f, part, rel_tol, child_abs, depth - 1);
            total += v;
            ok &= good;
        }
        (total, ok)
    }
}

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`. Returns the
/// estimate and the accumulated error estimate; the latter exceeds `tol`
/// only when `max_depth` was hit.
pub fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: usize) -> (f64, f64) {
    let fa = f(a);
    let fb = f(b);
    let c = 0.5 * (a + b);
    let fc = f(c);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fb, fc, whole, tol, max_depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    fc: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let l = 0.5 * (a + c);
    let r = 0.5 * (c + b);
    let fl = f(l);
    let fr = f(r);
    let left = (c - a) / 6.0 * (fa + 4.0 * fl + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fr + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || depth == 0 {
        return (left + right + delta / 15.0, delta.abs() / 15.0);
    }
    let (lv, le) = simpson_step(f, a, c, fa, fc, fl, left, 0.5 * tol, depth - 1);
    let (rv, re) = simpson_step(f, c, b, fc, fb, fr, right, 0.5 * tol, depth - 1);
    (lv + rv, le + re)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(6);
        // exact through degree 11
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((integral - 2.0 / 11.0).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn box_rule_in_two_dimensions() {
        let rule = BoxRule::new(5);
        let v = rule.integrate(&[0.0, 1.0], &[2.0, 3.0], &|x| x[0] * x[1] * x[1]);
        // int_0^2 x dx * int_1^3 y^2 dy = 2 * 26/3
        assert!((v - 52.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_endpoint_kink() {
        let rule = BoxRule::new(6);
        // int_0^1 |x - 1/3| dx = 5/18, times int_0^1 y dy = 1/2
        let f = |x: &[f64]| (x[0] - 1.0 / 3.0).abs() * x[1];
        let (v, ok) = rule.integrate_adaptive(&[0.0, 0.0], &[1.0, 1.0], &f, 0.0, 1e-10, 24);
        assert!(ok);
        assert!((v - 5.0 / 36.0).abs() < 1e-9);
    }

    #[test]
    fn simpson_smooth() {
        let (v, err) = adaptive_simpson(&|x: f64| x.exp(), 0.0, 1.0, 1e-12, 30);
        assert!(err <= 1e-12);
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-11);
    }
}
