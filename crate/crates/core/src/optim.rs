//! Derivative-free minimizers used by the likelihood fits.

use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex with restarts.
#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_iter: usize,
    /// Relative spread of simplex values that counts as converged.
    pub ftol: f64,
    pub restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self { max_iter: 2000, ftol: 1e-8, restarts: 2 }
    }
}

impl NelderMead {
    pub fn minimize<F>(&self, f: F, x0: &[f64], steps: &[f64]) -> OptimResult
    where
        F: Fn(&[f64]) -> f64,
    {
        let f = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let mut best = self.run(&f, x0, steps);
        let mut total = best.iterations;
        for _ in 0..self.restarts {
            let shrunk: Vec<f64> = steps.iter().map(|s| s * 0.1).collect();
            let next = self.run(&f, &best.x, &shrunk);
            total += next.iterations;
            let improved = best.value - next.value > self.ftol * (best.value.abs() + 1e-12);
            if next.value <= best.value {
                best = next;
            }
            if !improved {
                break;
            }
        }
        best.iterations = total;
        best
    }

    fn run<F>(&self, f: &F, x0: &[f64], steps: &[f64]) -> OptimResult
    where
        F: Fn(&[f64]) -> f64,
    {
        let n = x0.len();
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        simplex.push(x0.to_vec());
        for i in 0..n {
            let mut p = x0.to_vec();
            p[i] += if steps[i] != 0.0 { steps[i] } else { 0.05 };
            simplex.push(p);
        }
        let mut values: Vec<f64> = simplex.iter().map(|p| f(p)).collect();
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        let mut iterations = 0;
        let mut converged = false;

        while iterations < self.max_iter {
            iterations += 1;
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = (values[n] - values[0]).abs();
            if values[0].is_finite() && spread <= self.ftol * (values[0].abs() + 1e-12) {
                converged = true;
                break;
            }

            let mut centroid = vec![0.0; n];
            for p in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(p) {
                    *c += v / n as f64;
                }
            }
            let along =
                |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect() };

            let reflected = along(-alpha);
            let fr = f(&reflected);
            if fr < values[0] {
                let expanded = along(-gamma);
                let fe = f(&expanded);
                if fe < fr {
                    simplex[n] = expanded;
                    values[n] = fe;
                } else {
                    simplex[n] = reflected;
                    values[n] = fr;
                }
                continue;
            }
            if fr < values[n - 1] {
                simplex[n] = reflected;
                values[n] = fr;
                continue;
            }
            let (contracted, fc) = if fr < values[n] {
                let c = along(-rho);
                let v = f(&c);
                (c, v)
            } else {
                let c = along(rho);
                let v = f(&c);
                (c, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
                continue;
            }
            let best = simplex[0].clone();
            for i in 1..=n {
                for (v, b) in simplex[i].iter_mut().zip(&best) {
                    *v = b + sigma * (*v - b);
                }
                values[i] = f(&simplex[i]);
            }
        }
        let (ib, _) = values.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty simplex");
        OptimResult { x: simplex[ib].clone(), value: values[ib], iterations, converged }
    }
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64, max_iter: usize) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..max_iter {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Bisection root of a function with a sign change on `[a, b]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 || (b - a).abs() <= tol * (1.0 + m.abs()) {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Central-difference Hessian with per-coordinate relative steps.
pub fn numerical_hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let h: Vec<f64> = x.iter().map(|v| 1e-4 * v.abs().max(1e-2)).collect();
    let mut hess = DMatrix::zeros(n, n);
    let f0 = f(x);
    let eval = |di: &[(usize, f64)]| {
        let mut p = x.to_vec();
        for &(i, d) in di {
            p[i] += d;
        }
        f(&p)
    };
    for i in 0..n {
        let fp = eval(&[(i, h[i])]);
        let fm = eval(&[(i, -h[i])]);
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let fpp = eval(&[(i, h[i]), (j, h[j])]);
            let fpm = eval(&[(i, h[i]), (j, -h[j])]);
            let fmp = eval(&[(i, -h[i]), (j, h[j])]);
            let fmm = eval(&[(i, -h[i]), (j, -h[j])]);
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

/// Standard errors from the inverse of a negative-log-likelihood Hessian.
pub fn std_errors_from_hessian(hess: &DMatrix<f64>) -> Option<Vec<f64>> {
    let inv = hess.clone().try_inverse()?;
    let se: Vec<f64> = (0..inv.nrows()).map(|i| inv[(i, i)]).map(f64::sqrt).collect();
    if se.iter().all(|v| v.is_finite()) {
        Some(se)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let nm = NelderMead { max_iter: 5000, ftol: 1e-14, restarts: 3 };
        let r = nm.minimize(f, &[-1.2, 1.0], &[0.5, 0.5]);
        assert!((r.x[0] - 1.0).abs() < 1e-4, "{:?}", r.x);
        assert!((r.x[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn golden_and_bisect() {
        let (x, _) = golden_section(|x| (x - 0.3).powi(2), -1.0, 2.0, 1e-10, 200);
        assert!((x - 0.3).abs() < 1e-8);
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-10).is_none());
    }

    #[test]
    fn hessian_of_quadratic() {
        let f = |x: &[f64]| 3.0 * x[0] * x[0] + 2.0 * x[0] * x[1] + x[1] * x[1];
        let h = numerical_hessian(f, &[0.5, -1.0]);
        assert!((h[(0, 0)] - 6.0).abs() < 1e-5);
        assert!((h[(0, 1)] - 2.0).abs() < 1e-5);
        assert!((h[(1, 1)] - 2.0).abs() < 1e-5);
    }
}
