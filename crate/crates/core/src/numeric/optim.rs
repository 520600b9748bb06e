//! Derivative-free minimizers: bounded Brent (golden section with parabolic
//! steps) for scalar problems and Nelder–Mead with restarts for small
//! vector problems.

#[derive(Debug, Clone, Copy)]
pub struct ScalarMin {
    pub x: f64,
    pub fx: f64,
    pub evaluations: usize,
}

/// Minimize `f` on `[lo, hi]` with Brent's method.
///
/// Non-finite function values are treated as `+inf`, so callers can encode
/// infeasible points that way.
pub fn brent_bounded<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> ScalarMin {
    const GOLDEN: f64 = 0.381_966_011_250_105_1;
    let mut eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let (mut a, mut b) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let mut x = a + GOLDEN * (b - a);
    let mut w = x;
    let mut v = x;
    let mut fx = eval(x);
    let mut fw = fx;
    let mut fv = fx;
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;
    let mut evaluations = 1;

    for _ in 0..500 {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs().max(1.0) * 0.5 + 1e-15;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            // parabolic fit through x, w, v
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            } else {
                q = -q;
            }
            let etemp = e;
            e = d;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if m >= x { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= m { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else if d > 0.0 {
            x + tol1
        } else {
            x - tol1
        };
        let fu = eval(u);
        evaluations += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    ScalarMin { x, fx, evaluations }
}

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evaluations: usize,
    /// Convergence on the spread of function values across the simplex.
    pub f_tol: f64,
    /// Convergence on the simplex diameter.
    pub x_tol: f64,
    /// Number of restarts from the incumbent after convergence.
    pub restarts: usize,
    /// Initial step per coordinate (relative for non-zero coordinates).
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 20_000,
            f_tol: 1e-12,
            x_tol: 1e-9,
            restarts: 3,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VectorMin {
    pub x: Vec<f64>,
    pub fx: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex minimization with dimension-adaptive coefficients
/// and restarts from the best vertex.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> VectorMin {
    let n = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        let fx = eval(x0);
        return VectorMin {
            x: Vec::new(),
            fx,
            evaluations: 1,
            converged: true,
        };
    }
    let nf = n as f64;
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let mut best = x0.to_vec();
    let mut best_f = eval(&best);
    let mut evaluations = 1;
    let mut converged = false;

    for round in 0..=opts.restarts {
        let step_scale = opts.initial_step / (1 + round) as f64;
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut values: Vec<f64> = Vec::with_capacity(n + 1);
        simplex.push(best.clone());
        values.push(best_f);
        for i in 0..n {
            let mut p = best.clone();
            let step = if p[i].abs() > 1e-8 {
                step_scale * p[i].abs()
            } else {
                step_scale.max(2.5e-4)
            };
            p[i] += step;
            values.push(eval(&p));
            evaluations += 1;
            simplex.push(p);
        }
        converged = false;
        while evaluations < opts.max_evaluations {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let f_spread = (values[n] - values[0]).abs();
            let diameter = simplex[1..]
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&simplex[0])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if f_spread <= opts.f_tol * (1.0 + values[0].abs()) && diameter <= opts.x_tol * 1e3
                || diameter <= opts.x_tol
            {
                converged = true;
                break;
            }

            let mut centroid = vec![0.0; n];
            for p in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(p) {
                    *c += v / nf;
                }
            }
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n])
                    .map(|(c, w)| c + t * (c - w))
                    .collect()
            };
            let xr = along(alpha);
            let fr = eval(&xr);
            evaluations += 1;
            if fr < values[0] {
                let xe = along(alpha * beta);
                let fe = eval(&xe);
                evaluations += 1;
                if fe < fr {
                    simplex[n] = xe;
                    values[n] = fe;
                } else {
                    simplex[n] = xr;
                    values[n] = fr;
                }
            } else if fr < values[n - 1] {
                simplex[n] = xr;
                values[n] = fr;
            } else {
                let (xc, fc) = if fr < values[n] {
                    let xc = along(alpha * gamma);
                    let fc = eval(&xc);
                    (xc, fc)
                } else {
                    let xc = along(-gamma);
                    let fc = eval(&xc);
                    (xc, fc)
                };
                evaluations += 1;
                if fc < values[n].min(fr) {
                    simplex[n] = xc;
                    values[n] = fc;
                } else {
                    // shrink toward the best vertex
                    let x_best = simplex[0].clone();
                    for i in 1..=n {
                        for (xi, b) in simplex[i].iter_mut().zip(&x_best) {
                            *xi = b + delta * (*xi - b);
                        }
                        values[i] = eval(&simplex[i]);
                        evaluations += 1;
                    }
                }
            }
        }
        let (imin, fmin) = values
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("simplex is non-empty");
        let improved = fmin < best_f - opts.f_tol * (1.0 + best_f.abs());
        if fmin <= best_f {
            best = simplex[imin].clone();
            best_f = fmin;
        }
        if round > 0 && !improved {
            break;
        }
        if evaluations >= opts.max_evaluations {
            break;
        }
    }
    VectorMin {
        x: best,
        fx: best_f,
        evaluations,
        converged,
    }
}

/// Central-difference gradient, used for reporting convergence diagnostics.
pub fn numeric_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut p = x.to_vec();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        p[i] = x[i] + h;
        let fp = f(&p);
        p[i] = x[i] - h;
        let fm = f(&p);
        p[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_quadratic_minimum() {
        let r = brent_bounded(|x| (x - 1.234).powi(2) + 3.0, -10.0, 10.0, 1e-12);
        // a flat minimum only resolves x to about sqrt(eps)
        assert!((r.x - 1.234).abs() < 1e-7);
        assert!((r.fx - 3.0).abs() < 1e-14);
    }

    #[test]
    fn brent_respects_bounds_and_infinite_regions() {
        let r = brent_bounded(|x| if x < 0.5 { f64::NAN } else { x }, 0.0, 2.0, 1e-10);
        assert!((r.x - 0.5).abs() < 1e-6);
    }

    #[test]
    fn nelder_mead_rosenbrock() {
        let rosen = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = nelder_mead(rosen, &[-1.2, 1.0], &NelderMeadOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-4, "{:?}", r);
        assert!((r.x[1] - 1.0).abs() < 1e-4, "{:?}", r);
    }

    #[test]
    fn nelder_mead_five_dims() {
        let target = [0.3, -1.0, 2.0, 0.0, 5.0];
        let f = |x: &[f64]| {
            x.iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| (i as f64 + 1.0) * (a - b).abs())
                .sum::<f64>()
        };
        let r = nelder_mead(f, &[0.0; 5], &NelderMeadOptions::default());
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-5, "{:?}", r.x);
        }
    }
}
