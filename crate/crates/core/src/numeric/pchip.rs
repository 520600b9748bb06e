//! Shape-preserving piecewise cubic Hermite interpolation.

use serde::{Deserialize, Serialize};

/// Monotone cubic interpolant through strictly increasing knots, extended
/// linearly beyond the outer knots using the end slopes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl Pchip {
    /// Build from knots. `xs` must be strictly increasing; `ys` strictly
    /// increasing gives a strictly increasing interpolant.
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 2, "need at least two knots");
        let n = xs.len();
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] <= 0.0 {
                    d[k] = 0.0;
                } else {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            slopes: d,
        }
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0] + self.slopes[0] * (x - self.xs[0]);
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1] + self.slopes[n - 1] * (x - self.xs[n - 1]);
        }
        let k = match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[k] + h10 * h * self.slopes[k] + h01 * self.ys[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

// Three-point end formula, kept positive and within the monotone region.
fn end_slope(h0: f64, h1: f64, del0: f64, del1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * del0 - h0 * del1) / (h0 + h1);
    if d.signum() != del0.signum() || d == 0.0 {
        0.5 * del0
    } else if del0.signum() != del1.signum() && d.abs() > 3.0 * del0.abs() {
        3.0 * del0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn passes_through_knots() {
        let p = Pchip::new(&[0.1, 0.5, 0.9], &[1.0, 2.0, 3.0]);
        assert_eq!(p.eval(0.5), 2.0);
        assert!((p.eval(0.1) - 1.0).abs() < 1e-15);
        assert!((p.eval(0.9) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn linear_extension_outside() {
        let p = Pchip::new(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]);
        assert!((p.eval(-1.0) + 1.0).abs() < 1e-12);
        assert!((p.eval(3.5) - 3.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn strictly_increasing_between_knots(
            incs in proptest::collection::vec(0.01f64..5.0, 3..12),
            gaps in proptest::collection::vec(0.01f64..1.0, 12),
        ) {
            let mut xs = vec![0.0];
            let mut ys = vec![0.0];
            for (i, inc) in incs.iter().enumerate() {
                xs.push(xs[i] + gaps[i]);
                ys.push(ys[i] + inc);
            }
            let p = Pchip::new(&xs, &ys);
            let lo = xs[0] - 0.5;
            let hi = xs[xs.len() - 1] + 0.5;
            let mut prev = p.eval(lo);
            for i in 1..=2000 {
                let x = lo + (hi - lo) * i as f64 / 2000.0;
                let y = p.eval(x);
                prop_assert!(y > prev, "not increasing at {x}: {prev} -> {y}");
                prev = y;
            }
        }
    }
}
