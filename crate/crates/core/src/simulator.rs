//! r-Pareto process simulation with log-Gaussian (Brown–Resnick) profiles
//! for the mean risk functional.
//!
//! The Gaussian field is factorized once relative to a reference site s₀.
//! Each replicate then re-pins the field at an anchor site chosen uniformly
//! at random, V(s) = exp{G(s) − G(s_k) − γ(s, s_k)/2}, and normalizes it to
//! unit mean. For the sum (equivalently mean) risk functional this yields the
//! exact profile law, independently of s₀.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::distance;
use crate::dependence::{matern_variogram, VariogramParams};
use crate::error::{Error, Result};
use crate::margins::LocalMargin;

/// Simulated profiles (m × sites, row-major), their Pareto risks and the
/// auxiliary Pareto risks for importance sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBatch {
    pub site_ids: Vec<String>,
    pub m: usize,
    pub seed: u64,
    pub reference_site: usize,
    pub profiles: Vec<f64>,
    pub risks: Vec<f64>,
    pub aux_risks: Vec<f64>,
}

impl SimBatch {
    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn profile(&self, i: usize) -> &[f64] {
        let n = self.n_sites();
        &self.profiles[i * n..(i + 1) * n]
    }
}

/// Site nearest the centroid of `coords`.
pub fn centroid_site(coords: &[[f64; 2]]) -> usize {
    let n = coords.len() as f64;
    let c = [
        coords.iter().map(|p| p[0]).sum::<f64>() / n,
        coords.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    (0..coords.len())
        .min_by(|&a, &b| distance(coords[a], c).total_cmp(&distance(coords[b], c)))
        .unwrap_or(0)
}

/// Lower-triangular factor of the covariance of G at every site except s₀
/// (where G = 0). Cov(G_i, G_j) = {γ(s_i,s₀) + γ(s_j,s₀) − γ(s_i,s_j)}/2, so
/// that Var{G(s_i) − G(s_j)} = γ(s_i,s_j).
#[derive(Debug, Clone)]
pub struct FieldFactor {
    pub reference: usize,
    /// Variogram matrix between all sites, row-major.
    pub gamma: Vec<f64>,
    /// Factor over the sites other than s₀ (None when γ ≡ 0).
    chol: Option<DMatrix<f64>>,
    others: Vec<usize>,
    pub jitter: f64,
}

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

impl FieldFactor {
    pub fn new(vario: &VariogramParams, coords: &[[f64; 2]], reference: usize) -> Result<Self> {
        vario.validate()?;
        let n = coords.len();
        if n == 0 || reference >= n {
            return Err(Error::InvalidInput("reference site outside the site set".into()));
        }
        let mut gamma = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let h = distance(coords[i], coords[j]);
                if !h.is_finite() {
                    return Err(Error::InvalidInput("non-finite site distance".into()));
                }
                let g = matern_variogram(h, vario);
                gamma[i * n + j] = g;
                gamma[j * n + i] = g;
            }
        }
        let others: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
        let k = others.len();
        let cov = DMatrix::from_fn(k, k, |a, b| {
            let (i, j) = (others[a], others[b]);
            0.5 * (gamma[i * n + reference] + gamma[j * n + reference] - gamma[i * n + j])
        });
        if k == 0 || cov.iter().all(|&c| c.abs() < 1e-300) {
            return Ok(Self {
                reference,
                gamma,
                chol: None,
                others,
                jitter: 0.0,
            });
        }
        if let Some(c) = cov.clone().cholesky() {
            return Ok(Self {
                reference,
                gamma,
                chol: Some(c.l()),
                others,
                jitter: 0.0,
            });
        }
        let mut jitter = JITTER_START;
        while jitter <= JITTER_MAX * (1.0 + 1e-9) {
            let mut m = cov.clone();
            for a in 0..k {
                m[(a, a)] += jitter;
            }
            if let Some(c) = m.cholesky() {
                log::debug!("covariance factorized with jitter {jitter:e}");
                return Ok(Self {
                    reference,
                    gamma,
                    chol: Some(c.l()),
                    others,
                    jitter,
                });
            }
            jitter *= 10.0;
        }
        let min_eigenvalue = cov.symmetric_eigenvalues().min();
        Err(Error::NotPositiveDefinite { min_eigenvalue })
    }

    fn n(&self) -> usize {
        self.others.len() + 1
    }

    /// One Gaussian vector with G(s₀) = 0.
    pub fn sample_field<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n();
        let mut g = vec![0.0; n];
        if let Some(l) = &self.chol {
            let k = self.others.len();
            let z = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let x = l * z;
            for (a, &i) in self.others.iter().enumerate() {
                g[i] = x[a];
            }
        }
        g
    }

    /// Unit-mean profile re-pinned at a uniformly chosen anchor.
    pub fn sample_profile<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.n();
        let g = self.sample_field(rng);
        let k = rng.random_range(0..n);
        let mut v: Vec<f64> = (0..n)
            .map(|i| (g[i] - g[k] - 0.5 * self.gamma[i * n + k]).exp())
            .collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        for x in &mut v {
            *x /= mean;
        }
        v
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn pareto_draw<R: Rng>(rng: &mut R) -> f64 {
    // 1/U with U ∈ (0, 1]
    1.0 / (1.0 - rng.random::<f64>())
}

const AUX_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub m: usize,
    pub l: usize,
    pub seed: u64,
    /// Reference site; defaults to the site nearest the centroid.
    pub reference: Option<usize>,
}

/// Simulate `m` profiles with independent unit-Pareto risks and `l`
/// auxiliary risks. Replicate i draws from its own stream, so the batch is
/// bitwise identical whatever the thread count.
pub fn simulate_profiles(
    vario: &VariogramParams,
    site_ids: &[String],
    coords: &[[f64; 2]],
    opts: &SimOptions,
) -> Result<SimBatch> {
    if opts.m == 0 {
        return Err(Error::InvalidInput("m must be at least 1".into()));
    }
    if site_ids.len() != coords.len() {
        return Err(Error::InvalidInput("site ids and coordinates differ in length".into()));
    }
    let reference = opts.reference.unwrap_or_else(|| centroid_site(coords));
    let factor = FieldFactor::new(vario, coords, reference)?;
    let rows: Vec<(Vec<f64>, f64)> = (0..opts.m)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(opts.seed, i as u64);
            let w = factor.sample_profile(&mut rng);
            let r = pareto_draw(&mut rng);
            (w, r)
        })
        .collect();
    let mut aux_rng = stream_rng(opts.seed, AUX_STREAM);
    let aux_risks = (0..opts.l).map(|_| pareto_draw(&mut aux_rng)).collect();
    let mut profiles = Vec::with_capacity(opts.m * coords.len());
    let mut risks = Vec::with_capacity(opts.m);
    for (w, r) in rows {
        profiles.extend(w);
        risks.push(r);
    }
    Ok(SimBatch {
        site_ids: site_ids.to_vec(),
        m: opts.m,
        seed: opts.seed,
        reference_site: reference,
        profiles,
        risks,
        aux_risks,
    })
}

/// Pareto-scale fields r_i v_r w_i mapped sitewise to °C through the
/// Fréchet back-transform. Row-major m × sites.
pub fn to_data_scale(batch: &SimBatch, margins: &[LocalMargin], v_r: f64) -> Result<Vec<f64>> {
    let n = batch.n_sites();
    if margins.len() != n {
        return Err(Error::InvalidInput("one margin per simulated site required".into()));
    }
    let out: Vec<Vec<f64>> = (0..batch.m)
        .into_par_iter()
        .map(|i| {
            let w = batch.profile(i);
            (0..n)
                .map(|s| margins[s].from_frechet(batch.risks[i] * v_r * w[s]))
                .collect()
        })
        .collect();
    Ok(out.concat())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, step: f64) -> (Vec<String>, Vec<[f64; 2]>) {
        ((0..n).map(|i| format!("s{i}")).collect(), (0..n).map(|i| [i as f64 * step, 0.0]).collect())
    }

    #[test]
    fn zero_sill_gives_flat_profiles() {
        let (ids, coords) = line(5, 30.0);
        let b = simulate_profiles(
            &VariogramParams::new(0.0, 100.0, 1.0),
            &ids,
            &coords,
            &SimOptions {
                m: 50,
                l: 5,
                seed: 1,
                reference: None,
            },
        )
        .unwrap();
        assert!(b.profiles.iter().all(|&w| (w - 1.0).abs() < 1e-15));
    }

    #[test]
    fn profiles_have_unit_risk() {
        let (ids, coords) = line(12, 40.0);
        let b = simulate_profiles(
            &VariogramParams::new(1.5, 200.0, 1.0),
            &ids,
            &coords,
            &SimOptions {
                m: 500,
                l: 10,
                seed: 2,
                reference: None,
            },
        )
        .unwrap();
        for i in 0..b.m {
            let w = b.profile(i);
            let r = w.iter().sum::<f64>() / w.len() as f64;
            assert!((r - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|&x| x > 0.0));
        }
        assert!(b.risks.iter().all(|&r| r >= 1.0));
        assert_eq!(b.aux_risks.len(), 10);
    }

    #[test]
    fn reproducible_from_seed() {
        let (ids, coords) = line(8, 25.0);
        let v = VariogramParams::new(1.0, 100.0, 0.7);
        let o = SimOptions {
            m: 200,
            l: 20,
            seed: 99,
            reference: None,
        };
        let a = simulate_profiles(&v, &ids, &coords, &o).unwrap();
        let b = simulate_profiles(&v, &ids, &coords, &o).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_variance_matches_variogram() {
        let (_, coords) = line(6, 80.0);
        let v = VariogramParams::new(1.5, 200.0, 1.0);
        let f = FieldFactor::new(&v, &coords, 0).unwrap();
        let mut rng = stream_rng(5, 0);
        let n = 40_000;
        let mut s2 = [0.0; 6];
        for _ in 0..n {
            let g = f.sample_field(&mut rng);
            for k in 0..6 {
                s2[k] += g[k] * g[k];
            }
        }
        for (k, &sk) in s2.iter().enumerate().skip(1) {
            let var = sk / n as f64;
            let expect = matern_variogram(80.0 * k as f64, &v);
            // sd of a variance estimate is ≈ √(2/n)·σ²
            assert!((var - expect).abs() < 4.0 * (2.0 / n as f64).sqrt() * expect, "site {k}");
        }
    }

    #[test]
    fn data_scale_single_site_reduces_to_quantile() {
        use crate::body::BodyCdf;
        use crate::tail::GpdParams;
        let body = BodyCdf::new(&[0.1, 0.5, 0.9], &[10.0, 15.0, 20.0]).unwrap();
        let m = LocalMargin::from_parts(body, 20.0, 0.1, GpdParams::new(1.0, -0.1));
        let batch = SimBatch {
            site_ids: vec!["a".into()],
            m: 3,
            seed: 0,
            reference_site: 0,
            profiles: vec![1.0; 3],
            risks: vec![1.5, 3.0, 40.0],
            aux_risks: vec![],
        };
        let x = to_data_scale(&batch, std::slice::from_ref(&m), 5.0).unwrap();
        for (i, &r) in batch.risks.iter().enumerate() {
            assert!((x[i] - m.quantile((-1.0 / (r * 5.0)).exp())).abs() < 1e-9);
        }
        assert!(x[0] < x[1] && x[1] < x[2]);
    }
}
