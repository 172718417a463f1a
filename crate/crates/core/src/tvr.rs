//! Exact one-dimensional total-variation denoising.
//!
//! Solves
//!
//! ```text
//! u* = argmin_u  sum_i |u[i+1] - u[i]|  +  (lambda / 2) * sum_i (f[i] - u[i])^2
//! ```
//!
//! where `lambda` weights the *fidelity* term: larger values keep `u*` closer
//! to the input. Many libraries put the weight on the TV term instead; the
//! two are related by `tv_weight = 1 / lambda`.
//!
//! The minimizer is computed directly, without iteration, by a single
//! forward scan that tracks the admissible range of the current segment
//! value together with the dual variable, backtracking to the last feasible
//! knot whenever the range collapses. Cost is linear in practice.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TvError {
    #[error("EmptySignal: signal has no samples")]
    EmptySignal,
    #[error("LengthMismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("NonFiniteInput: sample {0} is not finite")]
    NonFiniteInput(usize),
    #[error("InvalidConfig: lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvrConfig {
    /// Weight on the quadratic data term.
    pub lambda_fidelity: f64,
}

impl Default for TvrConfig {
    fn default() -> Self {
        Self {
            lambda_fidelity: 0.3,
        }
    }
}

impl TvrConfig {
    pub fn new(lambda_fidelity: f64) -> Result<Self, TvError> {
        let cfg = Self { lambda_fidelity };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TvError> {
        if self.lambda_fidelity > 0.0 && self.lambda_fidelity.is_finite() {
            Ok(())
        } else {
            Err(TvError::InvalidLambda(self.lambda_fidelity))
        }
    }
}

/// Sum of absolute first differences.
pub fn tv_norm(x: &[f64]) -> Result<f64, TvError> {
    if x.is_empty() {
        return Err(TvError::EmptySignal);
    }
    Ok(x.windows(2).map(|w| (w[1] - w[0]).abs()).sum())
}

/// `tv_norm(u) + (lambda/2) * ||f - u||^2`.
pub fn tv_objective(f: &[f64], u: &[f64], cfg: &TvrConfig) -> Result<f64, TvError> {
    if f.len() != u.len() {
        return Err(TvError::LengthMismatch(f.len(), u.len()));
    }
    let tv = tv_norm(u)?;
    let fit: f64 = f.iter().zip(u).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(tv + 0.5 * cfg.lambda_fidelity * fit)
}

/// The exact TV-denoised signal.
pub fn denoise_tv(f: &[f64], cfg: &TvrConfig) -> Result<Vec<f64>, TvError> {
    cfg.validate()?;
    if f.is_empty() {
        return Err(TvError::EmptySignal);
    }
    if let Some(i) = f.iter().position(|v| !v.is_finite()) {
        return Err(TvError::NonFiniteInput(i));
    }
    let tv_weight = 1.0 / cfg.lambda_fidelity;
    if let Some(mean) = constant_solution(f, tv_weight) {
        return Ok(vec![mean; f.len()]);
    }
    let mut u = vec![0.0; f.len()];
    taut_string(f, tv_weight, &mut u);
    Ok(u)
}

/// The minimizer is the constant mean exactly when every partial sum of
/// `f - mean` stays within the TV weight. Checking this first keeps heavily
/// regularized solves free of the cancellation the general scan would suffer
/// with very large weights.
fn constant_solution(f: &[f64], tv_weight: f64) -> Option<f64> {
    let n = f.len();
    let mean = f.iter().sum::<f64>() / n as f64;
    let mut partial = 0.0;
    for &v in &f[..n - 1] {
        partial += v - mean;
        if partial.abs() > tv_weight {
            return None;
        }
    }
    Some(mean)
}

/// Direct 1-D TV solver on `0.5 ||f - u||^2 + w TV(u)`.
///
/// `vmin`/`vmax` bound the value of the segment starting at `k0`; `umin`/`umax`
/// are the dual values for those bounds. `kminus`/`kplus` remember where each
/// bound was last tight, which is where a segment is closed on a jump.
fn taut_string(f: &[f64], w: f64, out: &mut [f64]) {
    let n = f.len();
    let (mut k, mut k0, mut kminus, mut kplus) = (0usize, 0usize, 0usize, 0usize);
    let mut umin = w;
    let mut umax = -w;
    let mut vmin = f[0] - w;
    let mut vmax = f[0] + w;

    loop {
        while k == n - 1 {
            if umin < 0.0 {
                // vmin too high: negative jump.
                while k0 <= kminus {
                    out[k0] = vmin;
                    k0 += 1;
                }
                kminus = k0;
                k = k0;
                vmin = f[k];
                umin = w;
                umax = vmin + umin - vmax;
            } else if umax > 0.0 {
                // vmax too low: positive jump.
                while k0 <= kplus {
                    out[k0] = vmax;
                    k0 += 1;
                }
                kplus = k0;
                k = k0;
                vmax = f[k];
                umax = -w;
                umin = vmax + umax - vmin;
            } else {
                vmin += umin / (k - k0 + 1) as f64;
                while k0 <= k {
                    out[k0] = vmin;
                    k0 += 1;
                }
                return;
            }
        }

        umin += f[k + 1] - vmin;
        if umin < -w {
            while k0 <= kminus {
                out[k0] = vmin;
                k0 += 1;
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmin = f[k];
            vmax = vmin + 2.0 * w;
            umin = w;
            umax = -w;
            continue;
        }
        umax += f[k + 1] - vmax;
        if umax > w {
            while k0 <= kplus {
                out[k0] = vmax;
                k0 += 1;
            }
            k = k0;
            kminus = k0;
            kplus = k0;
            vmax = f[k];
            vmin = vmax - 2.0 * w;
            umin = w;
            umax = -w;
            continue;
        }
        k += 1;
        if umin >= w {
            kminus = k;
            vmin += (umin - w) / (kminus - k0 + 1) as f64;
            umin = w;
        }
        if umax <= -w {
            kplus = k;
            vmax += (umax + w) / (kplus - k0 + 1) as f64;
            umax = -w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lam(l: f64) -> TvrConfig {
        TvrConfig::new(l).unwrap()
    }

    #[test]
    fn norm_examples() {
        assert_eq!(tv_norm(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 0.0);
        assert_eq!(tv_norm(&[0.0, 1.0, 0.0]).unwrap(), 2.0);
        assert_eq!(tv_norm(&[0.0, 1.0, 2.0, 3.0]).unwrap(), 3.0);
        assert_eq!(tv_norm(&[7.0]).unwrap(), 0.0);
        assert_eq!(tv_norm(&[]), Err(TvError::EmptySignal));
    }

    #[test]
    fn objective_examples() {
        assert_eq!(tv_objective(&[1.0, 2.0], &[1.0, 2.0], &lam(1.0)).unwrap(), 1.0);
        assert_eq!(tv_objective(&[0.0, 0.0], &[1.0, 1.0], &lam(2.0)).unwrap(), 2.0);
        assert_eq!(tv_objective(&[0.0, 2.0], &[1.0, 1.0], &lam(1.0)).unwrap(), 1.0);
        assert_eq!(
            tv_objective(&[0.0], &[0.0, 1.0], &lam(1.0)),
            Err(TvError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn denoise_examples() {
        for l in [1e-3, 1.0, 1e3] {
            assert_eq!(denoise_tv(&[5.0; 4], &lam(l)).unwrap(), vec![5.0; 4]);
        }
        let u = denoise_tv(&[0.0, 2.0], &lam(1.0)).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-12 && (u[1] - 1.0).abs() < 1e-12);
        let u = denoise_tv(&[0.0, 4.0], &lam(1.0)).unwrap();
        assert!((u[0] - 1.0).abs() < 1e-12 && (u[1] - 3.0).abs() < 1e-12, "{u:?}");
        for v in denoise_tv(&[1.0, 2.0, 3.0, 4.0], &lam(1e-9)).unwrap() {
            assert!((v - 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn single_sample_is_fixed() {
        assert_eq!(denoise_tv(&[3.25], &lam(0.1)).unwrap(), vec![3.25]);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(denoise_tv(&[], &lam(1.0)), Err(TvError::EmptySignal));
        assert_eq!(
            denoise_tv(&[1.0, f64::NAN], &lam(1.0)),
            Err(TvError::NonFiniteInput(1))
        );
        assert!(TvrConfig::new(0.0).is_err());
        assert!(TvrConfig::new(f64::INFINITY).is_err());
    }

    #[test]
    fn step_edge_is_preserved() {
        // A clean step survives: each side shrinks by w / side_length.
        let mut f = vec![0.0; 50];
        f.extend(vec![4.0; 50]);
        let u = denoise_tv(&f, &lam(1.0)).unwrap();
        assert!((u[0] - 0.02).abs() < 1e-12);
        assert!((u[99] - 3.98).abs() < 1e-12);
        assert_eq!(tv_norm(&u).unwrap(), u[99] - u[0]);
    }

    #[test]
    fn huge_lambda_returns_input() {
        let f: Vec<f64> = (0..64).map(|i| ((i * 37) % 128) as f64).collect();
        let u = denoise_tv(&f, &lam(1e9)).unwrap();
        for (a, b) in f.iter().zip(&u) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    fn signal() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 1..40)
    }

    fn lambda() -> impl Strategy<Value = f64> {
        (-3.0f64..3.0).prop_map(|e| 10f64.powf(e))
    }

    proptest! {
        #[test]
        fn mean_max_principle_and_tv(f in signal(), l in lambda()) {
            let u = denoise_tv(&f, &lam(l)).unwrap();
            let n = f.len() as f64;
            let mf = f.iter().sum::<f64>() / n;
            let mu = u.iter().sum::<f64>() / n;
            prop_assert!((mf - mu).abs() <= 1e-9);
            let lo = f.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(u.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            prop_assert!(tv_norm(&u).unwrap() <= tv_norm(&f).unwrap() + 1e-12);
        }

        #[test]
        fn offset_equivariance(f in signal(), l in lambda(), c in -100.0f64..100.0) {
            let u = denoise_tv(&f, &lam(l)).unwrap();
            let shifted: Vec<f64> = f.iter().map(|v| v + c).collect();
            let us = denoise_tv(&shifted, &lam(l)).unwrap();
            for (a, b) in u.iter().zip(&us) {
                prop_assert!((a + c - b).abs() <= 1e-12, "{} vs {}", a + c, b);
            }
        }

        #[test]
        fn perturbation_never_improves(f in signal(), l in lambda(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let cfg = lam(l);
            let u = denoise_tv(&f, &cfg).unwrap();
            let best = tv_objective(&f, &u, &cfg).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let scale = 10f64.powf(rng.random_range(-6.0..0.0));
                let v: Vec<f64> = u.iter().map(|x| x + scale * rng.random_range(-1.0..1.0)).collect();
                prop_assert!(best <= tv_objective(&f, &v, &cfg).unwrap() + 1e-9);
            }
        }
    }
}
