//! Tanh-squashed diagonal Gaussian policy head.

use crate::error::{contract, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_7;

/// One reparameterized draw `a = tanh(mean + exp(log_std) * noise)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub noise: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// `log(1 - tanh(u)^2)` without cancellation for large |u|.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

pub fn tanh_gaussian_sample(mean: &[f64], log_std: &[f64], noise: &[f64]) -> Result<SquashedSample> {
    if mean.len() != log_std.len() || mean.len() != noise.len() {
        return Err(contract("mean, log_std and noise must have equal length"));
    }
    let mut action = Vec::with_capacity(mean.len());
    let mut std = Vec::with_capacity(mean.len());
    let mut log_prob = 0.0;
    for ((&mu, &ls), &eps) in mean.iter().zip(log_std).zip(noise) {
        let ls = clamp_log_std(ls);
        let s = ls.exp();
        let u = mu + s * eps;
        log_prob += -0.5 * eps * eps - ls - HALF_LOG_2PI - log_one_minus_tanh_sq(u);
        action.push(u.tanh());
        std.push(s);
    }
    Ok(SquashedSample { action, log_prob, noise: noise.to_vec(), std })
}

impl SquashedSample {
    /// Chain rule from `(dL/d action, dL/d log_prob)` back to
    /// `(dL/d mean, dL/d log_std)` with the noise held fixed.
    pub fn backward(&self, grad_action: &[f64], grad_log_prob: f64) -> (Vec<f64>, Vec<f64>) {
        let mut g_mean = Vec::with_capacity(self.action.len());
        let mut g_ls = Vec::with_capacity(self.action.len());
        for i in 0..self.action.len() {
            let a = self.action[i];
            let du_dls = self.std[i] * self.noise[i];
            // d log_prob / du = 2 tanh(u)
            let dl_du = grad_action[i] * (1.0 - a * a) + grad_log_prob * 2.0 * a;
            g_mean.push(dl_du);
            g_ls.push(dl_du * du_dls - grad_log_prob);
        }
        (g_mean, g_ls)
    }
}

/// Log-density of `tanh(N(mean, std))` at `action`, for tests and audits.
pub fn squashed_log_density(mean: f64, log_std: f64, action: f64) -> f64 {
    let u = action.atanh();
    let s = log_std.exp();
    let z = (u - mean) / s;
    -0.5 * z * z - log_std - HALF_LOG_2PI - (1.0 - action * action).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn zero_noise_zero_mean_is_mode() {
        let ls = [-0.5, 0.3];
        let s = tanh_gaussian_sample(&[0.0, 0.0], &ls, &[0.0, 0.0]).unwrap();
        assert_eq!(s.action, vec![0.0, 0.0]);
        let expected: f64 = ls.iter().map(|l| -HALF_LOG_2PI - l).sum();
        assert!((s.log_prob - expected).abs() < 1e-14);
    }

    #[test]
    fn log_std_is_clamped() {
        let s = tanh_gaussian_sample(&[0.0], &[10.0], &[0.0]).unwrap();
        assert!((s.log_prob - (-HALF_LOG_2PI - LOG_STD_MAX)).abs() < 1e-14);
    }

    /// CDF of the pre-squash Gaussian by composite Simpson quadrature of its pdf.
    fn gaussian_cdf_quadrature(mean: f64, std: f64, x: f64) -> f64 {
        let lo = mean - 12.0 * std;
        if x <= lo {
            return 0.0;
        }
        let n = 20_000;
        let h = (x - lo) / n as f64;
        let pdf = |u: f64| {
            let z = (u - mean) / std;
            (-0.5 * z * z).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
        };
        let mut s = pdf(lo) + pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * pdf(lo + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn log_prob_matches_quadrature_density() {
        let (mean, log_std) = (0.3, -0.4);
        let std = f64::exp(log_std);
        for &noise in &[-1.5, -0.3, 0.0, 0.8, 1.7] {
            let s = tanh_gaussian_sample(&[mean], &[log_std], &[noise]).unwrap();
            let a = s.action[0];
            let h = 1e-5;
            let cdf = |x: f64| gaussian_cdf_quadrature(mean, std, x.atanh());
            let density = (cdf(a + h) - cdf(a - h)) / (2.0 * h);
            assert!((s.log_prob - density.ln()).abs() < 1e-4, "noise {noise}: {} vs {}", s.log_prob, density.ln());
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let (mean, log_std) = (0.2, -0.7);
        let n = 200_000;
        let da = 2.0 / n as f64;
        let total: f64 = (0..n)
            .map(|i| {
                let a = -1.0 + (i as f64 + 0.5) * da;
                let std = f64::exp(log_std);
                let noise = (a.atanh() - mean) / std;
                let s = tanh_gaussian_sample(&[mean], &[log_std], &[noise]).unwrap();
                s.log_prob.exp() * da
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-3, "total mass {total}");
    }

    #[test]
    fn actions_stay_strictly_inside_unit_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1_000_000 {
            let mean: f64 = rng.random_range(-3.0..3.0);
            let ls: f64 = rng.random_range(-3.0..1.0);
            let noise: f64 = rng.sample(StandardNormal);
            let s = tanh_gaussian_sample(&[mean], &[ls], &[noise]).unwrap();
            let a = s.action[0];
            assert!(a.abs() < 1.0 || a.abs() == 1.0 && (mean + ls.exp() * noise).abs() > 18.0);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mean = [0.4, -0.9];
        let ls = [-0.2, 0.5];
        let noise = [0.7, -1.1];
        let ga = [0.3, -1.2];
        let gl = 0.6;
        let f = |m: &[f64], l: &[f64]| {
            let s = tanh_gaussian_sample(m, l, &noise).unwrap();
            s.action.iter().zip(&ga).map(|(a, g)| a * g).sum::<f64>() + gl * s.log_prob
        };
        let s = tanh_gaussian_sample(&mean, &ls, &noise).unwrap();
        let (gm, gls) = s.backward(&ga, gl);
        let h = 1e-6;
        for i in 0..2 {
            let mut mp = mean;
            let mut mm = mean;
            mp[i] += h;
            mm[i] -= h;
            let fd = (f(&mp, &ls) - f(&mm, &ls)) / (2.0 * h);
            assert!((fd - gm[i]).abs() < 1e-6);
            let mut lp = ls;
            let mut lm = ls;
            lp[i] += h;
            lm[i] -= h;
            let fd = (f(&mean, &lp) - f(&mean, &lm)) / (2.0 * h);
            assert!((fd - gls[i]).abs() < 1e-6);
        }
    }
}
