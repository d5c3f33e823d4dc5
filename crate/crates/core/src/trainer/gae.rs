use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::PpoConfig;

/// Generalized advantage estimates and returns for one episode.
///
/// The reward arrives at the last step only and the value after the final
/// step is taken as 0. With `alg2_literal` set the reward enters every TD
/// error instead.
pub fn compute_gae<S: Scalar>(values: &[S], reward: S, cfg: &PpoConfig) -> Result<(Vec<S>, Vec<S>)> {
    if values.is_empty() {
        return Err(Error::Config("advantage estimation needs at least one value".into()));
    }
    let n = values.len();
    let gamma = S::of(cfg.gamma);
    let decay = gamma * S::of(cfg.lam);
    let mut adv = vec![S::zero(); n];
    let mut next_adv = S::zero();
    for k in (0..n).rev() {
        let next_v = if k + 1 < n { values[k + 1] } else { S::zero() };
        let r = if cfg.alg2_literal || k + 1 == n { reward } else { S::zero() };
        let delta = r + gamma * next_v - values[k];
        next_adv = delta + decay * next_adv;
        adv[k] = next_adv;
    }
    let returns = adv.iter().zip(values).map(|(&a, &v)| a + v).collect();
    Ok((adv, returns))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let cfg = PpoConfig::default();
        let (a, r) = compute_gae(&[0.3f64], 2.0, &cfg).unwrap();
        assert_eq!(a, vec![1.7]);
        assert_eq!(r, vec![2.0]);
    }

    #[test]
    fn three_step_example() {
        let cfg = PpoConfig::default();
        let (a, _) = compute_gae(&[0.2f64, 0.4, 0.6], 1.0, &cfg).unwrap();
        let want = [0.7491, 0.5790, 0.4000];
        for (x, w) in a.iter().zip(want) {
            assert!((x - w).abs() < 5e-5, "{x} vs {w}");
        }
    }

    #[test]
    fn zero_lambda_gives_td_errors() {
        let cfg = PpoConfig {
            lam: 0.0,
            ..PpoConfig::default()
        };
        let v = [0.5f64, -0.25, 1.0, 0.125];
        let (a, _) = compute_gae(&v, 3.0, &cfg).unwrap();
        let g = cfg.gamma;
        let td = [g * v[1] - v[0], g * v[2] - v[1], g * v[3] - v[2], 3.0 - v[3]];
        for (x, w) in a.iter().zip(td) {
            assert!((x - w).abs() < 1e-12);
        }
    }

    #[test]
    fn literal_mode_adds_reward_everywhere() {
        let cfg = PpoConfig {
            alg2_literal: true,
            ..PpoConfig::default()
        };
        let (a, _) = compute_gae(&[0.0f64, 0.0], 1.0, &cfg).unwrap();
        let d = cfg.gamma * cfg.lam;
        assert!((a[1] - 1.0).abs() < 1e-15);
        assert!((a[0] - (1.0 + d)).abs() < 1e-15);
    }

    #[test]
    fn empty_rejected() {
        assert!(compute_gae::<f64>(&[], 1.0, &PpoConfig::default()).is_err());
    }
}
