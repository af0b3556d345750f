use crate::error::{Error, Result};

/// Per-band Huber loss averaged over bands, and its gradient with respect to
/// `pred`.
///
/// `ℓ(e) = e²/2` for `|e| ≤ δ`, else `δ (|e| − δ/2)`; gradient
/// `clamp(e, −δ, δ) / C`.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} bands, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("spectrum"));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("huber delta {delta}")));
    }
    let n = pred.len() as f64;
    let mut total = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let e = p - t;
            total += huber_term(e, delta);
            e.clamp(-delta, delta) / n
        })
        .collect();
    Ok((total / n, grad))
}

#[inline]
pub fn huber_term(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_inputs() {
        let v = [0.1, -0.3, 2.0];
        let (l, g) = huber_loss(&v, &v, 1.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn linear_regime_single_band() {
        let (l, g) = huber_loss(&[2.0], &[0.0], 1.0).unwrap();
        assert_eq!(l, 1.5);
        assert_eq!(g, vec![1.0]);
    }

    #[test]
    fn errors() {
        assert!(huber_loss(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(huber_loss(&[1.0], &[1.0], 0.0).is_err());
        assert!(huber_loss(&[], &[], 1.0).is_err());
    }

    #[test]
    fn matches_scalar_loop_and_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let delta = 0.7;
        for _ in 0..50 {
            let n = rng.gen_range(1..20);
            let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (l, g) = huber_loss(&pred, &target, delta).unwrap();

            let mut want = 0.0;
            for i in 0..n {
                let e: f64 = pred[i] - target[i];
                want += if e.abs() <= delta {
                    0.5 * e * e
                } else {
                    delta * e.abs() - 0.5 * delta * delta
                };
            }
            assert!((l - want / n as f64).abs() < 1e-14);

            let h = 1e-7;
            for i in 0..n {
                let e = (pred[i] - target[i]).abs();
                if (e - delta).abs() < 10.0 * h {
                    continue;
                }
                let mut p = pred.clone();
                p[i] += h;
                let lp = huber_loss(&p, &target, delta).unwrap().0;
                p[i] -= 2.0 * h;
                let lm = huber_loss(&p, &target, delta).unwrap().0;
                assert!(((lp - lm) / (2.0 * h) - g[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn continuous_at_the_kink() {
        let delta = 1.0;
        let below = huber_term(delta - 1e-9, delta);
        let above = huber_term(delta + 1e-9, delta);
        assert!((above - below).abs() < 1e-8);
        let gb = huber_loss(&[delta - 1e-9], &[0.0], delta).unwrap().1[0];
        let ga = huber_loss(&[delta + 1e-9], &[0.0], delta).unwrap().1[0];
        assert!((ga - gb).abs() < 1e-8);
    }
}
