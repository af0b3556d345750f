use crate::encoder::EncoderConfig;
use crate::linalg::Real;
use crate::special::sigmoid;

/// Shared component shapes for the fixed variant. Stored as unbounded
/// logits and mapped through the same heads as the full encoder, so
/// `σ ≥ σ_floor` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedComponentBank<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub alpha: Vec<T>,
}

/// Gradients for the three bank tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BankGradients<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub alpha: Vec<T>,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl<T: Real> FixedComponentBank<T> {
    /// Locations spread evenly over the band range (identical shapes would
    /// receive identical gradients forever), widths at the sigmoid midpoint
    /// shrunk to a quarter, no skew.
    pub fn init(config: &EncoderConfig) -> Self {
        let k = config.k;
        let mu = (0..k)
            .map(|i| T::of(logit((i as f64 + 0.5) / k as f64)))
            .collect();
        FixedComponentBank {
            mu,
            sigma: vec![T::of(logit(0.1)); k],
            alpha: vec![T::zero(); k],
        }
    }

    pub fn k(&self) -> usize {
        self.mu.len()
    }

    /// `(μ, σ, α)` per component.
    pub fn activated(&self, config: &EncoderConfig) -> Vec<(f64, f64, f64)> {
        let c = config.bands as f64;
        let floor = config.sigma_floor;
        (0..self.k())
            .map(|i| {
                (
                    c * sigmoid(self.mu[i].as_f64()),
                    floor + (c - floor) * sigmoid(self.sigma[i].as_f64()),
                    c * self.alpha[i].as_f64().tanh(),
                )
            })
            .collect()
    }

    /// Chains `∂L/∂(μ, σ, α)` (summed over the batch) through the heads.
    pub fn gradients(&self, config: &EncoderConfig, d_activated: &[(f64, f64, f64)]) -> BankGradients<T> {
        let c = config.bands as f64;
        let floor = config.sigma_floor;
        let sig_d = |z: f64| {
            let s = sigmoid(z);
            s * (1.0 - s)
        };
        let mut g = BankGradients {
            mu: Vec::with_capacity(self.k()),
            sigma: Vec::with_capacity(self.k()),
            alpha: Vec::with_capacity(self.k()),
        };
        for (i, &(dmu, dsigma, dalpha)) in d_activated.iter().enumerate() {
            let t = self.alpha[i].as_f64().tanh();
            g.mu.push(T::of(dmu * c * sig_d(self.mu[i].as_f64())));
            g.sigma.push(T::of(dsigma * (c - floor) * sig_d(self.sigma[i].as_f64())));
            g.alpha.push(T::of(dalpha * c * (1.0 - t * t)));
        }
        g
    }

    pub fn cast<U: Real>(&self) -> FixedComponentBank<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        FixedComponentBank {
            mu: conv(&self.mu),
            sigma: conv(&self.sigma),
            alpha: conv(&self.alpha),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_spreads_locations_and_respects_floor() {
        let cfg = EncoderConfig::new(40, 4);
        let bank = FixedComponentBank::<f64>::init(&cfg);
        let act = bank.activated(&cfg);
        let mus: Vec<f64> = act.iter().map(|a| a.0).collect();
        for (m, want) in mus.iter().zip([5.0, 15.0, 25.0, 35.0]) {
            assert!((m - want).abs() < 1e-9);
        }
        assert!(act.iter().all(|a| a.1 >= cfg.sigma_floor && a.2 == 0.0));
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let cfg = EncoderConfig::new(20, 2);
        let mut bank = FixedComponentBank::<f64>::init(&cfg);
        bank.alpha = vec![0.3, -0.2];
        let up = [(0.7, -0.4, 0.9), (-1.1, 0.25, 0.5)];
        // L = Σ up · activated
        let loss = |b: &FixedComponentBank<f64>| -> f64 {
            b.activated(&cfg)
                .iter()
                .zip(&up)
                .map(|(a, u)| a.0 * u.0 + a.1 * u.1 + a.2 * u.2)
                .sum()
        };
        let g = bank.gradients(&cfg, &up);
        let h = 1e-6;
        for i in 0..2 {
            for (which, analytic) in [(0, g.mu[i]), (1, g.sigma[i]), (2, g.alpha[i])] {
                let mut plus = bank.clone();
                let mut minus = bank.clone();
                let (p, m) = match which {
                    0 => (&mut plus.mu[i], &mut minus.mu[i]),
                    1 => (&mut plus.sigma[i], &mut minus.sigma[i]),
                    _ => (&mut plus.alpha[i], &mut minus.alpha[i]),
                };
                *p += h;
                *m -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - analytic).abs() < 1e-6 * fd.abs().max(1.0));
            }
        }
    }
}
