use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, UrpError};
use crate::seeding::{rng_for, stream};

/// One sinusoidal component of a latent factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub amplitude: f64,
    pub frequency: [f64; 2],
    pub phase: f64,
}

impl Harmonic {
    fn eval(&self, coord: [f64; 2]) -> f64 {
        let arg = self.frequency[0] * coord[0] + self.frequency[1] * coord[1] + self.phase;
        self.amplitude * arg.sin()
    }
}

/// Smooth random field over the unit square with `n_factors` latent outputs,
/// each a `tanh`-squashed sum of harmonics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentField {
    pub seed: u64,
    pub n_harmonics: usize,
    pub n_factors: usize,
    /// `coefficients[k][j]` is harmonic `j` of factor `k`.
    pub coefficients: Vec<Vec<Harmonic>>,
}

impl LatentField {
    /// Draws a field whose pre-squash values have roughly unit variance and
    /// whose wavelengths span 0.5 to 1.5 cycles across the square.
    pub fn generate(seed: u64, n_factors: usize, n_harmonics: usize) -> Self {
        let mut rng = rng_for(seed, &[stream::FIELD]);
        let amp_scale = 1.6 / (n_harmonics.max(1) as f64).sqrt();
        let tau = std::f64::consts::TAU;
        let coefficients = (0..n_factors)
            .map(|_| {
                (0..n_harmonics)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let angle = rng.random::<f64>() * tau;
                        let cycles = 0.5 + rng.random::<f64>();
                        Harmonic {
                            amplitude: z * amp_scale,
                            frequency: [tau * cycles * angle.cos(), tau * cycles * angle.sin()],
                            phase: rng.random::<f64>() * tau,
                        }
                    })
                    .collect()
            })
            .collect();
        LatentField {
            seed,
            n_harmonics,
            n_factors,
            coefficients,
        }
    }

    /// Builds a field from explicit coefficients (one harmonic list per factor).
    pub fn from_coefficients(seed: u64, coefficients: Vec<Vec<Harmonic>>) -> Result<Self> {
        let n_harmonics = coefficients.first().map_or(0, Vec::len);
        if coefficients.is_empty() || coefficients.iter().any(|c| c.len() != n_harmonics) {
            return Err(UrpError::Config(
                "latent field needs at least one factor and equal harmonic counts".into(),
            ));
        }
        Ok(LatentField {
            seed,
            n_harmonics,
            n_factors: coefficients.len(),
            coefficients,
        })
    }

    /// Evaluates all latent factors at `coord`; each value lies in `[-1, 1]`.
    pub fn sample(&self, coord: [f64; 2]) -> Result<Vec<f64>> {
        if !coord.iter().all(|c| (0.0..=1.0).contains(c)) {
            return Err(UrpError::Domain(format!(
                "coordinate ({}, {}) lies outside the unit square",
                coord[0], coord[1]
            )));
        }
        Ok(self
            .coefficients
            .iter()
            .map(|harmonics| harmonics.iter().map(|h| h.eval(coord)).sum::<f64>().tanh())
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_field_is_zero() {
        let h = Harmonic {
            amplitude: 0.0,
            frequency: [3.0, -1.0],
            phase: 0.4,
        };
        let field = LatentField::from_coefficients(0, vec![vec![h; 3]; 4]).unwrap();
        assert_eq!(field.sample([0.2, 0.9]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn single_harmonic_hand_evaluation() {
        // tanh(0.8 * sin(2*0.5 + 4*0.5 + 0.25)) = tanh(0.8 * sin(3.25))
        let h = Harmonic {
            amplitude: 0.8,
            frequency: [2.0, 4.0],
            phase: 0.25,
        };
        let field = LatentField::from_coefficients(0, vec![vec![h]]).unwrap();
        let expected = (0.8 * 3.25f64.sin()).tanh();
        assert!((expected - (-0.086_340_595)).abs() < 1e-6);
        assert_eq!(field.sample([0.5, 0.5]).unwrap(), vec![expected]);
    }

    #[test]
    fn deterministic_and_bounded() {
        let a = LatentField::generate(11, 4, 6);
        let b = LatentField::generate(11, 4, 6);
        assert_eq!(a, b);
        for i in 0..=20 {
            for j in 0..=20 {
                let v = a.sample([i as f64 / 20.0, j as f64 / 20.0]).unwrap();
                assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
                assert_eq!(v, b.sample([i as f64 / 20.0, j as f64 / 20.0]).unwrap());
            }
        }
    }

    #[test]
    fn outside_unit_square_is_domain_error() {
        let f = LatentField::generate(0, 2, 2);
        assert!(matches!(f.sample([1.2, 0.1]), Err(UrpError::Domain(_))));
        assert!(matches!(f.sample([0.5, -0.01]), Err(UrpError::Domain(_))));
    }
}
