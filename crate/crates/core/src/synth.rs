//! Synthetic regression data with closed-form conditional quantiles.
//!
//! Rows are drawn as `y = g(x1) + s(x2) * e` with `x1, x2, x3, ...` uniform on
//! `[0, 1]`, a piecewise-linear `g`, scale `s(x2) = 1 + 2 * x2` and noise `e`
//! from a distribution whose quantile function is known exactly, so the true
//! conditional `alpha`-quantile is `g(x1) + s(x2) * Q_e(alpha)`. Predictors
//! beyond `x2` carry no signal.

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// Lomax (Pareto II): `Q(a) = scale * ((1 - a)^(-1/shape) - 1)`.
    Lomax { shape: f64, scale: f64 },
    /// Logistic centred at zero: `Q(a) = scale * ln(a / (1 - a))`.
    Logistic { scale: f64 },
}

impl Noise {
    pub fn quantile(&self, a: f64) -> f64 {
        match *self {
            Noise::Lomax { shape, scale } => scale * ((1.0 - a).powf(-1.0 / shape) - 1.0),
            Noise::Logistic { scale } => scale * (a / (1.0 - a)).ln(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_rows: usize,
    pub n_predictors: usize,
    pub seed: u64,
    /// Independent draws from the same spec and seed use distinct streams.
    pub stream: u64,
    pub noise: Noise,
    /// When false the noise scale is 1 everywhere.
    pub heteroscedastic: bool,
    /// Floor at zero and round, giving a skewed count response.
    pub count_mode: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_rows: 5000,
            n_predictors: 3,
            seed: 1,
            stream: 0,
            noise: Noise::Lomax {
                shape: 3.0,
                scale: 6.0,
            },
            heteroscedastic: true,
            count_mode: false,
        }
    }
}

/// Signal in `x1`: rises gently from 5 to 10 over `[0, 0.5)`, then steeply
/// to 35.
pub fn signal(x1: f64) -> f64 {
    if x1 < 0.5 {
        5.0 + 10.0 * x1
    } else {
        10.0 + 50.0 * (x1 - 0.5)
    }
}

impl SynthSpec {
    pub fn scale(&self, x2: f64) -> f64 {
        if self.heteroscedastic {
            1.0 + 2.0 * x2
        } else {
            1.0
        }
    }

    fn finish(&self, y: f64) -> f64 {
        if self.count_mode {
            y.round().max(0.0)
        } else {
            y
        }
    }

    /// Response at predictor row `x` for a noise uniform `u` in (0, 1).
    pub fn response_at(&self, x: &[f64], u: f64) -> f64 {
        self.finish(signal(x[0]) + self.scale(x[1]) * self.noise.quantile(u))
    }

    /// One random response at fixed predictors.
    pub fn draw_response<R: Rng>(&self, x: &[f64], rng: &mut R) -> f64 {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        self.response_at(x, u)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_rows < 1 {
            return Err(Error::InvalidConfig(
                "synthetic data needs at least one row".into(),
            ));
        }
        if self.n_predictors < 3 {
            return Err(Error::InvalidConfig(
                "synthetic data needs at least 3 predictors".into(),
            ));
        }
        Ok(())
    }
}

/// Closed-form conditional quantile of a [`SynthSpec`].
#[derive(Debug, Clone, Copy)]
pub struct QuantileOracle {
    spec: SynthSpec,
}

impl QuantileOracle {
    /// True `alpha`-quantile of `y` given predictors `x` (x1 first). In count
    /// mode the rounding is applied to the continuous quantile, which is
    /// exact because rounding is monotone.
    pub fn quantile(&self, x: &[f64], alpha: f64) -> f64 {
        let q = signal(x[0]) + self.spec.scale(x[1]) * self.spec.noise.quantile(alpha);
        self.spec.finish(q)
    }
}

pub fn predictor_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

pub fn generate(spec: &SynthSpec) -> Result<(Dataset, QuantileOracle)> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed, Stream::Synth, spec.stream, 0);
    let p = spec.n_predictors;
    let mut cols = vec![Vec::with_capacity(spec.n_rows); p];
    let mut y = Vec::with_capacity(spec.n_rows);
    let mut row = vec![0.0; p];
    for _ in 0..spec.n_rows {
        for (j, v) in row.iter_mut().enumerate() {
            *v = rng.gen::<f64>();
            cols[j].push(*v);
        }
        y.push(spec.draw_response(&row, &mut rng));
    }
    let n = spec.n_rows;
    let ids = (1..=n).map(|i| format!("r{i}")).collect();
    let data = Dataset::from_parts(predictor_names(p), cols, Some(y), None, ids, None)?;
    Ok((data, QuantileOracle { spec: *spec }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::weighted_quantile;

    #[test]
    fn reproducible() {
        let spec = SynthSpec {
            n_rows: 200,
            ..Default::default()
        };
        let (a, _) = generate(&spec).unwrap();
        let (b, _) = generate(&spec).unwrap();
        assert_eq!(a, b);
        let (c, _) = generate(&SynthSpec { seed: 2, ..spec }).unwrap();
        assert_ne!(a, c);
        let (d, _) = generate(&SynthSpec { stream: 1, ..spec }).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn symmetric_homoscedastic_median_is_signal() {
        let spec = SynthSpec {
            noise: Noise::Logistic { scale: 2.0 },
            heteroscedastic: false,
            ..Default::default()
        };
        let (_, oracle) = generate(&SynthSpec { n_rows: 1, ..spec }).unwrap();
        for x1 in [0.0, 0.2, 0.5, 0.77, 1.0] {
            assert_eq!(oracle.quantile(&[x1, 0.9, 0.1], 0.5), signal(x1));
        }
    }

    #[test]
    fn monte_carlo_quantiles_match_oracle() {
        use rand::SeedableRng;
        let spec = SynthSpec::default();
        let (_, oracle) = generate(&SynthSpec { n_rows: 1, ..spec }).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let x = [0.3, 0.6, 0.5];
        let draws: Vec<f64> = (0..100_000)
            .map(|_| spec.draw_response(&x, &mut rng))
            .collect();
        let unit = vec![1.0; draws.len()];
        for a in [0.25, 0.5, 0.75, 10.0 / 11.0] {
            let emp = weighted_quantile(&draws, &unit, a).unwrap();
            let truth = oracle.quantile(&x, a);
            assert!(
                (emp - truth).abs() <= 0.01 * truth.abs(),
                "alpha {a}: {emp} vs {truth}"
            );
        }
    }

    #[test]
    fn count_mode_is_skewed_counts() {
        let spec = SynthSpec {
            count_mode: true,
            ..Default::default()
        };
        let (data, _) = generate(&spec).unwrap();
        let y = data.response().unwrap();
        assert!(y.iter().all(|&v| v >= 0.0 && v.fract() == 0.0));
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let median = weighted_quantile(y, &vec![1.0; y.len()], 0.5).unwrap();
        assert!(mean > median, "mean {mean} median {median}");
    }

    #[test]
    fn invalid_sizes() {
        assert!(generate(&SynthSpec {
            n_rows: 0,
            ..Default::default()
        })
        .is_err());
        assert!(generate(&SynthSpec {
            n_predictors: 2,
            ..Default::default()
        })
        .is_err());
    }
}
