use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stream::RandomStream;
use crate::error::{invalid, Result};

const MEAN_TOL: f64 = 1e-12;

fn default_span() -> f64 {
    1.0
}

/// Serializable description of a step law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum IncrementSpec {
    Rademacher,
    /// Finite law on `span * values`.
    LatticePmf {
        values: Vec<i64>,
        probs: Vec<f64>,
        #[serde(default = "default_span")]
        span: f64,
    },
    Gaussian {
        sigma: f64,
    },
    /// Uniform on `[-half_width, half_width]`.
    UniformCentered {
        half_width: f64,
    },
}

#[derive(Clone, Debug)]
enum Sampler {
    Rademacher,
    Lattice { cumulative: Vec<f64> },
    Gaussian { sigma: f64 },
    Uniform { half_width: f64 },
}

/// A validated centered step law with finite positive variance.
#[derive(Clone, Debug)]
pub struct IncrementLaw {
    spec: IncrementSpec,
    sampler: Sampler,
    variance: f64,
    /// Steps in lattice units together with their probabilities.
    lattice: Option<(Vec<i64>, Vec<f64>)>,
    lattice_span: Option<f64>,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl IncrementLaw {
    pub fn rademacher() -> Self {
        Self::new(IncrementSpec::Rademacher).expect("rademacher is valid")
    }

    pub fn gaussian(sigma: f64) -> Result<Self> {
        Self::new(IncrementSpec::Gaussian { sigma })
    }

    pub fn lattice_pmf(values: Vec<i64>, probs: Vec<f64>) -> Result<Self> {
        Self::new(IncrementSpec::LatticePmf {
            values,
            probs,
            span: 1.0,
        })
    }

    pub fn new(spec: IncrementSpec) -> Result<Self> {
        match &spec {
            IncrementSpec::Rademacher => Ok(Self {
                sampler: Sampler::Rademacher,
                variance: 1.0,
                lattice: Some((vec![-1, 1], vec![0.5, 0.5])),
                lattice_span: Some(1.0),
                spec,
            }),
            IncrementSpec::Gaussian { sigma } => {
                if !(sigma.is_finite() && *sigma > 0.0) {
                    return Err(invalid(format!("gaussian sigma must be finite and > 0, got {sigma}")));
                }
                Ok(Self {
                    sampler: Sampler::Gaussian { sigma: *sigma },
                    variance: sigma * sigma,
                    lattice: None,
                    lattice_span: None,
                    spec,
                })
            }
            IncrementSpec::UniformCentered { half_width } => {
                if !(half_width.is_finite() && *half_width > 0.0) {
                    return Err(invalid(format!(
                        "uniform half_width must be finite and > 0, got {half_width}"
                    )));
                }
                Ok(Self {
                    sampler: Sampler::Uniform { half_width: *half_width },
                    variance: half_width * half_width / 3.0,
                    lattice: None,
                    lattice_span: None,
                    spec,
                })
            }
            IncrementSpec::LatticePmf { values, probs, span } => {
                Self::validate_lattice(values, probs, *span).map(|(steps, p, d, var)| {
                    let mut acc = 0.0;
                    let cumulative = p
                        .iter()
                        .map(|w| {
                            acc += w;
                            acc
                        })
                        .collect();
                    Self {
                        sampler: Sampler::Lattice { cumulative },
                        variance: var,
                        lattice: Some((steps, p)),
                        lattice_span: Some(d),
                        spec,
                    }
                })
            }
        }
    }

    #[allow(clippy::type_complexity)]
    fn validate_lattice(
        values: &[i64],
        probs: &[f64],
        span: f64,
    ) -> Result<(Vec<i64>, Vec<f64>, f64, f64)> {
        if values.len() != probs.len() || values.is_empty() {
            return Err(invalid("lattice-pmf needs equally many values and probs (at least one)"));
        }
        if !(span.is_finite() && span > 0.0) {
            return Err(invalid(format!("lattice span must be > 0, got {span}")));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("lattice-pmf probabilities must be nonnegative"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("lattice-pmf values must be distinct"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > MEAN_TOL {
            return Err(invalid(format!("lattice-pmf probabilities sum to {total}, not 1")));
        }
        let mut pairs: Vec<(i64, f64)> = values
            .iter()
            .copied()
            .zip(probs.iter().copied())
            .filter(|&(_, p)| p > 0.0)
            .collect();
        pairs.sort_by_key(|&(v, _)| v);
        let g = pairs
            .iter()
            .fold(0u64, |g, &(v, _)| gcd(g, v.unsigned_abs()));
        if g == 0 {
            return Err(invalid("lattice-pmf variance must be > 0 (all mass at zero)"));
        }
        let mean: f64 = pairs.iter().map(|&(v, p)| v as f64 * p).sum::<f64>() * span;
        if mean.abs() > MEAN_TOL {
            return Err(invalid(format!("lattice-pmf mean is {mean}, not 0")));
        }
        let d = span * g as f64;
        let steps: Vec<i64> = pairs.iter().map(|&(v, _)| v / g as i64).collect();
        let p: Vec<f64> = pairs.iter().map(|&(_, p)| p).collect();
        let var = steps
            .iter()
            .zip(&p)
            .map(|(&s, &w)| (s as f64).powi(2) * w)
            .sum::<f64>()
            * d
            * d;
        Ok((steps, p, d, var))
    }

    pub fn spec(&self) -> &IncrementSpec {
        &self.spec
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn sigma(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn mean(&self) -> f64 {
        0.0
    }

    /// Largest `d` with all steps in `dZ`; `None` for non-arithmetic laws.
    pub fn lattice_span(&self) -> Option<f64> {
        self.lattice_span
    }

    /// Steps in lattice units and their probabilities, sorted by step.
    pub fn lattice_steps(&self) -> Option<(&[i64], &[f64])> {
        self.lattice.as_ref().map(|(s, p)| (s.as_slice(), p.as_slice()))
    }

    pub fn is_rademacher(&self) -> bool {
        matches!(self.sampler, Sampler::Rademacher)
    }

    /// One draw of the step.
    #[inline]
    pub fn sample(&self, stream: &mut RandomStream) -> f64 {
        match &self.sampler {
            Sampler::Rademacher => {
                if stream.bit() {
                    1.0
                } else {
                    -1.0
                }
            }
            Sampler::Lattice { cumulative } => {
                let u = stream.uniform();
                let idx = cumulative
                    .partition_point(|&c| c < u)
                    .min(cumulative.len() - 1);
                let (steps, _) = self.lattice.as_ref().expect("lattice law");
                steps[idx] as f64 * self.lattice_span.unwrap_or(1.0)
            }
            Sampler::Gaussian { sigma } => {
                let z: f64 = StandardNormal.sample(stream);
                sigma * z
            }
            Sampler::Uniform { half_width } => half_width * (2.0 * stream.uniform() - 1.0),
        }
    }
}
