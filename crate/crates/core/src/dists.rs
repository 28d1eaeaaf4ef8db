//! Samplers and log-densities for the distributions used by the models.
//!
//! Everything is in natural-log space. Besides the usual families this module
//! carries the two gamma mixtures that delayed sampling relies on: the
//! negative binomial (gamma-Poisson) and the Lomax (gamma-exponential).

use rand::Rng;
use rand_distr::{Distribution as _, Exp1, StandardNormal};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("invalid {dist} parameter: {msg}")]
    InvalidParameter { dist: &'static str, msg: String },
    #[error("value {0} outside the support")]
    Domain(f64),
}

fn invalid<T>(dist: &'static str, msg: impl Into<String>) -> Result<T, DistError> {
    Err(DistError::InvalidParameter {
        dist,
        msg: msg.into(),
    })
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

/// Exponential draw with the given rate; a zero rate never fires.
pub fn sample_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate == 0.0 {
        return f64::INFINITY;
    }
    let e: f64 = Exp1.sample(rng);
    e / rate
}

/// Poisson draw; a zero mean gives zero.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // rand_distr::Poisson only rejects non-positive or astronomically large means.
    let p = rand_distr::Poisson::new(mean).expect("finite positive Poisson mean");
    let n: f64 = p.sample(rng);
    n as u64
}

pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    rand_distr::Gamma::new(shape, scale)
        .expect("positive gamma parameters")
        .sample(rng)
}

pub fn poisson_logpmf(mean: f64, n: u64) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * mean.ln() - mean - ln_gamma(n as f64 + 1.0)
}

pub fn gamma_logpdf(shape: f64, scale: f64, x: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    if x == 0.0 {
        return match shape.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => -scale.ln(),
            _ => f64::NEG_INFINITY,
        };
    }
    (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
}

pub fn normal_logpdf(mean: f64, variance: f64, x: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * variance).ln() + d * d / variance)
}

/// Negative binomial log pmf of `r` failures before the `k`-th success with
/// success probability `p`. Non-integer `k` uses gamma-function coefficients.
pub fn negbinom_logpmf(k: f64, p: f64, r: f64) -> Result<f64, DistError> {
    if !positive(k) {
        return invalid("negative binomial", format!("successes {k}"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return invalid("negative binomial", format!("probability {p}"));
    }
    if !(r >= 0.0 && r.fract() == 0.0 && r.is_finite()) {
        return Err(DistError::Domain(r));
    }
    let ln_q = if p == 1.0 {
        f64::NEG_INFINITY
    } else {
        (-p).ln_1p()
    };
    Ok(negbinom_logpmf_parts(k, p.ln(), ln_q, r as u64))
}

/// Same as [`negbinom_logpmf`] with `ln p` and `ln(1 - p)` supplied directly,
/// which keeps precision when `p` is close to 0 or 1.
pub(crate) fn negbinom_logpmf_parts(k: f64, ln_p: f64, ln_q: f64, r: u64) -> f64 {
    if r == 0 {
        return k * ln_p;
    }
    let r = r as f64;
    ln_gamma(r + k) - ln_gamma(k) - ln_gamma(r + 1.0) + k * ln_p + r * ln_q
}

/// Lomax log density `log(α/λ) - (α+1) log(1 + x/λ)`; `-∞` for `x < 0`.
pub fn lomax_logpdf(scale: f64, shape: f64, x: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    (shape / scale).ln() - (shape + 1.0) * (x / scale).ln_1p()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponential {
    rate: f64,
}

impl Exponential {
    pub fn new(rate: f64) -> Result<Self, DistError> {
        if !positive(rate) {
            return invalid("exponential", format!("rate {rate}"));
        }
        Ok(Exponential { rate })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_exponential(self.rate, rng)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            f64::NEG_INFINITY
        } else {
            self.rate.ln() - self.rate * x
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Poisson {
    mean: f64,
}

impl Poisson {
    pub fn new(mean: f64) -> Result<Self, DistError> {
        if !(mean >= 0.0 && mean.is_finite()) {
            return invalid("Poisson", format!("mean {mean}"));
        }
        Ok(Poisson { mean })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        sample_poisson(self.mean, rng)
    }

    pub fn ln_pmf(&self, n: u64) -> f64 {
        poisson_logpmf(self.mean, n)
    }
}

/// Gamma with shape `k` and scale `θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gamma {
    shape: f64,
    scale: f64,
}

impl Gamma {
    pub fn new(shape: f64, scale: f64) -> Result<Self, DistError> {
        if !positive(shape) || !positive(scale) {
            return invalid("gamma", format!("shape {shape}, scale {scale}"));
        }
        Ok(Gamma { shape, scale })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_gamma(self.shape, self.scale, rng)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        gamma_logpdf(self.shape, self.scale, x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Uniform {
    lo: f64,
    hi: f64,
}

impl Uniform {
    pub fn new(lo: f64, hi: f64) -> Result<Self, DistError> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return invalid("uniform", format!("bounds [{lo}, {hi}]"));
        }
        Ok(Uniform { lo, hi })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            f64::NEG_INFINITY
        } else {
            -(self.hi - self.lo).ln()
        }
    }
}

/// Categorical over `0..n` with unnormalised probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    cumulative: Vec<f64>,
}

impl Categorical {
    pub fn new(probs: &[f64]) -> Result<Self, DistError> {
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return invalid("categorical", "negative or non-finite probability");
        }
        let mut acc = 0.0;
        let cumulative: Vec<f64> = probs
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        if !(acc > 0.0 && acc.is_finite()) {
            return invalid(
                "categorical",
                "probabilities must have a positive finite sum",
            );
        }
        Ok(Categorical { cumulative })
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }

    pub fn ln_pmf(&self, i: usize) -> f64 {
        let Some(&c) = self.cumulative.get(i) else {
            return f64::NEG_INFINITY;
        };
        let prev = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        ((c - prev) / self.cumulative[self.cumulative.len() - 1]).ln()
    }
}

/// Normal parameterised by mean and variance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normal {
    mean: f64,
    variance: f64,
}

impl Normal {
    pub fn new(mean: f64, variance: f64) -> Result<Self, DistError> {
        if !mean.is_finite() || !positive(variance) {
            return invalid("normal", format!("mean {mean}, variance {variance}"));
        }
        Ok(Normal { mean, variance })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.mean + self.variance.sqrt() * z
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        normal_logpdf(self.mean, self.variance, x)
    }
}

/// Number of failures before the `k`-th success.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NegativeBinomial {
    successes: f64,
    prob: f64,
}

impl NegativeBinomial {
    pub fn new(successes: f64, prob: f64) -> Result<Self, DistError> {
        if !positive(successes) {
            return invalid("negative binomial", format!("successes {successes}"));
        }
        if !(prob > 0.0 && prob <= 1.0) {
            return invalid("negative binomial", format!("probability {prob}"));
        }
        Ok(NegativeBinomial { successes, prob })
    }

    pub fn mean(&self) -> f64 {
        self.successes * (1.0 - self.prob) / self.prob
    }

    /// Draws through the gamma-Poisson mixture, which covers non-integer `k`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.prob == 1.0 {
            return 0;
        }
        let rate = sample_gamma(self.successes, (1.0 - self.prob) / self.prob, rng);
        sample_poisson(rate, rng)
    }

    pub fn ln_pmf(&self, r: u64) -> f64 {
        let ln_q = if self.prob == 1.0 {
            f64::NEG_INFINITY
        } else {
            (-self.prob).ln_1p()
        };
        negbinom_logpmf_parts(self.successes, self.prob.ln(), ln_q, r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lomax {
    scale: f64,
    shape: f64,
}

impl Lomax {
    pub fn new(scale: f64, shape: f64) -> Result<Self, DistError> {
        if !positive(scale) || !positive(shape) {
            return invalid("Lomax", format!("scale {scale}, shape {shape}"));
        }
        Ok(Lomax { scale, shape })
    }

    /// Inverse-CDF draw: `scale * (u^(-1/shape) - 1)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        self.scale * (u.powf(-1.0 / self.shape) - 1.0)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        lomax_logpdf(self.scale, self.shape, x)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            1.0 - (1.0 + x / self.scale).powf(-self.shape)
        }
    }
}

/// Any of the distributions above, for callers that pick one at run time.
/// Discrete draws are returned as `f64`.
#[derive(Clone, Debug, PartialEq)]
pub enum Catalog {
    Exponential(Exponential),
    Poisson(Poisson),
    Gamma(Gamma),
    Uniform(Uniform),
    Categorical(Categorical),
    Normal(Normal),
    NegativeBinomial(NegativeBinomial),
    Lomax(Lomax),
}

impl Catalog {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Catalog::Exponential(d) => d.sample(rng),
            Catalog::Poisson(d) => d.sample(rng) as f64,
            Catalog::Gamma(d) => d.sample(rng),
            Catalog::Uniform(d) => d.sample(rng),
            Catalog::Categorical(d) => d.sample(rng) as f64,
            Catalog::Normal(d) => d.sample(rng),
            Catalog::NegativeBinomial(d) => d.sample(rng) as f64,
            Catalog::Lomax(d) => d.sample(rng),
        }
    }

    /// Log density (or log mass for the discrete families) at `x`.
    pub fn ln_density(&self, x: f64) -> f64 {
        let count = |x: f64| (x >= 0.0 && x.fract() == 0.0).then_some(x as u64);
        match self {
            Catalog::Exponential(d) => d.ln_pdf(x),
            Catalog::Poisson(d) => count(x).map_or(f64::NEG_INFINITY, |n| d.ln_pmf(n)),
            Catalog::Gamma(d) => d.ln_pdf(x),
            Catalog::Uniform(d) => d.ln_pdf(x),
            Catalog::Categorical(d) => count(x).map_or(f64::NEG_INFINITY, |n| d.ln_pmf(n as usize)),
            Catalog::Normal(d) => d.ln_pdf(x),
            Catalog::NegativeBinomial(d) => count(x).map_or(f64::NEG_INFINITY, |n| d.ln_pmf(n)),
            Catalog::Lomax(d) => d.ln_pdf(x),
        }
    }
}
