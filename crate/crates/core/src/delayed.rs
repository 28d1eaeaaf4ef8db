//! Conjugate gamma rates under delayed sampling.
//!
//! A [`GammaNode`] stands in for a rate `ν ~ Gamma(k, θ)` that is never drawn.
//! Poisson counts with mean `νΔ` are drawn from (or scored against) the
//! negative binomial marginal, exponential waiting times from the Lomax
//! marginal, and the node moves to the matching posterior after each
//! operation. Nodes are plain values: cloning a particle clones its posterior.

use rand::Rng;

use crate::dists::{
    lomax_logpdf, negbinom_logpmf_parts, poisson_logpmf, sample_exponential, sample_gamma,
    sample_poisson, DistError, Lomax, NegativeBinomial,
};

/// Gamma posterior over a rate, shape `k` and scale `θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaNode {
    shape: f64,
    scale: f64,
}

impl GammaNode {
    pub fn new(shape: f64, scale: f64) -> Result<Self, DistError> {
        if !(shape > 0.0 && shape.is_finite() && scale > 0.0 && scale.is_finite()) {
            return Err(DistError::InvalidParameter {
                dist: "gamma node",
                msg: format!("shape {shape}, scale {scale}"),
            });
        }
        Ok(GammaNode { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn log_density(&self, rate: f64) -> f64 {
        crate::dists::gamma_logpdf(self.shape, self.scale, rate)
    }

    /// Scale after an exposure of length `exposure`: `θ / (1 + Δθ)`.
    fn exposed_scale(&self, exposure: f64) -> f64 {
        self.scale / (1.0 + exposure * self.scale)
    }

    /// Marginal of a `Poisson(νΔ)` count: `NegativeBinomial(k, 1/(1+Δθ))`.
    pub fn count_marginal(&self, exposure: f64) -> NegativeBinomial {
        NegativeBinomial::new(self.shape, 1.0 / (1.0 + exposure * self.scale)).expect("valid node")
    }

    /// Marginal of an `Exponential(ν)` waiting time: `Lomax(1/θ, k)`.
    pub fn waiting_marginal(&self) -> Lomax {
        Lomax::new(1.0 / self.scale, self.shape).expect("valid node")
    }

    /// Scores an observed count `n` over exposure `Δ` and conditions on it.
    /// The count type rules out negative observations.
    pub fn observe_poisson_count(&mut self, exposure: f64, n: u64) -> f64 {
        if exposure == 0.0 {
            return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let x = exposure * self.scale;
        let ln_p = -x.ln_1p();
        let ln_q = x.ln() + ln_p;
        let w = negbinom_logpmf_parts(self.shape, ln_p, ln_q, n);
        self.shape += n as f64;
        self.scale = self.exposed_scale(exposure);
        w
    }

    /// Draws a count from the marginal and conditions on it.
    pub fn sample_poisson_count<R: Rng + ?Sized>(&mut self, exposure: f64, rng: &mut R) -> u64 {
        if exposure == 0.0 {
            return 0;
        }
        let n = self.count_marginal(exposure).sample(rng);
        self.shape += n as f64;
        self.scale = self.exposed_scale(exposure);
        n
    }

    /// Draws a waiting time from the marginal without conditioning. Pair with
    /// [`condition_event`](Self::condition_event) or
    /// [`condition_no_event`](Self::condition_no_event).
    pub fn draw_waiting_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.waiting_marginal().sample(rng)
    }

    /// Conditions on an event after waiting `waited`.
    pub fn condition_event(&mut self, waited: f64) {
        self.shape += 1.0;
        self.scale = self.exposed_scale(waited);
    }

    /// Conditions on no event during `exposure`.
    pub fn condition_no_event(&mut self, exposure: f64) {
        self.scale = self.exposed_scale(exposure);
    }

    /// Draws a waiting time from the marginal and conditions on the event.
    pub fn sample_waiting_time<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let d = self.draw_waiting_time(rng);
        self.condition_event(d);
        d
    }

    /// Scores an event observed after zero waiting time, `log(kθ)`, and
    /// conditions on it.
    pub fn observe_exponential_zero(&mut self) -> f64 {
        let w = lomax_logpdf(1.0 / self.scale, self.shape, 0.0);
        self.shape += 1.0;
        w
    }

    /// Draws a concrete rate from the current posterior.
    pub fn sample_rate<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_gamma(self.shape, self.scale, rng)
    }
}

/// A rate as seen by a model: either a known value or a marginalised
/// [`GammaNode`]. Both expose the same operations, so a model is written once
/// and run with fixed, immediately sampled or delayed rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateVar {
    Known(f64),
    Marginal(GammaNode),
}

impl RateVar {
    /// Draws a `Poisson(rate * exposure)` count.
    pub fn sample_count<R: Rng + ?Sized>(&mut self, exposure: f64, rng: &mut R) -> u64 {
        match self {
            RateVar::Known(r) => sample_poisson(*r * exposure, rng),
            RateVar::Marginal(n) => n.sample_poisson_count(exposure, rng),
        }
    }

    /// Log probability of observing `n` events over `exposure`.
    pub fn observe_count(&mut self, exposure: f64, n: u64) -> f64 {
        match self {
            RateVar::Known(r) => poisson_logpmf(*r * exposure, n),
            RateVar::Marginal(node) => node.observe_poisson_count(exposure, n),
        }
    }

    pub fn draw_waiting_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            RateVar::Known(r) => sample_exponential(*r, rng),
            RateVar::Marginal(n) => n.draw_waiting_time(rng),
        }
    }

    pub fn condition_event(&mut self, waited: f64) {
        if let RateVar::Marginal(n) = self {
            n.condition_event(waited);
        }
    }

    pub fn condition_no_event(&mut self, exposure: f64) {
        if let RateVar::Marginal(n) = self {
            n.condition_no_event(exposure);
        }
    }

    pub fn sample_waiting_time<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        match self {
            RateVar::Known(r) => sample_exponential(*r, rng),
            RateVar::Marginal(n) => n.sample_waiting_time(rng),
        }
    }

    /// Log density of an `Exponential(rate)` waiting time of zero.
    pub fn observe_zero_waiting(&mut self) -> f64 {
        match self {
            RateVar::Known(r) => r.ln(),
            RateVar::Marginal(n) => n.observe_exponential_zero(),
        }
    }

    pub fn node(&self) -> Option<&GammaNode> {
        match self {
            RateVar::Known(_) => None,
            RateVar::Marginal(n) => Some(n),
        }
    }
}
