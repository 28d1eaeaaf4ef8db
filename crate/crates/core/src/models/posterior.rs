//! Gamma-mixture posteriors from delayed-sampling batches.
//!
//! Each run contributes one particle, drawn in proportion to its final
//! weights; that particle's rate nodes become gamma components weighted by the
//! run's normalised evidence estimate.

use serde::Serialize;
use statrs::function::gamma::gamma_lr;
use thiserror::Error;

use crate::delayed::GammaNode;
use crate::smc::{batch_map, log_sum_exp, BatchConfig, CheckpointProgram, RunRecord, SmcError};

/// Named rate posteriors of one particle.
pub type NamedRates = Vec<(&'static str, GammaNode)>;

/// States that expose marginalised rates by name.
pub trait RatePosteriors {
    fn rate_posteriors(&self) -> NamedRates;
}

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error("no runs to combine")]
    Empty,
    #[error("every run is degenerate; mixture weights are undefined")]
    AllDegenerate,
    #[error("runs expose different rates")]
    Mismatch,
    #[error("no marginalised rates; run in delayed mode with gamma priors")]
    NoRates,
    #[error(transparent)]
    Smc(#[from] SmcError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Component {
    pub run: usize,
    pub weight: f64,
    pub shape: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateMixture {
    pub rate: String,
    pub components: Vec<Component>,
}

impl RateMixture {
    pub fn mean(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.shape * c.scale)
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.components
            .iter()
            .map(|c| c.weight * gamma_lr(c.shape, x / c.scale))
            .sum()
    }

    /// Inverts the mixture cdf by bisection.
    pub fn quantile(&self, p: f64) -> f64 {
        assert!((0.0..=1.0).contains(&p), "probability {p} out of range");
        if p == 0.0 {
            return 0.0;
        }
        let mut hi = self
            .components
            .iter()
            .map(|c| c.shape * c.scale)
            .fold(f64::MIN_POSITIVE, f64::max);
        while self.cdf(hi) < p {
            hi *= 2.0;
            if !hi.is_finite() {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-14 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PosteriorMixture {
    pub rates: Vec<RateMixture>,
}

impl PosteriorMixture {
    pub fn rate(&self, name: &str) -> Option<&RateMixture> {
        self.rates.iter().find(|r| r.rate == name)
    }
}

/// Combines `(log Ẑ, chosen particle's rates)` per run into one mixture per
/// rate. Runs without a particle (degenerate or failed) get weight zero and
/// are left out.
pub fn posterior_mixture(
    runs: &[(f64, Option<NamedRates>)],
) -> Result<PosteriorMixture, PosteriorError> {
    if runs.is_empty() {
        return Err(PosteriorError::Empty);
    }
    let usable: Vec<(usize, f64, &NamedRates)> = runs
        .iter()
        .enumerate()
        .filter_map(|(i, (lz, rates))| match rates {
            Some(r) if lz.is_finite() => Some((i, *lz, r)),
            _ => None,
        })
        .collect();
    if usable.is_empty() {
        return Err(PosteriorError::AllDegenerate);
    }
    let names: Vec<&'static str> = usable[0].2.iter().map(|(n, _)| *n).collect();
    if names.is_empty() {
        return Err(PosteriorError::NoRates);
    }
    let log_zs: Vec<f64> = usable.iter().map(|u| u.1).collect();
    let total = log_sum_exp(&log_zs);
    let mut rates: Vec<RateMixture> = names
        .iter()
        .map(|n| RateMixture {
            rate: n.to_string(),
            components: Vec::with_capacity(usable.len()),
        })
        .collect();
    for (run, lz, nodes) in &usable {
        if nodes.len() != names.len() || nodes.iter().zip(&names).any(|((a, _), b)| a != b) {
            return Err(PosteriorError::Mismatch);
        }
        let weight = (lz - total).exp();
        for (mix, (_, node)) in rates.iter_mut().zip(nodes.iter()) {
            mix.components.push(Component {
                run: *run,
                weight,
                shape: node.shape(),
                scale: node.scale(),
            });
        }
    }
    Ok(PosteriorMixture { rates })
}

/// Runs a batch and builds the posterior mixture from it.
pub fn mixture_from_batch<P>(
    model: &P,
    cfg: &BatchConfig,
) -> Result<(Vec<RunRecord>, PosteriorMixture), PosteriorError>
where
    P: CheckpointProgram,
    P::State: RatePosteriors,
{
    let (records, picks) = batch_map(model, cfg, |res, rng| {
        res.draw_particle(rng).map(|s| s.rate_posteriors())
    })?;
    let runs: Vec<_> = records
        .iter()
        .zip(picks)
        .map(|(r, p)| (r.log_z, p.flatten()))
        .collect();
    let mixture = posterior_mixture(&runs)?;
    Ok((records, mixture))
}
