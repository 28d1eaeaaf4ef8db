//! Particle filters over checkpoint programs.
//!
//! A [`CheckpointProgram`] is a model written as a sequence of `T`
//! checkpoints. Between checkpoints a particle runs forward freely; at each
//! checkpoint it returns the log-weight accumulated since the previous one.
//! Both engines resample multinomially at every checkpoint.

mod metrics;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::rng::{derive_seed, stream, Stream};

pub use metrics::{car, log_sum_exp, mean_ratio, ress, rho, var_log_z};

/// Default cap on propagation attempts at a single APF checkpoint.
pub const DEFAULT_STARVATION_CAP: u64 = 1_000_000;

/// Failure inside a program step.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("hidden subtree simulation exceeded {limit} branches")]
    Explosion { limit: u64 },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmcError {
    #[error("particle count must be at least 1")]
    NoParticles,
    #[error("run count must be at least 1")]
    NoRuns,
    #[error("checkpoint {checkpoint} starved after {attempts} propagation attempts")]
    Starvation { checkpoint: usize, attempts: u64 },
    #[error("model failed at checkpoint {checkpoint}: {source}")]
    Model {
        checkpoint: usize,
        source: ModelError,
    },
    #[error("no finite log-weight to resample from")]
    NoFiniteWeights,
}

/// The model contract consumed by the filters.
///
/// Every execution passes the checkpoints `0..checkpoints()` in order. `step`
/// must depend only on the state it is handed and the random stream.
pub trait CheckpointProgram: Sync {
    type State: Clone + Send + Sync;

    fn checkpoints(&self) -> usize;

    fn init(&self, rng: &mut Stream) -> Self::State;

    /// Advances `state` to checkpoint `t` and returns the log-weight
    /// increment, which may be `-∞`.
    fn step(&self, state: &mut Self::State, t: usize, rng: &mut Stream) -> Result<f64, ModelError>;
}

/// Outcome of one filter run.
#[derive(Clone, Debug)]
pub struct RunResult<S> {
    pub log_z: f64,
    pub particles: Vec<S>,
    pub log_weights: Vec<f64>,
    /// Propagations per processed checkpoint (always `N` for the BPF).
    pub propagations: Vec<u64>,
    pub degenerate: bool,
}

impl<S> RunResult<S> {
    pub fn total_propagations(&self) -> u64 {
        self.propagations.iter().sum()
    }

    /// Picks one final particle with probability proportional to its weight.
    pub fn draw_particle<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&S> {
        resample_index(&self.log_weights, rng)
            .ok()
            .map(|i| &self.particles[i])
    }
}

/// Ancestor sampler built once per checkpoint from log-weights.
struct Resampler {
    cumulative: Vec<f64>,
}

impl Resampler {
    fn new(log_weights: &[f64]) -> Option<Self> {
        let max = log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        let mut acc = 0.0;
        let cumulative = log_weights
            .iter()
            .map(|&lw| {
                acc += (lw - max).exp();
                acc
            })
            .collect();
        Some(Resampler { cumulative })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = self.cumulative[self.cumulative.len() - 1];
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// Draws an index with probability proportional to `exp(log_weights[i])`.
pub fn resample_index<R: Rng + ?Sized>(
    log_weights: &[f64],
    rng: &mut R,
) -> Result<usize, SmcError> {
    Resampler::new(log_weights)
        .map(|r| r.draw(rng))
        .ok_or(SmcError::NoFiniteWeights)
}

/// Receives the accepted log-weights of every checkpoint as a filter runs.
pub trait FilterObserver {
    fn checkpoint(&mut self, t: usize, log_weights: &[f64], propagations: u64);
}

impl FilterObserver for () {
    fn checkpoint(&mut self, _: usize, _: &[f64], _: u64) {}
}

fn init_particles<P: CheckpointProgram>(model: &P, n: usize, rng: &mut Stream) -> Vec<P::State> {
    (0..n).map(|_| model.init(rng)).collect()
}

/// Bootstrap particle filter.
pub fn run_bpf<P: CheckpointProgram>(
    model: &P,
    particles: usize,
    seed: u64,
) -> Result<RunResult<P::State>, SmcError> {
    run_bpf_with(model, particles, &mut stream(seed))
}

pub fn run_bpf_with<P: CheckpointProgram>(
    model: &P,
    n: usize,
    rng: &mut Stream,
) -> Result<RunResult<P::State>, SmcError> {
    run_bpf_observed(model, n, rng, &mut ())
}

pub fn run_bpf_observed<P: CheckpointProgram, O: FilterObserver>(
    model: &P,
    n: usize,
    rng: &mut Stream,
    observer: &mut O,
) -> Result<RunResult<P::State>, SmcError> {
    if n == 0 {
        return Err(SmcError::NoParticles);
    }
    let mut states = init_particles(model, n, rng);
    let mut log_w = vec![0.0; n];
    let mut log_z = 0.0;
    let mut propagations = Vec::with_capacity(model.checkpoints());
    let ln_n = (n as f64).ln();

    for t in 0..model.checkpoints() {
        let resampler = Resampler::new(&log_w).expect("weights checked after every checkpoint");
        let mut next = Vec::with_capacity(n);
        let mut next_w = Vec::with_capacity(n);
        for _ in 0..n {
            let mut s = states[resampler.draw(rng)].clone();
            let w = model
                .step(&mut s, t, rng)
                .map_err(|source| SmcError::Model {
                    checkpoint: t,
                    source,
                })?;
            next.push(s);
            next_w.push(w);
        }
        propagations.push(n as u64);
        observer.checkpoint(t, &next_w, n as u64);
        states = next;
        log_w = next_w;
        let lse = log_sum_exp(&log_w);
        if lse == f64::NEG_INFINITY || lse.is_nan() {
            return Ok(RunResult {
                log_z: f64::NEG_INFINITY,
                particles: states,
                log_weights: log_w,
                propagations,
                degenerate: true,
            });
        }
        log_z += lse - ln_n;
    }
    Ok(RunResult {
        log_z,
        particles: states,
        log_weights: log_w,
        propagations,
        degenerate: false,
    })
}

/// Options for [`run_apf_with`].
#[derive(Clone, Copy, Debug)]
pub struct ApfOptions {
    pub particles: usize,
    pub starvation_cap: u64,
}

impl ApfOptions {
    pub fn new(particles: usize) -> Self {
        ApfOptions {
            particles,
            starvation_cap: DEFAULT_STARVATION_CAP,
        }
    }
}

/// Alive particle filter with importance weights.
///
/// At each checkpoint ancestors are drawn from the previous `N` weights and
/// propagated until `N + 1` particles have a strictly positive weight. All
/// `P_t` attempts are counted, the `(N+1)`-th particle is dropped, and the
/// checkpoint contributes `Σ_{n≤N} w / (P_t - 1)` to the evidence.
pub fn run_apf<P: CheckpointProgram>(
    model: &P,
    particles: usize,
    seed: u64,
) -> Result<RunResult<P::State>, SmcError> {
    run_apf_with(model, ApfOptions::new(particles), &mut stream(seed))
}

pub fn run_apf_with<P: CheckpointProgram>(
    model: &P,
    opts: ApfOptions,
    rng: &mut Stream,
) -> Result<RunResult<P::State>, SmcError> {
    run_apf_observed(model, opts, rng, &mut ())
}

pub fn run_apf_observed<P: CheckpointProgram, O: FilterObserver>(
    model: &P,
    opts: ApfOptions,
    rng: &mut Stream,
    observer: &mut O,
) -> Result<RunResult<P::State>, SmcError> {
    let n = opts.particles;
    if n == 0 {
        return Err(SmcError::NoParticles);
    }
    let mut states = init_particles(model, n, rng);
    let mut log_w = vec![0.0; n];
    let mut log_z = 0.0;
    let mut propagations = Vec::with_capacity(model.checkpoints());

    for t in 0..model.checkpoints() {
        let resampler = Resampler::new(&log_w).expect("accepted weights are positive");
        let mut next = Vec::with_capacity(n);
        let mut next_w = Vec::with_capacity(n);
        let mut attempts: u64 = 0;
        for slot in 0..=n {
            loop {
                if attempts >= opts.starvation_cap {
                    return Err(SmcError::Starvation {
                        checkpoint: t,
                        attempts,
                    });
                }
                let mut s = states[resampler.draw(rng)].clone();
                let w = model
                    .step(&mut s, t, rng)
                    .map_err(|source| SmcError::Model {
                        checkpoint: t,
                        source,
                    })?;
                attempts += 1;
                if w > f64::NEG_INFINITY {
                    if slot < n {
                        next.push(s);
                        next_w.push(w);
                    }
                    break;
                }
            }
        }
        propagations.push(attempts);
        observer.checkpoint(t, &next_w, attempts);
        states = next;
        log_w = next_w;
        log_z += log_sum_exp(&log_w) - ((attempts - 1) as f64).ln();
    }
    Ok(RunResult {
        log_z,
        particles: states,
        log_weights: log_w,
        propagations,
        degenerate: false,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bpf,
    Apf,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bpf => "bpf",
            Method::Apf => "apf",
        }
    }
}

pub fn run<P: CheckpointProgram>(
    model: &P,
    method: Method,
    opts: ApfOptions,
    rng: &mut Stream,
) -> Result<RunResult<P::State>, SmcError> {
    match method {
        Method::Bpf => run_bpf_with(model, opts.particles, rng),
        Method::Apf => run_apf_with(model, opts, rng),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchConfig {
    pub method: Method,
    pub particles: usize,
    pub runs: usize,
    pub seed: u64,
    pub starvation_cap: u64,
}

impl BatchConfig {
    pub fn new(method: Method, particles: usize, runs: usize, seed: u64) -> Self {
        BatchConfig {
            method,
            particles,
            runs,
            seed,
            starvation_cap: DEFAULT_STARVATION_CAP,
        }
    }
}

/// Per-run line of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub log_z: f64,
    pub propagations: u64,
    pub per_checkpoint: Vec<u64>,
    pub degenerate: bool,
    /// Set when the run aborted (starvation or model failure).
    pub error: Option<SmcError>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Aggregate metrics of a batch. Metrics are NaN when no run produced a
/// positive estimate.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub particles: usize,
    pub checkpoints: usize,
    pub ress: f64,
    pub car: f64,
    pub var_log_z: f64,
    pub rho: f64,
    /// Runs with a zero estimate or that aborted.
    pub degenerate_runs: usize,
    pub failed_runs: usize,
    pub all_degenerate: bool,
}

impl BatchSummary {
    pub fn from_records(records: &[RunRecord], particles: usize, checkpoints: usize) -> Self {
        let ok: Vec<&RunRecord> = records.iter().filter(|r| !r.failed()).collect();
        let log_z: Vec<f64> = ok.iter().map(|r| r.log_z).collect();
        let failed_runs = records.len() - ok.len();
        let degenerate_runs = records
            .iter()
            .filter(|r| r.failed() || r.degenerate)
            .count();
        let all_degenerate = degenerate_runs == records.len();
        let props: Vec<u64> = ok.iter().map(|r| r.propagations).collect();
        BatchSummary {
            runs: records.len(),
            particles,
            checkpoints,
            ress: if all_degenerate {
                f64::NAN
            } else {
                ress(&log_z)
            },
            car: if all_degenerate {
                f64::NAN
            } else {
                car(&log_z)
            },
            var_log_z: var_log_z(&log_z),
            rho: if props.is_empty() {
                f64::NAN
            } else {
                rho(&props, particles, checkpoints)
            },
            degenerate_runs,
            failed_runs,
            all_degenerate,
        }
    }
}

/// Runs `cfg.runs` independent filters and summarises them.
pub fn batch<P: CheckpointProgram>(
    model: &P,
    cfg: &BatchConfig,
) -> Result<(Vec<RunRecord>, BatchSummary), SmcError> {
    let (records, _) = batch_map(model, cfg, |_, _| ())?;
    let summary = BatchSummary::from_records(&records, cfg.particles, model.checkpoints());
    Ok((records, summary))
}

/// Like [`batch`] but also applies `extract` to every successful run, with
/// the run's own stream positioned right after the filter finished.
/// Runs execute in parallel; results are returned in run order and do not
/// depend on the thread count.
pub fn batch_map<P, X, F>(
    model: &P,
    cfg: &BatchConfig,
    extract: F,
) -> Result<(Vec<RunRecord>, Vec<Option<X>>), SmcError>
where
    P: CheckpointProgram,
    X: Send,
    F: Fn(&RunResult<P::State>, &mut Stream) -> X + Sync,
{
    if cfg.runs == 0 {
        return Err(SmcError::NoRuns);
    }
    if cfg.particles == 0 {
        return Err(SmcError::NoParticles);
    }
    let opts = ApfOptions {
        particles: cfg.particles,
        starvation_cap: cfg.starvation_cap,
    };
    let out: Vec<(RunRecord, Option<X>)> = (0..cfg.runs)
        .into_par_iter()
        .map(|m| {
            let seed = derive_seed(cfg.seed, m as u64);
            let mut rng = stream(seed);
            match run(model, cfg.method, opts, &mut rng) {
                Ok(res) => {
                    let x = extract(&res, &mut rng);
                    let rec = RunRecord {
                        run: m,
                        seed,
                        log_z: res.log_z,
                        propagations: res.total_propagations(),
                        per_checkpoint: res.propagations,
                        degenerate: res.degenerate,
                        error: None,
                    };
                    (rec, Some(x))
                }
                Err(e) => {
                    let attempts = match &e {
                        SmcError::Starvation { attempts, .. } => *attempts,
                        _ => 0,
                    };
                    let rec = RunRecord {
                        run: m,
                        seed,
                        log_z: f64::NEG_INFINITY,
                        propagations: attempts,
                        per_checkpoint: Vec::new(),
                        degenerate: true,
                        error: Some(e),
                    };
                    (rec, None)
                }
            }
        })
        .collect();
    Ok(out.into_iter().unzip())
}
