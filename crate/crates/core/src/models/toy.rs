//! Small models with exact answers, used to check the filters.

use libm::erf;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dists::normal_logpdf;
use crate::rng::Stream;
use crate::smc::{CheckpointProgram, ModelError};

/// Linear-Gaussian state-space model:
/// `x_1 ~ N(0, prior_var)`, `x_t = a x_{t-1} + N(0, transition_var)`,
/// `y_t = c x_t + N(0, obs_var)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LgssConfig {
    pub a: f64,
    pub transition_var: f64,
    pub c: f64,
    pub obs_var: f64,
    pub prior_var: f64,
    pub obs: Vec<f64>,
}

impl LgssConfig {
    /// Unit-variance model with `obs` left empty.
    pub fn unit(a: f64) -> Self {
        LgssConfig {
            a,
            transition_var: 1.0,
            c: 1.0,
            obs_var: 1.0,
            prior_var: 1.0,
            obs: Vec::new(),
        }
    }

    /// Draws a latent path and fills `obs` with `steps` observations.
    pub fn simulate(mut self, steps: usize, rng: &mut Stream) -> Self {
        let mut x = 0.0;
        self.obs = (0..steps)
            .map(|t| {
                let var = if t == 0 {
                    self.prior_var
                } else {
                    self.transition_var
                };
                x = if t == 0 { 0.0 } else { self.a * x } + gauss(var, rng);
                self.c * x + gauss(self.obs_var, rng)
            })
            .collect();
        self
    }

    fn validate(&self) -> Result<(), ModelError> {
        let vars = [self.transition_var, self.obs_var, self.prior_var];
        if vars.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(ModelError::Invalid("variances must be positive".into()));
        }
        if !(self.a.is_finite() && self.c.is_finite()) || self.obs.iter().any(|y| !y.is_finite()) {
            return Err(ModelError::Invalid(
                "non-finite coefficient or observation".into(),
            ));
        }
        Ok(())
    }
}

fn gauss(var: f64, rng: &mut Stream) -> f64 {
    var.sqrt() * rng.sample::<f64, _>(StandardNormal)
}

/// Exact `log p(y_1:T)` by the Kalman filter.
pub fn kalman_log_evidence(cfg: &LgssConfig) -> f64 {
    let (mut mean, mut var) = (0.0, cfg.prior_var);
    let mut total = 0.0;
    for (t, &y) in cfg.obs.iter().enumerate() {
        if t > 0 {
            mean *= cfg.a;
            var = cfg.a * cfg.a * var + cfg.transition_var;
        }
        let pred_var = cfg.c * cfg.c * var + cfg.obs_var;
        total += normal_logpdf(cfg.c * mean, pred_var, y);
        let gain = var * cfg.c / pred_var;
        mean += gain * (y - cfg.c * mean);
        var *= 1.0 - gain * cfg.c;
    }
    total
}

#[derive(Clone, Debug)]
pub struct LgssProgram {
    cfg: LgssConfig,
}

impl LgssProgram {
    pub fn new(cfg: LgssConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(LgssProgram { cfg })
    }

    pub fn config(&self) -> &LgssConfig {
        &self.cfg
    }

    pub fn log_evidence(&self) -> f64 {
        kalman_log_evidence(&self.cfg)
    }
}

impl CheckpointProgram for LgssProgram {
    type State = f64;

    fn checkpoints(&self) -> usize {
        self.cfg.obs.len()
    }

    fn init(&self, _rng: &mut Stream) -> f64 {
        0.0
    }

    fn step(&self, x: &mut f64, t: usize, rng: &mut Stream) -> Result<f64, ModelError> {
        let c = &self.cfg;
        *x = if t == 0 {
            gauss(c.prior_var, rng)
        } else {
            c.a * *x + gauss(c.transition_var, rng)
        };
        Ok(normal_logpdf(c.c * *x, c.obs_var, c.obs[t]))
    }
}

/// Gaussian walk `x_t = ar x_{t-1} + N(0, step_var)` from `x_0 = 0`, weighted
/// by the indicator `|x_t| <= half_width`. With `ar = 0` every checkpoint
/// accepts with the same probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndicatorConfig {
    pub step_var: f64,
    pub half_width: f64,
    pub steps: usize,
    pub ar: f64,
}

impl IndicatorConfig {
    pub fn new(step_var: f64, half_width: f64, steps: usize) -> Self {
        IndicatorConfig {
            step_var,
            half_width,
            steps,
            ar: 0.0,
        }
    }

    /// Per-checkpoint acceptance probability when `ar = 0`.
    pub fn acceptance_probability(&self) -> f64 {
        erf(self.half_width / (2.0 * self.step_var).sqrt())
    }
}

#[derive(Clone, Debug)]
pub struct IndicatorProgram {
    cfg: IndicatorConfig,
}

impl IndicatorProgram {
    pub fn new(cfg: IndicatorConfig) -> Result<Self, ModelError> {
        if !(cfg.step_var > 0.0 && cfg.step_var.is_finite())
            || cfg.half_width.is_nan()
            || cfg.half_width < 0.0
            || !cfg.ar.is_finite()
        {
            return Err(ModelError::Invalid(format!("indicator config {cfg:?}")));
        }
        Ok(IndicatorProgram { cfg })
    }

    pub fn config(&self) -> &IndicatorConfig {
        &self.cfg
    }
}

impl CheckpointProgram for IndicatorProgram {
    type State = f64;

    fn checkpoints(&self) -> usize {
        self.cfg.steps
    }

    fn init(&self, _rng: &mut Stream) -> f64 {
        0.0
    }

    fn step(&self, x: &mut f64, _t: usize, rng: &mut Stream) -> Result<f64, ModelError> {
        *x = self.cfg.ar * *x + gauss(self.cfg.step_var, rng);
        Ok(if x.abs() <= self.cfg.half_width {
            0.0
        } else {
            f64::NEG_INFINITY
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::smc::{batch, mean_ratio, run_apf_with, ApfOptions, BatchConfig, Method, SmcError};

    #[test]
    fn single_observation_evidence() {
        let cfg = LgssConfig {
            a: 0.0,
            obs: vec![0.0],
            ..LgssConfig::unit(0.0)
        };
        let z = kalman_log_evidence(&cfg).exp();
        assert!((z - 1.0 / (4.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }

    /// Brute-force joint Gaussian evidence: y ~ N(0, Σ) with Σ built from the
    /// latent covariance, independent of the Kalman recursions.
    #[allow(clippy::needless_range_loop)]
    fn dense_log_evidence(cfg: &LgssConfig) -> f64 {
        let n = cfg.obs.len();
        let mut kx = vec![vec![0.0; n]; n];
        let mut var = vec![0.0; n];
        for t in 0..n {
            var[t] = if t == 0 {
                cfg.prior_var
            } else {
                cfg.a * cfg.a * var[t - 1] + cfg.transition_var
            };
        }
        for i in 0..n {
            for j in i..n {
                let v = var[i] * cfg.a.powi((j - i) as i32);
                kx[i][j] = v;
                kx[j][i] = v;
            }
        }
        let mut s: Vec<Vec<f64>> = kx
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, v)| cfg.c * cfg.c * v + if i == j { cfg.obs_var } else { 0.0 })
                    .collect()
            })
            .collect();
        // Cholesky in place
        for j in 0..n {
            let mut d = s[j][j];
            for k in 0..j {
                d -= s[j][k] * s[j][k];
            }
            s[j][j] = d.sqrt();
            for i in j + 1..n {
                let mut v = s[i][j];
                for k in 0..j {
                    v -= s[i][k] * s[j][k];
                }
                s[i][j] = v / s[j][j];
            }
        }
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut v = cfg.obs[i];
            for k in 0..i {
                v -= s[i][k] * z[k];
            }
            z[i] = v / s[i][i];
        }
        let logdet: f64 = (0..n).map(|i| s[i][i].ln()).sum::<f64>() * 2.0;
        let quad: f64 = z.iter().map(|v| v * v).sum();
        -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
    }

    #[test]
    fn kalman_matches_dense_gaussian() {
        let mut rng = stream(9);
        for a in [0.0, 0.5, 0.9, -1.1] {
            let cfg = LgssConfig {
                transition_var: 0.7,
                c: 1.3,
                obs_var: 0.4,
                prior_var: 2.0,
                ..LgssConfig::unit(a)
            }
            .simulate(12, &mut rng);
            let k = kalman_log_evidence(&cfg);
            let d = dense_log_evidence(&cfg);
            assert!((k - d).abs() < 1e-9, "a={a}: {k} vs {d}");
        }
    }

    #[test]
    fn lgss_bpf_is_unbiased() {
        let cfg = LgssConfig::unit(0.9).simulate(5, &mut stream(1));
        let p = LgssProgram::new(cfg).unwrap();
        let (recs, _) = batch(&p, &BatchConfig::new(Method::Bpf, 32, 2000, 11)).unwrap();
        let lz: Vec<f64> = recs.iter().map(|r| r.log_z).collect();
        let (m, se) = mean_ratio(&lz, p.log_evidence());
        assert!((m - 1.0).abs() < 3.0 * se, "ratio {m} se {se}");
    }

    #[test]
    fn indicator_acceptance() {
        let cfg = IndicatorConfig::new(1.0, 1.0, 5);
        let p = cfg.acceptance_probability();
        assert!((p - 0.682_689_492_137_086).abs() < 1e-12, "{p}");
        let wide = IndicatorProgram::new(IndicatorConfig::new(1.0, 1e9, 3)).unwrap();
        let (recs, s) = batch(&wide, &BatchConfig::new(Method::Apf, 8, 10, 2)).unwrap();
        assert!(recs
            .iter()
            .all(|r| r.per_checkpoint.iter().all(|&p| p == 9)));
        assert_eq!(s.rho, 9.0 / 8.0);
    }

    #[test]
    fn zero_width_starves() {
        let p = IndicatorProgram::new(IndicatorConfig::new(1.0, 0.0, 2)).unwrap();
        let err = run_apf_with(
            &p,
            ApfOptions {
                particles: 4,
                starvation_cap: 1000,
            },
            &mut stream(0),
        )
        .unwrap_err();
        assert!(matches!(err, SmcError::Starvation { checkpoint: 0, .. }));
    }

    #[test]
    fn invalid_configs() {
        assert!(LgssProgram::new(LgssConfig {
            obs_var: 0.0,
            ..LgssConfig::unit(1.0)
        })
        .is_err());
        assert!(IndicatorProgram::new(IndicatorConfig::new(-1.0, 1.0, 2)).is_err());
    }
}
