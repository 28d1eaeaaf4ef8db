//! Binary-state speciation and extinction (BiSSE) as a checkpoint program.
//!
//! Each lineage carries a state `s ∈ {0, 1}` with its own speciation rate
//! `λ_s` and extinction rate `μ_s`; the state switches at rate `ς` in both
//! directions. The root state is drawn uniformly. Along an observed branch the
//! program alternates between drawing the next switch time and processing the
//! segment in the current state: hidden speciations in the segment spawn
//! hidden subtrees (with their own state switching) that must go extinct, and
//! zero extinctions are scored on the segment. A switch time beyond the end of
//! the branch is censored: the `ς` posterior learns only that no switch
//! happened over the remaining length, and no weight is added since the switch
//! time was drawn rather than observed. Extant tips with a known state
//! condition on it.

use rand::Rng;

use super::crbd::{branches, check_reconstructed, Branch};
use super::{HiddenBudget, RateSpec, Sampling, DEFAULT_HIDDEN_LIMIT};
use crate::delayed::{GammaNode, RateVar};
use crate::phylo::Tree;
use crate::rng::Stream;
use crate::smc::{CheckpointProgram, ModelError};

#[derive(Clone, Debug)]
pub struct BisseConfig {
    /// Reconstructed tree; tip states come from the leaves' `tip_state`.
    pub tree: Tree,
    pub lambda: [RateSpec; 2],
    pub mu: [RateSpec; 2],
    /// Switching rate, shared by both directions.
    pub sigma: RateSpec,
    pub sampling: Sampling,
}

#[derive(Clone, Debug)]
pub struct BisseProgram {
    tree: Tree,
    branches: Vec<Branch>,
    lambda: [RateSpec; 2],
    mu: [RateSpec; 2],
    sigma: RateSpec,
    sampling: Sampling,
    hidden_limit: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BisseState {
    pub lambda: [RateVar; 2],
    pub mu: [RateVar; 2],
    pub sigma: RateVar,
    /// State at each processed node, indexed by node id.
    pub node_state: Vec<u8>,
}

struct Rates<'a> {
    lambda: &'a mut [RateVar; 2],
    mu: &'a mut [RateVar; 2],
    sigma: &'a mut RateVar,
}

impl BisseProgram {
    pub fn new(cfg: BisseConfig) -> Result<Self, ModelError> {
        check_reconstructed(&cfg.tree)?;
        for (i, r) in cfg.lambda.iter().enumerate() {
            r.validate(&format!("speciation[{i}]"))?;
        }
        for (i, r) in cfg.mu.iter().enumerate() {
            r.validate(&format!("extinction[{i}]"))?;
        }
        cfg.sigma.validate("switching")?;
        Ok(BisseProgram {
            branches: branches(&cfg.tree),
            tree: cfg.tree,
            lambda: cfg.lambda,
            mu: cfg.mu,
            sigma: cfg.sigma,
            sampling: cfg.sampling,
            hidden_limit: DEFAULT_HIDDEN_LIMIT,
        })
    }

    pub fn with_hidden_limit(mut self, limit: u64) -> Self {
        self.hidden_limit = limit;
        self
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }
}

impl CheckpointProgram for BisseProgram {
    type State = BisseState;

    fn checkpoints(&self) -> usize {
        self.branches.len()
    }

    fn init(&self, rng: &mut Stream) -> BisseState {
        let lambda = [
            self.lambda[0].realise(self.sampling, rng),
            self.lambda[1].realise(self.sampling, rng),
        ];
        let mu = [
            self.mu[0].realise(self.sampling, rng),
            self.mu[1].realise(self.sampling, rng),
        ];
        let sigma = self.sigma.realise(self.sampling, rng);
        let mut node_state = vec![0u8; self.tree.len()];
        node_state[self.tree.root()] = u8::from(rng.random_bool(0.5));
        BisseState {
            lambda,
            mu,
            sigma,
            node_state,
        }
    }

    fn step(&self, state: &mut BisseState, t: usize, rng: &mut Stream) -> Result<f64, ModelError> {
        let b = self.branches[t];
        let mut budget = HiddenBudget::new(self.hidden_limit);
        let mut s = state.node_state[b.parent] as usize;
        let mut rates = Rates {
            lambda: &mut state.lambda,
            mu: &mut state.mu,
            sigma: &mut state.sigma,
        };
        let mut log_w = 0.0;
        let mut top = self.tree.age(b.parent);
        loop {
            let remaining = top - b.age;
            let wait = rates.sigma.draw_waiting_time(rng);
            let switched = wait < remaining;
            let seg = if switched {
                rates.sigma.condition_event(wait);
                wait
            } else {
                rates.sigma.condition_no_event(remaining);
                remaining
            };
            let hidden = rates.lambda[s].sample_count(seg, rng);
            for _ in 0..hidden {
                let tau = top - seg * rng.random::<f64>();
                if hidden_survives(tau, s, &mut rates, rng, &mut budget)? {
                    return Ok(f64::NEG_INFINITY);
                }
                log_w += std::f64::consts::LN_2;
            }
            log_w += rates.mu[s].observe_count(seg, 0);
            if !switched {
                break;
            }
            top -= seg;
            s ^= 1;
        }
        state.node_state[b.node] = s as u8;
        if b.internal {
            log_w += state.lambda[s].observe_zero_waiting();
        } else if let Some(observed) = self.tree.node(b.node).tip_state {
            if observed as usize != s {
                return Ok(f64::NEG_INFINITY);
            }
        }
        Ok(log_w)
    }
}

/// Simulates the hidden subtree started at age `tau` in state `state`;
/// true if any lineage reaches the present.
fn hidden_survives(
    tau: f64,
    state: usize,
    rates: &mut Rates<'_>,
    rng: &mut Stream,
    budget: &mut HiddenBudget,
) -> Result<bool, ModelError> {
    let mut pending = vec![(tau, state)];
    while let Some((mut age, mut s)) = pending.pop() {
        loop {
            budget.spend()?;
            let switch = rates.sigma.draw_waiting_time(rng);
            let death = rates.mu[s].draw_waiting_time(rng);
            let seg;
            let extinct;
            if death < switch && death < age {
                seg = death;
                extinct = true;
                rates.mu[s].condition_event(death);
                rates.sigma.condition_no_event(death);
            } else if switch < age {
                seg = switch;
                extinct = false;
                rates.sigma.condition_event(switch);
                rates.mu[s].condition_no_event(switch);
            } else {
                return Ok(true);
            }
            let offspring = rates.lambda[s].sample_count(seg, rng);
            for _ in 0..offspring {
                pending.push((age - seg * rng.random::<f64>(), s));
            }
            if extinct {
                break;
            }
            age -= seg;
            s ^= 1;
        }
    }
    Ok(false)
}

impl super::posterior::RatePosteriors for BisseState {
    fn rate_posteriors(&self) -> Vec<(&'static str, GammaNode)> {
        let named = [
            ("lambda0", &self.lambda[0]),
            ("lambda1", &self.lambda[1]),
            ("mu0", &self.mu[0]),
            ("mu1", &self.mu[1]),
            ("sigma", &self.sigma),
        ];
        named
            .into_iter()
            .filter_map(|(name, r)| r.node().map(|n| (name, *n)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::crbd::{CrbdConfig, CrbdProgram};
    use crate::models::GammaPrior;
    use crate::phylo::parse_newick;
    use crate::smc::{batch, mean_ratio, run_apf, run_bpf, BatchConfig, Method, SmcError};
    use std::collections::HashMap;

    fn tree_with_states(states: &[(&str, u8)]) -> Tree {
        let t = parse_newick("((A:1.0,B:1.0):0.5,(C:0.7,D:0.7):0.8);").unwrap();
        let map: HashMap<String, u8> = states.iter().map(|(l, s)| (l.to_string(), *s)).collect();
        t.with_tip_states(&map)
    }

    fn symmetric(tree: Tree, lambda: f64, mu: f64, sigma: f64) -> BisseConfig {
        BisseConfig {
            tree,
            lambda: [RateSpec::Fixed(lambda); 2],
            mu: [RateSpec::Fixed(mu); 2],
            sigma: RateSpec::Fixed(sigma),
            sampling: Sampling::Immediate,
        }
    }

    #[test]
    fn reduces_to_half_crbd_without_switching() {
        let tree = tree_with_states(&[("A", 0), ("B", 0), ("C", 0), ("D", 0)]);
        let (lambda, mu) = (0.8, 0.4);
        let bisse = BisseProgram::new(symmetric(tree.clone(), lambda, mu, 0.0)).unwrap();
        let crbd = CrbdProgram::new(CrbdConfig::fixed(tree, lambda, mu)).unwrap();
        let cfg = BatchConfig::new(Method::Apf, 128, 1500, 3);
        let (rb, _) = batch(&bisse, &cfg).unwrap();
        let (rc, _) = batch(&crbd, &cfg).unwrap();
        let zb: Vec<f64> = rb.iter().map(|r| r.log_z).collect();
        let zc: Vec<f64> = rc.iter().map(|r| r.log_z).collect();
        // reference scale: the CRBD batch mean
        let (mc, sc) = mean_ratio(&zc, 0.0);
        let (mb, sb) = mean_ratio(&zb, 0.0);
        let diff = mb - 0.5 * mc;
        let se = (sb * sb + 0.25 * sc * sc).sqrt();
        assert!(diff.abs() < 3.0 * se, "{mb} vs {} (se {se})", 0.5 * mc);
    }

    #[test]
    fn unreachable_tip_state() {
        // No switching and mixed tip states: no root state explains the data.
        let tree = tree_with_states(&[("A", 0), ("B", 1), ("C", 0), ("D", 0)]);
        let p = BisseProgram::new(symmetric(tree, 0.5, 0.1, 0.0)).unwrap();
        let r = run_bpf(&p, 64, 1).unwrap();
        assert!(r.degenerate);
        let err = crate::smc::run_apf_with(
            &p,
            crate::smc::ApfOptions {
                particles: 16,
                starvation_cap: 10_000,
            },
            &mut crate::rng::stream(2),
        )
        .unwrap_err();
        assert!(matches!(err, SmcError::Starvation { .. }));
    }

    #[test]
    fn delayed_mode_never_samples_rates() {
        let tree = tree_with_states(&[("A", 0), ("B", 1)]);
        let prior = RateSpec::Prior(GammaPrior::new(1.0, 1.0).unwrap());
        let cfg = BisseConfig {
            tree,
            lambda: [prior; 2],
            mu: [prior; 2],
            sigma: RateSpec::Prior(GammaPrior::new(1.0, 0.5).unwrap()),
            sampling: Sampling::Delayed,
        };
        let p = BisseProgram::new(cfg).unwrap();
        let r = run_apf(&p, 64, 4).unwrap();
        assert!(r.log_z.is_finite());
        for s in &r.particles {
            assert!(s.lambda.iter().chain(&s.mu).all(|r| r.node().is_some()));
            assert!(s.sigma.node().is_some());
            // two non-root speciations score λ at zero wait, hidden ones add more
            let extra: f64 = s
                .lambda
                .iter()
                .map(|r| r.node().unwrap().shape() - 1.0)
                .sum();
            assert!(extra >= 2.0);
            assert_eq!(extra, extra.round());
        }
    }

    #[test]
    fn unknown_states_do_not_condition() {
        // With every tip unknown and symmetric rates, switching is invisible:
        // BiSSE equals CRBD in mean for any switching rate.
        let tree = tree_with_states(&[]);
        let bisse = BisseProgram::new(symmetric(tree.clone(), 0.6, 0.3, 1.5)).unwrap();
        let crbd = CrbdProgram::new(CrbdConfig::fixed(tree, 0.6, 0.3)).unwrap();
        let cfg = BatchConfig::new(Method::Apf, 64, 1500, 5);
        let zb: Vec<f64> = batch(&bisse, &cfg)
            .unwrap()
            .0
            .iter()
            .map(|r| r.log_z)
            .collect();
        let zc: Vec<f64> = batch(&crbd, &cfg)
            .unwrap()
            .0
            .iter()
            .map(|r| r.log_z)
            .collect();
        let (mb, sb) = mean_ratio(&zb, 0.0);
        let (mc, sc) = mean_ratio(&zc, 0.0);
        assert!((mb - mc).abs() < 3.0 * (sb * sb + sc * sc).sqrt());
    }

    #[test]
    fn delayed_and_immediate_agree_in_mean() {
        let tree = tree_with_states(&[("A", 0), ("B", 1), ("C", 0), ("D", 0)]);
        let unit = RateSpec::Prior(GammaPrior::new(1.0, 1.0).unwrap());
        let cfg = |sampling| BisseConfig {
            tree: tree.clone(),
            lambda: [unit; 2],
            mu: [unit; 2],
            sigma: RateSpec::Prior(GammaPrior::new(1.0, 0.5).unwrap()),
            sampling,
        };
        let run = |sampling| {
            let p = BisseProgram::new(cfg(sampling)).unwrap();
            let (recs, _) = batch(&p, &BatchConfig::new(Method::Apf, 128, 800, 8)).unwrap();
            recs.iter().map(|r| r.log_z).collect::<Vec<f64>>()
        };
        let (mi, si) = mean_ratio(&run(Sampling::Immediate), -8.0);
        let (md, sd) = mean_ratio(&run(Sampling::Delayed), -8.0);
        assert!((mi - md).abs() < 3.0 * (si * si + sd * sd).sqrt(), "{mi} vs {md}");
    }
}
