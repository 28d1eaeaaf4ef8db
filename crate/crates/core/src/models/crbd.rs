//! Constant-rate birth-death model as a checkpoint program.
//!
//! One checkpoint per observed branch, in pre-order. For a branch of length
//! `Δ` ending at node `r` the step
//!
//! 1. draws a number of hidden speciations `~ Poisson(λΔ)` at uniform times
//!    along the branch,
//! 2. simulates the subtree spawned by each one: if any lineage reaches the
//!    present the weight drops to zero, otherwise it doubles,
//! 3. scores a zero waiting time `~ Exponential(λ)` if `r` is a speciation,
//! 4. scores zero extinctions `~ Poisson(μΔ)` on the branch.
//!
//! The constant `2^B / C!` of the complete-tree likelihood is left out of the
//! weights; [`CrbdProgram::log_constant`] returns it.

use std::collections::HashMap;

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::{GammaPrior, HiddenBudget, RateSpec, Sampling, DEFAULT_HIDDEN_LIMIT};
use crate::delayed::{GammaNode, RateVar};
use crate::phylo::{xlogy, Clade, NodeId, Tree};
use crate::rng::Stream;
use crate::smc::{CheckpointProgram, ModelError};

#[derive(Clone, Debug)]
pub struct CrbdConfig {
    /// Reconstructed tree (extant leaves only).
    pub tree: Tree,
    pub lambda: RateSpec,
    pub mu: RateSpec,
    pub sampling: Sampling,
}

impl CrbdConfig {
    pub fn fixed(tree: Tree, lambda: f64, mu: f64) -> Self {
        CrbdConfig {
            tree,
            lambda: RateSpec::Fixed(lambda),
            mu: RateSpec::Fixed(mu),
            sampling: Sampling::Immediate,
        }
    }

    pub fn with_priors(tree: Tree, lambda: GammaPrior, mu: GammaPrior, sampling: Sampling) -> Self {
        CrbdConfig {
            tree,
            lambda: RateSpec::Prior(lambda),
            mu: RateSpec::Prior(mu),
            sampling,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Branch {
    pub node: NodeId,
    pub parent: NodeId,
    /// Age of the node at the bottom of the branch.
    pub age: f64,
    pub length: f64,
    pub internal: bool,
}

pub(crate) fn branches(tree: &Tree) -> Vec<Branch> {
    tree.preorder()
        .iter()
        .map(|&id| Branch {
            node: id,
            parent: tree.node(id).parent.expect("non-root"),
            age: tree.age(id),
            length: tree.branch_length(id),
            internal: !tree.node(id).is_leaf(),
        })
        .collect()
}

pub(crate) fn check_reconstructed(tree: &Tree) -> Result<(), ModelError> {
    if tree.preorder().is_empty() {
        return Err(ModelError::Invalid("tree has no branches".into()));
    }
    if tree.leaves().any(|l| !tree.is_extant(l)) {
        return Err(ModelError::Invalid(
            "observed tree must contain extant leaves only".into(),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct CrbdProgram {
    tree: Tree,
    branches: Vec<Branch>,
    lambda: RateSpec,
    mu: RateSpec,
    sampling: Sampling,
    hidden_limit: u64,
}

/// Per-particle rates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CrbdState {
    pub lambda: RateVar,
    pub mu: RateVar,
}

impl CrbdProgram {
    pub fn new(cfg: CrbdConfig) -> Result<Self, ModelError> {
        check_reconstructed(&cfg.tree)?;
        cfg.lambda.validate("speciation")?;
        cfg.mu.validate("extinction")?;
        if cfg.lambda == RateSpec::Fixed(0.0) {
            return Err(ModelError::Invalid(
                "fixed speciation rate must be positive".into(),
            ));
        }
        Ok(CrbdProgram {
            branches: branches(&cfg.tree),
            tree: cfg.tree,
            lambda: cfg.lambda,
            mu: cfg.mu,
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

    /// `log(2^B / C!)` for the observed tree, the factor omitted from the
    /// weights.
    pub fn log_constant(&self) -> f64 {
        let s = self.tree.stats();
        self.tree.bifurcations() as f64 * std::f64::consts::LN_2 - ln_gamma(s.extant as f64 + 1.0)
    }

    fn simulate_branch(
        &self,
        state: &mut CrbdState,
        t: usize,
        rng: &mut Stream,
        mut log: Option<&mut Vec<HiddenLineage>>,
    ) -> Result<f64, ModelError> {
        let b = self.branches[t];
        let mut budget = HiddenBudget::new(self.hidden_limit);
        let mut log_w = 0.0;
        let hidden = state.lambda.sample_count(b.length, rng);
        for _ in 0..hidden {
            let tau = b.age + b.length * rng.random::<f64>();
            let survived = survives(
                tau,
                Attach::Branch(b.node),
                &mut state.lambda,
                &mut state.mu,
                rng,
                &mut budget,
                log.as_deref_mut(),
            )?;
            if survived {
                return Ok(f64::NEG_INFINITY);
            }
            log_w += std::f64::consts::LN_2;
        }
        if b.internal {
            log_w += state.lambda.observe_zero_waiting();
        }
        log_w += state.mu.observe_count(b.length, 0);
        Ok(log_w)
    }

    /// Runs every checkpoint on a single particle and, if the proposal is
    /// accepted, returns the complete tree it implies together with its
    /// summary counts and the accumulated log-weight. Needs known rates
    /// (fixed or immediate sampling).
    pub fn augment(&self, rng: &mut Stream) -> Result<Option<Augmentation>, ModelError> {
        let mut state = self.init(rng);
        let (RateVar::Known(lambda), RateVar::Known(mu)) = (state.lambda, state.mu) else {
            return Err(ModelError::Invalid("augmentation needs known rates".into()));
        };
        let mut log = Vec::new();
        let mut log_weight = 0.0;
        for t in 0..self.branches.len() {
            let w = self.simulate_branch(&mut state, t, rng, Some(&mut log))?;
            if w == f64::NEG_INFINITY {
                return Ok(None);
            }
            log_weight += w;
        }
        let obs = self.tree.stats();
        let stats = AugmentationStats {
            hidden_speciations: log
                .iter()
                .filter(|l| matches!(l.parent, Attach::Branch(_)))
                .count(),
            subtree_speciations: log
                .iter()
                .filter(|l| matches!(l.parent, Attach::Lineage(_)))
                .count(),
            subtree_extinctions: log.len(),
            subtree_length: log.iter().map(|l| l.origin - l.end).sum(),
            observed_speciations: obs.speciations,
            observed_length: obs.length,
        };
        let complete =
            assemble(&self.tree, &log).map_err(|e| ModelError::Invalid(e.to_string()))?;
        Ok(Some(Augmentation {
            lambda,
            mu,
            log_weight,
            stats,
            complete,
        }))
    }
}

impl CheckpointProgram for CrbdProgram {
    type State = CrbdState;

    fn checkpoints(&self) -> usize {
        self.branches.len()
    }

    fn init(&self, rng: &mut Stream) -> CrbdState {
        CrbdState {
            lambda: self.lambda.realise(self.sampling, rng),
            mu: self.mu.realise(self.sampling, rng),
        }
    }

    fn step(&self, state: &mut CrbdState, t: usize, rng: &mut Stream) -> Result<f64, ModelError> {
        self.simulate_branch(state, t, rng, None)
    }
}

impl super::posterior::RatePosteriors for CrbdState {
    fn rate_posteriors(&self) -> Vec<(&'static str, GammaNode)> {
        let mut out = Vec::new();
        if let Some(n) = self.lambda.node() {
            out.push(("lambda", *n));
        }
        if let Some(n) = self.mu.node() {
            out.push(("mu", *n));
        }
        out
    }
}

/// Where a hidden lineage starts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Attach {
    /// A hidden speciation on the observed branch above this node.
    Branch(NodeId),
    /// A speciation along an earlier hidden lineage.
    Lineage(usize),
}

/// One simulated lineage of a hidden subtree, from its origin to extinction.
#[derive(Clone, Copy, Debug)]
pub(crate) struct HiddenLineage {
    parent: Attach,
    origin: f64,
    end: f64,
}

/// Whether the hidden subtree started at age `tau` has a lineage surviving to
/// the present. Draws go through `lambda` and `mu`, so marginalised rates are
/// conditioned on the simulated subtree.
pub fn branch_survives(
    tau: f64,
    lambda: &mut RateVar,
    mu: &mut RateVar,
    rng: &mut Stream,
) -> Result<bool, ModelError> {
    let mut budget = HiddenBudget::new(DEFAULT_HIDDEN_LIMIT);
    survives(tau, Attach::Lineage(0), lambda, mu, rng, &mut budget, None)
}

fn survives(
    tau: f64,
    attach: Attach,
    lambda: &mut RateVar,
    mu: &mut RateVar,
    rng: &mut Stream,
    budget: &mut HiddenBudget,
    mut log: Option<&mut Vec<HiddenLineage>>,
) -> Result<bool, ModelError> {
    let mut pending = vec![(tau, attach)];
    while let Some((origin, parent)) = pending.pop() {
        budget.spend()?;
        let life = mu.sample_waiting_time(rng);
        if life >= origin {
            return Ok(true);
        }
        let end = origin - life;
        let id = log.as_deref().map_or(0, |l| l.len());
        if let Some(l) = log.as_deref_mut() {
            l.push(HiddenLineage {
                parent,
                origin,
                end,
            });
        }
        let offspring = lambda.sample_count(life, rng);
        for _ in 0..offspring {
            pending.push((end + life * rng.random::<f64>(), Attach::Lineage(id)));
        }
    }
    Ok(false)
}

/// Counts describing an accepted augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationStats {
    /// Hidden speciations on observed branches (`H′`).
    pub hidden_speciations: usize,
    /// Speciations inside hidden subtrees (`S′`).
    pub subtree_speciations: usize,
    /// Extinctions in hidden subtrees (`X′`).
    pub subtree_extinctions: usize,
    /// Total branch length of hidden subtrees (`L′`).
    pub subtree_length: f64,
    pub observed_speciations: usize,
    pub observed_length: f64,
}

impl AugmentationStats {
    /// Log proposal density of the augmentation:
    /// `λ^H′ e^(-λ L_obs) · 2^S′ λ^S′ μ^X′ e^(-(λ+μ) L′)`.
    pub fn log_q(&self, lambda: f64, mu: f64) -> f64 {
        xlogy(self.hidden_speciations, lambda) - lambda * self.observed_length
            + self.subtree_speciations as f64 * std::f64::consts::LN_2
            + xlogy(self.subtree_speciations, lambda)
            + xlogy(self.subtree_extinctions, mu)
            - (lambda + mu) * self.subtree_length
    }

    /// Log weight without the constant: `2^H′ λ^S_obs e^(-μ L_obs)`.
    pub fn log_w(&self, lambda: f64, mu: f64) -> f64 {
        self.hidden_speciations as f64 * std::f64::consts::LN_2
            + xlogy(self.observed_speciations, lambda)
            - mu * self.observed_length
    }
}

/// An accepted augmentation of the observed tree.
#[derive(Clone, Debug)]
pub struct Augmentation {
    pub lambda: f64,
    pub mu: f64,
    /// Sum of the step weights returned by the program.
    pub log_weight: f64,
    pub stats: AugmentationStats,
    pub complete: Tree,
}

/// Grafts the logged hidden lineages onto the observed tree.
fn assemble(observed: &Tree, log: &[HiddenLineage]) -> Result<Tree, crate::phylo::TreeError> {
    let mut on_branch: HashMap<NodeId, Vec<usize>> = HashMap::new();
    let mut on_lineage: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, l) in log.iter().enumerate() {
        match l.parent {
            Attach::Branch(n) => on_branch.entry(n).or_default().push(i),
            Attach::Lineage(p) => on_lineage.entry(p).or_default().push(i),
        }
    }

    fn lineage(i: usize, log: &[HiddenLineage], kids: &HashMap<usize, Vec<usize>>) -> Clade {
        let l = log[i];
        let mut clade = Clade::leaf(l.end, None);
        graft(&mut clade, kids.get(&i), log, kids);
        clade
    }

    // Splits the branch above `clade` at each attachment, nearest first.
    fn graft(
        clade: &mut Clade,
        attached: Option<&Vec<usize>>,
        log: &[HiddenLineage],
        kids: &HashMap<usize, Vec<usize>>,
    ) {
        let Some(attached) = attached else { return };
        let mut order = attached.clone();
        order.sort_by(|&a, &b| log[a].origin.total_cmp(&log[b].origin));
        for i in order {
            let below = std::mem::replace(clade, Clade::leaf(0.0, None));
            *clade = Clade::node(log[i].origin, vec![below, lineage(i, log, kids)]);
        }
    }

    fn observed_clade(
        t: &Tree,
        id: NodeId,
        log: &[HiddenLineage],
        on_branch: &HashMap<NodeId, Vec<usize>>,
        kids: &HashMap<usize, Vec<usize>>,
    ) -> Clade {
        let n = t.node(id);
        let mut clade = Clade {
            age: n.age,
            label: n.label.clone(),
            tip_state: n.tip_state,
            children: n
                .children
                .iter()
                .map(|&c| observed_clade(t, c, log, on_branch, kids))
                .collect(),
        };
        graft(&mut clade, on_branch.get(&id), log, kids);
        clade
    }

    Tree::from_clade(&observed_clade(
        observed,
        observed.root(),
        log,
        &on_branch,
        &on_lineage,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phylo::parse_newick;
    use crate::rng::stream;
    use crate::smc::{batch, mean_ratio, BatchConfig, Method};

    fn three() -> Tree {
        parse_newick("((A:1.0,B:1.0):0.5,C:1.5);").unwrap()
    }

    #[test]
    fn survival_at_zero_age_is_certain() {
        let mut rng = stream(1);
        let (mut l, mut m) = (RateVar::Known(1.0), RateVar::Known(1.0));
        assert!((0..1000).all(|_| branch_survives(0.0, &mut l, &mut m, &mut rng).unwrap()));
    }

    #[test]
    fn pure_death_survival_probability() {
        let mut rng = stream(2);
        let n = 100_000;
        let (mut l, mut m) = (RateVar::Known(0.0), RateVar::Known(0.8));
        let hits = (0..n)
            .filter(|_| branch_survives(1.5, &mut l, &mut m, &mut rng).unwrap())
            .count() as f64
            / n as f64;
        let p = (-0.8f64 * 1.5).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits - p).abs() < 3.0 * se, "{hits} vs {p}");
    }

    #[test]
    fn fast_extinction_almost_never_survives() {
        let mut rng = stream(3);
        let (mut l, mut m) = (RateVar::Known(1.0), RateVar::Known(1000.0));
        let hits = (0..100_000)
            .filter(|_| branch_survives(1.0, &mut l, &mut m, &mut rng).unwrap())
            .count();
        assert!((hits as f64) < 100.0);
    }

    #[test]
    fn explosion_guard() {
        // supercritical and far from the present: hidden subtrees branch
        // many times before any lineage can reach age zero
        let cfg = CrbdConfig::fixed(three(), 50.0, 40.0);
        let prog = CrbdProgram::new(cfg).unwrap().with_hidden_limit(10);
        let mut rng = stream(4);
        let mut hit = false;
        for _ in 0..200 {
            let mut s = prog.init(&mut rng);
            if let Err(e) = prog.step(&mut s, 0, &mut rng) {
                assert_eq!(e, ModelError::Explosion { limit: 10 });
                hit = true;
                break;
            }
        }
        assert!(hit);
    }

    #[test]
    fn rejects_bad_configs() {
        let extinct = parse_newick("((A:1.0,X:0.5):0.5,C:1.5);").unwrap();
        assert!(CrbdProgram::new(CrbdConfig::fixed(extinct, 1.0, 0.1)).is_err());
        assert!(CrbdProgram::new(CrbdConfig::fixed(three(), 0.0, 0.1)).is_err());
        assert!(CrbdProgram::new(CrbdConfig::fixed(three(), 1.0, -0.1)).is_err());
    }

    #[test]
    fn checkpoints_follow_preorder() {
        let p = CrbdProgram::new(CrbdConfig::fixed(three(), 1.0, 0.1)).unwrap();
        assert_eq!(p.checkpoints(), 4);
        let lens: Vec<f64> = p.branches.iter().map(|b| b.length).collect();
        assert_eq!(lens, [0.5, 1.0, 1.0, 1.5]);
    }

    #[test]
    fn augmentation_identity_small_tree() {
        let p = CrbdProgram::new(CrbdConfig::fixed(three(), 1.0, 0.5)).unwrap();
        let mut rng = stream(5);
        let mut accepted = 0;
        while accepted < 300 {
            let Some(a) = p.augment(&mut rng).unwrap() else {
                continue;
            };
            accepted += 1;
            let lhs = a.stats.log_q(a.lambda, a.mu) + a.log_weight + p.log_constant();
            let rhs = a.complete.crbd_complete_loglik(a.lambda, a.mu);
            assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
            assert!((a.log_weight - a.stats.log_w(a.lambda, a.mu)).abs() < 1e-9);
            assert_eq!(a.complete.prune().unwrap(), *p.tree());
        }
    }

    #[test]
    fn delayed_state_shapes_are_integer_offsets() {
        let cfg = CrbdConfig::with_priors(
            three(),
            GammaPrior::new(1.0, 1.0).unwrap(),
            GammaPrior::new(2.0, 0.5).unwrap(),
            Sampling::Delayed,
        );
        let p = CrbdProgram::new(cfg).unwrap();
        let r = crate::smc::run_apf(&p, 64, 6).unwrap();
        for s in &r.particles {
            let (l, m) = (s.lambda.node().unwrap(), s.mu.node().unwrap());
            assert_eq!(l.shape().fract(), 0.0);
            assert_eq!(m.shape().fract(), 0.0);
            // one observed speciation below the root
            assert!(l.shape() >= 2.0);
        }
    }

    #[test]
    fn yule_evidence_on_small_tree() {
        let lambda = 0.7;
        let p = CrbdProgram::new(CrbdConfig::fixed(three(), lambda, 0.0)).unwrap();
        let (recs, _) = batch(&p, &BatchConfig::new(Method::Apf, 64, 2000, 7)).unwrap();
        let s = p.tree().stats();
        let exact = s.speciations as f64 * lambda.ln() - lambda * s.length;
        let z: Vec<f64> = recs.iter().map(|r| r.log_z).collect();
        let (m, se) = mean_ratio(&z, exact);
        assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");
    }
}
