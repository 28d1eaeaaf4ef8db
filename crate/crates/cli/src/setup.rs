//! Turns parsed flags into model programs.

use std::fs;
use std::path::Path;

use anyhow::Context;
use phyloalive::models::toy::IndicatorConfig;
use phyloalive::phylo::read_tip_states;
use phyloalive::{
    parse_newick, BisseConfig, BisseProgram, CrbdConfig, CrbdProgram, GammaPrior, IndicatorProgram,
    LgssConfig, LgssProgram, RateSpec, Sampling, Tree,
};

use crate::args::{ModelArgs, ModelKind, SamplingArg, ToyArgs};
use crate::{usage, Failure};

pub enum Program {
    Crbd(CrbdProgram),
    Bisse(BisseProgram),
    Lgss(LgssProgram),
    Indicator(IndicatorProgram),
}

pub fn build(m: &ModelArgs, sampling: SamplingArg) -> Result<Program, Failure> {
    let is_tree_model = matches!(m.model, ModelKind::Crbd | ModelKind::Bisse);
    if !is_tree_model && sampling != SamplingArg::Immediate {
        return usage(format!(
            "--sampling {} needs a model with rates (crbd or bisse)",
            sampling.name()
        ));
    }
    if sampling != SamplingArg::Fixed
        && (!m.lambda.is_empty() || !m.mu.is_empty() || m.sigma.is_some())
    {
        return usage("--lambda, --mu and --sigma need --sampling fixed");
    }
    match m.model {
        ModelKind::Crbd => {
            let tree = load_tree(m)?;
            let cfg = CrbdConfig {
                tree,
                lambda: rate(&m.lambda, m.prior_lambda, sampling, "--lambda", 1)?[0],
                mu: rate(&m.mu, m.prior_mu, sampling, "--mu", 1)?[0],
                sampling: core_sampling(sampling),
            };
            Ok(Program::Crbd(CrbdProgram::new(cfg)?))
        }
        ModelKind::Bisse => {
            let tree = load_tree(m)?;
            let sigma = match (sampling, m.sigma) {
                (SamplingArg::Fixed, Some(s)) => RateSpec::Fixed(s),
                (SamplingArg::Fixed, None) => return usage("--sampling fixed needs --sigma"),
                _ => RateSpec::Prior(match m.prior_sigma {
                    Some(p) => p,
                    None => GammaPrior::new(1.0, 10.0 / tree.stats().length)?,
                }),
            };
            let cfg = BisseConfig {
                tree,
                lambda: pair(rate(&m.lambda, m.prior_lambda, sampling, "--lambda", 2)?),
                mu: pair(rate(&m.mu, m.prior_mu, sampling, "--mu", 2)?),
                sigma,
                sampling: core_sampling(sampling),
            };
            Ok(Program::Bisse(BisseProgram::new(cfg)?))
        }
        ModelKind::Lgss => Ok(Program::Lgss(LgssProgram::new(lgss_config(&m.toy))?)),
        ModelKind::Indicator => Ok(Program::Indicator(IndicatorProgram::new(
            indicator_config(&m.toy),
        )?)),
    }
}

fn core_sampling(s: SamplingArg) -> Sampling {
    match s {
        SamplingArg::Delayed => Sampling::Delayed,
        SamplingArg::Immediate | SamplingArg::Fixed => Sampling::Immediate,
    }
}

/// Fixed values from the flag, or the prior repeated once per state.
fn rate(
    values: &[f64],
    prior: GammaPrior,
    sampling: SamplingArg,
    flag: &str,
    max: usize,
) -> Result<Vec<RateSpec>, Failure> {
    if sampling != SamplingArg::Fixed {
        return Ok(vec![RateSpec::Prior(prior); max]);
    }
    if values.is_empty() || values.len() > max {
        return usage(format!(
            "--sampling fixed needs {flag} with 1 to {max} value(s)"
        ));
    }
    Ok(values.iter().map(|&v| RateSpec::Fixed(v)).collect())
}

fn pair(specs: Vec<RateSpec>) -> [RateSpec; 2] {
    [specs[0], *specs.last().expect("non-empty")]
}

fn load_tree(m: &ModelArgs) -> Result<Tree, Failure> {
    let Some(path) = &m.tree else {
        return usage("this model needs --tree");
    };
    let tree = read_tree(path)?;
    match &m.states {
        Some(p) if m.model == ModelKind::Bisse => {
            let file = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let states =
                read_tip_states(file).with_context(|| format!("reading {}", p.display()))?;
            Ok(tree.with_tip_states(&states))
        }
        Some(_) => usage("--states only applies to bisse"),
        None => Ok(tree),
    }
}

pub fn read_tree(path: &Path) -> Result<Tree, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_newick(&text).with_context(|| format!("parsing {}", path.display()))?)
}

pub fn lgss_config(t: &ToyArgs) -> LgssConfig {
    let mut rng = phyloalive::stream(t.obs_seed);
    LgssConfig::unit(t.lgss_a).simulate(t.steps.unwrap_or(10), &mut rng)
}

pub fn indicator_config(t: &ToyArgs) -> IndicatorConfig {
    IndicatorConfig {
        ar: t.ar,
        ..IndicatorConfig::new(t.step_var, t.half_width, t.steps.unwrap_or(5))
    }
}
