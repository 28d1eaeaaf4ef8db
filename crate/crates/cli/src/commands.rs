use std::fs;
use std::io::{self, Write};
use std::path::Path;

use anyhow::Context;
use phyloalive::models::posterior::mixture_from_batch;
use phyloalive::phylo::{simulate_crbd, simulate_reconstructed, TreeError};
use phyloalive::smc::mean_ratio;
use phyloalive::{
    batch, stream, write_newick, BatchConfig, BatchSummary, CheckpointProgram, IndicatorProgram,
    LgssProgram, Method, PosteriorError, RunRecord, SmcError,
};
use serde::Serialize;

use crate::args::{
    InferArgs, ModelKind, PosteriorArgs, RunArgs, SamplingArg, SimulateArgs, ToyKind, ToycheckArgs,
};
use crate::setup::{self, Program};
use crate::{usage, Failure};

pub fn simulate(a: SimulateArgs) -> Result<(), Failure> {
    let mut rng = stream(a.seed);
    let bad_input = |e: TreeError| match e {
        TreeError::InvalidParameter(m) => Failure::Usage(m),
        TreeError::LeafCountNotReached { leaves, tries } => Failure::Domain(format!(
            "no tree with {leaves} extant species in {tries} attempts"
        )),
        e => Failure::Runtime(e.into()),
    };
    let (complete, reconstructed) = match a.leaves {
        Some(n) => {
            let (c, r) = simulate_reconstructed(a.lambda, a.mu, a.age, n, a.max_tries, &mut rng)
                .map_err(bad_input)?;
            (c, Some(r))
        }
        None => {
            let c = simulate_crbd(a.lambda, a.mu, a.age, &mut rng).map_err(bad_input)?;
            match c.prune() {
                Ok(r) => (c, Some(r)),
                Err(TreeError::FullyExtinct) => (c, None),
                Err(e) => return Err(e.into()),
            }
        }
    };
    write_text(&a.complete, &(write_newick(&complete) + "\n"))?;
    let stats = complete.stats();
    let Some(reconstructed) = reconstructed else {
        return Err(Failure::Domain(format!(
            "every lineage went extinct ({} extinctions); wrote only {}",
            stats.extinctions,
            a.complete.display()
        )));
    };
    write_text(&a.reconstructed, &(write_newick(&reconstructed) + "\n"))?;
    println!(
        "extant {} extinct {} speciations {} length {}",
        stats.extant, stats.extinctions, stats.speciations, stats.length
    );
    Ok(())
}

fn batch_config(r: &RunArgs) -> Result<BatchConfig, Failure> {
    if r.particles == 0 || r.runs == 0 {
        return usage("--particles and --runs must be at least 1");
    }
    Ok(BatchConfig {
        starvation_cap: r.starvation_cap,
        ..BatchConfig::new(r.method.into(), r.particles, r.runs, r.seed)
    })
}

fn run_any(
    program: &Program,
    cfg: &BatchConfig,
) -> Result<(Vec<RunRecord>, BatchSummary), SmcError> {
    match program {
        Program::Crbd(p) => batch(p, cfg),
        Program::Bisse(p) => batch(p, cfg),
        Program::Lgss(p) => batch(p, cfg),
        Program::Indicator(p) => batch(p, cfg),
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Serialize)]
struct InferSummary {
    model: &'static str,
    method: &'static str,
    sampling: &'static str,
    seed: u64,
    #[serde(rename = "M")]
    runs: usize,
    #[serde(rename = "N")]
    particles: usize,
    checkpoints: usize,
    ress: Option<f64>,
    car: Option<f64>,
    var_log_z: Option<f64>,
    rho: Option<f64>,
    degenerate_runs: usize,
    failed_runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_log_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_score: Option<f64>,
}

fn model_name(m: ModelKind) -> &'static str {
    match m {
        ModelKind::Crbd => "crbd",
        ModelKind::Bisse => "bisse",
        ModelKind::Lgss => "lgss",
        ModelKind::Indicator => "indicator",
    }
}

pub fn infer(a: InferArgs) -> Result<(), Failure> {
    if a.kalman_check && a.model.model != ModelKind::Lgss {
        return usage("--kalman-check only applies to lgss");
    }
    let program = setup::build(&a.model, a.sampling)?;
    let cfg = batch_config(&a.run)?;
    let (records, summary) = run_any(&program, &cfg)?;
    let method = cfg.method.name();
    let sampling = a.sampling.name();

    if let Some(path) = &a.out_csv {
        let mut w =
            csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record([
            "run",
            "method",
            "sampling",
            "N",
            "logZ",
            "propagations",
            "degenerate",
            "error",
        ])?;
        for r in &records {
            w.write_record([
                r.run.to_string(),
                method.to_string(),
                sampling.to_string(),
                cfg.particles.to_string(),
                r.log_z.to_string(),
                r.propagations.to_string(),
                r.degenerate.to_string(),
                r.error.as_ref().map(|e| e.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
    }

    let (oracle_log_z, z_score) = match (&program, a.kalman_check) {
        (Program::Lgss(p), true) => {
            let oracle = p.log_evidence();
            let log_z: Vec<f64> = records
                .iter()
                .filter(|r| !r.failed())
                .map(|r| r.log_z)
                .collect();
            let (mean, se) = mean_ratio(&log_z, oracle);
            (Some(oracle), finite((mean - 1.0) / se))
        }
        _ => (None, None),
    };
    let out = InferSummary {
        model: model_name(a.model.model),
        method,
        sampling,
        seed: cfg.seed,
        runs: summary.runs,
        particles: summary.particles,
        checkpoints: summary.checkpoints,
        ress: finite(summary.ress),
        car: finite(summary.car),
        var_log_z: finite(summary.var_log_z),
        rho: finite(summary.rho),
        degenerate_runs: summary.degenerate_runs,
        failed_runs: summary.failed_runs,
        oracle_log_z,
        z_score,
    };
    let json = serde_json::to_string_pretty(&out)? + "\n";
    match &a.out_json {
        Some(p) => write_text(p, &json)?,
        None => io::stdout().write_all(json.as_bytes())?,
    }
    if summary.failed_runs == summary.runs {
        let first = records
            .iter()
            .find_map(|r| r.error.as_ref())
            .expect("failed runs carry errors");
        return Err(Failure::Runtime(anyhow::anyhow!(
            "all {} runs failed; first: {first}",
            summary.runs
        )));
    }
    Ok(())
}

pub fn posterior(a: PosteriorArgs) -> Result<(), Failure> {
    if !matches!(a.model.model, ModelKind::Crbd | ModelKind::Bisse) {
        return usage("posterior needs --model crbd or bisse");
    }
    let program = setup::build(&a.model, SamplingArg::Delayed)?;
    let cfg = batch_config(&a.run)?;
    let result = match &program {
        Program::Crbd(p) => mixture_from_batch(p, &cfg),
        Program::Bisse(p) => mixture_from_batch(p, &cfg),
        _ => unreachable!("checked above"),
    };
    let (_, mixture) = match result {
        Err(PosteriorError::AllDegenerate) => {
            return Err(Failure::Domain(
                "every run is degenerate; no posterior".into(),
            ))
        }
        r => r?,
    };

    let mut w = csv::Writer::from_path(&a.out_csv)
        .with_context(|| format!("creating {}", a.out_csv.display()))?;
    w.write_record(["rate", "component", "weight", "shape", "scale"])?;
    for rate in &mixture.rates {
        for c in &rate.components {
            w.write_record([
                rate.rate.clone(),
                c.run.to_string(),
                c.weight.to_string(),
                c.shape.to_string(),
                c.scale.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let sink: Box<dyn Write> = match &a.out_summary {
        Some(p) => {
            Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?)
        }
        None => Box::new(io::stdout()),
    };
    let mut s = csv::Writer::from_writer(sink);
    s.write_record(["rate", "mean", "q025", "q500", "q975"])?;
    for rate in &mixture.rates {
        s.write_record([
            rate.rate.clone(),
            rate.mean().to_string(),
            rate.quantile(0.025).to_string(),
            rate.quantile(0.5).to_string(),
            rate.quantile(0.975).to_string(),
        ])?;
    }
    s.flush()?;
    Ok(())
}

/// One line of the toycheck report.
struct Check {
    label: String,
    pass: bool,
    detail: String,
}

fn ratio_check(label: &str, records: &[RunRecord], log_oracle: f64) -> Check {
    if let Some(e) = records.iter().find_map(|r| r.error.as_ref()) {
        return Check {
            label: label.into(),
            pass: false,
            detail: format!("run failed: {e}"),
        };
    }
    let log_z: Vec<f64> = records.iter().map(|r| r.log_z).collect();
    let (mean, se) = mean_ratio(&log_z, log_oracle);
    let z = (mean - 1.0) / se;
    Check {
        label: label.into(),
        pass: z.abs() < 3.0,
        detail: format!("mean Z/Z* {mean:.5} se {se:.5} z {z:.3}"),
    }
}

pub fn toycheck(a: ToycheckArgs) -> Result<(), Failure> {
    if a.particles == 0 || a.runs == 0 {
        return usage("--particles and --runs must be at least 1");
    }
    let cfg = |method| BatchConfig {
        starvation_cap: a.starvation_cap,
        ..BatchConfig::new(method, a.particles, a.runs, a.seed)
    };
    let mut checks = Vec::new();
    match a.model {
        ToyKind::Lgss => {
            let p = LgssProgram::new(setup::lgss_config(&a.toy))?;
            let oracle = p.log_evidence();
            println!("lgss: T {} exact log Z {oracle}", p.checkpoints());
            for method in [Method::Bpf, Method::Apf] {
                let (records, _) = batch(&p, &cfg(method))?;
                checks.push(ratio_check(method.name(), &records, oracle));
            }
        }
        ToyKind::Indicator => {
            let ic = setup::indicator_config(&a.toy);
            if ic.ar != 0.0 {
                return usage("toycheck indicator needs --ar 0 for its exact answer");
            }
            let p = IndicatorProgram::new(ic)?;
            let accept = ic.acceptance_probability();
            let t = p.checkpoints();
            println!("indicator: T {t} acceptance probability {accept}");
            let (bpf, _) = batch(&p, &cfg(Method::Bpf))?;
            let (apf, _) = batch(&p, &cfg(Method::Apf))?;
            if accept == 0.0 {
                checks.push(Check {
                    label: "bpf".into(),
                    pass: false,
                    detail: "every run is degenerate: no particle can satisfy the indicator".into(),
                });
            } else {
                let log_oracle = t as f64 * accept.ln();
                checks.push(ratio_check("bpf", &bpf, log_oracle));
                checks.push(ratio_check("apf", &apf, log_oracle));
            }
            checks.extend(propagation_checks(&apf, a.particles, accept, t));
        }
    }
    let mut pass = true;
    for c in &checks {
        println!(
            "{:<12} {} {}",
            c.label,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
        pass &= c.pass;
    }
    if pass {
        Ok(())
    } else {
        Err(Failure::Domain("toycheck failed".into()))
    }
}

/// Mean alive-filter propagations per checkpoint against `(N + 1) / p`.
fn propagation_checks(
    records: &[RunRecord],
    particles: usize,
    accept: f64,
    checkpoints: usize,
) -> Vec<Check> {
    if let Some(e) = records.iter().find_map(|r| r.error.as_ref()) {
        let why = match e {
            SmcError::Starvation { .. } => " (starvation: the acceptance probability is too small)",
            _ => "",
        };
        return vec![Check {
            label: "apf P_t".into(),
            pass: false,
            detail: format!("{e}{why}"),
        }];
    }
    let expected = (particles + 1) as f64 / accept;
    (0..checkpoints)
        .map(|t| {
            let xs: Vec<f64> = records.iter().map(|r| r.per_checkpoint[t] as f64).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            let se = (var / n).sqrt();
            let z = (mean - expected) / se;
            Check {
                label: format!("apf P_{}", t + 1),
                pass: z.abs() < 3.0,
                detail: format!("mean {mean:.3} expected {expected:.3} z {z:.3}"),
            }
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
