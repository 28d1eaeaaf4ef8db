//! Posterior mixtures from delayed runs cover the generating rate.

use phyloalive::phylo::simulate_crbd;
use phyloalive::{
    derive_seed, mixture_from_batch, stream, BatchConfig, CrbdConfig, CrbdProgram, GammaPrior,
    Method, Sampling,
};

#[test]
fn yule_rate_is_covered() {
    let truth = 1.0;
    let prior = GammaPrior::new(1.0, 1.0).unwrap();
    let reps = 50;
    let mut covered = 0;
    for rep in 0..reps {
        let complete = simulate_crbd(truth, 0.0, 2.5, &mut stream(derive_seed(99, rep))).unwrap();
        let observed = complete.prune().unwrap();
        let program = CrbdProgram::new(CrbdConfig::with_priors(
            observed,
            prior,
            prior,
            Sampling::Delayed,
        ))
        .unwrap();
        let cfg = BatchConfig::new(Method::Apf, 128, 16, rep);
        let (_, mixture) = mixture_from_batch(&program, &cfg).unwrap();
        let lambda = mixture.rate("lambda").unwrap();
        let total: f64 = lambda.components.iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        if lambda.quantile(0.025) <= truth && truth <= lambda.quantile(0.975) {
            covered += 1;
        }
    }
    assert!(covered >= 45, "covered {covered} of {reps}");
}
