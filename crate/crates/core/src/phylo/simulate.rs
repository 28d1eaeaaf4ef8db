//! Forward simulation of complete CRBD trees.

use rand::Rng;

use super::{Clade, Tree, TreeError};
use crate::dists::sample_exponential;

/// Draws a complete tree from the constant-rate birth-death process started
/// by a single lineage at age `origin`.
///
/// The root is the origin with one child. Each lineage waits an
/// `Exponential(λ + μ)` time and then speciates with probability `λ / (λ + μ)`
/// or goes extinct; lineages reaching the present become extant leaves.
/// Extant leaves are labelled `t1, t2, ...` and extinct ones `x1, x2, ...` in
/// pre-order.
pub fn simulate_crbd<R: Rng + ?Sized>(
    lambda: f64,
    mu: f64,
    origin: f64,
    rng: &mut R,
) -> Result<Tree, TreeError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(TreeError::InvalidParameter(format!(
            "speciation rate {lambda}"
        )));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(TreeError::InvalidParameter(format!("extinction rate {mu}")));
    }
    if !(origin > 0.0 && origin.is_finite()) {
        return Err(TreeError::InvalidParameter(format!("origin age {origin}")));
    }
    let mut root = Clade::node(origin, vec![lineage(lambda, mu, origin, rng)]);
    let (mut extant, mut extinct) = (0, 0);
    label_leaves(&mut root, &mut extant, &mut extinct);
    Tree::from_clade(&root)
}

fn lineage<R: Rng + ?Sized>(lambda: f64, mu: f64, start: f64, rng: &mut R) -> Clade {
    let end = start - sample_exponential(lambda + mu, rng);
    if end < 0.0 {
        return Clade::leaf(0.0, None);
    }
    if rng.random::<f64>() * (lambda + mu) < lambda {
        let left = lineage(lambda, mu, end, rng);
        let right = lineage(lambda, mu, end, rng);
        Clade::node(end, vec![left, right])
    } else {
        Clade::leaf(end, None)
    }
}

fn label_leaves(c: &mut Clade, extant: &mut usize, extinct: &mut usize) {
    if c.children.is_empty() {
        if c.age == 0.0 {
            *extant += 1;
            c.label = Some(format!("t{extant}"));
        } else {
            *extinct += 1;
            c.label = Some(format!("x{extinct}"));
        }
    }
    for child in &mut c.children {
        label_leaves(child, extant, extinct);
    }
}

/// Simulates complete trees until one has exactly `leaves` extant species and
/// returns it together with its reconstruction.
pub fn simulate_reconstructed<R: Rng + ?Sized>(
    lambda: f64,
    mu: f64,
    origin: f64,
    leaves: usize,
    max_tries: usize,
    rng: &mut R,
) -> Result<(Tree, Tree), TreeError> {
    for _ in 0..max_tries {
        let complete = simulate_crbd(lambda, mu, origin, rng)?;
        if complete.stats().extant == leaves {
            let pruned = complete.prune()?;
            return Ok((complete, pruned));
        }
    }
    Err(TreeError::LeafCountNotReached {
        leaves,
        tries: max_tries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn no_events_gives_single_branch() {
        let t = simulate_crbd(0.0, 0.0, 2.0, &mut stream(1)).unwrap();
        assert_eq!(t.len(), 2);
        let s = t.stats();
        assert_eq!((s.extant, s.speciations, s.branches), (1, 0, 1));
        assert_eq!(s.length, 2.0);
        assert_eq!(t.prune().unwrap(), t);
    }

    #[test]
    fn pure_death_extinction_fraction() {
        // P(extinct by the present) = 1 - exp(-μ τ).
        let n = 100_000;
        let mut rng = stream(2);
        let extinct = (0..n)
            .filter(|_| {
                simulate_crbd(0.0, 1.0, 1.0, &mut rng)
                    .unwrap()
                    .stats()
                    .extant
                    == 0
            })
            .count() as f64
            / n as f64;
        let p = 1.0 - (-1.0f64).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((extinct - p).abs() < 3.0 * se, "{extinct} vs {p}");
    }

    #[test]
    fn yule_mean_leaf_count() {
        // E[extant] = exp(λ τ) for a pure-birth process from one lineage.
        let n = 100_000;
        let mut rng = stream(3);
        let counts: Vec<f64> = (0..n)
            .map(|_| {
                simulate_crbd(1.0, 0.0, 1.0, &mut rng)
                    .unwrap()
                    .stats()
                    .extant as f64
            })
            .collect();
        let mean = counts.iter().sum::<f64>() / n as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let e = 1.0f64.exp();
        assert!((mean - e).abs() < 3.0 * se, "{mean} vs {e} (se {se})");
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(simulate_crbd(-1.0, 0.0, 1.0, &mut stream(0)).is_err());
        assert!(simulate_crbd(1.0, 0.0, 0.0, &mut stream(0)).is_err());
    }

    #[test]
    fn conditioned_leaf_count() {
        let (complete, pruned) =
            simulate_reconstructed(1.0, 0.5, 5.0, 10, 10_000, &mut stream(4)).unwrap();
        assert_eq!(pruned.stats().extant, 10);
        assert_eq!(complete.stats().extant, 10);
        assert_eq!(pruned.stats().extinctions, 0);
    }
}
