//! Monte Carlo estimate of pairwise misclassification overlap.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::data::MixtureParams;
use crate::error::Result;
use crate::gauss::FactoredGaussian;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Overlap {
    /// Entry (g, g'): probability that a draw from g has a larger weighted
    /// density under g' than under g.
    pub directed: DMatrix<f64>,
    /// Largest ω_{g→g'} + ω_{g'→g} over unordered pairs.
    pub max: f64,
}

pub fn estimate_overlap(params: &MixtureParams, n_mc: usize, rng: &mut Rng) -> Result<Overlap> {
    let (g, p) = (params.g(), params.p());
    let comps: Vec<FactoredGaussian> =
        (0..g).map(|k| FactoredGaussian::new(&params.means[k], &params.covariances[k])).collect::<Result<_>>()?;
    let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let mut directed = DMatrix::zeros(g, g);
    let mut e = vec![0.0; p];
    let mut x = vec![0.0; p];
    let mut terms = vec![0.0; g];
    for src in 0..g {
        let mut hits = vec![0usize; g];
        for _ in 0..n_mc {
            e.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            comps[src].transform(&e, &mut x);
            for k in 0..g {
                terms[k] = log_w[k] + comps[k].log_density(&x);
            }
            for k in 0..g {
                if k != src && terms[k] > terms[src] {
                    hits[k] += 1;
                }
            }
        }
        for k in 0..g {
            directed[(src, k)] = hits[k] as f64 / n_mc as f64;
        }
    }
    let mut max: f64 = 0.0;
    for a in 0..g {
        for b in a + 1..g {
            max = max.max(directed[(a, b)] + directed[(b, a)]);
        }
    }
    Ok(Overlap { directed, max })
}
