//! Initial mixture parameters from trimmed clustering on random variable
//! subsets, pooled by a trimmed k-means of the resulting centers.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;

use super::tclust::mini_tclust;
use super::InitConfig;
use crate::constraints::constrain_covariances;
use crate::data::{CellMask, DataSet, MixtureParams};
use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::stats::count_for_rate;

/// Resampling budget per repetition when a subset leaves too few clean rows.
const SUBSET_RETRIES: usize = 50;

/// A component center known only on some coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialCenter {
    /// NaN marks an absent coordinate.
    pub values: Vec<f64>,
}

impl PartialCenter {
    fn present(&self, j: usize) -> bool {
        self.values[j].is_finite()
    }
}

/// Mean squared difference over coordinates present in both; infinite
/// when they share none.
pub fn partial_distance(a: &PartialCenter, b: &PartialCenter) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (x, y) in a.values.iter().zip(&b.values) {
        if x.is_finite() && y.is_finite() {
            sum += (x - y) * (x - y);
            count += 1;
        }
    }
    if count == 0 { f64::INFINITY } else { sum / count as f64 }
}

/// Output of the trimmed k-means over pooled centers.
#[derive(Debug, Clone)]
pub struct CenterClustering {
    pub centers: Vec<PartialCenter>,
    /// Group of every pooled center; `None` when trimmed.
    pub assignment: Vec<Option<usize>>,
    pub objective: f64,
}

fn assign(items: &[PartialCenter], centers: &[PartialCenter]) -> Vec<(usize, f64)> {
    items
        .iter()
        .map(|it| {
            let mut best = (0, f64::INFINITY);
            for (k, c) in centers.iter().enumerate() {
                let d = partial_distance(it, c);
                if d < best.1 {
                    best = (k, d);
                }
            }
            best
        })
        .collect()
}

fn trimmed_assignment(items: &[PartialCenter], centers: &[PartialCenter], n_trim: usize) -> (Vec<Option<usize>>, f64) {
    let nearest = assign(items, centers);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| nearest[b].1.total_cmp(&nearest[a].1).then(b.cmp(&a)));
    let mut out: Vec<Option<usize>> = nearest.iter().map(|&(k, _)| Some(k)).collect();
    for &i in order.iter().take(n_trim) {
        out[i] = None;
    }
    let objective = (0..items.len()).filter(|&i| out[i].is_some()).map(|i| nearest[i].1).sum();
    (out, objective)
}

/// Trimmed k-means over centers with absent coordinates. Each start takes
/// the `g` centers of one repetition as seeds; centers are updated
/// coordinatewise from the untrimmed members that carry the coordinate.
pub fn trimmed_kmeans_centers(
    items: &[PartialCenter],
    g: usize,
    alpha: f64,
    n_start: usize,
    n_iter: usize,
    rng: &mut crate::rng::Rng,
) -> CenterClustering {
    let n_sets = items.len() / g;
    let n_trim = count_for_rate(alpha, items.len()).min(items.len().saturating_sub(g));
    let p = items[0].values.len();
    let mut best: Option<CenterClustering> = None;
    for _ in 0..n_start.max(1) {
        let r = rng.random_range(0..n_sets);
        let mut centers: Vec<PartialCenter> = items[r * g..(r + 1) * g].to_vec();
        for _ in 0..n_iter {
            let (groups, _) = trimmed_assignment(items, &centers, n_trim);
            for (k, center) in centers.iter_mut().enumerate() {
                for j in 0..p {
                    let vals: Vec<f64> = items
                        .iter()
                        .zip(&groups)
                        .filter(|(it, gr)| **gr == Some(k) && it.present(j))
                        .map(|(it, _)| it.values[j])
                        .collect();
                    if !vals.is_empty() {
                        center.values[j] = vals.iter().sum::<f64>() / vals.len() as f64;
                    }
                }
            }
        }
        let (assignment, objective) = trimmed_assignment(items, &centers, n_trim);
        if best.as_ref().is_none_or(|b| objective < b.objective) {
            best = Some(CenterClustering { centers, assignment, objective });
        }
    }
    best.expect("at least one start")
}

struct SubsetFit {
    vars: Vec<usize>,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
}

fn fit_subset(data: &DataSet, mask: &CellMask, g: usize, q: usize, cfg: &InitConfig, stream: SeedStream) -> Result<SubsetFit> {
    let (n, p) = (data.n(), data.p());
    let mut rng = stream.rng();
    for _ in 0..SUBSET_RETRIES {
        let mut vars = sample(&mut rng, p, q).into_vec();
        vars.sort_unstable();
        let rows: Vec<usize> = (0..n).filter(|&i| vars.iter().all(|&j| mask.get(i, j))).collect();
        if rows.len() < g * (q + 1) {
            continue;
        }
        let x = DMatrix::from_fn(rows.len(), q, |a, b| data.value(rows[a], vars[b]));
        let fit = mini_tclust(&x, g, cfg.alpha_a1, cfg.tclust_c, cfg.tclust_starts, cfg.tclust_iters, &mut rng)?;
        return Ok(SubsetFit { vars, means: fit.means, covs: fit.covariances });
    }
    Err(Error::TooFewCleanRows { attempts: SUBSET_RETRIES })
}

/// Reliable-cell mean and variance of every column.
fn column_moments(data: &DataSet, mask: &CellMask) -> (Vec<f64>, Vec<f64>) {
    (0..data.p())
        .map(|j| {
            let mut vals: Vec<f64> = (0..data.n()).filter(|&i| mask.get(i, j)).map(|i| data.value(i, j)).collect();
            if vals.is_empty() {
                vals = (0..data.n()).filter(|&i| data.is_observed(i, j)).map(|i| data.value(i, j)).collect();
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            (m, v.max(1e-8))
        })
        .unzip()
}

/// Initial parameters given the initial mask.
pub fn init_params(data: &DataSet, mask: &CellMask, g: usize, c: f64, cfg: &InitConfig, stream: SeedStream) -> Result<MixtureParams> {
    let (n, p) = (data.n(), data.p());
    let q = p / 2 + 1;
    let fits: Vec<SubsetFit> = (0..cfg.n_rep)
        .into_par_iter()
        .map(|r| fit_subset(data, mask, g, q.min(p), cfg, stream.child(r as u64)))
        .collect::<Result<_>>()?;

    let mut items = Vec::with_capacity(cfg.n_rep * g);
    for f in &fits {
        for m in &f.means {
            let mut values = vec![f64::NAN; p];
            for (a, &j) in f.vars.iter().enumerate() {
                values[j] = m[a];
            }
            items.push(PartialCenter { values });
        }
    }
    let mut rng = stream.child(u64::MAX).rng();
    let clustering = trimmed_kmeans_centers(&items, g, cfg.alpha_a2, cfg.n_start, cfg.n_iter, &mut rng);
    let (col_mean, col_var) = column_moments(data, mask);

    let means: Vec<DVector<f64>> = clustering
        .centers
        .iter()
        .map(|c| DVector::from_fn(p, |j, _| if c.present(j) { c.values[j] } else { col_mean[j] }))
        .collect();

    // Entrywise average of the covariance blocks assigned to each group.
    let mut covs = Vec::with_capacity(g);
    for k in 0..g {
        let mut sum = DMatrix::<f64>::zeros(p, p);
        let mut count = DMatrix::<f64>::zeros(p, p);
        for (idx, gr) in clustering.assignment.iter().enumerate() {
            if *gr != Some(k) {
                continue;
            }
            let f = &fits[idx / g];
            let s = &f.covs[idx % g];
            for (a, &ja) in f.vars.iter().enumerate() {
                for (b, &jb) in f.vars.iter().enumerate() {
                    sum[(ja, jb)] += s[(a, b)];
                    count[(ja, jb)] += 1.0;
                }
            }
        }
        let avg = DMatrix::from_fn(p, p, |a, b| {
            if count[(a, b)] > 0.0 {
                sum[(a, b)] / count[(a, b)]
            } else if a == b {
                col_var[a]
            } else {
                0.0
            }
        });
        covs.push((&avg + avg.transpose()) * 0.5);
    }

    // Weights from nearest-mean counts over each row's reliable coordinates.
    let mut counts = vec![0.0f64; g];
    let mut assigned = 0.0f64;
    for i in 0..n {
        let row = PartialCenter { values: (0..p).map(|j| if mask.get(i, j) { data.value(i, j) } else { f64::NAN }).collect() };
        let mut best = (0, f64::INFINITY);
        for (k, m) in means.iter().enumerate() {
            let d = partial_distance(&row, &PartialCenter { values: m.iter().copied().collect() });
            if d < best.1 {
                best = (k, d);
            }
        }
        if best.1.is_finite() {
            counts[best.0] += 1.0;
            assigned += 1.0;
        }
    }
    let floor = 1.0 / n as f64;
    let mut weights: Vec<f64> = counts.iter().map(|c| if assigned > 0.0 { (c / assigned).max(floor) } else { 1.0 / g as f64 }).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let sizes: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let covariances = constrain_covariances(&covs, &sizes, c)?;
    let params = MixtureParams::new(weights, means, covariances)?;
    params.validate()?;
    Ok(params)
}
