#![allow(dead_code)]

use mfrde::rng::seeded;
use mfrde::{AxisBox, EstimatorConfig, Points, SplitTree};
use rand::Rng as _;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn uniform_points(domain: &AxisBox, n: usize, seed: u64) -> Points {
    let mut rng = seeded(seed);
    let mut p = Points::with_capacity(domain.dim(), n);
    let mut x = vec![0.0; domain.dim()];
    for _ in 0..n {
        for (j, v) in x.iter_mut().enumerate() {
            *v = rng.random_range(domain.lo()[j]..=domain.hi()[j]);
        }
        p.push(&x).unwrap();
    }
    p
}

/// Per-block integer sums over trees of the points sharing `x`'s cell,
/// recomputed from scratch by scanning every leaf cell and every point.
pub struct Naive {
    pub sums: Vec<u64>,
    pub denominator: f64,
}

impl Naive {
    pub fn at(config: &EstimatorConfig, domain: &AxisBox, data: &Points, x: &[f64]) -> Naive {
        let forest = config.forest(domain.clone()).unwrap();
        let assignment = config.block_assignment(data.len()).unwrap();
        let mut sums = vec![0u64; assignment.blocks.len()];
        for tree in forest.trees() {
            let cell = (0..tree.leaves())
                .map(|l| tree.leaf_cell(domain, l).unwrap())
                .find(|c| domain.cell_contains(c, x))
                .expect("x lies in some cell");
            for (s, block) in assignment.blocks.iter().enumerate() {
                sums[s] += block
                    .iter()
                    .filter(|&&i| domain.cell_contains(&cell, data.get(i)))
                    .count() as u64;
            }
        }
        let cell_vol = domain.volume() / (1u64 << config.depth) as f64;
        let denominator = config.trees as f64 * assignment.m as f64 * cell_vol;
        Naive { sums, denominator }
    }

    pub fn sfde(&self, s: usize) -> f64 {
        self.sums[s] as f64 / self.denominator
    }

    /// The ceil(S/2)-th smallest block density.
    pub fn median(&self) -> f64 {
        let mut sorted = self.sums.clone();
        sorted.sort_unstable();
        sorted[sorted.len().div_ceil(2) - 1] as f64 / self.denominator
    }
}

/// Goodness of fit of the per-axis split counts on a leaf's path to the
/// multinomial with equal axis probabilities.
pub fn split_count_p_value(dim: usize, depth: u32, trees: usize, seed: u64) -> f64 {
    use std::collections::HashMap;
    let mut rng = seeded(seed);
    let mut observed: HashMap<Vec<u32>, usize> = HashMap::new();
    for _ in 0..trees {
        let tree = SplitTree::random(dim, depth, &mut rng).unwrap();
        let leaf = rng.random_range(0..tree.leaves());
        *observed
            .entry(tree.path_split_counts(dim, leaf))
            .or_default() += 1;
    }
    let outcomes = compositions(depth, dim);
    let mut cells: Vec<(f64, usize)> = outcomes
        .iter()
        .map(|k| {
            (
                trees as f64 * multinomial_pmf(k),
                *observed.get(k).unwrap_or(&0),
            )
        })
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Pool the rarest outcomes until every cell expects at least five.
    let mut pooled: Vec<(f64, usize)> = Vec::new();
    let mut acc = (0.0, 0);
    for (e, o) in cells {
        acc = (acc.0 + e, acc.1 + o);
        if acc.0 >= 5.0 {
            pooled.push(acc);
            acc = (0.0, 0);
        }
    }
    if acc.0 > 0.0 {
        let last = pooled.last_mut().unwrap();
        *last = (last.0 + acc.0, last.1 + acc.1);
    }
    let stat: f64 = pooled
        .iter()
        .map(|&(e, o)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = (pooled.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn multinomial_pmf(k: &[u32]) -> f64 {
    let n: u32 = k.iter().sum();
    let ln_fact = |v: u32| (1..=v).map(|i| (i as f64).ln()).sum::<f64>();
    let ln_coef = ln_fact(n) - k.iter().map(|&v| ln_fact(v)).sum::<f64>();
    (ln_coef - n as f64 * (k.len() as f64).ln()).exp()
}
