//! Median-of-forests density estimation.
//!
//! The sample is split into `S` disjoint blocks of `m` points by a uniform
//! permutation. Every block is histogrammed on each of `T` random split trees
//! (one forest shared by all blocks). A block's forest density at `x` is the
//! average over trees of `count / (m * cell volume)`; the estimator takes the
//! `ceil(S/2)`-th smallest block density at `x` and divides by its integral
//! over the domain.
//!
//! Because all block densities at a point share the denominator
//! `T * m * cell volume`, the median is selected on exact integer count sums.
//! The normalizer is also accumulated in integers, so it does not depend on
//! evaluation order or thread count.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Forest, Points, SplitTree};
use crate::quadrature::NodeSet;
use crate::rng::{self, tags, Rng};

/// Default cap on the number of cells visited by exact-dyadic quadrature.
pub const DEFAULT_CELL_BUDGET: u64 = 1 << 24;

/// Grid resolution used when exact-dyadic quadrature is over budget.
pub const FALLBACK_GRID_POINTS: usize = 100;

/// Disjoint equal-size blocks cut from a random permutation of `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockAssignment {
    pub n: usize,
    pub m: usize,
    pub blocks: Vec<Vec<usize>>,
    /// The `n mod m` indices left over after the last full block.
    pub dropped: Vec<usize>,
}

impl BlockAssignment {
    pub fn new(n: usize, m: usize, rng: &mut Rng) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "block size must be at least 1".into(),
            ));
        }
        if m > n {
            return Err(Error::BlockSizeExceedsSampleSize { m, n });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        let s = n / m;
        let dropped = perm[s * m..].to_vec();
        let blocks = perm[..s * m]
            .chunks_exact(m)
            .map(<[usize]>::to_vec)
            .collect();
        Ok(Self {
            n,
            m,
            blocks,
            dropped,
        })
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }
}

/// Block size, either absolute or as a fraction of the sample size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSize {
    Count(usize),
    Ratio(f64),
}

impl BlockSize {
    /// `Ratio(r)` resolves to `round(r * n)`.
    pub fn resolve(self, n: usize) -> Result<usize> {
        let m = match self {
            BlockSize::Count(m) => m,
            BlockSize::Ratio(r) => {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "block size ratio must be positive, got {r}"
                    )));
                }
                (r * n as f64).round() as usize
            }
        };
        if m == 0 {
            return Err(Error::InvalidArgument(format!(
                "block size resolves to 0 for n = {n}"
            )));
        }
        if m > n {
            return Err(Error::BlockSizeExceedsSampleSize { m, n });
        }
        Ok(m)
    }
}

/// How the integral of the median density over the domain is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", content = "params", rename_all = "kebab-case")]
pub enum Quadrature {
    /// Exact: sums over the `2^(p d)` cells of the finest dyadic grid, on which
    /// every tree's partition is piecewise constant.
    ExactDyadic,
    /// Average over the inclusive-endpoint lattice with `points_per_axis`
    /// nodes per axis, times the domain volume.
    RegularGrid { points_per_axis: usize },
    /// Domain volume times the mean over `draws` uniform points.
    MonteCarlo { draws: usize },
}

impl Quadrature {
    pub(crate) fn validate(&self) -> Result<()> {
        match *self {
            Quadrature::RegularGrid { points_per_axis } if points_per_axis < 2 => Err(
                Error::InvalidArgument("grid quadrature needs at least 2 points per axis".into()),
            ),
            Quadrature::MonteCarlo { draws: 0 } => Err(Error::InvalidArgument(
                "Monte Carlo quadrature needs at least one draw".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Integrates `f` over `domain` with this rule. `depth` is only used by
    /// exact-dyadic quadrature and `seed` only by Monte Carlo; pass the same
    /// values as the model to reproduce its normalizer's nodes.
    pub fn integrate<F>(&self, domain: &AxisBox, depth: u32, seed: u64, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let nodes = NodeSet::new(domain, *self, depth, seed)?;
        let partials: Vec<(f64, f64)> = (0..nodes.chunks())
            .into_par_iter()
            .map_init(
                || Points::new(domain.dim()),
                |buf, c| {
                    nodes.fill_chunk(c, buf);
                    let mut acc = Neumaier::default();
                    for x in buf.iter() {
                        acc.add(f(x));
                    }
                    (acc.sum, acc.comp)
                },
            )
            .collect();
        let mut total = Neumaier::default();
        for (s, c) in partials {
            total.add(s);
            total.add(c);
        }
        Ok(total.value() * nodes.weight())
    }
}

impl fmt::Display for Quadrature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quadrature::ExactDyadic => write!(f, "exact"),
            Quadrature::RegularGrid { points_per_axis } => write!(f, "grid:{points_per_axis}"),
            Quadrature::MonteCarlo { draws } => write!(f, "mc:{draws}"),
        }
    }
}

impl FromStr for Quadrature {
    type Err = Error;

    /// Parses `exact`, `grid:G` or `mc:N`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "unknown quadrature '{s}' (use exact, grid:G or mc:N)"
            ))
        };
        let q = match s.split_once(':') {
            None if s == "exact" || s == "exact-dyadic" => Quadrature::ExactDyadic,
            Some(("grid", g)) => Quadrature::RegularGrid {
                points_per_axis: g.parse().map_err(|_| bad())?,
            },
            Some(("mc", n)) => Quadrature::MonteCarlo {
                draws: n.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        q.validate()?;
        Ok(q)
    }
}

#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Estimation domain: fixed, or the data's bounding box widened by a
/// relative margin.
#[derive(Clone, Debug, PartialEq)]
pub enum DomainSpec {
    Fixed(AxisBox),
    Auto { margin: f64 },
}

impl DomainSpec {
    pub fn resolve(&self, data: &Points) -> Result<AxisBox> {
        let b = match self {
            DomainSpec::Fixed(b) => b.clone(),
            DomainSpec::Auto { margin } => AxisBox::bounding(data, *margin)?,
        };
        if b.dim() != data.dim() {
            return Err(Error::DimensionMismatch {
                expected: b.dim(),
                found: data.dim(),
            });
        }
        Ok(b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub block_size: BlockSize,
    pub trees: usize,
    pub depth: u32,
    pub seed: u64,
    /// `None` picks exact-dyadic when within `cell_budget`, otherwise a
    /// 100-per-axis grid.
    pub quadrature: Option<Quadrature>,
    pub domain: DomainSpec,
    pub cell_budget: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            block_size: BlockSize::Ratio(0.1),
            trees: 20,
            depth: 6,
            seed: 0,
            quadrature: None,
            domain: DomainSpec::Auto { margin: 0.0 },
            cell_budget: DEFAULT_CELL_BUDGET,
        }
    }
}

impl EstimatorConfig {
    /// The block assignment `fit` uses for a sample of size `n`.
    pub fn block_assignment(&self, n: usize) -> Result<BlockAssignment> {
        let m = self.block_size.resolve(n)?;
        BlockAssignment::new(
            n,
            m,
            &mut rng::seeded(rng::derive_seed(self.seed, tags::BLOCKS)),
        )
    }

    /// The forest `fit` builds over `domain`.
    pub fn forest(&self, domain: AxisBox) -> Result<Forest> {
        Forest::build(
            domain,
            self.depth,
            self.trees,
            rng::derive_seed(self.seed, tags::FOREST),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::InvalidArgument(
                "tree count must be at least 1".into(),
            ));
        }
        if let Some(q) = &self.quadrature {
            q.validate()?;
        }
        Ok(())
    }
}

pub(crate) fn resolve_quadrature(
    requested: Option<Quadrature>,
    dim: usize,
    depth: u32,
    budget: u64,
) -> Result<Quadrature> {
    let cells = 1u128 << (depth as u128 * dim as u128).min(127);
    match requested {
        Some(Quadrature::ExactDyadic) if cells > budget as u128 => {
            Err(Error::CellBudgetExceeded { cells, budget })
        }
        Some(q) => Ok(q),
        None if cells <= budget as u128 => Ok(Quadrature::ExactDyadic),
        None => Ok(Quadrature::RegularGrid {
            points_per_axis: FALLBACK_GRID_POINTS,
        }),
    }
}

/// Single-tree histogram density at `x`: the count of `x`'s leaf divided by
/// `m` times the leaf volume.
pub fn stde(
    counts: &[u32],
    tree: &SplitTree,
    domain: &AxisBox,
    m: usize,
    x: &[f64],
) -> Result<f64> {
    if counts.len() != tree.leaves() {
        return Err(Error::InvalidArgument(format!(
            "{} counts for a tree with {} leaves",
            counts.len(),
            tree.leaves()
        )));
    }
    let leaf = tree.leaf_index(domain, x)?;
    let cell_volume = domain.volume() / tree.leaves() as f64;
    Ok(counts[leaf] as f64 / (m as f64 * cell_volume))
}

/// Sparse view of the counts: for each (tree, leaf), the blocks with a
/// non-zero count there.
#[derive(Clone, Debug, Default)]
struct LeafIndex {
    offsets: Vec<usize>,
    entries: Vec<(u32, u32)>,
}

impl LeafIndex {
    fn build(counts: &[u32], blocks: usize, trees: usize, leaves: usize) -> Self {
        let mut offsets = Vec::with_capacity(trees * leaves + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for t in 0..trees {
            for leaf in 0..leaves {
                for s in 0..blocks {
                    let c = counts[(s * trees + t) * leaves + leaf];
                    if c > 0 {
                        entries.push((s as u32, c));
                    }
                }
                offsets.push(entries.len());
            }
        }
        Self { offsets, entries }
    }

    #[inline]
    fn get(&self, slot: usize) -> &[(u32, u32)] {
        &self.entries[self.offsets[slot]..self.offsets[slot + 1]]
    }
}

/// Reusable buffers for evaluating the median at many points.
pub(crate) struct Scratch {
    descent: Vec<(u64, u32)>,
    leaves: Vec<usize>,
    acc: Vec<u32>,
    touched: Vec<u32>,
    values: Vec<u32>,
}

/// A fitted median-of-forests density estimator.
#[derive(Clone, Debug)]
pub struct FittedMfrde {
    forest: Forest,
    n: usize,
    m: usize,
    blocks: usize,
    dropped: usize,
    counts: Vec<u32>,
    normalizer: f64,
    quadrature: Quadrature,
    seed: u64,
    index: LeafIndex,
}

impl FittedMfrde {
    /// Fits the estimator; deterministic given `config.seed`.
    pub fn fit(data: &Points, config: &EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let n = data.len();
        let m = config.block_size.resolve(n)?;
        let domain = config.domain.resolve(data)?;
        let quadrature = resolve_quadrature(
            config.quadrature,
            domain.dim(),
            config.depth,
            config.cell_budget,
        )?;
        let forest = config.forest(domain)?;
        let assignment = config.block_assignment(n)?;
        let counts = block_counts(&forest, data, &assignment);
        Self::assemble(forest, n, m, counts, quadrature, config.seed, None)
    }

    /// Builds a model from precomputed counts laid out as `[block][tree][leaf]`.
    /// The normalizer is computed with `quadrature`.
    pub fn from_counts(
        forest: Forest,
        n: usize,
        m: usize,
        counts: Vec<u32>,
        quadrature: Quadrature,
        seed: u64,
    ) -> Result<Self> {
        Self::assemble(forest, n, m, counts, quadrature, seed, None)
    }

    pub(crate) fn assemble(
        forest: Forest,
        n: usize,
        m: usize,
        counts: Vec<u32>,
        quadrature: Quadrature,
        seed: u64,
        normalizer: Option<f64>,
    ) -> Result<Self> {
        quadrature.validate()?;
        if m == 0 {
            return Err(Error::InvalidArgument(
                "block size must be at least 1".into(),
            ));
        }
        if m > n {
            return Err(Error::BlockSizeExceedsSampleSize { m, n });
        }
        let blocks = n / m;
        let trees = forest.len();
        let leaves = forest.leaves();
        if counts.len() != blocks * trees * leaves {
            return Err(Error::InvalidModel(format!(
                "expected {} counts ({blocks} blocks x {trees} trees x {leaves} leaves), found {}",
                blocks * trees * leaves,
                counts.len()
            )));
        }
        for (st, chunk) in counts.chunks_exact(leaves).enumerate() {
            let total: u64 = chunk.iter().map(|&c| c as u64).sum();
            if total > m as u64 {
                return Err(Error::InvalidModel(format!(
                    "block {} tree {} holds {total} points, more than the block size {m}",
                    st / trees,
                    st % trees
                )));
            }
        }
        let index = LeafIndex::build(&counts, blocks, trees, leaves);
        let mut model = Self {
            forest,
            n,
            m,
            blocks,
            dropped: n - blocks * m,
            counts,
            normalizer: 1.0,
            quadrature,
            seed,
            index,
        };
        model.normalizer = match normalizer {
            Some(z) if z > 0.0 && z.is_finite() => z,
            Some(z) => {
                return Err(Error::InvalidModel(format!(
                    "normalizer {z} is not positive"
                )))
            }
            None => model.compute_normalizer(quadrature)?,
        };
        Ok(model)
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    pub fn domain(&self) -> &AxisBox {
        self.forest.domain()
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    pub fn block_size(&self) -> usize {
        self.m
    }

    /// Number of blocks `S`.
    pub fn blocks(&self) -> usize {
        self.blocks
    }

    /// Points left out of every block (`n mod m`).
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn trees(&self) -> usize {
        self.forest.len()
    }

    pub fn depth(&self) -> u32 {
        self.forest.depth()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// 1-based rank of the block density taken as the median: `ceil(S/2)`.
    pub fn median_rank(&self) -> usize {
        self.blocks.div_ceil(2)
    }

    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    pub fn all_counts(&self) -> &[u32] {
        &self.counts
    }

    /// Leaf counts of block `s` under tree `t`.
    pub fn counts(&self, s: usize, t: usize) -> &[u32] {
        let leaves = self.forest.leaves();
        let start = (s * self.trees() + t) * leaves;
        &self.counts[start..start + leaves]
    }

    /// Common denominator `T * m * cell volume` of all block densities.
    fn denominator(&self) -> f64 {
        self.trees() as f64 * self.m as f64 * self.forest.cell_volume()
    }

    fn check_block(&self, s: usize) -> Result<()> {
        if s >= self.blocks {
            return Err(Error::InvalidArgument(format!(
                "block {s} out of range ({} blocks)",
                self.blocks
            )));
        }
        Ok(())
    }

    fn locate(&self, x: &[f64]) -> Result<Vec<usize>> {
        if !self.domain().contains(x)? {
            return Err(Error::PointOutsideDomain);
        }
        let mut scratch = vec![(0u64, 0u32); self.domain().dim()];
        let mut leaves = vec![0usize; self.trees()];
        self.forest.locate_into(x, &mut scratch, &mut leaves);
        Ok(leaves)
    }

    /// Single-tree density of block `s` under tree `t`.
    pub fn stde_at(&self, s: usize, t: usize, x: &[f64]) -> Result<f64> {
        self.check_block(s)?;
        if t >= self.trees() {
            return Err(Error::InvalidArgument(format!("tree {t} out of range")));
        }
        stde(
            self.counts(s, t),
            &self.forest.trees()[t],
            self.domain(),
            self.m,
            x,
        )
    }

    /// Forest density of block `s`: the mean of its single-tree densities.
    pub fn sfde_at(&self, s: usize, x: &[f64]) -> Result<f64> {
        self.check_block(s)?;
        let leaves = self.locate(x)?;
        let total = self.block_sum(s, &leaves);
        Ok(total as f64 / self.denominator())
    }

    fn block_sum(&self, s: usize, leaves: &[usize]) -> u64 {
        leaves
            .iter()
            .enumerate()
            .map(|(t, &leaf)| self.counts(s, t)[leaf] as u64)
            .sum()
    }

    /// The unnormalized median density `M(x)`.
    pub fn median_at(&self, x: &[f64]) -> Result<f64> {
        let leaves = self.locate(x)?;
        let mut scratch = self.scratch();
        scratch.leaves.copy_from_slice(&leaves);
        Ok(self.median_sum(&mut scratch) as f64 / self.denominator())
    }

    /// Normalized density; zero outside the domain.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.evaluate_strict(x).unwrap_or(0.0)
    }

    /// Normalized density; errors outside the domain.
    pub fn evaluate_strict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.median_at(x)? / self.normalizer)
    }

    /// [`evaluate`](Self::evaluate) over every point, in input order.
    pub fn evaluate_batch(&self, points: &Points) -> Result<Vec<f64>> {
        if points.dim() != self.domain().dim() {
            return Err(Error::DimensionMismatch {
                expected: self.domain().dim(),
                found: points.dim(),
            });
        }
        let flat = points.as_flat();
        let dim = points.dim();
        let out = flat
            .par_chunks(dim * 1024)
            .flat_map_iter(|chunk| {
                let mut scratch = self.scratch();
                chunk
                    .chunks_exact(dim)
                    .map(|x| match self.median_sum_at(x, &mut scratch) {
                        Some(sum) => sum as f64 / self.denominator() / self.normalizer,
                        None => 0.0,
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(out)
    }

    pub(crate) fn scratch(&self) -> Scratch {
        Scratch {
            descent: vec![(0, 0); self.domain().dim()],
            leaves: vec![0; self.trees()],
            acc: vec![0; self.blocks],
            touched: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Integer count sum of the median block at `x`, or `None` outside the
    /// domain.
    #[inline]
    pub(crate) fn median_sum_at(&self, x: &[f64], scratch: &mut Scratch) -> Option<u64> {
        if !self.domain().contains_unchecked(x) {
            return None;
        }
        let Scratch {
            descent, leaves, ..
        } = scratch;
        self.forest.locate_into(x, descent, leaves);
        Some(self.median_sum(scratch))
    }

    /// `ceil(S/2)`-th smallest per-block count sum for the leaves in
    /// `scratch.leaves`.
    fn median_sum(&self, scratch: &mut Scratch) -> u64 {
        let leaves_per_tree = self.forest.leaves();
        let Scratch {
            leaves,
            acc,
            touched,
            values,
            ..
        } = scratch;
        touched.clear();
        for (t, &leaf) in leaves.iter().enumerate() {
            for &(s, c) in self.index.get(t * leaves_per_tree + leaf) {
                let slot = &mut acc[s as usize];
                if *slot == 0 {
                    touched.push(s);
                }
                *slot += c;
            }
        }
        let zeros = self.blocks - touched.len();
        let rank = self.median_rank();
        let result = if zeros >= rank {
            0
        } else {
            values.clear();
            values.extend(touched.iter().map(|&s| acc[s as usize]));
            let k = rank - zeros - 1;
            let (_, v, _) = values.select_nth_unstable(k);
            *v as u64
        };
        for &s in touched.iter() {
            acc[s as usize] = 0;
        }
        result
    }

    /// Integral of the median density over the domain with `quadrature`.
    pub fn compute_normalizer(&self, quadrature: Quadrature) -> Result<f64> {
        let nodes = NodeSet::new(
            self.domain(),
            quadrature,
            self.depth(),
            rng::derive_seed(self.seed, tags::QUADRATURE),
        )?;
        let total: u128 = (0..nodes.chunks())
            .into_par_iter()
            .map_init(
                || (Points::new(self.domain().dim()), self.scratch()),
                |(buf, scratch), c| {
                    nodes.fill_chunk(c, buf);
                    buf.iter()
                        .map(|x| self.median_sum_at(x, scratch).unwrap_or(0) as u128)
                        .sum::<u128>()
                },
            )
            .sum();
        if total == 0 {
            return Err(Error::DegenerateModel);
        }
        Ok(total as f64 / self.denominator() * nodes.weight())
    }

    /// Integrates the normalized density with the model's own quadrature rule
    /// and nodes; equals 1 up to rounding.
    pub fn integral(&self) -> Result<f64> {
        self.quadrature.integrate(
            self.domain(),
            self.depth(),
            rng::derive_seed(self.seed, tags::QUADRATURE),
            |x| self.evaluate(x),
        )
    }
}

/// Leaf counts of every block under every tree, laid out `[block][tree][leaf]`.
fn block_counts(forest: &Forest, data: &Points, assignment: &BlockAssignment) -> Vec<u32> {
    let leaves = forest.leaves();
    let trees = forest.len();
    let domain = forest.domain();
    let per_block: Vec<Vec<u32>> = assignment
        .blocks
        .par_iter()
        .map(|block| {
            let mut out = vec![0u32; trees * leaves];
            let mut scratch = vec![(0u64, 0u32); domain.dim()];
            let mut located = vec![0usize; trees];
            for &i in block {
                let x = data.get(i);
                if !domain.contains_unchecked(x) {
                    continue;
                }
                forest.locate_into(x, &mut scratch, &mut located);
                for (t, &leaf) in located.iter().enumerate() {
                    out[t * leaves + leaf] += 1;
                }
            }
            out
        })
        .collect();
    per_block.concat()
}
