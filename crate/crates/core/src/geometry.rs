//! Axis-aligned domains and random midpoint-split tree partitions.
//!
//! A [`SplitTree`] of depth `p` cuts its domain `p` times along every
//! root-to-leaf path. Each internal node halves the current cell at the
//! midpoint of one coordinate, chosen uniformly at random when the tree is
//! built. All `2^p` leaves therefore have the same volume, `vol(box) / 2^p`.
//!
//! Cells are half-open, `[lo, mid)` and `[mid, hi)`, except on the upper
//! faces of the domain, which are closed. Every point of the (closed) domain
//! belongs to exactly one leaf.
//!
//! Cell bounds along a coordinate are always computed by [`dyadic_bound`] from
//! the integer position of the bound on the dyadic lattice, so descending a
//! tree with [`SplitTree::leaf_index`] and replaying a leaf with
//! [`SplitTree::leaf_cell`] agree bit for bit.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Deepest tree we allow; leaf ids must fit comfortably in memory-indexable
/// count arrays.
pub const MAX_DEPTH: u32 = 30;

/// An axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]` with positive volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct AxisBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TryFrom<RawBox> for AxisBox {
    type Error = Error;

    fn try_from(raw: RawBox) -> Result<Self> {
        AxisBox::new(raw.lo, raw.hi)
    }
}

impl From<AxisBox> for RawBox {
    fn from(b: AxisBox) -> Self {
        RawBox { lo: b.lo, hi: b.hi }
    }
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.is_empty() {
            return Err(Error::InvalidBox("dimension must be at least 1".into()));
        }
        if lo.len() != hi.len() {
            return Err(Error::InvalidBox(format!(
                "lower bounds have {} entries, upper bounds {}",
                lo.len(),
                hi.len()
            )));
        }
        for (j, (&a, &b)) in lo.iter().zip(&hi).enumerate() {
            if !(a.is_finite() && b.is_finite()) {
                return Err(Error::InvalidBox(format!(
                    "axis {j} has a non-finite bound"
                )));
            }
            if a >= b {
                return Err(Error::InvalidBox(format!(
                    "axis {j}: lower bound {a} is not below upper bound {b}"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// The hypercube `[lo, hi]^d`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// The unit cube `[0, 1]^d`.
    pub fn unit(dim: usize) -> Self {
        Self::cube(dim, 0.0, 1.0).expect("unit cube is valid")
    }

    /// Tight bounding box of `points`, widened on each side by `margin` times
    /// the extent. Axes where all points coincide get a unit-width extent
    /// centred on the common value.
    pub fn bounding(points: &Points, margin: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot bound an empty point set".into(),
            ));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "box margin must be non-negative, got {margin}"
            )));
        }
        let d = points.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for x in points.iter() {
            for j in 0..d {
                lo[j] = lo[j].min(x[j]);
                hi[j] = hi[j].max(x[j]);
            }
        }
        for j in 0..d {
            let w = hi[j] - lo[j];
            if w > 0.0 {
                lo[j] -= margin * w;
                hi[j] += margin * w;
            } else {
                lo[j] -= 0.5;
                hi[j] += 0.5;
            }
        }
        Self::new(lo, hi)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.width(j)).product()
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        self.check_dim(x)?;
        Ok(self.contains_unchecked(x))
    }

    pub(crate) fn contains_unchecked(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&a, &b))| a <= v && v <= b)
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Membership in a half-open cell of this domain: `[lo, hi)` on every
    /// axis, closed at `hi` where the cell touches the domain's upper face.
    pub fn cell_contains(&self, cell: &AxisBox, x: &[f64]) -> bool {
        (0..self.dim()).all(|j| {
            let v = x[j];
            cell.lo[j] <= v && (v < cell.hi[j] || (cell.hi[j] == self.hi[j] && v == self.hi[j]))
        })
    }
}

/// Lower bound of the `index`-th cell of the `2^level`-cell dyadic subdivision
/// of `[lo, hi]`; `index == 2^level` gives `hi` itself.
#[inline]
pub fn dyadic_bound(lo: f64, hi: f64, index: u64, level: u32) -> f64 {
    let cells = 1u64 << level;
    if index == 0 {
        lo
    } else if index >= cells {
        hi
    } else {
        lo + (hi - lo) * (index as f64 / cells as f64)
    }
}

/// A set of points of one fixed dimension, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Points {
    dim: usize,
    values: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1, "points need at least one coordinate");
        Self {
            dim,
            values: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, n: usize) -> Self {
        let mut p = Self::new(dim);
        p.values.reserve(n * dim);
        p
    }

    pub fn from_flat(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not form points of dimension {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        let mut p = Self::with_capacity(dim, rows.len());
        for r in rows {
            p.push(r.as_ref())?;
        }
        Ok(p)
    }

    pub fn push(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        self.values.extend_from_slice(x);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.values
    }

    /// Appends all points of `other`.
    pub fn extend(&mut self, other: &Points) -> Result<()> {
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        self.values.extend_from_slice(&other.values);
        Ok(())
    }

    /// The points at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Points {
        let mut out = Points::with_capacity(self.dim, indices.len());
        for &i in indices {
            out.values.extend_from_slice(self.get(i));
        }
        out
    }
}

/// A complete binary tree of midpoint splits stored in level order: the node
/// at index `k` has children `2k + 1` and `2k + 2`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitTree {
    depth: u32,
    node_dims: Vec<u32>,
}

/// Per-leaf point counts of one tree, plus the number of points that fell
/// outside the domain.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafCounts {
    pub counts: Vec<u32>,
    pub dropped: usize,
}

impl SplitTree {
    /// Draws every split dimension independently and uniformly from `0..dim`.
    pub fn random(dim: usize, depth: u32, rng: &mut Rng) -> Result<Self> {
        check_tree_args(dim, depth)?;
        let internal = (1usize << depth) - 1;
        let node_dims = (0..internal)
            .map(|_| rng.random_range(0..dim as u32))
            .collect();
        Ok(Self { depth, node_dims })
    }

    /// Builds a tree from explicit level-order split dimensions.
    pub fn from_node_dims(dim: usize, node_dims: Vec<u32>) -> Result<Self> {
        let internal = node_dims.len();
        let leaves = internal + 1;
        if !leaves.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "{internal} split nodes do not form a complete binary tree"
            )));
        }
        let depth = leaves.trailing_zeros();
        check_tree_args(dim, depth)?;
        if let Some(&bad) = node_dims.iter().find(|&&j| j as usize >= dim) {
            return Err(Error::InvalidArgument(format!(
                "split dimension {bad} out of range for dimension {dim}"
            )));
        }
        Ok(Self { depth, node_dims })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn leaves(&self) -> usize {
        1 << self.depth
    }

    pub fn node_dims(&self) -> &[u32] {
        &self.node_dims
    }

    /// Id of the leaf containing `x`: the path bit-string with left = 0,
    /// right = 1 and the root decision as the most significant bit.
    pub fn leaf_index(&self, domain: &AxisBox, x: &[f64]) -> Result<usize> {
        if !domain.contains(x)? {
            return Err(Error::PointOutsideDomain);
        }
        let mut scratch = vec![(0u64, 0u32); domain.dim()];
        Ok(self.descend(domain, x, &mut scratch))
    }

    /// Descent for a point already known to lie in `domain`. `scratch` holds
    /// the dyadic position of the current cell on each axis.
    #[inline]
    pub(crate) fn descend(&self, domain: &AxisBox, x: &[f64], scratch: &mut [(u64, u32)]) -> usize {
        scratch.fill((0, 0));
        let mut node = 0usize;
        let mut leaf = 0usize;
        for _ in 0..self.depth {
            let j = self.node_dims[node] as usize;
            let (i, k) = scratch[j];
            let mid = dyadic_bound(domain.lo[j], domain.hi[j], 2 * i + 1, k + 1);
            let right = (x[j] >= mid) as u64;
            scratch[j] = (2 * i + right, k + 1);
            leaf = (leaf << 1) | right as usize;
            node = 2 * node + 1 + right as usize;
        }
        leaf
    }

    /// Extents of leaf `leaf`, replaying the midpoint splits along its path.
    pub fn leaf_cell(&self, domain: &AxisBox, leaf: usize) -> Result<AxisBox> {
        if leaf >= self.leaves() {
            return Err(Error::LeafOutOfRange {
                leaf,
                leaves: self.leaves(),
            });
        }
        let d = domain.dim();
        let mut pos = vec![(0u64, 0u32); d];
        let mut node = 0usize;
        for level in 0..self.depth {
            let j = self.node_dims[node] as usize;
            let right = ((leaf >> (self.depth - 1 - level)) & 1) as u64;
            let (i, k) = pos[j];
            pos[j] = (2 * i + right, k + 1);
            node = 2 * node + 1 + right as usize;
        }
        let lo = (0..d)
            .map(|j| dyadic_bound(domain.lo[j], domain.hi[j], pos[j].0, pos[j].1))
            .collect();
        let hi = (0..d)
            .map(|j| dyadic_bound(domain.lo[j], domain.hi[j], pos[j].0 + 1, pos[j].1))
            .collect();
        AxisBox::new(lo, hi)
    }

    /// Number of splits along each axis on the path to `leaf`.
    pub fn path_split_counts(&self, dim: usize, leaf: usize) -> Vec<u32> {
        let mut counts = vec![0u32; dim];
        let mut node = 0usize;
        for level in 0..self.depth {
            let j = self.node_dims[node] as usize;
            counts[j] += 1;
            let right = (leaf >> (self.depth - 1 - level)) & 1;
            node = 2 * node + 1 + right;
        }
        counts
    }

    /// Histogram of `points` over the leaves; points outside the domain are
    /// tallied in `dropped`.
    pub fn count_leaves<'a, I>(&self, domain: &AxisBox, points: I) -> Result<LeafCounts>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut counts = vec![0u32; self.leaves()];
        let mut dropped = 0;
        let mut scratch = vec![(0u64, 0u32); domain.dim()];
        for x in points {
            domain.check_dim(x)?;
            if domain.contains_unchecked(x) {
                counts[self.descend(domain, x, &mut scratch)] += 1;
            } else {
                dropped += 1;
            }
        }
        Ok(LeafCounts { counts, dropped })
    }
}

fn check_tree_args(dim: usize, depth: u32) -> Result<()> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "dimension must be at least 1".into(),
        ));
    }
    if depth > MAX_DEPTH {
        return Err(Error::InvalidArgument(format!(
            "tree depth {depth} exceeds the maximum of {MAX_DEPTH}"
        )));
    }
    Ok(())
}

/// `T` independent random split trees of a common depth over one domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest {
    domain: AxisBox,
    depth: u32,
    trees: Vec<SplitTree>,
    seed: u64,
}

impl Forest {
    /// Tree `t` is drawn from stream `t` of `seed`, so the forest is a pure
    /// function of `(domain dimension, depth, trees, seed)`.
    pub fn build(domain: AxisBox, depth: u32, trees: usize, seed: u64) -> Result<Self> {
        if trees == 0 {
            return Err(Error::InvalidArgument(
                "a forest needs at least one tree".into(),
            ));
        }
        let dim = domain.dim();
        let built = (0..trees as u64)
            .into_par_iter()
            .map(|t| SplitTree::random(dim, depth, &mut rng::substream(seed, t)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            domain,
            depth,
            trees: built,
            seed,
        })
    }

    /// Reassembles a forest from stored trees (used when loading models).
    pub fn from_trees(domain: AxisBox, trees: Vec<SplitTree>, seed: u64) -> Result<Self> {
        let depth = match trees.first() {
            Some(t) => t.depth(),
            None => {
                return Err(Error::InvalidArgument(
                    "a forest needs at least one tree".into(),
                ))
            }
        };
        if trees.iter().any(|t| t.depth() != depth) {
            return Err(Error::InvalidArgument(
                "trees of a forest must share one depth".into(),
            ));
        }
        Ok(Self {
            domain,
            depth,
            trees,
            seed,
        })
    }

    pub fn domain(&self) -> &AxisBox {
        &self.domain
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn trees(&self) -> &[SplitTree] {
        &self.trees
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn leaves(&self) -> usize {
        1 << self.depth
    }

    /// Volume of every leaf cell of every tree.
    pub fn cell_volume(&self) -> f64 {
        self.domain.volume() / (1u64 << self.depth) as f64
    }

    /// Leaf ids of `x` in every tree, written to `out`. `x` must lie in the
    /// domain.
    #[inline]
    pub(crate) fn locate_into(&self, x: &[f64], scratch: &mut [(u64, u32)], out: &mut [usize]) {
        for (slot, tree) in out.iter_mut().zip(&self.trees) {
            *slot = tree.descend(&self.domain, x, scratch);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tree(dims: &[u32]) -> SplitTree {
        SplitTree::from_node_dims(2, dims.to_vec()).unwrap()
    }

    #[test]
    fn closed_box_membership() {
        let b = AxisBox::unit(2);
        assert!(b.contains(&[0.5, 0.5]).unwrap());
        assert!(b.contains(&[1.0, 1.0]).unwrap());
        assert!(!b.contains(&[1.0001, 0.5]).unwrap());
        assert!(matches!(
            b.contains(&[0.5]),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 1
            })
        ));
    }

    #[test]
    fn invalid_boxes_rejected() {
        assert!(AxisBox::new(vec![0.0], vec![0.0]).is_err());
        assert!(AxisBox::new(vec![], vec![]).is_err());
        assert!(AxisBox::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(AxisBox::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn one_dimensional_tree_splits_only_axis_zero() {
        let t = SplitTree::random(1, 3, &mut rng::seeded(1)).unwrap();
        assert_eq!(t.node_dims(), &[0; 7]);
    }

    #[test]
    fn depth_zero_tree_is_a_single_leaf() {
        let t = SplitTree::random(2, 0, &mut rng::seeded(1)).unwrap();
        assert!(t.node_dims().is_empty());
        let b = AxisBox::unit(2);
        assert_eq!(t.leaf_index(&b, &[0.3, 0.9]).unwrap(), 0);
        assert_eq!(t.leaf_index(&b, &[1.0, 1.0]).unwrap(), 0);
        assert_eq!(t.leaf_cell(&b, 0).unwrap(), b);
    }

    #[test]
    fn hand_traced_descent() {
        let b = AxisBox::unit(2);
        let t = tree(&[0, 1, 1]);
        assert_eq!(t.leaf_index(&b, &[0.25, 0.75]).unwrap(), 1);
        // 0.5 sits on the split and goes right
        assert_eq!(t.leaf_index(&b, &[0.25, 0.5]).unwrap(), 1);
        assert_eq!(t.leaf_index(&b, &[0.25, 0.25]).unwrap(), 0);
        assert_eq!(t.leaf_index(&b, &[1.0, 1.0]).unwrap(), 3);
        assert!(matches!(
            t.leaf_index(&b, &[1.5, 0.5]),
            Err(Error::PointOutsideDomain)
        ));
    }

    #[test]
    fn replayed_cell() {
        let b = AxisBox::unit(2);
        let t = tree(&[0, 1, 1]);
        let cell = t.leaf_cell(&b, 1).unwrap();
        assert_eq!(cell.lo(), &[0.0, 0.5]);
        assert_eq!(cell.hi(), &[0.5, 1.0]);
        assert!(b.cell_contains(&cell, &[0.25, 1.0]));
        assert!(!b.cell_contains(&cell, &[0.5, 0.75]));
        assert!(matches!(
            t.leaf_cell(&b, 4),
            Err(Error::LeafOutOfRange { leaf: 4, leaves: 4 })
        ));
    }

    #[test]
    fn leaf_volumes_halve() {
        let b = AxisBox::unit(3);
        let t = SplitTree::random(3, 3, &mut rng::seeded(9)).unwrap();
        for leaf in 0..8 {
            let v = t.leaf_cell(&b, leaf).unwrap().volume();
            assert!((v - 0.125).abs() < 1e-15);
        }
    }

    #[test]
    fn counting_with_dropped_points() {
        let b = AxisBox::unit(2);
        let t = tree(&[0]);
        let empty: [&[f64]; 0] = [];
        let c = t.count_leaves(&b, empty).unwrap();
        assert_eq!(
            c,
            LeafCounts {
                counts: vec![0, 0],
                dropped: 0
            }
        );

        let pts: [&[f64]; 3] = [&[0.25, 0.5], &[0.75, 0.5], &[0.9, 0.1]];
        let c = t.count_leaves(&b, pts).unwrap();
        assert_eq!(c.counts, vec![1, 2]);
        assert_eq!(c.dropped, 0);

        let pts: [&[f64]; 4] = [&[0.25, 0.5], &[0.75, 0.5], &[0.9, 0.1], &[1.5, 0.5]];
        let c = t.count_leaves(&b, pts).unwrap();
        assert_eq!(c.counts, vec![1, 2]);
        assert_eq!(c.dropped, 1);
    }

    #[test]
    fn forest_is_reproducible() {
        let b = AxisBox::unit(3);
        let f1 = Forest::build(b.clone(), 4, 5, 77).unwrap();
        let f2 = Forest::build(b.clone(), 4, 5, 77).unwrap();
        assert_eq!(f1, f2);
        let first = f1.trees()[0].node_dims();
        assert!(f1.trees().iter().any(|t| t.node_dims() != first));
        assert_eq!(Forest::build(b.clone(), 4, 1, 3).unwrap().len(), 1);
        assert!(Forest::build(b, 4, 0, 3).is_err());
    }

    #[test]
    fn bounding_box_handles_constant_axes() {
        let p = Points::from_rows(2, &[[1.0, 2.0], [3.0, 2.0]]).unwrap();
        let b = AxisBox::bounding(&p, 0.0).unwrap();
        assert_eq!(b.lo(), &[1.0, 1.5]);
        assert_eq!(b.hi(), &[3.0, 2.5]);
        let b = AxisBox::bounding(&p, 0.5).unwrap();
        assert_eq!(b.lo()[0], 0.0);
        assert_eq!(b.hi()[0], 4.0);
    }

    #[test]
    fn dyadic_bounds_are_consistent_across_levels() {
        let (lo, hi) = (0.1, 0.7);
        assert_eq!(dyadic_bound(lo, hi, 8, 3), hi);
        assert_eq!(dyadic_bound(lo, hi, 0, 3), lo);
        assert_eq!(dyadic_bound(lo, hi, 2, 2), dyadic_bound(lo, hi, 4, 3));
        assert_eq!(dyadic_bound(lo, hi, 3, 3), dyadic_bound(lo, hi, 6, 4));
    }
}
