//! Quadrature node sets over a box, generated in fixed-size chunks so that
//! parallel evaluation is deterministic.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::estimator::Quadrature;
use crate::geometry::{dyadic_bound, AxisBox, Points};
use crate::rng;

/// Nodes per chunk. Monte Carlo draws for chunk `c` come from stream `c`.
pub(crate) const CHUNK: usize = 4096;

pub(crate) struct NodeSet<'a> {
    domain: &'a AxisBox,
    kind: Kind,
    len: usize,
}

enum Kind {
    Dyadic { depth: u32 },
    Grid { per_axis: usize },
    MonteCarlo { seed: u64 },
}

/// Coordinate `i` of the `g`-point inclusive-endpoint lattice on `[lo, hi]`.
#[inline]
pub fn lattice_coord(lo: f64, hi: f64, i: usize, g: usize) -> f64 {
    if i == 0 {
        lo
    } else if i + 1 == g {
        hi
    } else {
        lo + (hi - lo) * (i as f64 / (g - 1) as f64)
    }
}

impl<'a> NodeSet<'a> {
    pub(crate) fn new(domain: &'a AxisBox, q: Quadrature, depth: u32, seed: u64) -> Result<Self> {
        q.validate()?;
        let d = domain.dim() as u32;
        let too_many = || {
            Error::InvalidArgument(format!(
                "quadrature {q} has too many nodes in dimension {d}"
            ))
        };
        let (kind, len) = match q {
            Quadrature::ExactDyadic => {
                let bits = depth
                    .checked_mul(d)
                    .filter(|&b| b < 48)
                    .ok_or_else(too_many)?;
                (Kind::Dyadic { depth }, 1usize << bits)
            }
            Quadrature::RegularGrid { points_per_axis } => {
                let len = points_per_axis
                    .checked_pow(d)
                    .filter(|&l| l < 1 << 48)
                    .ok_or_else(too_many)?;
                (
                    Kind::Grid {
                        per_axis: points_per_axis,
                    },
                    len,
                )
            }
            Quadrature::MonteCarlo { draws } => (Kind::MonteCarlo { seed }, draws),
        };
        Ok(Self { domain, kind, len })
    }

    pub(crate) fn chunks(&self) -> usize {
        self.len.div_ceil(CHUNK)
    }

    /// Volume attached to each node.
    pub(crate) fn weight(&self) -> f64 {
        self.domain.volume() / self.len as f64
    }

    /// Replaces `out` with the nodes of chunk `c`.
    pub(crate) fn fill_chunk(&self, c: usize, out: &mut Points) {
        let start = c * CHUNK;
        let end = (start + CHUNK).min(self.len);
        let d = self.domain.dim();
        let (lo, hi) = (self.domain.lo(), self.domain.hi());
        let mut values = Vec::with_capacity((end - start) * d);
        match self.kind {
            Kind::Dyadic { depth } => {
                let mask = (1u64 << depth) - 1;
                for node in start..end {
                    for j in 0..d {
                        let i = (node as u64 >> (depth as u64 * j as u64)) & mask;
                        // cell centre: midpoint of the (i)-th cell at level depth
                        values.push(dyadic_bound(lo[j], hi[j], 2 * i + 1, depth + 1));
                    }
                }
            }
            Kind::Grid { per_axis } => {
                for node in start..end {
                    let mut rest = node;
                    for j in 0..d {
                        values.push(lattice_coord(lo[j], hi[j], rest % per_axis, per_axis));
                        rest /= per_axis;
                    }
                }
            }
            Kind::MonteCarlo { seed } => {
                let mut rng = rng::substream(seed, c as u64);
                for _ in start..end {
                    for j in 0..d {
                        let u: f64 = rng.random();
                        values.push(lo[j] + (hi[j] - lo[j]) * u);
                    }
                }
            }
        }
        *out = Points::from_flat(d, values).expect("chunk has whole points");
    }
}
