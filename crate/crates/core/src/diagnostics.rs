//! Instruments for how outliers interact with the estimator: local outliers
//! of a query point, blocks free of outliers, and an empirical probe of how
//! concentrated the outliers are.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::BlockAssignment;
use crate::geometry::{AxisBox, Forest, Points};
use crate::rng::Rng;

/// Indices of the outliers that share a leaf with `x` in at least one tree.
pub fn local_outliers(forest: &Forest, x: &[f64], outliers: &Points) -> Result<Vec<usize>> {
    let domain = forest.domain();
    if !domain.contains(x)? {
        return Err(Error::PointOutsideDomain);
    }
    if outliers.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            found: outliers.dim(),
        });
    }
    let mut scratch = vec![(0u64, 0u32); domain.dim()];
    let mut at_x = vec![0usize; forest.len()];
    forest.locate_into(x, &mut scratch, &mut at_x);
    let mut at_o = vec![0usize; forest.len()];
    let mut hits = Vec::new();
    for (i, o) in outliers.iter().enumerate() {
        if !domain.contains_unchecked(o) {
            continue;
        }
        forest.locate_into(o, &mut scratch, &mut at_o);
        if at_x.iter().zip(&at_o).any(|(a, b)| a == b) {
            hits.push(i);
        }
    }
    Ok(hits)
}

/// Fraction of blocks holding none of `outlier_indices`.
pub fn clean_block_fraction(assignment: &BlockAssignment, outlier_indices: &[usize]) -> f64 {
    if assignment.blocks.is_empty() {
        return 1.0;
    }
    let mut is_outlier = vec![false; assignment.n];
    for &i in outlier_indices {
        if i < assignment.n {
            is_outlier[i] = true;
        }
    }
    let clean = assignment
        .blocks
        .iter()
        .filter(|b| b.iter().all(|&i| !is_outlier[i]))
        .count();
    clean as f64 / assignment.blocks.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProfileSample {
    pub volume_fraction: f64,
    pub mass_fraction: f64,
}

/// Mass-versus-volume pairs over random sub-boxes and the power law
/// `mass <= c_U * volume^beta` fitted to them.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationProfile {
    pub samples: Vec<ProfileSample>,
    /// Raw fitted exponent (may exceed 1).
    pub fitted_beta: f64,
    pub fitted_cu: f64,
    /// Number of pairs the frontier was fitted to.
    pub fit_points: usize,
}

impl ConcentrationProfile {
    /// The exponent clipped to [0, 1].
    pub fn beta(&self) -> f64 {
        self.fitted_beta.clamp(0.0, 1.0)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for s in &self.samples {
            w.serialize(s)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileOptions {
    /// Smallest volume fraction probed is `2^-(max_depth * d)`.
    pub max_depth: u32,
    /// Counts are shrunk by this many Poisson standard errors before fitting.
    pub deflation: f64,
    /// Share of the log-volume range, from the small end, used in the fit.
    pub fit_fraction: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            max_depth: 12,
            deflation: 2.0,
            fit_fraction: 0.7,
        }
    }
}

pub fn concentration_profile(
    points: &Points,
    domain: &AxisBox,
    n_boxes: usize,
    rng: &mut Rng,
) -> Result<ConcentrationProfile> {
    concentration_profile_with(points, domain, n_boxes, rng, &ProfileOptions::default())
}

/// Probes `mass(A) <= c_U vol(A)^beta` on `n_boxes` random sub-boxes `A`.
///
/// Each box is centred on a randomly chosen point (shifted to stay inside
/// the domain) with a log-uniform volume fraction in `[2^-(max_depth d), 1]`
/// split across axes by a flat Dirichlet draw. Anchoring at the points puts
/// boxes where the mass concentrates, which is where the bound is tight.
///
/// The exponent is the slope of the tightest line lying above every
/// `(log volume, log deflated mass)` pair, among pairs whose deflated mass
/// exceeds `log(n)/n` and whose volume is in the lower `fit_fraction` of the
/// observed log-volume range. "Tightest" minimizes the mean vertical gap,
/// which selects the upper-hull edge spanning the mean log-volume.
pub fn concentration_profile_with(
    points: &Points,
    domain: &AxisBox,
    n_boxes: usize,
    rng: &mut Rng,
    options: &ProfileOptions,
) -> Result<ConcentrationProfile> {
    let n = points.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two points".into()));
    }
    if n_boxes < 10 {
        return Err(Error::InvalidArgument("need at least ten boxes".into()));
    }
    if points.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            found: points.dim(),
        });
    }
    if !(options.fit_fraction > 0.0 && options.fit_fraction <= 1.0) || options.deflation < 0.0 {
        return Err(Error::InvalidArgument("invalid profile options".into()));
    }
    let d = domain.dim();
    let log_vmin = -(options.max_depth as f64 * d as f64) * std::f64::consts::LN_2;
    let mut samples = Vec::with_capacity(n_boxes);
    let mut counts = Vec::with_capacity(n_boxes);
    let mut lo = vec![0.0; d];
    let mut hi = vec![0.0; d];
    let mut weights = vec![0.0; d];
    for _ in 0..n_boxes {
        let log_v = rng.random_range(log_vmin..=0.0);
        for w in weights.iter_mut() {
            *w = Exp1.sample(rng);
        }
        let total: f64 = weights.iter().sum();
        let anchor = points.get(rng.random_range(0..n));
        let mut volume_fraction = 1.0;
        for j in 0..d {
            let side = (weights[j] / total * log_v).exp();
            volume_fraction *= side;
            let (a, b) = (domain.lo()[j], domain.hi()[j]);
            if side >= 1.0 {
                lo[j] = a;
                hi[j] = b;
                continue;
            }
            let len = side * (b - a);
            let start = (anchor[j] - 0.5 * len).clamp(a, b - len);
            lo[j] = start;
            hi[j] = start + len;
        }
        let count = points
            .iter()
            .filter(|x| (0..d).all(|j| lo[j] <= x[j] && x[j] <= hi[j]))
            .count();
        counts.push(count);
        samples.push(ProfileSample {
            volume_fraction,
            mass_fraction: count as f64 / n as f64,
        });
    }

    let guard = (n as f64).ln() / n as f64;
    let mut pairs: Vec<(f64, f64)> = samples
        .iter()
        .zip(&counts)
        .filter_map(|(s, &c)| {
            let c = c as f64;
            let mass = (c - options.deflation * c.sqrt()) / n as f64;
            (mass > guard).then(|| (s.volume_fraction.ln(), mass.ln()))
        })
        .collect();
    let x_min = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let cut = x_min * (1.0 - options.fit_fraction);
    pairs.retain(|p| p.0 <= cut);
    let (slope, intercept) = upper_frontier(&mut pairs)?;
    Ok(ConcentrationProfile {
        samples,
        fitted_beta: slope,
        fitted_cu: intercept.exp(),
        fit_points: pairs.len(),
    })
}

/// Line `y = intercept + slope x` above all points minimizing the summed
/// vertical gap: the upper-hull edge whose span contains the mean of `x`.
fn upper_frontier(points: &mut [(f64, f64)]) -> Result<(f64, f64)> {
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut hull: Vec<(f64, f64)> = Vec::new();
    for &p in points.iter() {
        // keep only the highest point per x
        if let Some(last) = hull.last() {
            if last.0 == p.0 {
                hull.pop();
            }
        }
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    if hull.len() < 2 {
        return Err(Error::DegenerateFit(
            "fewer than two distinct volumes carry enough mass".into(),
        ));
    }
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
    let edge = hull
        .windows(2)
        .find(|w| mean_x < w[1].0)
        .unwrap_or(&hull[hull.len() - 2..]);
    let slope = (edge[1].1 - edge[0].1) / (edge[1].0 - edge[0].0);
    Ok((slope, edge[0].1 - slope * edge[0].0))
}
