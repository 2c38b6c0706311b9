//! Synthetic contaminated samples and CSV datasets.
//!
//! Inliers are two-dimensional: the first coordinate is exponential with
//! rate 1/2 (not truncated), the second uniform on [0, 5]. Three outlier
//! families are provided: uniform on a box, a scaled beta law with an
//! integrable singularity at 5 on each axis, and a Markov chain over a small
//! set of random atoms.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisBox, Points};
use crate::rng::{self, Rng};

/// Side length of the synthetic domain `[0, 5]^2`.
pub const SYNTH_SCALE: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Inlier,
    Outlier,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scheme: Option<String>,
    pub seed: Option<u64>,
    pub inliers: usize,
    pub outliers: usize,
    pub outlier_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub points: Points,
    pub labels: Option<Vec<Label>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(points: Points, labels: Option<Vec<Label>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::InvalidArgument(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        let outliers = labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&x| x == Label::Outlier).count());
        let n = points.len();
        Ok(Self {
            provenance: Provenance {
                inliers: n - outliers,
                outliers,
                outlier_ratio: if n == 0 {
                    0.0
                } else {
                    outliers as f64 / n as f64
                },
                ..Default::default()
            },
            points,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    fn indices_with(&self, which: Label) -> Vec<usize> {
        match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| l[i] == which).collect(),
            None if which == Label::Inlier => (0..self.len()).collect(),
            None => Vec::new(),
        }
    }

    pub fn outlier_indices(&self) -> Vec<usize> {
        self.indices_with(Label::Outlier)
    }

    pub fn inlier_indices(&self) -> Vec<usize> {
        self.indices_with(Label::Inlier)
    }

    /// Writes `x1,...,xd[,label]` with 17 significant digits per value and
    /// labels as 0 (inlier) / 1 (outlier).
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for (i, x) in self.points.iter().enumerate() {
            record.clear();
            record.extend(x.iter().map(|v| format_real(*v)));
            if let Some(l) = &self.labels {
                record.push(match l[i] {
                    Label::Inlier => "0".into(),
                    Label::Outlier => "1".into(),
                });
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a CSV written by [`write_csv`](Self::write_csv) or by hand: a
    /// header `x1,...,xd` with an optional final `label` column.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let header = r.headers()?.clone();
        let labelled = header.iter().next_back() == Some("label");
        let dim = header.len() - labelled as usize;
        if dim == 0 {
            return Err(Error::Parse {
                row: 0,
                message: "header has no coordinate columns".into(),
            });
        }
        for (j, name) in header.iter().take(dim).enumerate() {
            if name != format!("x{}", j + 1) {
                return Err(Error::Parse {
                    row: 0,
                    message: format!("expected column 'x{}', found '{name}'", j + 1),
                });
            }
        }
        let mut points = Points::new(dim);
        let mut labels = labelled.then(Vec::new);
        let mut x = vec![0.0; dim];
        for (i, rec) in r.records().enumerate() {
            let row = i + 1;
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    row,
                    message: format!("expected {} fields, found {}", header.len(), rec.len()),
                });
            }
            for (j, slot) in x.iter_mut().enumerate() {
                let cell = &rec[j];
                *slot = cell.parse().map_err(|_| Error::Parse {
                    row,
                    message: format!("'{cell}' in column x{} is not a number", j + 1),
                })?;
            }
            points.push(&x)?;
            if let Some(l) = labels.as_mut() {
                l.push(match &rec[dim] {
                    "0" => Label::Inlier,
                    "1" => Label::Outlier,
                    other => {
                        return Err(Error::Parse {
                            row,
                            message: format!("unknown label '{other}' (expected 0 or 1)"),
                        })
                    }
                });
            }
        }
        Dataset::new(points, labels)
    }

    pub fn write_provenance(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_vec_pretty(&self.provenance)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }
}

/// A real with 17 significant digits.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub enum OutlierScheme {
    /// Independent uniform coordinates on `domain`.
    Uniform { domain: AxisBox },
    /// Independent coordinates with density `(1/(2 scale)) (1 - x/scale)^(-1/2)`
    /// on `[0, scale)`.
    Beta { scale: f64, dim: usize },
    /// A chain on `states` atoms drawn uniformly from `region`, with uniform
    /// transitions and a uniform initial state.
    Discrete { states: usize, region: AxisBox },
}

impl OutlierScheme {
    pub fn uniform() -> Self {
        OutlierScheme::Uniform {
            domain: synth_domain(),
        }
    }

    pub fn beta() -> Self {
        OutlierScheme::Beta {
            scale: SYNTH_SCALE,
            dim: 2,
        }
    }

    pub fn discrete() -> Self {
        OutlierScheme::Discrete {
            states: 30,
            region: AxisBox::new(vec![0.0, 2.5], vec![SYNTH_SCALE, SYNTH_SCALE])
                .expect("valid region"),
        }
    }

    /// `uniform`, `beta` or `discrete` with the default parameters.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "uniform" => Ok(Self::uniform()),
            "beta" => Ok(Self::beta()),
            "discrete" => Ok(Self::discrete()),
            other => Err(Error::InvalidArgument(format!(
                "unknown outlier scheme '{other}' (use uniform, beta or discrete)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OutlierScheme::Uniform { .. } => "uniform",
            OutlierScheme::Beta { .. } => "beta",
            OutlierScheme::Discrete { .. } => "discrete",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            OutlierScheme::Uniform { domain } => domain.dim(),
            OutlierScheme::Beta { dim, .. } => *dim,
            OutlierScheme::Discrete { region, .. } => region.dim(),
        }
    }
}

/// The domain `[0, 5]^2` of the synthetic experiments.
pub fn synth_domain() -> AxisBox {
    AxisBox::cube(2, 0.0, SYNTH_SCALE).expect("valid domain")
}

/// `n` inliers: exponential (rate 1/2) by uniform on [0, 5].
pub fn gen_inliers(n: usize, rng: &mut Rng) -> Points {
    let exp = Exp::new(0.5).expect("positive rate");
    let mut p = Points::with_capacity(2, n);
    for _ in 0..n {
        let x1 = exp.sample(rng);
        let x2 = rng.random_range(0.0..=SYNTH_SCALE);
        p.push(&[x1, x2]).expect("two coordinates");
    }
    p
}

/// Inverse CDF of the scaled beta law: `F(x) = 1 - sqrt(1 - x/scale)`.
pub fn beta_inverse_cdf(u: f64, scale: f64) -> f64 {
    let v = 1.0 - u;
    scale * (1.0 - v * v)
}

pub fn gen_outliers(scheme: &OutlierScheme, count: usize, rng: &mut Rng) -> Result<Points> {
    let dim = scheme.dim();
    let mut p = Points::with_capacity(dim, count);
    match scheme {
        OutlierScheme::Uniform { domain } => {
            let mut x = vec![0.0; dim];
            for _ in 0..count {
                for (j, v) in x.iter_mut().enumerate() {
                    *v = rng.random_range(domain.lo()[j]..=domain.hi()[j]);
                }
                p.push(&x)?;
            }
        }
        OutlierScheme::Beta { scale, .. } => {
            if scale.is_nan() || *scale <= 0.0 {
                return Err(Error::InvalidArgument("beta scale must be positive".into()));
            }
            let mut x = vec![0.0; dim];
            for _ in 0..count {
                for v in x.iter_mut() {
                    *v = beta_inverse_cdf(rng.random::<f64>(), *scale);
                }
                p.push(&x)?;
            }
        }
        OutlierScheme::Discrete { states, region } => {
            if *states == 0 {
                return Err(Error::InvalidArgument(
                    "discrete scheme needs at least one state".into(),
                ));
            }
            let atoms = gen_outliers(
                &OutlierScheme::Uniform {
                    domain: region.clone(),
                },
                *states,
                rng,
            )?;
            let mut state = rng.random_range(0..*states);
            for step in 0..count {
                if step > 0 {
                    // every row of the transition matrix is uniform
                    state = rng.random_range(0..*states);
                }
                p.push(atoms.get(state))?;
            }
        }
    }
    Ok(p)
}

/// Concatenates inliers and outliers, labels them and shuffles once.
pub fn mix(inliers: &Points, outliers: &Points, rng: &mut Rng) -> Result<Dataset> {
    if inliers.dim() != outliers.dim() {
        return Err(Error::DimensionMismatch {
            expected: inliers.dim(),
            found: outliers.dim(),
        });
    }
    let mut tagged: Vec<(usize, Label)> = (0..inliers.len())
        .map(|i| (i, Label::Inlier))
        .chain((0..outliers.len()).map(|i| (i, Label::Outlier)))
        .collect();
    tagged.shuffle(rng);
    let mut points = Points::with_capacity(inliers.dim(), tagged.len());
    let mut labels = Vec::with_capacity(tagged.len());
    for (i, label) in tagged {
        let src = match label {
            Label::Inlier => inliers,
            Label::Outlier => outliers,
        };
        points.push(src.get(i))?;
        labels.push(label);
    }
    Dataset::new(points, Some(labels))
}

/// A full synthetic sample: `round(ratio n)` outliers from `scheme`, the rest
/// inliers. Inliers, outliers and the shuffle use separate streams of `seed`.
pub fn contaminated_sample(
    scheme: &OutlierScheme,
    n: usize,
    ratio: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!(
            "outlier ratio must lie in [0, 1], got {ratio}"
        )));
    }
    let outliers = (ratio * n as f64).round() as usize;
    let inliers = gen_inliers(n - outliers, &mut rng::substream(seed, 0));
    let out = gen_outliers(scheme, outliers, &mut rng::substream(seed, 1))?;
    let mut data = mix(&inliers, &out, &mut rng::substream(seed, 2))?;
    data.provenance.scheme = Some(scheme.name().into());
    data.provenance.seed = Some(seed);
    Ok(data)
}

/// Density of the synthetic inliers: `(1/2) exp(-x1/2) * (1/5)` on
/// `(0, inf) x [0, 5]`.
pub fn true_density(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    if x1 > 0.0 && (0.0..=SYNTH_SCALE).contains(&x2) {
        0.5 * (-0.5 * x1).exp() / SYNTH_SCALE
    } else {
        0.0
    }
}
