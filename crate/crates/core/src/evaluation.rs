//! Evaluation grids, error metrics and the benchmark harness.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{BlockSize, DomainSpec, EstimatorConfig, FittedMfrde, Quadrature};
use crate::geometry::{AxisBox, Points};
use crate::model_io::to_json_bytes;
use crate::quadrature::lattice_coord;
use crate::rng::derive_seed;
use crate::synth::{self, Label, OutlierScheme};

/// The `G^d` lattice over a box with both endpoints on every axis. The first
/// axis varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    pub domain: AxisBox,
    pub per_axis: usize,
    pub points: Points,
}

pub fn make_grid(domain: &AxisBox, per_axis: usize) -> Result<EvalGrid> {
    if per_axis < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid needs at least 2 points per axis, got {per_axis}"
        )));
    }
    let d = domain.dim();
    let total = per_axis
        .checked_pow(d as u32)
        .filter(|&t| t <= 1 << 28)
        .ok_or_else(|| Error::InvalidArgument("grid too large".into()))?;
    let mut points = Points::with_capacity(d, total);
    let mut x = vec![0.0; d];
    for node in 0..total {
        let mut rest = node;
        for (j, v) in x.iter_mut().enumerate() {
            *v = lattice_coord(domain.lo()[j], domain.hi()[j], rest % per_axis, per_axis);
            rest /= per_axis;
        }
        points.push(&x)?;
    }
    Ok(EvalGrid {
        domain: domain.clone(),
        per_axis,
        points,
    })
}

/// Mean absolute difference between `estimate` and `truth` over the grid.
pub fn mae<F, G>(grid: &EvalGrid, estimate: F, truth: G) -> f64
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    let total: f64 = grid
        .points
        .iter()
        .map(|z| (estimate(z) - truth(z)).abs())
        .sum();
    total / grid.points.len() as f64
}

/// [`mae`] on precomputed values.
pub fn mae_values(estimate: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(
        estimate.len(),
        truth.len(),
        "value vectors differ in length"
    );
    let total: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum();
    total / estimate.len() as f64
}

/// Anomaly scores from densities: low density ranks as more anomalous.
pub fn anomaly_scores(densities: &[f64]) -> Vec<f64> {
    densities.iter().map(|d| -d).collect()
}

/// Probability that a random outlier scores above a random inlier, ties
/// counting one half (the Mann-Whitney statistic). Outliers are the positive
/// class.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut wins, mut ties) = (0u128, 0u128);
    let (mut neg_below, mut pos_total) = (0u128, 0u128);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            match labels[order[j]] {
                Label::Outlier => pos += 1,
                Label::Inlier => neg += 1,
            }
            j += 1;
        }
        wins += pos * neg_below;
        ties += pos * neg;
        neg_below += neg;
        pos_total += pos;
        i = j;
    }
    if pos_total == 0 || neg_below == 0 {
        return Err(Error::AucUndefined);
    }
    Ok((2 * wins + ties) as f64 / (2 * pos_total * neg_below) as f64)
}

fn default_repeats() -> usize {
    10
}
fn default_grid() -> usize {
    100
}
fn default_n() -> usize {
    500
}
fn default_true() -> bool {
    true
}

/// Parameter sweep over contaminated synthetic samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub schemes: Vec<String>,
    pub ratios: Vec<f64>,
    pub m_ratios: Vec<f64>,
    pub trees: Vec<usize>,
    pub depths: Vec<u32>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    /// Estimation and evaluation domain; defaults to `[0, 5]^2`.
    #[serde(rename = "box", default)]
    pub domain: Option<AxisBox>,
    #[serde(rename = "grid_G", default = "default_grid")]
    pub grid_points: usize,
    /// Sample size per run.
    #[serde(default = "default_n")]
    pub n: usize,
    /// Also fit the single-block forest on the full sample for each (T, p).
    #[serde(default = "default_true")]
    pub baseline: bool,
    /// Normalizer rule (`exact`, `grid:G`, `mc:N`); model default when absent.
    #[serde(default)]
    pub quadrature: Option<String>,
}

impl BenchmarkConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    fn validate(&self) -> Result<(Vec<OutlierScheme>, AxisBox, Option<Quadrature>)> {
        let schemes = self
            .schemes
            .iter()
            .map(|s| OutlierScheme::by_name(s))
            .collect::<Result<Vec<_>>>()?;
        for (name, empty) in [
            ("schemes", self.schemes.is_empty()),
            ("ratios", self.ratios.is_empty()),
            ("m_ratios", self.m_ratios.is_empty()),
            ("trees", self.trees.is_empty()),
            ("depths", self.depths.is_empty()),
        ] {
            if empty {
                return Err(Error::InvalidArgument(format!(
                    "benchmark '{name}' is empty"
                )));
            }
        }
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        let domain = self.domain.clone().unwrap_or_else(synth::synth_domain);
        if domain.dim() != 2 {
            return Err(Error::InvalidArgument(
                "synthetic benchmarks are two-dimensional".into(),
            ));
        }
        let quadrature = self.quadrature.as_deref().map(str::parse).transpose()?;
        Ok((schemes, domain, quadrature))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Mfrde,
    /// Single block holding the whole sample.
    Forest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Skipped,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub scheme: String,
    pub ratio: f64,
    pub estimator: Estimator,
    /// `None` for the full-sample baseline.
    pub m_ratio: Option<f64>,
    pub m: Option<usize>,
    pub trees: usize,
    pub depth: u32,
    pub repeat: usize,
    pub data_seed: u64,
    pub status: RunStatus,
    pub mae: Option<f64>,
    pub auc: Option<f64>,
    pub message: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub scheme: String,
    pub ratio: f64,
    pub estimator: Estimator,
    pub m_ratio: Option<f64>,
    pub trees: usize,
    pub depth: u32,
    pub runs: usize,
    pub mae_mean: Option<f64>,
    pub mae_std: Option<f64>,
    pub auc_mean: Option<f64>,
    pub auc_std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub elapsed_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: BenchmarkConfig,
    pub rows: Vec<RunRow>,
    pub summaries: Vec<Summary>,
    /// Lowest mean MAE configuration per (scheme, ratio, estimator).
    pub best: Vec<Summary>,
    pub timing: Timing,
}

impl EvalReport {
    /// JSON with 17-digit reals.
    pub fn to_json(&self) -> Result<Vec<u8>> {
        to_json_bytes(self)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record([
            "scheme",
            "ratio",
            "estimator",
            "m_ratio",
            "trees",
            "depth",
            "runs",
            "mae_mean",
            "mae_std",
            "auc_mean",
            "auc_std",
        ])?;
        let opt = |v: Option<f64>| v.map(synth::format_real).unwrap_or_default();
        for s in &self.summaries {
            w.write_record([
                s.scheme.clone(),
                s.ratio.to_string(),
                match s.estimator {
                    Estimator::Mfrde => "mfrde".into(),
                    Estimator::Forest => "forest".into(),
                },
                s.m_ratio.map(|r| r.to_string()).unwrap_or_default(),
                s.trees.to_string(),
                s.depth.to_string(),
                s.runs.to_string(),
                opt(s.mae_mean),
                opt(s.mae_std),
                opt(s.auc_mean),
                opt(s.auc_std),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Rows of one summary's configuration, in repeat order.
    pub fn rows_for<'a>(&'a self, s: &'a Summary) -> impl Iterator<Item = &'a RunRow> + 'a {
        self.rows.iter().filter(move |r| {
            r.scheme == s.scheme
                && r.ratio == s.ratio
                && r.estimator == s.estimator
                && r.m_ratio == s.m_ratio
                && r.trees == s.trees
                && r.depth == s.depth
        })
    }

    pub fn best_for(&self, scheme: &str, ratio: f64, estimator: Estimator) -> Option<&Summary> {
        self.best
            .iter()
            .find(|s| s.scheme == scheme && s.ratio == ratio && s.estimator == estimator)
    }
}

struct Job {
    scheme: usize,
    ratio: usize,
    repeat: usize,
    estimator: Estimator,
    m_ratio: Option<f64>,
    trees: usize,
    depth: u32,
}

/// Seed of the sample for one (scheme, ratio, repeat); every configuration
/// fitted in that repeat sees the same sample.
pub fn data_seed(master: u64, scheme: usize, ratio: usize, repeat: usize) -> u64 {
    let cell = ((scheme as u64) << 40) | ((ratio as u64) << 20) | repeat as u64;
    derive_seed(master, cell)
}

const FIT_TAG: u64 = 0xF17;

/// Runs every configuration of the sweep. Cells are independent and run in
/// parallel; results do not depend on the thread count.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<EvalReport> {
    let started = Instant::now();
    let (schemes, domain, quadrature) = config.validate()?;
    let grid = make_grid(&domain, config.grid_points)?;
    let truth: Vec<f64> = grid.points.iter().map(synth::true_density).collect();

    let mut jobs = Vec::new();
    for si in 0..schemes.len() {
        for ri in 0..config.ratios.len() {
            for repeat in 0..config.repeats {
                for &trees in &config.trees {
                    for &depth in &config.depths {
                        for &m_ratio in &config.m_ratios {
                            jobs.push(Job {
                                scheme: si,
                                ratio: ri,
                                repeat,
                                estimator: Estimator::Mfrde,
                                m_ratio: Some(m_ratio),
                                trees,
                                depth,
                            });
                        }
                        if config.baseline {
                            jobs.push(Job {
                                scheme: si,
                                ratio: ri,
                                repeat,
                                estimator: Estimator::Forest,
                                m_ratio: None,
                                trees,
                                depth,
                            });
                        }
                    }
                }
            }
        }
    }

    let rows: Vec<RunRow> = jobs
        .par_iter()
        .map(|job| run_job(job, config, &schemes, &domain, quadrature, &grid, &truth))
        .collect();
    let summaries = summarize(&rows);
    let best = pick_best(&summaries);
    Ok(EvalReport {
        config: config.clone(),
        rows,
        summaries,
        best,
        timing: Timing {
            elapsed_ms: started.elapsed().as_millis(),
        },
    })
}

fn run_job(
    job: &Job,
    config: &BenchmarkConfig,
    schemes: &[OutlierScheme],
    domain: &AxisBox,
    quadrature: Option<Quadrature>,
    grid: &EvalGrid,
    truth: &[f64],
) -> RunRow {
    let ratio = config.ratios[job.ratio];
    let seed = data_seed(config.seed, job.scheme, job.ratio, job.repeat);
    let mut row = RunRow {
        scheme: schemes[job.scheme].name().into(),
        ratio,
        estimator: job.estimator,
        m_ratio: job.m_ratio,
        m: None,
        trees: job.trees,
        depth: job.depth,
        repeat: job.repeat,
        data_seed: seed,
        status: RunStatus::Ok,
        mae: None,
        auc: None,
        message: None,
    };
    let block_size = match job.m_ratio {
        Some(r) => BlockSize::Ratio(r),
        None => BlockSize::Count(config.n),
    };
    match block_size.resolve(config.n) {
        Ok(m) => row.m = Some(m),
        Err(e) => {
            row.status = RunStatus::Skipped;
            row.message = Some(e.to_string());
            return row;
        }
    }
    let outcome = (|| -> Result<(f64, Option<f64>)> {
        let data = synth::contaminated_sample(&schemes[job.scheme], config.n, ratio, seed)?;
        let est = EstimatorConfig {
            block_size,
            trees: job.trees,
            depth: job.depth,
            seed: derive_seed(seed, FIT_TAG),
            quadrature,
            domain: DomainSpec::Fixed(domain.clone()),
            ..Default::default()
        };
        let model = FittedMfrde::fit(&data.points, &est)?;
        let on_grid = model.evaluate_batch(&grid.points)?;
        let mae = mae_values(&on_grid, truth);
        let auc = match &data.labels {
            Some(labels) => {
                let scores = anomaly_scores(&model.evaluate_batch(&data.points)?);
                auc(&scores, labels).ok()
            }
            None => None,
        };
        Ok((mae, auc))
    })();
    match outcome {
        Ok((mae, auc)) => {
            row.mae = Some(mae);
            row.auc = auc;
        }
        Err(e) => {
            row.status = RunStatus::Failed;
            row.message = Some(e.to_string());
        }
    }
    row
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

type SummaryKey = (usize, u64, Estimator, Option<u64>, usize, u32);

fn summarize(rows: &[RunRow]) -> Vec<Summary> {
    let mut scheme_order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<SummaryKey, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        let si = match scheme_order.iter().position(|s| *s == r.scheme) {
            Some(i) => i,
            None => {
                scheme_order.push(&r.scheme);
                scheme_order.len() - 1
            }
        };
        let key = (
            si,
            r.ratio.to_bits(),
            r.estimator,
            r.m_ratio.map(f64::to_bits),
            r.trees,
            r.depth,
        );
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let first = rs[0];
            let ok: Vec<&&RunRow> = rs.iter().filter(|r| r.status == RunStatus::Ok).collect();
            let maes: Vec<f64> = ok.iter().filter_map(|r| r.mae).collect();
            let aucs: Vec<f64> = ok.iter().filter_map(|r| r.auc).collect();
            let mae = mean_std(&maes);
            let auc = mean_std(&aucs);
            Summary {
                scheme: first.scheme.clone(),
                ratio: first.ratio,
                estimator: first.estimator,
                m_ratio: first.m_ratio,
                trees: first.trees,
                depth: first.depth,
                runs: ok.len(),
                mae_mean: mae.map(|v| v.0),
                mae_std: mae.map(|v| v.1),
                auc_mean: auc.map(|v| v.0),
                auc_std: auc.map(|v| v.1),
            }
        })
        .collect()
}

fn pick_best(summaries: &[Summary]) -> Vec<Summary> {
    let mut best: Vec<Summary> = Vec::new();
    for s in summaries {
        let Some(mae) = s.mae_mean else { continue };
        match best
            .iter_mut()
            .find(|b| b.scheme == s.scheme && b.ratio == s.ratio && b.estimator == s.estimator)
        {
            Some(b) if mae < b.mae_mean.unwrap_or(f64::INFINITY) => *b = s.clone(),
            Some(_) => {}
            None => best.push(s.clone()),
        }
    }
    best
}
