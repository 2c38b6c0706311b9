use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mfrde::evaluation::{make_grid, run_benchmark, BenchmarkConfig};
use mfrde::model_io::{load_model, save_model};
use mfrde::synth::{contaminated_sample, format_real, Dataset, OutlierScheme};
use mfrde::theory::{recommend, TheoryInputs};
use mfrde::{AxisBox, BlockSize, DomainSpec, EstimatorConfig, FittedMfrde, Quadrature};

#[derive(Parser)]
#[command(
    name = "mfrde",
    version,
    about = "Robust density estimation with medians of forests"
)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "MFRDE_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a contaminated synthetic sample.
    Generate(GenerateArgs),
    /// Fit a model to a CSV sample.
    Fit(FitArgs),
    /// Evaluate a model at every row of a CSV file.
    Score(ScoreArgs),
    /// Evaluate a model on a regular lattice.
    EvalGrid(EvalGridArgs),
    /// Run a parameter sweep described by a JSON config.
    Benchmark(BenchmarkArgs),
    /// Print theory-recommended exponents and parameters.
    Params(ParamsArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "uniform")]
    scheme: String,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0.2)]
    outlier_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write a JSON sidecar describing the sample.
    #[arg(long)]
    provenance: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Block size.
    #[arg(long, conflicts_with = "m_ratio")]
    m: Option<usize>,
    /// Block size as a fraction of the sample size.
    #[arg(long)]
    m_ratio: Option<f64>,
    #[arg(long, default_value_t = 20)]
    trees: usize,
    #[arg(long, default_value_t = 6)]
    depth: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `auto` or per-axis `lo:hi,lo:hi,...`.
    #[arg(long = "box", default_value = "auto")]
    domain: String,
    /// Margin added to each side of an automatic box, as a fraction of its width.
    #[arg(long, default_value_t = 0.0)]
    margin: f64,
    /// `auto`, `exact`, `grid:G` or `mc:N`.
    #[arg(long, default_value = "auto")]
    quadrature: String,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fail on points outside the model box instead of scoring them 0.
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct EvalGridArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Points per axis.
    #[arg(long, default_value_t = 100)]
    grid: usize,
    /// Lattice box; defaults to the model box.
    #[arg(long = "box")]
    domain: Option<String>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    summary_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ParamsArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    outliers: usize,
}

fn parse_box(spec: &str) -> std::result::Result<AxisBox, mfrde::Error> {
    let mut lo = Vec::new();
    let mut hi = Vec::new();
    for axis in spec.split(',') {
        let (a, b) = axis
            .split_once(':')
            .ok_or_else(|| mfrde::Error::InvalidBox(format!("axis '{axis}' is not lo:hi")))?;
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| mfrde::Error::InvalidBox(format!("'{s}' is not a number")))
        };
        lo.push(parse(a)?);
        hi.push(parse(b)?);
    }
    AxisBox::new(lo, hi)
}

fn generate(args: GenerateArgs) -> Result<()> {
    let scheme = OutlierScheme::by_name(&args.scheme)?;
    let data = contaminated_sample(&scheme, args.n, args.outlier_ratio, args.seed)?;
    data.write_csv(&args.out)?;
    if let Some(path) = &args.provenance {
        data.write_provenance(path)?;
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let block_size = match (args.m, args.m_ratio) {
        (Some(m), _) => BlockSize::Count(m),
        (None, Some(r)) => BlockSize::Ratio(r),
        (None, None) => EstimatorConfig::default().block_size,
    };
    let domain = if args.domain == "auto" {
        DomainSpec::Auto {
            margin: args.margin,
        }
    } else {
        DomainSpec::Fixed(parse_box(&args.domain)?)
    };
    let quadrature = if args.quadrature == "auto" {
        None
    } else {
        Some(args.quadrature.parse::<Quadrature>()?)
    };
    let config = EstimatorConfig {
        block_size,
        trees: args.trees,
        depth: args.depth,
        seed: args.seed,
        quadrature,
        domain,
        ..Default::default()
    };
    let data = Dataset::read_csv(&args.input)?;
    let model = FittedMfrde::fit(&data.points, &config)?;
    save_model(&model, &args.out)?;
    Ok(())
}

fn score(args: ScoreArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = Dataset::read_csv(&args.input)?;
    let densities = if args.strict {
        data.points
            .iter()
            .map(|x| model.evaluate_strict(x))
            .collect::<mfrde::Result<Vec<_>>>()?
    } else {
        model.evaluate_batch(&data.points)?
    };
    let mut out = String::from("density\n");
    for d in densities {
        out.push_str(&format_real(d));
        out.push('\n');
    }
    write_file(&args.out, out.as_bytes())
}

fn eval_grid(args: EvalGridArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let domain = match &args.domain {
        Some(spec) => parse_box(spec)?,
        None => model.domain().clone(),
    };
    let grid = make_grid(&domain, args.grid)?;
    let densities = model.evaluate_batch(&grid.points)?;
    let mut out = String::new();
    let header: Vec<String> = (1..=domain.dim()).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    out.push_str(",density\n");
    for (z, d) in grid.points.iter().zip(densities) {
        for v in z {
            out.push_str(&format_real(*v));
            out.push(',');
        }
        out.push_str(&format_real(d));
        out.push('\n');
    }
    write_file(&args.out, out.as_bytes())
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let mut config = BenchmarkConfig::from_json_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let report = run_benchmark(&config)?;
    report.write_json(&args.out)?;
    if let Some(path) = &args.summary_csv {
        report.write_summary_csv(path)?;
    }
    Ok(())
}

fn params(args: ParamsArgs) -> Result<()> {
    let rec = recommend(&TheoryInputs {
        alpha: args.alpha,
        beta: args.beta,
        dim: args.d,
        n: args.n,
        n_outliers: args.outliers,
    })?;
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "gamma1={}, gamma2={}, m={}, p={}, T={}",
        rec.gamma1, rec.gamma2, rec.m, rec.p, rec.trees
    )?;
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// 1 for bad flags and infeasible configurations, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<mfrde::Error>() {
        Some(e) if e.is_usage() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let rendered = e.render().to_string();
            let line = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("mfrde: {}", line.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("mfrde: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Fit(a) => fit(a),
        Command::Score(a) => score(a),
        Command::EvalGrid(a) => eval_grid(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Params(a) => params(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mfrde: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}
