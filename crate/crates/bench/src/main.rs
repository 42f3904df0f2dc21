use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use lmhead::cost::{all_reports, DtypeSpec};
use lmhead::{Dims, TileConfig};
use lmhead_bench::check::{CheckOptions, Fault};
use lmhead_bench::cost_table::{render_table, write_cost_csv};
use lmhead_bench::gradcheck::run_gradcheck;
use lmhead_bench::sweep::csv_writer;
use lmhead_bench::{
    run_check, run_sweep, Axis, BenchStrategy, SweepSpec, CHECK_GUARD_ELEMS, CSV_HEADER,
};

#[derive(Parser)]
#[command(
    name = "lmhead-bench",
    version,
    about = "Checks, gradient checks, sweeps and traffic reports for the fused LM head"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare fused forward/backward against the eager head over a tile grid.
    Check(CheckArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Sweep one dimension and emit timing and memory as CSV.
    Bench(BenchArgs),
    /// Print modelled memory traffic for every strategy.
    Cost(CostArgs),
}

#[derive(Args)]
struct Common {
    /// Problem size as BxSxDxV.
    #[arg(long, default_value = "2x3x4x5")]
    dims: Dims,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Run above the desk-scale size guard.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TileArgs {
    /// Tile shape as CxBT (vocab tile by batch tile).
    #[arg(long, value_parser = parse_tile)]
    tile: Option<(usize, usize)>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Bit-reproducible reductions regardless of thread count.
    #[arg(long)]
    deterministic: bool,
}

impl TileArgs {
    fn config(&self, dims: Dims) -> TileConfig {
        let base = TileConfig::for_dims(dims);
        let (c, bt) = self.tile.unwrap_or((base.vocab_tile, base.batch_tile));
        base.with_tiles(c, bt)
            .with_threads(self.threads)
            .with_deterministic(self.deterministic || self.threads == 1)
    }
}

#[derive(Args)]
struct CheckArgs {
    #[command(flatten)]
    common: Common,
    /// Check a single tile configuration instead of the default grid.
    #[command(flatten)]
    tile: TileArgs,
    /// Add DELTA to the hybrid score at (B, V): B,V,DELTA.
    #[arg(long, hide = true, value_parser = parse_fault)]
    inject_fault: Option<Fault>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: Common,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Fixed dims; the swept axis is overridden by --values.
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    tile: TileArgs,
    #[arg(long, default_value = "seq")]
    axis: Axis,
    /// Comma-separated, strictly increasing.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    values: Vec<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "eager,compiled-sim,hybrid,fully_fused"
    )]
    strategies: Vec<BenchStrategy>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// Per-forward cap on tracked bytes; strategies above it report OOM.
    #[arg(long)]
    mem_cap: Option<usize>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value = "512x512x768x30522")]
    dims: Dims,
    #[command(flatten)]
    tile: TileArgs,
    /// Activation element size (2 or 4).
    #[arg(long, default_value_t = 2)]
    dtype_bytes: u64,
    /// Also write per-stage rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_tile(s: &str) -> Result<(usize, usize), String> {
    let (c, bt) = s.split_once('x').ok_or("expected CxBT")?;
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    Ok((parse(c)?, parse(bt)?))
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [b, v, delta] = parts[..] else {
        return Err("expected B,V,DELTA".into());
    };
    let err = |e: &dyn std::fmt::Display| e.to_string();
    Ok(Fault::CorruptScore {
        b: b.parse().map_err(|e| err(&e))?,
        v: v.parse().map_err(|e| err(&e))?,
        delta: delta.parse().map_err(|e| err(&e))?,
    })
}

/// Bad arguments, as opposed to a check that ran and failed.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Usage(msg.into()).into())
}

fn guard(common: &Common, dims: Dims) -> anyhow::Result<()> {
    if common.force {
        return Ok(());
    }
    match dims.logit_elems() {
        Ok(n) if n <= CHECK_GUARD_ELEMS => Ok(()),
        Ok(n) => usage(format!(
            "B*S*V = {n} exceeds the guard of {CHECK_GUARD_ELEMS}; pass --force to run anyway"
        )),
        Err(e) => usage(e.to_string()),
    }
}

fn cmd_check(args: CheckArgs) -> anyhow::Result<bool> {
    let dims = args.common.dims;
    guard(&args.common, dims)?;
    let mut opts = CheckOptions::new(dims, args.common.seed);
    if args.tile.tile.is_some() || args.tile.threads != 1 || args.tile.deterministic {
        let cfg = args.tile.config(dims);
        if let Err(e) = cfg.validate(dims) {
            return usage(e.to_string());
        }
        opts.grid = vec![cfg];
    }
    if let Some(Fault::CorruptScore { b, v, .. }) = args.inject_fault {
        if b >= dims.batch() || v >= dims.vocab() {
            return usage(format!("fault position ({b}, {v}) is outside {dims}"));
        }
    }
    opts.fault = args.inject_fault;
    let report = run_check(&opts)?;
    println!("check {dims} seed={}", args.common.seed);
    println!("{report}");
    Ok(report.passed())
}

fn cmd_gradcheck(args: GradcheckArgs) -> anyhow::Result<bool> {
    let dims = args.common.dims;
    guard(&args.common, dims)?;
    if !(args.h.is_finite() && args.h > 0.0) {
        return usage("--h must be a positive finite step");
    }
    let report = run_gradcheck(dims, args.common.seed, args.h)?;
    println!("gradcheck {dims} seed={}", args.common.seed);
    println!("{report}");
    Ok(report.passed())
}

fn cmd_bench(args: BenchArgs) -> anyhow::Result<bool> {
    let base = args.common.dims;
    let spec = SweepSpec {
        axis: args.axis,
        values: args.values,
        base,
        strategies: args.strategies,
        repeats: args.repeats,
        warmup: args.warmup,
        seed: args.common.seed,
        tile: args.tile.config(base),
        mem_cap: args.mem_cap,
    };
    if let Err(e) = spec.validate() {
        return usage(e.to_string());
    }
    for &value in &spec.values {
        match spec.dims_at(value) {
            Ok(d) => guard(&args.common, d)?,
            Err(e) => return usage(e.to_string()),
        }
    }

    let out: Box<dyn Write> = match &args.csv {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv_writer(out);
    w.write_record(CSV_HEADER)?;
    let mut failed = None;
    run_sweep(&spec, |record| {
        if failed.is_none() {
            if let Err(e) = w
                .write_record(record.csv_fields())
                .and_then(|_| w.flush().map_err(Into::into))
            {
                failed = Some(e);
            }
        }
    })?;
    if let Some(e) = failed {
        return Err(e.into());
    }
    w.flush()?;
    Ok(true)
}

fn cmd_cost(args: CostArgs) -> anyhow::Result<bool> {
    let dt = match DtypeSpec::new(args.dtype_bytes) {
        Ok(dt) => dt,
        Err(e) => return usage(e.to_string()),
    };
    let cfg = args.tile.config(args.dims);
    if let Err(e) = cfg.validate(args.dims) {
        return usage(e.to_string());
    }
    let reports = all_reports(args.dims, dt, &cfg)?;
    print!("{}", render_table(args.dims, dt, &reports));
    println!(
        "tiles C={} bt={}; saved-state ratio eager/fused = S = {}",
        cfg.vocab_tile,
        cfg.batch_tile,
        lmhead::cost::saved_state_ratio(args.dims)
    );
    if let Some(path) = &args.csv {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        write_cost_csv(BufWriter::new(file), &reports)?;
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.cmd {
        Command::Check(a) => cmd_check(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Cost(a) => cmd_cost(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
