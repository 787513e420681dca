//! `parc`: verify, train, evaluate, count and benchmark ParC networks.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use parcnet::bench::{self, Arm, BenchReport};
use parcnet::model::{build_model, load_checkpoint, save_checkpoint, ModelConfig};
use parcnet::trainer::{self, make_synthetic, Dataset, DatasetKind, DatasetSpec, Synthetic, TrainConfig};
use parcnet::verify::{self, Check};
use parcnet::Error;

#[derive(Parser)]
#[command(name = "parc", version, about = "Position-aware circular convolution toolkit")]
struct Cli {
    /// Print one JSON document instead of human-readable text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run property suites and report pass/fail per property.
    Check {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random cases for the oracle and shift suites.
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Top-1 accuracy of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Use the EMA shadow weights.
        #[arg(long)]
        ema: bool,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
    },
    /// Generate a synthetic dataset directory.
    Synth {
        #[arg(long, value_enum)]
        kind: SynthKind,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parameter count and multiply-accumulates of a model config.
    Flops {
        #[arg(long)]
        config: PathBuf,
        /// Input size as HxW.
        #[arg(long, value_parser = parse_hw)]
        input: (usize, usize),
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Time circular-convolution arms or a whole model.
    Bench {
        /// oracle, concat, direct, local_bk, or model (requires --config).
        #[arg(long)]
        arm: String,
        /// Input dims as NxCxHxW.
        #[arg(long, value_parser = parse_dims)]
        dims: [usize; 4],
        #[arg(long, default_value_t = bench::DEFAULT_ITERS)]
        iters: usize,
        #[arg(long, default_value_t = bench::DEFAULT_WARMUP)]
        warmup: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print CSV rows instead of a table.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Oracle,
    Grad,
    Shift,
    Receptive,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Quadrant,
    ShiftPairs,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataArgs {
    /// Dataset directory with images.ptns and labels.ptns.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic dataset, e.g. `quadrant:n=4000,size=16,seed=7,noise=0.05`.
    #[arg(long, value_parser = parse_synth)]
    synth: Option<DatasetSpec>,
}

impl DataArgs {
    fn load(&self) -> parcnet::Result<Dataset> {
        let spec = match (&self.data, &self.synth) {
            (Some(dir), _) => DatasetSpec {
                kind: DatasetKind::File,
                path: Some(dir.clone()),
                ..DatasetSpec::quadrant(0, 0, 0)
            },
            (None, Some(spec)) => spec.clone(),
            (None, None) => unreachable!("clap requires one of --data/--synth"),
        };
        match make_synthetic(&spec)? {
            Synthetic::Labeled(d) => Ok(d),
            Synthetic::Pairs(_) => Err(Error::Argument("shift-pairs data has no labels".into())),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Model config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Training hyperparameters JSON; desk defaults when omitted.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
    /// Seeds both initialization and shuffling; overrides the train config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Append `step,lr,loss,epoch` rows to this CSV file.
    #[arg(long)]
    log: Option<PathBuf>,
}

fn parse_hw(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split('x').collect();
    match parts.as_slice() {
        [h, w] => Ok((
            h.parse().map_err(|_| format!("bad height in `{s}`"))?,
            w.parse().map_err(|_| format!("bad width in `{s}`"))?,
        )),
        _ => Err(format!("expected HxW, got `{s}`")),
    }
}

fn parse_dims(s: &str) -> Result<[usize; 4], String> {
    let v: Vec<usize> = s
        .split('x')
        .map(|p| p.parse().map_err(|_| format!("bad dimension `{p}` in `{s}`")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| format!("expected NxCxHxW, got `{s}`"))
}

fn parse_synth(s: &str) -> Result<DatasetSpec, String> {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    let kind = match kind {
        "quadrant" => DatasetKind::Quadrant,
        "shift-pairs" => DatasetKind::ShiftPairs,
        other => return Err(format!("unknown synthetic kind `{other}`")),
    };
    let mut spec = DatasetSpec {
        kind,
        ..DatasetSpec::quadrant(4000, 16, 0)
    };
    for kv in rest.split(',').filter(|p| !p.is_empty()) {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("expected key=value, got `{kv}`"))?;
        let bad = |_| format!("bad value for `{k}`: `{v}`");
        match k {
            "n" => spec.n = v.parse().map_err(bad)?,
            "size" => spec.size = v.parse().map_err(bad)?,
            "seed" => spec.seed = v.parse().map_err(bad)?,
            "noise" => spec.noise = v.parse().map_err(|_| format!("bad value for `noise`: `{v}`"))?,
            _ => return Err(format!("unknown synthetic key `{k}`")),
        }
    }
    Ok(spec)
}

/// Exit status for a failed command: bad input is a usage error (2),
/// anything else a failure (1).
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        _ => 1,
    }
}

fn configure_threads(default_single: bool) {
    let threads = std::env::var("PARC_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .or(default_single.then_some(1));
    if let Some(n) = threads {
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads(matches!(cli.command, Command::Bench { .. }));
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn print_json(value: serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(&value).expect("JSON values serialize"));
}

fn run(cli: Cli) -> parcnet::Result<ExitCode> {
    let json = cli.json;
    match cli.command {
        Command::Check { suite, seed, trials } => check(suite, seed, trials, json),
        Command::Train(args) => train(args, json),
        Command::Eval {
            ckpt,
            data,
            ema,
            batch_size,
        } => {
            let ck = load_checkpoint(&ckpt)?;
            let data = data.load()?;
            let model = ck.model()?;
            let weights = if ema {
                ck.ema
                    .as_ref()
                    .ok_or_else(|| Error::Schema(format!("{} has no EMA shadow", ckpt.display())))?
            } else {
                &ck.params
            };
            let acc = trainer::evaluate(&model, weights, &data, batch_size)?;
            if json {
                print_json(json!({
                    "accuracy": acc,
                    "samples": data.len(),
                    "weights": if ema { "ema" } else { "params" },
                }));
            } else {
                let which = if ema { "EMA" } else { "training" };
                println!("top-1 accuracy ({which} weights, {} samples): {acc:.4}", data.len());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            kind,
            n,
            size,
            seed,
            noise,
            out,
        } => {
            let spec = DatasetSpec {
                kind: match kind {
                    SynthKind::Quadrant => DatasetKind::Quadrant,
                    SynthKind::ShiftPairs => DatasetKind::ShiftPairs,
                },
                n,
                size,
                noise,
                seed,
                path: None,
            };
            make_synthetic(&spec)?.save(&out)?;
            if json {
                print_json(json!({ "out": out, "n": n, "size": size, "seed": seed }));
            } else {
                println!("wrote {n} samples of {size}x{size} to {}", out.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Flops { config, input, batch } => {
            let cfg = ModelConfig::load(&config)?;
            let model = build_model(cfg, 0)?;
            let dims = [batch, model.config().in_channels, input.0, input.1];
            let costs = model.cost_breakdown(dims)?;
            let params = model.count_params();
            let macs = model.count_flops(dims)?;
            if json {
                let units: Vec<_> = costs
                    .iter()
                    .map(|c| json!({ "name": c.name, "input": c.input_dims, "output": c.output_dims, "params": c.params, "macs": c.macs }))
                    .collect();
                print_json(json!({ "model": model.config().name, "input": dims, "params": params, "macs": macs, "units": units }));
            } else {
                println!("{} at {}x{} (batch {batch})", model.config().name, input.0, input.1);
                println!("{:<10} {:>18} {:>18} {:>10} {:>14}", "unit", "input", "output", "params", "MACs");
                for c in &costs {
                    println!(
                        "{:<10} {:>18} {:>18} {:>10} {:>14}",
                        c.name,
                        format!("{:?}", c.input_dims),
                        format!("{:?}", c.output_dims),
                        c.params,
                        c.macs
                    );
                }
                println!("parameters: {params}");
                println!("MACs: {macs}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            arm,
            dims,
            iters,
            warmup,
            seed,
            config,
            csv,
        } => {
            let reports: Vec<BenchReport> = if arm == "model" {
                let path = config.ok_or_else(|| Error::Argument("--arm model needs --config".into()))?;
                let model = build_model(ModelConfig::load(&path)?, seed)?;
                bench::bench_model(&model, dims, iters, warmup, seed)?
            } else {
                vec![bench::bench_op(arm.parse::<Arm>()?, dims, iters, warmup, seed)?]
            };
            if json {
                print_json(json!({ "reports": reports }));
            } else if csv {
                print!("{}", bench::to_csv(&reports));
            } else {
                println!(
                    "{:<12} {:>14} {:>6} {:>14} {:>14} {:>12} {:>14} {:>14}",
                    "arm", "dims", "iters", "mean_ns", "median_ns", "stddev_ns", "macs", "checksum"
                );
                for r in &reports {
                    println!(
                        "{:<12} {:>14} {:>6} {:>14.0} {:>14.0} {:>12.0} {:>14} {:>14.6e}",
                        r.name,
                        r.dims_label(),
                        r.iters,
                        r.mean_ns,
                        r.median_ns,
                        r.stddev_ns,
                        r.macs,
                        r.checksum
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn check(suite: Suite, seed: u64, trials: usize, json: bool) -> parcnet::Result<ExitCode> {
    let mut checks: Vec<Check> = Vec::new();
    if matches!(suite, Suite::Oracle | Suite::All) {
        checks.extend(verify::oracle_suite(trials, seed)?);
    }
    if matches!(suite, Suite::Grad | Suite::All) {
        checks.extend(verify::grad_suite(seed)?);
    }
    if matches!(suite, Suite::Shift | Suite::All) {
        checks.extend(verify::shift_suite(trials.min(100), seed)?);
    }
    if matches!(suite, Suite::Receptive | Suite::All) {
        checks.extend(verify::receptive_suite(seed)?);
    }
    let passed = checks.iter().all(|c| c.passed);
    if json {
        print_json(json!({ "passed": passed, "checks": checks }));
    } else {
        for c in &checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            println!("{verdict} {:<45} worst {:.3e} (threshold {:e})", c.name, c.worst, c.threshold);
        }
    }
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn train(args: TrainArgs, json: bool) -> parcnet::Result<ExitCode> {
    let model_cfg = ModelConfig::load(&args.config)?;
    let mut cfg = match &args.train_config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::desk(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let data = args.data.load()?;
    let mut model = build_model(model_cfg, cfg.seed)?;
    let mut log = args.log.as_ref().map(trainer::open_log).transpose()?;
    let mut last = f64::NAN;
    let ck = trainer::train(&mut model, &cfg, &data, |row| {
        last = row.loss;
        if let (Some(log), Some(path)) = (log.as_mut(), args.log.as_ref()) {
            log.row(row).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
        }
        Ok(())
    })?;
    save_checkpoint(&ck, &args.out)?;
    let acc = trainer::evaluate(&model, model.params(), &data, 256)?;
    if json {
        print_json(json!({ "out": args.out, "steps": ck.step, "final_loss": last, "train_accuracy": acc }));
    } else {
        println!("trained {} steps, final loss {last:.4}, train accuracy {acc:.4}", ck.step);
        println!("checkpoint written to {}", args.out.display());
    }
    Ok(ExitCode::SUCCESS)
}
