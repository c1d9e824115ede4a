//! The `cunet` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::data::{write_dataset, Dataset, Manifest};
use crate::error::{Error, Result};
use crate::graph::{
    build_cu_net, calibrate_dense, check_graph_gradients, to_dot, CUNetConfig, DenseUNetConfig, ModelSpec,
    NetworkGraph,
};
use crate::io;
use crate::metrics::RefLength;
use crate::tensor::GradCheckConfig;
use crate::train::{evaluate, load_checkpoint, read_checkpoint_spec, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Layers per dense block of the dense U-Net paired with a CU-Net of
/// `DENSE_BASE_UNETS` U-Nets; one layer is added per extra U-Net.
pub const DENSE_BASE_LAYERS: usize = 2;
pub const DENSE_BASE_UNETS: usize = 2;

#[derive(Debug, Parser)]
#[command(name = "cunet", version, about = "Coupled U-Nets: build, inspect, check, train and compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Key-value config file.
    #[arg(long)]
    config: PathBuf,
    /// Override one config key, e.g. `--set u=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct DenseArgs {
    /// Dense-block layers of the paired dense U-Net at `--base-unets`.
    #[arg(long, default_value_t = DENSE_BASE_LAYERS)]
    dense_layers: usize,
    /// CU-Net size at which the dense U-Net has `--dense-layers` layers.
    #[arg(long, default_value_t = DENSE_BASE_UNETS)]
    base_unets: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    /// Validation samples taken from the end of the dataset (default: a fifth).
    #[arg(long)]
    val: Option<usize>,
    /// Stop once validation PCKh reaches this value.
    #[arg(long)]
    stop_at: Option<f64>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Write 0 instead of wall-clock seconds to the log.
    #[arg(long)]
    no_time: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arch {
    Cu,
    Dense,
    Stacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RefArg {
    Pckh,
    Pck,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print total and per-component parameter counts.
    CountParams {
        #[command(flatten)]
        config: ConfigArgs,
        /// Variant to count; without it the config is used as written.
        #[arg(long, value_enum)]
        arch: Option<Arch>,
        #[command(flatten)]
        dense: DenseArgs,
    },
    /// Write the layer graph as Graphviz DOT.
    Inspect {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        dot: PathBuf,
    },
    /// Central-difference check of every parameter gradient in binary64.
    GradCheck {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Coordinates checked per parameter group.
        #[arg(long, default_value_t = 20)]
        samples: usize,
    },
    /// Generate a synthetic keypoint dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        input_res: usize,
        #[arg(long, default_value_t = 1)]
        in_channels: usize,
    },
    /// Train a network and write `best.ckpt` and `train_log.csv`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a checkpoint and write the per-joint metrics CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long = "ref", value_enum, default_value_t = RefArg::Pckh)]
        reference: RefArg,
        /// Evaluate only the last N samples (the validation split).
        #[arg(long)]
        last: Option<usize>,
        /// CSV destination (default: `eval_<ref>.csv` beside the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train coupled, stacked and parameter-matched dense variants side by side.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        dense: DenseArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

/// A command's result: its exit code and what it printed to stdout.
struct Outcome {
    code: i32,
    stdout: String,
}

fn ok(stdout: String) -> Result<Outcome> {
    Ok(Outcome { code: EXIT_OK, stdout })
}

fn load_config(args: &ConfigArgs) -> Result<CUNetConfig> {
    let mut cfg = CUNetConfig::from_kv(&io::read_text(&args.config)?)?;
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Prints a key-value document immediately, before the command acts.
fn header(title: &str, doc: &str) {
    println!("# {title}\n{doc}");
}

fn dense_template(cu: &CUNetConfig, d: &DenseArgs) -> DenseUNetConfig {
    DenseUNetConfig::new(d.dense_layers, 1, cu)
}

fn count_lines(out: &mut String, g: &NetworkGraph) {
    let _ = writeln!(out, "arch {}", g.arch.as_str());
    let _ = writeln!(out, "params {}", g.param_count());
    for (component, n) in g.param_count_by_component() {
        let _ = writeln!(out, "{component} {n}");
    }
}

fn count_params(config: &ConfigArgs, arch: Option<Arch>, dense: &DenseArgs) -> Result<Outcome> {
    let mut cfg = load_config(config)?;
    let mut out = String::new();
    match arch {
        Some(Arch::Dense) => {
            header("resolved config", &cfg.to_kv());
            let cal = calibrate_dense(&cfg, &dense_template(&cfg, dense), dense.base_unets)?;
            let g = ModelSpec::Dense(cal.config.clone()).build()?;
            header("dense config", &cal.config.to_kv());
            count_lines(&mut out, &g);
            let _ = writeln!(out, "target {}", cal.target_params);
            let _ = writeln!(out, "rel_diff {:.6}", cal.rel_diff);
        }
        _ => {
            match arch {
                Some(Arch::Cu) => cfg.coupling = true,
                Some(Arch::Stacked) => cfg.coupling = false,
                _ => {}
            }
            header("resolved config", &cfg.to_kv());
            count_lines(&mut out, &build_cu_net(&cfg)?);
        }
    }
    ok(out)
}

fn inspect(config: &ConfigArgs, dot: &Path) -> Result<Outcome> {
    let cfg = load_config(config)?;
    let mut out = String::new();
    header("resolved config", &cfg.to_kv());
    let g = build_cu_net(&cfg)?;
    g.check_invariants()?;
    io::write_atomic(dot, to_dot(&g).as_bytes())?;
    let _ = writeln!(out, "nodes {}", g.nodes().len());
    let _ = writeln!(out, "edges {}", g.edges().len());
    let _ = writeln!(out, "coupling_edges {}", g.coupling_edge_count());
    let _ = writeln!(out, "params {}", g.param_count());
    let _ = writeln!(out, "wrote {}", dot.display());
    ok(out)
}

fn grad_check(config: &ConfigArgs, tol: f64, seed: u64, samples: usize) -> Result<Outcome> {
    let cfg = load_config(config)?;
    let mut out = String::new();
    header("resolved config", &cfg.to_kv());
    let g = build_cu_net(&cfg)?;
    let check = GradCheckConfig {
        tol,
        seed,
        samples_per_group: samples,
        ..GradCheckConfig::default()
    };
    let report = check_graph_gradients(&g, seed, &check)?;
    for group in &report.groups {
        if let Some(f) = &group.failure {
            let _ = writeln!(out, "FAIL {f}");
        }
    }
    let _ = writeln!(
        out,
        "groups {} min_checked {} max_rel_err {:.3e} tol {:e}",
        report.groups.len(),
        report.min_checked(),
        report.max_rel_err(),
        tol
    );
    let pass = report.pass();
    let _ = writeln!(out, "{}", if pass { "PASS" } else { "FAIL" });
    Ok(Outcome {
        code: if pass { EXIT_OK } else { EXIT_CHECK },
        stdout: out,
    })
}

fn gen_data(out_dir: &Path, count: usize, seed: u64, input_res: usize, in_channels: usize) -> Result<Outcome> {
    let m = Manifest::new(seed, count, input_res, in_channels)?;
    let mut out = String::new();
    header("manifest", &m.to_kv());
    write_dataset(out_dir, &m)?;
    let _ = writeln!(out, "wrote {count} samples to {}", out_dir.display());
    ok(out)
}

fn train_config(args: &TrainArgs, m: &Manifest) -> TrainConfig {
    let mut cfg = TrainConfig::new(args.epochs, m.sigma);
    cfg.batch_size = args.batch;
    cfg.augment = !args.no_augment;
    cfg.stop_at = args.stop_at;
    cfg.workers = args.workers;
    cfg.record_time = !args.no_time;
    cfg.verbose = true;
    cfg
}

fn split(ds: Dataset, val: Option<usize>) -> Result<(Vec<crate::data::Sample>, Vec<crate::data::Sample>)> {
    let n = ds.len();
    ds.split(val.unwrap_or(n / 5))
}

fn run_train(config: &ConfigArgs, data: &Path, out_dir: &Path, args: &TrainArgs) -> Result<Outcome> {
    let cfg = load_config(config)?;
    let ds = Dataset::open(data)?;
    let mut out = String::new();
    header("resolved config", &cfg.to_kv());
    let tc = train_config(args, &ds.manifest);
    let (tr, va) = split(ds, args.val)?;
    let res = train(&ModelSpec::Cu(cfg), &tr, &va, &tc, out_dir)?;
    let _ = writeln!(out, "initial_val {:.6}", res.initial_val);
    let _ = writeln!(out, "final {}", res.final_val);
    let _ = writeln!(out, "best_val {:.6}", res.state.best_metric);
    let _ = writeln!(out, "checkpoint {}", res.checkpoint.display());
    ok(out)
}

fn run_eval(
    checkpoint: &Path,
    data: &Path,
    alpha: f64,
    reference: RefArg,
    last: Option<usize>,
    dest: Option<PathBuf>,
) -> Result<Outcome> {
    let spec = read_checkpoint_spec(checkpoint)?;
    let mut out = String::new();
    header("checkpoint config", &spec.to_kv());
    let reference = match reference {
        RefArg::Pckh => RefLength::Head,
        RefArg::Pck => RefLength::Torso,
    };
    let _ = writeln!(out, "alpha = {alpha}\nref = {}\n", reference.tag());
    let g = spec.build()?;
    let ck = load_checkpoint(checkpoint, &g)?;
    let ds = Dataset::open(data)?;
    let samples = match last {
        Some(n) if n <= ds.len() => &ds.samples[ds.len() - n..],
        Some(n) => return Err(Error::invalid("eval", format!("--last {n} exceeds {} samples", ds.len()))),
        None => &ds.samples[..],
    };
    crate::train::check_dataset(&g, samples)?;
    let res = evaluate(&g, &ck.params, samples, alpha, reference, 32)?;
    let dest = dest.unwrap_or_else(|| {
        checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval_{}.csv", reference.tag()))
    });
    io::write_atomic(&dest, res.to_csv().as_bytes())?;
    out.push_str(&res.to_csv());
    let _ = writeln!(out, "{res}");
    let _ = writeln!(out, "wrote {}", dest.display());
    ok(out)
}

fn compare(
    config: &ConfigArgs,
    data: &Path,
    out_dir: &Path,
    dense: &DenseArgs,
    args: &TrainArgs,
) -> Result<Outcome> {
    let mut cu = load_config(config)?;
    cu.coupling = true;
    let mut stacked = cu.clone();
    stacked.coupling = false;
    let mut out = String::new();
    header("resolved config", &cu.to_kv());
    let cal = match calibrate_dense(&cu, &dense_template(&cu, dense), dense.base_unets) {
        Ok(c) => c,
        Err(e @ Error::Calibration { .. }) => {
            return Ok(Outcome {
                code: EXIT_CHECK,
                stdout: format!("calibrate_dense failed: {e}\n"),
            })
        }
        Err(e) => return Err(e),
    };
    header("dense config", &cal.config.to_kv());

    let ds = Dataset::open(data)?;
    let tc = train_config(args, &ds.manifest);
    let (tr, va) = split(ds, args.val)?;
    let trio = [
        ("coupled", ModelSpec::Cu(cu)),
        ("stacked", ModelSpec::Cu(stacked)),
        ("dense", ModelSpec::Dense(cal.config.clone())),
    ];
    let target = cal.target_params as f64;
    let mut csv = String::from("arch,params,rel_param_diff,epochs,final_val_pck,best_val_pck\n");
    for (name, spec) in &trio {
        let params = spec.build()?.param_count();
        println!("# training {name} ({params} params)");
        let res = train(spec, &tr, &va, &tc, &out_dir.join(name))?;
        let _ = writeln!(
            csv,
            "{name},{params},{:.6},{},{:.6},{:.6}",
            (params as f64 - target) / target,
            res.log.len(),
            res.final_val.aggregate(),
            res.state.best_metric
        );
    }
    let dest = out_dir.join("compare.csv");
    io::write_atomic(&dest, csv.as_bytes())?;
    out.push_str(&csv);
    let _ = writeln!(out, "wrote {}", dest.display());
    ok(out)
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::CountParams { config, arch, dense } => count_params(&config, arch, &dense),
        Command::Inspect { config, dot } => inspect(&config, &dot),
        Command::GradCheck {
            config,
            tol,
            seed,
            samples,
        } => grad_check(&config, tol, seed, samples),
        Command::GenData {
            out,
            count,
            seed,
            input_res,
            in_channels,
        } => gen_data(&out, count, seed, input_res, in_channels),
        Command::Train {
            config,
            data,
            out,
            train,
        } => run_train(&config, &data, &out, &train),
        Command::Eval {
            checkpoint,
            data,
            alpha,
            reference,
            last,
            out,
        } => run_eval(&checkpoint, &data, alpha, reference, last, out),
        Command::Compare {
            config,
            data,
            out,
            dense,
            train,
        } => compare(&config, &data, &out, &dense, &train),
    }
}

/// Exit code for an error escaping a command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument { .. } => EXIT_USAGE,
        Error::Calibration { .. } | Error::Connectivity(_) => EXIT_CHECK,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(o) => {
            print!("{}", o.stdout);
            o.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
