//! `bwn`: train, evaluate, export and run binary-weight networks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bwn_core::data::{load_mnist_dir, MnistSplit};
use bwn_core::export::{graph_from_file, load_model, read_model_file, PackedNetwork};
use bwn_core::gradcheck;
use bwn_core::train::{self, DatasetKind, RunConfig, MODEL_FILE};
use bwn_core::Error;
use clap::{Parser, Subcommand};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "bwn", version, about = "Binary-weight network training and bit-packed inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write metrics, checkpoints and the exported model.
    Train(Args),
    /// Report top-1 error of a .bwn model on the test split.
    Eval(Args),
    /// Convert a checkpoint (or any .bwn file) into a deployable sign-bit model.
    Export(Args),
    /// Print packed-inference predictions for the test split.
    Infer(Args),
    /// Run the finite-difference and transform property checks.
    Gradcheck(Args),
}

#[derive(clap::Args, Debug)]
struct Args {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` or `--key=value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

enum Failure {
    Usage(String),
    Error(Error),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn parse_overrides(raw: &[String]) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    let mut it = raw.iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            return Err(Failure::Usage(format!("expected --key, got {flag:?}")));
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Failure::Usage(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn config(args: &Args) -> Result<RunConfig, Failure> {
    let overrides = parse_overrides(&args.overrides)?;
    Ok(RunConfig::load(args.config.as_deref(), &overrides)?)
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.model.clone().unwrap_or_else(|| cfg.output_dir.join(MODEL_FILE))
}

fn load_network(path: &Path) -> Result<PackedNetwork, Failure> {
    let bytes = std::fs::read(path).map_err(|e| Error::Path {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(load_model(&bytes)?)
}

fn test_split(cfg: &RunConfig) -> Result<bwn_core::data::Dataset, Failure> {
    if cfg.dataset == DatasetKind::Mnist {
        let mut ds = load_mnist_dir(&cfg.data_dir, MnistSplit::Test)?;
        if cfg.test_limit > 0 {
            ds = ds.take(cfg.test_limit);
        }
        Ok(ds)
    } else {
        Ok(train::load_datasets(cfg)?.1)
    }
}

fn cmd_train(args: &Args) -> Result<(), Failure> {
    let cfg = config(args)?;
    let summary = train::run(&cfg)?;
    println!("best_epoch={}", summary.best_epoch);
    println!("best_val_top1={:.4}", summary.best_val_top1);
    println!("best_val_error_percent={:.2}", 100.0 * (1.0 - summary.best_val_top1));
    println!("elapsed_seconds={:.1}", summary.elapsed.as_secs_f64());
    println!("output_dir={}", summary.output_dir.display());
    Ok(())
}

fn cmd_eval(args: &Args) -> Result<(), Failure> {
    let cfg = config(args)?;
    let net = load_network(&model_path(&cfg))?;
    let ds = test_split(&cfg)?;
    let acc = train::evaluate_packed(&net, &ds)?;
    println!("samples={}", ds.len());
    println!("top1_accuracy={acc:.4}");
    println!("top1_error_percent={:.2}", 100.0 * (1.0 - acc));
    Ok(())
}

fn cmd_export(args: &Args) -> Result<(), Failure> {
    let cfg = config(args)?;
    let input = cfg
        .model
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join(train::CHECKPOINT_FILE));
    let file = read_model_file(&input)?;
    let graph = graph_from_file(&file)?;
    let bytes = bwn_core::export::export_model(&graph)?;
    let out = cfg.export_path.clone().unwrap_or_else(|| cfg.output_dir.join(MODEL_FILE));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Path {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(&out, &bytes).map_err(|e| Error::Path {
        path: out.clone(),
        source: e,
    })?;
    println!("wrote={}", out.display());
    println!("bytes={}", bytes.len());
    Ok(())
}

fn cmd_infer(args: &Args) -> Result<(), Failure> {
    let cfg = config(args)?;
    let net = load_network(&model_path(&cfg))?;
    let ds = test_split(&cfg)?;
    let preds = net.predict(ds.images(), 500)?;
    for (i, (p, l)) in preds.iter().zip(ds.labels()).enumerate() {
        println!("sample={i} predicted={p} label={l}");
    }
    Ok(())
}

fn cmd_gradcheck(args: &Args) -> Result<(), Failure> {
    let cfg = config(args)?;
    let report = gradcheck::run_all(cfg.seed)?;
    print!("{report}");
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} gradient checks failed", report.failures().count())))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Export(a) => cmd_export(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERIC)
        }
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        e if e.is_numeric() => EXIT_NUMERIC,
        _ => EXIT_DATA,
    }
}
