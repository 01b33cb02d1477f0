//! Command-line interface.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{keys_help, Config};
use crate::data::{ingest, synth_to_dir};
use crate::diffcore::gradcheck::op_suite;
use crate::error::{Error, Result};
use crate::eval::rank_table;
use crate::network::tiny_loss_suite;
use crate::pipeline;

pub const OP_TOLERANCE: f64 = 1e-5;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "crossreid", version, about = "Image-to-video person re-identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run seed (data.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset root (data.root).
    #[arg(long)]
    root: Option<PathBuf>,
    /// Number of splits (data.trials).
    #[arg(long)]
    trials: Option<usize>,
    /// Training epochs (train.epochs).
    #[arg(long)]
    epochs: Option<usize>,
    /// Synthetic identities (synth.k).
    #[arg(long)]
    k: Option<usize>,
    /// Synthetic frames per camera (synth.frames).
    #[arg(long)]
    frames: Option<usize>,
    /// Synthetic pixel noise (synth.noise).
    #[arg(long)]
    noise: Option<f64>,
    /// Input resolution (data.resolution).
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset tree.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Index a dataset tree and report what would be used.
    IngestCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Train every trial; writes loss.csv, checkpoints and train_report.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate trained checkpoints; writes cmc.csv and cmc_table.txt.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate only this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Finite-difference checks of every op and of the full loss.
    Gradcheck {
        /// Seed of the random op instances.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Show that the fixed branch matters in WP and is cut after KD.
    Severance {
        #[command(flatten)]
        common: Common,
        /// Freshly initialized networks probed in WP.
        #[arg(long, default_value_t = 20)]
        networks: usize,
    },
    /// Summarize the artifacts of a train/evaluate output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn build_config(c: &Common) -> Result<Config> {
    let mut cfg = Config::default();
    if let Some(path) = &c.config {
        cfg.apply_file(path)?;
    }
    cfg.apply_env()?;
    for kv in &c.set {
        cfg.apply_override(kv)?;
    }
    if let Some(v) = c.seed {
        cfg.seed = v;
    }
    if let Some(v) = &c.root {
        cfg.root = Some(v.clone());
    }
    let flags = [
        ("data.trials", c.trials.map(|v| v.to_string())),
        ("train.epochs", c.epochs.map(|v| v.to_string())),
        ("synth.k", c.k.map(|v| v.to_string())),
        ("synth.frames", c.frames.map(|v| v.to_string())),
        ("synth.noise", c.noise.map(|v| v.to_string())),
        ("data.resolution", c.resolution.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    Ok(cfg)
}

fn gradcheck(seed: u64) -> Result<bool> {
    let mut ok = true;
    println!("{:<28} {:>14}  {}", "check", "max rel error", "result");
    let mut show = |name: &str, err: f64, tol: f64| {
        let pass = err < tol;
        ok &= pass;
        println!("{name:<28} {err:>14.3e}  {}", if pass { "ok" } else { "FAIL" });
    };
    for (name, r) in op_suite(seed, OP_TOLERANCE)? {
        show(&name, r.max_rel_error(), OP_TOLERANCE);
    }
    for (name, r) in tiny_loss_suite(END_TO_END_TOLERANCE)? {
        show(&name, r.max_rel_error(), END_TO_END_TOLERANCE);
    }
    Ok(ok)
}

fn ingest_check(cfg: &Config) -> Result<()> {
    let root = cfg
        .root
        .as_ref()
        .ok_or_else(|| Error::MissingKey("data.root".into()))?;
    let index = ingest(root, &cfg.layout)?;
    let frames: Vec<usize> = index.entries.iter().map(|e| e.cam_b.len()).collect();
    println!("identities: {}", index.k_total());
    println!(
        "single-shot probes: {}",
        index.entries.iter().filter(|e| e.single_shot).count()
    );
    if let (Some(lo), Some(hi)) = (frames.iter().min(), frames.iter().max()) {
        println!("camera B frames per identity: {lo}..{hi}");
    }
    for w in &index.warnings {
        println!("warning: {w}");
    }
    Ok(())
}

fn report(out: &Path) -> Result<String> {
    if !out.is_dir() {
        return Err(Error::Io {
            path: out.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "output directory not found"),
        });
    }
    let mut trials: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|e| Error::io(out, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("trial_"))
        })
        .collect();
    trials.sort_by_key(|p| {
        p.file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n["trial_".len()..].parse::<usize>().ok())
    });
    let mut s = String::new();
    for t in &trials {
        let path = t.join("train_report");
        if let Ok(text) = fs::read_to_string(&path) {
            let _ = writeln!(s, "== {}", t.file_name().unwrap().to_string_lossy());
            s.push_str(&text);
        }
    }
    let table = out.join("cmc_table.txt");
    match fs::read_to_string(&table) {
        Ok(text) => {
            let _ = writeln!(s, "== CMC");
            s.push_str(&text);
        }
        Err(_) => {
            let _ = writeln!(s, "no evaluation results ({} missing)", table.display());
        }
    }
    if trials.is_empty() && !table.exists() {
        return Err(Error::Dataset(format!("{} holds no training or evaluation output", out.display())));
    }
    Ok(s)
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Synth { common, out } => {
            let cfg = build_config(&common)?;
            let synth = cfg.synth();
            let ds = synth_to_dir(&synth, &out)?;
            println!(
                "wrote {} identities x {} frames ({}x{}) to {}",
                ds.len(),
                synth.frames,
                synth.resolution,
                synth.resolution,
                out.display()
            );
        }
        Command::IngestCheck { common } => ingest_check(&build_config(&common)?)?,
        Command::Train { common, out } => {
            let cfg = build_config(&common)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let path = out.join("config.txt");
            fs::write(&path, cfg.dump()).map_err(|e| Error::io(&path, e))?;
            for s in pipeline::train_all(&cfg, &out)? {
                println!(
                    "trial {}: loss {:.5} -> {:.5}",
                    s.trial, s.first_loss, s.final_loss
                );
            }
        }
        Command::Evaluate {
            common,
            out,
            checkpoint,
        } => {
            let cfg = build_config(&common)?;
            let (mean, curves) = pipeline::evaluate_all(&cfg, &out, checkpoint.as_deref())?;
            print!("{}", rank_table(&mean, &curves));
        }
        Command::Gradcheck { seed } => return gradcheck(seed),
        Command::Severance { common, networks } => {
            let cfg = build_config(&common)?;
            let r = pipeline::severance(&cfg, networks)?;
            println!("WP output changed: {}/{} networks", r.wp_changed, r.wp_networks);
            println!("influence after schedule: {:e}", r.final_influence);
            println!("severed: {}", r.severed);
            println!("fixed branch unchanged: {}", r.fixed_unchanged);
            return Ok(r.severed && r.fixed_unchanged);
        }
        Command::Report { out } => print!("{}", report(&out)?),
    }
    Ok(true)
}

fn command() -> clap::Command {
    let keys = format!("Config keys:\n{}", keys_help());
    let mut cmd = Cli::command();
    for name in ["synth", "ingest-check", "train", "evaluate", "severance"] {
        let k = keys.clone();
        cmd = cmd.mut_subcommand(name, |c| c.after_help(k));
    }
    cmd.after_help(keys)
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
