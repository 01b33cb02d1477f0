//! End-to-end runs: dataset, splits, training and evaluation per trial.

use std::path::{Path, PathBuf};

use crate::checkpoint::{checkpoint_name, Checkpoint};
use crate::config::Config;
use crate::data::{ingest, make_splits, synth_generate, PreparedData, SplitPlan, UnitDataset};
use crate::diffcore::{Precision, Real};
use crate::error::{Error, Result};
use crate::eval::{average, evaluate, write_outputs, CmcCurve};
use crate::network::{Network, NetworkConfig};
use crate::seed::{derive, Stream};
use crate::trainer::{train, TrainConfig, TrainState};

/// Index under the init stream reserved for the frozen branches.
const FIXED_BRANCH_INDEX: u64 = 1 << 32;

/// Loads `data.root`, or generates the synthetic dataset when it is unset.
pub fn load_units(cfg: &Config) -> Result<UnitDataset> {
    let raw = match &cfg.root {
        Some(root) => {
            let index = ingest(root, &cfg.layout)?;
            for w in &index.warnings {
                log::warn!("{w}");
            }
            index.load()?
        }
        None => synth_generate(&cfg.synth())?,
    };
    UnitDataset::from_raw(&raw, cfg.resolution)
}

pub fn splits(cfg: &Config, n_identities: usize) -> Result<Vec<SplitPlan>> {
    make_splits(n_identities, cfg.trials, cfg.seed)
}

pub fn network_config(cfg: &Config, num_identities: usize) -> NetworkConfig {
    NetworkConfig {
        encoder: cfg.encoder(),
        num_identities,
        share_frame_encoder: cfg.share_frame_encoder,
        fmr_fixed_seed: cfg
            .fmr
            .then(|| cfg.fixed_seed.unwrap_or_else(|| derive(cfg.seed, Stream::Init, FIXED_BRANCH_INDEX))),
    }
}

pub fn train_config(cfg: &Config) -> TrainConfig {
    TrainConfig {
        epochs: cfg.epochs,
        lr: cfg.lr,
        precision: cfg.precision,
        seed: cfg.seed,
        schedule: cfg.schedule(),
        checkpoint_every: cfg.checkpoint_every,
    }
}

pub fn trial_dir(out: &Path, trial: usize) -> PathBuf {
    out.join(format!("trial_{trial}"))
}

/// Standardized data for one split, with statistics from its training half.
pub fn prepare<R: Real>(units: &UnitDataset, split: &SplitPlan) -> Result<PreparedData<R>> {
    units.standardize(&units.stats(&split.train)?)
}

/// Loss summary of one trained trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub trial: usize,
    pub first_loss: f64,
    pub final_loss: f64,
    pub cmc: Option<CmcCurve>,
}

/// Trains one trial from scratch; evaluates it on the test half when
/// `evaluate_after` is set.
pub fn run_trial<R: Real>(
    cfg: &Config,
    units: &UnitDataset,
    split: &SplitPlan,
    out: Option<&Path>,
    evaluate_after: bool,
) -> Result<(TrainState<R>, TrialSummary)> {
    let data = prepare::<R>(units, split)?;
    let net = Network::<R>::new(
        network_config(cfg, split.train.len()),
        derive(cfg.seed, Stream::Init, split.trial as u64),
    )?;
    let mut state = TrainState::new(net, cfg.seed, split.trial);
    let dir = out.map(|o| trial_dir(o, split.trial));
    train(&train_config(cfg), &mut state, &data, split, dir.as_deref())?;
    let cmc = if evaluate_after {
        Some(evaluate(&state.net, &data, split, state.stage, cfg.score)?)
    } else {
        None
    };
    let summary = TrialSummary {
        trial: split.trial,
        first_loss: state.history.first().map_or(f64::NAN, |r| r.loss.total),
        final_loss: state.history.last().map_or(f64::NAN, |r| r.loss.total),
        cmc,
    };
    Ok((state, summary))
}

fn train_all_as<R: Real>(cfg: &Config, out: &Path) -> Result<Vec<TrialSummary>> {
    let units = load_units(cfg)?;
    splits(cfg, units.len())?
        .iter()
        .map(|s| run_trial::<R>(cfg, &units, s, Some(out), false).map(|(_, sum)| sum))
        .collect()
}

/// Trains every trial into `out/trial_<t>/`.
pub fn train_all(cfg: &Config, out: &Path) -> Result<Vec<TrialSummary>> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_all_as::<f32>(cfg, out),
        Precision::F64 => train_all_as::<f64>(cfg, out),
    }
}

fn evaluate_checkpoint<R: Real>(
    cfg: &Config,
    units: &UnitDataset,
    plans: &[SplitPlan],
    path: &Path,
) -> Result<CmcCurve> {
    if !path.is_file() {
        return Err(Error::Checkpoint(format!(
            "checkpoint not found: {} (run `crossreid train` first)",
            path.display()
        )));
    }
    let ckpt = Checkpoint::<R>::load(path)?;
    let split = plans.get(ckpt.trial).ok_or_else(|| {
        Error::Checkpoint(format!(
            "{} belongs to trial {} but only {} trials are configured",
            path.display(),
            ckpt.trial,
            plans.len()
        ))
    })?;
    let stage = ckpt.stage;
    let state = TrainState::from_checkpoint(ckpt)?;
    let data = prepare::<R>(units, split)?;
    evaluate(&state.net, &data, split, stage, cfg.score)
}

fn evaluate_all_as<R: Real>(cfg: &Config, out: &Path, checkpoint: Option<&Path>) -> Result<(CmcCurve, Vec<CmcCurve>)> {
    let units = load_units(cfg)?;
    let plans = splits(cfg, units.len())?;
    let paths: Vec<PathBuf> = match checkpoint {
        Some(p) => vec![p.to_path_buf()],
        None => (0..plans.len())
            .map(|t| trial_dir(out, t).join(checkpoint_name(cfg.epochs)))
            .collect(),
    };
    let curves = paths
        .iter()
        .map(|p| evaluate_checkpoint::<R>(cfg, &units, &plans, p))
        .collect::<Result<Vec<_>>>()?;
    Ok((average(&curves)?, curves))
}

/// Evaluates the final checkpoint of every trial under `out` (or a single
/// checkpoint) and writes `cmc.csv` and `cmc_table.txt` to `out`.
pub fn evaluate_all(cfg: &Config, out: &Path, checkpoint: Option<&Path>) -> Result<(CmcCurve, Vec<CmcCurve>)> {
    cfg.validate()?;
    let (mean, curves) = match cfg.precision {
        Precision::F32 => evaluate_all_as::<f32>(cfg, out, checkpoint)?,
        Precision::F64 => evaluate_all_as::<f64>(cfg, out, checkpoint)?,
    };
    write_outputs(out, &mean, &curves)?;
    Ok((mean, curves))
}

/// Outcome of the fixed-branch severance demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct SeveranceReport {
    /// Freshly initialized networks whose WP output moved under a shift of
    /// the fixed-branch outputs.
    pub wp_changed: usize,
    pub wp_networks: usize,
    /// Largest output change after training through KD into WPK.
    pub final_influence: f64,
    pub severed: bool,
    pub fixed_unchanged: bool,
}

const SEVERANCE_SHIFT: f64 = 0.5;

fn fixed_bytes<R: Real>(net: &Network<R>) -> Vec<u8> {
    net.fixed_embedders()
        .map(|(a, b)| [a.param_bytes(), b.param_bytes()].concat())
        .unwrap_or_default()
}

fn severance_as<R: Real>(cfg: &Config, networks: usize) -> Result<SeveranceReport> {
    use crate::fmr::FmrStage;
    use crate::network::{fixed_branch_influence, severance_check};

    let units = load_units(cfg)?;
    let split = &splits(cfg, units.len())?[0];
    let data = prepare::<R>(&units, split)?;
    let probe = split.train[0];
    let (image, frames) = (&data.probes[probe], &data.tracklets[probe][..]);
    let net_cfg = network_config(cfg, split.train.len());

    let mut wp_changed = 0;
    for s in 0..networks {
        let net = Network::<R>::new(net_cfg.clone(), derive(cfg.seed, Stream::Init, 1000 + s as u64))?;
        if fixed_branch_influence(&net, image, frames, FmrStage::Wp, SEVERANCE_SHIFT)? > 0.0 {
            wp_changed += 1;
        }
    }

    let reference = fixed_bytes(&Network::<R>::new(net_cfg, 0)?);
    let (state, _) = run_trial::<R>(cfg, &units, split, None, false)?;
    let final_influence = fixed_branch_influence(&state.net, image, frames, state.stage, SEVERANCE_SHIFT)?;
    Ok(SeveranceReport {
        wp_changed,
        wp_networks: networks,
        final_influence,
        severed: severance_check(&state.net, image, frames, state.stage, SEVERANCE_SHIFT)?,
        fixed_unchanged: fixed_bytes(&state.net) == reference,
    })
}

/// Checks that the fixed branch influences freshly initialized networks in
/// WP and has no influence after a full schedule.
pub fn severance(cfg: &Config, networks: usize) -> Result<SeveranceReport> {
    cfg.validate()?;
    if !cfg.fmr {
        return Err(Error::Config("severance needs fmr.enabled = true".into()));
    }
    match cfg.precision {
        Precision::F32 => severance_as::<f32>(cfg, networks),
        Precision::F64 => severance_as::<f64>(cfg, networks),
    }
}
