//! Plain SGD training, one pair per step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::checkpoint::{checkpoint_name, Checkpoint, EpochRecord};
use crate::data::{epoch_rng, sample_epoch, PreparedData, SplitPlan};
use crate::diffcore::{Graph, ParamStore, Precision, Real};
use crate::error::{Error, Result};
use crate::fmr::{advance_stage, FmrStage, Schedule};
use crate::network::{FixedInputs, Network, PairLabels};
use crate::verid::LossBreakdown;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub precision: Precision,
    pub seed: u64,
    /// FMR stage boundaries; ignored when the network has no fixed branch.
    pub schedule: Schedule,
    /// Write a checkpoint every `n` epochs; `0` keeps only the final one.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> Self {
        TrainConfig {
            epochs,
            lr,
            precision: Precision::F32,
            seed,
            schedule: Schedule::default_for(epochs),
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self, fmr: bool) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("train.epochs must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("train.lr must be finite and >= 0, got {}", self.lr)));
        }
        if fmr {
            self.schedule.validate()?;
            if self.schedule.total_epochs != self.epochs {
                return Err(Error::Config(format!(
                    "FMR schedule covers {} epochs but training runs {}",
                    self.schedule.total_epochs, self.epochs
                )));
            }
        }
        Ok(())
    }

    /// Stage in effect during 0-based `epoch`.
    pub fn stage_at(&self, epoch: usize, fmr: bool) -> Result<FmrStage> {
        if fmr {
            advance_stage(&self.schedule, epoch)
        } else {
            Ok(FmrStage::Wpk)
        }
    }
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone)]
pub struct TrainState<R: Real> {
    pub net: Network<R>,
    pub seed: u64,
    pub trial: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub stage: FmrStage,
    pub history: Vec<EpochRecord>,
}

impl<R: Real> TrainState<R> {
    pub fn new(net: Network<R>, seed: u64, trial: usize) -> Self {
        let stage = if net.config().fmr_enabled() {
            FmrStage::Wp
        } else {
            FmrStage::Wpk
        };
        TrainState {
            net,
            seed,
            trial,
            epoch: 0,
            stage,
            history: Vec::new(),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint<R> {
        Checkpoint {
            network: self.net.config().clone(),
            seed: self.seed,
            trial: self.trial,
            epoch: self.epoch,
            stage: self.stage,
            history: self.history.clone(),
            params: self.net.params().clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint<R>) -> Result<Self> {
        Ok(TrainState {
            net: Network::from_params(ckpt.network, ckpt.params)?,
            seed: ckpt.seed,
            trial: ckpt.trial,
            epoch: ckpt.epoch,
            stage: ckpt.stage,
            history: ckpt.history,
        })
    }
}

/// `p <- p - lr * g` for every parameter. Nothing is modified when any
/// gradient is non-finite.
pub fn sgd_step<R: Real>(params: &mut ParamStore<R>, grads: &ParamStore<R>, lr: f64) -> Result<()> {
    for (name, g) in grads.iter() {
        if let Some(index) = g.first_non_finite() {
            return Err(Error::NonFiniteGradient {
                name: name.to_string(),
                index,
            });
        }
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(Error::shape(format!(
                "gradient of `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    let lr = R::of(lr);
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        for (x, &d) in p.data_mut().iter_mut().zip(g.data()) {
            *x = *x - lr * d;
        }
    }
    Ok(())
}

/// Frozen-branch outputs of every training identity, computed once.
struct FixedCache<R> {
    image: Vec<Option<crate::diffcore::Tensor<R>>>,
    video: Vec<Option<crate::diffcore::Tensor<R>>>,
}

impl<R: Real> FixedCache<R> {
    fn build(net: &Network<R>, data: &PreparedData<R>, split: &SplitPlan) -> Result<Option<Self>> {
        if net.fixed_embedders().is_none() {
            return Ok(None);
        }
        let n = data.probes.len();
        let mut cache = FixedCache {
            image: vec![None; n],
            video: vec![None; n],
        };
        for &i in &split.train {
            let f = net
                .fixed_inputs(&data.probes[i], &data.tracklets[i])?
                .expect("fixed embedders present");
            cache.image[i] = Some(f.image);
            cache.video[i] = Some(f.video);
        }
        Ok(Some(cache))
    }

    fn pair(&self, image_id: usize, video_id: usize) -> FixedInputs<R> {
        FixedInputs {
            image: self.image[image_id].clone().expect("cached"),
            video: self.video[video_id].clone().expect("cached"),
        }
    }
}

/// One SGD step on one pair. Returns the logged loss breakdown.
fn train_pair<R: Real>(
    net: &mut Network<R>,
    data: &PreparedData<R>,
    image_id: usize,
    video_id: usize,
    labels: PairLabels,
    stage: FmrStage,
    fixed: Option<&FixedInputs<R>>,
    lr: f64,
    position: (usize, usize),
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let p = net.params().bind(&mut g, true);
    let out = net.forward(&mut g, &p, &data.probes[image_id], &data.tracklets[video_id], stage, fixed)?;
    let (loss, parts) = net.pair_loss_value(&mut g, &out, labels)?;
    let values: Vec<f64> = parts.iter().map(|&v| g.value(v).data()[0].as_f64()).collect();
    if values.iter().any(|v| !v.is_finite()) || !g.value(loss).is_finite() {
        return Err(Error::NanLoss {
            epoch: position.0,
            pair: position.1,
        });
    }
    let breakdown = crate::verid::combined_loss(values[0], values[1], values[2])?;
    g.backward(loss)?;
    let grads = p.grads(&g);
    sgd_step(net.params_mut(), &grads, lr)?;
    Ok(breakdown)
}

/// Runs one epoch (0-based `epoch`) and returns its record.
pub fn train_epoch<R: Real>(
    cfg: &TrainConfig,
    state: &mut TrainState<R>,
    data: &PreparedData<R>,
    split: &SplitPlan,
) -> Result<EpochRecord> {
    let fmr = state.net.config().fmr_enabled();
    let epoch = state.epoch;
    let stage = cfg.stage_at(epoch, fmr)?;
    if !state.stage.can_advance_to(stage) {
        return Err(Error::Stage(format!("cannot move from {} to {stage}", state.stage)));
    }
    state.stage = stage;
    let cache = if stage == FmrStage::Wpk {
        None
    } else {
        FixedCache::build(&state.net, data, split)?
    };

    let mut rng = epoch_rng(state.seed, state.trial, epoch);
    let batch = sample_epoch(split, &mut rng)?;
    let mut losses = Vec::with_capacity(batch.pairs.len());
    for (i, pair) in batch.pairs.iter().enumerate() {
        let labels = PairLabels {
            image_class: split.class_of(pair.image_identity).expect("train identity"),
            video_class: split.class_of(pair.video_identity).expect("train identity"),
        };
        let fixed = cache.as_ref().map(|c| c.pair(pair.image_identity, pair.video_identity));
        losses.push(train_pair(
            &mut state.net,
            data,
            pair.image_identity,
            pair.video_identity,
            labels,
            stage,
            fixed.as_ref(),
            cfg.lr,
            (epoch + 1, i),
        )?);
    }
    let record = EpochRecord {
        epoch: epoch + 1,
        loss: LossBreakdown::mean(&losses)?,
        stage,
    };
    state.epoch += 1;
    state.history.push(record.clone());
    Ok(record)
}

/// Trains until `cfg.epochs` epochs are complete. With `out`, writes
/// `loss.csv`, checkpoints and `train_report` there.
pub fn train<R: Real>(
    cfg: &TrainConfig,
    state: &mut TrainState<R>,
    data: &PreparedData<R>,
    split: &SplitPlan,
    out: Option<&Path>,
) -> Result<()> {
    let fmr = state.net.config().fmr_enabled();
    cfg.validate(fmr)?;
    if split.train.len() < 2 {
        return Err(Error::Dataset("training needs at least 2 identities".into()));
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let fixed_before = fixed_bytes(&state.net);
    while state.epoch < cfg.epochs {
        let rec = train_epoch(cfg, state, data, split)?;
        log::info!(
            "trial {} epoch {}/{}: L={:.5} L_v={:.5} L_ii={:.5} L_iv={:.5} stage={} beta={:.3}",
            state.trial,
            rec.epoch,
            cfg.epochs,
            rec.loss.total,
            rec.loss.verification,
            rec.loss.image_identification,
            rec.loss.video_identification,
            rec.stage,
            rec.stage.beta()
        );
        if let Some(dir) = out {
            write_loss_csv(&dir.join("loss.csv"), &state.history)?;
            let due = cfg.checkpoint_every > 0 && state.epoch % cfg.checkpoint_every == 0;
            if due || state.epoch == cfg.epochs {
                state.to_checkpoint().save(&dir.join(checkpoint_name(state.epoch)))?;
            }
        }
    }
    if fixed_bytes(&state.net) != fixed_before {
        return Err(Error::Stage("fixed-branch parameters changed during training".into()));
    }
    if let Some(dir) = out {
        let path = dir.join("train_report");
        fs::write(&path, train_report(cfg, state)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn fixed_bytes<R: Real>(net: &Network<R>) -> Vec<u8> {
    net.fixed_embedders()
        .map(|(a, b)| [a.param_bytes(), b.param_bytes()].concat())
        .unwrap_or_default()
}

pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,L,L_v,L_ii,L_iv,stage,beta\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.epoch,
            r.loss.total,
            r.loss.verification,
            r.loss.image_identification,
            r.loss.video_identification,
            r.stage,
            r.stage.beta()
        );
    }
    s
}

fn write_loss_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    fs::write(path, loss_csv(history)).map_err(|e| Error::io(path, e))
}

/// Epoch ranges of each stage, e.g. `WP 1-80, KD 81-160, WPK 161-200`.
fn stage_ranges(history: &[EpochRecord]) -> String {
    let mut parts: Vec<(String, usize, usize)> = Vec::new();
    for r in history {
        let name = r.stage.name().to_string();
        match parts.last_mut() {
            Some((n, _, end)) if *n == name => *end = r.epoch,
            _ => parts.push((name, r.epoch, r.epoch)),
        }
    }
    parts
        .iter()
        .map(|(n, a, b)| format!("{n} {a}-{b}"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn train_report<R: Real>(cfg: &TrainConfig, state: &TrainState<R>) -> String {
    let mut s = String::new();
    let net = state.net.config();
    let _ = writeln!(s, "seed: {}", state.seed);
    let _ = writeln!(s, "trial: {}", state.trial);
    let _ = writeln!(s, "epochs: {}", state.epoch);
    let _ = writeln!(s, "learning rate: {}", cfg.lr);
    let _ = writeln!(s, "precision: {}", R::NAME);
    let _ = writeln!(s, "encoder: {} -> d={}", net.encoder.describe(), net.encoder.feature_dim);
    let _ = writeln!(s, "training identities: {}", net.num_identities);
    let _ = writeln!(s, "parameters: {}", state.net.params().num_scalars());
    match net.fmr_fixed_seed {
        Some(seed) => {
            let _ = writeln!(s, "fixed branch seed: {seed}");
            let _ = writeln!(s, "stages: {}", stage_ranges(&state.history));
        }
        None => {
            let _ = writeln!(s, "fixed model reuse: disabled");
        }
    }
    if let (Some(first), Some(last)) = (state.history.first(), state.history.last()) {
        let line = |r: &EpochRecord| {
            format!(
                "L={} L_v={} L_ii={} L_iv={}",
                r.loss.total, r.loss.verification, r.loss.image_identification, r.loss.video_identification
            )
        };
        let _ = writeln!(s, "epoch {} loss: {}", first.epoch, line(first));
        let _ = writeln!(s, "epoch {} loss: {}", last.epoch, line(last));
        let _ = writeln!(s, "final / first: {:.4}", last.loss.total / first.loss.total);
    }
    s
}
