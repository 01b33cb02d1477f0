//! Fixed model reuse: frozen cross-modal branches fused in parallel with the
//! learned features, then removed by a three-stage schedule.
//!
//! * `WP`: the fixed branch contributes with full weight (`beta = 1`).
//! * `KD`: `beta` ramps linearly from 1 toward 0.
//! * `WPK`: the fixed branch is detached (`beta = 0`) and training continues
//!   on the learned path alone.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{BoundParams, Graph, ParamStore, Real, Tensor, Var};
use crate::encoders::{EncoderConfig, ImageEncoder, VideoEncoder};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FmrStage {
    /// Weight propagation.
    Wp,
    /// Knockdown, with progress in `[0, 1]`.
    Kd(f64),
    /// Weight propagation after knockdown.
    Wpk,
}

impl FmrStage {
    /// Weight of the fixed branch.
    pub fn beta(self) -> f64 {
        match self {
            FmrStage::Wp => 1.0,
            FmrStage::Kd(progress) => 1.0 - progress,
            FmrStage::Wpk => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FmrStage::Wp => "WP",
            FmrStage::Kd(_) => "KD",
            FmrStage::Wpk => "WPK",
        }
    }

    fn rank(self) -> u8 {
        match self {
            FmrStage::Wp => 0,
            FmrStage::Kd(_) => 1,
            FmrStage::Wpk => 2,
        }
    }

    /// True when `next` may follow `self`: stages never go backwards and KD
    /// progress never decreases.
    pub fn can_advance_to(self, next: FmrStage) -> bool {
        match (self, next) {
            (FmrStage::Kd(a), FmrStage::Kd(b)) => b >= a,
            _ => next.rank() >= self.rank(),
        }
    }

    pub fn parse(name: &str, beta: f64) -> Result<Self> {
        match name {
            "WP" => Ok(FmrStage::Wp),
            "KD" => Ok(FmrStage::Kd(1.0 - beta)),
            "WPK" => Ok(FmrStage::Wpk),
            other => Err(Error::Stage(format!("unknown stage `{other}`"))),
        }
    }
}

impl fmt::Display for FmrStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Epoch boundaries of the schedule (0-based epochs).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub wp_end: usize,
    pub kd_end: usize,
    pub total_epochs: usize,
}

impl Schedule {
    /// Boundaries at 40% and 80% of `total_epochs`.
    pub fn default_for(total_epochs: usize) -> Self {
        let wp_end = (total_epochs * 2 / 5).max(1);
        let kd_end = (total_epochs * 4 / 5).max(wp_end + 1);
        Schedule {
            wp_end,
            kd_end,
            total_epochs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.wp_end && self.wp_end < self.kd_end && self.kd_end <= self.total_epochs) {
            return Err(Error::Config(format!(
                "FMR schedule needs 0 < wp_end < kd_end <= epochs, got wp_end={} kd_end={} epochs={}",
                self.wp_end, self.kd_end, self.total_epochs
            )));
        }
        Ok(())
    }
}

pub fn advance_stage(schedule: &Schedule, epoch: usize) -> Result<FmrStage> {
    schedule.validate()?;
    Ok(if epoch < schedule.wp_end {
        FmrStage::Wp
    } else if epoch < schedule.kd_end {
        let progress = (epoch - schedule.wp_end) as f64 / (schedule.kd_end - schedule.wp_end) as f64;
        FmrStage::Kd(progress)
    } else {
        FmrStage::Wpk
    })
}

/// Raw input of one modality.
#[derive(Debug, Clone, Copy)]
pub enum ModalityInput<'a, R> {
    Image(&'a Tensor<R>),
    Video(&'a [Tensor<R>]),
}

/// A frozen function from raw modality input to a fixed-size embedding.
/// Implementations must be deterministic and never expose their
/// parameters to a training graph.
pub trait FixedEmbedder<R: Real>: Send + Sync + fmt::Debug {
    fn id(&self) -> &str;
    fn seed(&self) -> u64;
    fn dim(&self) -> usize;
    fn embed(&self, input: ModalityInput<'_, R>) -> Result<Tensor<R>>;

    /// Byte image of the frozen parameters, for integrity checks.
    fn param_bytes(&self) -> Vec<u8> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
enum FrozenArch {
    Image(ImageEncoder),
    Video(VideoEncoder),
}

/// Default surrogate: a seed-initialized encoder of the same architecture
/// as the learned branch, frozen at initialization.
#[derive(Debug, Clone)]
pub struct FrozenEncoder<R> {
    id: String,
    seed: u64,
    arch: FrozenArch,
    params: ParamStore<R>,
}

impl<R: Real> FrozenEncoder<R> {
    pub fn image(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        let enc = ImageEncoder::new(cfg, "fixed_image.frame");
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        enc.frame.init(&mut params, &mut rng)?;
        Ok(FrozenEncoder {
            id: format!("frozen-image-encoder-{seed}"),
            seed,
            arch: FrozenArch::Image(enc),
            params,
        })
    }

    pub fn video(cfg: EncoderConfig, seed: u64) -> Result<Self> {
        let enc = VideoEncoder::new(cfg, "fixed_video.frame", "fixed_video");
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        enc.frame.init(&mut params, &mut rng)?;
        enc.init_temporal(&mut params, &mut rng);
        Ok(FrozenEncoder {
            id: format!("frozen-video-encoder-{seed}"),
            seed,
            arch: FrozenArch::Video(enc),
            params,
        })
    }
}

impl<R: Real> FixedEmbedder<R> for FrozenEncoder<R> {
    fn id(&self) -> &str {
        &self.id
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn dim(&self) -> usize {
        match &self.arch {
            FrozenArch::Image(e) => e.frame.cfg.feature_dim,
            FrozenArch::Video(e) => e.frame.cfg.feature_dim,
        }
    }

    fn embed(&self, input: ModalityInput<'_, R>) -> Result<Tensor<R>> {
        // A private graph with constant leaves: nothing here can be reached
        // by a caller's backward pass.
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = match (&self.arch, input) {
            (FrozenArch::Image(e), ModalityInput::Image(x)) => e.encode(&mut g, &p, x)?,
            (FrozenArch::Video(e), ModalityInput::Video(frames)) => e.encode(&mut g, &p, frames)?,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{} received the wrong modality",
                    self.id
                )))
            }
        };
        Ok(g.value(out).clone())
    }

    fn param_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::new();
        for (name, t) in self.params.iter() {
            bytes.extend_from_slice(name.as_bytes());
            for x in t.data() {
                bytes.extend_from_slice(&x.as_f64().to_le_bytes());
            }
        }
        bytes
    }
}

pub type SharedEmbedder<R> = Arc<dyn FixedEmbedder<R>>;

/// Parameter names of one fusion layer plus its current knockdown weight.
#[derive(Debug, Clone)]
pub struct FusionLayer {
    pub prefix: String,
    pub beta: f64,
}

impl FusionLayer {
    pub fn new(prefix: impl Into<String>, stage: FmrStage) -> Self {
        FusionLayer {
            prefix: prefix.into(),
            beta: stage.beta(),
        }
    }

    pub fn learned_weight(&self) -> String {
        format!("{}.learned", self.prefix)
    }

    pub fn fixed_weight(&self) -> String {
        format!("{}.fixed", self.prefix)
    }

    pub fn bias(&self) -> String {
        format!("{}.bias", self.prefix)
    }

    pub fn init<R: Real>(&self, store: &mut ParamStore<R>, d: usize, d_fixed: usize, rng: &mut impl rand::Rng) {
        store.init_uniform(self.learned_weight(), &[d, d], d, rng);
        store.init_uniform(self.fixed_weight(), &[d, d_fixed], d_fixed, rng);
        store.init_uniform(self.bias(), &[d], d, rng);
    }
}

/// `W_l · learned + beta · W_f · fixed + b`. In `WPK` the fixed branch is
/// not placed on the graph at all, so `fixed` may be `None`.
pub fn fuse<R: Real>(
    g: &mut Graph<R>,
    p: &BoundParams,
    learned: Var,
    fixed: Option<Var>,
    layer: &FusionLayer,
    stage: FmrStage,
) -> Result<Var> {
    if !(0.0..=1.0).contains(&layer.beta) {
        return Err(Error::InvalidArgument(format!(
            "knockdown weight {} outside [0, 1]",
            layer.beta
        )));
    }
    if layer.beta != stage.beta() {
        return Err(Error::Stage(format!(
            "fusion layer has beta {} but stage {stage} implies {}",
            layer.beta,
            stage.beta()
        )));
    }
    let w_l = p.get(&layer.learned_weight())?;
    let b = p.get(&layer.bias())?;
    let out = g.linear(learned, w_l, b)?;
    if stage == FmrStage::Wpk {
        return Ok(out);
    }
    let fixed = fixed.ok_or_else(|| Error::Stage(format!("stage {stage} needs the fixed branch")))?;
    let w_f = p.get(&layer.fixed_weight())?;
    let projected = g.matvec(w_f, fixed)?;
    let scaled = g.scale(projected, R::of(layer.beta));
    g.add(out, scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::random_tensor;

    #[test]
    fn schedule_boundaries() {
        let s = Schedule {
            wp_end: 10,
            kd_end: 20,
            total_epochs: 30,
        };
        assert_eq!(advance_stage(&s, 0).unwrap(), FmrStage::Wp);
        assert_eq!(advance_stage(&s, 9).unwrap(), FmrStage::Wp);
        assert_eq!(advance_stage(&s, 10).unwrap(), FmrStage::Kd(0.0));
        assert_eq!(advance_stage(&s, 15).unwrap(), FmrStage::Kd(0.5));
        assert_eq!(advance_stage(&s, 20).unwrap(), FmrStage::Wpk);
        assert_eq!(advance_stage(&s, 29).unwrap(), FmrStage::Wpk);
    }

    #[test]
    fn invalid_schedule_rejected() {
        for (wp, kd, total) in [(0, 5, 10), (5, 5, 10), (6, 5, 10), (5, 11, 10)] {
            let s = Schedule {
                wp_end: wp,
                kd_end: kd,
                total_epochs: total,
            };
            assert!(matches!(advance_stage(&s, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn default_schedule() {
        let s = Schedule::default_for(200);
        assert_eq!((s.wp_end, s.kd_end), (80, 160));
        assert!(Schedule::default_for(2).validate().is_ok());
    }

    #[test]
    fn beta_is_non_increasing_over_schedule() {
        let s = Schedule::default_for(50);
        let mut prev = advance_stage(&s, 0).unwrap();
        for e in 1..50 {
            let next = advance_stage(&s, e).unwrap();
            assert!(next.beta() <= prev.beta());
            assert!(prev.can_advance_to(next));
            prev = next;
        }
        assert!(!FmrStage::Wpk.can_advance_to(FmrStage::Wp));
        assert!(!FmrStage::Kd(0.6).can_advance_to(FmrStage::Kd(0.5)));
    }

    fn fusion_setup(d: usize, df: usize) -> (ParamStore<f64>, FusionLayer) {
        let mut store = ParamStore::new();
        let layer = FusionLayer::new("fuse", FmrStage::Wp);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        layer.init(&mut store, d, df, &mut rng);
        (store, layer)
    }

    fn fuse_value(store: &ParamStore<f64>, stage: FmrStage, learned: &Tensor<f64>, fixed: &Tensor<f64>) -> Vec<f64> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let l = g.constant(learned.clone());
        let f = g.constant(fixed.clone());
        let layer = FusionLayer::new("fuse", stage);
        let out = fuse(&mut g, &p, l, Some(f), &layer, stage).unwrap();
        g.value(out).data().to_vec()
    }

    #[test]
    fn wpk_ignores_fixed_branch() {
        let (store, _) = fusion_setup(3, 5);
        let learned = random_tensor(&[3], 1);
        let a = fuse_value(&store, FmrStage::Wpk, &learned, &random_tensor(&[5], 2));
        let b = fuse_value(&store, FmrStage::Wpk, &learned, &random_tensor(&[5], 3));
        assert_eq!(a, b);
    }

    #[test]
    fn wp_with_zero_learned_path() {
        let (mut store, layer) = fusion_setup(3, 5);
        store.insert(layer.learned_weight(), Tensor::zeros(&[3, 3]));
        store.insert(layer.bias(), Tensor::zeros(&[3]));
        let fixed = random_tensor(&[5], 4);
        let got = fuse_value(&store, FmrStage::Wp, &random_tensor(&[3], 5), &fixed);
        let wf = store.get(&layer.fixed_weight()).unwrap().data();
        for i in 0..3 {
            let want: f64 = (0..5).map(|j| wf[i * 5 + j] * fixed.data()[j]).sum();
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn half_beta_matches_direct_formula() {
        let (store, layer) = fusion_setup(4, 3);
        let learned = random_tensor(&[4], 6);
        let fixed = random_tensor(&[3], 7);
        let got = fuse_value(&store, FmrStage::Kd(0.5), &learned, &fixed);
        let wl = store.get(&layer.learned_weight()).unwrap().data();
        let wf = store.get(&layer.fixed_weight()).unwrap().data();
        let b = store.get(&layer.bias()).unwrap().data();
        for i in 0..4 {
            let l: f64 = (0..4).map(|j| wl[i * 4 + j] * learned.data()[j]).sum();
            let f: f64 = (0..3).map(|j| wf[i * 3 + j] * fixed.data()[j]).sum();
            assert!((got[i] - (l + 0.5 * f + b[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_rejects_bad_beta_and_shapes() {
        let (store, _) = fusion_setup(3, 5);
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let l = g.constant(random_tensor(&[3], 1));
        let f = g.constant(random_tensor(&[5], 2));
        let mut layer = FusionLayer::new("fuse", FmrStage::Wp);
        layer.beta = 1.5;
        assert!(matches!(
            fuse(&mut g, &p, l, Some(f), &layer, FmrStage::Wp),
            Err(Error::InvalidArgument(_))
        ));
        let layer = FusionLayer::new("fuse", FmrStage::Wp);
        assert!(fuse(&mut g, &p, l, Some(f), &layer, FmrStage::Kd(0.5)).is_err());
        let bad = g.constant(random_tensor(&[4], 3));
        assert!(matches!(
            fuse(&mut g, &p, l, Some(bad), &layer, FmrStage::Wp),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fused_gradient_skips_fixed_input() {
        let (store, layer) = fusion_setup(3, 5);
        let mut g = Graph::new();
        let p = store.bind(&mut g, true);
        let l = g.param(random_tensor(&[3], 1));
        let f = g.constant(random_tensor(&[5], 2));
        let out = fuse(&mut g, &p, l, Some(f), &layer, FmrStage::Wp).unwrap();
        let s = g.sum(out);
        g.backward(s).unwrap();
        assert!(g.grad(f).is_none());
        assert!(g.grad(l).is_some());
        assert!(g.grad(p.get(&layer.fixed_weight()).unwrap()).is_some());
    }

    #[test]
    fn frozen_encoder_is_deterministic() {
        let cfg = EncoderConfig {
            resolution: 8,
            conv_channels: vec![2],
            feature_dim: 4,
            ..EncoderConfig::default()
        };
        let a = FrozenEncoder::<f64>::image(cfg.clone(), 9).unwrap();
        let b = FrozenEncoder::<f64>::image(cfg.clone(), 9).unwrap();
        let x = random_tensor(&[3, 8, 8], 4);
        assert_eq!(
            a.embed(ModalityInput::Image(&x)).unwrap(),
            b.embed(ModalityInput::Image(&x)).unwrap()
        );
        assert_eq!(a.param_bytes(), b.param_bytes());
        assert!(a.embed(ModalityInput::Video(std::slice::from_ref(&x))).is_err());
        let v = FrozenEncoder::<f64>::video(cfg, 9).unwrap();
        assert_eq!(v.embed(ModalityInput::Video(&[x.clone(), x])).unwrap().numel(), 4);
    }
}
