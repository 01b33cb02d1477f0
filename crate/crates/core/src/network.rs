//! The assembled image-to-video network: encoders, optional fixed-branch
//! fusion, a shared identity classifier, and the square-layer verifier.

use std::sync::Arc;

use twofloat::TwoFloat;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::gradcheck::{compare_differences, tape_gradients, GradCheckReport};
use crate::diffcore::{softmax_values, BoundParams, Graph, ParamStore, Real, Tensor, Var};
use crate::encoders::{EncoderConfig, FeatureVector, ImageEncoder, ImageSample, VideoEncoder, VideoTracklet};
use crate::error::{Error, Result};
use crate::fmr::{fuse, FmrStage, FrozenEncoder, FusionLayer, ModalityInput, SharedEmbedder};
use crate::verid::{combined_loss, square_layer, IdentityDistribution, LossBreakdown, VerificationDistribution};

pub const ID_WEIGHT: &str = "id.weight";
pub const ID_BIAS: &str = "id.bias";
pub const VERIF_WEIGHT: &str = "verif.weight";
pub const VERIF_BIAS: &str = "verif.bias";
const FUSE_IMAGE: &str = "fuse.image";
const FUSE_VIDEO: &str = "fuse.video";

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub encoder: EncoderConfig,
    /// Number of training identities `k`.
    pub num_identities: usize,
    /// Image and video branches use one frame encoder.
    pub share_frame_encoder: bool,
    /// Seed of the frozen branches; `None` disables fixed model reuse.
    pub fmr_fixed_seed: Option<u64>,
}

impl NetworkConfig {
    pub fn tiny() -> Self {
        NetworkConfig {
            encoder: EncoderConfig {
                channels: 3,
                resolution: 8,
                conv_channels: vec![2, 3],
                kernel: 2,
                stride: 1,
                pool: 2,
                feature_dim: 4,
            },
            num_identities: 2,
            share_frame_encoder: true,
            fmr_fixed_seed: Some(17),
        }
    }

    pub fn fmr_enabled(&self) -> bool {
        self.fmr_fixed_seed.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.stage_sizes()?;
        if self.num_identities < 2 {
            return Err(Error::Config(format!(
                "need at least 2 training identities, got {}",
                self.num_identities
            )));
        }
        Ok(())
    }
}

/// Fixed-branch embeddings of one pair, supplied explicitly for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedInputs<R> {
    pub image: Tensor<R>,
    pub video: Tensor<R>,
}

/// Graph nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct PairGraph {
    pub image_feature: Var,
    pub video_feature: Var,
    pub image_logits: Var,
    pub video_logits: Var,
    pub verification_logits: Var,
}

/// Class indices of a training pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairLabels {
    pub image_class: usize,
    pub video_class: usize,
}

impl PairLabels {
    pub fn same(&self) -> bool {
        self.image_class == self.video_class
    }
}

/// Evaluated outputs of one pair.
#[derive(Debug, Clone)]
pub struct PairPrediction {
    pub image_identity: IdentityDistribution,
    pub video_identity: IdentityDistribution,
    pub verification: VerificationDistribution,
    pub image_feature: Vec<f64>,
    pub video_feature: Vec<f64>,
    pub loss: Option<LossBreakdown>,
}

#[derive(Debug, Clone)]
pub struct Network<R: Real> {
    cfg: NetworkConfig,
    params: ParamStore<R>,
    image_encoder: ImageEncoder,
    video_encoder: VideoEncoder,
    image_fixed: Option<SharedEmbedder<R>>,
    video_fixed: Option<SharedEmbedder<R>>,
}

fn frame_prefixes(share: bool) -> (&'static str, &'static str) {
    if share {
        ("frame", "frame")
    } else {
        ("image.frame", "video.frame")
    }
}

impl<R: Real> Network<R> {
    pub fn new(cfg: NetworkConfig, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (img_prefix, vid_prefix) = frame_prefixes(cfg.share_frame_encoder);
        let image_encoder = ImageEncoder::new(cfg.encoder.clone(), img_prefix);
        let video_encoder = VideoEncoder::new(cfg.encoder.clone(), vid_prefix, "video");
        let d = cfg.encoder.feature_dim;
        let k = cfg.num_identities;

        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = ParamStore::new();
        image_encoder.frame.init(&mut params, &mut rng)?;
        if !cfg.share_frame_encoder {
            video_encoder.frame.init(&mut params, &mut rng)?;
        }
        video_encoder.init_temporal(&mut params, &mut rng);

        let (image_fixed, video_fixed) = match cfg.fmr_fixed_seed {
            Some(seed) => {
                let img: SharedEmbedder<R> = Arc::new(FrozenEncoder::image(cfg.encoder.clone(), seed)?);
                let vid: SharedEmbedder<R> =
                    Arc::new(FrozenEncoder::video(cfg.encoder.clone(), seed.wrapping_add(1))?);
                FusionLayer::new(FUSE_IMAGE, FmrStage::Wp).init(&mut params, d, img.dim(), &mut rng);
                FusionLayer::new(FUSE_VIDEO, FmrStage::Wp).init(&mut params, d, vid.dim(), &mut rng);
                (Some(img), Some(vid))
            }
            None => (None, None),
        };

        params.init_uniform(ID_WEIGHT, &[k, d], d, &mut rng);
        params.init_uniform(ID_BIAS, &[k], d, &mut rng);
        params.init_uniform(VERIF_WEIGHT, &[2, d], d, &mut rng);
        params.init_uniform(VERIF_BIAS, &[2], d, &mut rng);

        Ok(Network {
            cfg,
            params,
            image_encoder,
            video_encoder,
            image_fixed,
            video_fixed,
        })
    }

    /// Rebuilds a network around stored parameters. Every expected
    /// parameter must be present with the expected shape.
    pub fn from_params(cfg: NetworkConfig, params: ParamStore<R>) -> Result<Self> {
        let mut net = Network::new(cfg, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                net.params.len(),
                params.len()
            )));
        }
        for (name, t) in net.params.iter() {
            let got = params
                .get(name)
                .map_err(|_| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if got.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    t.shape()
                )));
            }
        }
        net.params = params;
        Ok(net)
    }

    /// Replaces the frozen branches. Dimensions must match the fusion layers.
    pub fn with_fixed_embedders(mut self, image: SharedEmbedder<R>, video: SharedEmbedder<R>) -> Result<Self> {
        if !self.cfg.fmr_enabled() {
            return Err(Error::Config("fixed model reuse is disabled".into()));
        }
        for (prefix, e) in [(FUSE_IMAGE, &image), (FUSE_VIDEO, &video)] {
            let w = self.params.get(&FusionLayer::new(prefix, FmrStage::Wp).fixed_weight())?;
            if w.shape()[1] != e.dim() {
                return Err(Error::shape(format!(
                    "{} produces {} dims, fusion layer expects {}",
                    e.id(),
                    e.dim(),
                    w.shape()[1]
                )));
            }
        }
        self.image_fixed = Some(image);
        self.video_fixed = Some(video);
        Ok(self)
    }

    /// Replaces every parameter with uniform draws from `[-scale, scale)`.
    pub fn randomize_params(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, t) in self.params.iter_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|x| *x = R::of(rng.random_range(-scale..scale)));
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<R> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<R> {
        &mut self.params
    }

    pub fn image_encoder(&self) -> &ImageEncoder {
        &self.image_encoder
    }

    pub fn video_encoder(&self) -> &VideoEncoder {
        &self.video_encoder
    }

    pub fn fixed_embedders(&self) -> Option<(&SharedEmbedder<R>, &SharedEmbedder<R>)> {
        self.image_fixed.as_ref().zip(self.video_fixed.as_ref())
    }

    /// Outputs of the frozen branches for one pair, if FMR is enabled.
    pub fn fixed_inputs(&self, image: &Tensor<R>, frames: &[Tensor<R>]) -> Result<Option<FixedInputs<R>>> {
        match self.fixed_embedders() {
            Some((img, vid)) => Ok(Some(FixedInputs {
                image: img.embed(ModalityInput::Image(image))?,
                video: vid.embed(ModalityInput::Video(frames))?,
            })),
            None => Ok(None),
        }
    }

    /// Builds the forward pass on `g`. `fixed` overrides the frozen-branch
    /// outputs; when `None` they are computed as needed.
    pub fn forward(
        &self,
        g: &mut Graph<R>,
        p: &BoundParams,
        image: &Tensor<R>,
        frames: &[Tensor<R>],
        stage: FmrStage,
        fixed: Option<&FixedInputs<R>>,
    ) -> Result<PairGraph> {
        let mut f_i = self.image_encoder.encode(g, p, image)?;
        let mut f_v = self.video_encoder.encode(g, p, frames)?;

        if self.cfg.fmr_enabled() {
            let (fixed_i, fixed_v) = if stage == FmrStage::Wpk {
                (None, None)
            } else {
                let computed;
                let inputs = match fixed {
                    Some(f) => f,
                    None => {
                        computed = self
                            .fixed_inputs(image, frames)?
                            .ok_or_else(|| Error::Config("fixed embedders missing".into()))?;
                        &computed
                    }
                };
                (
                    Some(g.constant(inputs.image.clone())),
                    Some(g.constant(inputs.video.clone())),
                )
            };
            f_i = fuse(g, p, f_i, fixed_i, &FusionLayer::new(FUSE_IMAGE, stage), stage)?;
            f_v = fuse(g, p, f_v, fixed_v, &FusionLayer::new(FUSE_VIDEO, stage), stage)?;
        }

        let id_w = p.get(ID_WEIGHT)?;
        let id_b = p.get(ID_BIAS)?;
        let image_logits = g.linear(f_i, id_w, id_b)?;
        let video_logits = g.linear(f_v, id_w, id_b)?;
        let squared = square_layer(g, f_i, f_v)?;
        let verification_logits = g.linear(squared, p.get(VERIF_WEIGHT)?, p.get(VERIF_BIAS)?)?;
        Ok(PairGraph {
            image_feature: f_i,
            video_feature: f_v,
            image_logits,
            video_logits,
            verification_logits,
        })
    }

    /// Adds the joint loss for `labels` to the graph. Returns the scalar
    /// loss node and the logged breakdown.
    pub fn pair_loss(&self, g: &mut Graph<R>, out: &PairGraph, labels: PairLabels) -> Result<(Var, LossBreakdown)> {
        let (total, [l_v, l_ii, l_iv]) = self.pair_loss_value(g, out, labels)?;
        let scalar = |v: Var| g.value(v).data()[0].as_f64();
        let breakdown = combined_loss(scalar(l_v), scalar(l_ii), scalar(l_iv))?;
        Ok((total, breakdown))
    }

    /// Loss nodes only: the total and `[L_v, L_ii, L_iv]`.
    pub fn pair_loss_value(&self, g: &mut Graph<R>, out: &PairGraph, labels: PairLabels) -> Result<(Var, [Var; 3])> {
        let k = self.cfg.num_identities;
        if labels.image_class >= k || labels.video_class >= k {
            return Err(Error::InvalidArgument(format!(
                "pair labels {labels:?} out of range for {k} identities"
            )));
        }
        let l_ii = g.cross_entropy(out.image_logits, labels.image_class)?;
        let l_iv = g.cross_entropy(out.video_logits, labels.video_class)?;
        let l_v = g.cross_entropy(out.verification_logits, if labels.same() { 0 } else { 1 })?;
        let ids = g.add(l_ii, l_iv)?;
        let half = g.scale(ids, R::of(0.5));
        let total = g.add(l_v, half)?;
        Ok((total, [l_v, l_ii, l_iv]))
    }

    fn predict(&self, g: &Graph<R>, out: &PairGraph) -> Result<(IdentityDistribution, IdentityDistribution, VerificationDistribution)> {
        let probs = |v: Var| softmax_values(&g.value(v).to_f64_vec());
        let verification = probs(out.verification_logits)?;
        Ok((
            IdentityDistribution::new(probs(out.image_logits)?)?,
            IdentityDistribution::new(probs(out.video_logits)?)?,
            VerificationDistribution::new(verification[0], verification[1])?,
        ))
    }

    /// Full forward pass on a labeled pair, including the loss. Sample
    /// identities are used as class indices.
    pub fn forward_pair(&self, image: &ImageSample<R>, tracklet: &VideoTracklet<R>, stage: FmrStage) -> Result<PairPrediction> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, &image.pixels, tracklet.frames(), stage, None)?;
        let labels = PairLabels {
            image_class: image.identity,
            video_class: tracklet.identity,
        };
        let (_, loss) = self.pair_loss(&mut g, &out, labels)?;
        let (image_identity, video_identity, verification) = self.predict(&g, &out)?;
        Ok(PairPrediction {
            image_identity,
            video_identity,
            verification,
            image_feature: g.value(out.image_feature).to_f64_vec(),
            video_feature: g.value(out.video_feature).to_f64_vec(),
            loss: Some(loss),
        })
    }

    /// Forward pass without labels.
    pub fn predict_pair(&self, image: &Tensor<R>, frames: &[Tensor<R>], stage: FmrStage) -> Result<PairPrediction> {
        self.predict_pair_with(image, frames, stage, None)
    }

    pub fn predict_pair_with(
        &self,
        image: &Tensor<R>,
        frames: &[Tensor<R>],
        stage: FmrStage,
        fixed: Option<&FixedInputs<R>>,
    ) -> Result<PairPrediction> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let out = self.forward(&mut g, &p, image, frames, stage, fixed)?;
        let (image_identity, video_identity, verification) = self.predict(&g, &out)?;
        Ok(PairPrediction {
            image_identity,
            video_identity,
            verification,
            image_feature: g.value(out.image_feature).to_f64_vec(),
            video_feature: g.value(out.video_feature).to_f64_vec(),
            loss: None,
        })
    }

    /// Coordinated-space image feature `f_i`.
    pub fn embed_image(&self, image: &Tensor<R>, stage: FmrStage) -> Result<FeatureVector<R>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let mut f = self.image_encoder.encode(&mut g, &p, image)?;
        if self.cfg.fmr_enabled() {
            let fixed = if stage == FmrStage::Wpk {
                None
            } else {
                let (img, _) = self.fixed_embedders().expect("fmr enabled");
                Some(g.constant(img.embed(ModalityInput::Image(image))?))
            };
            f = fuse(&mut g, &p, f, fixed, &FusionLayer::new(FUSE_IMAGE, stage), stage)?;
        }
        Ok(FeatureVector(g.value(f).clone()))
    }

    /// Coordinated-space video feature `f_v`.
    pub fn embed_video(&self, frames: &[Tensor<R>], stage: FmrStage) -> Result<FeatureVector<R>> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let mut f = self.video_encoder.encode(&mut g, &p, frames)?;
        if self.cfg.fmr_enabled() {
            let fixed = if stage == FmrStage::Wpk {
                None
            } else {
                let (_, vid) = self.fixed_embedders().expect("fmr enabled");
                Some(g.constant(vid.embed(ModalityInput::Video(frames))?))
            };
            f = fuse(&mut g, &p, f, fixed, &FusionLayer::new(FUSE_VIDEO, stage), stage)?;
        }
        Ok(FeatureVector(g.value(f).clone()))
    }
}

/// Largest absolute change in any network output (identity logits of both
/// branches and verification logits) when every fixed-branch output is
/// shifted by `perturbation`. Works in any stage.
pub fn fixed_branch_influence<R: Real>(
    net: &Network<R>,
    image: &Tensor<R>,
    frames: &[Tensor<R>],
    stage: FmrStage,
    perturbation: f64,
) -> Result<f64> {
    let base = net
        .fixed_inputs(image, frames)?
        .ok_or_else(|| Error::Config("fixed model reuse is disabled".into()))?;
    let shift = |t: &Tensor<R>| {
        let mut t = t.clone();
        let delta = R::of(perturbation);
        t.data_mut().iter_mut().for_each(|x| *x = *x + delta);
        t
    };
    let moved = FixedInputs {
        image: shift(&base.image),
        video: shift(&base.video),
    };
    let outputs = |fixed: &FixedInputs<R>| -> Result<Vec<R>> {
        let mut g = Graph::new();
        let p = net.params().bind(&mut g, false);
        let out = net.forward(&mut g, &p, image, frames, stage, Some(fixed))?;
        let mut v = g.value(out.image_logits).data().to_vec();
        v.extend_from_slice(g.value(out.video_logits).data());
        v.extend_from_slice(g.value(out.verification_logits).data());
        Ok(v)
    };
    let a = outputs(&base)?;
    let b = outputs(&moved)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).fold(0.0, f64::max))
}

/// True iff the network output is exactly unaffected by the fixed branch.
/// Only meaningful after knockdown, so earlier stages are rejected.
pub fn severance_check<R: Real>(
    net: &Network<R>,
    image: &Tensor<R>,
    frames: &[Tensor<R>],
    stage: FmrStage,
    perturbation: f64,
) -> Result<bool> {
    if stage != FmrStage::Wpk {
        return Err(Error::Stage(format!(
            "severance check requires stage WPK, network is in {stage}"
        )));
    }
    Ok(fixed_branch_influence(net, image, frames, stage, perturbation)? == 0.0)
}

/// Finite-difference check of the joint loss gradient with respect to
/// every trainable parameter of `net` on one labeled pair. The tape runs in
/// `f64`; the difference quotients are evaluated in double-double so that
/// rounding of the loss value does not swamp small gradients.
pub fn loss_grad_check(
    net: &Network<f64>,
    image: &Tensor<f64>,
    frames: &[Tensor<f64>],
    labels: PairLabels,
    stage: FmrStage,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let fixed = net.fixed_inputs(image, frames)?;
    let inputs: Vec<(String, Tensor<f64>)> = net.params().iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    let names: Vec<String> = inputs.iter().map(|(k, _)| k.clone()).collect();
    let analytic = tape_gradients(
        &|g: &mut Graph<f64>, vars: &[Var]| {
            let p = BoundParams::from_vars(names.iter().cloned().zip(vars.iter().copied()));
            let out = net.forward(g, &p, image, frames, stage, fixed.as_ref())?;
            Ok(net.pair_loss(g, &out, labels)?.0)
        },
        &inputs,
    )?;

    let wide = Network::<TwoFloat>::from_params(net.config().clone(), net.params().cast())?;
    let image_w: Tensor<TwoFloat> = image.cast();
    let frames_w: Vec<Tensor<TwoFloat>> = frames.iter().map(|f| f.cast()).collect();
    let fixed_w = fixed.as_ref().map(|f| FixedInputs {
        image: f.image.cast(),
        video: f.video.cast(),
    });
    compare_differences(&inputs, &analytic, tolerance, |values| {
        let mut g = Graph::<TwoFloat>::new();
        let p = BoundParams::from_vars(
            names
                .iter()
                .cloned()
                .zip(values.iter().map(|t| g.constant(t.cast()))),
        );
        let out = wide.forward(&mut g, &p, &image_w, &frames_w, stage, fixed_w.as_ref())?;
        let (loss, _) = wide.pair_loss_value(&mut g, &out, labels)?;
        Ok(g.value(loss).data()[0])
    })
}

/// End-to-end loss gradient checks on the tiny configuration: every FMR
/// stage, a matching and a non-matching pair each.
pub fn tiny_loss_suite(rel_tolerance: f64) -> Result<Vec<(String, GradCheckReport)>> {
    use crate::diffcore::gradcheck::random_tensor;
    let mut out = Vec::new();
    for stage in [FmrStage::Wp, FmrStage::Kd(0.5), FmrStage::Wpk] {
        for (seed, same) in [(1u64, true), (2, false)] {
            let net = Network::<f64>::new(NetworkConfig::tiny(), seed)?;
            let img = random_tensor(&[3, 8, 8], seed * 10);
            let frames: Vec<_> = (0..2).map(|i| random_tensor(&[3, 8, 8], seed * 10 + 1 + i)).collect();
            let labels = PairLabels {
                image_class: 0,
                video_class: if same { 0 } else { 1 },
            };
            let pair = if same { "same" } else { "different" };
            out.push((
                format!("loss[{stage}, {pair}]"),
                loss_grad_check(&net, &img, &frames, labels, stage, rel_tolerance)?,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::random_tensor;

    fn inputs(seed: u64, t: usize) -> (Tensor<f64>, Vec<Tensor<f64>>) {
        let img = random_tensor(&[3, 8, 8], seed);
        let frames = (0..t).map(|i| random_tensor(&[3, 8, 8], seed + 1 + i as u64)).collect();
        (img, frames)
    }

    #[test]
    fn tiny_loss_gradients_match_finite_differences() {
        for (name, r) in tiny_loss_suite(1e-4).unwrap() {
            let worst = r.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error)).unwrap();
            assert!(r.passed(), "{name}: {worst:?}");
        }
    }

    #[test]
    fn feature_dims_agree() {
        let net = Network::<f64>::new(NetworkConfig::tiny(), 1).unwrap();
        for t in 1..=5 {
            let (img, frames) = inputs(10, t);
            let pred = net.predict_pair(&img, &frames, FmrStage::Wp).unwrap();
            assert_eq!(pred.image_feature.len(), 4);
            assert_eq!(pred.video_feature.len(), 4);
        }
    }

    #[test]
    fn reported_total_matches_components() {
        let net = Network::<f64>::new(NetworkConfig::tiny(), 2).unwrap();
        let (img, frames) = inputs(20, 2);
        let image = ImageSample { pixels: img, identity: 0 };
        let track = VideoTracklet::new(frames, 1).unwrap();
        for stage in [FmrStage::Wp, FmrStage::Kd(0.3), FmrStage::Wpk] {
            let pred = net.forward_pair(&image, &track, stage).unwrap();
            let loss = pred.loss.unwrap();
            assert!(loss.is_consistent());
            let again = combined_loss(loss.verification, loss.image_identification, loss.video_identification).unwrap();
            assert_eq!(again.total, loss.total);
            assert!((pred.verification.same() + pred.verification.different() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn labels_out_of_range_rejected() {
        let net = Network::<f64>::new(NetworkConfig::tiny(), 2).unwrap();
        let (img, frames) = inputs(20, 2);
        let image = ImageSample { pixels: img, identity: 5 };
        let track = VideoTracklet::new(frames, 1).unwrap();
        assert!(net.forward_pair(&image, &track, FmrStage::Wp).is_err());
    }

    #[test]
    fn severance_rejected_before_wpk() {
        let net = Network::<f64>::new(NetworkConfig::tiny(), 3).unwrap();
        let (img, frames) = inputs(30, 2);
        assert!(matches!(
            severance_check(&net, &img, &frames, FmrStage::Wp, 1000.0),
            Err(Error::Stage(_))
        ));
        assert!(severance_check(&net, &img, &frames, FmrStage::Wpk, 1000.0).unwrap());
        assert!(fixed_branch_influence(&net, &img, &frames, FmrStage::Wp, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn from_params_validates() {
        let net = Network::<f64>::new(NetworkConfig::tiny(), 3).unwrap();
        let again = Network::from_params(NetworkConfig::tiny(), net.params().clone()).unwrap();
        assert_eq!(again.params(), net.params());
        let mut broken = net.params().clone();
        broken.insert(ID_BIAS, Tensor::zeros(&[3]));
        assert!(Network::from_params(NetworkConfig::tiny(), broken).is_err());
        let no_fmr = NetworkConfig {
            fmr_fixed_seed: None,
            ..NetworkConfig::tiny()
        };
        assert!(Network::from_params(no_fmr, net.params().clone()).is_err());
    }

    #[test]
    fn unshared_frame_encoders_have_separate_params() {
        let cfg = NetworkConfig {
            share_frame_encoder: false,
            ..NetworkConfig::tiny()
        };
        let net = Network::<f64>::new(cfg, 1).unwrap();
        assert!(net.params().contains("image.frame.conv0.weight"));
        assert!(net.params().contains("video.frame.conv0.weight"));
        assert!(!net.params().contains("frame.conv0.weight"));
    }
}
