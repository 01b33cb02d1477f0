//! Image and video encoders.
//!
//! Both branches start from a frame encoder: a stack of
//! `conv -> relu -> max-pool` stages followed by one linear projection to
//! `feature_dim`. The video branch runs the frame encoder over every frame,
//! feeds the per-frame features through a single-layer LSTM (hidden size
//! `feature_dim`), averages the LSTM outputs over time and applies a final
//! linear projection.

use rand::Rng;

use crate::diffcore::{BoundParams, Graph, LstmParams, ParamStore, Real, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub channels: usize,
    pub resolution: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub pool: usize,
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            channels: 3,
            resolution: 32,
            conv_channels: vec![8, 16],
            kernel: 3,
            stride: 1,
            pool: 2,
            feature_dim: 64,
        }
    }
}

impl EncoderConfig {
    /// Spatial sizes after each conv/pool stage, checked for validity.
    pub fn stage_sizes(&self) -> Result<Vec<usize>> {
        if self.stride == 0 || self.pool == 0 || self.kernel == 0 {
            return Err(Error::Config("kernel, stride and pool must be positive".into()));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::Config("need at least one conv layer with positive width".into()));
        }
        if self.feature_dim == 0 || self.channels == 0 {
            return Err(Error::Config("feature_dim and channels must be positive".into()));
        }
        let mut size = self.resolution;
        let mut sizes = Vec::with_capacity(self.conv_channels.len());
        for (i, _) in self.conv_channels.iter().enumerate() {
            if size < self.kernel {
                return Err(Error::Config(format!(
                    "conv layer {i}: input {size}x{size} smaller than kernel {}",
                    self.kernel
                )));
            }
            size = (size - self.kernel) / self.stride + 1;
            if size < self.pool {
                return Err(Error::Config(format!(
                    "conv layer {i}: output {size}x{size} smaller than pool window {}",
                    self.pool
                )));
            }
            size /= self.pool;
            sizes.push(size);
        }
        Ok(sizes)
    }

    /// Length of the flattened conv-stack output.
    pub fn flat_len(&self) -> Result<usize> {
        let sizes = self.stage_sizes()?;
        let last = *sizes.last().expect("non-empty");
        Ok(self.conv_channels.last().expect("non-empty") * last * last)
    }

    /// Compact description recorded in checkpoint headers, e.g. `8,16/k3s1p2`.
    pub fn describe(&self) -> String {
        let widths: Vec<String> = self.conv_channels.iter().map(|c| c.to_string()).collect();
        format!("{}/k{}s{}p{}", widths.join(","), self.kernel, self.stride, self.pool)
    }
}

/// A labeled probe image, `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample<R> {
    pub pixels: Tensor<R>,
    pub identity: usize,
}

/// A labeled frame sequence of any length `T >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTracklet<R> {
    frames: Vec<Tensor<R>>,
    pub identity: usize,
}

impl<R: Real> VideoTracklet<R> {
    pub fn new(frames: Vec<Tensor<R>>, identity: usize) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty tracklet".into()))?;
        if let Some(bad) = frames.iter().find(|f| f.shape() != first.shape()) {
            return Err(Error::shape(format!(
                "tracklet frames disagree in shape: {:?} vs {:?}",
                first.shape(),
                bad.shape()
            )));
        }
        Ok(VideoTracklet { frames, identity })
    }

    pub fn frames(&self) -> &[Tensor<R>] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// An embedding in the coordinated space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<R>(pub Tensor<R>);

impl<R: Real> FeatureVector<R> {
    pub fn dim(&self) -> usize {
        self.0.numel()
    }

    pub fn values(&self) -> &[R] {
        self.0.data()
    }
}

fn check_frame<R: Real>(cfg: &EncoderConfig, t: &Tensor<R>) -> Result<()> {
    let want = [cfg.channels, cfg.resolution, cfg.resolution];
    if t.shape() != want {
        return Err(Error::shape(format!(
            "expected input of shape {want:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Conv stack plus projection, parameters under `<prefix>.`.
#[derive(Debug, Clone)]
pub struct FrameEncoder {
    pub cfg: EncoderConfig,
    pub prefix: String,
}

impl FrameEncoder {
    pub fn new(cfg: EncoderConfig, prefix: impl Into<String>) -> Self {
        FrameEncoder {
            cfg,
            prefix: prefix.into(),
        }
    }

    pub fn conv_weight(&self, i: usize) -> String {
        format!("{}.conv{i}.weight", self.prefix)
    }

    pub fn conv_bias(&self, i: usize) -> String {
        format!("{}.conv{i}.bias", self.prefix)
    }

    pub fn proj_weight(&self) -> String {
        format!("{}.proj.weight", self.prefix)
    }

    pub fn proj_bias(&self) -> String {
        format!("{}.proj.bias", self.prefix)
    }

    pub fn init<R: Real>(&self, store: &mut ParamStore<R>, rng: &mut impl Rng) -> Result<()> {
        let cfg = &self.cfg;
        let flat = cfg.flat_len()?;
        let mut c_in = cfg.channels;
        for (i, &c_out) in cfg.conv_channels.iter().enumerate() {
            let fan_in = c_in * cfg.kernel * cfg.kernel;
            store.init_uniform(self.conv_weight(i), &[c_out, c_in, cfg.kernel, cfg.kernel], fan_in, rng);
            store.init_uniform(self.conv_bias(i), &[c_out], fan_in, rng);
            c_in = c_out;
        }
        store.init_uniform(self.proj_weight(), &[cfg.feature_dim, flat], flat, rng);
        store.init_uniform(self.proj_bias(), &[cfg.feature_dim], flat, rng);
        Ok(())
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<R>, p: &BoundParams, pixels: Var) -> Result<Var> {
        let mut x = pixels;
        for i in 0..self.cfg.conv_channels.len() {
            let k = p.get(&self.conv_weight(i))?;
            let b = p.get(&self.conv_bias(i))?;
            x = g.conv2d(x, k, b, self.cfg.stride)?;
            x = g.relu(x);
            x = g.max_pool2d(x, self.cfg.pool)?;
        }
        let flat = g.flatten(x)?;
        g.linear(flat, p.get(&self.proj_weight())?, p.get(&self.proj_bias())?)
    }
}

/// Image branch: a frame encoder applied to one image.
#[derive(Debug, Clone)]
pub struct ImageEncoder {
    pub frame: FrameEncoder,
}

impl ImageEncoder {
    pub fn new(cfg: EncoderConfig, frame_prefix: impl Into<String>) -> Self {
        ImageEncoder {
            frame: FrameEncoder::new(cfg, frame_prefix),
        }
    }

    pub fn encode<R: Real>(&self, g: &mut Graph<R>, p: &BoundParams, image: &Tensor<R>) -> Result<Var> {
        check_frame(&self.frame.cfg, image)?;
        let x = g.constant(image.clone());
        self.frame.forward(g, p, x)
    }
}

/// Video branch: frame encoder, LSTM, temporal mean, projection.
#[derive(Debug, Clone)]
pub struct VideoEncoder {
    pub frame: FrameEncoder,
    pub prefix: String,
}

impl VideoEncoder {
    pub fn new(cfg: EncoderConfig, frame_prefix: impl Into<String>, prefix: impl Into<String>) -> Self {
        VideoEncoder {
            frame: FrameEncoder::new(cfg, frame_prefix),
            prefix: prefix.into(),
        }
    }

    pub fn lstm_w_input(&self) -> String {
        format!("{}.lstm.w_input", self.prefix)
    }

    pub fn lstm_w_hidden(&self) -> String {
        format!("{}.lstm.w_hidden", self.prefix)
    }

    pub fn lstm_bias(&self) -> String {
        format!("{}.lstm.bias", self.prefix)
    }

    pub fn out_weight(&self) -> String {
        format!("{}.out.weight", self.prefix)
    }

    pub fn out_bias(&self) -> String {
        format!("{}.out.bias", self.prefix)
    }

    /// Initializes the temporal part only; the frame encoder is initialized
    /// separately since it may be shared with the image branch.
    pub fn init_temporal<R: Real>(&self, store: &mut ParamStore<R>, rng: &mut impl Rng) {
        let d = self.frame.cfg.feature_dim;
        store.init_uniform(self.lstm_w_input(), &[4 * d, d], d, rng);
        store.init_uniform(self.lstm_w_hidden(), &[4 * d, d], d, rng);
        store.init_uniform(self.lstm_bias(), &[4 * d], d, rng);
        store.init_uniform(self.out_weight(), &[d, d], d, rng);
        store.init_uniform(self.out_bias(), &[d], d, rng);
    }

    pub fn lstm_params(&self, p: &BoundParams) -> Result<LstmParams> {
        Ok(LstmParams {
            w_input: p.get(&self.lstm_w_input())?,
            w_hidden: p.get(&self.lstm_w_hidden())?,
            bias: p.get(&self.lstm_bias())?,
        })
    }

    pub fn encode<R: Real>(&self, g: &mut Graph<R>, p: &BoundParams, frames: &[Tensor<R>]) -> Result<Var> {
        if frames.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty tracklet".into()));
        }
        for f in frames {
            check_frame(&self.frame.cfg, f)?;
        }
        let d = self.frame.cfg.feature_dim;
        let lstm = self.lstm_params(p)?;
        let mut h = g.constant(Tensor::zeros(&[d]));
        let mut c = g.constant(Tensor::zeros(&[d]));
        let mut outputs = Vec::with_capacity(frames.len());
        for frame in frames {
            let x = g.constant(frame.clone());
            let feat = self.frame.forward(g, p, x)?;
            (h, c) = g.lstm_step(feat, h, c, &lstm)?;
            outputs.push(h);
        }
        let pooled = g.mean(&outputs)?;
        g.linear(pooled, p.get(&self.out_weight())?, p.get(&self.out_bias())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck::random_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> EncoderConfig {
        EncoderConfig {
            channels: 3,
            resolution: 8,
            conv_channels: vec![2],
            kernel: 3,
            stride: 1,
            pool: 2,
            feature_dim: 4,
        }
    }

    fn setup(cfg: &EncoderConfig, seed: u64) -> (ImageEncoder, VideoEncoder, ParamStore<f64>) {
        let img = ImageEncoder::new(cfg.clone(), "frame");
        let vid = VideoEncoder::new(cfg.clone(), "frame", "video");
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        img.frame.init(&mut store, &mut rng).unwrap();
        vid.init_temporal(&mut store, &mut rng);
        (img, vid, store)
    }

    fn video_value(vid: &VideoEncoder, store: &ParamStore<f64>, frames: &[Tensor<f64>]) -> Vec<f64> {
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let v = vid.encode(&mut g, &p, frames).unwrap();
        g.value(v).data().to_vec()
    }

    #[test]
    fn stage_sizes_default() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.stage_sizes().unwrap(), vec![15, 6]);
        assert_eq!(cfg.flat_len().unwrap(), 16 * 36);
        let bad = EncoderConfig {
            resolution: 4,
            ..EncoderConfig::default()
        };
        assert!(bad.stage_sizes().is_err());
        let full = EncoderConfig {
            resolution: 299,
            ..EncoderConfig::default()
        };
        assert!(full.flat_len().is_ok());
    }

    #[test]
    fn zero_params_zero_image_gives_zero() {
        let cfg = tiny();
        let (img, _, mut store) = setup(&cfg, 1);
        for (_, t) in store.iter_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let f = img.encode(&mut g, &p, &Tensor::zeros(&[3, 8, 8])).unwrap();
        assert!(g.value(f).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identical_images_identical_embeddings() {
        let cfg = tiny();
        let (img, _, store) = setup(&cfg, 2);
        let x = random_tensor(&[3, 8, 8], 5);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let a = img.encode(&mut g, &p, &x).unwrap();
        let b = img.encode(&mut g, &p, &x.clone()).unwrap();
        assert_eq!(g.value(a).data(), g.value(b).data());
    }

    #[test]
    fn wrong_resolution_rejected() {
        let cfg = tiny();
        let (img, vid, store) = setup(&cfg, 3);
        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        assert!(matches!(
            img.encode(&mut g, &p, &Tensor::zeros(&[3, 9, 9])),
            Err(Error::Shape(_))
        ));
        assert!(matches!(vid.encode(&mut g, &p, &[]), Err(Error::InvalidArgument(_))));
        assert!(VideoTracklet::new(vec![Tensor::<f64>::zeros(&[3, 8, 8]), Tensor::zeros(&[3, 4, 4])], 0).is_err());
        assert!(VideoTracklet::<f64>::new(vec![], 0).is_err());
    }

    #[test]
    fn single_frame_is_one_step_then_projection() {
        let cfg = tiny();
        let (_, vid, store) = setup(&cfg, 4);
        let frame = random_tensor(&[3, 8, 8], 6);
        let got = video_value(&vid, &store, std::slice::from_ref(&frame));

        let mut g = Graph::new();
        let p = store.bind(&mut g, false);
        let x = g.constant(frame);
        let feat = vid.frame.forward(&mut g, &p, x).unwrap();
        let h0 = g.constant(Tensor::zeros(&[4]));
        let c0 = g.constant(Tensor::zeros(&[4]));
        let lstm = vid.lstm_params(&p).unwrap();
        let (h, _) = g.lstm_step(feat, h0, c0, &lstm).unwrap();
        let out = g
            .linear(h, p.get("video.out.weight").unwrap(), p.get("video.out.bias").unwrap())
            .unwrap();
        assert_eq!(g.value(out).data(), &got[..]);
    }

    #[test]
    fn length_agnostic_and_dimension_stable() {
        let cfg = tiny();
        let (_, vid, store) = setup(&cfg, 7);
        for t in 1..=10 {
            let frames: Vec<_> = (0..t).map(|i| random_tensor(&[3, 8, 8], 100 + i as u64)).collect();
            assert_eq!(video_value(&vid, &store, &frames).len(), cfg.feature_dim);
        }
    }
}
