//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `XREIDCKP`, `u32` version, a header with
//! the network configuration and training position, the per-epoch loss
//! history, then every parameter as name, shape and raw values in the
//! precision it was trained in.

use std::fs;
use std::path::Path;

use crate::diffcore::{ParamStore, Precision, Real, Tensor};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::fmr::FmrStage;
use crate::network::NetworkConfig;
use crate::verid::LossBreakdown;

const MAGIC: &[u8; 8] = b"XREIDCKP";
const VERSION: u32 = 1;

/// Mean losses of one finished epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub stage: FmrStage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<R: Real> {
    pub network: NetworkConfig,
    pub seed: u64,
    pub trial: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub stage: FmrStage,
    pub history: Vec<EpochRecord>,
    pub params: ParamStore<R>,
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("size field overflows".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8 in name".into()))
    }
}

fn precision_of<R: Real>() -> Precision {
    if R::NAME == "f64" {
        Precision::F64
    } else {
        Precision::F32
    }
}

fn write_stage(w: &mut Writer, stage: FmrStage) {
    w.str(stage.name());
    w.f64(stage.beta());
}

fn read_stage(r: &mut Reader) -> Result<FmrStage> {
    let name = r.str()?;
    let beta = r.f64()?;
    FmrStage::parse(&name, beta)
}

impl<R: Real> Checkpoint<R> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u8(match precision_of::<R>() {
            Precision::F32 => 4,
            Precision::F64 => 8,
        });

        let enc = &self.network.encoder;
        w.usize(enc.channels);
        w.usize(enc.resolution);
        w.u32(enc.conv_channels.len() as u32);
        for &c in &enc.conv_channels {
            w.usize(c);
        }
        w.usize(enc.kernel);
        w.usize(enc.stride);
        w.usize(enc.pool);
        w.usize(enc.feature_dim);
        w.usize(self.network.num_identities);
        w.u8(self.network.share_frame_encoder as u8);
        match self.network.fmr_fixed_seed {
            Some(s) => {
                w.u8(1);
                w.u64(s);
            }
            None => w.u8(0),
        }

        w.u64(self.seed);
        w.usize(self.trial);
        w.usize(self.epoch);
        write_stage(&mut w, self.stage);

        w.u32(self.history.len() as u32);
        for rec in &self.history {
            w.usize(rec.epoch);
            w.f64(rec.loss.verification);
            w.f64(rec.loss.image_identification);
            w.f64(rec.loss.video_identification);
            w.f64(rec.loss.total);
            write_stage(&mut w, rec.stage);
        }

        w.u32(self.params.len() as u32);
        for (name, t) in self.params.iter() {
            w.str(name);
            w.u32(t.shape().len() as u32);
            for &s in t.shape() {
                w.usize(s);
            }
            for x in t.data() {
                match precision_of::<R>() {
                    Precision::F32 => w.0.extend_from_slice(&(x.as_f64() as f32).to_le_bytes()),
                    Precision::F64 => w.f64(x.as_f64()),
                }
            }
        }
        w.0
    }

    /// Values stored at the other precision are converted on load.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let width = r.u8()?;
        if width != 4 && width != 8 {
            return Err(Error::Checkpoint(format!("bad value width {width}")));
        }

        let channels = r.usize()?;
        let resolution = r.usize()?;
        let n_conv = r.u32()? as usize;
        let conv_channels = (0..n_conv).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let encoder = EncoderConfig {
            channels,
            resolution,
            conv_channels,
            kernel: r.usize()?,
            stride: r.usize()?,
            pool: r.usize()?,
            feature_dim: r.usize()?,
        };
        let num_identities = r.usize()?;
        let share_frame_encoder = r.u8()? != 0;
        let fmr_fixed_seed = match r.u8()? {
            0 => None,
            _ => Some(r.u64()?),
        };
        let network = NetworkConfig {
            encoder,
            num_identities,
            share_frame_encoder,
            fmr_fixed_seed,
        };

        let seed = r.u64()?;
        let trial = r.usize()?;
        let epoch = r.usize()?;
        let stage = read_stage(&mut r)?;

        let n_hist = r.u32()? as usize;
        let mut history = Vec::with_capacity(n_hist);
        for _ in 0..n_hist {
            let epoch = r.usize()?;
            let loss = LossBreakdown {
                verification: r.f64()?,
                image_identification: r.f64()?,
                video_identification: r.f64()?,
                total: r.f64()?,
            };
            history.push(EpochRecord {
                epoch,
                loss,
                stage: read_stage(&mut r)?,
            });
        }

        let n_params = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel.checked_mul(width as usize).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data: Vec<R> = if width == 4 {
                raw.chunks_exact(4)
                    .map(|c| R::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                    .collect()
            } else {
                raw.chunks_exact(8)
                    .map(|c| R::of(f64::from_le_bytes(c.try_into().unwrap())))
                    .collect()
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        Ok(Checkpoint {
            network,
            seed,
            trial,
            epoch,
            stage,
            history,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// File name of the checkpoint written after `epoch` epochs.
pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_{epoch}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Network;

    fn sample<R: Real>() -> Checkpoint<R> {
        let net = Network::<R>::new(NetworkConfig::tiny(), 5).unwrap();
        Checkpoint {
            network: net.config().clone(),
            seed: 99,
            trial: 3,
            epoch: 7,
            stage: FmrStage::Kd(0.25),
            history: vec![EpochRecord {
                epoch: 1,
                loss: crate::verid::combined_loss(0.6, 0.4, 0.8).unwrap(),
                stage: FmrStage::Wp,
            }],
            params: net.params().clone(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample::<f32>();
        let back = Checkpoint::<f32>::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
        let d = sample::<f64>();
        assert_eq!(Checkpoint::<f64>::from_bytes(&d.to_bytes()).unwrap(), d);
    }

    #[test]
    fn corrupt_input_rejected() {
        let bytes = sample::<f32>().to_bytes();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::<f32>::from_bytes(b"nonsense").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::<f32>::from_bytes(&extra).is_err());
    }

    #[test]
    fn missing_file_names_path() {
        let err = Checkpoint::<f32>::load(Path::new("/nonexistent/ckpt_3")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt_3"));
    }
}
