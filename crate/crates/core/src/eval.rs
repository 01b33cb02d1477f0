//! Image-to-video retrieval scoring and CMC curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{PreparedData, SplitPlan};
use crate::diffcore::{softmax_values, Real, Tensor};
use crate::error::{Error, Result};
use crate::fmr::FmrStage;
use crate::network::{Network, VERIF_BIAS, VERIF_WEIGHT};
use crate::verid::square_layer_values;

/// How a probe/gallery pair is scored. Higher is more similar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreMode {
    /// Same-identity probability `q̂_1` of the verification head.
    #[default]
    Verification,
    /// Negative squared Euclidean distance between the features.
    Distance,
}

impl ScoreMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "verification" | "q1" => Ok(ScoreMode::Verification),
            "distance" => Ok(ScoreMode::Distance),
            other => Err(Error::Config(format!(
                "eval.score must be `verification` or `distance`, got `{other}`"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreMode::Verification => "verification",
            ScoreMode::Distance => "distance",
        }
    }
}

/// Score of a pair given its coordinated-space features.
pub fn score_features<R: Real>(net: &Network<R>, f_i: &[f64], f_v: &[f64], mode: ScoreMode) -> Result<f64> {
    let sq = square_layer_values(f_i, f_v)?;
    match mode {
        ScoreMode::Distance => Ok(-sq.iter().sum::<f64>()),
        ScoreMode::Verification => {
            let w = net.params().get(VERIF_WEIGHT)?.to_f64_vec();
            let b = net.params().get(VERIF_BIAS)?.to_f64_vec();
            let d = sq.len();
            let logits: Vec<f64> = (0..b.len())
                .map(|r| b[r] + (0..d).map(|c| w[r * d + c] * sq[c]).sum::<f64>())
                .collect();
            Ok(softmax_values(&logits)?[0])
        }
    }
}

pub fn score_pair<R: Real>(
    net: &Network<R>,
    image: &Tensor<R>,
    frames: &[Tensor<R>],
    stage: FmrStage,
    mode: ScoreMode,
) -> Result<f64> {
    let f_i = net.embed_image(image, stage)?.0.to_f64_vec();
    let f_v = net.embed_video(frames, stage)?.0.to_f64_vec();
    score_features(net, &f_i, &f_v, mode)
}

/// Probe rows by gallery columns, with one ground-truth column per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: Vec<Vec<f64>>,
    truth: Vec<usize>,
}

impl ScoreMatrix {
    pub fn new(rows: Vec<Vec<f64>>, truth: Vec<usize>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::InvalidArgument("score matrix is empty".into()));
        }
        if rows.len() != truth.len() {
            return Err(Error::shape(format!(
                "{} score rows but {} ground-truth entries",
                rows.len(),
                truth.len()
            )));
        }
        let cols = rows[0].len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::shape("score matrix rows differ in length"));
            }
            if truth[r] >= cols {
                return Err(Error::InvalidArgument(format!(
                    "ground truth {} of row {r} outside {cols} columns",
                    truth[r]
                )));
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("score row {r}"),
                    index: c,
                });
            }
        }
        Ok(ScoreMatrix { rows, truth })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn truth(&self) -> &[usize] {
        &self.truth
    }

    pub fn gallery_size(&self) -> usize {
        self.rows[0].len()
    }

    /// 1-based rank of the ground truth in each row. Ties go to the lower
    /// column index.
    pub fn ranks(&self) -> Vec<usize> {
        self.rows
            .iter()
            .zip(&self.truth)
            .map(|(row, &t)| {
                let s = row[t];
                1 + row
                    .iter()
                    .enumerate()
                    .filter(|&(c, &v)| v > s || (v == s && c < t))
                    .count()
            })
            .collect()
    }
}

/// `values[m - 1]` is the fraction of probes ranked within the top `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CmcCurve {
    pub values: Vec<f64>,
    pub trials: usize,
}

impl CmcCurve {
    /// CMC at rank `m` (1-based), saturating past the gallery size.
    pub fn at(&self, m: usize) -> f64 {
        self.values[(m.max(1) - 1).min(self.values.len() - 1)]
    }
}

pub fn cmc(scores: &ScoreMatrix) -> Result<CmcCurve> {
    let g = scores.gallery_size();
    let mut hits = vec![0usize; g];
    for r in scores.ranks() {
        hits[r - 1] += 1;
    }
    let n = scores.rows().len() as f64;
    let mut acc = 0usize;
    let values = hits
        .iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect();
    Ok(CmcCurve { values, trials: 1 })
}

/// Pointwise mean of curves over the same gallery size.
pub fn average(curves: &[CmcCurve]) -> Result<CmcCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InvalidArgument("no curves to average".into()))?;
    if curves.iter().any(|c| c.values.len() != first.values.len()) {
        return Err(Error::shape("curves differ in gallery size"));
    }
    let n = curves.len() as f64;
    let values = (0..first.values.len())
        .map(|m| curves.iter().map(|c| c.values[m]).sum::<f64>() / n)
        .collect();
    Ok(CmcCurve {
        values,
        trials: curves.iter().map(|c| c.trials).sum(),
    })
}

/// Scores every test probe against every test tracklet.
pub fn score_matrix<R: Real>(
    net: &Network<R>,
    data: &PreparedData<R>,
    split: &SplitPlan,
    stage: FmrStage,
    mode: ScoreMode,
) -> Result<ScoreMatrix> {
    if split.test.is_empty() {
        return Err(Error::Dataset("test split is empty".into()));
    }
    let probes = split
        .test
        .iter()
        .map(|&i| Ok(net.embed_image(&data.probes[i], stage)?.0.to_f64_vec()))
        .collect::<Result<Vec<_>>>()?;
    let gallery = split
        .test
        .iter()
        .map(|&i| Ok(net.embed_video(&data.tracklets[i], stage)?.0.to_f64_vec()))
        .collect::<Result<Vec<_>>>()?;
    let rows = probes
        .iter()
        .map(|p| gallery.iter().map(|v| score_features(net, p, v, mode)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    ScoreMatrix::new(rows, (0..split.test.len()).collect())
}

pub fn evaluate<R: Real>(
    net: &Network<R>,
    data: &PreparedData<R>,
    split: &SplitPlan,
    stage: FmrStage,
    mode: ScoreMode,
) -> Result<CmcCurve> {
    cmc(&score_matrix(net, data, split, stage, mode)?)
}

/// `m,mean,trial_0,...` with one row per rank.
pub fn cmc_csv(mean: &CmcCurve, per_trial: &[CmcCurve]) -> String {
    let mut s = String::from("m,mean");
    for t in 0..per_trial.len() {
        let _ = write!(s, ",trial_{t}");
    }
    s.push('\n');
    for m in 0..mean.values.len() {
        let _ = write!(s, "{},{}", m + 1, mean.values[m]);
        for c in per_trial {
            let _ = write!(s, ",{}", c.values[m]);
        }
        s.push('\n');
    }
    s
}

pub const TABLE_RANKS: [usize; 4] = [1, 5, 10, 20];

/// Rank-1/5/10/20 table in percent.
pub fn rank_table(mean: &CmcCurve, per_trial: &[CmcCurve]) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<10}", "");
    for m in TABLE_RANKS {
        let _ = write!(s, "{:>9}", format!("rank-{m}"));
    }
    s.push('\n');
    let mut row = |label: &str, c: &CmcCurve| {
        let _ = write!(s, "{label:<10}");
        for m in TABLE_RANKS {
            let _ = write!(s, "{:>9.1}", 100.0 * c.at(m));
        }
        s.push('\n');
    };
    for (t, c) in per_trial.iter().enumerate() {
        row(&format!("trial {t}"), c);
    }
    row("mean", mean);
    s
}

pub fn write_outputs(dir: &Path, mean: &CmcCurve, per_trial: &[CmcCurve]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join("cmc.csv");
    fs::write(&csv, cmc_csv(mean, per_trial)).map_err(|e| Error::io(&csv, e))?;
    let table = dir.join("cmc_table.txt");
    fs::write(&table, rank_table(mean, per_trial)).map_err(|e| Error::io(&table, e))
}
