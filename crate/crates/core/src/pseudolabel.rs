//! Turns generator clip scores into soft clip-level pseudo labels: a
//! moving-average filter followed by min-max normalisation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::HyperParams;
use crate::dataio::{read_score_file_for, write_score_file, Manifest, ScoreSeries, Split};
use crate::error::{MistError, Result};
use crate::milgen::{score_video, GeneratorParams};

/// Spans below this are treated as constant.
pub const DEGENERATE_RANGE: f64 = 1e-8;

/// Windowed mean over `[i-k, i+k]`, truncated at the ends and divided by the
/// number of terms actually present.
pub fn smooth(scores: &[f64], k: usize) -> Vec<f64> {
    let n = scores.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(k);
            let hi = (i + k).min(n - 1);
            let window = &scores[lo..=hi];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

/// `(x - min) / (max - min)`; all zeros when the range is below
/// [`DEGENERATE_RANGE`].
pub fn minmax(scores: &[f64]) -> Normalized {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if scores.is_empty() || !(range >= DEGENERATE_RANGE) {
        return Normalized {
            values: vec![0.0; scores.len()],
            degenerate: true,
        };
    }
    Normalized {
        values: scores.iter().map(|&s| (s - lo) / range).collect(),
        degenerate: false,
    }
}

/// Smooth then normalise.
pub fn refine(scores: &[f64], k: usize) -> Normalized {
    minmax(&smooth(scores, k))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator_checkpoint: String,
    pub k: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSeries {
    pub video_id: String,
    pub labels: Vec<f64>,
    pub provenance: Provenance,
}

impl PseudoLabelSeries {
    pub fn to_score_series(&self) -> ScoreSeries {
        ScoreSeries {
            video_id: self.video_id.clone(),
            scores: self.labels.iter().map(|&v| v as f32).collect(),
        }
    }
}

/// Clip targets for Stage II, keyed by video id.
pub type LabelMap = BTreeMap<String, Vec<f32>>;

#[derive(Debug, Clone)]
pub struct PseudoLabelSet {
    pub abnormal: Vec<PseudoLabelSeries>,
    pub labels: LabelMap,
}

pub fn pseudo_labels_from_scores(series: &ScoreSeries, k: usize, checkpoint: &str) -> PseudoLabelSeries {
    let raw: Vec<f64> = series.scores.iter().map(|&s| f64::from(s)).collect();
    let refined = refine(&raw, k);
    if refined.degenerate {
        log::warn!(
            "{}: generator scores are constant; using all-zero pseudo labels",
            series.video_id
        );
    }
    PseudoLabelSeries {
        video_id: series.video_id.clone(),
        labels: refined.values,
        provenance: Provenance {
            generator_checkpoint: checkpoint.to_string(),
            k,
            degenerate: refined.degenerate,
        },
    }
}

/// Scores every abnormal training video and refines the scores into pseudo
/// labels; normal training videos get all-zero labels.
pub fn generate_pseudo_labels(
    params: &GeneratorParams,
    manifest: &Manifest,
    hp: &HyperParams,
    checkpoint: &str,
) -> Result<PseudoLabelSet> {
    let mut abnormal = Vec::new();
    let mut labels = LabelMap::new();
    for rec in manifest.select(Split::Train, None) {
        if rec.is_abnormal() {
            let seq = manifest.load_features(rec)?;
            let scores = score_video(params, &seq)?;
            let pl = pseudo_labels_from_scores(&scores, hp.k, checkpoint);
            labels.insert(rec.video_id.clone(), pl.to_score_series().scores);
            abnormal.push(pl);
        } else {
            labels.insert(rec.video_id.clone(), vec![0.0; rec.num_clips]);
        }
    }
    Ok(PseudoLabelSet { abnormal, labels })
}

/// Writes `<id>.scor` plus a `<id>.json` provenance sidecar per abnormal video.
pub fn write_pseudo_labels(set: &PseudoLabelSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| MistError::io(dir, e))?;
    for pl in &set.abnormal {
        write_score_file(&pl.to_score_series(), dir.join(format!("{}.scor", pl.video_id)))?;
        let side = dir.join(format!("{}.json", pl.video_id));
        let text = serde_json::to_string_pretty(&pl.provenance).expect("provenance serializes");
        std::fs::write(&side, text).map_err(|e| MistError::io(&side, e))?;
    }
    Ok(())
}

/// Assembles Stage-II targets: pseudo labels read from `dir` for abnormal
/// training videos, zeros for normal ones.
pub fn load_stage2_labels(manifest: &Manifest, dir: impl AsRef<Path>) -> Result<LabelMap> {
    let dir = dir.as_ref();
    let mut labels = LabelMap::new();
    for rec in manifest.select(Split::Train, None) {
        if rec.is_abnormal() {
            let path = dir.join(format!("{}.scor", rec.video_id));
            if !path.is_file() {
                return Err(MistError::io(
                    &path,
                    std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        format!("missing pseudo-label file for {}", rec.video_id),
                    ),
                ));
            }
            let series = read_score_file_for(rec, &path)?;
            labels.insert(rec.video_id.clone(), series.scores);
        } else {
            labels.insert(rec.video_id.clone(), vec![0.0; rec.num_clips]);
        }
    }
    Ok(labels)
}
