//! Frame-level metrics over a test set: ROC AUC (pooled over all frames),
//! false-alarm rate and score gap.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataio::{FrameGroundTruth, GroundTruthMap, Manifest, ScoreSeries, Split};
use crate::error::{MistError, Result};

/// Frame `f` takes the score of clip `f / frames_per_clip`, clamped to the
/// last clip. Clip coverage may differ from `total_frames` by at most one clip.
pub fn expand_to_frames(series: &ScoreSeries, frames_per_clip: usize, total_frames: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n == 0 || frames_per_clip == 0 {
        return Err(MistError::validation(
            "scores",
            format!("{}: no clips to expand", series.video_id),
        ));
    }
    let covered = n * frames_per_clip;
    if covered.abs_diff(total_frames) > frames_per_clip {
        return Err(MistError::validation(
            "total_frames",
            format!(
                "{}: {n} clips x {frames_per_clip} frames cannot align with {total_frames} frames",
                series.video_id
            ),
        ));
    }
    Ok((0..total_frames)
        .map(|f| f64::from(series.scores[(f / frames_per_clip).min(n - 1)]))
        .collect())
}

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(MistError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MistError::validation("scores", "non-finite score"));
    }
    let pos = labels.iter().filter(|&&l| l != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MistError::UndefinedMetric(format!(
            "AUC needs both classes, got {pos} positive and {neg} negative frames"
        )));
    }
    Ok((pos, neg))
}

/// Rank-statistic AUC with tied scores sharing their mean rank.
pub fn frame_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&k| labels[k] != 0).count();
        rank_sum += mid * positives as f64;
        i = j + 1;
    }
    let pos_f = pos as f64;
    Ok((rank_sum - pos_f * (pos_f + 1.0) / 2.0) / (pos_f * neg as f64))
}

/// Mean over all (positive, negative) pairs of 1 / 0.5 / 0. Quadratic.
pub fn auc_bruteforce(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut wins = 0.0;
    for (i, &sp) in scores.iter().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        for (j, &sn) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Fraction of ground-truth-normal frames scored at or above `threshold`.
pub fn far(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(MistError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut normal = 0usize;
    let mut alarms = 0usize;
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 0 {
            normal += 1;
            if s >= threshold {
                alarms += 1;
            }
        }
    }
    if normal == 0 {
        return Err(MistError::UndefinedMetric("FAR needs at least one normal frame".into()));
    }
    Ok(alarms as f64 / normal as f64)
}

/// Mean score on anomalous frames minus mean score on normal frames.
pub fn score_gap(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(MistError::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let (mut sa, mut na, mut sn, mut nn) = (0.0, 0usize, 0.0, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if l != 0 {
            sa += s;
            na += 1;
        } else {
            sn += s;
            nn += 1;
        }
    }
    if na == 0 || nn == 0 {
        return Err(MistError::UndefinedMetric(
            "score gap needs both anomalous and normal frames".into(),
        ));
    }
    Ok(sa / na as f64 - sn / nn as f64)
}

/// Which test videos contribute to the false-alarm rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FarSubset {
    #[default]
    All,
    Normal,
    Abnormal,
}

impl std::str::FromStr for FarSubset {
    type Err = MistError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(FarSubset::All),
            "normal" => Ok(FarSubset::Normal),
            "abnormal" => Ok(FarSubset::Abnormal),
            other => Err(MistError::validation(
                "far_subset",
                format!("expected all, normal or abnormal, got {other:?}"),
            )),
        }
    }
}

impl FarSubset {
    fn includes(self, label: u8) -> bool {
        match self {
            FarSubset::All => true,
            FarSubset::Normal => label == 0,
            FarSubset::Abnormal => label == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEval {
    pub video_id: String,
    pub label: u8,
    pub frames: usize,
    pub anomalous_frames: usize,
    pub mean_score: f64,
    pub mean_anomalous_score: Option<f64>,
    pub mean_normal_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frame_auc: f64,
    pub far: f64,
    pub score_gap: f64,
    pub threshold: f64,
    pub far_subset: FarSubset,
    pub num_videos: usize,
    pub num_frames: usize,
    pub per_video: Vec<VideoEval>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub threshold: f64,
    pub far_subset: FarSubset,
    pub split: Split,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            far_subset: FarSubset::All,
            split: Split::Test,
        }
    }
}

fn mean_where(scores: &[f64], labels: &[u8], want: u8) -> Option<f64> {
    let picked: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == want)
        .map(|(&s, _)| s)
        .collect();
    (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
}

/// Evaluates every manifest video of `opts.split`, in manifest order.
pub fn evaluate(
    manifest: &Manifest,
    scores: &BTreeMap<String, ScoreSeries>,
    ground_truth: &GroundTruthMap,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(MistError::validation("far_threshold", "must lie in (0, 1)"));
    }
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut far_scores = Vec::new();
    let mut far_labels = Vec::new();
    let mut per_video = Vec::new();

    for rec in manifest.select(opts.split, None) {
        let series = scores.get(&rec.video_id).ok_or_else(|| {
            MistError::validation("scores", format!("{}: no score series", rec.video_id))
        })?;
        let gt: &FrameGroundTruth = ground_truth.get(&rec.video_id).ok_or_else(|| {
            MistError::validation("ground_truth", format!("{}: no ground truth", rec.video_id))
        })?;
        if series.len() != rec.num_clips {
            return Err(MistError::validation(
                "scores",
                format!(
                    "{}: {} scores for {} clips",
                    rec.video_id,
                    series.len(),
                    rec.num_clips
                ),
            ));
        }
        let frames = expand_to_frames(series, rec.frames_per_clip, gt.total_frames)?;
        let labels = gt.frame_labels();

        per_video.push(VideoEval {
            video_id: rec.video_id.clone(),
            label: rec.label,
            frames: frames.len(),
            anomalous_frames: labels.iter().filter(|&&l| l != 0).count(),
            mean_score: frames.iter().sum::<f64>() / frames.len().max(1) as f64,
            mean_anomalous_score: mean_where(&frames, &labels, 1),
            mean_normal_score: mean_where(&frames, &labels, 0),
        });
        if opts.far_subset.includes(rec.label) {
            far_scores.extend_from_slice(&frames);
            far_labels.extend_from_slice(&labels);
        }
        all_scores.extend(frames);
        all_labels.extend(labels);
    }
    if per_video.is_empty() {
        return Err(MistError::UndefinedMetric("no videos in the evaluated split".into()));
    }

    Ok(EvalReport {
        frame_auc: frame_auc(&all_scores, &all_labels)?,
        far: far(&far_scores, &far_labels, opts.threshold)?,
        score_gap: score_gap(&all_scores, &all_labels)?,
        threshold: opts.threshold,
        far_subset: opts.far_subset,
        num_videos: per_video.len(),
        num_frames: all_scores.len(),
        per_video,
    })
}
