//! Bag construction from per-clip feature sequences.
//!
//! Sparse continuous sampling spreads `L` windows of `T` consecutive clips
//! evenly over the video, first window at clip 0 and last window ending at the
//! final clip. Short videos (`N < T`) are padded by repeating their last clip.
//! Uniform segment sampling is the single-clip baseline used in ablations.

use ndarray::{s, Array3};
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureSequence;
use crate::error::{MistError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    #[default]
    SparseContinuous,
    Uniform,
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplingMode::SparseContinuous => "sparse-continuous",
            SamplingMode::Uniform => "uniform",
        })
    }
}

impl std::str::FromStr for SamplingMode {
    type Err = MistError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sparse-continuous" => Ok(SamplingMode::SparseContinuous),
            "uniform" => Ok(SamplingMode::Uniform),
            other => Err(MistError::validation(
                "sampling",
                format!("unknown sampling mode {other:?}"),
            )),
        }
    }
}

/// `L` sub-bags of `T` clips each, `L x T x D`.
#[derive(Debug, Clone, PartialEq)]
pub struct BagSample {
    pub video_id: String,
    pub subbags: Array3<f32>,
    pub start_indices: Vec<usize>,
}

impl BagSample {
    pub fn num_subbags(&self) -> usize {
        self.subbags.dim().0
    }

    pub fn clips_per_subbag(&self) -> usize {
        self.subbags.dim().1
    }
}

/// `start_l = round(l * (N' - T) / max(L - 1, 1))` with `N' = max(N, T)`.
pub fn sparse_continuous_starts(num_clips: usize, subbags: usize, clips: usize) -> Vec<usize> {
    let padded = num_clips.max(clips);
    let range = padded - clips;
    let denom = subbags.saturating_sub(1).max(1);
    (0..subbags)
        // round half up, in integers
        .map(|l| (2 * l * range + denom) / (2 * denom))
        .collect()
}

/// `start_l = floor(l * N / L)`, one clip per segment.
pub fn uniform_segment_starts(num_clips: usize, subbags: usize) -> Vec<usize> {
    (0..subbags).map(|l| l * num_clips / subbags).collect()
}

/// Copies `T` consecutive clips from each start. Sequences shorter than `T`
/// are padded by repeating their last row.
pub fn gather_subbags(seq: &FeatureSequence, starts: &[usize], clips: usize) -> Result<BagSample> {
    if clips == 0 {
        return Err(MistError::validation("T", "must be at least 1"));
    }
    let n = seq.num_clips();
    let padded = n.max(clips);
    let d = seq.dim();
    let mut subbags = Array3::<f32>::zeros((starts.len(), clips, d));
    for (l, &start) in starts.iter().enumerate() {
        if start + clips > padded {
            return Err(MistError::Index(format!(
                "{}: sub-bag {l} starts at {start}, needs {clips} clips of {padded}",
                seq.video_id
            )));
        }
        for t in 0..clips {
            let row = (start + t).min(n - 1);
            subbags
                .slice_mut(s![l, t, ..])
                .assign(&seq.data.row(row));
        }
    }
    Ok(BagSample {
        video_id: seq.video_id.clone(),
        subbags,
        start_indices: starts.to_vec(),
    })
}

/// Builds a bag under `mode`. Uniform sampling always uses one clip per
/// sub-bag regardless of `clips`.
pub fn build_bag(
    seq: &FeatureSequence,
    subbags: usize,
    clips: usize,
    mode: SamplingMode,
) -> Result<BagSample> {
    match mode {
        SamplingMode::SparseContinuous => {
            let starts = sparse_continuous_starts(seq.num_clips(), subbags, clips);
            gather_subbags(seq, &starts, clips)
        }
        SamplingMode::Uniform => {
            let starts = uniform_segment_starts(seq.num_clips(), subbags);
            gather_subbags(seq, &starts, 1)
        }
    }
}
