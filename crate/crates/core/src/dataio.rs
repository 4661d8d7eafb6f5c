//! On-disk formats: clip features, score series, raw clip stacks, manifests
//! and frame-level ground truth, plus the synthetic dataset generator.
//!
//! Binary files are little-endian with an 8-byte ASCII magic and a `u32`
//! version. Feature files hold an `N x D` row-major `f32` matrix; score files
//! a length-`N` `f32` vector; clip files an `N x C x F x H x W` `f32` stack.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MistError, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"MISTFEAT";
pub const SCORE_MAGIC: &[u8; 8] = b"MISTSCOR";
pub const CLIP_MAGIC: &[u8; 8] = b"MISTCLIP";
pub const FORMAT_VERSION: u32 = 1;

/// Per-video clip features, one row per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub data: Array2<f32>,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, data: Array2<f32>) -> Result<Self> {
        let seq = FeatureSequence {
            video_id: video_id.into(),
            data,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn num_clips(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.nrows() == 0 || self.data.ncols() == 0 {
            return Err(MistError::validation(
                "features",
                format!("{}: empty feature matrix", self.video_id),
            ));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(MistError::validation(
                "features",
                format!("{}: non-finite feature value", self.video_id),
            ));
        }
        Ok(())
    }
}

/// Per-clip anomaly scores of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    pub video_id: String,
    pub scores: Vec<f32>,
}

impl ScoreSeries {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Raw clips of one video, `N x C x F x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipStack {
    pub video_id: String,
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ClipStack {
    pub fn clip_len(&self) -> usize {
        self.channels * self.frames * self.height * self.width
    }

    pub fn num_clips(&self) -> usize {
        self.data.len() / self.clip_len().max(1)
    }

    pub fn clip(&self, i: usize) -> &[f32] {
        let n = self.clip_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// `[C, F, H, W]`
    pub fn clip_shape(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }
}

// ---------------------------------------------------------------------------
// binary helpers

struct ByteReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        ByteReader { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(MistError::format(
                self.path,
                self.bytes.len() as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got = self.take(8, "magic")?;
        if got != expected {
            return Err(MistError::format(
                self.path,
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn version(&mut self) -> Result<()> {
        let at = self.pos as u64;
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(MistError::format(
                self.path,
                at,
                format!("unsupported version {v}"),
            ));
        }
        Ok(())
    }

    fn f32s(&mut self, count: usize) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| MistError::format(self.path, self.pos as u64, "payload too large"))?;
        let b = self.take(bytes, "payload")?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(MistError::format(
                self.path,
                self.pos as u64,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn dim_u32(field: &str, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| MistError::validation(field, "exceeds u32 range"))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| MistError::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| MistError::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| MistError::io(path, e))
}

// ---------------------------------------------------------------------------
// feature / score / clip files

pub fn encode_feature_file(seq: &FeatureSequence) -> Result<Vec<u8>> {
    seq.validate()?;
    let (n, d) = seq.data.dim();
    let mut out = Vec::with_capacity(20 + 4 * n * d);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u32("N", n)?.to_le_bytes());
    out.extend_from_slice(&dim_u32("D", d)?.to_le_bytes());
    for v in seq.data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn write_feature_file(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_feature_file(seq)?)
}

/// Reads a feature file. The video id is taken from the file stem.
pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut r = ByteReader::new(path, &bytes);
    r.magic(FEATURE_MAGIC)?;
    r.version()?;
    let n = r.u32("N")? as usize;
    let d = r.u32("D")? as usize;
    let data = r.f32s(n * d)?;
    r.finish()?;
    let data = Array2::from_shape_vec((n, d), data)
        .map_err(|e| MistError::format(path, 12, e.to_string()))?;
    FeatureSequence::new(file_stem(path), data)
}

pub fn write_score_file(series: &ScoreSeries, path: impl AsRef<Path>) -> Result<()> {
    if series.scores.iter().any(|v| !v.is_finite()) {
        return Err(MistError::validation(
            "scores",
            format!("{}: non-finite score", series.video_id),
        ));
    }
    let mut out = Vec::with_capacity(16 + 4 * series.len());
    out.extend_from_slice(SCORE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&dim_u32("N", series.len())?.to_le_bytes());
    for v in &series.scores {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path.as_ref(), &out)
}

pub fn read_score_file(path: impl AsRef<Path>) -> Result<ScoreSeries> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut r = ByteReader::new(path, &bytes);
    r.magic(SCORE_MAGIC)?;
    r.version()?;
    let n = r.u32("N")? as usize;
    let scores = r.f32s(n)?;
    r.finish()?;
    Ok(ScoreSeries {
        video_id: file_stem(path),
        scores,
    })
}

/// Reads a score file and checks its length against the manifest record.
pub fn read_score_file_for(record: &VideoRecord, path: impl AsRef<Path>) -> Result<ScoreSeries> {
    let mut series = read_score_file(path.as_ref())?;
    if series.len() != record.num_clips {
        return Err(MistError::validation(
            "scores",
            format!(
                "{}: {} scores but manifest lists {} clips",
                record.video_id,
                series.len(),
                record.num_clips
            ),
        ));
    }
    series.video_id = record.video_id.clone();
    Ok(series)
}

pub fn write_clip_file(stack: &ClipStack, path: impl AsRef<Path>) -> Result<()> {
    let n = stack.num_clips();
    if stack.clip_len() == 0 || n == 0 || n * stack.clip_len() != stack.data.len() {
        return Err(MistError::Shape(format!(
            "{}: clip stack data length {} does not match its shape",
            stack.video_id,
            stack.data.len()
        )));
    }
    let mut out = Vec::with_capacity(32 + 4 * stack.data.len());
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for (field, v) in [
        ("N", n),
        ("C", stack.channels),
        ("F", stack.frames),
        ("H", stack.height),
        ("W", stack.width),
    ] {
        out.extend_from_slice(&dim_u32(field, v)?.to_le_bytes());
    }
    for v in &stack.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(path.as_ref(), &out)
}

pub fn read_clip_file(path: impl AsRef<Path>) -> Result<ClipStack> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut r = ByteReader::new(path, &bytes);
    r.magic(CLIP_MAGIC)?;
    r.version()?;
    let n = r.u32("N")? as usize;
    let c = r.u32("C")? as usize;
    let f = r.u32("F")? as usize;
    let h = r.u32("H")? as usize;
    let w = r.u32("W")? as usize;
    if n == 0 || c * f * h * w == 0 {
        return Err(MistError::format(path, 12, "zero-sized clip stack"));
    }
    let data = r.f32s(n * c * f * h * w)?;
    r.finish()?;
    Ok(ClipStack {
        video_id: file_stem(path),
        channels: c,
        frames: f,
        height: h,
        width: w,
        data,
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// manifest

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub video_id: String,
    /// Bag label: 1 if the video contains an anomaly.
    pub label: u8,
    pub split: Split,
    pub num_clips: usize,
    pub frames_per_clip: usize,
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_path: Option<PathBuf>,
}

impl VideoRecord {
    pub fn is_abnormal(&self) -> bool {
        self.label == 1
    }
}

/// Validated manifest. Relative file references resolve against `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<VideoRecord>,
}

#[derive(Deserialize)]
struct RawRecord {
    video_id: String,
    label: i64,
    split: Split,
    num_clips: usize,
    frames_per_clip: usize,
    feature_path: PathBuf,
    #[serde(default)]
    clip_path: Option<PathBuf>,
}

impl Manifest {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn feature_path(&self, rec: &VideoRecord) -> PathBuf {
        self.resolve(&rec.feature_path)
    }

    pub fn clip_path(&self, rec: &VideoRecord) -> Option<PathBuf> {
        rec.clip_path.as_deref().map(|p| self.resolve(p))
    }

    pub fn get(&self, video_id: &str) -> Option<&VideoRecord> {
        self.records.iter().find(|r| r.video_id == video_id)
    }

    pub fn select(&self, split: Split, label: Option<u8>) -> Vec<&VideoRecord> {
        self.records
            .iter()
            .filter(|r| r.split == split && label.is_none_or(|l| r.label == l))
            .collect()
    }

    /// Loads the feature sequence of `rec` and checks it against the record.
    pub fn load_features(&self, rec: &VideoRecord) -> Result<FeatureSequence> {
        let mut seq = read_feature_file(self.feature_path(rec))?;
        if seq.num_clips() != rec.num_clips {
            return Err(MistError::validation(
                "num_clips",
                format!(
                    "{}: feature file has {} clips, manifest lists {}",
                    rec.video_id,
                    seq.num_clips(),
                    rec.num_clips
                ),
            ));
        }
        seq.video_id = rec.video_id.clone();
        Ok(seq)
    }

    pub fn load_clips(&self, rec: &VideoRecord) -> Result<ClipStack> {
        let path = self.clip_path(rec).ok_or_else(|| {
            MistError::validation("clip_path", format!("{}: no clip file listed", rec.video_id))
        })?;
        let mut stack = read_clip_file(path)?;
        if stack.num_clips() != rec.num_clips {
            return Err(MistError::validation(
                "num_clips",
                format!(
                    "{}: clip file has {} clips, manifest lists {}",
                    rec.video_id,
                    stack.num_clips(),
                    rec.num_clips
                ),
            ));
        }
        stack.video_id = rec.video_id.clone();
        Ok(stack)
    }
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| MistError::io(path, e))?;
    let raw: Vec<RawRecord> = serde_json::from_str(&text).map_err(|e| MistError::json(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));

    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.video_id.clone()) {
            return Err(MistError::validation(
                "video_id",
                format!("duplicate video id {}", r.video_id),
            ));
        }
        if r.label != 0 && r.label != 1 {
            return Err(MistError::validation(
                "label",
                format!("{}: label {} is not 0 or 1", r.video_id, r.label),
            ));
        }
        if r.num_clips == 0 {
            return Err(MistError::validation(
                "num_clips",
                format!("{}: must be at least 1", r.video_id),
            ));
        }
        if r.frames_per_clip == 0 {
            return Err(MistError::validation(
                "frames_per_clip",
                format!("{}: must be at least 1", r.video_id),
            ));
        }
        records.push(VideoRecord {
            video_id: r.video_id,
            label: r.label as u8,
            split: r.split,
            num_clips: r.num_clips,
            frames_per_clip: r.frames_per_clip,
            feature_path: r.feature_path,
            clip_path: r.clip_path,
        });
    }
    let manifest = Manifest { root, records };
    for rec in &manifest.records {
        let fp = manifest.feature_path(rec);
        if !fp.is_file() {
            return Err(MistError::validation(
                "feature_path",
                format!("{}: missing file {}", rec.video_id, fp.display()),
            ));
        }
        if let Some(cp) = manifest.clip_path(rec) {
            if !cp.is_file() {
                return Err(MistError::validation(
                    "clip_path",
                    format!("{}: missing file {}", rec.video_id, cp.display()),
                ));
            }
        }
    }
    Ok(manifest)
}

pub fn write_manifest(records: &[VideoRecord], path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(records).expect("records always serialize");
    write_bytes(path.as_ref(), text.as_bytes())
}

// ---------------------------------------------------------------------------
// frame ground truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthEntry {
    pub total_frames: usize,
    /// Half-open `[start, end)` anomalous frame spans.
    pub intervals: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameGroundTruth {
    pub video_id: String,
    pub total_frames: usize,
    pub intervals: Vec<[usize; 2]>,
}

impl FrameGroundTruth {
    pub fn validate(&self) -> Result<()> {
        let mut prev_end = 0;
        for (i, &[s, e]) in self.intervals.iter().enumerate() {
            if s >= e || e > self.total_frames || (i > 0 && s < prev_end) {
                return Err(MistError::validation(
                    "intervals",
                    format!(
                        "{}: interval [{s}, {e}) is empty, unsorted, overlapping or past {} frames",
                        self.video_id, self.total_frames
                    ),
                ));
            }
            prev_end = e;
        }
        Ok(())
    }

    /// Per-frame 0/1 labels.
    pub fn frame_labels(&self) -> Vec<u8> {
        let mut labels = vec![0u8; self.total_frames];
        for &[s, e] in &self.intervals {
            labels[s..e].iter_mut().for_each(|l| *l = 1);
        }
        labels
    }
}

pub type GroundTruthMap = BTreeMap<String, FrameGroundTruth>;

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruthMap> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| MistError::io(path, e))?;
    let raw: BTreeMap<String, GroundTruthEntry> =
        serde_json::from_str(&text).map_err(|e| MistError::json(path, e))?;
    raw.into_iter()
        .map(|(id, e)| {
            let gt = FrameGroundTruth {
                video_id: id.clone(),
                total_frames: e.total_frames,
                intervals: e.intervals,
            };
            gt.validate()?;
            Ok((id, gt))
        })
        .collect()
}

pub fn write_ground_truth(gt: &GroundTruthMap, path: impl AsRef<Path>) -> Result<()> {
    let raw: BTreeMap<&str, GroundTruthEntry> = gt
        .iter()
        .map(|(id, g)| {
            (
                id.as_str(),
                GroundTruthEntry {
                    total_frames: g.total_frames,
                    intervals: g.intervals.clone(),
                },
            )
        })
        .collect();
    let text = serde_json::to_string_pretty(&raw).expect("ground truth always serializes");
    write_bytes(path.as_ref(), text.as_bytes())
}

// ---------------------------------------------------------------------------
// synthetic data

/// Shape of a synthetic dataset with planted mean-shift anomalies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    /// Training videos per class.
    pub num_normal: usize,
    pub num_abnormal: usize,
    /// Held-out test videos per class.
    pub test_normal: usize,
    pub test_abnormal: usize,
    pub clips_min: usize,
    pub clips_max: usize,
    pub feature_dim: usize,
    /// Per-coordinate shift of anomalous clip features along a fixed `+-1`
    /// direction; also the intensity added to the anomalous pixel patch.
    pub anomaly_shift: f64,
    pub anomaly_min_len: usize,
    pub anomaly_max_len: usize,
    pub frames_per_clip: usize,
    /// Side of the square synthetic frames.
    pub pixel_size: usize,
    pub emit_pixels: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_normal: 20,
            num_abnormal: 20,
            test_normal: 10,
            test_abnormal: 10,
            clips_min: 32,
            clips_max: 48,
            feature_dim: 64,
            anomaly_shift: 2.0,
            anomaly_min_len: 4,
            anomaly_max_len: 12,
            frames_per_clip: 8,
            pixel_size: 16,
            emit_pixels: true,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.anomaly_shift > 0.0 && self.anomaly_shift.is_finite()) {
            return Err(MistError::validation("anomaly_shift", "must be > 0"));
        }
        if self.anomaly_min_len == 0 {
            return Err(MistError::validation("anomaly_min_len", "must be at least 1"));
        }
        if self.anomaly_min_len > self.anomaly_max_len {
            return Err(MistError::validation(
                "anomaly_min_len",
                "must not exceed anomaly_max_len",
            ));
        }
        if self.clips_min == 0 || self.clips_min > self.clips_max {
            return Err(MistError::validation(
                "clips_min",
                "must satisfy 1 <= clips_min <= clips_max",
            ));
        }
        if self.anomaly_max_len > self.clips_min {
            return Err(MistError::validation(
                "anomaly_max_len",
                "must not exceed clips_min",
            ));
        }
        if self.feature_dim == 0 {
            return Err(MistError::validation("feature_dim", "must be at least 1"));
        }
        if self.frames_per_clip == 0 {
            return Err(MistError::validation("frames_per_clip", "must be at least 1"));
        }
        if self.emit_pixels && self.pixel_size < 4 {
            return Err(MistError::validation("pixel_size", "must be at least 4"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub ground_truth_path: PathBuf,
    pub records: Vec<VideoRecord>,
    pub ground_truth: GroundTruthMap,
}

const STREAM_LAYOUT: u64 = u64::MAX;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Writes a synthetic dataset into `out_dir`: `manifest.json`, `gt.json`,
/// `features/<id>.feat` and (optionally) `clips/<id>.clip`.
///
/// Normal clips are standard normal noise. Each abnormal video carries one
/// contiguous anomalous span whose features are shifted by
/// `anomaly_shift * direction` and whose frames carry a bright square patch.
pub fn synth_dataset(spec: &SynthSpec, seed: u64, out_dir: impl AsRef<Path>) -> Result<SynthOutput> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir.join("features")).map_err(|e| MistError::io(out_dir, e))?;
    if spec.emit_pixels {
        fs::create_dir_all(out_dir.join("clips")).map_err(|e| MistError::io(out_dir, e))?;
    }

    let mut layout = stream_rng(seed, STREAM_LAYOUT);
    let direction: Vec<f64> = (0..spec.feature_dim)
        .map(|_| if layout.random::<bool>() { 1.0 } else { -1.0 })
        .collect();

    let groups = [
        (Split::Train, 0u8, spec.num_normal, "train_normal"),
        (Split::Train, 1u8, spec.num_abnormal, "train_abnormal"),
        (Split::Test, 0u8, spec.test_normal, "test_normal"),
        (Split::Test, 1u8, spec.test_abnormal, "test_abnormal"),
    ];

    let mut records = Vec::new();
    let mut gt = GroundTruthMap::new();
    let mut video_index = 0u64;
    for (split, label, count, prefix) in groups {
        for i in 0..count {
            let video_id = format!("{prefix}_{i:03}");
            let n = layout.random_range(spec.clips_min..=spec.clips_max);
            let span = (label == 1).then(|| {
                let len = layout.random_range(spec.anomaly_min_len..=spec.anomaly_max_len);
                let start = layout.random_range(0..=n - len);
                (start, start + len)
            });
            let patch = spec.pixel_size / 4;
            let patch_at = (
                layout.random_range(0..=spec.pixel_size - patch),
                layout.random_range(0..=spec.pixel_size - patch),
            );

            let mut frng = stream_rng(seed, 2 * video_index);
            let mut data = Array2::<f32>::zeros((n, spec.feature_dim));
            for (c, mut row) in data.rows_mut().into_iter().enumerate() {
                let anomalous = span.is_some_and(|(s, e)| (s..e).contains(&c));
                for (j, v) in row.iter_mut().enumerate() {
                    let mut x: f64 = frng.sample(StandardNormal);
                    if anomalous {
                        x += spec.anomaly_shift * direction[j];
                    }
                    *v = x as f32;
                }
            }
            let feature_rel = PathBuf::from("features").join(format!("{video_id}.feat"));
            write_feature_file(
                &FeatureSequence::new(video_id.clone(), data)?,
                out_dir.join(&feature_rel),
            )?;

            let clip_rel = if spec.emit_pixels {
                let mut prng = stream_rng(seed, 2 * video_index + 1);
                let (f, s) = (spec.frames_per_clip, spec.pixel_size);
                let mut px = Vec::with_capacity(n * f * s * s);
                for c in 0..n {
                    let anomalous = span.is_some_and(|(a, b)| (a..b).contains(&c));
                    for _ in 0..f {
                        for y in 0..s {
                            for x in 0..s {
                                let mut v: f64 = prng.sample(StandardNormal);
                                if anomalous
                                    && (patch_at.0..patch_at.0 + patch).contains(&y)
                                    && (patch_at.1..patch_at.1 + patch).contains(&x)
                                {
                                    v += spec.anomaly_shift;
                                }
                                px.push(v as f32);
                            }
                        }
                    }
                }
                let rel = PathBuf::from("clips").join(format!("{video_id}.clip"));
                write_clip_file(
                    &ClipStack {
                        video_id: video_id.clone(),
                        channels: 1,
                        frames: f,
                        height: s,
                        width: s,
                        data: px,
                    },
                    out_dir.join(&rel),
                )?;
                Some(rel)
            } else {
                None
            };

            let fpc = spec.frames_per_clip;
            gt.insert(
                video_id.clone(),
                FrameGroundTruth {
                    video_id: video_id.clone(),
                    total_frames: n * fpc,
                    intervals: span.map(|(s, e)| vec![[s * fpc, e * fpc]]).unwrap_or_default(),
                },
            );
            records.push(VideoRecord {
                video_id,
                label,
                split,
                num_clips: n,
                frames_per_clip: fpc,
                feature_path: feature_rel,
                clip_path: clip_rel,
            });
            video_index += 1;
        }
    }

    let manifest_path = out_dir.join("manifest.json");
    let ground_truth_path = out_dir.join("gt.json");
    write_manifest(&records, &manifest_path)?;
    write_ground_truth(&gt, &ground_truth_path)?;
    Ok(SynthOutput {
        manifest_path,
        ground_truth_path,
        records,
        ground_truth: gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            num_normal: 3,
            num_abnormal: 3,
            test_normal: 1,
            test_abnormal: 1,
            clips_min: 8,
            clips_max: 12,
            feature_dim: 4,
            anomaly_min_len: 2,
            anomaly_max_len: 3,
            frames_per_clip: 4,
            pixel_size: 8,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn single_value_feature_roundtrip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.feat");
        let seq = FeatureSequence::new("v", Array2::zeros((1, 1))).unwrap();
        write_feature_file(&seq, &p).unwrap();
        let back = read_feature_file(&p).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.feat");
        let mut bytes = encode_feature_file(&FeatureSequence::new("v", Array2::zeros((1, 1))).unwrap()).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        match read_feature_file(&p) {
            Err(MistError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("unexpected {other:?}"),
        }
        // a score file is not a feature file
        let sp = dir.path().join("s.scor");
        write_score_file(&ScoreSeries { video_id: "s".into(), scores: vec![0.5] }, &sp).unwrap();
        assert!(matches!(read_feature_file(&sp), Err(MistError::Format { .. })));
    }

    #[test]
    fn truncated_files_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.feat");
        let seq = FeatureSequence::new("v", Array2::from_elem((4, 3), 1.5f32)).unwrap();
        let bytes = encode_feature_file(&seq).unwrap();
        for cut in [0, 5, 8, 11, 19, bytes.len() - 1] {
            fs::write(&p, &bytes[..cut]).unwrap();
            let err = read_feature_file(&p).unwrap_err();
            assert!(matches!(err, MistError::Format { .. }), "cut {cut}: {err:?}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        fs::write(&p, &extra).unwrap();
        assert!(matches!(read_feature_file(&p), Err(MistError::Format { .. })));
    }

    #[test]
    fn bad_version_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.scor");
        write_score_file(&ScoreSeries { video_id: "v".into(), scores: vec![0.5] }, &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes[8] = 2;
        fs::write(&p, &bytes).unwrap();
        match read_score_file(&p) {
            Err(MistError::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn score_roundtrip_and_length_check() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("v.scor");
        let s = ScoreSeries { video_id: "v".into(), scores: vec![0.5] };
        write_score_file(&s, &p).unwrap();
        assert_eq!(read_score_file(&p).unwrap(), s);

        let rec = VideoRecord {
            video_id: "v".into(),
            label: 0,
            split: Split::Test,
            num_clips: 2,
            frames_per_clip: 16,
            feature_path: "v.feat".into(),
            clip_path: None,
        };
        assert!(matches!(
            read_score_file_for(&rec, &p),
            Err(MistError::Validation { .. })
        ));
    }

    fn write_manifest_json(dir: &Path, body: &str) -> PathBuf {
        fs::create_dir_all(dir.join("f")).unwrap();
        for id in ["a", "b", "c", "d"] {
            write_feature_file(
                &FeatureSequence::new(id, Array2::zeros((2, 2))).unwrap(),
                dir.join("f").join(format!("{id}.feat")),
            )
            .unwrap();
        }
        let p = dir.join("manifest.json");
        fs::write(&p, body).unwrap();
        p
    }

    fn rec_json(id: &str, label: i64) -> String {
        format!(
            r#"{{"video_id":"{id}","label":{label},"split":"train","num_clips":2,"frames_per_clip":16,"feature_path":"f/{id}.feat"}}"#
        )
    }

    #[test]
    fn manifest_reads_four_records() {
        let dir = tempdir().unwrap();
        let body = format!(
            "[{},{},{},{}]",
            rec_json("a", 0),
            rec_json("b", 0),
            rec_json("c", 1),
            rec_json("d", 1)
        );
        let m = read_manifest(write_manifest_json(dir.path(), &body)).unwrap();
        assert_eq!(m.records.len(), 4);
        assert_eq!(m.select(Split::Train, Some(1)).len(), 2);
        assert_eq!(m.load_features(&m.records[0]).unwrap().num_clips(), 2);
    }

    #[test]
    fn manifest_rejects_duplicates_bad_labels_and_missing_files() {
        let dir = tempdir().unwrap();
        let dup = format!("[{},{}]", rec_json("a", 0), rec_json("a", 1));
        let err = read_manifest(write_manifest_json(dir.path(), &dup)).unwrap_err();
        assert!(matches!(err, MistError::Validation { ref field, .. } if field == "video_id"));

        let bad = format!("[{}]", rec_json("a", 2));
        let err = read_manifest(write_manifest_json(dir.path(), &bad)).unwrap_err();
        assert!(matches!(err, MistError::Validation { ref field, .. } if field == "label"));

        let missing = format!("[{}]", rec_json("zz", 0));
        let err = read_manifest(write_manifest_json(dir.path(), &missing)).unwrap_err();
        assert!(matches!(err, MistError::Validation { ref field, .. } if field == "feature_path"));
    }

    #[test]
    fn ground_truth_validation() {
        let ok = FrameGroundTruth { video_id: "v".into(), total_frames: 10, intervals: vec![[0, 2], [4, 10]] };
        ok.validate().unwrap();
        assert_eq!(ok.frame_labels(), vec![1, 1, 0, 0, 1, 1, 1, 1, 1, 1]);
        for bad in [vec![[2, 2]], vec![[4, 6], [0, 2]], vec![[0, 3], [2, 5]], vec![[8, 11]]] {
            let g = FrameGroundTruth { video_id: "v".into(), total_frames: 10, intervals: bad };
            assert!(g.validate().is_err());
        }
    }

    #[test]
    fn synth_without_abnormal_videos() {
        let dir = tempdir().unwrap();
        let spec = SynthSpec { num_abnormal: 0, test_abnormal: 0, ..small_spec() };
        let out = synth_dataset(&spec, 3, dir.path()).unwrap();
        assert!(out.records.iter().all(|r| r.label == 0));
        assert!(out.ground_truth.values().all(|g| g.intervals.is_empty()));
    }

    #[test]
    fn synth_is_deterministic() {
        let a = tempdir().unwrap();
        let b = tempdir().unwrap();
        synth_dataset(&small_spec(), 42, a.path()).unwrap();
        synth_dataset(&small_spec(), 42, b.path()).unwrap();
        for rel in ["manifest.json", "gt.json", "features/train_abnormal_001.feat", "clips/test_normal_000.clip"] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
    }

    #[test]
    fn synth_rejects_degenerate_specs() {
        let dir = tempdir().unwrap();
        let s = SynthSpec { anomaly_max_len: 20, ..small_spec() };
        assert!(synth_dataset(&s, 0, dir.path()).is_err());
        let s = SynthSpec { anomaly_shift: 0.0, ..small_spec() };
        assert!(synth_dataset(&s, 0, dir.path()).is_err());
        let s = SynthSpec { clips_min: 13, ..small_spec() };
        assert!(synth_dataset(&s, 0, dir.path()).is_err());
    }

    #[test]
    fn synth_reload_via_manifest() {
        let dir = tempdir().unwrap();
        let out = synth_dataset(&small_spec(), 1, dir.path()).unwrap();
        let m = read_manifest(&out.manifest_path).unwrap();
        let gt = read_ground_truth(&out.ground_truth_path).unwrap();
        assert_eq!(gt, out.ground_truth);
        for rec in &m.records {
            let seq = m.load_features(rec).unwrap();
            assert_eq!(seq.dim(), 4);
            let clips = m.load_clips(rec).unwrap();
            assert_eq!(clips.clip_shape(), [1, 4, 8, 8]);
            assert_eq!(gt[&rec.video_id].total_frames, rec.num_clips * 4);
        }
    }
}
