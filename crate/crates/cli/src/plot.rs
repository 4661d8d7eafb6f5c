use std::path::Path;

use image::{Rgb, RgbImage};
use mist_core::dataio::{FrameGroundTruth, ScoreSeries};
use mist_core::evaluation::expand_to_frames;
use mist_core::{MistError, Result};

const WIDTH: u32 = 800;
const HEIGHT: u32 = 240;
const MARGIN: u32 = 16;

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const SHADE: Rgb<u8> = Rgb([250, 205, 205]);
const GRID: Rgb<u8> = Rgb([200, 200, 200]);
const CURVE: Rgb<u8> = Rgb([30, 80, 200]);

/// Frame-level score curve over a white canvas, ground-truth anomalous
/// spans shaded red, grid lines at 0, 0.5 and 1.
pub fn render_score_plot(
    series: &ScoreSeries,
    truth: &FrameGroundTruth,
    frames_per_clip: usize,
    path: &Path,
) -> Result<()> {
    let frames = expand_to_frames(series, frames_per_clip, truth.total_frames)?;
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    let (left, right) = (MARGIN, WIDTH - MARGIN);
    let plot_w = (right - left) as f64;
    let plot_h = (HEIGHT - 2 * MARGIN) as f64;
    let n = frames.len();
    let frame_at = |x: u32| (((x - left) as f64 + 0.5) / plot_w * n as f64) as usize;
    let y_of = |score: f64| MARGIN + ((1.0 - score.clamp(0.0, 1.0)) * plot_h).round() as u32;

    let labels = truth.frame_labels();
    for x in left..right {
        if labels[frame_at(x).min(n - 1)] != 0 {
            for y in MARGIN..HEIGHT - MARGIN {
                img.put_pixel(x, y, SHADE);
            }
        }
    }
    for level in [0.0, 0.5, 1.0] {
        let y = y_of(level);
        for x in left..right {
            img.put_pixel(x, y, GRID);
        }
    }
    // one column at a time, joined vertically to the previous column
    let mut prev: Option<u32> = None;
    for x in left..right {
        let y = y_of(frames[frame_at(x).min(n - 1)]);
        let (lo, hi) = match prev {
            Some(p) => (p.min(y), p.max(y)),
            None => (y, y),
        };
        for yy in lo..=hi {
            img.put_pixel(x, yy, CURVE);
        }
        prev = Some(y);
    }
    img.save(path).map_err(|e| match e {
        image::ImageError::IoError(io) => MistError::io(path, io),
        other => MistError::Internal(format!("{}: {other}", path.display())),
    })
}
