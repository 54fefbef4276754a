//! Multi-scale spatio-temporal maps.
//!
//! For every frame the face is split into 15 regions; the YUV mean of each
//! region in the original and the three magnified videos gives 60 rows of
//! temporal signals. Signals are windowed into 196-frame maps and min-max
//! normalized per row and channel.

pub mod mems;
pub mod roi;

use ndarray::{Array3, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{FrameSequence, LandmarkTrack};
use crate::magnify::MagnifiedSet;
use roi::{roi_layout, NO_REGION, ROI_COUNT};

pub const STREAMS: usize = 4;
pub const MAP_ROWS: usize = STREAMS * ROI_COUNT;
pub const MAP_COLS: usize = 196;
pub const CHANNELS: usize = 3;
pub const DEFAULT_STRIDE_SECONDS: f64 = 0.5;

/// Full-range YUV with the analog U/V scale factors and a +128 chroma offset.
pub fn rgb_to_yuv(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|v| v.clamp(0.0, 255.0));
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    [y, 0.492 * (b - y) + 128.0, 0.877 * (r - y) + 128.0]
}

/// Per-region YUV means over time, shaped `(rows, frames, 3)`.
///
/// Rows `15*k .. 15*k + 15` belong to stream `k` (0 = original video,
/// 1..=3 = magnified octaves).
#[derive(Debug, Clone, PartialEq)]
pub struct SignalGrid {
    pub values: Array3<f64>,
    pub source: String,
}

impl SignalGrid {
    pub fn rows(&self) -> usize {
        self.values.dim().0
    }

    pub fn frames(&self) -> usize {
        self.values.dim().1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
    Unlabeled,
}

impl Label {
    pub fn code(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
            Label::Unlabeled => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        match code {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            255 => Some(Label::Unlabeled),
            _ => None,
        }
    }

    /// Class index used by the classifier (real = 0, fake = 1).
    pub fn class(self) -> Option<usize> {
        match self {
            Label::Real => Some(0),
            Label::Fake => Some(1),
            Label::Unlabeled => None,
        }
    }

    pub fn from_class(class: usize) -> Label {
        if class == 0 {
            Label::Real
        } else {
            Label::Fake
        }
    }
}

/// One 60x196x3 normalized map; values lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemstMap {
    pub values: Array3<f32>,
    pub source_video: String,
    pub window_start: usize,
    pub label: Label,
}

impl MemstMap {
    pub fn new(values: Array3<f32>, source_video: impl Into<String>, window_start: usize, label: Label) -> Result<Self> {
        if values.dim() != (MAP_ROWS, MAP_COLS, CHANNELS) {
            return Err(Error::Shape(format!(
                "map must be {MAP_ROWS}x{MAP_COLS}x{CHANNELS}, got {:?}",
                values.dim()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("map values must lie in [0, 1]".into()));
        }
        Ok(MemstMap {
            values,
            source_video: source_video.into(),
            window_start,
            label,
        })
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    /// Column `k` (one frame) as a `(rows, channels)` view.
    pub fn column(&self, k: usize) -> ArrayView2<'_, f32> {
        self.values.index_axis(ndarray::Axis(1), k)
    }

    /// Identifier `source@start` used in reports.
    pub fn id(&self) -> String {
        format!("{}@{}", self.source_video, self.window_start)
    }

    /// Renders the map as an 8-bit image (width = frames, height = rows,
    /// channels Y, U, V stored as R, G, B).
    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_fn(MAP_COLS as u32, MAP_ROWS as u32, |x, y| {
            let px = |c: usize| (self.values[(y as usize, x as usize, c)] * 255.0).round() as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }
}

/// Extracts 15 region means per stream and frame.
///
/// The layout is recomputed from each frame's landmarks. `track` must
/// already be accepted (every frame valid).
pub fn extract_signals(set: &MagnifiedSet, track: &LandmarkTrack, source: &str) -> Result<SignalGrid> {
    let streams = set.streams();
    extract_streams(&streams, track, source)
}

/// Region means for an arbitrary list of frame-aligned streams; the grid has
/// `15 * streams.len()` rows.
pub fn extract_streams(streams: &[&FrameSequence], track: &LandmarkTrack, source: &str) -> Result<SignalGrid> {
    let first = streams.first().ok_or(Error::Empty("stream list"))?;
    let (n, h, w) = (first.len(), first.height(), first.width());
    if streams.iter().any(|s| s.len() != n || s.height() != h || s.width() != w) {
        return Err(Error::Shape("streams differ in frame count or size".into()));
    }
    if track.len() != n {
        return Err(Error::Shape(format!("{} landmark frames for {n} video frames", track.len())));
    }
    if let Some(t) = track.valid.iter().position(|v| !v) {
        return Err(Error::InvalidArgument(format!(
            "frame {t} has no landmarks; run validate_track first"
        )));
    }
    track.ensure_within(w, h)?;

    let per_frame: Vec<Vec<[f64; 3]>> = (0..n)
        .into_par_iter()
        .map(|t| {
            let layout = roi_layout(&track.points[t])?;
            let mask = layout.mask(w, h);
            let mut counts = [0usize; ROI_COUNT];
            let mut sums = vec![[0.0f64; 3]; streams.len() * ROI_COUNT];
            for ((y, x), &r) in mask.indexed_iter() {
                if r == NO_REGION {
                    continue;
                }
                let r = r as usize;
                counts[r] += 1;
                for (s, stream) in streams.iter().enumerate() {
                    let frame = stream.data();
                    let rgb = [0, 1, 2].map(|c| frame[(t, y, x, c)] as f64);
                    let yuv = rgb_to_yuv(rgb);
                    let acc = &mut sums[s * ROI_COUNT + r];
                    for c in 0..3 {
                        acc[c] += yuv[c];
                    }
                }
            }
            if let Some(region) = counts.iter().position(|&c| c == 0) {
                return Err(Error::EmptyRoi { frame: t, region });
            }
            for (row, acc) in sums.iter_mut().enumerate() {
                let count = counts[row % ROI_COUNT] as f64;
                for v in acc.iter_mut() {
                    *v /= count;
                }
            }
            Ok(sums)
        })
        .collect::<Result<_>>()?;

    let rows = streams.len() * ROI_COUNT;
    let values = Array3::from_shape_fn((rows, n, 3), |(row, t, c)| per_frame[t][row][c]);
    Ok(SignalGrid {
        values,
        source: source.to_string(),
    })
}

/// Window stride in frames for a stride given in seconds.
pub fn stride_frames(fps: f64, stride_seconds: f64) -> usize {
    ((stride_seconds * fps).round() as usize).max(1)
}

/// Number of windows produced for `frames` frames.
pub fn window_count(frames: usize, stride: usize) -> usize {
    if frames < MAP_COLS {
        0
    } else {
        (frames - MAP_COLS) / stride + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Windowed {
    pub maps: Vec<MemstMap>,
    /// Set when the grid was too short to produce a single window.
    pub warning: Option<String>,
}

/// Cuts 196-frame windows every `round(0.5 * fps)` frames and normalizes
/// each row/channel signal within the window to `[0, 1]`.
pub fn window_and_normalize(grid: &SignalGrid, fps: f64) -> Windowed {
    window_and_normalize_with(grid, fps, DEFAULT_STRIDE_SECONDS)
}

pub fn window_and_normalize_with(grid: &SignalGrid, fps: f64, stride_seconds: f64) -> Windowed {
    let frames = grid.frames();
    if frames < MAP_COLS {
        let warning = format!(
            "{}: {frames} frames is shorter than one {MAP_COLS}-frame window; no maps produced",
            grid.source
        );
        log::warn!("{warning}");
        return Windowed {
            maps: Vec::new(),
            warning: Some(warning),
        };
    }
    let stride = stride_frames(fps, stride_seconds);
    let maps = (0..window_count(frames, stride))
        .into_par_iter()
        .map(|w| normalize_window(grid, w * stride))
        .collect();
    Windowed { maps, warning: None }
}

fn normalize_window(grid: &SignalGrid, start: usize) -> MemstMap {
    let rows = grid.rows();
    let mut values = Array3::<f32>::zeros((rows, MAP_COLS, CHANNELS));
    for row in 0..rows {
        for c in 0..CHANNELS {
            let signal = grid.values.slice(ndarray::s![row, start..start + MAP_COLS, c]);
            let (lo, hi) = signal
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let range = hi - lo;
            for (k, &v) in signal.iter().enumerate() {
                let n = if range > 0.0 { ((v - lo) / range).clamp(0.0, 1.0) } else { 0.5 };
                values[(row, k, c)] = n as f32;
            }
        }
    }
    MemstMap {
        values,
        source_video: grid.source.clone(),
        window_start: start,
        label: Label::Unlabeled,
    }
}
