//! Synthetic real/fake map corpus.
//!
//! Real maps come from rendered pulse videos pushed through the full
//! magnify-and-map pipeline: one heart rate per video between 0.8 and
//! 2.5 Hz and a smooth phase progression across the 15 regions. Fake maps
//! are shuffled copies of real ones, see [`FakeMode`].
//!
//! Whole-column shuffles keep every per-frame patch intact, so a fake is
//! an exact patch permutation of its real twin. The classifier only tells
//! such pairs apart through its positional embeddings. Per-row shuffles
//! also break the cross-region structure inside each column.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{video_to_maps, MapSettings};
use crate::error::Result;
use crate::ingest::synth::{synth_pulse_video, SynthSpec};
use crate::stmap::roi::ROI_COUNT;
use crate::stmap::{stride_frames, Label, MemstMap, MAP_COLS};

#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub videos: usize,
    pub windows_per_video: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    pub noise_sigma: f64,
    pub fake: FakeMode,
    pub seed: u64,
}

/// How a fake map is derived from a real one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FakeMode {
    /// One random permutation applied to all columns.
    #[default]
    ColumnShuffle,
    /// An independent random time permutation for every row.
    RowShuffle,
}

impl Default for ToySpec {
    /// 40 videos of 10 windows: 400 real and 400 fake maps.
    fn default() -> Self {
        ToySpec {
            videos: 40,
            windows_per_video: 10,
            width: 64,
            height: 64,
            fps: 30.0,
            noise_sigma: 2.0,
            fake: FakeMode::default(),
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ToyDataset {
    pub train: Vec<MemstMap>,
    pub val: Vec<MemstMap>,
    pub test: Vec<MemstMap>,
}

/// Pulse video parameters for video `index`.
pub fn video_spec(spec: &ToySpec, index: usize) -> SynthSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (index as u64).wrapping_mul(0xA076_1D64_78BD_642F));
    let stride = stride_frames(spec.fps, 0.5);
    let frames = MAP_COLS + (spec.windows_per_video.max(1) - 1) * stride;
    let base_phase = rng.random_range(0.0..2.0 * PI);
    let phase_step = rng.random_range(-0.3..0.3);
    SynthSpec {
        width: spec.width,
        height: spec.height,
        fps: spec.fps,
        duration: frames as f64 / spec.fps,
        pulse_hz: rng.random_range(0.8..2.5),
        pulse_amp: rng.random_range(1.5..3.0),
        base_color: [
            rng.random_range(140.0..200.0),
            rng.random_range(90.0..140.0),
            rng.random_range(70.0..120.0),
        ],
        noise_sigma: spec.noise_sigma,
        region_phase: (0..ROI_COUNT).map(|r| base_phase + phase_step * r as f64).collect(),
        channel: 1,
        seed: rng.random(),
    }
}

/// Permutes the columns of `map` and labels it fake.
pub fn shuffle_columns(map: &MemstMap, seed: u64) -> MemstMap {
    let mut order: Vec<usize> = (0..MAP_COLS).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let values = map.values.select(ndarray::Axis(1), &order);
    MemstMap {
        values,
        source_video: format!("{}~shuffled", map.source_video),
        window_start: map.window_start,
        label: Label::Fake,
    }
}

/// Gives every row its own random time permutation and labels the map fake.
pub fn shuffle_rows(map: &MemstMap, seed: u64) -> MemstMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = map.values.clone();
    let mut order: Vec<usize> = (0..MAP_COLS).collect();
    for (r, mut row) in values.outer_iter_mut().enumerate() {
        order.shuffle(&mut rng);
        row.assign(&map.values.index_axis(ndarray::Axis(0), r).select(ndarray::Axis(0), &order));
    }
    MemstMap {
        values,
        source_video: format!("{}~shuffled", map.source_video),
        window_start: map.window_start,
        label: Label::Fake,
    }
}

/// Real maps of one synthetic video.
pub fn real_maps(spec: &ToySpec, index: usize) -> Result<Vec<MemstMap>> {
    let synth = video_spec(spec, index);
    let video = synth_pulse_video(&synth)?;
    let out = video_to_maps(
        &video.frames,
        &video.landmarks,
        &format!("toy{index:03}"),
        Label::Real,
        &MapSettings::default(),
    )?;
    Ok(out.into_maps())
}

/// Videos are split 80/10/10 so no video contributes to two splits; every
/// real map is paired with one shuffled copy in the same split.
pub fn toy_dataset(spec: &ToySpec) -> Result<ToyDataset> {
    let per_video: Vec<Vec<MemstMap>> = (0..spec.videos)
        .into_par_iter()
        .map(|i| real_maps(spec, i))
        .collect::<Result<_>>()?;
    let n_val = spec.videos / 10;
    let n_train = spec.videos - 2 * n_val;
    let mut data = ToyDataset::default();
    for (i, maps) in per_video.into_iter().enumerate() {
        let dest = if i < n_train {
            &mut data.train
        } else if i < n_train + n_val {
            &mut data.val
        } else {
            &mut data.test
        };
        for (w, map) in maps.into_iter().enumerate() {
            let seed = spec.seed.wrapping_add((i * 1000 + w) as u64);
            let fake = match spec.fake {
                FakeMode::ColumnShuffle => shuffle_columns(&map, seed),
                FakeMode::RowShuffle => shuffle_rows(&map, seed),
            };
            dest.push(map);
            dest.push(fake);
        }
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffled_map_is_a_column_permutation() {
        let values = ndarray::Array3::from_shape_fn((60, 196, 3), |(r, k, c)| ((r + 2 * k + c) % 100) as f32 / 99.0);
        let map = MemstMap::new(values, "x", 0, Label::Real).unwrap();
        let fake = shuffle_columns(&map, 5);
        assert_eq!(fake.label, Label::Fake);
        assert_ne!(fake.values, map.values);
        let mut a: Vec<Vec<u32>> = (0..196).map(|k| map.column(k).iter().map(|v| v.to_bits()).collect()).collect();
        let mut b: Vec<Vec<u32>> = (0..196).map(|k| fake.column(k).iter().map(|v| v.to_bits()).collect()).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn small_corpus_has_balanced_video_disjoint_splits() {
        let spec = ToySpec {
            videos: 10,
            windows_per_video: 2,
            width: 32,
            height: 32,
            ..ToySpec::default()
        };
        let data = toy_dataset(&spec).unwrap();
        assert_eq!((data.train.len(), data.val.len(), data.test.len()), (32, 4, 4));
        let reals = data.train.iter().filter(|m| m.label == Label::Real).count();
        assert_eq!(reals, 16);
        let train_videos: std::collections::BTreeSet<_> = data.train.iter().map(|m| m.source_video.split('~').next().unwrap()).collect();
        assert!(data.test.iter().all(|m| !train_videos.contains(m.source_video.split('~').next().unwrap())));
    }
}
