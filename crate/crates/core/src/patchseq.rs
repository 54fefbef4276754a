//! Column-to-patch reshaping.
//!
//! Every map column holds one frame's 60 region values per channel. The 60
//! samples are interpolated onto 256 points and reshaped row-major into a
//! 16x16 patch, channels stacked last, so each transformer token carries
//! exactly one frame.
//!
//! Interpolation is piecewise linear between anchors: source sample `i`
//! lands on target index `round(i * 255 / 59)`, and the target points
//! between two anchors are linear blends of the two samples. Every source
//! sample therefore appears verbatim in the patch (so per-channel extremes
//! are kept), the end samples sit on the first and last patch pixels, and
//! constants stay constant.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

use crate::stmap::{MemstMap, CHANNELS, MAP_COLS, MAP_ROWS};

pub const PATCH_SIDE: usize = 16;
pub const PATCH_LEN: usize = PATCH_SIDE * PATCH_SIDE;
pub const PATCH_DIM: usize = PATCH_LEN * CHANNELS;

/// Target index of each source sample.
fn anchors() -> [usize; MAP_ROWS] {
    std::array::from_fn(|i| {
        let pos = (i * (PATCH_LEN - 1)) as f64 / (MAP_ROWS - 1) as f64;
        pos.round() as usize
    })
}

/// Resamples 60 values onto 256 points.
pub fn resample_column(values: &[f64]) -> [f64; PATCH_LEN] {
    assert_eq!(values.len(), MAP_ROWS, "column must have {MAP_ROWS} samples");
    let anchors = anchors();
    let mut out = [0.0; PATCH_LEN];
    for i in 0..MAP_ROWS - 1 {
        let (a0, a1) = (anchors[i], anchors[i + 1]);
        let (v0, v1) = (values[i], values[i + 1]);
        let (lo, hi) = (v0.min(v1), v0.max(v1));
        let span = (a1 - a0) as f64;
        for (j, slot) in out.iter_mut().enumerate().take(a1).skip(a0) {
            let f = (j - a0) as f64 / span;
            *slot = (v0 + f * (v1 - v0)).clamp(lo, hi);
        }
    }
    out[PATCH_LEN - 1] = values[MAP_ROWS - 1];
    out
}

/// One column `(60, 3)` to a `(16, 16, 3)` patch.
pub fn column_to_patch(column: ArrayView2<f64>) -> Array3<f64> {
    assert_eq!(column.dim(), (MAP_ROWS, CHANNELS));
    let mut patch = Array3::<f64>::zeros((PATCH_SIDE, PATCH_SIDE, CHANNELS));
    for c in 0..CHANNELS {
        let samples: Vec<f64> = column.column(c).to_vec();
        for (j, v) in resample_column(&samples).into_iter().enumerate() {
            patch[(j / PATCH_SIDE, j % PATCH_SIDE, c)] = v;
        }
    }
    patch
}

/// 196 flattened patches, one per frame, in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    /// `(196, 768)`; column index is `(row * 16 + col) * 3 + channel`.
    pub patches: Array2<f64>,
    pub frame_positions: Vec<usize>,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.patches.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch(&self, k: usize) -> ArrayView3<'_, f64> {
        self.patches
            .row(k)
            .into_shape_with_order((PATCH_SIDE, PATCH_SIDE, CHANNELS))
            .expect("patch row is contiguous")
    }

    /// Tiles the patches in raster order into a 224x224 RGB debug image.
    pub fn to_image(&self) -> image::RgbImage {
        let per_row = 224 / PATCH_SIDE;
        image::RgbImage::from_fn(224, 224, |x, y| {
            let (x, y) = (x as usize, y as usize);
            let k = (y / PATCH_SIDE) * per_row + x / PATCH_SIDE;
            if k >= self.len() {
                return image::Rgb([0, 0, 0]);
            }
            let p = self.patch(k);
            let px = |c| (p[(y % PATCH_SIDE, x % PATCH_SIDE, c)] * 255.0).round().clamp(0.0, 255.0) as u8;
            image::Rgb([px(0), px(1), px(2)])
        })
    }
}

pub fn map_to_patches(map: &MemstMap) -> PatchSequence {
    let mut patches = Array2::<f64>::zeros((MAP_COLS, PATCH_DIM));
    for k in 0..MAP_COLS {
        let column = map.column(k).mapv(f64::from);
        let patch = column_to_patch(column.view());
        patches
            .row_mut(k)
            .iter_mut()
            .zip(patch.iter())
            .for_each(|(d, s)| *d = *s);
    }
    PatchSequence {
        patches,
        frame_positions: (0..MAP_COLS).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stmap::Label;
    use proptest::prelude::*;

    #[test]
    fn anchors_are_strictly_increasing_and_span_patch() {
        let a = anchors();
        assert_eq!(a[0], 0);
        assert_eq!(a[MAP_ROWS - 1], PATCH_LEN - 1);
        assert!(a.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn constant_column_gives_constant_patch() {
        let column = Array2::from_elem((MAP_ROWS, 3), 0.3);
        let patch = column_to_patch(column.view());
        assert!(patch.iter().all(|&v| v == 0.3));
    }

    #[test]
    fn ramp_column_gives_monotone_ramp() {
        let column = Array2::from_shape_fn((MAP_ROWS, 3), |(i, _)| i as f64 / 59.0);
        let patch = column_to_patch(column.view());
        assert_eq!(patch[(0, 0, 0)], 0.0);
        assert_eq!(patch[(15, 15, 2)], 1.0);
        let flat: Vec<f64> = (0..PATCH_LEN).map(|j| patch[(j / 16, j % 16, 1)]).collect();
        assert!(flat.windows(2).all(|w| w[1] >= w[0]));
        for (j, v) in flat.iter().enumerate() {
            // Anchors are at most half a target step away from j * 59 / 255.
            assert!((v - j as f64 / 255.0).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn identical_columns_identical_patches() {
        let values = ndarray::Array3::from_shape_fn((MAP_ROWS, MAP_COLS, 3), |(r, _, c)| ((r * 3 + c) % 7) as f32 / 7.0);
        let seq = map_to_patches(&MemstMap::new(values, "x", 0, Label::Real).unwrap());
        assert_eq!(seq.len(), MAP_COLS);
        assert_eq!(seq.patches.ncols(), PATCH_DIM);
        for k in 1..MAP_COLS {
            assert_eq!(seq.patches.row(k), seq.patches.row(0));
        }
        assert_eq!(seq.frame_positions[195], 195);
    }

    #[test]
    fn swapping_columns_swaps_patches() {
        let values = ndarray::Array3::from_shape_fn((MAP_ROWS, MAP_COLS, 3), |(r, k, c)| ((r * 31 + k * 17 + c * 5) % 97) as f32 / 96.0);
        let map = MemstMap::new(values.clone(), "x", 0, Label::Real).unwrap();
        let mut swapped = values;
        for r in 0..MAP_ROWS {
            for c in 0..3 {
                swapped.swap((r, 10, c), (r, 150, c));
            }
        }
        let a = map_to_patches(&map);
        let b = map_to_patches(&MemstMap::new(swapped, "x", 0, Label::Real).unwrap());
        for k in 0..MAP_COLS {
            let expected = match k {
                10 => 150,
                150 => 10,
                _ => k,
            };
            assert_eq!(b.patches.row(k), a.patches.row(expected));
        }
    }

    proptest! {
        #[test]
        fn patch_range_matches_column_range(values in proptest::collection::vec(0.0f64..1.0, MAP_ROWS * 3)) {
            let column = Array2::from_shape_vec((MAP_ROWS, 3), values).unwrap();
            let patch = column_to_patch(column.view());
            for c in 0..3 {
                let col = column.column(c);
                let pc = patch.index_axis(ndarray::Axis(2), c);
                let fold = |it: &mut dyn Iterator<Item = f64>| it.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
                prop_assert_eq!(fold(&mut col.iter().copied()), fold(&mut pc.iter().copied()));
            }
        }
    }
}
