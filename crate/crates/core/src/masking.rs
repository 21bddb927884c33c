//! Pixel masking for the corrupted pretraining input.
//!
//! Under the foreground strategy the candidate pool is the set of pixels that
//! are nonzero in every channel; a `ρ` fraction of the pool is drawn without
//! replacement and zeroed jointly across channels.

use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Side length of the square blocks used by [`MaskStrategy::Blockwise`].
pub const BLOCK_SIZE: usize = 4;

/// `(row, column)` pixel coordinate.
pub type Coord = (usize, usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskStrategy {
    Foreground,
    Random,
    Blockwise,
}

impl fmt::Display for MaskStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskStrategy::Foreground => "foreground",
            MaskStrategy::Random => "random",
            MaskStrategy::Blockwise => "blockwise",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Sorted candidate coordinates.
    pub candidates: Vec<Coord>,
    /// Sorted masked coordinates, a subset of `candidates`.
    pub masked: Vec<Coord>,
    pub ratio: f64,
    pub strategy: MaskStrategy,
    pub seed: u64,
}

/// Pixels that are nonzero in every channel.
pub fn foreground_candidates(image: &ImageTensor) -> Result<Vec<Coord>> {
    let (c, h, w) = image.dim();
    if c == 0 {
        return Err(Error::shape("image has no channels"));
    }
    let data = image.data();
    let out: Vec<Coord> = (0..h)
        .flat_map(|x| (0..w).map(move |y| (x, y)))
        .filter(|&(x, y)| (0..c).all(|n| data[[n, x, y]] != 0.0))
        .collect();
    if out.is_empty() {
        return Err(Error::InsufficientForeground);
    }
    Ok(out)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidRatio(ratio));
    }
    Ok(())
}

fn sample_count(ratio: f64, pool: usize) -> usize {
    ((ratio * pool as f64).floor() as usize).min(pool)
}

/// Draws a mask plan; identical arguments give identical plans.
pub fn plan_mask(
    image: &ImageTensor,
    strategy: MaskStrategy,
    ratio: f64,
    seed: u64,
) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    let (_, h, w) = image.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_pixels = || -> Vec<Coord> { (0..h).flat_map(|x| (0..w).map(move |y| (x, y))).collect() };

    let (candidates, mut masked) = match strategy {
        MaskStrategy::Foreground | MaskStrategy::Random => {
            let candidates = if strategy == MaskStrategy::Foreground {
                foreground_candidates(image)?
            } else {
                all_pixels()
            };
            let k = sample_count(ratio, candidates.len());
            let masked: Vec<Coord> = index::sample(&mut rng, candidates.len(), k)
                .into_iter()
                .map(|i| candidates[i])
                .collect();
            (candidates, masked)
        }
        MaskStrategy::Blockwise => {
            let (bh, bw) = (h.div_ceil(BLOCK_SIZE), w.div_ceil(BLOCK_SIZE));
            let k = sample_count(ratio, bh * bw);
            let mut masked = Vec::new();
            for b in index::sample(&mut rng, bh * bw, k) {
                let (r0, c0) = ((b / bw) * BLOCK_SIZE, (b % bw) * BLOCK_SIZE);
                for x in r0..(r0 + BLOCK_SIZE).min(h) {
                    for y in c0..(c0 + BLOCK_SIZE).min(w) {
                        masked.push((x, y));
                    }
                }
            }
            (all_pixels(), masked)
        }
    };
    masked.sort_unstable();
    Ok(MaskPlan {
        candidates,
        masked,
        ratio,
        strategy,
        seed,
    })
}

/// Copy of `image` with every masked coordinate zeroed in all channels.
pub fn apply_mask(image: &ImageTensor, plan: &MaskPlan) -> Result<ImageTensor> {
    let (_, h, w) = image.dim();
    let mut out = image.clone();
    for &(x, y) in &plan.masked {
        if x >= h || y >= w {
            return Err(Error::CoordinateOutOfRange {
                x,
                y,
                height: h,
                width: w,
            });
        }
        out.data_mut()
            .slice_mut(ndarray::s![.., x, y])
            .fill(0.0);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Static,
    Dynamic,
}

/// Per-epoch masking ratio. Dynamic schedules split training into equal
/// segments, one per value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSchedule {
    pub kind: ScheduleKind,
    pub values: Vec<f64>,
}

impl RatioSchedule {
    pub fn fixed(ratio: f64) -> Self {
        RatioSchedule {
            kind: ScheduleKind::Static,
            values: vec![ratio],
        }
    }

    pub fn dynamic(values: Vec<f64>) -> Self {
        RatioSchedule {
            kind: ScheduleKind::Dynamic,
            values,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidSchedule("no ratio values".into()));
        }
        for &v in &self.values {
            check_ratio(v)?;
        }
        match self.kind {
            ScheduleKind::Static if self.values.len() != 1 => Err(Error::InvalidSchedule(
                "static schedule takes exactly one value".into(),
            )),
            ScheduleKind::Dynamic if self.values.windows(2).any(|p| p[1] < p[0]) => Err(
                Error::InvalidSchedule("dynamic ratios must be non-decreasing".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Human-readable label, e.g. `0.25` or `0.15, 0.20, 0.25`.
    pub fn label(&self) -> String {
        self.values
            .iter()
            .map(|v| format!("{v:.2}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

pub fn ratio_at(schedule: &RatioSchedule, epoch: usize, total_epochs: usize) -> Result<f64> {
    schedule.validate()?;
    if epoch >= total_epochs {
        return Err(Error::InvalidSchedule(format!(
            "epoch {epoch} outside [0, {total_epochs})"
        )));
    }
    Ok(match schedule.kind {
        ScheduleKind::Static => schedule.values[0],
        ScheduleKind::Dynamic => {
            let k = schedule.values.len();
            schedule.values[(k * epoch / total_epochs).min(k - 1)]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    /// Two channels whose supports overlap on (2,1) and (2,2).
    fn overlap_example() -> ImageTensor {
        let mut data = Array3::zeros((2, 4, 4));
        for (x, y) in [(1, 1), (1, 2), (2, 1), (2, 2)] {
            data[[0, x, y]] = 0.7;
        }
        for (x, y) in [(2, 1), (2, 2), (3, 1), (3, 2)] {
            data[[1, x, y]] = 0.4;
        }
        ImageTensor::new(data)
    }

    #[test]
    fn all_zero_has_no_foreground() {
        let img = ImageTensor::zeros(3, 4, 4);
        assert!(matches!(
            foreground_candidates(&img),
            Err(Error::InsufficientForeground)
        ));
        assert!(matches!(
            plan_mask(&img, MaskStrategy::Foreground, 0.5, 1),
            Err(Error::InsufficientForeground)
        ));
    }

    #[test]
    fn full_foreground_single_channel() {
        let img = ImageTensor::new(Array3::from_elem((1, 3, 5), 0.2));
        assert_eq!(foreground_candidates(&img).unwrap().len(), 15);
    }

    #[test]
    fn candidates_are_channel_intersection() {
        let cands = foreground_candidates(&overlap_example()).unwrap();
        assert_eq!(cands, vec![(2, 1), (2, 2)]);
    }

    #[test]
    fn zero_ratio_masks_nothing() {
        let img = ImageTensor::new(Array3::from_elem((2, 8, 8), 1.0));
        for s in [MaskStrategy::Foreground, MaskStrategy::Random, MaskStrategy::Blockwise] {
            assert!(plan_mask(&img, s, 0.0, 3).unwrap().masked.is_empty());
        }
    }

    #[test]
    fn half_of_two_candidates() {
        for seed in 0..20 {
            let plan = plan_mask(&overlap_example(), MaskStrategy::Foreground, 0.5, seed).unwrap();
            assert_eq!(plan.masked.len(), 1);
            assert!([(2, 1), (2, 2)].contains(&plan.masked[0]));
        }
    }

    #[test]
    fn random_quarter_of_8x8() {
        let img = ImageTensor::zeros(1, 8, 8);
        let plan = plan_mask(&img, MaskStrategy::Random, 0.25, 9).unwrap();
        assert_eq!(plan.masked.len(), 16);
        assert_eq!(plan.candidates.len(), 64);
    }

    #[test]
    fn blockwise_masks_whole_blocks() {
        let img = ImageTensor::zeros(1, 16, 16);
        let plan = plan_mask(&img, MaskStrategy::Blockwise, 0.5, 4).unwrap();
        // 16 blocks of 4x4, half of them
        assert_eq!(plan.masked.len(), 8 * 16);
        for &(x, y) in &plan.masked {
            let (bx, by) = (x / 4 * 4, y / 4 * 4);
            for dx in 0..4 {
                for dy in 0..4 {
                    assert!(plan.masked.binary_search(&(bx + dx, by + dy)).is_ok());
                }
            }
        }
    }

    #[test]
    fn ratio_bounds() {
        let img = ImageTensor::zeros(1, 4, 4);
        assert!(matches!(
            plan_mask(&img, MaskStrategy::Random, 1.5, 0),
            Err(Error::InvalidRatio(_))
        ));
        assert!(matches!(
            plan_mask(&img, MaskStrategy::Random, -0.1, 0),
            Err(Error::InvalidRatio(_))
        ));
    }

    #[test]
    fn apply_mask_cases() {
        let img = overlap_example();
        let mut plan = plan_mask(&img, MaskStrategy::Foreground, 0.0, 0).unwrap();
        assert_eq!(apply_mask(&img, &plan).unwrap(), img);

        plan.masked = vec![(2, 1)];
        let out = apply_mask(&img, &plan).unwrap();
        assert_eq!(out.data()[[0, 2, 1]], 0.0);
        assert_eq!(out.data()[[1, 2, 1]], 0.0);
        let unchanged = out
            .data()
            .iter()
            .zip(img.data().iter())
            .filter(|(a, b)| a.to_bits() == b.to_bits())
            .count();
        assert_eq!(unchanged, 30);

        plan.masked = (0..4).flat_map(|x| (0..4).map(move |y| (x, y))).collect();
        assert!(apply_mask(&img, &plan).unwrap().data().iter().all(|&v| v == 0.0));

        plan.masked = vec![(4, 0)];
        assert!(matches!(
            apply_mask(&img, &plan),
            Err(Error::CoordinateOutOfRange { .. })
        ));
    }

    #[test]
    fn schedules() {
        assert_eq!(ratio_at(&RatioSchedule::fixed(0.25), 123, 300).unwrap(), 0.25);
        let slow = RatioSchedule::dynamic(vec![0.15, 0.20, 0.25]);
        assert_eq!(ratio_at(&slow, 0, 300).unwrap(), 0.15);
        assert_eq!(ratio_at(&slow, 100, 300).unwrap(), 0.20);
        let fast = RatioSchedule::dynamic(vec![0.25, 0.50, 0.75]);
        assert_eq!(ratio_at(&fast, 200, 300).unwrap(), 0.75);
        assert_eq!(ratio_at(&fast, 299, 300).unwrap(), 0.75);
        assert!(matches!(
            ratio_at(&RatioSchedule::dynamic(vec![]), 0, 10),
            Err(Error::InvalidSchedule(_))
        ));
        assert!(ratio_at(&RatioSchedule::dynamic(vec![0.5, 0.2]), 0, 10).is_err());
        assert!(ratio_at(&fast, 10, 10).is_err());
        assert_eq!(slow.label(), "0.15, 0.20, 0.25");
    }
}
