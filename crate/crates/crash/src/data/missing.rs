//! Frame-dropping augmentation and dataset subsetting.
//!
//! Robustness experiments need datasets where some frames were never
//! observed. A masked frame keeps its slot in the sequence (timing and the
//! accident annotation are untouched) but has its features zeroed and its
//! `observed` flag cleared.
//!
//! Masks are a pure function of (spec seed, video id), so re-running an
//! augmentation command reproduces the same dataset byte for byte, and adding
//! or removing videos does not shift the masks of the others.

use super::{DataError, VideoSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Frames per window for the periodic pattern.
const WINDOW: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub enum MissingSpec {
    /// Mask round(rate * T) frames chosen uniformly without replacement.
    RandomRate { rate: f64, seed: u64 },
    /// Mask `drop_per_window` frames in every disjoint 5-frame window, and
    /// proportionally many (floor) in a trailing partial window.
    Periodic { drop_per_window: usize, seed: u64 },
}

pub fn apply_missing(samples: &mut [VideoSample], spec: &MissingSpec) -> Result<(), DataError> {
    match *spec {
        MissingSpec::RandomRate { rate, .. } if !(0.0..=1.0).contains(&rate) => {
            return Err(DataError::InvalidArg(format!("missing rate {rate} outside [0, 1]")));
        }
        MissingSpec::Periodic { drop_per_window, .. } if !(1..=2).contains(&drop_per_window) => {
            return Err(DataError::InvalidArg(format!(
                "drop_per_window {drop_per_window} outside 1..=2"
            )));
        }
        _ => {}
    }
    for sample in samples {
        let mut rng = video_rng(spec_seed(spec), &sample.id);
        let t = sample.frames.len();
        let mask = match *spec {
            MissingSpec::RandomRate { rate, .. } => {
                let k = (rate * t as f64).round() as usize;
                choose(&mut rng, t, k)
            }
            MissingSpec::Periodic { drop_per_window, .. } => {
                let mut picks = Vec::new();
                let mut start = 0;
                while start < t {
                    let len = WINDOW.min(t - start);
                    let k = if len == WINDOW {
                        drop_per_window
                    } else {
                        len * drop_per_window / WINDOW
                    };
                    picks.extend(choose(&mut rng, len, k).into_iter().map(|i| start + i));
                    start += len;
                }
                picks
            }
        };
        for i in mask {
            let f = &mut sample.frames[i];
            f.objects.data_mut().fill(0.0);
            f.context.data_mut().fill(0.0);
            f.observed = false;
        }
    }
    Ok(())
}

/// Label-stratified prefix subset: round(fraction * count) videos total, with
/// the positive count rounded the same way, keeping the original order.
pub fn subset(samples: &[VideoSample], fraction: f64) -> Result<Vec<VideoSample>, DataError> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(DataError::InvalidArg(format!("subset fraction {fraction} outside [0, 1]")));
    }
    let n_pos = samples.iter().filter(|s| s.label).count();
    let n_neg = samples.len() - n_pos;
    let total = (fraction * samples.len() as f64).round() as usize;
    let k_pos = ((fraction * n_pos as f64).round() as usize)
        .min(n_pos)
        .max(total.saturating_sub(n_neg));
    let k_neg = total - k_pos;
    let (mut taken_pos, mut taken_neg) = (0, 0);
    let out: Vec<VideoSample> = samples
        .iter()
        .filter(|s| {
            let (taken, quota) = if s.label {
                (&mut taken_pos, k_pos)
            } else {
                (&mut taken_neg, k_neg)
            };
            *taken += 1;
            *taken <= quota
        })
        .cloned()
        .collect();
    Ok(out)
}

/// First k of a partial Fisher-Yates shuffle of 0..n.
fn choose(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

fn spec_seed(spec: &MissingSpec) -> u64 {
    match *spec {
        MissingSpec::RandomRate { seed, .. } => seed,
        MissingSpec::Periodic { seed, .. } => seed,
    }
}

/// Per-video stream: mix the spec seed with a hash of the id so every video
/// gets an independent mask that does not depend on dataset order.
fn video_rng(seed: u64, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a64(id.as_bytes())))
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, GenConfig};

    fn dataset(count: usize, frac: f64) -> Vec<VideoSample> {
        let cfg = GenConfig {
            t: 24,
            n: 3,
            d: 8,
            fps: 10.0,
        };
        gen_synthetic(&cfg, count, frac, 5).unwrap()
    }

    fn masked_indices(s: &VideoSample) -> Vec<usize> {
        s.frames
            .iter()
            .enumerate()
            .filter(|(_, f)| !f.observed)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn random_rate_masks_exact_rounded_count() {
        let mut s = dataset(4, 0.5);
        apply_missing(&mut s, &MissingSpec::RandomRate { rate: 0.3, seed: 1 }).unwrap();
        for v in &s {
            // round(0.3 * 24) = 7
            assert_eq!(masked_indices(v).len(), 7, "{}", v.id);
            for f in v.frames.iter().filter(|f| !f.observed) {
                assert!(f.objects.data().iter().all(|&x| x == 0.0));
                assert!(f.context.data().iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        let cfg = GenConfig {
            t: 5,
            n: 2,
            d: 4,
            fps: 10.0,
        };
        let mut s = gen_synthetic(&cfg, 1, 0.0, 0).unwrap();
        apply_missing(&mut s, &MissingSpec::RandomRate { rate: 0.5, seed: 0 }).unwrap();
        assert_eq!(masked_indices(&s[0]).len(), 3); // round(2.5) = 3
    }

    #[test]
    fn rate_extremes() {
        let mut s = dataset(2, 0.5);
        apply_missing(&mut s, &MissingSpec::RandomRate { rate: 0.0, seed: 2 }).unwrap();
        assert!(s.iter().all(|v| masked_indices(v).is_empty()));
        apply_missing(&mut s, &MissingSpec::RandomRate { rate: 1.0, seed: 2 }).unwrap();
        assert!(s.iter().all(|v| masked_indices(v).len() == 24));
    }

    #[test]
    fn periodic_masks_per_window_and_trailing_floor() {
        let cfg = GenConfig {
            t: 23,
            n: 2,
            d: 4,
            fps: 10.0,
        };
        let mut s = gen_synthetic(&cfg, 3, 0.0, 1).unwrap();
        apply_missing(
            &mut s,
            &MissingSpec::Periodic {
                drop_per_window: 2,
                seed: 4,
            },
        )
        .unwrap();
        for v in &s {
            let idx = masked_indices(v);
            // 4 full windows * 2 + floor(3 * 2 / 5) = 9
            assert_eq!(idx.len(), 9, "{}", v.id);
            for w in 0..4 {
                let in_window = idx.iter().filter(|&&i| i / 5 == w).count();
                assert_eq!(in_window, 2, "{} window {w}", v.id);
            }
        }
    }

    #[test]
    fn masks_depend_on_video_id_not_order() {
        let spec = MissingSpec::RandomRate { rate: 0.25, seed: 9 };
        let mut a = dataset(3, 0.0);
        apply_missing(&mut a, &spec).unwrap();
        // Re-run on a reversed copy: each id keeps its exact mask.
        let mut b = dataset(3, 0.0);
        b.reverse();
        apply_missing(&mut b, &spec).unwrap();
        b.reverse();
        assert_eq!(a, b);
        assert_ne!(masked_indices(&a[0]), masked_indices(&a[1]));
    }

    #[test]
    fn annotations_survive_masking() {
        let mut s = dataset(2, 1.0);
        let before: Vec<_> = s.iter().map(|v| (v.label, v.tau)).collect();
        apply_missing(&mut s, &MissingSpec::RandomRate { rate: 0.5, seed: 3 }).unwrap();
        let after: Vec<_> = s.iter().map(|v| (v.label, v.tau)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = dataset(1, 0.0);
        assert!(apply_missing(&mut s, &MissingSpec::RandomRate { rate: 1.5, seed: 0 }).is_err());
        assert!(apply_missing(
            &mut s,
            &MissingSpec::Periodic {
                drop_per_window: 3,
                seed: 0
            }
        )
        .is_err());
    }

    #[test]
    fn subset_is_stratified_and_order_preserving() {
        let s = dataset(10, 0.4); // 4 positives, 6 negatives
        let sub = subset(&s, 0.5).unwrap();
        assert_eq!(sub.len(), 5);
        assert_eq!(sub.iter().filter(|v| v.label).count(), 2);
        let ids: Vec<&str> = sub.iter().map(|v| v.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted, "original order kept");
        assert_eq!(subset(&s, 1.0).unwrap().len(), 10);
        assert_eq!(subset(&s, 0.0).unwrap().len(), 0);
    }
}
