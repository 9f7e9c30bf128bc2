use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{Frame, RadarGeometry, RangeAzimuthMap};

use super::lane::LaneMask;

pub const N_FEATURES: usize = 5;

/// `[peakInLane, meanInLane, cfarRatio, temporalPersistence, azimuthSpread]`
pub type FeatureVector = [f32; N_FEATURES];

/// Cell-averaging CFAR along range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct CfarParams {
    pub guard_cells: usize,
    pub train_cells: usize,
    /// Detection threshold above the noise estimate, in dB of magnitude.
    pub offset_db: f32,
}

impl Default for CfarParams {
    fn default() -> Self {
        Self {
            guard_cells: 0,
            train_cells: 8,
            offset_db: 6.0,
        }
    }
}

impl CfarParams {
    pub fn threshold_factor(&self) -> f32 {
        10f32.powf(self.offset_db / 20.0)
    }

    /// Mean of `profile` over the training cells on both sides of each bin,
    /// skipping the guard band; bins near the edges use whichever side exists.
    pub fn noise_estimate(&self, profile: &[f32]) -> Vec<f32> {
        let n = profile.len();
        let mut prefix = vec![0.0f64; n + 1];
        for (i, &v) in profile.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v as f64;
        }
        let g = self.guard_cells;
        let t = self.train_cells;
        (0..n)
            .map(|j| {
                let mut sum = 0.0;
                let mut count = 0usize;
                // lagging window [j-g-t, j-g-1]
                if j > g {
                    let hi = j - g; // exclusive
                    let lo = hi.saturating_sub(t);
                    sum += prefix[hi] - prefix[lo];
                    count += hi - lo;
                }
                // leading window [j+g+1, j+g+t]
                let lo = j + g + 1;
                if lo < n {
                    let hi = (lo + t).min(n);
                    sum += prefix[hi] - prefix[lo];
                    count += hi - lo;
                }
                if count == 0 {
                    0.0
                } else {
                    (sum / count as f64) as f32
                }
            })
            .collect()
    }
}

/// Shifts `src` toward decreasing range by a fractional number of bins using
/// linear interpolation; cells shifted in from beyond the last bin are zero.
pub fn shift_range(src: &RangeAzimuthMap, shift_bins: f64, out: &mut [f32]) {
    let (nr, na) = (src.n_range(), src.n_azimuth());
    let whole = shift_bins.floor() as usize;
    let frac = (shift_bins - whole as f64) as f32;
    for j in 0..nr {
        let row = &mut out[j * na..(j + 1) * na];
        let i0 = j + whole;
        if i0 >= nr {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        let a = src.row(i0);
        if frac == 0.0 {
            row.copy_from_slice(a);
        } else if i0 + 1 < nr {
            let b = src.row(i0 + 1);
            for ((o, &x0), &x1) in row.iter_mut().zip(a).zip(b) {
                *o = x0 + frac * (x1 - x0);
            }
        } else {
            for (o, &x0) in row.iter_mut().zip(a) {
                *o = x0 * (1.0 - frac);
            }
        }
    }
}

/// Past frames aligned to the newest one (last element of `history`).
pub fn align_history(history: &[&Frame], host_speed: f32, geometry: &RadarGeometry) -> Result<Vec<RangeAzimuthMap>> {
    let newest = history
        .last()
        .ok_or_else(|| Error::Config("empty teacher history".into()))?;
    let res = geometry.range_resolution as f64;
    history
        .iter()
        .map(|f| {
            if f.map.n_range() != geometry.n_range || f.map.n_azimuth() != geometry.n_azimuth {
                return Err(Error::Shape(format!(
                    "frame map {}×{} does not match geometry {}×{}",
                    f.map.n_range(),
                    f.map.n_azimuth(),
                    geometry.n_range,
                    geometry.n_azimuth
                )));
            }
            let age = (newest.timestamp - f.timestamp).max(0.0);
            let shift = host_speed as f64 * age / res;
            let mut out = RangeAzimuthMap::zeros(geometry.n_range, geometry.n_azimuth);
            shift_range(&f.map, shift, out.data_mut());
            Ok(out)
        })
        .collect()
}

fn average(maps: &[RangeAzimuthMap]) -> RangeAzimuthMap {
    let mut acc = RangeAzimuthMap::zeros(maps[0].n_range(), maps[0].n_azimuth());
    for m in maps {
        for (a, &v) in acc.data_mut().iter_mut().zip(m.data()) {
            *a += v;
        }
    }
    let k = 1.0 / maps.len() as f32;
    acc.data_mut().iter_mut().for_each(|v| *v *= k);
    acc
}

/// Aligns the history to the newest frame and averages it.
///
/// A frame of age `Δt` seconds is shifted toward decreasing range by
/// `hostSpeed · Δt / rangeResolution` bins; with evenly spaced frames this is
/// `age_in_frames · frameInterval`.
pub fn interpolate_accumulate(
    history: &[&Frame],
    geometry: &RadarGeometry,
    host_speed: f32,
    min_speed: f32,
) -> Result<RangeAzimuthMap> {
    if host_speed < min_speed {
        return Err(Error::BelowCriticalSpeed {
            speed: host_speed,
            min: min_speed,
        });
    }
    let aligned = align_history(history, host_speed, geometry)?;
    Ok(average(&aligned))
}

/// Per-range-bin in-lane peak of a map.
pub fn in_lane_peak(map: &RangeAzimuthMap, mask: &LaneMask) -> Vec<f32> {
    (0..map.n_range())
        .map(|j| match mask.interval(j) {
            Some((lo, hi)) => map.row(j)[lo..=hi].iter().copied().fold(0.0f32, f32::max),
            None => 0.0,
        })
        .collect()
}

/// Fraction of the aligned frames whose in-lane peak at each bin exceeds
/// the CFAR threshold.
pub fn temporal_persistence(aligned: &[RangeAzimuthMap], mask: &LaneMask, cfar: &CfarParams) -> Vec<f32> {
    let n = mask.n_range();
    let factor = cfar.threshold_factor();
    let mut hits = vec![0u32; n];
    for map in aligned {
        let peak = in_lane_peak(map, mask);
        let noise = cfar.noise_estimate(&peak);
        for j in 0..n {
            if peak[j] > factor * noise[j] && peak[j] > 0.0 {
                hits[j] += 1;
            }
        }
    }
    let k = aligned.len().max(1) as f32;
    hits.iter().map(|&h| h as f32 / k).collect()
}

/// Features for every range bin of an accumulated map.
pub fn extract_features(
    accumulated: &RangeAzimuthMap,
    mask: &LaneMask,
    persistence: &[f32],
    cfar: &CfarParams,
) -> Result<Vec<FeatureVector>> {
    if accumulated.n_range() != mask.n_range()
        || accumulated.n_azimuth() != mask.n_azimuth()
        || persistence.len() != mask.n_range()
    {
        return Err(Error::Shape(
            "accumulated map, lane mask and persistence disagree in extent".into(),
        ));
    }
    let peak = in_lane_peak(accumulated, mask);
    let noise = cfar.noise_estimate(&peak);
    let features = (0..mask.n_range())
        .map(|j| {
            let Some((lo, hi)) = mask.interval(j) else {
                return [0.0; N_FEATURES];
            };
            let cells = &accumulated.row(j)[lo..=hi];
            let width = cells.len() as f32;
            let mean = cells.iter().sum::<f32>() / width;
            let p = peak[j];
            let ratio = if noise[j] > 0.0 { p / noise[j] } else { 0.0 };
            let spread = if p > 0.0 {
                cells.iter().filter(|&&v| v > 0.5 * p).count() as f32 / width
            } else {
                0.0
            };
            [p, mean, ratio, persistence[j], spread]
        })
        .collect();
    Ok(features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::LabelVector;
    use crate::teacher::lane::lane_mask;

    fn frame(map: RangeAzimuthMap, t: f64) -> Frame {
        let n = map.n_range();
        Frame {
            map,
            host_speed: 10.0,
            timestamp: t,
            ground_truth: LabelVector::zeros(n),
        }
    }

    fn small() -> RadarGeometry {
        RadarGeometry {
            n_range: 200,
            n_azimuth: 64,
            ..RadarGeometry::default()
        }
    }

    #[test]
    fn single_frame_history_is_identity() {
        let g = small();
        let mut map = RangeAzimuthMap::zeros(g.n_range, g.n_azimuth);
        for (i, v) in map.data_mut().iter_mut().enumerate() {
            *v = (i % 17) as f32 * 0.5;
        }
        let f = frame(map.clone(), 3.0);
        let acc = interpolate_accumulate(&[&f], &g, 12.0, 5.0).unwrap();
        assert_eq!(acc, map);
    }

    #[test]
    fn approaching_impulses_stack() {
        // one bin per frame: speed · dt = rangeResolution
        let g = small();
        let dt = 0.065;
        let speed = (g.range_resolution as f64 / dt) as f32;
        let k = 4;
        let frames: Vec<Frame> = (0..k)
            .map(|i| {
                let age = k - 1 - i;
                let mut m = RangeAzimuthMap::zeros(g.n_range, g.n_azimuth);
                m.set(100 + age, 32, 8.0);
                frame(m, i as f64 * dt)
            })
            .collect();
        let refs: Vec<&Frame> = frames.iter().collect();
        let aligned = align_history(&refs, speed, &g).unwrap();
        for a in &aligned {
            assert!((a.get(100, 32) - 8.0).abs() < 1e-3);
        }
        let acc = interpolate_accumulate(&refs, &g, speed, 5.0).unwrap();
        // averaged: the K stacked contributions of 8/K each sum to the single-frame value
        assert!((acc.get(100, 32) - 8.0).abs() < 1e-3);
        assert!(acc.get(101, 32) < 1e-2);
    }

    #[test]
    fn fractional_shift_interpolates() {
        let g = small();
        let mut m = RangeAzimuthMap::zeros(g.n_range, g.n_azimuth);
        m.set(50, 3, 4.0);
        let mut out = vec![0.0; g.map_len()];
        shift_range(&m, 0.25, &mut out);
        assert!((out[49 * g.n_azimuth + 3] - 1.0).abs() < 1e-6);
        assert!((out[50 * g.n_azimuth + 3] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn below_critical_speed_is_rejected() {
        let g = small();
        let f = frame(RangeAzimuthMap::zeros(g.n_range, g.n_azimuth), 0.0);
        assert!(matches!(
            interpolate_accumulate(&[&f], &g, 4.9, 5.0),
            Err(Error::BelowCriticalSpeed { .. })
        ));
    }

    #[test]
    fn zero_map_gives_zero_features() {
        let g = small();
        let mask = lane_mask(&g);
        let acc = RangeAzimuthMap::zeros(g.n_range, g.n_azimuth);
        let pers = temporal_persistence(std::slice::from_ref(&acc), &mask, &CfarParams::default());
        let f = extract_features(&acc, &mask, &pers, &CfarParams::default()).unwrap();
        assert!(f.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn cfar_ratio_of_impulse_over_unit_floor() {
        let g = small();
        let mask = lane_mask(&g);
        let mut acc = RangeAzimuthMap::from_vec(g.n_range, g.n_azimuth, vec![1.0; g.map_len()]).unwrap();
        let centre = g.n_azimuth / 2;
        acc.set(120, centre, 10.0);
        let pers = vec![0.0; g.n_range];
        let f = extract_features(&acc, &mask, &pers, &CfarParams::default()).unwrap();
        assert!((f[120][2] - 10.0).abs() < 1e-5);
        assert_eq!(f[120][0], 10.0);
        assert!((f[60][2] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn out_of_lane_impulse_does_not_change_features() {
        let g = small();
        let mask = lane_mask(&g);
        let base = RangeAzimuthMap::from_vec(g.n_range, g.n_azimuth, vec![1.0; g.map_len()]).unwrap();
        let mut poked = base.clone();
        let (lo, _) = mask.interval(120).unwrap();
        assert!(lo > 0);
        poked.set(120, 0, 50.0);
        let pers = vec![0.0; g.n_range];
        let cfar = CfarParams::default();
        assert_eq!(
            extract_features(&base, &mask, &pers, &cfar).unwrap(),
            extract_features(&poked, &mask, &pers, &cfar).unwrap()
        );
    }

    #[test]
    fn persistence_counts_cfar_hits() {
        let g = small();
        let mask = lane_mask(&g);
        let centre = g.n_azimuth / 2;
        let mut hit = RangeAzimuthMap::from_vec(g.n_range, g.n_azimuth, vec![1.0; g.map_len()]).unwrap();
        hit.set(90, centre, 5.0);
        let miss = RangeAzimuthMap::from_vec(g.n_range, g.n_azimuth, vec![1.0; g.map_len()]).unwrap();
        let p = temporal_persistence(&[hit.clone(), miss, hit], &mask, &CfarParams::default());
        assert!((p[90] - 2.0 / 3.0).abs() < 1e-6);
        assert_eq!(p[80], 0.0);
    }

    #[test]
    fn noise_estimate_skips_guard_cells() {
        let cfar = CfarParams {
            guard_cells: 1,
            train_cells: 2,
            offset_db: 0.0,
        };
        let profile = [1.0, 2.0, 3.0, 100.0, 5.0, 6.0, 7.0];
        let n = cfar.noise_estimate(&profile);
        // bin 3: lagging cells {0, 1}, leading cells {5, 6}
        assert!((n[3] - (1.0 + 2.0 + 6.0 + 7.0) / 4.0).abs() < 1e-6);
        // bin 0: leading only {2, 3} → 3, 100
        assert!((n[0] - 51.5).abs() < 1e-6);
    }
}
