use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::sim::RadarGeometry;

/// Cells of the range-azimuth grid inside the ego lane.
///
/// A cell `(j, m)` is in-lane when `|range(j) · sin θ(m)| ≤ laneHalfWidth`,
/// with `range(j) = (j + 0.5) · rangeResolution`. For each range bin the
/// in-lane cells form one contiguous azimuth interval around boresight.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneMask {
    n_range: usize,
    n_azimuth: usize,
    cells: Vec<bool>,
    intervals: Vec<Option<(usize, usize)>>,
}

impl LaneMask {
    pub fn new(geometry: &RadarGeometry) -> Self {
        let (nr, na) = (geometry.n_range, geometry.n_azimuth);
        let half = geometry.lane_half_width as f64;
        let mut cells = vec![false; nr * na];
        let mut intervals = Vec::with_capacity(nr);
        for j in 0..nr {
            let r = geometry.bin_center_range(j);
            let mut lo = None;
            let mut hi = 0;
            for m in 0..na {
                if (r * geometry.azimuth_angle(m).sin()).abs() <= half {
                    cells[j * na + m] = true;
                    lo.get_or_insert(m);
                    hi = m;
                }
            }
            intervals.push(lo.map(|lo| (lo, hi)));
        }
        Self {
            n_range: nr,
            n_azimuth: na,
            cells,
            intervals,
        }
    }

    pub fn n_range(&self) -> usize {
        self.n_range
    }

    pub fn n_azimuth(&self) -> usize {
        self.n_azimuth
    }

    pub fn contains(&self, range_bin: usize, azimuth_bin: usize) -> bool {
        self.cells[range_bin * self.n_azimuth + azimuth_bin]
    }

    /// Inclusive azimuth interval of in-lane cells at a range bin.
    pub fn interval(&self, range_bin: usize) -> Option<(usize, usize)> {
        self.intervals[range_bin]
    }

    pub fn width(&self, range_bin: usize) -> usize {
        self.intervals[range_bin].map_or(0, |(lo, hi)| hi - lo + 1)
    }
}

fn key(g: &RadarGeometry) -> (usize, usize, u32, u32, u32) {
    (
        g.n_range,
        g.n_azimuth,
        g.range_resolution.to_bits(),
        g.fov_degrees.to_bits(),
        g.lane_half_width.to_bits(),
    )
}

type Cache = Mutex<HashMap<(usize, usize, u32, u32, u32), Arc<LaneMask>>>;

/// Lane mask for a geometry, built once and shared.
pub fn lane_mask(geometry: &RadarGeometry) -> Arc<LaneMask> {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
    guard
        .entry(key(geometry))
        .or_insert_with(|| Arc::new(LaneMask::new(geometry)))
        .clone()
}
