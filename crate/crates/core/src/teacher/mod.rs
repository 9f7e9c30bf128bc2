//! The block-by-block hybrid teacher: ego-lane masking, speed-driven
//! alignment and accumulation of the last K frames, per-range-bin feature
//! extraction, an MLP scorer, and run-merging post-processing.
//!
//! The teacher abstains (returns `None`) while its history is not yet full
//! and whenever the host is slower than the critical speed.

mod features;
mod lane;
mod mlp;
mod training;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::sim::{Drive, Frame, LabelVector, RadarGeometry};

pub use features::{
    align_history, extract_features, in_lane_peak, interpolate_accumulate, shift_range, temporal_persistence,
    CfarParams, FeatureVector, N_FEATURES,
};
pub use lane::{lane_mask, LaneMask};
pub use mlp::{mlp_input, Mlp};
pub use training::{feature_rows, fit_teacher_mlp, train_teacher_mlp, FeatureRows, TeacherEpoch, TeacherTrainConfig};

/// Scalar teacher settings; serialised as JSON next to the MLP weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct TeacherConfig {
    /// Number of frames K aligned and accumulated per decision.
    pub accumulation_depth: usize,
    /// Critical host speed in m/s below which the teacher abstains.
    pub min_speed: f32,
    pub cfar: CfarParams,
    pub decision_threshold: f32,
    /// Near-field blind zone in meters: bins centred closer than this always
    /// score 0. Roadside clutter a few meters away is bright enough and wide
    /// enough in azimuth to leak into every in-lane cell.
    pub min_range: f32,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            accumulation_depth: 8,
            min_speed: 5.0,
            cfar: CfarParams::default(),
            decision_threshold: 0.5,
            min_range: 8.0,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accumulation_depth == 0 {
            return Err(Error::Config("accumulationDepth must be >= 1".into()));
        }
        if !(self.min_speed >= 0.0) {
            return Err(Error::Config("minSpeed must be >= 0".into()));
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return Err(Error::Config("decisionThreshold must be in (0, 1)".into()));
        }
        if !(self.min_range >= 0.0) || !self.min_range.is_finite() {
            return Err(Error::Config("minRange must be a finite distance >= 0".into()));
        }
        if self.cfar.train_cells == 0 || !self.cfar.offset_db.is_finite() {
            return Err(Error::Config("cfar needs trainCells >= 1 and a finite offset".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherParams {
    pub config: TeacherConfig,
    pub mlp: Mlp,
}

/// Per-bin sigmoid probabilities from the MLP.
pub fn teacher_score(features: &[FeatureVector], mlp: &Mlp) -> Vec<f32> {
    features.iter().map(|f| mlp.score(f)).collect()
}

/// Thresholds scores and keeps only the nearest-range bin of each run of
/// adjacent positives.
pub fn postprocess(scores: &[f32], threshold: f32) -> LabelVector {
    let mut out = LabelVector::zeros(scores.len());
    let mut prev = false;
    for (j, &p) in scores.iter().enumerate() {
        let on = p >= threshold;
        if on && !prev {
            out.set(j, true);
        }
        prev = on;
    }
    out
}

/// A teacher bound to one radar geometry.
#[derive(Debug, Clone)]
pub struct Teacher {
    params: TeacherParams,
    geometry: RadarGeometry,
    mask: Arc<LaneMask>,
    first_bin: usize,
}

impl Teacher {
    pub fn new(params: TeacherParams, geometry: RadarGeometry) -> Result<Self> {
        params.config.validate()?;
        geometry.validate()?;
        let first_bin = (0..geometry.n_range)
            .find(|&j| geometry.bin_center_range(j) >= params.config.min_range as f64)
            .unwrap_or(geometry.n_range);
        Ok(Self {
            mask: lane_mask(&geometry),
            first_bin,
            params,
            geometry,
        })
    }

    pub fn params(&self) -> &TeacherParams {
        &self.params
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.params.config
    }

    pub fn geometry(&self) -> &RadarGeometry {
        &self.geometry
    }

    pub fn mask(&self) -> &LaneMask {
        &self.mask
    }

    /// Features for the newest frame of `history` (oldest first, length K).
    pub fn features(&self, history: &[&Frame]) -> Result<Vec<FeatureVector>> {
        let k = self.params.config.accumulation_depth;
        if history.len() != k {
            return Err(Error::Config(format!(
                "teacher history holds {} frames, expected {k}",
                history.len()
            )));
        }
        let speed = history[k - 1].host_speed;
        let min = self.params.config.min_speed;
        if speed < min {
            return Err(Error::BelowCriticalSpeed { speed, min });
        }
        let aligned = align_history(history, speed, &self.geometry)?;
        let persistence = temporal_persistence(&aligned, &self.mask, &self.params.config.cfar);
        let mut acc = aligned.into_iter();
        let mut sum = acc.next().expect("k >= 1");
        for m in acc {
            for (a, &v) in sum.data_mut().iter_mut().zip(m.data()) {
                *a += v;
            }
        }
        let inv = 1.0 / k as f32;
        sum.data_mut().iter_mut().for_each(|v| *v *= inv);
        extract_features(&sum, &self.mask, &persistence, &self.params.config.cfar)
    }

    pub fn scores(&self, history: &[&Frame]) -> Result<Vec<f32>> {
        let mut s = teacher_score(&self.features(history)?, &self.params.mlp);
        s[..self.first_bin].iter_mut().for_each(|p| *p = 0.0);
        Ok(s)
    }

    /// First range bin outside the near-field blind zone.
    pub fn first_bin(&self) -> usize {
        self.first_bin
    }

    /// Label for the newest frame of `history`, or `None` when the teacher
    /// abstains.
    pub fn process(&self, history: &[&Frame]) -> Result<Option<LabelVector>> {
        match self.scores(history) {
            Ok(s) => Ok(Some(postprocess(&s, self.params.config.decision_threshold))),
            Err(Error::BelowCriticalSpeed { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn history<'a>(&self, drive: &'a Drive, i: usize) -> Option<Vec<&'a Frame>> {
        let k = self.params.config.accumulation_depth;
        if i + 1 < k {
            return None;
        }
        Some(drive.frames[i + 1 - k..=i].iter().collect())
    }

    /// Per-frame scores; `None` where the teacher abstains.
    pub fn score_drive(&self, drive: &Drive, exec: Exec) -> Result<Vec<Option<Vec<f32>>>> {
        self.check_drive(drive)?;
        exec.try_map_range(drive.frames.len(), |i| match self.history(drive, i) {
            None => Ok(None),
            Some(h) => match self.scores(&h) {
                Ok(s) => Ok(Some(s)),
                Err(Error::BelowCriticalSpeed { .. }) => Ok(None),
                Err(e) => Err(e),
            },
        })
    }

    pub fn label_drive(&self, drive: &Drive, exec: Exec) -> Result<Vec<Option<LabelVector>>> {
        let threshold = self.params.config.decision_threshold;
        Ok(self
            .score_drive(drive, exec)?
            .into_iter()
            .map(|s| s.map(|s| postprocess(&s, threshold)))
            .collect())
    }

    fn check_drive(&self, drive: &Drive) -> Result<()> {
        if drive.geometry != self.geometry {
            return Err(Error::Config(
                "drive geometry differs from the teacher's geometry".into(),
            ));
        }
        Ok(())
    }
}

/// Labels every frame of a drive (`None` = teacher abstained).
pub fn teacher_label(drive: &Drive, params: &TeacherParams) -> Result<Vec<Option<LabelVector>>> {
    Teacher::new(params.clone(), drive.geometry)?.label_drive(drive, Exec::default())
}

/// Labels drives independently, fanning out across drives.
pub fn label_drives(teacher: &Teacher, drives: &[Drive], exec: Exec) -> Result<Vec<Vec<Option<LabelVector>>>> {
    exec.try_map(drives, |d| teacher.label_drive(d, Exec::Sequential))
}
