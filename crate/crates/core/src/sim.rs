//! Synthetic drives: range-azimuth maps of a host vehicle approaching
//! stationary debris, with out-of-lane clutter and a Rayleigh noise floor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Weibull};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;

pub const DEFAULT_RANGE_BINS: usize = 464;
pub const DEFAULT_AZIMUTH_BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct RadarGeometry {
    pub n_range: usize,
    pub n_azimuth: usize,
    /// Meters per range bin.
    pub range_resolution: f32,
    /// Total azimuth field of view.
    pub fov_degrees: f32,
    pub lane_half_width: f32,
}

impl Default for RadarGeometry {
    fn default() -> Self {
        Self {
            n_range: DEFAULT_RANGE_BINS,
            n_azimuth: DEFAULT_AZIMUTH_BINS,
            range_resolution: 0.65,
            fov_degrees: 90.0,
            lane_half_width: 1.75,
        }
    }
}

impl RadarGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.n_range < 2 || self.n_azimuth < 2 {
            return Err(Error::Config(format!(
                "geometry needs at least 2×2 bins, got {}×{}",
                self.n_range, self.n_azimuth
            )));
        }
        if !(self.range_resolution > 0.0) || !self.range_resolution.is_finite() {
            return Err(Error::Config("rangeResolution must be > 0".into()));
        }
        if !(self.fov_degrees > 0.0 && self.fov_degrees <= 180.0) {
            return Err(Error::Config("fovDegrees must be in (0, 180]".into()));
        }
        if !(self.lane_half_width > 0.0) || !self.lane_half_width.is_finite() {
            return Err(Error::Config("laneHalfWidth must be > 0".into()));
        }
        Ok(())
    }

    pub fn max_range(&self) -> f64 {
        self.n_range as f64 * self.range_resolution as f64
    }

    /// Azimuth grid spacing in radians.
    pub fn azimuth_step(&self) -> f64 {
        (self.fov_degrees as f64).to_radians() / (self.n_azimuth - 1) as f64
    }

    /// Angle of azimuth bin `m`; positive angles are to the left.
    pub fn azimuth_angle(&self, m: usize) -> f64 {
        (m as f64 - (self.n_azimuth - 1) as f64 / 2.0) * self.azimuth_step()
    }

    /// Range at the center of bin `j` under the lane-mask convention.
    pub fn bin_center_range(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.range_resolution as f64
    }

    pub fn map_len(&self) -> usize {
        self.n_range * self.n_azimuth
    }
}

/// Fractional `(range_bin, azimuth_bin)` of a point, or `None` when it lies
/// outside the azimuth field of view.
pub fn polar_of(geometry: &RadarGeometry, down_range: f64, cross_range: f64) -> Result<Option<(f64, f64)>> {
    if !(down_range > 0.0) {
        return Err(Error::Config(format!("downRange must be > 0, got {down_range}")));
    }
    let r = down_range.hypot(cross_range);
    let theta = cross_range.atan2(down_range);
    let half_fov = (geometry.fov_degrees as f64).to_radians() / 2.0;
    if theta.abs() > half_fov * (1.0 + 1e-12) {
        return Ok(None);
    }
    let az = (theta + half_fov) / (2.0 * half_fov) * (geometry.n_azimuth - 1) as f64;
    Ok(Some((r / geometry.range_resolution as f64, az)))
}

/// One radar frame: `n_range × n_azimuth` magnitudes, row-major by range.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeAzimuthMap {
    n_range: usize,
    n_azimuth: usize,
    data: Vec<f32>,
}

impl RangeAzimuthMap {
    pub fn zeros(n_range: usize, n_azimuth: usize) -> Self {
        Self {
            n_range,
            n_azimuth,
            data: vec![0.0; n_range * n_azimuth],
        }
    }

    pub fn from_vec(n_range: usize, n_azimuth: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != n_range * n_azimuth {
            return Err(Error::Shape(format!(
                "map {}×{} needs {} values, got {}",
                n_range,
                n_azimuth,
                n_range * n_azimuth,
                data.len()
            )));
        }
        Ok(Self {
            n_range,
            n_azimuth,
            data,
        })
    }

    pub fn n_range(&self) -> usize {
        self.n_range
    }

    pub fn n_azimuth(&self) -> usize {
        self.n_azimuth
    }

    #[inline]
    pub fn get(&self, range_bin: usize, azimuth_bin: usize) -> f32 {
        self.data[range_bin * self.n_azimuth + azimuth_bin]
    }

    #[inline]
    pub fn set(&mut self, range_bin: usize, azimuth_bin: usize, v: f32) {
        self.data[range_bin * self.n_azimuth + azimuth_bin] = v;
    }

    pub fn row(&self, range_bin: usize) -> &[f32] {
        &self.data[range_bin * self.n_azimuth..(range_bin + 1) * self.n_azimuth]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
}

/// Per-range-bin binary in-lane detection decision.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelVector(Vec<bool>);

impl LabelVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn from_bins(n: usize, positives: &[usize]) -> Self {
        let mut v = vec![false; n];
        for &j in positives {
            v[j] = true;
        }
        Self(v)
    }

    pub fn from_bools(bins: Vec<bool>) -> Self {
        Self(bins)
    }

    /// Thresholds probabilities with `p >= threshold`.
    pub fn from_scores(scores: &[f32], threshold: f32) -> Self {
        Self(scores.iter().map(|&p| p >= threshold).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn set(&mut self, j: usize, v: bool) {
        self.0[j] = v;
    }

    pub fn bins(&self) -> &[bool] {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }

    pub fn positives(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub map: RangeAzimuthMap,
    /// m/s
    pub host_speed: f32,
    /// seconds since the start of the drive
    pub timestamp: f64,
    pub ground_truth: LabelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    pub geometry: RadarGeometry,
    pub frames: Vec<Frame>,
    pub frame_interval: f32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Debris,
    Guardrail,
    Signpost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct SceneObject {
    pub down_range: f32,
    /// Lateral offset, positive to the left.
    pub cross_range: f32,
    pub rcs: f32,
    pub extent_range: f32,
    pub extent_cross: f32,
    pub kind: ObjectKind,
}

impl SceneObject {
    pub fn debris(down_range: f32, cross_range: f32, rcs: f32) -> Self {
        Self {
            down_range,
            cross_range,
            rcs,
            extent_range: 0.5,
            extent_cross: 0.5,
            kind: ObjectKind::Debris,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rcs >= 0.0) || !(self.extent_range > 0.0) || !(self.extent_cross > 0.0) {
            return Err(Error::Config(format!(
                "scene object needs rcs >= 0 and positive extents: {self:?}"
            )));
        }
        if !self.down_range.is_finite() || !self.cross_range.is_finite() {
            return Err(Error::Config("scene object position must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct NoiseParams {
    /// Rayleigh scale σ of the noise floor; 0 disables noise.
    pub rayleigh_scale: f32,
    /// Range at which an object's peak magnitude equals its rcs.
    pub reference_range: f32,
    /// Minimum azimuth spread (Gaussian σ, bins) of a point reflector.
    pub beam_sigma_bins: f32,
    /// Minimum range spread (Gaussian σ, bins) of a point reflector.
    pub range_sigma_bins: f32,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            rayleigh_scale: 1.0,
            reference_range: 300.0,
            beam_sigma_bins: 0.8,
            range_sigma_bins: 0.5,
        }
    }
}

impl NoiseParams {
    fn validate(&self) -> Result<()> {
        if !(self.rayleigh_scale >= 0.0)
            || !(self.reference_range > 0.0)
            || !(self.beam_sigma_bins > 0.0)
            || !(self.range_sigma_bins > 0.0)
        {
            return Err(Error::Config(format!("invalid noise parameters: {self:?}")));
        }
        Ok(())
    }
}

/// Host speed `v(t) = clamp(initial + acceleration·t, 0, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct SpeedProfile {
    pub initial: f32,
    pub acceleration: f32,
    pub max: f32,
}

impl Default for SpeedProfile {
    fn default() -> Self {
        Self {
            initial: 20.0,
            acceleration: 0.0,
            max: 40.0,
        }
    }
}

impl SpeedProfile {
    pub fn constant(speed: f32) -> Self {
        Self {
            initial: speed,
            acceleration: 0.0,
            max: speed.max(0.0),
        }
    }

    pub fn at(&self, t: f64) -> f32 {
        ((self.initial as f64 + self.acceleration as f64 * t).clamp(0.0, self.max as f64)) as f32
    }

    fn validate(&self) -> Result<()> {
        if !(self.initial >= 0.0) || !(self.max >= 0.0) || !self.acceleration.is_finite() {
            return Err(Error::Config(format!("invalid speed profile: {self:?}")));
        }
        Ok(())
    }
}

/// A row of identical reflectors at a fixed lateral offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
pub struct ClutterRow {
    pub kind: ObjectKind,
    pub cross_range: f32,
    pub spacing: f32,
    /// Down-range of the first reflector.
    pub start: f32,
    pub rcs: f32,
    pub extent: f32,
}

impl ClutterRow {
    fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) || !(self.rcs >= 0.0) || !(self.extent > 0.0) {
            return Err(Error::Config(format!("invalid clutter row: {self:?}")));
        }
        Ok(())
    }

    fn objects(&self, until: f32) -> impl Iterator<Item = SceneObject> + '_ {
        let n = ((until - self.start) / self.spacing).max(0.0).ceil() as usize + 1;
        (0..n).map(move |i| SceneObject {
            down_range: self.start + i as f32 * self.spacing,
            cross_range: self.cross_range,
            rcs: self.rcs,
            extent_range: self.extent,
            extent_cross: self.extent,
            kind: self.kind,
        })
    }
}

/// Per-seed randomisation of the scene: one in-lane target, optional
/// out-of-lane distractors, roadside clutter, and a speed profile drawn from a
/// slow-start or cruising regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct ScenarioSpec {
    pub target_range: (f32, f32),
    /// Bound on |crossRange| of the in-lane target.
    pub target_cross: f32,
    pub target_rcs: (f32, f32),
    pub extent_range: (f32, f32),
    pub extent_cross: (f32, f32),
    pub max_distractors: u32,
    /// |crossRange| interval of out-of-lane debris.
    pub distractor_cross: (f32, f32),
    pub distractor_rcs: (f32, f32),
    pub slow_start_probability: f32,
    pub slow_start_speed: (f32, f32),
    pub slow_start_acceleration: (f32, f32),
    pub cruise_speed: (f32, f32),
    pub cruise_acceleration: (f32, f32),
    pub max_speed: f32,
    pub guardrail_probability: f32,
    pub guardrail_cross: (f32, f32),
    pub guardrail_spacing: f32,
    pub guardrail_rcs: f32,
    pub signpost_cross: (f32, f32),
    pub signpost_spacing: (f32, f32),
    pub signpost_rcs: f32,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            target_range: (30.0, 290.0),
            target_cross: 1.2,
            target_rcs: (6.0, 12.0),
            extent_range: (0.2, 0.65),
            extent_cross: (0.3, 1.2),
            max_distractors: 2,
            distractor_cross: (3.5, 7.0),
            distractor_rcs: (4.0, 12.0),
            slow_start_probability: 0.35,
            slow_start_speed: (0.0, 2.0),
            slow_start_acceleration: (1.5, 3.5),
            cruise_speed: (8.0, 30.0),
            cruise_acceleration: (-1.0, 1.0),
            max_speed: 33.0,
            guardrail_probability: 0.7,
            guardrail_cross: (4.0, 6.0),
            guardrail_spacing: 4.0,
            guardrail_rcs: 0.6,
            signpost_cross: (6.0, 9.0),
            signpost_spacing: (40.0, 80.0),
            signpost_rcs: 5.0,
        }
    }
}

fn check_interval(name: &str, (lo, hi): (f32, f32)) -> Result<()> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("{name}: invalid interval ({lo}, {hi})")));
    }
    Ok(())
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f32, f32)) -> f32 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn side(rng: &mut ChaCha8Rng) -> f32 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

impl ScenarioSpec {
    fn validate(&self) -> Result<()> {
        for (name, iv) in [
            ("targetRange", self.target_range),
            ("targetRcs", self.target_rcs),
            ("extentRange", self.extent_range),
            ("extentCross", self.extent_cross),
            ("distractorCross", self.distractor_cross),
            ("distractorRcs", self.distractor_rcs),
            ("slowStartSpeed", self.slow_start_speed),
            ("slowStartAcceleration", self.slow_start_acceleration),
            ("cruiseSpeed", self.cruise_speed),
            ("cruiseAcceleration", self.cruise_acceleration),
            ("guardrailCross", self.guardrail_cross),
            ("signpostCross", self.signpost_cross),
            ("signpostSpacing", self.signpost_spacing),
        ] {
            check_interval(name, iv)?;
        }
        if self.target_range.0 <= 0.0 || self.extent_range.0 <= 0.0 || self.extent_cross.0 <= 0.0 {
            return Err(Error::Config("scenario ranges and extents must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.slow_start_probability) || !(0.0..=1.0).contains(&self.guardrail_probability) {
            return Err(Error::Config("scenario probabilities must be in [0, 1]".into()));
        }
        if !(self.guardrail_spacing > 0.0) || self.signpost_spacing.0 <= 0.0 {
            return Err(Error::Config("clutter spacing must be positive".into()));
        }
        Ok(())
    }

    fn realise(&self, rng: &mut ChaCha8Rng) -> (SpeedProfile, Vec<SceneObject>, Vec<ClutterRow>) {
        let speed = if rng.random_bool(self.slow_start_probability as f64) {
            SpeedProfile {
                initial: draw(rng, self.slow_start_speed),
                acceleration: draw(rng, self.slow_start_acceleration),
                max: self.max_speed,
            }
        } else {
            SpeedProfile {
                initial: draw(rng, self.cruise_speed),
                acceleration: draw(rng, self.cruise_acceleration),
                max: self.max_speed,
            }
        };
        let mut objects = vec![SceneObject {
            down_range: draw(rng, self.target_range),
            cross_range: draw(rng, (-self.target_cross, self.target_cross)),
            rcs: draw(rng, self.target_rcs),
            extent_range: draw(rng, self.extent_range),
            extent_cross: draw(rng, self.extent_cross),
            kind: ObjectKind::Debris,
        }];
        let n_distractors = rng.random_range(0..=self.max_distractors);
        for _ in 0..n_distractors {
            let cross = side(rng) * draw(rng, self.distractor_cross);
            objects.push(SceneObject {
                down_range: draw(rng, self.target_range),
                cross_range: cross,
                rcs: draw(rng, self.distractor_rcs),
                extent_range: draw(rng, self.extent_range),
                extent_cross: draw(rng, self.extent_cross),
                kind: ObjectKind::Debris,
            });
        }
        let mut rows = Vec::new();
        if rng.random_bool(self.guardrail_probability as f64) {
            let cross = side(rng) * draw(rng, self.guardrail_cross);
            rows.push(ClutterRow {
                kind: ObjectKind::Guardrail,
                cross_range: cross,
                spacing: self.guardrail_spacing,
                start: draw(rng, (1.0, 1.0 + self.guardrail_spacing)),
                rcs: self.guardrail_rcs,
                extent: 0.2,
            });
        }
        let spacing = draw(rng, self.signpost_spacing);
        rows.push(ClutterRow {
            kind: ObjectKind::Signpost,
            cross_range: side(rng) * draw(rng, self.signpost_cross),
            spacing,
            start: draw(rng, (5.0, 5.0 + spacing)),
            rcs: self.signpost_rcs,
            extent: 0.3,
        });
        (speed, objects, rows)
    }
}

/// Everything needed to generate one drive; read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "camelCase")]
pub struct DriveSpec {
    pub geometry: RadarGeometry,
    pub n_frames: usize,
    /// seconds
    pub frame_interval: f32,
    pub noise: NoiseParams,
    pub speed: SpeedProfile,
    /// Objects at their frame-0 positions.
    pub objects: Vec<SceneObject>,
    pub clutter: Vec<ClutterRow>,
    /// When present, a randomised scene is drawn from the seed and added.
    pub scenario: Option<ScenarioSpec>,
    pub seed: u64,
}

impl Default for DriveSpec {
    fn default() -> Self {
        Self {
            geometry: RadarGeometry::default(),
            n_frames: 90,
            frame_interval: 0.065,
            noise: NoiseParams::default(),
            speed: SpeedProfile::default(),
            objects: Vec::new(),
            clutter: Vec::new(),
            scenario: None,
            seed: 0,
        }
    }
}

impl DriveSpec {
    /// The randomised scenario used for the default synthetic dataset.
    pub fn default_scenario() -> Self {
        Self {
            scenario: Some(ScenarioSpec::default()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.noise.validate()?;
        self.speed.validate()?;
        if !(self.frame_interval > 0.0) || !self.frame_interval.is_finite() {
            return Err(Error::Config("frameInterval must be > 0".into()));
        }
        for o in &self.objects {
            o.validate()?;
        }
        for c in &self.clutter {
            c.validate()?;
        }
        if let Some(s) = &self.scenario {
            s.validate()?;
        }
        Ok(())
    }
}

/// Result of rendering one frame.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub frame: Frame,
    /// Objects skipped because they were behind the host, beyond the last
    /// range bin, or outside the field of view.
    pub skipped: usize,
}

fn gaussian_window(center: f64, sigma: f64, n: usize) -> (usize, Vec<f32>) {
    let lo = (center - 3.0 * sigma).floor().max(0.0) as usize;
    let hi = ((center + 3.0 * sigma).ceil() as isize).min(n as isize - 1);
    if hi < lo as isize {
        return (0, Vec::new());
    }
    let w = (lo..=hi as usize)
        .map(|i| {
            let d = (i as f64 - center) / sigma;
            (-0.5 * d * d).exp() as f32
        })
        .collect();
    (lo, w)
}

/// Renders objects and noise into one frame.
pub fn render_frame(
    geometry: &RadarGeometry,
    objects: &[SceneObject],
    host_speed: f32,
    noise: &NoiseParams,
    rng: &mut impl Rng,
) -> Result<Rendered> {
    let mut map = RangeAzimuthMap::zeros(geometry.n_range, geometry.n_azimuth);
    let mut truth = LabelVector::zeros(geometry.n_range);
    let mut skipped = 0;
    let res = geometry.range_resolution as f64;
    for obj in objects {
        if obj.down_range <= 0.0 {
            skipped += 1;
            continue;
        }
        let Some((rb, ab)) = polar_of(geometry, obj.down_range as f64, obj.cross_range as f64)? else {
            skipped += 1;
            continue;
        };
        if rb > (geometry.n_range - 1) as f64 {
            skipped += 1;
            continue;
        }
        let r = rb * res;
        let amplitude = obj.rcs as f64 * (noise.reference_range as f64 / r).powi(2);
        let ext_r_bins = obj.extent_range as f64 / res;
        let sigma_r = (noise.range_sigma_bins as f64).hypot(ext_r_bins / 12f64.sqrt());
        let ext_a_bins = (obj.extent_cross as f64 / r) / geometry.azimuth_step();
        let sigma_a = (noise.beam_sigma_bins as f64).hypot(ext_a_bins / 12f64.sqrt());
        let (r0, wr) = gaussian_window(rb, sigma_r, geometry.n_range);
        let (a0, wa) = gaussian_window(ab, sigma_a, geometry.n_azimuth);
        for (dj, &fr) in wr.iter().enumerate() {
            for (dm, &fa) in wa.iter().enumerate() {
                let j = r0 + dj;
                let m = a0 + dm;
                let v = map.get(j, m) + (amplitude as f32) * fr * fa;
                map.set(j, m, v);
            }
        }
        if obj.kind == ObjectKind::Debris && obj.cross_range.abs() <= geometry.lane_half_width {
            let half = ext_r_bins / 2.0;
            let center = rb.round() as usize;
            truth.set(center, true);
            let lo = (rb - half).ceil().max(0.0) as usize;
            let hi = ((rb + half).floor() as usize).min(geometry.n_range - 1);
            for j in lo..=hi.max(lo) {
                if (j as f64 - rb).abs() <= half {
                    truth.set(j, true);
                }
            }
        }
    }
    if noise.rayleigh_scale > 0.0 {
        // Rayleigh(σ) is Weibull with shape 2 and scale σ√2.
        let dist = Weibull::new(noise.rayleigh_scale * std::f32::consts::SQRT_2, 2.0)
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        for v in map.data_mut() {
            *v += dist.sample(rng);
        }
    }
    Ok(Rendered {
        frame: Frame {
            map,
            host_speed,
            timestamp: 0.0,
            ground_truth: truth,
        },
        skipped,
    })
}

/// Per-frame RNG substream so frames can be rendered independently.
pub fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 + 1);
    rng
}

/// Scene layout and kinematics of a drive, before rendering.
#[derive(Debug, Clone)]
pub struct DrivePlan {
    pub speeds: Vec<f32>,
    /// Host distance travelled at the start of each frame.
    pub travelled: Vec<f32>,
    pub objects: Vec<SceneObject>,
}

impl DrivePlan {
    pub fn objects_at(&self, frame: usize) -> Vec<SceneObject> {
        let d = self.travelled[frame];
        self.objects
            .iter()
            .map(|o| SceneObject {
                down_range: o.down_range - d,
                ..*o
            })
            .collect()
    }
}

pub fn plan_drive(spec: &DriveSpec, seed: u64) -> Result<DrivePlan> {
    spec.validate()?;
    let mut objects = spec.objects.clone();
    let mut rows = spec.clutter.clone();
    let mut speed = spec.speed;
    if let Some(scenario) = &spec.scenario {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, objs, clutter) = scenario.realise(&mut rng);
        speed = s;
        objects.extend(objs);
        rows.extend(clutter);
    }
    let dt = spec.frame_interval;
    let mut speeds = Vec::with_capacity(spec.n_frames);
    let mut travelled = Vec::with_capacity(spec.n_frames);
    let mut d = 0.0f32;
    for f in 0..spec.n_frames {
        let v = speed.at(f as f64 * dt as f64);
        speeds.push(v);
        travelled.push(d);
        d += v * dt;
    }
    let until = spec.geometry.max_range() as f32 + d;
    for row in &rows {
        objects.extend(row.objects(until));
    }
    Ok(DrivePlan {
        speeds,
        travelled,
        objects,
    })
}

/// Generates a drive; identical `(spec, seed)` pairs give identical drives.
pub fn generate_drive(spec: &DriveSpec, seed: u64) -> Result<Drive> {
    generate_drive_with(spec, seed, Exec::default())
}

pub fn generate_drive_with(spec: &DriveSpec, seed: u64, exec: Exec) -> Result<Drive> {
    let plan = plan_drive(spec, seed)?;
    let frames = exec.try_map_range(spec.n_frames, |f| -> Result<Frame> {
        let mut rng = frame_rng(seed, f);
        let objects = plan.objects_at(f);
        let mut r = render_frame(&spec.geometry, &objects, plan.speeds[f], &spec.noise, &mut rng)?;
        r.frame.timestamp = f as f64 * spec.frame_interval as f64;
        Ok(r.frame)
    })?;
    Ok(Drive {
        geometry: spec.geometry,
        frames,
        frame_interval: spec.frame_interval,
        seed,
    })
}

/// Generates one drive per seed.
pub fn generate_drives(spec: &DriveSpec, seeds: &[u64], exec: Exec) -> Result<Vec<Drive>> {
    // Frames inside each drive run sequentially; the fan-out is across seeds.
    exec.try_map(seeds, |&s| generate_drive_with(spec, s, Exec::Sequential))
}
