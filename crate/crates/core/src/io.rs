//! Flat little-endian binary formats for drives, teacher labels and model
//! weights, plus JSON configs and CSV histories.
//!
//! Every binary file ends in a CRC32 of all bytes before it. Readers check
//! magic, version and the exact file length implied by the header before
//! allocating anything, then the checksum, then field validity.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::nn::{Activation, Conv2dLayer, DenseLayer, Tensor};
use crate::sim::{Drive, Frame, LabelVector, RadarGeometry, RangeAzimuthMap};
use crate::student::{InputScaling, StudentModel};
use crate::teacher::{Mlp, TeacherConfig, TeacherParams};

pub const DRIVE_MAGIC: [u8; 8] = *b"RADKD1\0\0";
pub const LABELS_MAGIC: [u8; 8] = *b"RADKDL1\0";
pub const WEIGHTS_MAGIC: [u8; 8] = *b"RADKDW1\0";
pub const VERSION: u32 = 1;

const DRIVE_HEADER: u64 = 48;
const LABELS_HEADER: u64 = 20;
const CRC_LEN: u64 = 4;
// Caps applied before any size arithmetic.
const MAX_BINS: u32 = 1 << 16;
const MAX_FRAMES: u32 = 1 << 24;
const MAX_META: u32 = 1 << 20;
const MAX_LAYERS: u32 = 64;
const MAX_DIM: u32 = 1 << 16;

const KIND_TEACHER: u8 = 1;
const KIND_STUDENT: u8 = 2;

fn invalid(msg: impl Into<String>) -> Error {
    FormatError::Invalid(msg.into()).into()
}

fn overflow() -> Error {
    invalid("declared sizes overflow")
}

pub fn bitmap_len(n_bins: usize) -> usize {
    n_bins.div_ceil(8)
}

fn push_bitmap(out: &mut Vec<u8>, v: &LabelVector) {
    let mut bytes = vec![0u8; bitmap_len(v.len())];
    for j in v.positives() {
        bytes[j / 8] |= 1 << (j % 8);
    }
    out.extend_from_slice(&bytes);
}

fn parse_bitmap(bytes: &[u8], n: usize) -> Result<LabelVector> {
    let bins: Vec<bool> = (0..n).map(|j| bytes[j / 8] >> (j % 8) & 1 == 1).collect();
    if !n.is_multiple_of(8) && bytes[n / 8] >> (n % 8) != 0 {
        return Err(invalid("padding bits set in label bitmap"));
    }
    Ok(LabelVector::from_bools(bins))
}

/// Appends the CRC of everything written so far.
fn seal(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Verifies the trailing CRC; the caller has already checked the length.
fn check_crc(bytes: &[u8]) -> Result<&[u8]> {
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN as usize);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Crc { stored, computed }.into());
    }
    Ok(body)
}

fn check_len(expected: u64, actual: usize) -> Result<()> {
    if expected != actual as u64 {
        return Err(FormatError::Truncated {
            expected,
            actual: actual as u64,
        }
        .into());
    }
    Ok(())
}

/// Bounds-checked little-endian reader.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or_else(overflow)?;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated {
                expected: end as u64,
                actual: self.bytes.len() as u64,
            }
            .into());
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(overflow)?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        if &self.array::<8>()? != expected {
            return Err(FormatError::BadMagic.into());
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(FormatError::UnsupportedVersion(v).into());
        }
        Ok(())
    }
}

fn bounded(v: u32, max: u32, what: &str) -> Result<usize> {
    if v > max {
        return Err(invalid(format!("{what} {v} exceeds {max}")));
    }
    Ok(v as usize)
}

// ---------------------------------------------------------------- drives

fn frame_bytes(n_range: u64, n_azimuth: u64) -> Option<u64> {
    n_range
        .checked_mul(n_azimuth)?
        .checked_mul(4)?
        .checked_add(4 + 8)?
        .checked_add(n_range.div_ceil(8))
}

pub fn encode_drive(drive: &Drive) -> Result<Vec<u8>> {
    let g = &drive.geometry;
    let n = u32::try_from(drive.frames.len()).map_err(|_| overflow())?;
    let expected = frame_bytes(g.n_range as u64, g.n_azimuth as u64)
        .and_then(|f| f.checked_mul(n as u64))
        .ok_or_else(overflow)?;
    let mut out = Vec::with_capacity((DRIVE_HEADER + expected + CRC_LEN) as usize);
    out.extend_from_slice(&DRIVE_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&(g.n_range as u32).to_le_bytes());
    out.extend_from_slice(&(g.n_azimuth as u32).to_le_bytes());
    out.extend_from_slice(&g.range_resolution.to_le_bytes());
    out.extend_from_slice(&g.fov_degrees.to_le_bytes());
    out.extend_from_slice(&g.lane_half_width.to_le_bytes());
    out.extend_from_slice(&drive.frame_interval.to_le_bytes());
    out.extend_from_slice(&drive.seed.to_le_bytes());
    for f in &drive.frames {
        if f.map.n_range() != g.n_range || f.map.n_azimuth() != g.n_azimuth || f.ground_truth.len() != g.n_range {
            return Err(Error::Shape("frame does not match the drive geometry".into()));
        }
        for v in f.map.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&f.host_speed.to_le_bytes());
        out.extend_from_slice(&f.timestamp.to_le_bytes());
        push_bitmap(&mut out, &f.ground_truth);
    }
    Ok(seal(out))
}

pub fn decode_drive(bytes: &[u8]) -> Result<Drive> {
    let mut r = Reader::new(bytes);
    r.magic(&DRIVE_MAGIC)?;
    let n_frames = bounded(r.u32()?, MAX_FRAMES, "frame count")?;
    let n_range = bounded(r.u32()?, MAX_BINS, "range bins")?;
    let n_azimuth = bounded(r.u32()?, MAX_BINS, "azimuth bins")?;
    let expected = frame_bytes(n_range as u64, n_azimuth as u64)
        .and_then(|f| f.checked_mul(n_frames as u64))
        .and_then(|p| p.checked_add(DRIVE_HEADER + CRC_LEN))
        .ok_or_else(overflow)?;
    check_len(expected, bytes.len())?;
    check_crc(bytes)?;

    let geometry = RadarGeometry {
        n_range,
        n_azimuth,
        range_resolution: r.f32()?,
        fov_degrees: r.f32()?,
        lane_half_width: r.f32()?,
    };
    geometry.validate().map_err(|e| invalid(e.to_string()))?;
    let frame_interval = r.f32()?;
    if !(frame_interval > 0.0 && frame_interval.is_finite()) {
        return Err(invalid(format!("frame interval {frame_interval}")));
    }
    let seed = r.u64()?;
    let mut frames = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let data = r.f32s(n_range * n_azimuth)?;
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(invalid(format!("frame {i}: magnitudes must be finite and >= 0")));
        }
        let map = RangeAzimuthMap::from_vec(n_range, n_azimuth, data)?;
        let host_speed = r.f32()?;
        let timestamp = r.f64()?;
        if !(host_speed.is_finite() && host_speed >= 0.0) || !timestamp.is_finite() {
            return Err(invalid(format!("frame {i}: bad speed or timestamp")));
        }
        let ground_truth = parse_bitmap(r.take(bitmap_len(n_range))?, n_range)?;
        frames.push(Frame {
            map,
            host_speed,
            timestamp,
            ground_truth,
        });
    }
    Ok(Drive {
        geometry,
        frames,
        frame_interval,
        seed,
    })
}

pub fn write_drive(path: impl AsRef<Path>, drive: &Drive) -> Result<()> {
    write_bytes(path.as_ref(), &encode_drive(drive)?)
}

pub fn read_drive(path: impl AsRef<Path>) -> Result<Drive> {
    decode_drive(&fs::read(path)?)
}

// ---------------------------------------------------------------- labels

/// Encodes per-frame teacher labels; `None` (abstained) is stored with a
/// presence byte of 0 and an all-zero bitmap.
pub fn encode_labels(labels: &[Option<LabelVector>], n_range: usize) -> Result<Vec<u8>> {
    let n = u32::try_from(labels.len()).map_err(|_| overflow())?;
    let mut out = Vec::with_capacity(LABELS_HEADER as usize + labels.len() * (1 + bitmap_len(n_range)) + 4);
    out.extend_from_slice(&LABELS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&u32::try_from(n_range).map_err(|_| overflow())?.to_le_bytes());
    for l in labels {
        match l {
            Some(v) => {
                if v.len() != n_range {
                    return Err(Error::Shape(format!("label has {} bins, expected {n_range}", v.len())));
                }
                out.push(1);
                push_bitmap(&mut out, v);
            }
            None => {
                out.push(0);
                out.extend(std::iter::repeat_n(0u8, bitmap_len(n_range)));
            }
        }
    }
    Ok(seal(out))
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<Option<LabelVector>>> {
    let mut r = Reader::new(bytes);
    r.magic(&LABELS_MAGIC)?;
    let n_frames = bounded(r.u32()?, MAX_FRAMES, "frame count")?;
    let n_range = bounded(r.u32()?, MAX_BINS, "range bins")?;
    let expected = (1 + bitmap_len(n_range) as u64)
        .checked_mul(n_frames as u64)
        .and_then(|p| p.checked_add(LABELS_HEADER + CRC_LEN))
        .ok_or_else(overflow)?;
    check_len(expected, bytes.len())?;
    check_crc(bytes)?;
    (0..n_frames)
        .map(|i| {
            let present = r.u8()?;
            let bitmap = r.take(bitmap_len(n_range))?;
            match present {
                1 => Ok(Some(parse_bitmap(bitmap, n_range)?)),
                0 if bitmap.iter().all(|&b| b == 0) => Ok(None),
                0 => Err(invalid(format!("frame {i}: absent label carries bits"))),
                p => Err(invalid(format!("frame {i}: presence byte {p}"))),
            }
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[Option<LabelVector>], n_range: usize) -> Result<()> {
    write_bytes(path.as_ref(), &encode_labels(labels, n_range)?)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<Option<LabelVector>>> {
    decode_labels(&fs::read(path)?)
}

/// Checks that labels pair with `drive`: one entry per frame, each of the
/// drive's range length.
pub fn check_label_pairing(labels: &[Option<LabelVector>], drive: &Drive) -> Result<()> {
    if labels.len() != drive.frames.len() {
        return Err(FormatError::FrameCountMismatch {
            labels: labels.len(),
            drive: drive.frames.len(),
        }
        .into());
    }
    if let Some(l) = labels.iter().flatten().find(|l| l.len() != drive.geometry.n_range) {
        return Err(invalid(format!(
            "labels have {} range bins, drive has {}",
            l.len(),
            drive.geometry.n_range
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- weights

/// Student settings stored in the weights header alongside the layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "camelCase")]
struct StudentMeta {
    crop_offset: usize,
    input_scaling: InputScaling,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelWeights {
    Teacher(TeacherParams),
    Student(StudentModel),
}

impl ModelWeights {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelWeights::Teacher(_) => "teacher-mlp",
            ModelWeights::Student(_) => "student-cnn",
        }
    }
}

fn kind_name(tag: u8) -> &'static str {
    match tag {
        KIND_TEACHER => "teacher-mlp",
        KIND_STUDENT => "student-cnn",
        _ => "unknown",
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    out.extend_from_slice(&u32::try_from(v).map_err(|_| overflow())?.to_le_bytes());
    Ok(())
}

fn push_f32s(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Layout: magic, version, kind u8, JSON metadata (u32 length + bytes),
/// layer count u32, one descriptor per layer, then every layer's weights and
/// bias as f32, then the CRC.
///
/// Dense descriptor: activation u8, out u32, in u32.
/// Conv descriptor: activation u8, outC, inC, kH, kW, sH, sW, pH, pW (u32).
pub fn encode_weights(model: &ModelWeights) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    match model {
        ModelWeights::Teacher(p) => {
            out.push(KIND_TEACHER);
            let meta = serde_json::to_vec(&p.config)?;
            push_u32(&mut out, meta.len())?;
            out.extend_from_slice(&meta);
            let layers = p.mlp.layers();
            push_u32(&mut out, layers.len())?;
            for l in layers {
                out.push(l.activation().tag());
                push_u32(&mut out, l.outputs())?;
                push_u32(&mut out, l.inputs())?;
            }
            for l in layers {
                push_f32s(&mut out, l.weights());
                push_f32s(&mut out, l.bias());
            }
        }
        ModelWeights::Student(m) => {
            out.push(KIND_STUDENT);
            let meta = serde_json::to_vec(&StudentMeta {
                crop_offset: m.crop_offset(),
                input_scaling: m.scaling(),
            })?;
            push_u32(&mut out, meta.len())?;
            out.extend_from_slice(&meta);
            let layers = m.layers();
            push_u32(&mut out, layers.len())?;
            for l in layers {
                out.push(l.activation().tag());
                let (kh, kw) = l.kernel_size();
                let (sh, sw) = l.stride();
                let (ph, pw) = l.padding();
                for v in [l.out_channels(), l.in_channels(), kh, kw, sh, sw, ph, pw] {
                    push_u32(&mut out, v)?;
                }
            }
            for l in layers {
                push_f32s(&mut out, l.kernel());
                push_f32s(&mut out, l.bias());
            }
        }
    }
    Ok(seal(out))
}

fn finite(data: Vec<f32>) -> Result<Vec<f32>> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite weight"));
    }
    Ok(data)
}

fn activation(tag: u8) -> Result<Activation> {
    Activation::from_tag(tag).ok_or_else(|| invalid(format!("activation tag {tag}")))
}

pub fn decode_weights(bytes: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader::new(bytes);
    r.magic(&WEIGHTS_MAGIC)?;
    let kind = r.u8()?;
    if kind != KIND_TEACHER && kind != KIND_STUDENT {
        return Err(invalid(format!("model kind tag {kind}")));
    }
    let meta_len = bounded(r.u32()?, MAX_META, "metadata length")?;
    let meta = r.take(meta_len)?;
    let n_layers = bounded(r.u32()?, MAX_LAYERS, "layer count")?;
    let desc_len = if kind == KIND_TEACHER { 9 } else { 33 };
    // Descriptors are fixed-size, so read them before checking the length.
    let mut descs = Vec::with_capacity(n_layers);
    let mut payload = 0u64;
    for _ in 0..n_layers {
        let start = r.pos;
        let act = r.u8()?;
        let dims: Vec<usize> = (0..(desc_len - 1) / 4)
            .map(|_| bounded(r.u32()?, MAX_DIM, "layer dimension"))
            .collect::<Result<_>>()?;
        debug_assert_eq!(r.pos - start, desc_len);
        let count = if kind == KIND_TEACHER {
            (dims[0] as u64) * (dims[1] as u64) + dims[0] as u64
        } else {
            (dims[0] as u64)
                .checked_mul(dims[1] as u64)
                .and_then(|v| v.checked_mul(dims[2] as u64))
                .and_then(|v| v.checked_mul(dims[3] as u64))
                .and_then(|v| v.checked_add(dims[0] as u64))
                .ok_or_else(overflow)?
        };
        payload = payload
            .checked_add(count.checked_mul(4).ok_or_else(overflow)?)
            .ok_or_else(overflow)?;
        descs.push((act, dims));
    }
    let expected = payload.checked_add(r.pos as u64 + CRC_LEN).ok_or_else(overflow)?;
    check_len(expected, bytes.len())?;
    check_crc(bytes)?;

    if kind == KIND_TEACHER {
        let config: TeacherConfig =
            serde_json::from_slice(meta).map_err(|e| invalid(format!("teacher config: {e}")))?;
        config.validate().map_err(|e| invalid(e.to_string()))?;
        let layers = descs
            .into_iter()
            .map(|(act, d)| {
                let w = Tensor::new(vec![d[0], d[1]], finite(r.f32s(d[0] * d[1])?)?)?;
                let b = Tensor::new(vec![d[0]], finite(r.f32s(d[0])?)?)?;
                DenseLayer::new(w, b, activation(act)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let mlp = Mlp::from_layers(layers).map_err(|e| invalid(e.to_string()))?;
        Ok(ModelWeights::Teacher(TeacherParams { config, mlp }))
    } else {
        let meta: StudentMeta = serde_json::from_slice(meta).map_err(|e| invalid(format!("student metadata: {e}")))?;
        let layers = descs
            .into_iter()
            .map(|(act, d)| {
                let n = d[0] * d[1] * d[2] * d[3];
                let k = Tensor::new(vec![d[0], d[1], d[2], d[3]], finite(r.f32s(n)?)?)?;
                let b = Tensor::new(vec![d[0]], finite(r.f32s(d[0])?)?)?;
                Conv2dLayer::new(k, b, (d[4], d[5]), (d[6], d[7]), activation(act)?)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| invalid(e.to_string()))?;
        let model = StudentModel::from_layers(layers, meta.crop_offset, meta.input_scaling)
            .map_err(|e| invalid(e.to_string()))?;
        Ok(ModelWeights::Student(model))
    }
}

pub fn write_weights(path: impl AsRef<Path>, model: &ModelWeights) -> Result<()> {
    write_bytes(path.as_ref(), &encode_weights(model)?)
}

pub fn read_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    decode_weights(&fs::read(path)?)
}

pub fn read_teacher(path: impl AsRef<Path>) -> Result<TeacherParams> {
    match read_weights(path)? {
        ModelWeights::Teacher(p) => Ok(p),
        other => Err(FormatError::KindMismatch {
            expected: kind_name(KIND_TEACHER).into(),
            found: other.kind().into(),
        }
        .into()),
    }
}

pub fn read_student(path: impl AsRef<Path>) -> Result<StudentModel> {
    match read_weights(path)? {
        ModelWeights::Student(m) => Ok(m),
        other => Err(FormatError::KindMismatch {
            expected: kind_name(KIND_STUDENT).into(),
            found: other.kind().into(),
        }
        .into()),
    }
}

// ---------------------------------------------------------------- text

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Reads a JSON config; unknown fields are rejected by the config types.
pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path.as_ref(), text.as_bytes())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Writes a CSV with a header row; fields must not contain commas.
pub fn write_csv<I, R>(path: impl AsRef<Path>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = Vec::new();
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.into_iter().collect::<Vec<_>>().join(","))?;
    }
    write_bytes(path.as_ref(), &out)
}

pub fn write_student_history(path: impl AsRef<Path>, history: &[crate::train::EpochRecord]) -> Result<()> {
    write_csv(
        path,
        &["epoch", "trainLoss", "valLoss", "valR0", "valR1"],
        history.iter().map(|h| {
            [
                h.epoch.to_string(),
                h.train_loss.to_string(),
                h.val_loss.to_string(),
                opt(h.val_r0),
                opt(h.val_r1),
            ]
        }),
    )
}

pub fn write_teacher_history(path: impl AsRef<Path>, history: &[crate::teacher::TeacherEpoch]) -> Result<()> {
    write_csv(
        path,
        &["epoch", "trainLoss", "valLoss", "valR0", "threshold"],
        history.iter().map(|h| {
            [
                h.epoch.to_string(),
                h.train_loss.to_string(),
                h.val_loss.to_string(),
                opt(h.val_r0),
                h.threshold.to_string(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_drive, DriveSpec, SceneObject, SpeedProfile};

    fn small_drive() -> Drive {
        let spec = DriveSpec {
            geometry: RadarGeometry {
                n_range: 21,
                n_azimuth: 6,
                ..RadarGeometry::default()
            },
            n_frames: 3,
            speed: SpeedProfile::constant(10.0),
            objects: vec![SceneObject::debris(6.5, 0.0, 1.0)],
            ..DriveSpec::default()
        };
        generate_drive(&spec, 3).unwrap()
    }

    fn format_err(e: Error) -> FormatError {
        match e {
            Error::Format(f) => f,
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn drive_round_trip_is_exact() {
        let d = small_drive();
        let bytes = encode_drive(&d).unwrap();
        assert_eq!(bytes.len() as u64, DRIVE_HEADER + 3 * (21 * 6 * 4 + 12 + 3) + 4);
        let back = decode_drive(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(encode_drive(&back).unwrap(), bytes);
    }

    #[test]
    fn drive_corruptions_are_typed() {
        let bytes = encode_drive(&small_drive()).unwrap();
        let mut b = bytes.clone();
        b[0] ^= 1;
        assert_eq!(format_err(decode_drive(&b).unwrap_err()), FormatError::BadMagic);
        let mut b = bytes.clone();
        b[8] = 2;
        assert_eq!(
            format_err(decode_drive(&b).unwrap_err()),
            FormatError::UnsupportedVersion(2)
        );
        let b = &bytes[..bytes.len() - 1];
        assert!(matches!(
            format_err(decode_drive(b).unwrap_err()),
            FormatError::Truncated { .. }
        ));
        let mut b = bytes.clone();
        b[100] ^= 0x40;
        assert!(matches!(
            format_err(decode_drive(&b).unwrap_err()),
            FormatError::Crc { .. }
        ));
    }

    #[test]
    fn huge_declared_sizes_do_not_allocate() {
        let mut b = encode_drive(&small_drive()).unwrap();
        b[12..16].copy_from_slice(&MAX_FRAMES.to_le_bytes());
        b[16..20].copy_from_slice(&MAX_BINS.to_le_bytes());
        b[20..24].copy_from_slice(&MAX_BINS.to_le_bytes());
        assert!(matches!(
            format_err(decode_drive(&b).unwrap_err()),
            FormatError::Truncated { .. }
        ));
    }

    #[test]
    fn labels_keep_absence_distinct() {
        let labels = vec![
            None,
            Some(LabelVector::zeros(464)),
            Some(LabelVector::from_bins(464, &[7])),
        ];
        let bytes = encode_labels(&labels, 464).unwrap();
        assert_eq!(bytes.len(), 20 + 3 * 59 + 4);
        assert_eq!(decode_labels(&bytes).unwrap(), labels);
        let empty = encode_labels(&[], 464).unwrap();
        assert!(decode_labels(&empty).unwrap().is_empty());
    }

    #[test]
    fn label_pairing() {
        let d = small_drive();
        let ok = vec![None; 3];
        check_label_pairing(&ok, &d).unwrap();
        let err = check_label_pairing(&ok[..2], &d).unwrap_err();
        assert_eq!(format_err(err), FormatError::FrameCountMismatch { labels: 2, drive: 3 });
    }

    #[test]
    fn bitmap_padding_must_be_zero() {
        let labels = vec![Some(LabelVector::from_bins(21, &[20]))];
        let mut bytes = encode_labels(&labels, 21).unwrap();
        // 21 bins: bits 5..7 of the third bitmap byte are padding
        let at = 20 + 1 + 2;
        bytes[at] |= 0x80;
        let n = bytes.len() - 4;
        let crc = crc32fast::hash(&bytes[..n]);
        bytes[n..].copy_from_slice(&crc.to_le_bytes());
        assert!(matches!(
            format_err(decode_labels(&bytes).unwrap_err()),
            FormatError::Invalid(_)
        ));
    }

    #[test]
    fn weights_round_trip_and_kind_check() {
        let dir = tempfile::tempdir().unwrap();
        let teacher = ModelWeights::Teacher(TeacherParams {
            config: TeacherConfig::default(),
            mlp: Mlp::random(4),
        });
        let student = ModelWeights::Student(StudentModel::init(5));
        let tp = dir.path().join("t.bin");
        let sp = dir.path().join("s.bin");
        write_weights(&tp, &teacher).unwrap();
        write_weights(&sp, &student).unwrap();
        assert_eq!(read_weights(&tp).unwrap(), teacher);
        assert_eq!(read_weights(&sp).unwrap(), student);
        assert!(matches!(
            format_err(read_student(&tp).unwrap_err()),
            FormatError::KindMismatch { .. }
        ));
        assert!(matches!(
            format_err(read_teacher(&sp).unwrap_err()),
            FormatError::KindMismatch { .. }
        ));
    }

    #[test]
    fn weights_crc_detects_payload_flip() {
        let bytes = encode_weights(&ModelWeights::Student(StudentModel::init(1))).unwrap();
        let mut b = bytes.clone();
        let at = b.len() - 40;
        b[at] ^= 0x01;
        assert!(matches!(
            format_err(decode_weights(&b).unwrap_err()),
            FormatError::Crc { .. }
        ));
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let h = vec![crate::train::EpochRecord {
            epoch: 1,
            train_loss: 0.5,
            val_loss: 0.25,
            val_r0: Some(0.75),
            val_r1: None,
        }];
        write_student_history(&p, &h).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text, "epoch,trainLoss,valLoss,valR0,valR1\n1,0.5,0.25,0.75,\n");
    }
}
