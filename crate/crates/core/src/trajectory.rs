//! Head-movement logs and velocity-threshold (I-VT) fixation identification.
//!
//! Velocities are angular: the great-circle separation of consecutive samples
//! in degrees divided by the sample interval in seconds, so the sphere radius
//! never enters.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Provenance};
use crate::sphere::{angular_distance_deg, SpherePoint};

/// Velocity threshold separating head fixations from saccades, in deg/s.
pub const DEFAULT_IVT_THRESHOLD: f64 = 18.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HmSample {
    pub t_ms: f64,
    pub pos: SpherePoint,
}

impl HmSample {
    pub fn new(t_ms: f64, lat: f64, lon: f64) -> Self {
        HmSample {
            t_ms,
            pos: SpherePoint::new(lat, lon),
        }
    }
}

/// Raw head trajectory of one subject on one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub subject_id: u32,
    pub image_id: String,
    pub samples: Vec<HmSample>,
}

impl Trajectory {
    pub fn positions(&self) -> Vec<SpherePoint> {
        self.samples.iter().map(|s| s.pos).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SampleLabel {
    /// The first sample has no predecessor and hence no velocity.
    First,
    Fixation,
    Saccade,
}

impl fmt::Display for SampleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SampleLabel::First => "first",
            SampleLabel::Fixation => "fixation",
            SampleLabel::Saccade => "saccade",
        })
    }
}

impl std::str::FromStr for SampleLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(SampleLabel::First),
            "fixation" => Ok(SampleLabel::Fixation),
            "saccade" => Ok(SampleLabel::Saccade),
            other => Err(Error::invalid(format!("unknown sample label {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledSample {
    pub sample: HmSample,
    pub label: SampleLabel,
    /// Degrees per second; `None` for the first sample.
    pub velocity: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTrajectory {
    pub subject_id: u32,
    pub image_id: String,
    pub samples: Vec<LabeledSample>,
}

impl LabeledTrajectory {
    pub fn count(&self, label: SampleLabel) -> usize {
        self.samples.iter().filter(|s| s.label == label).count()
    }

    pub fn positions(&self) -> Vec<SpherePoint> {
        self.samples.iter().map(|s| s.sample.pos).collect()
    }
}

/// Angular head velocity between two samples, degrees per second.
pub fn velocity(prev: &HmSample, cur: &HmSample) -> Result<f64> {
    let dt = cur.t_ms - prev.t_ms;
    if !(dt > 0.0) {
        return Err(Error::invalid(format!(
            "timestamps must strictly increase ({} -> {})",
            prev.t_ms, cur.t_ms
        )));
    }
    Ok(angular_distance_deg(prev.pos, cur.pos) / (dt / 1000.0))
}

/// Labels every sample after the first as a fixation when its velocity is
/// strictly below `threshold`, otherwise as a saccade.
pub fn ivt_classify(traj: &Trajectory, threshold: f64) -> Result<LabeledTrajectory> {
    if traj.samples.len() < 2 {
        return Err(Error::invalid(format!(
            "I-VT needs at least 2 samples, {} has {}",
            traj.image_id,
            traj.samples.len()
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::invalid("velocity threshold must be positive"));
    }
    let mut samples = Vec::with_capacity(traj.samples.len());
    samples.push(LabeledSample {
        sample: traj.samples[0],
        label: SampleLabel::First,
        velocity: None,
    });
    for w in traj.samples.windows(2) {
        let v = velocity(&w[0], &w[1])?;
        let label = if v < threshold {
            SampleLabel::Fixation
        } else {
            SampleLabel::Saccade
        };
        samples.push(LabeledSample {
            sample: w[1],
            label,
            velocity: Some(v),
        });
    }
    Ok(LabeledTrajectory {
        subject_id: traj.subject_id,
        image_id: traj.image_id.clone(),
        samples,
    })
}

/// Positions of fixation samples, in order.
pub fn fixations_of(traj: &LabeledTrajectory) -> Vec<SpherePoint> {
    traj.samples
        .iter()
        .filter(|s| s.label == SampleLabel::Fixation)
        .map(|s| s.sample.pos)
        .collect()
}

/// Splits `<image_id>__s<subject_id>.csv` into its parts.
pub fn parse_log_filename(path: &Path) -> Result<(String, u32)> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::malformed(path, "file name is not UTF-8"))?;
    let (image, subject) = stem
        .rsplit_once("__s")
        .ok_or_else(|| Error::malformed(path, "expected <image_id>__s<subject_id>.csv"))?;
    let subject = subject
        .parse()
        .map_err(|_| Error::malformed(path, format!("bad subject id {subject:?}")))?;
    if image.is_empty() {
        return Err(Error::malformed(path, "empty image id"));
    }
    Ok((image.to_string(), subject))
}

pub fn log_filename(image_id: &str, subject_id: u32) -> String {
    format!("{image_id}__s{subject_id}.csv")
}

#[derive(Serialize, Deserialize)]
struct RawRow {
    t_ms: f64,
    pitch_deg: f64,
    yaw_deg: f64,
}

#[derive(Serialize, Deserialize)]
struct LabeledRow {
    t_ms: f64,
    pitch_deg: f64,
    yaw_deg: f64,
    v_degps: Option<f64>,
    label: String,
}

/// Reads a raw log (`t_ms,pitch_deg,yaw_deg`); ids come from the file name.
pub fn read_raw_log(path: &Path) -> Result<Trajectory> {
    let (image_id, subject_id) = parse_log_filename(path)?;
    let mut rdr = io::csv_reader(path)?;
    let mut samples = Vec::new();
    for (i, row) in rdr.deserialize::<RawRow>().enumerate() {
        let row = row.map_err(|e| Error::malformed(path, format!("row {}: {e}", i + 1)))?;
        let finite = [row.t_ms, row.pitch_deg, row.yaw_deg]
            .iter()
            .all(|v| v.is_finite());
        if !finite || row.pitch_deg.abs() > 90.0 {
            return Err(Error::malformed(path, format!("row {}: value out of range", i + 1)));
        }
        if let Some(prev) = samples.last().map(|s: &HmSample| s.t_ms) {
            if row.t_ms <= prev {
                return Err(Error::malformed(
                    path,
                    format!("row {}: timestamp {} not increasing", i + 1, row.t_ms),
                ));
            }
        }
        samples.push(HmSample::new(row.t_ms, row.pitch_deg, row.yaw_deg));
    }
    Ok(Trajectory {
        subject_id,
        image_id,
        samples,
    })
}

pub fn write_raw_log(path: &Path, traj: &Trajectory, prov: &Provenance) -> Result<()> {
    let mut w = io::csv_writer(path, prov)?;
    for s in &traj.samples {
        w.serialize(RawRow {
            t_ms: s.t_ms,
            pitch_deg: s.pos.lat,
            yaw_deg: s.pos.lon,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_labeled(path: &Path, traj: &LabeledTrajectory, prov: &Provenance) -> Result<()> {
    let mut w = io::csv_writer(path, prov)?;
    for s in &traj.samples {
        w.serialize(LabeledRow {
            t_ms: s.sample.t_ms,
            pitch_deg: s.sample.pos.lat,
            yaw_deg: s.sample.pos.lon,
            v_degps: s.velocity,
            label: s.label.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_labeled(path: &Path) -> Result<LabeledTrajectory> {
    let (image_id, subject_id) = parse_log_filename(path)?;
    let mut rdr = io::csv_reader(path)?;
    let mut samples = Vec::new();
    for (i, row) in rdr.deserialize::<LabeledRow>().enumerate() {
        let row = row.map_err(|e| Error::malformed(path, format!("row {}: {e}", i + 1)))?;
        samples.push(LabeledSample {
            sample: HmSample::new(row.t_ms, row.pitch_deg, row.yaw_deg),
            label: row.label.parse()?,
            velocity: row.v_degps,
        });
    }
    Ok(LabeledTrajectory {
        subject_id,
        image_id,
        samples,
    })
}
