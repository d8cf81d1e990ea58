//! Synthetic corpora with known ground truth: fixation clouds, labeled head
//! traces, blob images and scripted experts.

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{infer_action, transition, ActionId, EnvConfig};
use crate::error::{Error, Result};
use crate::gail::Demonstrations;
use crate::image::EquirectImage;
use crate::sphere::{angular_distance_deg, SpherePoint};
use crate::trajectory::{HmSample, SampleLabel, Trajectory};

/// Uniformly distributed on the sphere (area-correct).
pub fn uniform_on_sphere(rng: &mut impl Rng) -> SpherePoint {
    let z: f64 = rng.random_range(-1.0..1.0);
    SpherePoint::new(z.asin().to_degrees(), rng.random_range(-180.0..180.0))
}

pub fn uniform_points(n: usize, rng: &mut impl Rng) -> Vec<SpherePoint> {
    (0..n).map(|_| uniform_on_sphere(rng)).collect()
}

/// Gaussian cloud around `center` with independent lat/lon spreads.
pub fn gaussian_cloud(
    n: usize,
    center: SpherePoint,
    sigma_lat_deg: f64,
    sigma_lon_deg: f64,
    rng: &mut impl Rng,
) -> Result<Vec<SpherePoint>> {
    let lat = Normal::new(0.0, sigma_lat_deg).map_err(|e| Error::invalid(e.to_string()))?;
    let lon = Normal::new(0.0, sigma_lon_deg).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((0..n)
        .map(|_| {
            SpherePoint::new(
                (center.lat + lat.sample(rng)).clamp(-90.0, 90.0),
                center.lon + lon.sample(rng),
            )
        })
        .collect())
}

/// Fixations concentrated around the front center, the way head fixations
/// cluster on real panoramas.
pub fn fcb_cloud(n: usize, rng: &mut impl Rng) -> Vec<SpherePoint> {
    gaussian_cloud(n, SpherePoint::ORIGIN, 12.0, 25.0, rng).expect("fixed spreads are valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorSpec {
    pub attractors: usize,
    /// Fixations per subject.
    pub fixations: usize,
    /// Probability that a fixation lands near an attractor instead of anywhere.
    pub share: f64,
    pub noise_deg: f64,
}

impl Default for AttractorSpec {
    fn default() -> Self {
        AttractorSpec {
            attractors: 4,
            fixations: 30,
            share: 0.7,
            noise_deg: 8.0,
        }
    }
}

/// Per-subject fixations for one image: every subject is drawn to the same
/// attractors with a share of uniform background fixations.
pub fn shared_attractor_corpus(
    subjects: usize,
    spec: &AttractorSpec,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<SpherePoint>>> {
    if spec.attractors == 0 || !(0.0..=1.0).contains(&spec.share) {
        return Err(Error::invalid("need at least one attractor and share in [0, 1]"));
    }
    let centers: Vec<SpherePoint> = (0..spec.attractors)
        .map(|_| SpherePoint::new(rng.random_range(-40.0..40.0), rng.random_range(-180.0..180.0)))
        .collect();
    let noise = Normal::new(0.0, spec.noise_deg).map_err(|e| Error::invalid(e.to_string()))?;
    Ok((0..subjects)
        .map(|_| {
            (0..spec.fixations)
                .map(|_| {
                    if rng.random::<f64>() < spec.share {
                        let c = centers[rng.random_range(0..centers.len())];
                        SpherePoint::new(
                            (c.lat + noise.sample(rng)).clamp(-90.0, 90.0),
                            c.lon + noise.sample(rng),
                        )
                    } else {
                        uniform_on_sphere(rng)
                    }
                })
                .collect()
        })
        .collect())
}

/// Head trace moving `step_deg` per sample along a fixed heading.
pub fn constant_step_trajectory(
    samples: usize,
    step_deg: f64,
    heading_deg: f64,
    dt_ms: f64,
    subject_id: u32,
) -> Trajectory {
    let mut pos = SpherePoint::ORIGIN;
    let samples = (0..samples)
        .map(|i| {
            if i > 0 {
                pos = pos.step_towards(heading_deg, step_deg);
            }
            HmSample {
                t_ms: i as f64 * dt_ms,
                pos,
            }
        })
        .collect();
    Trajectory {
        subject_id,
        image_id: "synthetic".into(),
        samples,
    }
}

/// Head trace whose per-sample step sizes follow a log-normal distribution
/// with the given median and log-spread, heading drifting slowly.
pub fn lognormal_step_trajectory(
    samples: usize,
    median_deg: f64,
    log_sigma: f64,
    dt_ms: f64,
    subject_id: u32,
    rng: &mut impl Rng,
) -> Result<Trajectory> {
    let dist = LogNormal::new(median_deg.ln(), log_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut pos = SpherePoint::ORIGIN;
    let mut heading: f64 = rng.random_range(0.0..360.0);
    let samples = (0..samples)
        .map(|i| {
            if i > 0 {
                heading += rng.random_range(-30.0..30.0);
                // keep away from the poles so headings stay meaningful
                if pos.lat.abs() > 60.0 {
                    heading = if pos.lat > 0.0 { 270.0 } else { 90.0 };
                }
                pos = pos.step_towards(heading, dist.sample(rng));
            }
            HmSample {
                t_ms: i as f64 * dt_ms,
                pos,
            }
        })
        .collect();
    Ok(Trajectory {
        subject_id,
        image_id: "synthetic".into(),
        samples,
    })
}

/// A trace with known fixation/saccade labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledTrace {
    pub trajectory: Trajectory,
    pub labels: Vec<SampleLabel>,
}

/// Alternating dwells (speed 0-10 deg/s) and sweeps (25-60 deg/s), each
/// segment 3-12 samples long. Labels follow the generating segment.
pub fn ivt_trace(samples: usize, dt_ms: f64, subject_id: u32, rng: &mut impl Rng) -> LabeledTrace {
    let mut pos = SpherePoint::new(rng.random_range(-30.0..30.0), rng.random_range(-180.0..180.0));
    let mut out = vec![HmSample { t_ms: 0.0, pos }];
    let mut labels = vec![SampleLabel::First];
    let mut dwell = rng.random::<bool>();
    while out.len() < samples {
        let len = rng.random_range(3..=12);
        let heading: f64 = rng.random_range(0.0..360.0);
        for _ in 0..len {
            if out.len() >= samples {
                break;
            }
            let speed = if dwell {
                rng.random_range(0.0..10.0)
            } else {
                rng.random_range(25.0..60.0)
            };
            let mut h = heading + rng.random_range(-20.0..20.0);
            if pos.lat.abs() > 70.0 {
                h = if pos.lat > 0.0 { 270.0 } else { 90.0 };
            }
            pos = pos.step_towards(h, speed * dt_ms / 1000.0);
            out.push(HmSample {
                t_ms: out.len() as f64 * dt_ms,
                pos,
            });
            labels.push(if dwell {
                SampleLabel::Fixation
            } else {
                SampleLabel::Saccade
            });
        }
        dwell = !dwell;
    }
    LabeledTrace {
        trajectory: Trajectory {
            subject_id,
            image_id: "synthetic".into(),
            samples: out,
        },
        labels,
    }
}

/// Dark textured panorama with one bright Gaussian blob.
#[derive(Clone, Debug, PartialEq)]
pub struct BlobScene {
    pub image: EquirectImage,
    pub center: SpherePoint,
}

pub fn blob_image(width: usize, height: usize, center: SpherePoint, sigma_deg: f64, rng: &mut impl Rng) -> EquirectImage {
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    EquirectImage::from_fn(width, height, |p| {
        let d = angular_distance_deg(p, center);
        let texture = 0.1 + 0.05 * ((p.lon.to_radians() * 7.0 + phase).sin() * (p.lat.to_radians() * 5.0).cos());
        (texture + 0.9 * (-0.5 * (d / sigma_deg).powi(2)).exp()) as f32
    })
}

/// Blob centers uniform in +-35 deg longitude and +-20 deg latitude.
pub fn blob_scenes(n: usize, width: usize, height: usize, rng: &mut impl Rng) -> Vec<BlobScene> {
    (0..n)
        .map(|_| {
            let center = SpherePoint::new(rng.random_range(-20.0..20.0), rng.random_range(-35.0..35.0));
            BlobScene {
                image: blob_image(width, height, center, 6.0, rng),
                center,
            }
        })
        .collect()
}

/// Hand-written head-movement behaviors used as demonstrators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedExpert {
    /// Same action everywhere.
    Constant(u8),
    /// Nearest reachable position to the target each step, diagonals allowed.
    Seek,
    /// Closes the longitude gap first, then latitude.
    SeekAxisFirst,
}

impl ScriptedExpert {
    pub fn action(&self, pos: SpherePoint, target: Option<SpherePoint>, step_deg: f64) -> Result<ActionId> {
        match *self {
            ScriptedExpert::Constant(a) => ActionId::new(a as usize),
            ScriptedExpert::Seek => {
                let t = target.ok_or_else(|| Error::invalid("seeking expert needs a target"))?;
                Ok(infer_action(pos, t, step_deg))
            }
            ScriptedExpert::SeekAxisFirst => {
                let t = target.ok_or_else(|| Error::invalid("seeking expert needs a target"))?;
                let dlon = crate::sphere::wrap_deg(t.lon - pos.lon);
                let dlat = t.lat - pos.lat;
                let half = step_deg / 2.0;
                Ok(if dlon.abs() > half {
                    if dlon > 0.0 { ActionId::EAST } else { ActionId::WEST }
                } else if dlat.abs() > half {
                    if dlat > 0.0 { ActionId::NORTH } else { ActionId::SOUTH }
                } else {
                    ActionId::STAY
                })
            }
        }
    }

    /// Positions visited over `steps` steps from `start` (length `steps + 1`).
    pub fn path(&self, start: SpherePoint, target: Option<SpherePoint>, steps: usize, step_deg: f64) -> Result<Vec<SpherePoint>> {
        let mut pos = start;
        let mut out = vec![pos];
        for _ in 0..steps {
            pos = transition(pos, self.action(pos, target, step_deg)?, step_deg);
            out.push(pos);
        }
        Ok(out)
    }
}

/// Demonstrations of `experts` (one per stream) on blob scenes, starting at (0, 0).
pub fn scripted_demonstrations(scenes: &[BlobScene], experts: &[ScriptedExpert], env: &EnvConfig) -> Result<Demonstrations> {
    let mut paths = Vec::with_capacity(scenes.len());
    for s in scenes {
        paths.push(
            experts
                .iter()
                .map(|e| e.path(SpherePoint::ORIGIN, Some(s.center), env.horizon, env.step_mag_deg))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(Demonstrations {
        images: scenes.iter().map(|s| s.image.clone()).collect(),
        paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{ivt_classify, DEFAULT_IVT_THRESHOLD};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ivt_trace_labels_are_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..20 {
            let t = ivt_trace(200, 1000.0 / 30.0, i, &mut rng);
            let got = ivt_classify(&t.trajectory, DEFAULT_IVT_THRESHOLD).unwrap();
            let labels: Vec<_> = got.samples.iter().map(|s| s.label).collect();
            assert_eq!(labels, t.labels);
        }
    }

    #[test]
    fn seekers_reach_the_target_and_stay() {
        let target = SpherePoint::new(-13.0, 27.0);
        for e in [ScriptedExpert::Seek, ScriptedExpert::SeekAxisFirst] {
            let p = e.path(SpherePoint::ORIGIN, Some(target), 40, 4.0).unwrap();
            let last = *p.last().unwrap();
            assert!(angular_distance_deg(last, target) < 4.0, "{e:?} ended at {last:?}");
            assert_eq!(e.action(last, Some(target), 4.0).unwrap(), ActionId::STAY);
        }
    }

    #[test]
    fn constant_expert_ignores_target() {
        let e = ScriptedExpert::Constant(1);
        assert_eq!(e.action(SpherePoint::new(10.0, 50.0), None, 4.0).unwrap(), ActionId::EAST);
        assert!(ScriptedExpert::Seek.action(SpherePoint::ORIGIN, None, 4.0).is_err());
    }

    #[test]
    fn blob_is_brightest_at_its_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = &blob_scenes(1, 256, 128, &mut rng)[0];
        let (mut best, mut bv) = (SpherePoint::ORIGIN, f32::MIN);
        for row in 0..128 {
            for col in 0..256 {
                if s.image.get(col, row, 0) > bv {
                    bv = s.image.get(col, row, 0);
                    best = crate::image::pixel_center(col, row, 256, 128);
                }
            }
        }
        assert!(angular_distance_deg(best, s.center) < 2.0);
    }
}
