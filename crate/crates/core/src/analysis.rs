//! Dataset findings: split-half consistency of fixation maps, where
//! fixations land on the panorama, and how far the head moves per sample.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, derive_seed, ExecMode};
use crate::io::{self, Provenance};
use crate::metrics::cc;
use crate::salmap::{render_unnormalized, KernelSpec, SaliencyMap};
use crate::sphere::{spherical_delta, SpherePoint};
use crate::synth::uniform_points;
use crate::trajectory::Trajectory;

pub const LON_BINS: usize = 80;
pub const LAT_BINS: usize = 80;
pub const LON_BIN_DEG: f64 = 360.0 / LON_BINS as f64;
pub const LAT_BIN_DEG: f64 = 180.0 / LAT_BINS as f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitHalfConfig {
    pub width: usize,
    pub height: usize,
    /// Random splits per image.
    pub reps: usize,
    pub kernel: KernelSpec,
}

impl Default for SplitHalfConfig {
    fn default() -> Self {
        SplitHalfConfig {
            width: 180,
            height: 90,
            reps: 20,
            kernel: KernelSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitHalfCurve {
    /// Subjects per group, `1..=n/2`.
    pub ks: Vec<usize>,
    pub mean_cc: Vec<f64>,
    /// Group A against as many uniform-on-sphere fixations.
    pub control_cc: Vec<f64>,
    pub reps: usize,
}

impl SplitHalfCurve {
    pub fn write_csv(&self, path: &Path, prov: &Provenance) -> Result<()> {
        let mut w = io::csv_writer(path, prov)?;
        w.write_record(["k", "mean_cc", "control_cc"])?;
        for i in 0..self.ks.len() {
            w.write_record([
                self.ks[i].to_string(),
                format!("{:.6}", self.mean_cc[i]),
                format!("{:.6}", self.control_cc[i]),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

// Subjects in a canonical order, so the result does not depend on how
// the caller happened to number them.
fn canonical_subjects(subjects: &[Vec<SpherePoint>]) -> Vec<&Vec<SpherePoint>> {
    let mut keyed: Vec<(Vec<u64>, &Vec<SpherePoint>)> = subjects
        .iter()
        .map(|s| {
            let key = s.iter().flat_map(|p| [p.lat.to_bits(), p.lon.to_bits()]).collect();
            (key, s)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.into_iter().map(|(_, s)| s).collect()
}

fn add_into(acc: &mut [f64], map: &SaliencyMap) {
    for (a, v) in acc.iter_mut().zip(map.data()) {
        *a += v;
    }
}

/// Mean CC between the maps of two disjoint random groups of `k` subjects,
/// for `k = 1..=n/2`, averaged over images and `cfg.reps` random splits.
///
/// `corpus[image][subject]` holds one subject's fixations on one image.
/// Every image needs the same number of subjects, at least two.
pub fn split_half_cc(
    corpus: &[Vec<Vec<SpherePoint>>],
    cfg: &SplitHalfConfig,
    seed: u64,
    mode: ExecMode,
) -> Result<SplitHalfCurve> {
    let n = corpus.first().map_or(0, |s| s.len());
    if n < 2 {
        return Err(Error::invalid("split-half analysis needs at least two subjects per image"));
    }
    if corpus.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("every image needs the same number of subjects"));
    }
    if cfg.reps == 0 || cfg.width == 0 || cfg.height == 0 {
        return Err(Error::invalid("reps and map dimensions must be positive"));
    }
    let half = n / 2;
    let (w, h) = (cfg.width, cfg.height);

    // CC is scale invariant, so group maps are plain sums of per-subject
    // kernel maps and grow incrementally with k.
    let per_image: Vec<Vec<SaliencyMap>> = corpus
        .iter()
        .map(|subjects| {
            canonical_subjects(subjects)
                .into_iter()
                .map(|fx| render_unnormalized(fx, w, h, &cfg.kernel, ExecMode::Sequential))
                .collect()
        })
        .collect();

    let jobs = corpus.len() * cfg.reps;
    let runs: Vec<Result<Vec<(f64, f64)>>> = exec::map_range(mode, jobs, |job| {
        let (img, rep) = (job / cfg.reps, job % cfg.reps);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[img as u64, rep as u64]));
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let subjects = canonical_subjects(&corpus[img]);
        let maps = &per_image[img];
        let mut a = vec![0.0; w * h];
        let mut b = vec![0.0; w * h];
        let mut ctrl = vec![0.0; w * h];
        let mut out = Vec::with_capacity(half);
        for k in 0..half {
            let (ia, ib) = (order[k], order[half + k]);
            add_into(&mut a, &maps[ia]);
            add_into(&mut b, &maps[ib]);
            let random = uniform_points(subjects[ia].len(), &mut rng);
            add_into(&mut ctrl, &render_unnormalized(&random, w, h, &cfg.kernel, ExecMode::Sequential));
            let sa = SaliencyMap::from_data(w, h, a.clone())?;
            let sb = SaliencyMap::from_data(w, h, b.clone())?;
            let sc = SaliencyMap::from_data(w, h, ctrl.clone())?;
            out.push((cc(&sa, &sb)?, cc(&sa, &sc)?));
        }
        Ok(out)
    });

    let mut mean_cc = vec![0.0; half];
    let mut control_cc = vec![0.0; half];
    for run in runs {
        for (k, (v, c)) in run?.into_iter().enumerate() {
            mean_cc[k] += v;
            control_cc[k] += c;
        }
    }
    for v in mean_cc.iter_mut().chain(control_cc.iter_mut()) {
        *v /= jobs as f64;
    }
    Ok(SplitHalfCurve {
        ks: (1..=half).collect(),
        mean_cc,
        control_cc,
        reps: cfg.reps,
    })
}

// 1-based ranks, ties share their average rank.
fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &t in &idx[i..=j] {
            r[t] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation. `None` when either side is constant or the
/// lengths differ.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixationHistograms {
    /// Bins of `LON_BIN_DEG` over `[-180, 180)`.
    pub lon: Vec<u64>,
    /// Bins of `LAT_BIN_DEG` over `[-90, 90]`, south first.
    pub lat: Vec<u64>,
    /// `grid[lat_bin * LON_BINS + lon_bin]`.
    pub grid: Vec<u64>,
}

impl FixationHistograms {
    pub fn total(&self) -> u64 {
        self.lon.iter().sum()
    }

    pub fn lon_center(bin: usize) -> f64 {
        -180.0 + (bin as f64 + 0.5) * LON_BIN_DEG
    }

    pub fn lat_center(bin: usize) -> f64 {
        -90.0 + (bin as f64 + 0.5) * LAT_BIN_DEG
    }

    pub fn grid_count(&self, lat_bin: usize, lon_bin: usize) -> u64 {
        self.grid[lat_bin * LON_BINS + lon_bin]
    }

    /// Writes `lon.csv`, `lat.csv` (`bin_center,count`) and `grid.csv`
    /// (`lat_center,lon_center,count`) into `dir`.
    pub fn write_csvs(&self, dir: &Path, prov: &Provenance) -> Result<()> {
        let write = |name: &str, rows: Vec<(f64, u64)>| -> Result<()> {
            let path = dir.join(name);
            let mut w = io::csv_writer(&path, prov)?;
            w.write_record(["bin_center", "count"])?;
            for (c, n) in rows {
                w.write_record([format!("{c:.3}"), n.to_string()])?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        };
        write("lon.csv", self.lon.iter().enumerate().map(|(i, n)| (Self::lon_center(i), *n)).collect())?;
        write("lat.csv", self.lat.iter().enumerate().map(|(i, n)| (Self::lat_center(i), *n)).collect())?;
        let path = dir.join("grid.csv");
        let mut w = io::csv_writer(&path, prov)?;
        w.write_record(["lat_center", "lon_center", "count"])?;
        for la in 0..LAT_BINS {
            for lo in 0..LON_BINS {
                w.write_record([
                    format!("{:.3}", Self::lat_center(la)),
                    format!("{:.3}", Self::lon_center(lo)),
                    self.grid_count(la, lo).to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

fn lon_bin(lon: f64) -> usize {
    let l = crate::sphere::wrap_deg(lon);
    (((l + 180.0) / LON_BIN_DEG).floor() as usize).min(LON_BINS - 1)
}

fn lat_bin(lat: f64) -> usize {
    (((lat.clamp(-90.0, 90.0) + 90.0) / LAT_BIN_DEG).floor() as usize).min(LAT_BINS - 1)
}

/// Counts fixations per longitude bin, latitude bin and lat/lon grid cell.
pub fn fixation_histograms(fixations: &[SpherePoint]) -> FixationHistograms {
    let mut hist = FixationHistograms {
        lon: vec![0; LON_BINS],
        lat: vec![0; LAT_BINS],
        grid: vec![0; LAT_BINS * LON_BINS],
    };
    for p in fixations {
        let (lo, la) = (lon_bin(p.lon), lat_bin(p.lat));
        hist.lon[lo] += 1;
        hist.lat[la] += 1;
        hist.grid[la * LON_BINS + lo] += 1;
    }
    hist
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMagnitudes {
    pub subject_id: u32,
    /// Consecutive-sample great-circle steps in degrees, sorted.
    pub steps: Vec<f64>,
    pub counts: Vec<u64>,
    /// Central 95% interval.
    pub interval: (f64, f64),
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeDistribution {
    pub bin_deg: f64,
    pub subjects: Vec<SubjectMagnitudes>,
}

impl MagnitudeDistribution {
    /// `subject,bin_center,count` rows plus one interval row per subject in
    /// a second file `intervals.csv`.
    pub fn write_csvs(&self, dir: &Path, prov: &Provenance) -> Result<()> {
        let path = dir.join("magnitudes.csv");
        let mut w = io::csv_writer(&path, prov)?;
        w.write_record(["subject", "bin_center", "count"])?;
        for s in &self.subjects {
            for (i, n) in s.counts.iter().enumerate() {
                w.write_record([
                    s.subject_id.to_string(),
                    format!("{:.3}", (i as f64 + 0.5) * self.bin_deg),
                    n.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        let path = dir.join("intervals.csv");
        let mut w = io::csv_writer(&path, prov)?;
        w.write_record(["subject", "lo", "hi", "mean"])?;
        for s in &self.subjects {
            w.write_record([
                s.subject_id.to_string(),
                format!("{:.4}", s.interval.0),
                format!("{:.4}", s.interval.1),
                format!("{:.4}", s.mean),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Per-subject distribution of head-movement magnitude between adjacent
/// samples. Trajectories of the same subject are pooled.
pub fn magnitude_distribution(trajectories: &[Trajectory], bin_deg: f64, max_deg: f64) -> Result<MagnitudeDistribution> {
    if !(bin_deg > 0.0) || !(max_deg > bin_deg) {
        return Err(Error::invalid("need 0 < bin width < histogram range"));
    }
    let mut pooled: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for t in trajectories {
        if t.samples.len() < 2 {
            return Err(Error::invalid(format!(
                "trajectory of subject {} on {} has fewer than two samples",
                t.subject_id, t.image_id
            )));
        }
        let steps = pooled.entry(t.subject_id).or_default();
        steps.extend(t.samples.windows(2).map(|w| spherical_delta(w[0].pos, w[1].pos).to_degrees()));
    }
    let nbins = (max_deg / bin_deg).ceil() as usize;
    let subjects = pooled
        .into_iter()
        .map(|(subject_id, mut steps)| {
            steps.sort_by(f64::total_cmp);
            let mut counts = vec![0u64; nbins];
            for s in &steps {
                // overflow lands in the last bin
                counts[((s / bin_deg) as usize).min(nbins - 1)] += 1;
            }
            SubjectMagnitudes {
                subject_id,
                interval: (quantile(&steps, 0.025), quantile(&steps, 0.975)),
                mean: steps.iter().sum::<f64>() / steps.len() as f64,
                counts,
                steps,
            }
        })
        .collect();
    Ok(MagnitudeDistribution { bin_deg, subjects })
}

/// Two-sample Kolmogorov-Smirnov statistic (largest gap between the
/// empirical CDFs).
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 1.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
