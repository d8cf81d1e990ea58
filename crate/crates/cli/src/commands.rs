use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use salgail::analysis::{self, SplitHalfConfig};
use salgail::env::{write_rollouts, ActionId, EnvConfig, DEFAULT_STEP_MAG_DEG};
use salgail::exec::{self, ExecMode};
use salgail::gail::{self, GailModel, PredictConfig};
use salgail::io::Provenance;
use salgail::metrics::{self, EvalItem};
use salgail::salmap::{self, FcbParams, KernelSpec, DEFAULT_FCB_WEIGHT};
use salgail::synth::{self, AttractorSpec, ScriptedExpert};
use salgail::trajectory::{
    self, fixations_of, log_filename, read_labeled, read_raw_log, write_labeled, write_raw_log, HmSample,
    LabeledSample, LabeledTrajectory, SampleLabel, Trajectory,
};
use salgail::{EquirectImage, Error, Result, SaliencyMap, SpherePoint};
use serde::Serialize;
use serde_json::json;

use crate::config::{run_header, Preset, TrainConfig};
use crate::manifest::{Manifest, SceneEntry};
use crate::*;

pub fn run(cli: &Cli) -> Result<()> {
    if cli.jobs > 1 {
        // must happen before rayon's global pool starts
        std::env::set_var("RAYON_NUM_THREADS", cli.jobs.to_string());
    }
    let mode = ExecMode::from_jobs(cli.jobs);
    match &cli.command {
        Command::Ivt(a) => cmd_ivt(a, mode),
        Command::Salmap(a) => cmd_salmap(a, mode),
        Command::Eval(a) => cmd_eval(a, mode),
        Command::Train(a) => cmd_train(a, cli.seed, mode),
        Command::Simulate(a) => cmd_simulate(a, cli.seed, mode),
        Command::Findings(a) => cmd_findings(a, cli.seed.unwrap_or(0), mode),
        Command::Synth(s) => cmd_synth(s, cli.seed.unwrap_or(0)),
    }
}

fn require_seed(seed: Option<u64>, cmd: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::Config(format!("{cmd} needs --seed")))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Files in `dir` with one of `exts`, sorted by name.
fn list_files(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::invalid(format!("{} is not a directory", dir.display())));
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if path.is_file() && exts.contains(&ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string()
}

fn file_name(path: &Path) -> &std::ffi::OsStr {
    path.file_name().expect("listed files have names")
}

fn offenders_error(failed: Vec<(PathBuf, Error)>) -> Result<()> {
    if failed.is_empty() {
        return Ok(());
    }
    for (p, e) in &failed {
        eprintln!("  {}: {e}", p.display());
    }
    let names: Vec<String> = failed.iter().map(|(p, _)| p.display().to_string()).collect();
    Err(Error::malformed(
        failed[0].0.clone(),
        format!("{} malformed file(s): {}", failed.len(), names.join(", ")),
    ))
}

fn cmd_ivt(a: &IvtArgs, mode: ExecMode) -> Result<()> {
    let prov = Provenance::for_config(&json!({ "command": "ivt", "threshold": a.threshold }));
    let files = list_files(&a.input, &["csv"])?;
    if files.is_empty() {
        eprintln!("warning: no .csv logs in {}", a.input.display());
    }
    create_dir(&a.output)?;
    let results = exec::map(mode, &files, |f| -> Result<(usize, usize)> {
        let t = read_raw_log(f)?;
        let labeled = trajectory::ivt_classify(&t, a.threshold)?;
        write_labeled(&a.output.join(file_name(f)), &labeled, &prov)?;
        Ok((labeled.count(SampleLabel::Fixation), labeled.count(SampleLabel::Saccade)))
    });
    let (mut fix, mut sac, mut failed) = (0, 0, Vec::new());
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok((x, y)) => {
                fix += x;
                sac += y;
            }
            Err(e) => failed.push((f.clone(), e)),
        }
    }
    println!(
        "{} files, {fix} fixations, {sac} saccades (threshold {} deg/s)",
        files.len() - failed.len(),
        a.threshold
    );
    offenders_error(failed)
}

fn read_labeled_dir(dir: &Path) -> Result<BTreeMap<String, Vec<LabeledTrajectory>>> {
    let mut by_image: BTreeMap<String, Vec<LabeledTrajectory>> = BTreeMap::new();
    let mut failed = Vec::new();
    for f in list_files(dir, &["csv"])? {
        match read_labeled(&f) {
            Ok(t) => by_image.entry(t.image_id.clone()).or_default().push(t),
            Err(e) => failed.push((f, e)),
        }
    }
    offenders_error(failed)?;
    for trajs in by_image.values_mut() {
        trajs.sort_by_key(|t| t.subject_id);
    }
    Ok(by_image)
}

fn fcb_params(a: &FcbArgs, fitted: Option<FcbParams>) -> Result<Option<FcbParams>> {
    if a.no_fcb {
        return Ok(None);
    }
    let mut p = fitted.unwrap_or_default();
    p.weight = a.fcb_weight.unwrap_or(DEFAULT_FCB_WEIGHT);
    if let Some(s) = a.fcb_sigma_lon {
        p.sigma_lon_deg = s;
    }
    if let Some(s) = a.fcb_sigma_lat {
        p.sigma_lat_deg = s;
    }
    p.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(Some(p))
}

fn save_map(map: &SaliencyMap, dir: &Path, id: &str, prov: &Provenance) -> Result<()> {
    map.save_raw(&dir.join(format!("{id}.f32")), prov)?;
    map.save_png(&dir.join(format!("{id}.png")), prov)
}

fn cmd_salmap(a: &SalmapArgs, mode: ExecMode) -> Result<()> {
    if a.width == 0 || a.height == 0 {
        return Err(Error::Config("map width and height must be positive".into()));
    }
    let by_image = read_labeled_dir(&a.input)?;
    if by_image.is_empty() {
        eprintln!("warning: no labeled logs in {}", a.input.display());
    }
    let fixations: Vec<(String, Vec<SpherePoint>)> = by_image
        .iter()
        .map(|(id, trajs)| (id.clone(), trajs.iter().flat_map(fixations_of).collect()))
        .collect();
    let fitted = if a.fit_fcb && !a.fcb.no_fcb {
        let all: Vec<SpherePoint> = fixations.iter().flat_map(|(_, f)| f.iter().copied()).collect();
        Some(salmap::fit_fcb(&all)?)
    } else {
        None
    };
    let fcb = fcb_params(&a.fcb, fitted)?;
    let prov = Provenance::for_config(&json!({
        "command": "salmap", "width": a.width, "height": a.height, "fcb": fcb,
    }));
    create_dir(&a.output)?;
    let prior = fcb.map(|p| salmap::build_fcb(a.width, a.height, &p)).transpose()?;
    let results = exec::map(mode, &fixations, |(id, fx)| -> Result<()> {
        let s = salmap::render_saliency_with(fx, a.width, a.height, &KernelSpec::default(), ExecMode::Sequential);
        let map = match &prior {
            Some(c) => salmap::fuse_fcb(&s, c)?,
            None => s,
        };
        save_map(&map, &a.output, id, &prov)
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    println!("{} maps at {}x{} (center bias {})", fixations.len(), a.width, a.height, if fcb.is_some() { "on" } else { "off" });
    Ok(())
}

fn cmd_eval(a: &EvalArgs, mode: ExecMode) -> Result<()> {
    let gt_files = list_files(&a.gt, &["f32"])?;
    let mut missing = Vec::new();
    for g in &gt_files {
        let p = a.pred.join(file_name(g));
        if !p.is_file() {
            missing.push((p, Error::invalid("no prediction for this ground-truth map")));
        }
    }
    offenders_error(missing)?;
    let by_image = read_labeled_dir(&a.fixations)?;
    let mut ids = Vec::new();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut fixes = Vec::new();
    for g in &gt_files {
        let id = stem(g);
        let trajs = by_image
            .get(&id)
            .ok_or_else(|| Error::invalid(format!("no fixation logs for image {id} in {}", a.fixations.display())))?;
        preds.push(SaliencyMap::load_raw(&a.pred.join(file_name(g)))?);
        gts.push(SaliencyMap::load_raw(g)?);
        fixes.push(trajs.iter().flat_map(fixations_of).collect::<Vec<_>>());
        ids.push(id);
    }
    let items: Vec<EvalItem<'_>> = (0..ids.len())
        .map(|i| EvalItem {
            pred: &preds[i],
            gt: &gts[i],
            fixations: &fixes[i],
        })
        .collect();
    let reports = metrics::evaluate_batch(&items, mode)
        .into_iter()
        .zip(&ids)
        .map(|(r, id)| r.map_err(|e| Error::invalid(format!("image {id}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let prov = Provenance::for_config(&json!({ "command": "eval" }));
    let mut w = salgail::io::csv_writer(&a.output, &prov)?;
    w.write_record(["image_id", "cc", "kl", "nss", "auc"])?;
    for (id, r) in ids.iter().zip(&reports) {
        w.write_record([id.clone(), format!("{:.6}", r.cc), format!("{:.6}", r.kl), format!("{:.6}", r.nss), format!("{:.6}", r.auc)])?;
    }
    if let Some(s) = metrics::summarize(&reports) {
        let cell = |m: f64, sd: f64| format!("{m:.6}({sd:.6})");
        w.write_record([
            "mean(std)".to_string(),
            cell(s.mean.cc, s.std.cc),
            cell(s.mean.kl, s.std.kl),
            cell(s.mean.nss, s.std.nss),
            cell(s.mean.auc, s.std.auc),
        ])?;
        println!(
            "{} images: CC {:.3} KL {:.3} NSS {:.3} AUC {:.3}",
            s.count, s.mean.cc, s.mean.kl, s.mean.nss, s.mean.auc
        );
    }
    w.flush().map_err(|e| Error::io(&a.output, e))
}

fn manifest_base(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn cmd_train(a: &TrainArgs, seed: Option<u64>, mode: ExecMode) -> Result<()> {
    let seed = require_seed(seed, "train")?;
    let mut cfg = TrainConfig::resolve(a.preset, &a.sets, a.config.as_deref())?;
    let manifest = Manifest::read(&a.manifest)?;
    if manifest.streams != cfg.hyper.streams {
        eprintln!(
            "note: the manifest has {} streams; using them instead of {}",
            manifest.streams, cfg.hyper.streams
        );
        cfg.hyper.streams = manifest.streams;
    }
    let demos = manifest.load(&manifest_base(&a.manifest), a.rgb)?;
    if a.preset == Preset::Paper {
        eprintln!("warning: the paper preset trains for up to {} cycles with {} streams; expect days of CPU time", cfg.hyper.cycles, cfg.hyper.streams);
    }
    print!("{}", run_header(&cfg, a.preset));
    if a.dry_run {
        return Ok(());
    }
    let prov = Provenance::for_config(&json!({
        "command": "train", "config": cfg, "seed": seed, "corpus": manifest.provenance.config_hash, "rgb": a.rgb,
    }));
    let progress = a.progress;
    let (model, logs) = gail::train(&demos, &cfg.hyper, &cfg.env, seed, mode, |l| {
        if progress > 0 && l.cycle % progress == 0 {
            eprintln!(
                "cycle {:>6}  reward {:>8.4}  d_acc {:.3}  sel_acc {:.3}",
                l.cycle, l.mean_reward, l.d_acc, l.sel_acc
            );
        }
    })?;
    model.save(&a.output, &prov)?;
    let log = a.log.clone().unwrap_or_else(|| a.output.with_extension("log.csv"));
    gail::write_training_log(&log, &logs, &prov)?;
    println!("trained {} cycles; checkpoint {}; log {}", model.cycles_trained, a.output.display(), log.display());
    Ok(())
}

fn load_image_list(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        list_files(input, &["png", "f32"])
    } else if input.is_file() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(Error::invalid(format!("{} does not exist", input.display())))
    }
}

fn cmd_simulate(a: &SimulateArgs, seed: Option<u64>, mode: ExecMode) -> Result<()> {
    let seed = require_seed(seed, "simulate")?;
    let model = GailModel::load(&a.checkpoint)?;
    let images = load_image_list(&a.input)?;
    let mut cfg = PredictConfig::for_model(&model);
    cfg.fcb = fcb_params(&a.fcb, None)?;
    cfg.fixations = a.fixations.into();
    let prov = Provenance::for_config(&json!({
        "command": "simulate", "seed": seed, "fcb": cfg.fcb, "fixations": cfg.fixations,
        "model": { "hyper": model.hyper, "env": model.env, "cycles": model.cycles_trained, "seed": model.seed },
    }));
    create_dir(&a.output)?;
    let rgb = model.net.channels == 3;
    for path in &images {
        let image = EquirectImage::load(path, rgb)?;
        let map = gail::predict_saliency(&model, &image, &cfg, mode)?;
        let id = stem(path);
        save_map(&map, &a.output, &id, &prov)?;
        if a.rollouts {
            let (rollouts, _) = gail::predict_with_rollouts(&model, &image, &cfg, mode)?;
            write_rollouts(&a.output.join(format!("{id}_rollouts.csv")), &rollouts, &prov)?;
        }
    }
    println!("{} maps from {} streams", images.len(), model.streams());
    Ok(())
}

#[derive(Serialize)]
struct FindingsSummary {
    provenance: Provenance,
    images: usize,
    subjects: usize,
    fixations: u64,
    spearman_k_vs_cc: Option<f64>,
    above_control_at_every_k: bool,
    cc_at_one_subject: f64,
    cc_at_half: f64,
    modal_lon_bin_center: f64,
    modal_lat_bin_center: f64,
    intervals: Vec<(u32, f64, f64)>,
}

fn to_trajectory(t: &LabeledTrajectory) -> Trajectory {
    Trajectory {
        subject_id: t.subject_id,
        image_id: t.image_id.clone(),
        samples: t.samples.iter().map(|s| s.sample).collect(),
    }
}

fn cmd_findings(a: &FindingsArgs, seed: u64, mode: ExecMode) -> Result<()> {
    let by_image = read_labeled_dir(&a.input)?;
    if by_image.is_empty() {
        return Err(Error::invalid(format!("no labeled logs in {}", a.input.display())));
    }
    let corpus: Vec<Vec<Vec<SpherePoint>>> = by_image
        .values()
        .map(|trajs| trajs.iter().map(fixations_of).collect())
        .collect();
    let split_cfg = SplitHalfConfig {
        width: a.width,
        height: a.height,
        reps: a.reps,
        ..Default::default()
    };
    let prov = Provenance::for_config(&json!({
        "command": "findings", "seed": seed, "split": split_cfg, "bin": a.bin, "max_deg": a.max_deg,
    }));
    create_dir(&a.output)?;
    let curve = analysis::split_half_cc(&corpus, &split_cfg, seed, mode)?;
    curve.write_csv(&a.output.join("split_half.csv"), &prov)?;
    let all: Vec<SpherePoint> = corpus.iter().flatten().flatten().copied().collect();
    let hist = analysis::fixation_histograms(&all);
    hist.write_csvs(&a.output, &prov)?;
    let trajs: Vec<Trajectory> = by_image.values().flatten().map(to_trajectory).collect();
    let mags = analysis::magnitude_distribution(&trajs, a.bin, a.max_deg)?;
    mags.write_csvs(&a.output, &prov)?;

    let ks: Vec<f64> = curve.ks.iter().map(|&k| k as f64).collect();
    let argmax = |v: &[u64]| (0..v.len()).max_by_key(|&i| (v[i], std::cmp::Reverse(i))).unwrap_or(0);
    let summary = FindingsSummary {
        provenance: prov.clone(),
        images: corpus.len(),
        subjects: corpus[0].len(),
        fixations: hist.total(),
        spearman_k_vs_cc: analysis::spearman(&ks, &curve.mean_cc),
        above_control_at_every_k: curve.mean_cc.iter().zip(&curve.control_cc).all(|(m, c)| m > c),
        cc_at_one_subject: curve.mean_cc[0],
        cc_at_half: *curve.mean_cc.last().expect("at least one k"),
        modal_lon_bin_center: analysis::FixationHistograms::lon_center(argmax(&hist.lon)),
        modal_lat_bin_center: analysis::FixationHistograms::lat_center(argmax(&hist.lat)),
        intervals: mags.subjects.iter().map(|s| (s.subject_id, s.interval.0, s.interval.1)).collect(),
    };
    let text = serde_json::to_string_pretty(&summary)?;
    let path = a.output.join("summary.json");
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    println!("{text}");
    Ok(())
}

/// Command arguments minus the output path, so provenance does not depend
/// on where results are written.
fn settings<T: Serialize>(args: &T) -> serde_json::Value {
    let mut v = serde_json::to_value(args).expect("arguments serialize");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("output");
    }
    v
}

fn cmd_synth(s: &SynthCommand, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match s {
        SynthCommand::Experts(a) => synth_experts(a, seed, &mut rng),
        SynthCommand::Ivt(a) => synth_ivt(a, seed, &mut rng),
        SynthCommand::Attractor(a) => synth_attractor(a, seed, &mut rng),
    }
}

/// Expert behaviors for `task`, cycled to `n` streams.
pub fn experts_for(task: ExpertTask, n: usize) -> Vec<ScriptedExpert> {
    let pool = match task {
        ExpertTask::Blob => vec![ScriptedExpert::Seek, ScriptedExpert::SeekAxisFirst],
        ExpertTask::EastStay => vec![
            ScriptedExpert::Constant(ActionId::EAST.index() as u8),
            ScriptedExpert::Constant(ActionId::STAY.index() as u8),
        ],
    };
    (0..n).map(|i| pool[i % pool.len()]).collect()
}

const SYNTH_DT_MS: f64 = 100.0;

fn positions_to_trajectory(positions: &[SpherePoint], image_id: &str, subject_id: u32) -> Trajectory {
    Trajectory {
        subject_id,
        image_id: image_id.to_string(),
        samples: positions
            .iter()
            .enumerate()
            .map(|(t, p)| HmSample {
                t_ms: t as f64 * SYNTH_DT_MS,
                pos: *p,
            })
            .collect(),
    }
}

fn synth_experts(a: &SynthExpertsArgs, seed: u64, rng: &mut ChaCha8Rng) -> Result<()> {
    if a.experts == 0 || a.images == 0 {
        return Err(Error::Config("need at least one expert and one training image".into()));
    }
    let experts = experts_for(a.task, a.experts);
    let prov = Provenance::for_config(&json!({ "command": "synth-experts", "seed": seed, "args": settings(a) }));
    let scenes = synth::blob_scenes(a.images + a.held_out, a.width, a.height, rng);
    for sub in ["images", "trajectories"] {
        create_dir(&a.output.join(sub))?;
    }
    let step = EnvConfig::desk().step_mag_deg;
    debug_assert_eq!(step, DEFAULT_STEP_MAG_DEG);
    let mut entries = Vec::with_capacity(scenes.len());
    for (i, scene) in scenes.iter().enumerate() {
        let id = format!("scene{i:03}");
        let image = PathBuf::from("images").join(format!("{id}.f32"));
        scene.image.save_raw(&a.output.join(&image), &prov)?;
        let mut trajectories = Vec::with_capacity(experts.len());
        for (n, e) in experts.iter().enumerate() {
            let path = e.path(SpherePoint::ORIGIN, Some(scene.center), a.steps, step)?;
            let rel = PathBuf::from("trajectories").join(log_filename(&id, n as u32));
            write_raw_log(&a.output.join(&rel), &positions_to_trajectory(&path, &id, n as u32), &prov)?;
            trajectories.push(rel);
        }
        entries.push(SceneEntry {
            id,
            image,
            trajectories,
            target: Some(scene.center),
        });
    }
    let held = entries.split_off(a.images);
    for (name, scenes) in [("manifest.json", entries), ("heldout.json", held)] {
        Manifest {
            provenance: prov.clone(),
            streams: experts.len(),
            scenes,
            experts: experts.clone(),
        }
        .write(&a.output.join(name))?;
    }
    println!("{} training and {} held-out scenes, {} experts", a.images, a.held_out, experts.len());
    Ok(())
}

fn synth_ivt(a: &SynthIvtArgs, seed: u64, rng: &mut ChaCha8Rng) -> Result<()> {
    let prov = Provenance::for_config(&json!({ "command": "synth-ivt", "seed": seed, "args": settings(a) }));
    create_dir(&a.output)?;
    let mut files = Vec::new();
    for i in 0..a.images {
        let id = format!("img{i:03}");
        for s in 0..a.subjects {
            let mut trace = synth::ivt_trace(a.samples, a.dt_ms, s, rng);
            trace.trajectory.image_id = id.clone();
            let name = log_filename(&id, s);
            write_raw_log(&a.output.join(&name), &trace.trajectory, &prov)?;
            let count = |l: SampleLabel| trace.labels.iter().filter(|x| **x == l).count();
            files.push(json!({
                "file": name,
                "fixations": count(SampleLabel::Fixation),
                "saccades": count(SampleLabel::Saccade),
            }));
        }
    }
    let manifest = json!({ "provenance": prov, "dt_ms": a.dt_ms, "files": files });
    let path = a.output.join("labels.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    println!("{} logs", files.len());
    Ok(())
}

fn synth_attractor(a: &SynthAttractorArgs, seed: u64, rng: &mut ChaCha8Rng) -> Result<()> {
    let prov = Provenance::for_config(&json!({ "command": "synth-attractor", "seed": seed, "args": settings(a) }));
    create_dir(&a.output)?;
    let spec = AttractorSpec {
        fixations: a.fixations,
        ..Default::default()
    };
    for i in 0..a.images {
        let id = format!("img{i:03}");
        let corpus = synth::shared_attractor_corpus(a.subjects as usize, &spec, rng)?;
        for (s, fx) in corpus.iter().enumerate() {
            let traj = LabeledTrajectory {
                subject_id: s as u32,
                image_id: id.clone(),
                samples: fx
                    .iter()
                    .enumerate()
                    .map(|(t, p)| LabeledSample {
                        sample: HmSample {
                            t_ms: t as f64 * 1000.0,
                            pos: *p,
                        },
                        label: SampleLabel::Fixation,
                        velocity: None,
                    })
                    .collect(),
            };
            write_labeled(&a.output.join(log_filename(&id, s as u32)), &traj, &prov)?;
        }
    }
    println!("{} images x {} subjects", a.images, a.subjects);
    Ok(())
}
