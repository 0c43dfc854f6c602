use serde::Serialize;
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, evaluate_toy, fid, gaussianity_sweep, sha256_hex, sweep_csv, train_feature_extractor, train_toy,
    FeatureExtractor, MetricsReport,
};
use crate::motion::{synth_dataset, Dataset, NormStats, Skeleton, CLASS_NAMES};
use crate::sampler::{clips_to_dataset, positions_csv, Guidance, Sampler};
use crate::schedule::Schedule;
use crate::training::{loss_csv, LossRow, TrainState, LOSS_CSV_HEADER};

pub const DATASET_FILE: &str = "dataset.emdm";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.json";

pub const STEPS_SWEEP: [usize; 5] = [1, 5, 10, 20, 50];
pub const R_SWEEP: [f64; 5] = [0.0, 1.0, 10.0, 100.0, 1000.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    StepsSweep,
    RSweep,
}

fn prepare(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_json()?)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Config, then the payload, in one JSON object.
fn with_config<T: Serialize>(cfg: &RunConfig, key: &str, value: &T) -> Result<serde_json::Value> {
    let mut obj = serde_json::Map::new();
    obj.insert("config".into(), serde_json::to_value(cfg)?);
    obj.insert(key.into(), serde_json::to_value(value)?);
    Ok(serde_json::Value::Object(obj))
}

pub fn make_data(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dir = cfg.run_dir();
    prepare(&dir, cfg)?;
    let ds = synth_dataset(&cfg.data)?;
    let path = dir.join(DATASET_FILE);
    ds.write(&path)?;
    Ok(vec![path, dir.join(CONFIG_FILE)])
}

/// Earlier rows of an existing loss log, kept when resuming.
fn previous_rows(path: &Path, before: usize) -> Result<String> {
    let Ok(text) = fs::read_to_string(path) else { return Ok(String::new()) };
    let mut kept = String::new();
    for line in text.lines().skip(1) {
        let epoch: usize = line
            .split(',')
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| Error::Integrity(format!("bad loss row {:?}", line)))?;
        if epoch < before {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    Ok(kept)
}

/// Train one model into `dir`, writing the loss log after every epoch and
/// periodic plus final checkpoints.
fn train_into(dir: &Path, cfg: &RunConfig, data: &Dataset, resume: Option<&Path>) -> Result<TrainState> {
    let mut state = match resume {
        Some(p) => TrainState::load(p)?,
        None => TrainState::new(cfg.train.clone(), data)?,
    };
    let loss_path = dir.join(LOSS_FILE);
    let head = if resume.is_some() { previous_rows(&loss_path, state.epoch)? } else { String::new() };
    let mut rows: Vec<LossRow> = Vec::new();
    let every = state.config.checkpoint_every;
    let result = (|| -> Result<()> {
        while !state.is_finished() {
            rows.push(state.run_epoch(data)?);
            let body = loss_csv(&rows);
            fs::write(&loss_path, format!("{}\n{}{}", LOSS_CSV_HEADER, head, &body[LOSS_CSV_HEADER.len() + 1..]))?;
            if every > 0 && state.epoch % every == 0 {
                state.save(dir.join(format!("checkpoint_e{:04}.ckpt", state.epoch)))?;
            }
        }
        Ok(())
    })();
    if rows.is_empty() && head.is_empty() {
        fs::write(&loss_path, format!("{}\n", LOSS_CSV_HEADER))?;
    }
    result?;
    state.save(dir.join(CHECKPOINT_FILE))?;
    Ok(state)
}

/// Extractor trained on the full dataset, plus the FID between its two
/// alternating halves as the same-distribution floor.
pub fn extractor_and_floor(cfg: &RunConfig, data: &Dataset) -> Result<(FeatureExtractor, f64)> {
    let ex = train_feature_extractor(data, &cfg.extractor, cfg.eval.seed)?;
    let (a, b) = data.split_alternate();
    let floor = fid(&ex.dataset_features(&a)?.0, &ex.dataset_features(&b)?.0)?;
    Ok((ex, floor))
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    parameter: &'a str,
    real_split_fid: f64,
    rows: Vec<(f64, MetricsReport)>,
}

pub fn train(cfg: &RunConfig, data_path: &Path, preset: Option<Preset>, resume: Option<&Path>) -> Result<Vec<PathBuf>> {
    if preset.is_some() && resume.is_some() {
        return Err(Error::Config("--resume cannot be combined with a preset".into()));
    }
    let data = Dataset::read(data_path)?;
    let dir = cfg.run_dir();
    prepare(&dir, cfg)?;
    let Some(preset) = preset else {
        train_into(&dir, cfg, &data, resume)?;
        return Ok(vec![dir.join(CHECKPOINT_FILE), dir.join(LOSS_FILE), dir.join(CONFIG_FILE)]);
    };
    let (ex, floor) = extractor_and_floor(cfg, &data)?;
    let (parameter, values): (&str, Vec<f64>) = match preset {
        Preset::StepsSweep => ("steps", STEPS_SWEEP.iter().map(|&t| t as f64).collect()),
        Preset::RSweep => ("geo_weight", R_SWEEP.to_vec()),
    };
    let mut out = Vec::new();
    let mut summary = SweepSummary { parameter, real_split_fid: floor, rows: Vec::new() };
    for v in values {
        let mut run = cfg.clone();
        let sub = match preset {
            Preset::StepsSweep => {
                run.train.steps = v as usize;
                format!("T{}", v as usize)
            }
            Preset::RSweep => {
                run.train.geo_weight = v;
                format!("R{}", v)
            }
        };
        let sub_dir = dir.join(sub);
        prepare(&sub_dir, &run)?;
        let state = train_into(&sub_dir, &run, &data, None)?;
        let report = evaluate(&state, &data, &ex, &run.eval)?;
        let report_path = sub_dir.join("report.json");
        write_json(&report_path, &with_config(&run, "metrics", &report)?)?;
        out.push(sub_dir.join(CHECKPOINT_FILE));
        out.push(report_path);
        summary.rows.push((v, report));
    }
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &with_config(cfg, "summary", &summary)?)?;
    out.push(summary_path);
    Ok(out)
}

pub fn sample(cfg: &RunConfig, checkpoint: &Path) -> Result<Vec<PathBuf>> {
    let state = TrainState::load(checkpoint)?;
    let dir = cfg.run_dir();
    prepare(&dir, cfg)?;
    let sampler = Sampler::from_state(&state, cfg.sample.use_ema);
    let out = sampler.sample_request(&cfg.sample)?;
    let clips_path = dir.join("samples.emdm");
    clips_to_dataset(&state.model, &out.clips)?.write(&clips_path)?;
    let csv_path = dir.join("positions.csv");
    fs::write(&csv_path, positions_csv(&state.model, &out.clips)?)?;
    let meta_path = dir.join("sample.json");
    let meta = json!({
        "config": cfg,
        "checkpoint_hash": sha256_hex(&fs::read(checkpoint)?),
        "steps": state.model.schedule.steps(),
        "generator_calls": sampler.generator_calls(),
        "timing": out.timing,
    });
    write_json(&meta_path, &meta)?;
    Ok(vec![clips_path, csv_path, meta_path])
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, data_path: &Path) -> Result<Vec<PathBuf>> {
    let state = TrainState::load(checkpoint)?;
    let data = Dataset::read(data_path)?;
    let dir = cfg.run_dir();
    prepare(&dir, cfg)?;
    let (ex, floor) = extractor_and_floor(cfg, &data)?;
    let report = evaluate(&state, &data, &ex, &cfg.eval)?;
    let path = dir.join("metrics.json");
    let mut value = with_config(cfg, "metrics", &report)?;
    value["real_split_fid"] = json!(floor);
    write_json(&path, &value)?;
    Ok(vec![path])
}

pub fn toy_posterior(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let study = &cfg.posterior;
    let dir = cfg.run_dir();
    prepare(&dir, cfg)?;
    let sched = Schedule::for_analysis(study.chain_steps, study.schedule)?;
    let rows = gaussianity_sweep(&study.prior, &sched, study.from, study.x_t, &study.step_sizes)?;
    let csv_path = dir.join("gaussianity.csv");
    fs::write(&csv_path, sweep_csv(&rows))?;
    let mut out = vec![csv_path, dir.join(CONFIG_FILE)];
    if study.train_gan {
        let toy = train_toy(&cfg.toy)?;
        let mut report = evaluate_toy(&toy, &cfg.toy)?;
        report.samples.clear();
        let path = dir.join("toy.json");
        write_json(&path, &with_config(cfg, "toy", &report)?)?;
        out.push(path);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub steps: usize,
    pub ms_per_frame: f64,
    pub per_step_ms: Vec<f64>,
}

/// Times one batch per sampler per round, for `repeats` rounds. Each step
/// keeps its fastest time over the rounds, as does the work outside the
/// steps, so short and long chains are estimated at the same granularity.
/// Interleaving spreads slow stretches of the machine over every sampler.
pub fn time_samplers(samplers: &[Sampler], count: usize, repeats: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let labels = vec![Some(0); count];
    let mut best: Vec<Option<(Vec<f64>, f64, f64)>> = vec![None; samplers.len()];
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    for _ in 0..repeats {
        for (slot, sampler) in best.iter_mut().zip(samplers) {
            let t = sampler.sample(&labels, Guidance::Conditional, &mut rng)?.timing;
            let frames = t.total_ms / t.ms_per_frame;
            let outside = t.total_ms - t.per_step_ms.iter().sum::<f64>();
            match slot {
                None => *slot = Some((t.per_step_ms, outside, frames)),
                Some((steps, rest, _)) => {
                    for (b, x) in steps.iter_mut().zip(&t.per_step_ms) {
                        *b = b.min(*x);
                    }
                    *rest = rest.min(outside);
                }
            }
        }
    }
    Ok(samplers
        .iter()
        .zip(best)
        .map(|(s, b)| {
            let (per_step_ms, rest, frames) = b.expect("repeats is positive");
            let total: f64 = per_step_ms.iter().sum::<f64>() + rest;
            BenchRow { steps: s.model.schedule.steps(), ms_per_frame: total / frames, per_step_ms }
        })
        .collect())
}

/// An untrained model with the configured data layout, for timing only.
fn layout_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let skeleton = Skeleton::biped(&cfg.data.biped)?;
    let dim = skeleton.frame_dim();
    Ok(Dataset {
        skeleton,
        class_names: CLASS_NAMES[..cfg.data.classes].iter().map(|s| s.to_string()).collect(),
        frames: cfg.data.frames,
        fps: cfg.data.fps,
        stats: NormStats::identity(dim),
        samples: Vec::new(),
    })
}

pub fn benchmark(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<PathBuf>> {
    let bench = &cfg.benchmark;
    let dir = cfg.run_dir();
    prepare(&dir, cfg)?;
    let rows;
    match checkpoint {
        Some(p) => {
            let state = TrainState::load(p)?;
            rows = time_samplers(&[Sampler::from_state(&state, true)], bench.count, bench.repeats, bench.seed)?;
        }
        None => {
            let layout = layout_dataset(cfg)?;
            let mut states = Vec::new();
            for &t in &bench.steps {
                let mut tc = cfg.train.clone();
                tc.steps = t;
                states.push(TrainState::new(tc, &layout)?);
            }
            let samplers: Vec<Sampler> = states.iter().map(|s| Sampler::from_state(s, true)).collect();
            rows = time_samplers(&samplers, bench.count, bench.repeats, bench.seed)?;
        }
    }
    let path = dir.join("benchmark.json");
    write_json(&path, &with_config(cfg, "rows", &rows)?)?;
    Ok(vec![path])
}
