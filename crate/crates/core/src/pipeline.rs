//! File-level workflows behind the command-line tool: training from a config
//! file, super-resolving PNGs with a checkpoint, and scoring directories.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Denoiser;
use crate::nn::{ParamStore, Tensor};
use crate::sampling::{sample_sr, ModelPredictor, SampleConfig};
use crate::schedule::NoiseSchedule;
use crate::toolkit::config::{parse_echo, RunConfig};
use crate::toolkit::image_io::{list_pngs, read_png, write_png};
use crate::toolkit::{MetricReport, PairedDataset};
use crate::train::{load_params, write_trace, Checkpoint, TraceRow, Trainer};

pub const TRACE_FILE: &str = "trace.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration:07}.ckpt")
}

/// Trains as described by `config`, optionally continuing from `resume`.
/// Appends to `trace.csv` and writes checkpoints into the output directory.
pub fn train(
    config: &RunConfig,
    resume: Option<&Path>,
    mut progress: impl FnMut(&TraceRow),
) -> Result<Vec<TraceRow>> {
    let train_dir = config.train_dir.as_ref().ok_or_else(|| Error::Config("'train_dir' is not set".into()))?;
    let data = PairedDataset::<f32>::load_dir(train_dir, config.model.scale())?;
    let schedule = config.schedule.build()?;
    let echo = config.echo();
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            Trainer::from_checkpoint(&config.model, config.train.clone(), schedule, &echo, &ckpt)?
        }
        None => Trainer::new(&config.model, config.train.clone(), schedule)?,
    };
    let out = &config.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let trace_path = out.join(TRACE_FILE);
    let fresh = resume.is_none() || !trace_path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh)
        .truncate(fresh)
        .open(&trace_path)
        .map_err(|e| Error::io(&trace_path, e))?;
    let mut trace = std::io::BufWriter::new(file);
    if fresh {
        write_trace(&mut trace, &[], true)?;
    }
    let every = config.checkpoint_every;
    let rows = trainer.run(&data, |t, row| {
        write_trace(&mut trace, std::slice::from_ref(row), false)?;
        progress(row);
        if every > 0 && t.iteration % every == 0 {
            t.checkpoint(&echo).save(&out.join(checkpoint_name(t.iteration)))?;
        }
        Ok(())
    })?;
    trainer.checkpoint(&echo).save(&out.join(FINAL_CHECKPOINT))?;
    Ok(rows)
}

/// A denoiser, its weights and the schedule it was trained with.
pub struct LoadedModel {
    pub model: Denoiser,
    pub store: ParamStore<f32>,
    pub schedule: NoiseSchedule,
}

impl LoadedModel {
    pub fn from_checkpoint(ckpt: &Checkpoint<f32>) -> Result<Self> {
        let (model_cfg, sched_cfg) = parse_echo(&ckpt.config_echo)?;
        let mut store = ParamStore::new();
        let model = Denoiser::new(&model_cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
        load_params(&mut store, ckpt)?;
        Ok(LoadedModel { model, store, schedule: sched_cfg.build()? })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn upscale(&self, lr: &Tensor<f32>, config: &SampleConfig) -> Result<Tensor<f32>> {
        let p = ModelPredictor { model: &self.model, store: &self.store };
        sample_sr(&p, &self.schedule, lr, config)
    }
}

/// PNG inputs named by `input`: the file itself or every PNG in a directory.
pub fn input_pngs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        list_pngs(input)
    } else if input.is_file() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(Error::io(input, std::io::Error::from(std::io::ErrorKind::NotFound)))
    }
}

/// Super-resolves every input PNG into `out_dir` under the same file name.
/// Image `i` uses seed `config.seed + i`.
pub fn sample_files(model: &LoadedModel, inputs: &[PathBuf], out_dir: &Path, config: &SampleConfig) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::with_capacity(inputs.len());
    for (i, path) in inputs.iter().enumerate() {
        let lr = read_png::<f32>(path)?;
        let cfg = SampleConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        let sr = model.upscale(&lr, &cfg).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let dst = out_dir.join(path.file_name().unwrap_or_default());
        write_png(&dst, &sr, 0)?;
        written.push(dst);
    }
    Ok(written)
}

/// Files present in only one of two directories.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Unpaired {
    pub only_pred: Vec<String>,
    pub only_gt: Vec<String>,
}

fn png_names(dir: &Path) -> Result<Vec<String>> {
    Ok(list_pngs(dir)?.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect())
}

/// Pairs PNGs by file name and scores each prediction against its ground
/// truth. Returns `Err(Unpaired)` inside `Ok` when the directories differ.
pub fn evaluate_dirs(pred: &Path, gt: &Path) -> Result<std::result::Result<MetricReport, Unpaired>> {
    let (p, g) = (png_names(pred)?, png_names(gt)?);
    let only_pred: Vec<String> = p.iter().filter(|n| !g.contains(n)).cloned().collect();
    let only_gt: Vec<String> = g.iter().filter(|n| !p.contains(n)).cloned().collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        return Ok(Err(Unpaired { only_pred, only_gt }));
    }
    let mut report = MetricReport::default();
    for name in &p {
        let a = read_png::<f64>(&pred.join(name))?;
        let b = read_png::<f64>(&gt.join(name))?;
        report.push(name.clone(), &a, &b).map_err(|e| Error::invalid(format!("{name}: {e}")))?;
    }
    Ok(Ok(report))
}
