//! Flat `key = value` configuration files with `#` comments.
//!
//! | key | meaning | default |
//! |-----|---------|---------|
//! | `steps` | diffusion steps T | 100 |
//! | `delta` | stationary noise level | 50/255 |
//! | `schedule` | `linear` or `constant` | linear |
//! | `channels` | base width C | 64 |
//! | `enc_counts`, `dec_counts` | blocks per level, 4 comma-separated values | 14,1,1,1 / 1,1,1,1 |
//! | `mid_count` | middle blocks | 1 |
//! | `time_dim` | time embedding width | 256 |
//! | `cpem_enabled`, `cpem_rcabs`, `cpem_channels`, `cpem_reduction` | conditioning branch | true, 5, 64, 16 |
//! | `scale` | upscaling factor (2 or 4) | 4 |
//! | `iterations`, `batch_size`, `lr_init`, `lr_min`, `beta1`, `beta2`, `weight_decay`, `grad_clip`, `loss_norm`, `patch_size`, `seed` | training | see [`TrainConfig`] |
//! | `gamma` | one weight for all steps, or T comma-separated weights | 1 |
//! | `train_dir` | directory of HR PNGs | required for training |
//! | `out_dir` | checkpoints and trace | `runs` |
//! | `checkpoint_every` | iterations between checkpoints, 0 = only at the end | 0 |
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cpem::CpemConfig;
use crate::eanet::EanetConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::schedule::{NoiseSchedule, ScheduleShape, DEFAULT_DELTA, DEFAULT_STEPS};
use crate::train::{LossNorm, TrainConfig};

/// Parses `key = value` lines. Duplicate keys are an error.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", no + 1)))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key '{key}'", no + 1)));
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub delta: f64,
    pub shape: ScheduleShape,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { steps: DEFAULT_STEPS, delta: DEFAULT_DELTA, shape: ScheduleShape::default() }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(self.steps, self.delta, self.shape)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub train_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schedule: ScheduleConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            train_dir: None,
            out_dir: PathBuf::from("runs"),
            checkpoint_every: 0,
        }
    }
}

struct Pairs(BTreeMap<String, String>);

impl Pairs {
    fn get<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.0.remove(key) {
            *slot = v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for '{key}'")))?;
        }
        Ok(())
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        self.0
            .remove(key)
            .map(|v| {
                v.split(',')
                    .map(|x| x.trim().parse::<f64>().map_err(|_| Error::Config(format!("bad list entry '{x}' for '{key}'"))))
                    .collect()
            })
            .transpose()
    }

    fn counts(&mut self, key: &str, slot: &mut [usize; 4]) -> Result<()> {
        if let Some(v) = self.list(key)? {
            if v.len() != 4 || v.iter().any(|&x| x < 0.0 || x.fract() != 0.0) {
                return Err(Error::Config(format!("'{key}' needs 4 non-negative integers")));
            }
            for (s, x) in slot.iter_mut().zip(v) {
                *s = x as usize;
            }
        }
        Ok(())
    }
}

impl RunConfig {
    /// Parses config text; relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut p = Pairs(parse_pairs(text)?);
        let mut c = RunConfig::default();
        let s = &mut c.schedule;
        p.get("steps", &mut s.steps)?;
        p.get("delta", &mut s.delta)?;
        p.get("schedule", &mut s.shape)?;
        apply_model(&mut p, &mut c.model)?;
        let t = &mut c.train;
        p.get("iterations", &mut t.iterations)?;
        p.get("batch_size", &mut t.batch_size)?;
        p.get("lr_init", &mut t.lr_init)?;
        p.get("lr_min", &mut t.lr_min)?;
        p.get("beta1", &mut t.beta1)?;
        p.get("beta2", &mut t.beta2)?;
        p.get("weight_decay", &mut t.weight_decay)?;
        p.get("grad_clip", &mut t.grad_clip)?;
        p.get("seed", &mut t.seed)?;
        let mut norm = LossNorm::default();
        p.get("loss_norm", &mut norm)?;
        t.loss_norm = norm;
        let mut patch = 0usize;
        p.get("patch_size", &mut patch)?;
        t.patch_size = (patch > 0).then_some(patch);
        if let Some(g) = p.list("gamma")? {
            t.gamma = match g.as_slice() {
                [one] => vec![*one; c.schedule.steps],
                _ if g.len() == c.schedule.steps => g,
                _ => return Err(Error::Config(format!("gamma has {} entries, expected 1 or {}", g.len(), c.schedule.steps))),
            };
        }
        let mut train_dir = String::new();
        p.get("train_dir", &mut train_dir)?;
        c.train_dir = (!train_dir.is_empty()).then(|| base.join(train_dir));
        let mut out_dir = String::from("runs");
        p.get("out_dir", &mut out_dir)?;
        c.out_dir = base.join(out_dir);
        p.get("checkpoint_every", &mut c.checkpoint_every)?;
        if let Some(k) = p.0.keys().next() {
            return Err(Error::Config(format!("unknown key '{k}'")));
        }
        c.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        c.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        c.schedule.build().map_err(|e| Error::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Architecture and schedule as config text; enough to rebuild a
    /// sampler from a checkpoint alone.
    pub fn echo(&self) -> String {
        echo(&self.model, &self.schedule)
    }
}

fn apply_model(p: &mut Pairs, m: &mut ModelConfig) -> Result<()> {
    let e: &mut EanetConfig = &mut m.eanet;
    p.get("channels", &mut e.base_channels)?;
    p.counts("enc_counts", &mut e.enc_counts)?;
    p.counts("dec_counts", &mut e.dec_counts)?;
    p.get("mid_count", &mut e.mid_count)?;
    p.get("time_dim", &mut e.time_dim)?;
    let c: &mut CpemConfig = &mut m.cpem;
    p.get("cpem_enabled", &mut c.enabled)?;
    p.get("cpem_rcabs", &mut c.n_rcab)?;
    p.get("cpem_channels", &mut c.channels)?;
    p.get("cpem_reduction", &mut c.ca_reduction)?;
    p.get("scale", &mut c.scale)?;
    Ok(())
}

pub fn echo(model: &ModelConfig, schedule: &ScheduleConfig) -> String {
    format!(
        "{}steps = {}\ndelta = {:?}\nschedule = {}\n",
        model.echo(),
        schedule.steps,
        schedule.delta,
        schedule.shape
    )
}

/// Recovers model and schedule settings from a checkpoint echo.
pub fn parse_echo(text: &str) -> Result<(ModelConfig, ScheduleConfig)> {
    let mut p = Pairs(parse_pairs(text)?);
    let mut model = ModelConfig::default();
    let mut sched = ScheduleConfig::default();
    apply_model(&mut p, &mut model)?;
    p.get("steps", &mut sched.steps)?;
    p.get("delta", &mut sched.delta)?;
    p.get("schedule", &mut sched.shape)?;
    if let Some(k) = p.0.keys().next() {
        return Err(Error::Config(format!("unknown key '{k}' in checkpoint echo")));
    }
    model.validate()?;
    Ok((model, sched))
}
