//! Maximum-likelihood training: loss, optimizer, checkpoints and the loop.

pub mod checkpoint;
pub mod loss;
pub mod optim;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{Checkpoint, RngState};
pub use loss::{compute_ml_loss, loss_from_prediction, prepare_targets, Batch, LossNorm, LossTargets};
pub use optim::{adamw_step, clip_grad_norm, cosine_lr, AdamHyper, AdamState};

use crate::error::{ensure, Error, Result};
use crate::model::{Denoiser, ModelConfig};
use crate::nn::{Graph, ParamStore};
use crate::schedule::NoiseSchedule;
use crate::toolkit::dataset::PairedDataset;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    /// Per-step loss weights indexed by `t − 1`; empty means all ones.
    pub gamma: Vec<f64>,
    /// Maximum global gradient norm; `0` disables clipping.
    pub grad_clip: f64,
    pub loss_norm: LossNorm,
    /// Square HR crop side; `None` trains on whole images.
    pub patch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 4,
            lr_init: 4e-5,
            lr_min: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            gamma: Vec::new(),
            grad_clip: 1.0,
            loss_norm: LossNorm::L1,
            patch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr_min > 0.0 && self.lr_min <= self.lr_init, "need 0 < lr_min <= lr_init");
        ensure!(self.beta1 > 0.0 && self.beta1 < 1.0, "beta1 must lie in (0, 1)");
        ensure!(self.beta2 > 0.0 && self.beta2 < 1.0, "beta2 must lie in (0, 1)");
        ensure!(self.batch_size >= 1, "batch_size must be >= 1");
        ensure!(self.weight_decay >= 0.0 && self.grad_clip >= 0.0, "weight_decay and grad_clip must be >= 0");
        ensure!(self.gamma.iter().all(|&g| g > 0.0), "gamma weights must be positive");
        Ok(())
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper { beta1: self.beta1, beta2: self.beta2, weight_decay: self.weight_decay }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Model, parameters, optimizer state and the training generator.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub schedule: NoiseSchedule,
    pub model: Denoiser,
    pub store: ParamStore<f32>,
    pub opt: AdamState<f32>,
    pub config: TrainConfig,
    /// Completed updates.
    pub iteration: u64,
    rng: ChaCha8Rng,
}

impl Trainer {
    /// Fresh parameters initialised from `config.seed`.
    pub fn new(model_config: &ModelConfig, config: TrainConfig, schedule: NoiseSchedule) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let model = Denoiser::new(model_config, &mut store, &mut init)?;
        let opt = AdamState::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Trainer { schedule, model, store, opt, config, iteration: 0, rng })
    }

    /// Rebuilds a trainer from `ckpt`, which must match `echo`.
    pub fn from_checkpoint(
        model_config: &ModelConfig,
        config: TrainConfig,
        schedule: NoiseSchedule,
        echo: &str,
        ckpt: &Checkpoint<f32>,
    ) -> Result<Self> {
        ckpt.check_echo(echo)?;
        let mut t = Trainer::new(model_config, config, schedule)?;
        load_params(&mut t.store, ckpt)?;
        for (i, (_, p)) in t.store.iter().enumerate() {
            for (prefix, slot) in [(checkpoint::MOMENT1_PREFIX, &mut t.opt.m[i]), (checkpoint::MOMENT2_PREFIX, &mut t.opt.v[i])] {
                let name = format!("{prefix}{}", p.name);
                let m = ckpt.tensor(&name).ok_or_else(|| Error::Checkpoint(format!("missing optimizer tensor '{name}'")))?;
                if m.shape() != p.value.shape() {
                    return Err(Error::Checkpoint(format!("optimizer tensor '{name}' has shape {:?}", m.shape())));
                }
                *slot = m.clone();
            }
        }
        t.iteration = ckpt.iteration;
        t.opt.step = ckpt.iteration;
        t.rng = ckpt.rng.restore();
        Ok(t)
    }

    pub fn checkpoint(&self, echo: &str) -> Checkpoint<f32> {
        let mut tensors: Vec<_> = self.store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect();
        for (i, (_, p)) in self.store.iter().enumerate() {
            tensors.push((format!("{}{}", checkpoint::MOMENT1_PREFIX, p.name), self.opt.m[i].clone()));
            tensors.push((format!("{}{}", checkpoint::MOMENT2_PREFIX, p.name), self.opt.v[i].clone()));
        }
        Checkpoint { config_echo: echo.to_string(), tensors, iteration: self.iteration, rng: RngState::capture(&self.rng) }
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.iteration, self.config.iterations, self.config.lr_init, self.config.lr_min)
    }

    /// One update: sample a batch and steps, compute the loss, clip, AdamW.
    pub fn step(&mut self, data: &PairedDataset<f32>) -> Result<TraceRow> {
        let lr = self.lr();
        let batch = data.sample_batch(self.config.batch_size, self.config.patch_size, &mut self.rng)?;
        let steps: Vec<usize> = (0..self.config.batch_size).map(|_| self.rng.random_range(1..=self.schedule.steps())).collect();
        let grads;
        let loss;
        {
            let mut g = Graph::new(&self.store);
            let l = compute_ml_loss(&mut g, &self.model, &self.schedule, &batch, &steps, &self.config.gamma, self.config.loss_norm, &mut self.rng)?;
            loss = g.value(l).data()[0] as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at iteration {}", self.iteration + 1)));
            }
            grads = g.backward(l)?;
        }
        self.store.zero_grad();
        self.store.accumulate(&grads);
        clip_grad_norm(&mut self.store, self.config.grad_clip);
        adamw_step(&mut self.store, &mut self.opt, lr, &self.config.hyper())?;
        self.iteration += 1;
        Ok(TraceRow { iteration: self.iteration, loss, lr })
    }

    /// Steps until `iteration == config.iterations`, calling `on_step` after each.
    pub fn run(&mut self, data: &PairedDataset<f32>, mut on_step: impl FnMut(&Trainer, &TraceRow) -> Result<()>) -> Result<Vec<TraceRow>> {
        let mut trace = Vec::new();
        while self.iteration < self.config.iterations {
            let row = self.step(data)?;
            on_step(self, &row)?;
            trace.push(row);
        }
        Ok(trace)
    }
}

/// Copies parameter values by name from `ckpt` into `store`.
pub fn load_params(store: &mut ParamStore<f32>, ckpt: &Checkpoint<f32>) -> Result<()> {
    for p in store.iter_mut() {
        let t = ckpt.tensor(&p.name).ok_or_else(|| Error::Checkpoint(format!("missing parameter '{}'", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter '{}' has shape {:?}, model expects {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        p.value = t.clone();
    }
    Ok(())
}

/// Appends trace rows as `iteration,loss,lr` CSV.
pub fn write_trace<W: std::io::Write>(out: W, rows: &[TraceRow], header: bool) -> Result<()> {
    let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        wr.write_record(["iteration", "loss", "lr"])?;
    }
    for r in rows {
        wr.write_record([r.iteration.to_string(), r.loss.to_string(), r.lr.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}
