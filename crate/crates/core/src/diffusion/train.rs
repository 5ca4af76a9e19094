use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{round_to_f32, Example, GradFault, Model};
use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Validation loss is computed every this many steps (0 disables).
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn toy() -> Self {
        Self { steps: 2000, batch_size: 16, lr: 1e-3, seed: 0, eval_every: 250 }
    }

    /// Learning rate suited to large pretrained text features.
    pub fn full_scale() -> Self {
        Self { lr: 1e-6, ..Self::toy() }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / b1t;
            let vh = self.v[i] / b2t;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// A tokenized description with its normalized pose target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub tokens: Vec<usize>,
    pub x0: [f64; 4],
}

pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    rng: ChaCha8Rng,
    grad: Vec<f64>,
    step: usize,
}

impl Trainer {
    pub fn new(model: Model, lr: f64, seed: u64) -> Self {
        let n = model.num_params();
        Self { model, adam: Adam::new(n, lr), rng: ChaCha8Rng::seed_from_u64(seed), grad: vec![0.0; n], step: 0 }
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Draws a timestep and a noise vector for each item.
    pub fn draw_examples(&mut self, items: &[&TrainItem]) -> Vec<Example> {
        let t_max = self.model.schedule.steps();
        items
            .iter()
            .map(|it| {
                let t = self.rng.random_range(1..=t_max);
                let eps = std::array::from_fn(|_| self.rng.sample(StandardNormal));
                Example { tokens: it.tokens.clone(), x0: it.x0, t, eps }
            })
            .collect()
    }

    /// One optimizer step on `items` with fresh noise.
    pub fn training_step(&mut self, items: &[&TrainItem]) -> Result<f64, ModelError> {
        if items.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let batch = self.draw_examples(items);
        self.step_fixed(&batch)
    }

    /// One optimizer step on examples whose noise is already fixed.
    pub fn step_fixed(&mut self, batch: &[Example]) -> Result<f64, ModelError> {
        let loss = self.model.batch_loss(batch, Some(&mut self.grad), GradFault::None)?;
        self.step += 1;
        if !loss.is_finite() {
            return Err(ModelError::Diverged { step: self.step, detail: format!("loss is {loss}") });
        }
        if let Some(i) = self.grad.iter().position(|g| !g.is_finite()) {
            let name = self
                .model
                .layout
                .tensors
                .iter()
                .find(|t| (t.offset..t.offset + t.len()).contains(&i))
                .map(|t| t.name.clone())
                .unwrap_or_default();
            return Err(ModelError::Diverged { step: self.step, detail: format!("non-finite gradient in `{name}`") });
        }
        self.adam.step(&mut self.model.params, &self.grad);
        round_to_f32(&mut self.model.params);
        Ok(loss)
    }
}

/// Fixed-noise examples for measuring validation loss reproducibly.
pub fn fixed_examples(items: &[TrainItem], t_max: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items
        .iter()
        .map(|it| {
            let t = rng.random_range(1..=t_max);
            let eps = std::array::from_fn(|_| rng.sample(StandardNormal));
            Example { tokens: it.tokens.clone(), x0: it.x0, t, eps }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    /// (step, validation ε-MSE); step 0 is before any update.
    pub val_losses: Vec<(usize, f64)>,
}

/// Runs `cfg.steps` steps, sampling batches uniformly with replacement.
/// Writes `step,loss,lr,wall_time_s` rows to `log` when given.
pub fn train(
    model: Model,
    data: &[TrainItem],
    val: &[Example],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<(Model, TrainReport), ModelError> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(ModelError::Config("batch size and learning rate must be positive".into()));
    }
    let io = |e: std::io::Error| ModelError::Io { path: "<training log>".into(), source: e };
    if let Some(w) = log.as_deref_mut() {
        writeln!(w, "step,loss,lr,wall_time_s").map_err(io)?;
    }
    let start = Instant::now();
    let mut trainer = Trainer::new(model, cfg.lr, cfg.seed);
    let mut pick = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_BA7C);
    let mut report = TrainReport { losses: Vec::with_capacity(cfg.steps), val_losses: Vec::new() };
    let eval = |m: &Model| if val.is_empty() { Ok(f64::NAN) } else { m.batch_loss(val, None, GradFault::None) };
    if cfg.eval_every > 0 && !val.is_empty() {
        report.val_losses.push((0, eval(&trainer.model)?));
    }
    for step in 1..=cfg.steps {
        let items: Vec<&TrainItem> = (0..cfg.batch_size).map(|_| &data[pick.random_range(0..data.len())]).collect();
        let loss = trainer.training_step(&items)?;
        report.losses.push(loss);
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{step},{loss},{},{:.3}", cfg.lr, start.elapsed().as_secs_f64()).map_err(io)?;
        }
        if cfg.eval_every > 0 && !val.is_empty() && (step % cfg.eval_every == 0 || step == cfg.steps) {
            report.val_losses.push((step, eval(&trainer.model)?));
        }
    }
    Ok((trainer.model, report))
}
