//! Supervised training: AdamW with decoupled weight decay, warmup + cosine
//! schedule, label smoothing, EMA of weights, and top-1 evaluation.

mod data;

pub use data::{
    make_synthetic, quadrant_dataset, quadrant_label, Dataset, DatasetKind, DatasetSpec, ShiftPairs, Synthetic,
};

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tape};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, Model};
use crate::tensor::{Real, Tensor};

/// Optimisation hyperparameters. `Default` holds the full-scale recipe;
/// [`TrainConfig::desk`] the small-batch variant used for synthetic tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    pub betas: [f64; 2],
    pub adam_eps: f64,
    pub label_smoothing: f64,
    pub ema_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 1024,
            lr_max: 0.004,
            lr_min: 0.0004,
            weight_decay: 0.025,
            warmup_iters: 3000,
            betas: [0.9, 0.999],
            adam_eps: 1e-8,
            label_smoothing: 0.1,
            ema_decay: 0.9995,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Batch 64, 300 warmup iterations, 30 epochs; EMA decay shortened to
    /// 0.995 so the shadow tracks runs of a few thousand steps.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            warmup_iters: 300,
            ema_decay: 0.995,
            ..TrainConfig::default()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("{key} {why}")));
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(0.0 <= self.lr_min && self.lr_min <= self.lr_max) {
            return bad("lr_min", "must lie in [0, lr_max]");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay", "must lie in [0, 1)");
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return bad("betas", "must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("adam_eps/weight_decay", "must be positive / non-negative");
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr_max` over `warmup` steps, then cosine decay
/// to `lr_min` at `total`.
pub fn cosine_lr(step: usize, total: usize, warmup: usize, lr_max: f64, lr_min: f64) -> f64 {
    if step < warmup {
        return lr_max * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return lr_min;
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// `(1 − ε)·onehot(label) + ε/K`.
pub fn label_smoothing_targets(label: usize, k: usize, eps: f64) -> Result<Vec<f64>> {
    if label >= k {
        return Err(Error::Argument(format!("label {label} out of range for {k} classes")));
    }
    Ok((0..k)
        .map(|i| if i == label { 1.0 - eps } else { 0.0 } + eps / k as f64)
        .collect())
}

/// N×K smoothed target matrix for a batch of labels.
pub fn smoothed_targets<T: Real>(labels: &[u32], k: usize, eps: f64) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(labels.len() * k);
    for &l in labels {
        data.extend(label_smoothing_targets(l as usize, k, eps)?.into_iter().map(T::lit));
    }
    Tensor::new(vec![labels.len(), k], data)
}

/// `shadow ← decay·shadow + (1 − decay)·params`, elementwise.
pub fn ema_update<T: Real>(shadow: &mut ParamStore<T>, params: &ParamStore<T>, decay: f64) -> Result<()> {
    let d = T::lit(decay);
    let rest = T::lit(1.0 - decay);
    for (name, s) in shadow.iter_mut() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::Schema(format!("EMA shadow has `{name}` but parameters do not")))?;
        if p.dims() != s.dims() {
            return Err(Error::shape(format!("EMA `{name}`: dims {:?} vs {:?}", s.dims(), p.dims())));
        }
        for (a, &b) in s.data_mut().iter_mut().zip(p.data()) {
            *a = d * *a + rest * b;
        }
    }
    Ok(())
}

/// AdamW moment buffers and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

/// Per-step AdamW settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub eps: f64,
}

/// One AdamW step: `p ← p − lr·wd·p`, then `p ← p − lr·m̂/(√v̂ + eps)` with
/// bias-corrected moments. A non-finite gradient aborts before anything is
/// modified.
pub fn adamw_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    opt: AdamW,
) -> Result<()> {
    for (name, p) in params.iter() {
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Schema(format!("no gradient for `{name}`")))?;
        if g.dims() != p.dims() {
            return Err(Error::shape(format!("gradient `{name}`: dims {:?} vs {:?}", g.dims(), p.dims())));
        }
        if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient {name}[{i}] is {}", g.data()[i])));
        }
    }
    state.t += 1;
    let [b1, b2] = opt.betas;
    let t = state.t as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, decay) = (T::lit(opt.lr), T::lit(1.0 - opt.lr * opt.weight_decay));
    let (b1t, b2t) = (T::lit(b1), T::lit(b2));
    let (one_b1, one_b2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
    let (c1t, c2t, eps) = (T::lit(c1), T::lit(c2), T::lit(opt.eps));
    for (name, p) in params.iter_mut() {
        let g = &grads[name];
        let m = state.m.get_mut(name).expect("moments share names");
        let v_store = &mut state.v;
        let v = v_store.get_mut(name).expect("moments share names");
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            *mi = b1t * *mi + one_b1 * gi;
            *vi = b2t * *vi + one_b2 * gi * gi;
            let m_hat = *mi / c1t;
            let v_hat = *vi / c2t;
            *pi = *pi * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Index of the largest logit in each row.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let [n, k] = *logits.dims() else {
        return Err(Error::shape(format!("expected N×K logits, got dims {:?}", logits.dims())));
    };
    Ok((0..n)
        .map(|i| {
            let row = &logits.data()[i * k..(i + 1) * k];
            (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect())
}

/// Top-1 accuracy of `model` with weights `params` over `data`.
pub fn evaluate(model: &Model, params: &ParamStore<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Argument("cannot evaluate on an empty dataset".into()));
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch(chunk)?;
        let pred = argmax_rows(&model.forward_with(params, &x)?)?;
        correct += pred.iter().zip(&labels).filter(|(p, l)| **p == **l as usize).count();
    }
    Ok(correct as f64 / data.len() as f64)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub epoch: usize,
}

/// Appends `step,lr,loss,epoch` rows, writing the header into empty files.
pub struct CsvLog<W: Write> {
    out: W,
}

impl<W: Write> CsvLog<W> {
    pub fn new(mut out: W, write_header: bool) -> std::io::Result<Self> {
        if write_header {
            writeln!(out, "step,lr,loss,epoch")?;
        }
        Ok(CsvLog { out })
    }

    pub fn row(&mut self, r: &LogRow) -> std::io::Result<()> {
        writeln!(self.out, "{},{},{},{}", r.step, r.lr, r.loss, r.epoch)
    }
}

/// Opens `path` for appending, adding the header when the file is new.
pub fn open_log(path: impl AsRef<Path>) -> Result<CsvLog<std::fs::File>> {
    let path = path.as_ref();
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    CsvLog::new(f, fresh).map_err(|e| Error::io(path, e))
}

/// Trains `model` in place and returns a checkpoint holding the final
/// weights, AdamW moments and EMA shadow. `on_step` sees every log row.
pub fn train(
    model: &mut Model,
    config: &TrainConfig,
    data: &Dataset,
    mut on_step: impl FnMut(&LogRow) -> Result<()>,
) -> Result<Checkpoint> {
    config.validate()?;
    let k = model.config().num_classes;
    if let Some(&bad) = data.labels.iter().find(|&&l| l as usize >= k) {
        return Err(Error::Argument(format!("label {bad} out of range for {k} classes")));
    }
    if data.is_empty() {
        return Err(Error::Argument("cannot train on an empty dataset".into()));
    }
    let steps_per_epoch = data.len().div_ceil(config.batch_size);
    let total = steps_per_epoch * config.epochs;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = model.params().clone();
    let mut state = AdamState::new(&params);
    let mut ema = params.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let (x, labels) = data.batch(chunk)?;
            let target = smoothed_targets::<f32>(&labels, k, config.label_smoothing)?;
            let mut tape = Tape::new();
            tape.bind(&params)?;
            let xv = tape.constant(x);
            let logits = model.forward_tape(&mut tape, xv)?;
            let loss = tape.softmax_cross_entropy(logits, &target)?;
            let loss_value = tape.value(loss).data()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Divergence {
                    iteration: step,
                    loss: loss_value,
                });
            }
            let grads = tape.backward(loss)?.into_params();
            let lr = cosine_lr(step, total, config.warmup_iters, config.lr_max, config.lr_min);
            let opt = AdamW {
                lr,
                weight_decay: config.weight_decay,
                betas: config.betas,
                eps: config.adam_eps,
            };
            adamw_step(&mut params, &grads, &mut state, opt).map_err(|e| match e {
                Error::NonFinite(m) => Error::NonFinite(format!("iteration {step}: {m}")),
                other => other,
            })?;
            ema_update(&mut ema, &params, config.ema_decay)?;
            on_step(&LogRow {
                step,
                lr,
                loss: loss_value,
                epoch,
            })?;
            step += 1;
        }
    }

    model.set_params(params)?;
    Ok(Checkpoint {
        config: model.config().clone(),
        params: model.params().clone(),
        adam_m: Some(state.m),
        adam_v: Some(state.v),
        ema: Some(ema),
        step: step as u32,
    })
}
