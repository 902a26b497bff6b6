use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::composite::loss_and_grad;
use crate::config::{parse_field, unknown_key, KvConfig};
use crate::error::{Error, Result};
use crate::gauge::{gauge_for, GaugeData};
use crate::neural::{HyperParams, ModelParams};
use crate::oracle::solve_exact;
use crate::problem::{DecisionVector, Objective, ProblemInstance, WastedResource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Mean dispatch objective of the feasible decision; needs no labels.
    Objective,
    /// Mean relative squared distance to the exact optimum.
    Supervised,
}

impl FromStr for LossMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "objective" => Ok(LossMode::Objective),
            "supervised" => Ok(LossMode::Supervised),
            other => Err(format!("expected `objective` or `supervised`, got `{other}`")),
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Objective => "objective",
            LossMode::Supervised => "supervised",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_mode: LossMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub d_h: usize,
    pub n_blocks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_mode: LossMode::Objective,
            epochs: 500,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 7,
            d_h: 64,
            n_blocks: 1,
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self) -> HyperParams {
        HyperParams {
            d_h: self.d_h,
            n_blocks: self.n_blocks,
            ..HyperParams::default()
        }
    }
}

impl KvConfig for TrainConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "loss_mode" => self.loss_mode = parse_field(key, value)?,
            "epochs" => self.epochs = parse_field(key, value)?,
            "batch_size" => self.batch_size = parse_field(key, value)?,
            "learning_rate" => self.learning_rate = parse_field(key, value)?,
            "beta1" => self.beta1 = parse_field(key, value)?,
            "beta2" => self.beta2 = parse_field(key, value)?,
            "epsilon" => self.epsilon = parse_field(key, value)?,
            "seed" => self.seed = parse_field(key, value)?,
            "d_h" => self.d_h = parse_field(key, value)?,
            "n_blocks" => self.n_blocks = parse_field(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn render(&self) -> String {
        format!(
            "loss_mode = {}\nepochs = {}\nbatch_size = {}\nlearning_rate = {:e}\nbeta1 = {}\nbeta2 = {}\nepsilon = {:e}\nseed = {}\nd_h = {}\nn_blocks = {}\n",
            self.loss_mode,
            self.epochs,
            self.batch_size,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.epsilon,
            self.seed,
            self.d_h,
            self.n_blocks
        )
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        // Zero is allowed: it freezes the parameters, which is useful as a baseline run.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and >= 0"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon", "must be > 0"));
        }
        if self.d_h == 0 {
            return Err(Error::config("d_h", "must be >= 1"));
        }
        if self.n_blocks == 0 {
            return Err(Error::config("n_blocks", "must be >= 1"));
        }
        Ok(())
    }
}

impl ModelParams {
    fn add_scaled(&mut self, other: &ModelParams, alpha: f64) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.named_tensors()) {
            dst.zip_apply(src, |d, s| *d += alpha * s);
        }
    }
}

/// Adaptive-moment first-order optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    first: ModelParams,
    second: ModelParams,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

impl Adam {
    pub fn new(like: &ModelParams, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            first: like.zeros_like(),
            second: like.zeros_like(),
            step: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let grads = grads.named_tensors();
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.first.tensors_mut())
            .zip(self.second.tensors_mut())
            .zip(grads);
        for (((p, m), v), (_, g)) in tensors {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Mean per-sample training loss of each epoch.
    pub history: Vec<f64>,
}

struct Prepared<'a> {
    instance: &'a ProblemInstance,
    gauge: GaugeData,
    target: Option<(DecisionVector, f64)>,
}

fn sample_loss(p: &Prepared<'_>, mode: LossMode, u: &DecisionVector) -> Result<(f64, Vec<f64>)> {
    match mode {
        LossMode::Objective => Ok((
            WastedResource.value(p.instance, u)?,
            WastedResource.gradient(p.instance, u)?,
        )),
        LossMode::Supervised => {
            let (star, norm_sq) = p.target.as_ref().expect("targets prepared for supervised mode");
            let scale = if *norm_sq > 0.0 { 1.0 / norm_sq } else { 1.0 };
            let diff: Vec<f64> = u.0.iter().zip(&star.0).map(|(a, b)| a - b).collect();
            let value = scale * diff.iter().map(|d| d * d).sum::<f64>();
            Ok((value, diff.iter().map(|d| 2.0 * scale * d).collect()))
        }
    }
}

/// Loss of `params` on one sample under `mode`, without gradients.
pub fn evaluate_loss(params: &ModelParams, instance: &ProblemInstance, mode: LossMode) -> Result<f64> {
    let prepared = prepare(std::slice::from_ref(instance), mode)?;
    let p = &prepared[0];
    let pred = crate::composite::predict_with_gauge(params, instance, &p.gauge)?;
    Ok(sample_loss(p, mode, &pred.u)?.0)
}

fn prepare(data: &[ProblemInstance], mode: LossMode) -> Result<Vec<Prepared<'_>>> {
    data.par_iter()
        .map(|x| {
            let gauge = gauge_for(x)?;
            let target = match mode {
                LossMode::Objective => None,
                LossMode::Supervised => {
                    let star = solve_exact(x)?;
                    let n = star.norm_sq();
                    Some((star, n))
                }
            };
            Ok(Prepared {
                instance: x,
                gauge,
                target,
            })
        })
        .collect()
}

/// Mini-batch Adam on the composed model. Batches contain samples with equal
/// agent counts; per-sample gradients are computed in parallel and reduced in
/// batch order, so results do not depend on the thread count.
pub fn train(mut params: ModelParams, data: &[ProblemInstance], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    params.check_consistent()?;
    if data.is_empty() {
        return Err(Error::config("data", "training set is empty"));
    }
    let prepared = prepare(data, cfg.loss_mode)?;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, x) in data.iter().enumerate() {
        groups.entry(x.len()).or_default().push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut sample_losses = vec![0.0; data.len()];

    for epoch in 1..=cfg.epochs {
        let mut batches: Vec<Vec<usize>> = Vec::new();
        for members in groups.values() {
            let mut members = members.clone();
            members.shuffle(&mut rng);
            batches.extend(members.chunks(cfg.batch_size).map(<[usize]>::to_vec));
        }
        batches.shuffle(&mut rng);

        for (b, batch) in batches.iter().enumerate() {
            let results: Vec<(f64, ModelParams)> = batch
                .par_iter()
                .map(|&i| {
                    let p = &prepared[i];
                    loss_and_grad(&params, p.instance, &p.gauge, |u| sample_loss(p, cfg.loss_mode, u))
                })
                .collect::<Result<_>>()?;
            let mut total = params.zeros_like();
            let weight = 1.0 / batch.len() as f64;
            for (&i, (loss, g)) in batch.iter().zip(&results) {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
                }
                sample_losses[i] = *loss;
                total.add_scaled(g, weight);
            }
            adam.update(&mut params, &total);
        }
        let mean = sample_losses.iter().sum::<f64>() / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: batches.len(),
            });
        }
        if epoch == 1 || epoch % 50 == 0 || epoch == cfg.epochs {
            log::info!("epoch {epoch}/{}: loss {mean:.6}", cfg.epochs);
        }
        history.push(mean);
    }
    Ok(TrainOutcome { params, history })
}
