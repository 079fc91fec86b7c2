//! Sequential, seeded training loop.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::checkpoint;
use super::config::Config;
use super::optim::Sgd;
use crate::assessment::LossBreakdown;
use crate::diffcore::{stream_rng, Parameterized};
use crate::error::{Result, SacError};
use crate::model::{NameStore, SacModel};
use crate::synthdata::{Dataset, Split};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over training images.
    pub loss: LossBreakdown,
    /// Mean total loss of the first batch.
    pub first_batch_total: f64,
    pub secs: f64,
}

pub struct TrainOutcome {
    pub model: SacModel,
    pub epochs: Vec<EpochStats>,
    pub init_fingerprint: u64,
}

/// FNV-1a over the bit patterns of every parameter.
pub fn param_fingerprint<P: Parameterized>(model: &P) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (_, t) in model.params() {
        for v in t.data() {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

/// Freshly initialized model for `data`, seeded by `config.seed`.
pub fn init_model(config: &Config, data: &Dataset) -> Result<SacModel> {
    config.validate()?;
    let n = data.num_classes();
    if config.k > n {
        return Err(SacError::Config {
            key: "k".into(),
            msg: format!("k = {} exceeds the {n} classes", config.k),
        });
    }
    let dims = config.dims(n);
    let (h, w) = data.image_size();
    dims.backbone.grid_for(h, w)?;
    SacModel::new(
        &dims,
        data.class_names.clone(),
        &mut stream_rng(config.seed, "init"),
    )
}

/// Trains on the train split. When `checkpoint` is given, it is written every
/// `checkpoint_every` epochs and at the end.
pub fn train(config: &Config, data: &Dataset, checkpoint: Option<&Path>) -> Result<TrainOutcome> {
    let mut model = init_model(config, data)?;
    train_from(config, data, &mut model, checkpoint).map(|(epochs, init_fingerprint)| {
        TrainOutcome {
            model,
            epochs,
            init_fingerprint,
        }
    })
}

fn train_from(
    config: &Config,
    data: &Dataset,
    model: &mut SacModel,
    checkpoint: Option<&Path>,
) -> Result<(Vec<EpochStats>, u64)> {
    let init_fingerprint = param_fingerprint(model);
    let samples = data.split(Split::Train);
    if samples.is_empty() {
        return Err(SacError::InvalidArgument(
            "dataset has no training images".into(),
        ));
    }
    let mut opt = Sgd::new(model, config.momentum, config.weight_decay);
    let mut aug_rng = stream_rng(config.seed, "augment");
    let mut grads = model.zeros_like();
    let mut stats = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = config.lr_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream_rng(config.seed, &format!("shuffle/{epoch}")));
        let mut sum = LossBreakdown::default();
        let mut first_batch_total = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            grads.zero_params();
            let opts = config.step_options(batch.len());
            let mut names = NameStore::default();
            let mut batch_sum = LossBreakdown::default();
            for &i in batch {
                let s = samples[i];
                let loss = model
                    .train_sample(
                        &s.image(),
                        s.class_id,
                        &opts,
                        &mut names,
                        &mut grads,
                        &mut aug_rng,
                    )
                    .map_err(|e| match e {
                        SacError::NonFinite(what) => {
                            SacError::NonFinite(format!("{what} at epoch {epoch} step {step}"))
                        }
                        other => other,
                    })?;
                batch_sum.add(&loss);
            }
            if !batch_sum.total.is_finite() {
                return Err(SacError::NonFinite(format!(
                    "loss at epoch {epoch} step {step}"
                )));
            }
            names.backward(model, &mut grads);
            opt.step(model, &grads, lr);
            if step == 0 {
                first_batch_total = batch_sum.total / batch.len() as f64;
            }
            sum.add(&batch_sum);
        }
        stats.push(EpochStats {
            epoch,
            lr,
            loss: sum.scaled(1.0 / samples.len() as f64),
            first_batch_total,
            secs: start.elapsed().as_secs_f64(),
        });
        if let Some(p) = checkpoint {
            if (epoch + 1) % config.checkpoint_every == 0 {
                checkpoint::save(p, config, model)?;
            }
        }
    }
    if let Some(p) = checkpoint {
        checkpoint::save(p, config, model)?;
    }
    Ok((stats, init_fingerprint))
}
