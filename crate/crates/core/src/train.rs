//! Alternating adversarial training of generator and discriminator.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::checkpoint;
use crate::error::{CoreError, Result};
use crate::init::derive_seed;
use crate::loss::{class_weights, generator_loss};
use crate::nets::{one_hot, standardize, Discriminator, Generator};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::segmap::{LabeledImage, NUM_CLASSES};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub generator_optimizer: OptimizerConfig,
    pub discriminator_optimizer: OptimizerConfig,
    /// Generator learning rate at the last epoch as a fraction of the
    /// initial one; intermediate epochs decay geometrically.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            batch_size: 4,
            epochs: 30,
            generator_optimizer: OptimizerConfig::rmsprop(),
            discriminator_optimizer: OptimizerConfig::adam(),
            final_lr_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(CoreError::invalid(format!("lambda {} must be a finite non-negative number", self.lambda)));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(CoreError::invalid(format!("final_lr_fraction {} must lie in (0, 1]", self.final_lr_fraction)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(CoreError::invalid("batch size and epochs must be positive"));
        }
        Ok(())
    }
}

impl TrainConfig {
    /// Generator learning rate used throughout 1-based `epoch`.
    pub fn generator_learning_rate(&self, epoch: usize) -> f64 {
        let lr = self.generator_optimizer.learning_rate;
        if self.epochs <= 1 {
            return lr;
        }
        let t = (epoch.clamp(1, self.epochs) - 1) as f64 / (self.epochs - 1) as f64;
        lr * self.final_lr_fraction.powf(t)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean weighted cross-entropy over the epoch's batches.
    pub l_mcl: f64,
    /// Mean discriminator loss; absent when no discriminator step ran.
    pub l_d: Option<f64>,
    /// Pixel accuracy on the held-out images; absent without any.
    pub pixel_acc: Option<f64>,
}

pub fn write_history<W: Write>(mut w: W, history: &[EpochRecord]) -> std::io::Result<()> {
    writeln!(w, "epoch,l_mcl,l_d,pixel_acc")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in history {
        writeln!(w, "{},{:.6},{},{}", r.epoch, r.l_mcl, opt(r.l_d), opt(r.pixel_acc))?;
    }
    Ok(())
}

/// Generator and discriminator parameters in one store, for checkpoints.
pub fn merged_store<T: Scalar>(gen: &ParamStore<T>, disc: &ParamStore<T>) -> Result<ParamStore<T>> {
    let mut out = ParamStore::new();
    for store in [gen, disc] {
        for (name, t) in store.iter() {
            if store.is_trainable(name)? {
                out.add(name, t.clone())?;
            } else {
                out.add_buffer(name, t.clone())?;
            }
        }
    }
    Ok(out)
}

pub fn save_models<T: Scalar>(gen: &Generator<T>, disc: &Discriminator<T>) -> Result<Vec<u8>> {
    Ok(checkpoint::encode(&merged_store(&gen.store, &disc.store)?))
}

/// Restores both networks from a merged checkpoint; names and shapes must match.
pub fn load_models<T: Scalar>(bytes: &[u8], gen: &mut Generator<T>, disc: &mut Discriminator<T>) -> Result<()> {
    let src: ParamStore<T> = checkpoint::decode(bytes)?;
    let (mut gs, mut ds) = (ParamStore::new(), ParamStore::new());
    for (name, t) in src.iter() {
        let dst = if name.starts_with("gen.") { &mut gs } else { &mut ds };
        if src.is_trainable(name)? {
            dst.add(name, t.clone())?;
        } else {
            dst.add_buffer(name, t.clone())?;
        }
    }
    checkpoint::restore_into(&mut gen.store, &gs)?;
    checkpoint::restore_into(&mut disc.store, &ds)
}

fn batch_input<T: Scalar>(items: &[&LabeledImage]) -> Result<(Tensor<T>, Vec<u8>)> {
    let (h, w) = (items[0].height(), items[0].width());
    let mut pixels = Vec::with_capacity(items.len() * h * w);
    let mut targets = Vec::with_capacity(items.len() * h * w);
    for it in items {
        if (it.height(), it.width()) != (h, w) {
            return Err(CoreError::invalid(format!(
                "batch mixes {h}x{w} with {}x{} images",
                it.height(),
                it.width()
            )));
        }
        pixels.extend(standardize(&it.image));
        targets.extend_from_slice(it.truth.classes());
    }
    Ok((Tensor::from_f64(&[items.len(), 1, h, w], &pixels)?, targets))
}

/// Fraction of pixels whose argmax prediction equals the truth.
pub fn pixel_accuracy<T: Scalar>(gen: &Generator<T>, items: &[LabeledImage]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for it in items {
        let (_, pred) = gen.predict(&it.image, it.height(), it.width())?;
        hit += pred.classes().iter().zip(it.truth.classes()).filter(|(a, b)| a == b).count();
        total += pred.classes().len();
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Per mini-batch: one discriminator Adam step on real one-hot maps versus
/// the generator's current probability maps (skipped when `λ = 0`), then
/// one generator RMSProp step on `L_mcl + λ · BCE(D(fake), 1)` with the
/// discriminator in evaluation mode.
///
/// A non-finite value aborts the run after restoring both networks to the
/// end of the last completed epoch (or their initial state).
pub fn train<T: Scalar>(
    gen: &mut Generator<T>,
    disc: &mut Discriminator<T>,
    train_set: &[LabeledImage],
    heldout: &[LabeledImage],
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CoreError::invalid("training set is empty"));
    }
    let weights_f64 = class_weights(train_set.iter().map(|it| &it.truth))?;
    let weights: Vec<T> = weights_f64.iter().map(|&w| T::lit(w)).collect();
    let mut gen_opt = Optimizer::new(cfg.generator_optimizer)?;
    let mut disc_opt = Optimizer::new(cfg.discriminator_optimizer)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle"));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "dropout"));
    let adversarial = cfg.lambda > 0.0;

    let mut last_good = (gen.store.clone(), disc.store.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        gen_opt.set_learning_rate(cfg.generator_learning_rate(epoch));
        let (mut mcl_sum, mut d_sum, mut batches) = (0.0, 0.0, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&LabeledImage> = chunk.iter().map(|&i| &train_set[i]).collect();
            let result = train_step(gen, disc, &items, &weights, cfg, adversarial, &mut gen_opt, &mut disc_opt, &mut dropout_rng);
            match result {
                Ok((mcl, ld)) => {
                    mcl_sum += mcl;
                    d_sum += ld.unwrap_or(0.0);
                    batches += 1;
                }
                Err(e) => {
                    gen.store = last_good.0;
                    disc.store = last_good.1;
                    return Err(CoreError::NonFinite(format!(
                        "training diverged at epoch {epoch}, batch {} ({e}); parameters restored to the end of epoch {}",
                        step + 1,
                        epoch - 1
                    )));
                }
            }
        }
        let pixel_acc = if heldout.is_empty() { None } else { Some(pixel_accuracy(gen, heldout)?) };
        let rec = EpochRecord {
            epoch,
            l_mcl: mcl_sum / batches as f64,
            l_d: adversarial.then(|| d_sum / batches as f64),
            pixel_acc,
        };
        log::info!(
            "epoch {epoch}: l_mcl {:.4} l_d {} pixel_acc {}",
            rec.l_mcl,
            rec.l_d.map_or("-".into(), |v| format!("{v:.4}")),
            rec.pixel_acc.map_or("-".into(), |v| format!("{v:.4}"))
        );
        history.push(rec);
        last_good = (gen.store.clone(), disc.store.clone());
    }
    Ok(history)
}

#[allow(clippy::too_many_arguments)]
fn train_step<T: Scalar>(
    gen: &mut Generator<T>,
    disc: &mut Discriminator<T>,
    items: &[&LabeledImage],
    weights: &[T],
    cfg: &TrainConfig,
    adversarial: bool,
    gen_opt: &mut Optimizer<T>,
    disc_opt: &mut Optimizer<T>,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<(f64, Option<f64>)> {
    let (input, targets) = batch_input::<T>(items)?;
    let (b, h, w) = (items.len(), items[0].height(), items[0].width());
    let mut g = Graph::new();
    let x = g.constant(input);
    let logits = gen.forward(&mut g, x, true)?;
    let probs = g.softmax(logits, 1)?;

    let mut l_d = None;
    if adversarial {
        let mut joint: Vec<T> = Vec::with_capacity(2 * b * NUM_CLASSES * h * w);
        for it in items {
            joint.extend(one_hot::<T>(&it.truth));
        }
        joint.extend_from_slice(g.data(probs));
        let mut dg = Graph::new();
        let dx = dg.constant(Tensor::new(&[2 * b, NUM_CLASSES, h, w], joint)?);
        let (d_logits, stats) = disc.forward(&mut dg, dx, Some(&mut *dropout_rng), true)?;
        let targets: Vec<T> = (0..2 * b).map(|i| if i < b { T::one() } else { T::zero() }).collect();
        let mean = dg.bce_with_logits(d_logits, &targets)?;
        // Mean over the joint batch is half the sum of the real and fake means.
        let loss = dg.scale(mean, T::lit(2.0))?;
        dg.backward(loss)?;
        dg.write_grads(&mut disc.store)?;
        disc_opt.step(&mut disc.store)?;
        disc.store.zero_grad();
        disc.update_running(&stats)?;
        l_d = Some(dg.value(loss).item().as_f64());
    }

    // D runs in eval mode here: no dropout, running batch-norm statistics.
    let disc_fake = if adversarial { Some(disc.forward::<ChaCha8Rng>(&mut g, probs, None, false)?.0) } else { None };
    let (total, mcl) = generator_loss(&mut g, logits, &targets, weights, disc_fake, cfg.lambda)?;
    g.backward(total)?;
    g.write_grads(&mut gen.store)?;
    gen_opt.step(&mut gen.store)?;
    gen.store.zero_grad();
    let l_mcl = g.value(mcl).item().as_f64();
    if !l_mcl.is_finite() {
        return Err(CoreError::NonFinite("weighted cross-entropy".into()));
    }
    Ok((l_mcl, l_d))
}
