//! Class weighting and the generator/discriminator objectives.

use crate::autodiff::{Graph, Var};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::segmap::{SegmentationMap, NUM_CLASSES};

/// Inverse pixel frequency over `maps`, scaled to mean 1. A class with no
/// pixels takes the largest weight among present classes.
pub fn class_weights<'a>(maps: impl IntoIterator<Item = &'a SegmentationMap>) -> Result<[f64; NUM_CLASSES]> {
    let mut counts = [0usize; NUM_CLASSES];
    for m in maps {
        m.histogram().iter().enumerate().for_each(|(c, &n)| counts[c] += n);
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(CoreError::invalid("class weights need at least one pixel"));
    }
    let inv: Vec<Option<f64>> = counts.iter().map(|&n| (n > 0).then(|| total as f64 / n as f64)).collect();
    let fallback = inv.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let raw: Vec<f64> = inv.iter().map(|w| w.unwrap_or(fallback)).collect();
    let mean = raw.iter().sum::<f64>() / NUM_CLASSES as f64;
    let mut out = [0.0; NUM_CLASSES];
    out.iter_mut().zip(&raw).for_each(|(o, r)| *o = r / mean);
    Ok(out)
}

/// Generator objective `L_mcl + λ · BCE(D(fake), 1)`; `disc_fake` holds the
/// discriminator logits of the generated maps.
pub fn generator_loss<T: Scalar>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[u8],
    weights: &[T],
    disc_fake: Option<Var>,
    lambda: f64,
) -> Result<(Var, Var)> {
    if !(lambda >= 0.0) {
        return Err(CoreError::invalid(format!("lambda {lambda} must be non-negative")));
    }
    let mcl = g.weighted_cross_entropy(logits, targets, weights)?;
    match disc_fake {
        Some(d) if lambda > 0.0 => {
            let n = g.shape(d).iter().product();
            let adv = g.bce_with_logits(d, &vec![T::one(); n])?;
            let adv = g.scale(adv, T::lit(lambda))?;
            Ok((g.add(mcl, adv)?, mcl))
        }
        _ => Ok((mcl, mcl)),
    }
}

/// Discriminator objective `BCE(D(real), 1) + BCE(D(fake), 0)`.
pub fn discriminator_loss<T: Scalar>(g: &mut Graph<T>, disc_real: Var, disc_fake: Var) -> Result<Var> {
    let n_real = g.shape(disc_real).iter().product();
    let n_fake = g.shape(disc_fake).iter().product();
    let real = g.bce_with_logits(disc_real, &vec![T::one(); n_real])?;
    let fake = g.bce_with_logits(disc_fake, &vec![T::zero(); n_fake])?;
    g.add(real, fake)
}
