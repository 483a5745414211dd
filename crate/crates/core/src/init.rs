//! Seeded weight initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `(fan_in, fan_out)` for a dense `[in, out]` matrix or an `[a, b, kh, kw]`
/// kernel; the receptive field multiplies both fans.
pub fn fans(shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 || shape.iter().any(|&d| d == 0) {
        return Err(CoreError::invalid(format!("xavier_init needs at least two positive extents, got {shape:?}")));
    }
    if shape.len() == 2 {
        return Ok((shape[0], shape[1]));
    }
    let field: usize = shape[2..].iter().product();
    Ok((shape[1] * field, shape[0] * field))
}

/// Glorot-uniform draw: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
/// so the variance is `2 / (fan_in + fan_out)`.
pub fn xavier_init<T: Scalar>(shape: &[usize], seed: u64) -> Result<Tensor<T>> {
    let (fan_in, fan_out) = fans(shape)?;
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::lit(dist.sample(&mut rng))).collect())
}

/// Per-parameter seed: FNV-1a of `name` folded into `base`.
pub fn derive_seed(base: u64, name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325 ^ base, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}
