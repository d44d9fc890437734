use rand_distr::{Distribution, Normal};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};
use crate::seed;

/// He-normal initialisation: i.i.d. `N(0, 2 / fan_in)`.
pub fn kaiming_init<T: Real>(shape: Vec<usize>, fan_in: usize, seed: u64) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::invalid("kaiming init needs fan_in >= 1"));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(normal.sample(&mut rng))).collect();
    Tensor::new(shape, data)
}
