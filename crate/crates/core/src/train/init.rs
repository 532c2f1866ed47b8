use rand::Rng;

use crate::tensor::Tensor;

/// Glorot/Xavier uniform initialization.
///
/// Matrices `[fan_out, fan_in]` are drawn from `U(-b, b)` with
/// `b = sqrt(6 / (fan_in + fan_out))`. One-dimensional shapes are biases
/// and start at zero.
pub fn xavier_init(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    match *shape {
        [n] => Tensor::zeros(&[n]),
        [fan_out, fan_in] => {
            let bound = xavier_bound(fan_in, fan_out);
            let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..=bound)).collect();
            Tensor::new(shape, data).expect("xavier shape")
        }
        _ => panic!("xavier_init takes 1- or 2-D shapes, got {shape:?}"),
    }
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}
