//! Seeded parameter initializers. Draw order is fixed by construction
//! order, so one seed pins every weight bitwise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub(crate) fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::param(data, &[rows, cols]).expect("xavier shape")
}

pub(crate) fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::param(data, shape).expect("uniform shape")
}

pub(crate) fn zeros(shape: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.requires_grad = true;
    t
}

pub(crate) fn ones(shape: &[usize]) -> Tensor {
    let numel: usize = shape.iter().product();
    let mut t = Tensor::new(vec![1.0; numel], shape).expect("ones shape");
    t.requires_grad = true;
    t
}
