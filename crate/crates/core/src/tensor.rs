//! Conversions between plain buffers and backend tensors.

use burn::prelude::*;

/// Builds a float tensor from `f32` values, converting to the backend's element type.
pub fn from_f32<B: Backend, const D: usize>(values: Vec<f32>, shape: [usize; D], device: &B::Device) -> Tensor<B, D> {
    Tensor::from_data(TensorData::new(values, shape).convert::<B::FloatElem>(), device)
}

/// Same as [`from_f32`] for `f64` input.
pub fn from_f64<B: Backend, const D: usize>(values: Vec<f64>, shape: [usize; D], device: &B::Device) -> Tensor<B, D> {
    Tensor::from_data(TensorData::new(values, shape).convert::<B::FloatElem>(), device)
}

/// Integer tensor of class labels.
pub fn labels<B: Backend>(y: &[usize], device: &B::Device) -> Tensor<B, 1, Int> {
    let v: Vec<i64> = y.iter().map(|&c| c as i64).collect();
    Tensor::from_data(TensorData::new(v, [y.len()]).convert::<B::IntElem>(), device)
}

pub fn to_vec_f64<B: Backend, const D: usize>(t: Tensor<B, D>) -> Vec<f64> {
    t.into_data().convert::<f64>().to_vec::<f64>().expect("converted tensor data is f64")
}

pub fn to_vec_f32<B: Backend, const D: usize>(t: Tensor<B, D>) -> Vec<f32> {
    t.into_data().convert::<f32>().to_vec::<f32>().expect("converted tensor data is f32")
}

pub fn scalar<B: Backend, const D: usize>(t: Tensor<B, D>) -> f64 {
    to_vec_f64(t)[0]
}
