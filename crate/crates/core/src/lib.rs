//! Similarity-keeping knowledge distillation for low-density EEG decoding.

pub mod data;
pub mod distill;
pub mod experiments;
pub mod models;
pub mod tensor;
pub mod training;
