//! LoRA adapter algebra: the low-rank delta (α/r)·L_B·L_A and merging it into
//! a dequantized NF4 base weight.

use thiserror::Error;

use super::matrix::Matrix;
use super::nf4::QuantizedTensor;
use super::params::LoraConfig;

#[derive(Debug, Error)]
pub enum LoraError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// A LoRA adapter pair for one d_out×d_in target weight.
///
/// `a` is r×d_in, `b` is d_out×r. Fresh adapters start with `b` all zero so
/// the initial delta is exactly zero.
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    pub a: Matrix,
    pub b: Matrix,
}

impl LoraAdapter {
    /// Zero-delta initialization: `a` filled by the caller's function
    /// (typically small random values), `b` all zeros.
    pub fn init(
        rank: usize,
        d_out: usize,
        d_in: usize,
        mut a_init: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        Self {
            a: Matrix::from_fn(rank, d_in, &mut a_init),
            b: Matrix::zeros(d_out, rank),
        }
    }

    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn d_in(&self) -> usize {
        self.a.cols()
    }

    pub fn d_out(&self) -> usize {
        self.b.rows()
    }
}

/// ΔW = (α/r) · L_B · L_A, shape d_out×d_in.
pub fn lora_delta(adapter: &LoraAdapter, config: &LoraConfig) -> Result<Matrix, LoraError> {
    if adapter.b.cols() != adapter.a.rows() {
        return Err(LoraError::ShapeMismatch(format!(
            "B is {}x{} but A is {}x{}",
            adapter.b.rows(),
            adapter.b.cols(),
            adapter.a.rows(),
            adapter.a.cols()
        )));
    }
    if adapter.rank() != config.rank as usize {
        return Err(LoraError::ShapeMismatch(format!(
            "adapter rank {} differs from configured rank {}",
            adapter.rank(),
            config.rank
        )));
    }
    Ok(adapter.b.matmul(&adapter.a).scale(config.scale()))
}

/// Dequantize the NF4 base and add the adapter delta. The quantized storage
/// is untouched; the result is a fresh dense matrix.
pub fn merge(
    base: &QuantizedTensor,
    adapter: &LoraAdapter,
    config: &LoraConfig,
) -> Result<Matrix, LoraError> {
    if base.shape.len() != 2 {
        return Err(LoraError::ShapeMismatch(format!(
            "base tensor must be 2-D, got shape {:?}",
            base.shape
        )));
    }
    let delta = lora_delta(adapter, config)?;
    if base.shape != [delta.rows(), delta.cols()] {
        return Err(LoraError::ShapeMismatch(format!(
            "base is {:?} but delta is {}x{}",
            base.shape,
            delta.rows(),
            delta.cols()
        )));
    }
    Ok(base.to_matrix().add(&delta))
}
