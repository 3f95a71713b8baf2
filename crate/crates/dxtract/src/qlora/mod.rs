//! Numeric core for the QLoRA fine-tuning setup: NF4 blockwise quantization
//! with a 16-bit BrainFloat compute contract, LoRA adapter algebra and
//! merging, trainable-parameter accounting, and prompt-masked autoregressive
//! cross-entropy.
//!
//! No training loop lives here — optimizer settings are carried in
//! [`LoraConfig`] for record-keeping only. All arithmetic accumulates in f64
//! and rounds to bfloat16 only where the storage/compute contract demands it.

mod bf16;
mod lora;
mod loss;
mod matrix;
mod nf4;
mod params;

pub use bf16::bf16_round;
pub use lora::{lora_delta, merge, LoraAdapter, LoraError};
pub use loss::{cross_entropy_grad, masked_cross_entropy, LossError, TokenBatch};
pub use matrix::Matrix;
pub use nf4::{
    nf4_codebook, nf4_dequantize, nf4_quantize, read_quantized, write_quantized, QuantError,
    QuantizedTensor, NF4_BLOCK_SIZE,
};
pub use params::{count_trainable, LoraConfig, OptimizerSettings, TargetModule};
