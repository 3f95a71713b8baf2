//! LoRA configuration and trainable-parameter accounting.

use serde::{Deserialize, Serialize};

/// One linear module targeted by LoRA adapters, with its weight shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetModule {
    pub name: String,
    pub d_out: usize,
    pub d_in: usize,
}

/// Optimizer settings recorded for run fidelity. No training loop consumes
/// these; they exist so a run manifest can state exactly what the fine-tune
/// recipe was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub name: String,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub scheduler: String,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            name: "adamw_8bit".into(),
            learning_rate: 3e-4,
            weight_decay: 0.01,
            scheduler: "reduce_on_plateau".into(),
        }
    }
}

/// LoRA hyperparameters plus the adapter target map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: u32,
    pub alpha: f64,
    /// Recorded only; no dropout is applied anywhere in this crate.
    pub dropout: f64,
    pub bias: String,
    pub target_modules: Vec<TargetModule>,
    pub layer_count: u32,
    pub optimizer: OptimizerSettings,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 64,
            alpha: 16.0,
            dropout: 0.05,
            bias: "none".into(),
            target_modules: Vec::new(),
            layer_count: 1,
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl LoraConfig {
    /// ΔW scale factor α/r.
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Check rank fits every target shape and the scale is usable.
    pub fn validate(&self) -> Result<(), String> {
        if self.rank == 0 {
            return Err("rank must be positive".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err("alpha must be positive and finite".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        if self.layer_count == 0 {
            return Err("layer_count must be positive".into());
        }
        for m in &self.target_modules {
            if (self.rank as usize) > m.d_out.min(m.d_in) {
                return Err(format!(
                    "rank {} exceeds min dimension of module {} ({}x{})",
                    self.rank, m.name, m.d_out, m.d_in
                ));
            }
        }
        Ok(())
    }
}

/// Trainable-parameter count: each target module contributes r·(d_in + d_out)
/// per layer. Returns (total across layers, per-layer subtotal).
pub fn count_trainable(config: &LoraConfig) -> (u64, u64) {
    let per_layer: u64 = config
        .target_modules
        .iter()
        .map(|m| config.rank as u64 * (m.d_in as u64 + m.d_out as u64))
        .sum();
    (per_layer * config.layer_count as u64, per_layer)
}
