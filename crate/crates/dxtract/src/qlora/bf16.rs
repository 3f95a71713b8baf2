//! Emulated bfloat16 rounding.
//!
//! bfloat16 is f32 with the mantissa cut to 8 bits (7 stored). Rounding goes
//! f64 → f32 (hardware round-to-nearest-even), then the low 16 mantissa bits
//! are folded with round-to-nearest-even. The result is returned widened back
//! to f64 so downstream accumulation stays in full precision.

/// Round a value to bfloat16 precision, returned as f64.
pub fn bf16_round(x: f64) -> f64 {
    let f = x as f32;
    if !f.is_finite() {
        return f as f64;
    }
    let bits = f.to_bits();
    let round_bit = (bits >> 16) & 1;
    let rounded = bits.wrapping_add(0x7FFF + round_bit) & 0xFFFF_0000;
    f32::from_bits(rounded) as f64
}
