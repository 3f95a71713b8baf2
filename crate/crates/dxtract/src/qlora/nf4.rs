//! NF4 blockwise quantization.
//!
//! NF4 stores weights as 4-bit indices into a 16-level codebook whose levels
//! are standard-normal quantiles, evenly spaced in probability, symmetrized
//! and rescaled so the endpoints sit exactly at ±1 with 0 included (8 positive
//! levels, 7 negative, plus zero). Each block of `block_size` elements carries
//! one absmax scale. The codebook is computed at startup from a
//! double-precision normal quantile function rather than hard-coded.
//!
//! The 16-bit compute contract is honored by rounding both the stored block
//! absmax and every dequantized element to bfloat16. Because absmax is stored
//! at bfloat16, quantize∘dequantize is an exact fixed point after the first
//! round trip: re-quantizing a dequantized tensor reproduces the same codes,
//! scales, and values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

use super::bf16::bf16_round;
use super::matrix::Matrix;

/// Default quantization block size.
pub const NF4_BLOCK_SIZE: usize = 64;

const MAGIC: &[u8; 4] = b"NF4Q";

#[derive(Debug, Error)]
pub enum QuantError {
    #[error("input contains a non-finite value at index {0}")]
    NonFiniteInput(usize),
    #[error("malformed quantized tensor file: {0}")]
    MalformedFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Blockwise NF4-quantized tensor.
///
/// `codes` holds one 4-bit index per element (unpacked to a byte in memory);
/// `absmax` holds one bfloat16-rounded scale per block.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub codes: Vec<u8>,
    pub absmax: Vec<f64>,
    pub block_size: usize,
    pub codebook: [f64; 16],
    pub shape: Vec<usize>,
}

impl QuantizedTensor {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn block_count(&self) -> usize {
        self.element_count().div_ceil(self.block_size)
    }

    /// Dequantize into a 2-D matrix. Panics unless the shape is 2-D.
    pub fn to_matrix(&self) -> Matrix {
        assert_eq!(self.shape.len(), 2, "to_matrix requires a 2-D tensor");
        Matrix::from_vec(self.shape[0], self.shape[1], nf4_dequantize(self))
    }
}

/// The 16 NF4 codebook levels, ascending, endpoints ±1, zero at index 7.
pub fn nf4_codebook() -> [f64; 16] {
    static CODEBOOK: OnceLock<[f64; 16]> = OnceLock::new();
    *CODEBOOK.get_or_init(build_codebook)
}

fn build_codebook() -> [f64; 16] {
    // Probability offset for the extreme quantiles; without it the endpoints
    // would be at infinity. Midpoint of 1/(2*16) and 1/(2*15).
    let offset = 1.0 - 0.5 * (1.0 / 32.0 + 1.0 / 30.0);

    let mut levels = Vec::with_capacity(16);
    // 8 positive levels: quantiles at 9 probabilities evenly spaced from
    // `offset` down to 0.5, dropping the final 0.5 (which is the zero level).
    for i in 0..8 {
        let p = offset + (0.5 - offset) * (i as f64) / 8.0;
        levels.push(normal_quantile(p));
    }
    levels.push(0.0);
    // 7 negative levels from an 8-point grid, mirrored.
    for i in 0..7 {
        let p = offset + (0.5 - offset) * (i as f64) / 7.0;
        levels.push(-normal_quantile(p));
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let max = levels.iter().cloned().fold(f64::MIN, f64::max);
    let mut out = [0.0; 16];
    for (slot, v) in out.iter_mut().zip(&levels) {
        *slot = v / max;
    }
    out
}

/// Standard normal quantile (inverse CDF), Wichura's algorithm AS 241
/// (PPND16 variant, ~1e-16 relative accuracy over (0, 1)).
fn normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile domain is (0, 1)");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&PPND_A, r) / poly(&PPND_B, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        poly(&PPND_C, r) / poly(&PPND_D, r)
    } else {
        let r = r - 5.0;
        poly(&PPND_E, r) / poly(&PPND_F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

const PPND_A: [f64; 8] = [
    3.387_132_872_796_366_5,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_3e3,
    1.373_169_376_550_946e4,
    4.592_195_393_154_987e4,
    6.726_577_092_700_87e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const PPND_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_158_659_7e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_854e3,
];
const PPND_C: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const PPND_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const PPND_E: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    2.965_605_718_285_048_7e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const PPND_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_7e-6,
    1.421_511_758_316_446e-15,
    0.0,
];

/// Index of the exact 0.0 level in the codebook.
fn zero_index(codebook: &[f64; 16]) -> u8 {
    codebook
        .iter()
        .position(|&v| v == 0.0)
        .expect("codebook always contains exact zero") as u8
}

/// Quantize a flat tensor blockwise to NF4.
///
/// Per block: absmax = max |w| rounded to bfloat16 (the stored scale); each
/// element maps to the nearest codebook level of w/absmax, ties going to the
/// lower index. A zero-absmax block maps every element to the zero level.
pub fn nf4_quantize(
    weights: &[f64],
    shape: &[usize],
    block_size: usize,
) -> Result<QuantizedTensor, QuantError> {
    assert!(block_size > 0, "block_size must be positive");
    assert_eq!(
        shape.iter().product::<usize>(),
        weights.len(),
        "shape does not match element count"
    );
    if let Some(bad) = weights.iter().position(|w| !w.is_finite()) {
        return Err(QuantError::NonFiniteInput(bad));
    }

    let codebook = nf4_codebook();
    let zero = zero_index(&codebook);
    let mut codes = Vec::with_capacity(weights.len());
    let mut absmax = Vec::with_capacity(weights.len().div_ceil(block_size));

    for block in weights.chunks(block_size) {
        let raw_max = block.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
        let scale = bf16_round(raw_max);
        absmax.push(scale);
        if scale == 0.0 {
            codes.extend(std::iter::repeat_n(zero, block.len()));
            continue;
        }
        for &w in block {
            let u = w / scale;
            let mut best = 0u8;
            let mut best_dist = f64::INFINITY;
            for (i, &level) in codebook.iter().enumerate() {
                let d = (u - level).abs();
                if d < best_dist {
                    best_dist = d;
                    best = i as u8;
                }
            }
            codes.push(best);
        }
    }

    Ok(QuantizedTensor {
        codes,
        absmax,
        block_size,
        codebook,
        shape: shape.to_vec(),
    })
}

/// Dequantize to f64 values carrying bfloat16 precision.
///
/// Each element is codebook[code] · block absmax, rounded to bfloat16 to
/// honor the 16-bit compute contract.
pub fn nf4_dequantize(q: &QuantizedTensor) -> Vec<f64> {
    q.codes
        .iter()
        .enumerate()
        .map(|(i, &code)| {
            let scale = q.absmax[i / q.block_size];
            bf16_round(q.codebook[code as usize] * scale)
        })
        .collect()
}

/// Serialize to the on-disk format: magic, ndim (u32), dims (u64 each),
/// block_size (u32), codebook (16 × f64), absmax array (f64 per block), then
/// packed 4-bit codes, two per byte, low nibble first. All little-endian.
pub fn write_quantized(q: &QuantizedTensor, path: &Path) -> Result<(), QuantError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(q.shape.len() as u32).to_le_bytes())?;
    for &d in &q.shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&(q.block_size as u32).to_le_bytes())?;
    for v in &q.codebook {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &q.absmax {
        w.write_all(&v.to_le_bytes())?;
    }
    for pair in q.codes.chunks(2) {
        let lo = pair[0] & 0x0F;
        let hi = if pair.len() == 2 { pair[1] & 0x0F } else { 0 };
        w.write_all(&[lo | (hi << 4)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_quantized(path: &Path) -> Result<QuantizedTensor, QuantError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(QuantError::MalformedFile("bad magic".into()));
    }

    let ndim = read_u32(&mut r)? as usize;
    if ndim == 0 || ndim > 8 {
        return Err(QuantError::MalformedFile(format!(
            "implausible ndim {ndim}"
        )));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(&mut r)? as usize);
    }
    let block_size = read_u32(&mut r)? as usize;
    if block_size == 0 {
        return Err(QuantError::MalformedFile("zero block size".into()));
    }

    let mut codebook = [0.0f64; 16];
    for slot in codebook.iter_mut() {
        *slot = read_f64(&mut r)?;
    }

    let n: usize = shape.iter().product();
    let nblocks = n.div_ceil(block_size);
    let mut absmax = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let v = read_f64(&mut r)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(QuantError::MalformedFile(
                "negative or non-finite absmax".into(),
            ));
        }
        absmax.push(v);
    }

    let mut packed = vec![0u8; n.div_ceil(2)];
    r.read_exact(&mut packed)?;
    let mut codes = Vec::with_capacity(n);
    for (i, byte) in packed.iter().enumerate() {
        codes.push(byte & 0x0F);
        if 2 * i + 1 < n {
            codes.push(byte >> 4);
        }
    }

    Ok(QuantizedTensor {
        codes,
        absmax,
        block_size,
        codebook,
        shape,
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32, QuantError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, QuantError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64, QuantError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent quantile oracle: standard normal CDF by adaptive Simpson
    /// quadrature of the density, inverted by bisection. Shares nothing with
    /// the AS 241 path used to build the codebook.
    fn oracle_quantile(p: f64) -> f64 {
        fn density(x: f64) -> f64 {
            (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
        }
        fn simpson(a: f64, b: f64, n: usize) -> f64 {
            let h = (b - a) / n as f64;
            let mut s = density(a) + density(b);
            for i in 1..n {
                let x = a + h * i as f64;
                s += density(x) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        }
        let cdf = |x: f64| 0.5 + simpson(0.0, x, 4000);
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn codebook_matches_quantile_oracle() {
        let cb = nf4_codebook();
        let offset = 1.0 - 0.5 * (1.0 / 32.0 + 1.0 / 30.0);
        let scale = oracle_quantile(offset);
        // Positive levels: indices 8..16 ascend from the smallest positive
        // probability step up to the offset quantile.
        for i in 0..8 {
            let p = offset + (0.5 - offset) * (i as f64) / 8.0;
            let expected = oracle_quantile(p) / scale;
            assert!(
                (cb[15 - i] - expected).abs() < 1e-9,
                "positive level {i}: {} vs oracle {expected}",
                cb[15 - i]
            );
        }
        // Negative levels: indices 0..7 mirror an 8-point grid.
        for (i, &level) in cb.iter().enumerate().take(7) {
            let p = offset + (0.5 - offset) * (i as f64) / 7.0;
            let expected = -oracle_quantile(p) / scale;
            assert!(
                (level - expected).abs() < 1e-9,
                "negative level {i}: {level} vs oracle {expected}"
            );
        }
        assert_eq!(cb[7], 0.0);
    }

    #[test]
    fn codebook_invariants() {
        let cb = nf4_codebook();
        assert_eq!(cb[0], -1.0);
        assert_eq!(cb[15], 1.0);
        assert!(cb.windows(2).all(|w| w[0] < w[1]), "strictly ascending");
        assert!(cb.contains(&0.0));
    }

    #[test]
    fn codebook_matches_published_reference_levels() {
        // bitsandbytes' NF4 table, f32-rounded; agreement within f32 noise.
        let reference: [f64; 16] = [
            -1.0,
            -0.696_192_800_998_687_7,
            -0.525_073_051_452_636_7,
            -0.394_917_488_098_144_53,
            -0.284_441_381_692_886_35,
            -0.184_773_430_228_233_34,
            -0.091_050_036_251_544_95,
            0.0,
            0.079_580_299_556_255_34,
            0.160_930_201_411_247_25,
            0.246_112_301_945_686_34,
            0.337_915_241_718_292_24,
            0.440_709_829_330_444_34,
            0.562_617_003_917_694_1,
            0.722_956_836_223_602_3,
            1.0,
        ];
        for (ours, theirs) in nf4_codebook().iter().zip(&reference) {
            assert!((ours - theirs).abs() < 1e-6, "{ours} vs {theirs}");
        }
    }

    #[test]
    fn zero_block_quantizes_to_zero_codes() {
        let q = nf4_quantize(&[0.0; 64], &[64], 64).unwrap();
        assert_eq!(q.absmax, vec![0.0]);
        assert!(q.codes.iter().all(|&c| c == 7));
        assert!(nf4_dequantize(&q).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reconstruction_levels_round_trip_exactly() {
        // One element per code, built from the dequantized lattice itself.
        let cb = nf4_codebook();
        let scale = 2.0; // bf16-exact
        let block: Vec<f64> = cb.iter().map(|&c| bf16_round(c * scale)).collect();
        let q = nf4_quantize(&block, &[16], 16).unwrap();
        assert_eq!(q.codes, (0..16).collect::<Vec<u8>>());
        assert_eq!(nf4_dequantize(&q), block);
    }

    #[test]
    fn scalar_trace_block() {
        // absmax 3.0 (bf16-exact); normalized values 1.0, -0.5, 0.25, 0.0.
        let block = [3.0, -1.5, 0.75, 0.0];
        let q = nf4_quantize(&block, &[4], 4).unwrap();
        assert_eq!(q.absmax, vec![3.0]);
        assert_eq!(q.codes, vec![15, 2, 10, 7]);
        let cb = nf4_codebook();
        let gap = max_adjacent_gap(&cb);
        for (restored, original) in nf4_dequantize(&q).iter().zip(&block) {
            assert!((restored - original).abs() <= 3.0 * gap / 2.0);
        }
    }

    fn max_adjacent_gap(cb: &[f64; 16]) -> f64 {
        cb.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    #[test]
    fn random_block_error_within_gap_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let block: Vec<f64> = (0..64).map(|_| normal_sample(&mut rng)).collect();
        let q = nf4_quantize(&block, &[64], 64).unwrap();
        let restored = nf4_dequantize(&q);
        let bound = q.absmax[0] * max_adjacent_gap(&q.codebook) / 2.0;
        for (r, o) in restored.iter().zip(&block) {
            assert!(
                (r - o).abs() <= bound,
                "error {} exceeds bound {bound}",
                (r - o).abs()
            );
        }
    }

    #[test]
    fn round_trip_is_fixed_point_after_first_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block: Vec<f64> = (0..130).map(|_| normal_sample(&mut rng) * 3.7).collect();
        let q1 = nf4_quantize(&block, &[130], 64).unwrap();
        let d1 = nf4_dequantize(&q1);
        let q2 = nf4_quantize(&d1, &[130], 64).unwrap();
        let d2 = nf4_dequantize(&q2);
        assert_eq!(q1.codes, q2.codes);
        assert_eq!(q1.absmax, q2.absmax);
        assert_eq!(d1, d2);
    }

    #[test]
    fn ties_go_to_lower_index() {
        // Midpoint between levels 7 (0.0) and 8 (~0.0796) with bf16-exact absmax.
        let cb = nf4_codebook();
        let mid = (cb[7] + cb[8]) / 2.0;
        let q = nf4_quantize(&[1.0, mid], &[2], 2).unwrap();
        assert_eq!(q.codes[1], 7);
    }

    #[test]
    fn rejects_non_finite() {
        let err = nf4_quantize(&[0.0, f64::NAN], &[2], 2).unwrap_err();
        assert!(matches!(err, QuantError::NonFiniteInput(1)));
    }

    #[test]
    fn file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let data: Vec<f64> = (0..257).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let q = nf4_quantize(&data, &[257], 64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nf4");
        write_quantized(&q, &path).unwrap();
        let back = read_quantized(&path).unwrap();
        assert_eq!(q, back);
    }

    #[test]
    fn packed_payload_is_one_eighth_of_f32() {
        // 4 bits/element: for block_size 64 and n elements, code payload is
        // n/2 bytes against 4n bytes of f32 storage.
        let n = 4096usize;
        let data = vec![0.25; n];
        let q = nf4_quantize(&data, &[n], 64).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nf4");
        write_quantized(&q, &path).unwrap();
        let file_len = std::fs::metadata(&path).unwrap().len() as usize;
        let header = 4 + 4 + 8 + 4 + 16 * 8;
        let absmax_bytes = q.block_count() * 8;
        let code_payload = file_len - header - absmax_bytes;
        assert_eq!(code_payload, n / 2);
        assert_eq!(code_payload * 8, n * 4);
    }

    #[test]
    fn read_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.nf4");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(
            read_quantized(&path),
            Err(QuantError::MalformedFile(_))
        ));
    }

    fn normal_sample(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller; plenty for test data.
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}
