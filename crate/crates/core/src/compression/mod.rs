//! Stochastic compressors satisfying `E‖C(x)/r − x‖² ≤ (1 − φ)‖x‖²`.
//!
//! Three operators ship: greedy Top-k sparsification, the biased dithered
//! b-bits quantizer, and the identity. Every compression returns a
//! [`CompressedMessage`] holding the wire payload, the reconstruction the
//! receiver will compute from it, and the accounted size in bits.
//!
//! Bit accounting (32-bit floats on the wire):
//!
//! | compressor | bits per message |
//! |------------|------------------|
//! | Top-k      | `k·(32 + ⌈log₂ d⌉)` |
//! | b-bits     | `32 + d·(b + 1)`, or `32` for the zero vector |
//! | identity   | `32·d` |
//!
//! The quantizer's magnitude level ranges over `0..=2^(b−1)`, which needs
//! `b` bits, plus one sign bit per coordinate.

pub mod wire;

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{Domain, Streams};

pub use wire::{decode, encode, WireHeader, WirePrecision};

/// Width of a transmitted float in the bit accounting.
pub const FLOAT_BITS: u64 = 32;
/// Largest accepted quantizer bit budget.
pub const MAX_QUANT_BITS: u32 = 16;
/// Minimum Monte Carlo trials for [`estimate_contraction`].
pub const MIN_TRIALS: usize = 100;
/// Number of probe directions [`estimate_contraction`] takes the max over.
pub const CONTRACTION_PROBES: usize = 20;

/// Master seed and trial count used to fix the quantizer's declared φ.
const PHI_CALIBRATION_SEED: u64 = 0x5eed_0f_b17;
const PHI_CALIBRATION_TRIALS: usize = 4000;

#[derive(Debug, Error, PartialEq)]
pub enum CompressionError {
    #[error("top-k needs 1 <= k <= d, got k={k}, d={d}")]
    BadK { k: usize, d: usize },
    #[error("b-bits quantizer needs 1 <= b <= {MAX_QUANT_BITS}, got {0}")]
    BadBits(u32),
    #[error("contraction estimate {estimate} exceeds declared bound {bound}")]
    ContractViolation { estimate: f64, bound: f64 },
    #[error("need at least {MIN_TRIALS} trials, got {0}")]
    TooFewTrials(usize),
    #[error("dimension mismatch: compressor built for d={expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("compressor constants violate r > 0, 0 < phi <= 1: r={r}, phi={phi}")]
    BadConstants { r: f64, phi: f64 },
    #[error("wire format: {0}")]
    Wire(String),
}

/// Which operator, with its size parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CompressorKind {
    TopK { k: usize },
    BBits { b: u32 },
    Identity,
}

/// A compressor bound to a dimension, with its declared contract constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub kind: CompressorKind,
    pub d: usize,
    /// Scaling constant `r`.
    pub r: f64,
    /// Contraction constant `φ`.
    pub phi: f64,
}

impl CompressorSpec {
    /// Top-k with the standard contractive constants `(r, φ) = (1, k/d)`.
    pub fn top_k(k: usize, d: usize) -> Result<Self, CompressionError> {
        if k == 0 || k > d {
            return Err(CompressionError::BadK { k, d });
        }
        Ok(Self {
            kind: CompressorKind::TopK { k },
            d,
            r: 1.0,
            phi: k as f64 / d as f64,
        })
    }

    /// b-bits quantizer with `r = 1` and `φ = 1 − ĉ`, where `ĉ` is a
    /// fixed-seed Monte Carlo estimate of the worst probed contraction.
    pub fn b_bits(b: u32, d: usize) -> Result<Self, CompressionError> {
        if b == 0 || b > MAX_QUANT_BITS {
            return Err(CompressionError::BadBits(b));
        }
        let kind = CompressorKind::BBits { b };
        let mut rng = Streams::new(PHI_CALIBRATION_SEED).stream(Domain::Probe, d as u64, b as u64);
        let estimate = contraction_estimate(kind, 1.0, d, PHI_CALIBRATION_TRIALS, &mut rng);
        let phi = 1.0 - estimate;
        if !(phi > 0.0 && phi <= 1.0) {
            return Err(CompressionError::BadConstants { r: 1.0, phi });
        }
        Ok(Self {
            kind,
            d,
            r: 1.0,
            phi,
        })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            kind: CompressorKind::Identity,
            d,
            r: 1.0,
            phi: 1.0,
        }
    }

    pub fn from_kind(kind: CompressorKind, d: usize) -> Result<Self, CompressionError> {
        match kind {
            CompressorKind::TopK { k } => Self::top_k(k, d),
            CompressorKind::BBits { b } => Self::b_bits(b, d),
            CompressorKind::Identity => Ok(Self::identity(d)),
        }
    }

    /// Builds a spec with caller-declared constants (used to test the
    /// contract checker against deliberately wrong declarations).
    pub fn with_constants(
        kind: CompressorKind,
        d: usize,
        r: f64,
        phi: f64,
    ) -> Result<Self, CompressionError> {
        if !(r > 0.0) || !(phi > 0.0 && phi <= 1.0) {
            return Err(CompressionError::BadConstants { r, phi });
        }
        Ok(Self { kind, d, r, phi })
    }

    /// `r₀ = 2r²(1−φ) + 2(1−r)²`, the bound on `E‖C(x) − x‖² / ‖x‖²`.
    pub fn r0(&self) -> f64 {
        2.0 * self.r * self.r * (1.0 - self.phi) + 2.0 * (1.0 - self.r).powi(2)
    }

    pub fn is_lossless(&self) -> bool {
        matches!(self.kind, CompressorKind::Identity)
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self.kind, CompressorKind::BBits { .. })
    }

    pub fn label(&self) -> String {
        match self.kind {
            CompressorKind::TopK { k } => format!("top-{k}"),
            CompressorKind::BBits { b } => format!("{b}-bits"),
            CompressorKind::Identity => "identity".into(),
        }
    }

    pub fn compress<R: Rng + ?Sized>(
        &self,
        x: &DVector<f64>,
        rng: &mut R,
    ) -> Result<CompressedMessage, CompressionError> {
        if x.len() != self.d {
            return Err(CompressionError::DimensionMismatch {
                expected: self.d,
                got: x.len(),
            });
        }
        match self.kind {
            CompressorKind::TopK { k } => compress_top_k(x, k),
            CompressorKind::BBits { b } => compress_b_bits(x, b, rng),
            CompressorKind::Identity => Ok(compress_identity(x)),
        }
    }

    pub fn wire_header(&self, precision: WirePrecision) -> WireHeader {
        WireHeader {
            kind: self.kind,
            d: self.d,
            precision,
        }
    }
}

/// Compressor-specific encoded content of one message.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Dense(Vec<f64>),
    /// Indices ascending.
    Sparse {
        indices: Vec<u32>,
        values: Vec<f64>,
    },
    /// Signed levels in `-2^(b−1)..=2^(b−1)`; empty when `norm == 0`.
    Quantized {
        b: u32,
        norm: f64,
        levels: Vec<i32>,
    },
}

impl Payload {
    /// The vector a receiver reconstructs from this payload.
    pub fn reconstruct(&self, d: usize) -> DVector<f64> {
        match self {
            Payload::Dense(v) => DVector::from_column_slice(v),
            Payload::Sparse { indices, values } => {
                let mut out = DVector::zeros(d);
                for (&i, &v) in indices.iter().zip(values) {
                    out[i as usize] = v;
                }
                out
            }
            Payload::Quantized { b, norm, levels } => {
                if *norm == 0.0 {
                    return DVector::zeros(d);
                }
                let scale = (-((*b - 1) as f64)).exp2();
                let factor = norm / quantizer_xi(d, *b);
                DVector::from_iterator(d, levels.iter().map(|&l| factor * (l as f64 * scale)))
            }
        }
    }

    /// Accounted wire size in bits.
    pub fn bits(&self, d: usize) -> u64 {
        match self {
            Payload::Dense(v) => FLOAT_BITS * v.len() as u64,
            Payload::Sparse { indices, .. } => {
                indices.len() as u64 * (FLOAT_BITS + index_bits(d) as u64)
            }
            Payload::Quantized { b, norm, levels } => {
                if *norm == 0.0 {
                    FLOAT_BITS
                } else {
                    FLOAT_BITS + levels.len() as u64 * (*b as u64 + 1)
                }
            }
        }
    }
}

/// A compressed vector as sent over one link.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMessage {
    pub payload: Payload,
    pub reconstructed: DVector<f64>,
    pub bits: u64,
}

impl CompressedMessage {
    fn from_payload(payload: Payload, d: usize) -> Self {
        let reconstructed = payload.reconstruct(d);
        let bits = payload.bits(d);
        Self {
            payload,
            reconstructed,
            bits,
        }
    }
}

/// `⌈log₂ d⌉`, the width of a coordinate index.
pub fn index_bits(d: usize) -> u32 {
    if d <= 1 {
        0
    } else {
        usize::BITS - (d - 1).leading_zeros()
    }
}

/// `ξ = 1 + min(d / 2^(2(b−1)), √d / 2^(b−1))`.
pub fn quantizer_xi(d: usize, b: u32) -> f64 {
    let s = ((b - 1) as f64).exp2();
    1.0 + (d as f64 / (s * s)).min((d as f64).sqrt() / s)
}

/// Keeps the `k` largest-magnitude coordinates. Equal magnitudes go to the
/// lower index.
pub fn compress_top_k(x: &DVector<f64>, k: usize) -> Result<CompressedMessage, CompressionError> {
    let d = x.len();
    if k == 0 || k > d {
        return Err(CompressionError::BadK { k, d });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    let payload = Payload::Sparse {
        indices: chosen.iter().map(|&i| i as u32).collect(),
        values: chosen.iter().map(|&i| x[i]).collect(),
    };
    Ok(CompressedMessage::from_payload(payload, d))
}

/// Dithered b-bits quantization with `u ~ U[0,1]^d` drawn from `rng`.
pub fn compress_b_bits<R: Rng + ?Sized>(
    x: &DVector<f64>,
    b: u32,
    rng: &mut R,
) -> Result<CompressedMessage, CompressionError> {
    // one dither per coordinate, always consumed, so stream use is input-independent
    let dither: Vec<f64> = (0..x.len()).map(|_| rng.gen::<f64>()).collect();
    quantize_with_dither(x, b, &dither)
}

/// The b-bits quantizer with an explicit dither vector.
pub fn quantize_with_dither(
    x: &DVector<f64>,
    b: u32,
    dither: &[f64],
) -> Result<CompressedMessage, CompressionError> {
    if b == 0 || b > MAX_QUANT_BITS {
        return Err(CompressionError::BadBits(b));
    }
    let d = x.len();
    assert_eq!(dither.len(), d, "one dither value per coordinate");
    let norm = x.norm();
    let payload = if norm == 0.0 {
        Payload::Quantized {
            b,
            norm: 0.0,
            levels: Vec::new(),
        }
    } else {
        let s = ((b - 1) as f64).exp2();
        let levels = x
            .iter()
            .zip(dither)
            .map(|(&xi, &u)| {
                let level = (s * xi.abs() / norm + u).floor() as i32;
                if xi < 0.0 {
                    -level
                } else if xi > 0.0 {
                    level
                } else {
                    0
                }
            })
            .collect();
        Payload::Quantized { b, norm, levels }
    };
    Ok(CompressedMessage::from_payload(payload, d))
}

pub fn compress_identity(x: &DVector<f64>) -> CompressedMessage {
    CompressedMessage::from_payload(Payload::Dense(x.iter().cloned().collect()), x.len())
}

/// Unit vectors the contraction estimate is maximized over: the
/// equal-magnitude direction, the first basis vector, then random directions.
pub fn probe_directions<R: Rng + ?Sized>(d: usize, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let mut probes = Vec::with_capacity(count);
    probes.push(DVector::from_element(d, 1.0 / (d as f64).sqrt()));
    if count > 1 {
        let mut e = DVector::zeros(d);
        e[0] = 1.0;
        probes.push(e);
    }
    while probes.len() < count {
        let v = DVector::from_iterator(
            d,
            (0..d).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)),
        );
        let n = v.norm();
        if n > 0.0 {
            probes.push(v / n);
        }
    }
    probes.truncate(count);
    probes
}

fn contraction_estimate<R: Rng + ?Sized>(
    kind: CompressorKind,
    r: f64,
    d: usize,
    trials: usize,
    rng: &mut R,
) -> f64 {
    let spec = CompressorSpec {
        kind,
        d,
        r,
        phi: 1.0,
    };
    let probes = probe_directions(d, CONTRACTION_PROBES, rng);
    probes
        .iter()
        .map(|x| {
            let total: f64 = (0..trials)
                .map(|_| {
                    let c = spec
                        .compress(x, rng)
                        .expect("probe has the compressor's dimension");
                    (&c.reconstructed / r - x).norm_squared()
                })
                .sum();
            total / trials as f64
        })
        .fold(0.0, f64::max)
}

/// Monte Carlo estimate of `max over probes of E‖C(x)/r − x‖²` on unit
/// vectors. Fails with `ContractViolation` when it exceeds `1 − φ` by more
/// than `3/√trials`.
pub fn estimate_contraction<R: Rng + ?Sized>(
    spec: &CompressorSpec,
    d: usize,
    trials: usize,
    rng: &mut R,
) -> Result<f64, CompressionError> {
    if trials < MIN_TRIALS {
        return Err(CompressionError::TooFewTrials(trials));
    }
    let estimate = contraction_estimate(spec.kind, spec.r, d, trials, rng);
    let bound = 1.0 - spec.phi + 3.0 / (trials as f64).sqrt();
    if estimate > bound {
        return Err(CompressionError::ContractViolation { estimate, bound });
    }
    Ok(estimate)
}
