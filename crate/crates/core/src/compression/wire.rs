//! Bit-packed message layouts (big-endian bit order, zero-padded to a byte).
//!
//! ```text
//! Top-k     k × [ index: ⌈log₂ d⌉ bits | value: float ]
//! b-bits    norm: float, then (if norm ≠ 0) d × [ sign: 1 bit | level: b bits ]
//! identity  d × [ value: float ]
//! ```
//!
//! Floats are `f32` under [`WirePrecision::F32`], in which case the encoded
//! length is exactly the accounted `bits` of the message. [`WirePrecision::F64`]
//! widens the float fields so decoding reproduces the payload bit for bit.
//! The compressor kind, dimension and precision travel out of band.

use std::io;

use bitstream_io::{BigEndian, BitRead, BitReader, BitWrite, BitWriter};

use super::{index_bits, CompressionError, CompressorKind, Payload};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WirePrecision {
    F32,
    F64,
}

/// What a receiver knows about a link before reading a message.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireHeader {
    pub kind: CompressorKind,
    pub d: usize,
    pub precision: WirePrecision,
}

fn wire_err(e: io::Error) -> CompressionError {
    CompressionError::Wire(e.to_string())
}

fn write_float<W: BitWrite>(w: &mut W, x: f64, precision: WirePrecision) -> io::Result<()> {
    match precision {
        WirePrecision::F32 => w.write(32, (x as f32).to_bits()),
        WirePrecision::F64 => w.write(64, x.to_bits()),
    }
}

fn read_float<R: BitRead>(r: &mut R, precision: WirePrecision) -> io::Result<f64> {
    Ok(match precision {
        WirePrecision::F32 => f32::from_bits(r.read::<u32>(32)?) as f64,
        WirePrecision::F64 => f64::from_bits(r.read::<u64>(64)?),
    })
}

/// Packs a payload. Returns the bytes and the number of meaningful bits.
pub fn encode(payload: &Payload, header: &WireHeader) -> Result<(Vec<u8>, u64), CompressionError> {
    let mut w = BitWriter::endian(Vec::new(), BigEndian);
    let mut written = 0u64;
    let float_bits = match header.precision {
        WirePrecision::F32 => 32,
        WirePrecision::F64 => 64,
    };
    match (payload, header.kind) {
        (Payload::Dense(values), CompressorKind::Identity) => {
            if values.len() != header.d {
                return Err(CompressionError::Wire(
                    "dense payload length differs from d".into(),
                ));
            }
            for &x in values {
                write_float(&mut w, x, header.precision).map_err(wire_err)?;
                written += float_bits;
            }
        }
        (Payload::Sparse { indices, values }, CompressorKind::TopK { k }) => {
            if indices.len() != k || values.len() != k {
                return Err(CompressionError::Wire(
                    "sparse payload does not hold k entries".into(),
                ));
            }
            let ib = index_bits(header.d);
            for (&i, &x) in indices.iter().zip(values) {
                if i as usize >= header.d {
                    return Err(CompressionError::Wire(format!("index {i} out of range")));
                }
                if ib > 0 {
                    w.write(ib, i).map_err(wire_err)?;
                }
                write_float(&mut w, x, header.precision).map_err(wire_err)?;
                written += ib as u64 + float_bits;
            }
        }
        (Payload::Quantized { b, norm, levels }, CompressorKind::BBits { b: hb }) => {
            if *b != hb {
                return Err(CompressionError::Wire(
                    "payload bit width differs from header".into(),
                ));
            }
            write_float(&mut w, *norm, header.precision).map_err(wire_err)?;
            written += float_bits;
            if *norm != 0.0 {
                if levels.len() != header.d {
                    return Err(CompressionError::Wire("level count differs from d".into()));
                }
                let max = 1u32 << (hb - 1);
                for &l in levels {
                    let mag = l.unsigned_abs();
                    if mag > max {
                        return Err(CompressionError::Wire(format!("level {l} exceeds {max}")));
                    }
                    w.write_bit(l < 0).map_err(wire_err)?;
                    w.write(hb, mag).map_err(wire_err)?;
                    written += 1 + hb as u64;
                }
            }
        }
        _ => {
            return Err(CompressionError::Wire(
                "payload does not match compressor kind".into(),
            ))
        }
    }
    w.byte_align().map_err(wire_err)?;
    Ok((w.into_writer(), written))
}

pub fn decode(bytes: &[u8], header: &WireHeader) -> Result<Payload, CompressionError> {
    let mut r = BitReader::endian(bytes, BigEndian);
    let payload = match header.kind {
        CompressorKind::Identity => {
            let values = (0..header.d)
                .map(|_| read_float(&mut r, header.precision))
                .collect::<io::Result<Vec<_>>>()
                .map_err(wire_err)?;
            Payload::Dense(values)
        }
        CompressorKind::TopK { k } => {
            let ib = index_bits(header.d);
            let mut indices = Vec::with_capacity(k);
            let mut values = Vec::with_capacity(k);
            for _ in 0..k {
                let i = if ib > 0 {
                    r.read::<u32>(ib).map_err(wire_err)?
                } else {
                    0
                };
                if i as usize >= header.d {
                    return Err(CompressionError::Wire(format!("index {i} out of range")));
                }
                indices.push(i);
                values.push(read_float(&mut r, header.precision).map_err(wire_err)?);
            }
            Payload::Sparse { indices, values }
        }
        CompressorKind::BBits { b } => {
            let norm = read_float(&mut r, header.precision).map_err(wire_err)?;
            let mut levels = Vec::new();
            if norm != 0.0 {
                levels.reserve(header.d);
                for _ in 0..header.d {
                    let negative = r.read_bit().map_err(wire_err)?;
                    let mag = r.read::<u32>(b).map_err(wire_err)? as i32;
                    levels.push(if negative { -mag } else { mag });
                }
            }
            Payload::Quantized { b, norm, levels }
        }
    };
    Ok(payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compression::{compress_b_bits, compress_identity, compress_top_k, CompressorSpec};
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn f32_rounded(p: &Payload) -> Payload {
        let r = |x: f64| x as f32 as f64;
        match p {
            Payload::Dense(v) => Payload::Dense(v.iter().map(|&x| r(x)).collect()),
            Payload::Sparse { indices, values } => Payload::Sparse {
                indices: indices.clone(),
                values: values.iter().map(|&x| r(x)).collect(),
            },
            Payload::Quantized { b, norm, levels } => Payload::Quantized {
                b: *b,
                norm: r(*norm),
                levels: levels.clone(),
            },
        }
    }

    #[test]
    fn f32_length_matches_accounting() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DVector::from_column_slice(&[0.3, -1.2, 4.0, 0.0, 2.2, -0.7, 0.1, 0.9, -3.3, 1.0]);
        let cases = [
            (
                compress_top_k(&x, 2).unwrap(),
                CompressorSpec::top_k(2, 10).unwrap(),
            ),
            (
                compress_b_bits(&x, 2, &mut rng).unwrap(),
                CompressorSpec::with_constants(CompressorKind::BBits { b: 2 }, 10, 1.0, 0.5)
                    .unwrap(),
            ),
            (compress_identity(&x), CompressorSpec::identity(10)),
        ];
        for (msg, spec) in cases {
            let header = spec.wire_header(WirePrecision::F32);
            let (bytes, bits) = encode(&msg.payload, &header).unwrap();
            assert_eq!(bits, msg.bits, "{}", spec.label());
            assert_eq!(bytes.len() as u64, bits.div_ceil(8));
            assert_eq!(decode(&bytes, &header).unwrap(), f32_rounded(&msg.payload));
        }
    }

    #[test]
    fn f64_round_trip_is_exact() {
        let x = DVector::from_column_slice(&[0.1, -0.2, 0.30000000000000004]);
        let msg = compress_top_k(&x, 3).unwrap();
        let header = CompressorSpec::top_k(3, 3)
            .unwrap()
            .wire_header(WirePrecision::F64);
        let (bytes, _) = encode(&msg.payload, &header).unwrap();
        let back = decode(&bytes, &header).unwrap();
        assert_eq!(back.reconstruct(3), msg.reconstructed);
    }

    #[test]
    fn zero_vector_sends_only_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let msg = compress_b_bits(&DVector::zeros(4), 3, &mut rng).unwrap();
        let header = WireHeader {
            kind: CompressorKind::BBits { b: 3 },
            d: 4,
            precision: WirePrecision::F32,
        };
        let (bytes, bits) = encode(&msg.payload, &header).unwrap();
        assert_eq!((bytes.len(), bits), (4, 32));
        assert_eq!(
            decode(&bytes, &header).unwrap().reconstruct(4),
            DVector::zeros(4)
        );
    }

    #[test]
    fn mismatched_kind_rejected() {
        let msg = compress_identity(&DVector::from_column_slice(&[1.0]));
        let header = WireHeader {
            kind: CompressorKind::TopK { k: 1 },
            d: 1,
            precision: WirePrecision::F32,
        };
        assert!(matches!(
            encode(&msg.payload, &header),
            Err(CompressionError::Wire(_))
        ));
        assert!(decode(&[0u8; 2], &header).is_err());
    }
}
