//! Binary codes and bit packing for the straight-through binarizer.
//!
//! The binarization ops themselves live on the tape
//! ([`crate::tape::Tape::binarize_train`], [`Tape::binarize_infer`]); this
//! module holds the code container and the normative bit layout used by the
//! bitstream and voxel file formats: -1 maps to 0, +1 to 1, packed 8 bits
//! per byte MSB-first, final byte zero-padded.

use crate::error::{Error, Result};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};

/// A vector over {-1,+1} with the shape it was flattened from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCode {
    bits: Vec<i8>,
    origin_shape: Vec<usize>,
}

impl BinaryCode {
    pub fn new(bits: Vec<i8>, origin_shape: Vec<usize>) -> Result<Self> {
        if bits.iter().any(|&b| b != 1 && b != -1) {
            return Err(Error::format("binary code", "elements must be exactly -1 or +1"));
        }
        let n: usize = origin_shape.iter().product();
        if n != bits.len() {
            return Err(Error::format(
                "binary code",
                format!("shape {:?} implies {} bits, got {}", origin_shape, n, bits.len()),
            ));
        }
        Ok(BinaryCode { bits, origin_shape })
    }

    /// Extract from a tensor whose elements are exactly ±1 (the value of a
    /// binarize op on the tape).
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let bits = t
            .data()
            .iter()
            .map(|&v| {
                if v == T::one() {
                    Ok(1i8)
                } else if v == -T::one() {
                    Ok(-1i8)
                } else {
                    Err(Error::format("binary code", format!("non-binary element {v}")))
                }
            })
            .collect::<Result<Vec<i8>>>()?;
        BinaryCode::new(bits, t.shape().to_vec())
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .bits
            .iter()
            .map(|&b| if b > 0 { T::one() } else { -T::one() })
            .collect();
        Tensor::from_vec(self.origin_shape.clone(), data).expect("shape verified at construction")
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[i8] {
        &self.bits
    }

    pub fn origin_shape(&self) -> &[usize] {
        &self.origin_shape
    }
}

/// Pack ±1 bits into bytes: -1 -> 0, +1 -> 1, MSB-first, zero padding.
pub fn pack_bits(code: &BinaryCode) -> Vec<u8> {
    let mut out = vec![0u8; code.bits.len().div_ceil(8)];
    for (i, &b) in code.bits.iter().enumerate() {
        if b > 0 {
            out[i / 8] |= 0x80 >> (i % 8);
        }
    }
    out
}

/// Inverse of [`pack_bits`] given the bit count and original shape.
pub fn unpack_bits(bytes: &[u8], m: usize, origin_shape: Vec<usize>) -> Result<BinaryCode> {
    if bytes.len() < m.div_ceil(8) {
        return Err(Error::format(
            "binary code",
            format!("need {} bytes for {} bits, got {}", m.div_ceil(8), m, bytes.len()),
        ));
    }
    let bits = (0..m)
        .map(|i| if bytes[i / 8] & (0x80 >> (i % 8)) != 0 { 1i8 } else { -1i8 })
        .collect();
    BinaryCode::new(bits, origin_shape)
}

/// Straight-through backward: the upstream gradient is returned unchanged.
pub fn straight_through_backward<T: Scalar>(upstream: &Tensor<T>) -> Tensor<T> {
    upstream.clone()
}

/// Convenience wrapper over the tape op for plain tensors (training mode).
pub fn binarize_train<T: Scalar>(
    x: &Tensor<T>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<BinaryCode> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), false);
    let b = tape.binarize_train(v, rng)?;
    BinaryCode::from_tensor(tape.value(b))
}

/// Convenience wrapper over the tape op for plain tensors (inference mode).
pub fn binarize_infer<T: Scalar>(x: &Tensor<T>) -> Result<BinaryCode> {
    let mut tape = Tape::new();
    let v = tape.leaf(x.clone(), false);
    let b = tape.binarize_infer(v)?;
    BinaryCode::from_tensor(tape.value(b))
}
