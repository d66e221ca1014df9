//! Small binary formats: little-endian field helpers, P6 PPM images, and
//! VOX1 voxel grid files.
//!
//! VOX1 layout: magic `VOX1`, D as u16 LE, then either D^3 bits packed per
//! the binarizer layout (ground-truth grids) or D^3 f32 LE values
//! (prediction grids). The two payloads have different lengths, which is
//! how readers tell them apart.

use crate::binarizer::{pack_bits, unpack_bits, BinaryCode};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};
use std::io::{Read, Write};

pub(crate) fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_all(&[v])?;
    Ok(())
}

pub(crate) fn write_u16<W: Write>(w: &mut W, v: u16) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u128<W: Write>(w: &mut W, v: u128) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

macro_rules! read_le {
    ($name:ident, $ty:ty, $n:expr) => {
        pub(crate) fn $name<R: Read>(r: &mut R, what: &'static str) -> Result<$ty> {
            let mut buf = [0u8; $n];
            r.read_exact(&mut buf)
                .map_err(|_| Error::format(what, "truncated file"))?;
            Ok(<$ty>::from_le_bytes(buf))
        }
    };
}

read_le!(read_u16, u16, 2);
read_le!(read_u32, u32, 4);
read_le!(read_u64, u64, 8);
read_le!(read_u128, u128, 16);
read_le!(read_f32, f32, 4);

pub(crate) fn read_u8<R: Read>(r: &mut R, what: &'static str) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format(what, "truncated file"))?;
    Ok(buf[0])
}

pub(crate) fn read_magic<R: Read>(r: &mut R, expect: &[u8; 4], what: &'static str) -> Result<()> {
    let mut m = [0u8; 4];
    r.read_exact(&mut m)
        .map_err(|_| Error::format(what, "truncated file"))?;
    if &m != expect {
        return Err(Error::format(
            what,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expect)
            ),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255)
// ---------------------------------------------------------------------------

/// Write an image tensor `[3, H, W]` with values in [0,1] as binary PPM.
/// Values are clamped then rounded to 8 bits.
pub fn write_ppm<T: Scalar, W: Write>(w: &mut W, img: &Tensor<T>) -> Result<()> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::format("ppm", format!("expected [3,H,W], got {s:?}")));
    }
    let (h, wd) = (s[1], s[2]);
    write!(w, "P6\n{wd} {h}\n255\n")?;
    let d = img.data();
    let plane = h * wd;
    let mut row = Vec::with_capacity(wd * 3);
    for y in 0..h {
        row.clear();
        for x in 0..wd {
            for c in 0..3 {
                let v = d[c * plane + y * wd + x].as_f64().clamp(0.0, 1.0);
                row.push((v * 255.0).round() as u8);
            }
        }
        w.write_all(&row)?;
    }
    Ok(())
}

/// Read a binary PPM into a `[3, H, W]` tensor in [0,1].
pub fn read_ppm<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut content = Vec::new();
    r.read_to_end(&mut content)?;
    // header: "P6" ws width ws height ws maxval single-ws data
    let mut pos = 0usize;
    let mut token = |content: &[u8]| -> Result<String> {
        while pos < content.len() && content[pos].is_ascii_whitespace() {
            pos += 1;
        }
        // comments
        while pos < content.len() && content[pos] == b'#' {
            while pos < content.len() && content[pos] != b'\n' {
                pos += 1;
            }
            while pos < content.len() && content[pos].is_ascii_whitespace() {
                pos += 1;
            }
        }
        let start = pos;
        while pos < content.len() && !content[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("ppm", "truncated header"));
        }
        Ok(String::from_utf8_lossy(&content[start..pos]).into_owned())
    };
    if token(&content)? != "P6" {
        return Err(Error::format("ppm", "not a P6 file"));
    }
    let w: usize = token(&content)?
        .parse()
        .map_err(|_| Error::format("ppm", "bad width"))?;
    let h: usize = token(&content)?
        .parse()
        .map_err(|_| Error::format("ppm", "bad height"))?;
    let maxval: usize = token(&content)?
        .parse()
        .map_err(|_| Error::format("ppm", "bad maxval"))?;
    if maxval != 255 {
        return Err(Error::format("ppm", format!("unsupported maxval {maxval}")));
    }
    pos += 1; // single whitespace after maxval
    let need = w * h * 3;
    if content.len() < pos + need {
        return Err(Error::format("ppm", "truncated pixel data"));
    }
    let raw = &content[pos..pos + need];
    let plane = w * h;
    let mut data = vec![T::zero(); 3 * plane];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[c * plane + y * w + x] =
                    T::from_f64(raw[(y * w + x) * 3 + c] as f64 / 255.0);
            }
        }
    }
    Tensor::from_vec(vec![3, h, w], data)
}

// ---------------------------------------------------------------------------
// VOX1 voxel grids
// ---------------------------------------------------------------------------

const VOX_MAGIC: &[u8; 4] = b"VOX1";

/// Binary occupancy grid of side `d` (ground truth).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelGrid {
    pub d: usize,
    pub occ: Vec<bool>,
}

impl VoxelGrid {
    pub fn empty(d: usize) -> Self {
        VoxelGrid { d, occ: vec![false; d * d * d] }
    }

    #[inline]
    pub fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.d + y) * self.d + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occ[self.idx(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.idx(x, y, z);
        self.occ[i] = v;
    }

    pub fn count(&self) -> usize {
        self.occ.iter().filter(|&&v| v).count()
    }

    /// Occupancy as a flat 0/1 tensor of length d^3.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.occ.iter().map(|&v| if v { T::one() } else { T::zero() }).collect();
        Tensor::from_vec(vec![self.d * self.d * self.d], data).expect("sized by construction")
    }
}

pub fn write_vox_binary<W: Write>(w: &mut W, grid: &VoxelGrid) -> Result<()> {
    w.write_all(VOX_MAGIC)?;
    write_u16(w, grid.d as u16)?;
    let bits: Vec<i8> = grid.occ.iter().map(|&v| if v { 1 } else { -1 }).collect();
    let code = BinaryCode::new(bits, vec![grid.occ.len()])?;
    w.write_all(&pack_bits(&code))?;
    Ok(())
}

pub fn write_vox_probs<W: Write>(w: &mut W, d: usize, probs: &[f32]) -> Result<()> {
    if probs.len() != d * d * d {
        return Err(Error::format("vox", format!("{} probs for d={d}", probs.len())));
    }
    w.write_all(VOX_MAGIC)?;
    write_u16(w, d as u16)?;
    for &p in probs {
        write_f32(w, p)?;
    }
    Ok(())
}

/// Either payload kind of a VOX1 file.
pub enum VoxPayload {
    Binary(VoxelGrid),
    Probs { d: usize, probs: Vec<f32> },
}

pub fn read_vox<R: Read>(r: &mut R) -> Result<VoxPayload> {
    read_magic(r, VOX_MAGIC, "vox")?;
    let d = read_u16(r, "vox")? as usize;
    if d == 0 {
        return Err(Error::format("vox", "zero grid size"));
    }
    let n = d * d * d;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if rest.len() == n.div_ceil(8) {
        let code = unpack_bits(&rest, n, vec![n])?;
        let occ = code.bits().iter().map(|&b| b > 0).collect();
        Ok(VoxPayload::Binary(VoxelGrid { d, occ }))
    } else if rest.len() == n * 4 {
        let probs = rest
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(VoxPayload::Probs { d, probs })
    } else {
        Err(Error::format(
            "vox",
            format!(
                "payload of {} bytes matches neither packed bits ({}) nor f32 ({}) for d={d}",
                rest.len(),
                n.div_ceil(8),
                n * 4
            ),
        ))
    }
}

pub fn read_vox_binary(path: &std::path::Path) -> Result<VoxelGrid> {
    let mut f = std::fs::File::open(path).map_err(|e| Error::Path(path.display().to_string(), e))?;
    match read_vox(&mut f)? {
        VoxPayload::Binary(g) => Ok(g),
        VoxPayload::Probs { .. } => Err(Error::format("vox", "expected binary grid, found probabilities")),
    }
}
