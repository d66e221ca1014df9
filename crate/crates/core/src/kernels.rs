//! Raw numeric kernels behind the tape's structured ops: 2D/3D
//! cross-correlation, max-pooling, depth-to-space and nearest upsampling.
//!
//! Inner loops run over precomputed valid index ranges so the hot paths
//! are branch-free slice traversals. Every parallel split assigns whole
//! output elements to one task and keeps the per-element reduction order
//! fixed, so results are bit-identical whether a kernel runs serially or
//! across threads.

use crate::tensor::Scalar;
use rayon::prelude::*;

/// Work below this many output elements runs serially; rayon dispatch costs
/// more than it saves on tiny tensors (gradient checks build thousands).
const PAR_THRESHOLD: usize = 1 << 13;

fn maybe_par<T: Scalar>(
    out: &mut [T],
    chunk: usize,
    parallel: bool,
    f: impl Fn(usize, &mut [T]) + Send + Sync,
) {
    if parallel && out.len() >= PAR_THRESHOLD && out.len() / chunk > 1 {
        out.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Output extent for one axis: exact division is enforced by the caller.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if kernel > padded {
        return None;
    }
    let span = padded - kernel;
    if span % stride != 0 {
        return None;
    }
    Some(span / stride + 1)
}

/// Output indices o with 0 <= o*stride + k - pad < extent, clamped to
/// [0, out_extent).
#[inline]
fn valid_out_range(
    extent: usize,
    out_extent: usize,
    stride: usize,
    k: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let hi_incl = extent as isize - 1 + pad as isize - k as isize;
    if hi_incl < 0 {
        return (0, 0);
    }
    let hi = (hi_incl as usize / stride + 1).min(out_extent);
    (lo.min(hi), hi)
}

// ---------------------------------------------------------------------------
// conv2d: x[B,C,H,W] * w[F,C,kh,kw] -> y[B,F,OH,OW]
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct Conv2dDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv2d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    d: Conv2dDims,
    parallel: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); d.batch * d.c_out * d.oh * d.ow];
    let plane = d.oh * d.ow;
    // contribution order per output element: (c, ky, kx) ascending, bias last
    maybe_par(&mut out, plane, parallel, |bf, chunk| {
        let b = bf / d.c_out;
        let f = bf % d.c_out;
        let x_img = &x[b * d.c_in * d.h * d.w..(b + 1) * d.c_in * d.h * d.w];
        let w_f = &w[f * d.c_in * d.kh * d.kw..(f + 1) * d.c_in * d.kh * d.kw];
        for c in 0..d.c_in {
            let x_ch = &x_img[c * d.h * d.w..(c + 1) * d.h * d.w];
            let w_ch = &w_f[c * d.kh * d.kw..(c + 1) * d.kh * d.kw];
            for ky in 0..d.kh {
                let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, d.stride, ky, d.pad);
                for kx in 0..d.kw {
                    let wv = w_ch[ky * d.kw + kx];
                    let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, d.stride, kx, d.pad);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * d.stride + ky - d.pad;
                        let xrow = &x_ch[iy * d.w..(iy + 1) * d.w];
                        let orow = &mut chunk[oy * d.ow..(oy + 1) * d.ow];
                        if d.stride == 1 {
                            let base = kx.wrapping_sub(d.pad);
                            for ox in ox_lo..ox_hi {
                                orow[ox] = orow[ox] + wv * xrow[ox.wrapping_add(base)];
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                orow[ox] = orow[ox] + wv * xrow[ox * d.stride + kx - d.pad];
                            }
                        }
                    }
                }
            }
        }
        if let Some(bv) = bias {
            let b0 = bv[f];
            for v in chunk.iter_mut() {
                *v = *v + b0;
            }
        }
    });
    out
}

pub fn conv2d_backward_input<T: Scalar>(
    dy: &[T],
    w: &[T],
    d: Conv2dDims,
    parallel: bool,
) -> Vec<T> {
    let mut dx = vec![T::zero(); d.batch * d.c_in * d.h * d.w];
    let plane = d.h * d.w;
    // contribution order per input element: (f, ky, kx) ascending; distinct
    // (ox, kx) pairs write distinct input columns, so the scatter is safe
    maybe_par(&mut dx, plane, parallel, |bc, chunk| {
        let b = bc / d.c_in;
        let c = bc % d.c_in;
        let dy_img = &dy[b * d.c_out * d.oh * d.ow..(b + 1) * d.c_out * d.oh * d.ow];
        for f in 0..d.c_out {
            let dy_ch = &dy_img[f * d.oh * d.ow..(f + 1) * d.oh * d.ow];
            let w_fc = &w[(f * d.c_in + c) * d.kh * d.kw..(f * d.c_in + c + 1) * d.kh * d.kw];
            for ky in 0..d.kh {
                let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, d.stride, ky, d.pad);
                for kx in 0..d.kw {
                    let wv = w_fc[ky * d.kw + kx];
                    let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, d.stride, kx, d.pad);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * d.stride + ky - d.pad;
                        let dyrow = &dy_ch[oy * d.ow..(oy + 1) * d.ow];
                        let dxrow = &mut chunk[iy * d.w..(iy + 1) * d.w];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * d.stride + kx - d.pad;
                            dxrow[ix] = dxrow[ix] + wv * dyrow[ox];
                        }
                    }
                }
            }
        }
    });
    dx
}

pub fn conv2d_backward_weight<T: Scalar>(
    dy: &[T],
    x: &[T],
    d: Conv2dDims,
    parallel: bool,
) -> Vec<T> {
    let mut dw = vec![T::zero(); d.c_out * d.c_in * d.kh * d.kw];
    let per_f = d.c_in * d.kh * d.kw;
    // reduction order per weight element: (b, oy, ox) ascending
    maybe_par(&mut dw, per_f, parallel, |f, chunk| {
        for c in 0..d.c_in {
            for ky in 0..d.kh {
                let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, d.stride, ky, d.pad);
                for kx in 0..d.kw {
                    let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, d.stride, kx, d.pad);
                    let mut acc = T::zero();
                    for b in 0..d.batch {
                        let dy_ch = &dy[(b * d.c_out + f) * d.oh * d.ow..][..d.oh * d.ow];
                        let x_ch = &x[(b * d.c_in + c) * d.h * d.w..][..d.h * d.w];
                        for oy in oy_lo..oy_hi {
                            let iy = oy * d.stride + ky - d.pad;
                            let dyrow = &dy_ch[oy * d.ow..(oy + 1) * d.ow];
                            let xrow = &x_ch[iy * d.w..(iy + 1) * d.w];
                            if d.stride == 1 {
                                let base = kx.wrapping_sub(d.pad);
                                for ox in ox_lo..ox_hi {
                                    acc = acc + dyrow[ox] * xrow[ox.wrapping_add(base)];
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    acc = acc + dyrow[ox] * xrow[ox * d.stride + kx - d.pad];
                                }
                            }
                        }
                    }
                    chunk[(c * d.kh + ky) * d.kw + kx] = acc;
                }
            }
        }
    });
    dw
}

pub fn conv2d_backward_bias<T: Scalar>(dy: &[T], d: Conv2dDims) -> Vec<T> {
    let mut db = vec![T::zero(); d.c_out];
    for b in 0..d.batch {
        for f in 0..d.c_out {
            let plane = &dy[(b * d.c_out + f) * d.oh * d.ow..][..d.oh * d.ow];
            let mut acc = db[f];
            for &v in plane {
                acc = acc + v;
            }
            db[f] = acc;
        }
    }
    db
}

// ---------------------------------------------------------------------------
// conv3d: x[B,C,D,H,W] * w[F,C,kd,kh,kw] -> y[B,F,OD,OH,OW]
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub struct Conv3dDims {
    pub batch: usize,
    pub c_in: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kd: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub od: usize,
    pub oh: usize,
    pub ow: usize,
}

pub fn conv3d_forward<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: Option<&[T]>,
    d: Conv3dDims,
    parallel: bool,
) -> Vec<T> {
    let in_vol = d.d * d.h * d.w;
    let out_vol = d.od * d.oh * d.ow;
    let k_vol = d.kd * d.kh * d.kw;
    let mut out = vec![T::zero(); d.batch * d.c_out * out_vol];
    // contribution order per output element: (c, kz, ky, kx) ascending
    maybe_par(&mut out, out_vol, parallel, |bf, chunk| {
        let b = bf / d.c_out;
        let f = bf % d.c_out;
        let x_img = &x[b * d.c_in * in_vol..(b + 1) * d.c_in * in_vol];
        let w_f = &w[f * d.c_in * k_vol..(f + 1) * d.c_in * k_vol];
        for c in 0..d.c_in {
            let x_ch = &x_img[c * in_vol..(c + 1) * in_vol];
            let w_ch = &w_f[c * k_vol..(c + 1) * k_vol];
            for kz in 0..d.kd {
                let (oz_lo, oz_hi) = valid_out_range(d.d, d.od, d.stride, kz, d.pad);
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, d.stride, ky, d.pad);
                    for kx in 0..d.kw {
                        let wv = w_ch[(kz * d.kh + ky) * d.kw + kx];
                        let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, d.stride, kx, d.pad);
                        for oz in oz_lo..oz_hi {
                            let iz = oz * d.stride + kz - d.pad;
                            for oy in oy_lo..oy_hi {
                                let iy = oy * d.stride + ky - d.pad;
                                let xrow =
                                    &x_ch[(iz * d.h + iy) * d.w..(iz * d.h + iy + 1) * d.w];
                                let orow = &mut chunk
                                    [(oz * d.oh + oy) * d.ow..(oz * d.oh + oy + 1) * d.ow];
                                if d.stride == 1 {
                                    let base = kx.wrapping_sub(d.pad);
                                    for ox in ox_lo..ox_hi {
                                        orow[ox] = orow[ox] + wv * xrow[ox.wrapping_add(base)];
                                    }
                                } else {
                                    for ox in ox_lo..ox_hi {
                                        orow[ox] =
                                            orow[ox] + wv * xrow[ox * d.stride + kx - d.pad];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(bv) = bias {
            let b0 = bv[f];
            for v in chunk.iter_mut() {
                *v = *v + b0;
            }
        }
    });
    out
}

pub fn conv3d_backward_input<T: Scalar>(
    dy: &[T],
    w: &[T],
    d: Conv3dDims,
    parallel: bool,
) -> Vec<T> {
    let in_vol = d.d * d.h * d.w;
    let out_vol = d.od * d.oh * d.ow;
    let k_vol = d.kd * d.kh * d.kw;
    let mut dx = vec![T::zero(); d.batch * d.c_in * in_vol];
    // contribution order per input element: (f, kz, ky, kx) ascending
    maybe_par(&mut dx, in_vol, parallel, |bc, chunk| {
        let b = bc / d.c_in;
        let c = bc % d.c_in;
        let dy_img = &dy[b * d.c_out * out_vol..(b + 1) * d.c_out * out_vol];
        for f in 0..d.c_out {
            let dy_ch = &dy_img[f * out_vol..(f + 1) * out_vol];
            let w_fc = &w[(f * d.c_in + c) * k_vol..(f * d.c_in + c + 1) * k_vol];
            for kz in 0..d.kd {
                let (oz_lo, oz_hi) = valid_out_range(d.d, d.od, d.stride, kz, d.pad);
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, d.stride, ky, d.pad);
                    for kx in 0..d.kw {
                        let wv = w_fc[(kz * d.kh + ky) * d.kw + kx];
                        let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, d.stride, kx, d.pad);
                        for oz in oz_lo..oz_hi {
                            let iz = oz * d.stride + kz - d.pad;
                            for oy in oy_lo..oy_hi {
                                let iy = oy * d.stride + ky - d.pad;
                                let dyrow = &dy_ch
                                    [(oz * d.oh + oy) * d.ow..(oz * d.oh + oy + 1) * d.ow];
                                let dxrow = &mut chunk
                                    [(iz * d.h + iy) * d.w..(iz * d.h + iy + 1) * d.w];
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * d.stride + kx - d.pad;
                                    dxrow[ix] = dxrow[ix] + wv * dyrow[ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

pub fn conv3d_backward_weight<T: Scalar>(
    dy: &[T],
    x: &[T],
    d: Conv3dDims,
    parallel: bool,
) -> Vec<T> {
    let in_vol = d.d * d.h * d.w;
    let out_vol = d.od * d.oh * d.ow;
    let k_vol = d.kd * d.kh * d.kw;
    let mut dw = vec![T::zero(); d.c_out * d.c_in * k_vol];
    // reduction order per weight element: (b, oz, oy, ox) ascending
    maybe_par(&mut dw, d.c_in * k_vol, parallel, |f, chunk| {
        for c in 0..d.c_in {
            for kz in 0..d.kd {
                let (oz_lo, oz_hi) = valid_out_range(d.d, d.od, d.stride, kz, d.pad);
                for ky in 0..d.kh {
                    let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, d.stride, ky, d.pad);
                    for kx in 0..d.kw {
                        let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, d.stride, kx, d.pad);
                        let mut acc = T::zero();
                        for b in 0..d.batch {
                            let dy_ch = &dy[(b * d.c_out + f) * out_vol..][..out_vol];
                            let x_ch = &x[(b * d.c_in + c) * in_vol..][..in_vol];
                            for oz in oz_lo..oz_hi {
                                let iz = oz * d.stride + kz - d.pad;
                                for oy in oy_lo..oy_hi {
                                    let iy = oy * d.stride + ky - d.pad;
                                    let dyrow = &dy_ch
                                        [(oz * d.oh + oy) * d.ow..(oz * d.oh + oy + 1) * d.ow];
                                    let xrow =
                                        &x_ch[(iz * d.h + iy) * d.w..(iz * d.h + iy + 1) * d.w];
                                    if d.stride == 1 {
                                        let base = kx.wrapping_sub(d.pad);
                                        for ox in ox_lo..ox_hi {
                                            acc = acc + dyrow[ox] * xrow[ox.wrapping_add(base)];
                                        }
                                    } else {
                                        for ox in ox_lo..ox_hi {
                                            acc = acc
                                                + dyrow[ox] * xrow[ox * d.stride + kx - d.pad];
                                        }
                                    }
                                }
                            }
                        }
                        chunk[(c * d.kd + kz) * d.kh * d.kw + ky * d.kw + kx] = acc;
                    }
                }
            }
        }
    });
    dw
}

pub fn conv3d_backward_bias<T: Scalar>(dy: &[T], d: Conv3dDims) -> Vec<T> {
    let out_vol = d.od * d.oh * d.ow;
    let mut db = vec![T::zero(); d.c_out];
    for b in 0..d.batch {
        for f in 0..d.c_out {
            let mut acc = db[f];
            for &v in &dy[(b * d.c_out + f) * out_vol..][..out_vol] {
                acc = acc + v;
            }
            db[f] = acc;
        }
    }
    db
}

// ---------------------------------------------------------------------------
// max-pool 2d, window k, stride s (non-overlapping in this codebase)
// ---------------------------------------------------------------------------

/// Forward max-pool; returns (values, argmax flat indices into x).
/// Ties go to the first element in row-major window order.
pub fn maxpool2d_forward<T: Scalar>(
    x: &[T],
    batch_ch: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
) -> (Vec<T>, Vec<u32>) {
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = vec![T::zero(); batch_ch * oh * ow];
    let mut arg = vec![0u32; batch_ch * oh * ow];
    for p in 0..batch_ch {
        let x_ch = &x[p * h * w..][..h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = x_ch[oy * stride * w + ox * stride];
                let mut best_i = oy * stride * w + ox * stride;
                for ky in 0..k {
                    for kx in 0..k {
                        let i = (oy * stride + ky) * w + ox * stride + kx;
                        if x_ch[i] > best {
                            best = x_ch[i];
                            best_i = i;
                        }
                    }
                }
                out[p * oh * ow + oy * ow + ox] = best;
                arg[p * oh * ow + oy * ow + ox] = (p * h * w + best_i) as u32;
            }
        }
    }
    (out, arg)
}

// ---------------------------------------------------------------------------
// depth_to_space / space_to_depth (pixel shuffle), c-major block layout:
// out[b, c, y*k+dy, x*k+dx] = in[b, c*k*k + dy*k + dx, y, x]
// ---------------------------------------------------------------------------

pub fn depth_to_space_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<T> {
    let c_out = c_in / (k * k);
    let mut out = vec![T::zero(); batch * c_in * h * w];
    for b in 0..batch {
        for c in 0..c_out {
            for dy in 0..k {
                for dx in 0..k {
                    let cin = c * k * k + dy * k + dx;
                    for y in 0..h {
                        for x_ in 0..w {
                            let src = ((b * c_in + cin) * h + y) * w + x_;
                            let dst = ((b * c_out + c) * (h * k) + y * k + dy) * (w * k)
                                + x_ * k
                                + dx;
                            out[dst] = x[src];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn space_to_depth_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<T> {
    // exact inverse of depth_to_space with c_out = c_in * k * k
    let c_out = c_in * k * k;
    let oh = h / k;
    let ow = w / k;
    let mut out = vec![T::zero(); batch * c_in * h * w];
    for b in 0..batch {
        for c in 0..c_in {
            for dy in 0..k {
                for dx in 0..k {
                    let cdst = c * k * k + dy * k + dx;
                    for y in 0..oh {
                        for x_ in 0..ow {
                            let src = ((b * c_in + c) * h + y * k + dy) * w + x_ * k + dx;
                            let dst = ((b * c_out + cdst) * oh + y) * ow + x_;
                            out[dst] = x[src];
                        }
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// nearest-neighbor 3d upsample by k
// ---------------------------------------------------------------------------

pub fn upsample3d_forward<T: Scalar>(
    x: &[T],
    batch_ch: usize,
    d: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<T> {
    let (od, oh, ow) = (d * k, h * k, w * k);
    let mut out = vec![T::zero(); batch_ch * od * oh * ow];
    for p in 0..batch_ch {
        let src = &x[p * d * h * w..][..d * h * w];
        let dst = &mut out[p * od * oh * ow..][..od * oh * ow];
        for z in 0..od {
            for y in 0..oh {
                let srow = &src[((z / k) * h + y / k) * w..][..w];
                let drow = &mut dst[(z * oh + y) * ow..][..ow];
                for (x_, v) in drow.iter_mut().enumerate() {
                    *v = srow[x_ / k];
                }
            }
        }
    }
    out
}

pub fn upsample3d_backward<T: Scalar>(
    dy: &[T],
    batch_ch: usize,
    d: usize,
    h: usize,
    w: usize,
    k: usize,
) -> Vec<T> {
    let (od, oh, ow) = (d * k, h * k, w * k);
    let mut dx = vec![T::zero(); batch_ch * d * h * w];
    for p in 0..batch_ch {
        let src = &dy[p * od * oh * ow..][..od * oh * ow];
        let dst = &mut dx[p * d * h * w..][..d * h * w];
        for z in 0..d {
            for y in 0..h {
                for x_ in 0..w {
                    let mut acc = T::zero();
                    for dz in 0..k {
                        for dyy in 0..k {
                            let row =
                                &src[((z * k + dz) * oh + y * k + dyy) * ow + x_ * k..][..k];
                            for &v in row {
                                acc = acc + v;
                            }
                        }
                    }
                    dst[(z * h + y) * w + x_] = acc;
                }
            }
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// matmul: a[m,k] * b[k,n] -> c[m,n]
// ---------------------------------------------------------------------------

pub fn matmul<T: Scalar>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    parallel: bool,
) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    // Row accumulation: per element the reduction order over p is ascending,
    // identical to the naive triple loop.
    maybe_par(&mut c, n, parallel, |i, row| {
        for p in 0..k {
            let aip = a[i * k + p];
            let brow = &b[p * n..p * n + n];
            for (rj, bj) in row.iter_mut().zip(brow) {
                *rj = *rj + aip * *bj;
            }
        }
    });
    c
}
