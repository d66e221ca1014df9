//! Multi-view 3D reconstruction: image encoder, 3D-ConvLSTM grid fusion
//! across viewpoints, and an occupancy decoder.
//!
//! The encoder is a shallow CNN (conv + LeakyReLU + max-pool blocks, then a
//! fully-connected layer to a K-vector). View embeddings are fused by the
//! 4x4x4 3D-ConvLSTM grid one viewpoint at a time; after the last view the
//! hidden grid is decoded by three upsample + conv3d stages
//! (4^3 -> 8^3 -> 16^3 -> 32^3), a final conv3d to 2 channels, and a
//! softmax over the two channels giving the per-voxel occupancy
//! probability.

use crate::cells::{Lstm3dGrid, LstmState, GRID_SIDE};
use crate::error::{Error, Result};
use crate::io::VoxelGrid;
use crate::metrics;
use crate::params::{Binding, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Slope of the LeakyReLU nonlinearities.
pub const LEAKY_ALPHA: f64 = 0.01;
/// Probability clamp inside the voxel cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recon3DConfig {
    /// View embedding length K.
    pub k_embed: usize,
    /// Hidden size per grid cell.
    pub n_hidden: usize,
    /// Output grid resolution (fixed 32: three doubling stages from 4).
    pub d_out: usize,
    pub height: usize,
    pub width: usize,
    /// Number of conv + max-pool blocks in the encoder (stride 2 each).
    pub pools: usize,
    /// Conv widths per encoder block, length `pools`.
    pub enc_widths: Vec<usize>,
    /// Conv widths of the three occupancy decoder stages.
    pub dec_widths: [usize; 3],
}

impl Recon3DConfig {
    /// Desk profile: 32x32 inputs, 4 max-pools, compact widths.
    pub fn desk(height: usize, width: usize) -> Self {
        Recon3DConfig {
            k_embed: 64,
            n_hidden: 32,
            d_out: 32,
            height,
            width,
            pools: 4,
            enc_widths: vec![16, 32, 32, 64],
            dec_widths: [32, 16, 8],
        }
    }

    /// Full-scale profile: 128x128 inputs, six max-pools (total encoder
    /// stride 64), K = 1024, N_h = 128.
    pub fn full_scale() -> Self {
        Recon3DConfig {
            k_embed: 1024,
            n_hidden: 128,
            d_out: 32,
            height: 128,
            width: 128,
            pools: 6,
            enc_widths: vec![16, 32, 64, 64, 128, 128],
            dec_widths: [128, 64, 32],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stride = 1usize << self.pools;
        if self.height == 0 || self.width == 0 || self.height % stride != 0 || self.width % stride != 0 {
            return Err(Error::config(
                "recon3d",
                format!(
                    "extents {}x{} must be divisible by the encoder stride {stride}",
                    self.height, self.width
                ),
            ));
        }
        if self.enc_widths.len() != self.pools {
            return Err(Error::config(
                "recon3d",
                format!("{} encoder widths for {} pools", self.enc_widths.len(), self.pools),
            ));
        }
        if self.d_out != GRID_SIDE * 8 {
            return Err(Error::config(
                "recon3d",
                format!("d_out {} unsupported; three doubling stages give {}", self.d_out, GRID_SIDE * 8),
            ));
        }
        if self.k_embed == 0 || self.n_hidden == 0 {
            return Err(Error::config("recon3d", "k_embed and n_hidden must be >= 1"));
        }
        Ok(())
    }

    pub fn voxels(&self) -> usize {
        self.d_out * self.d_out * self.d_out
    }
}

/// Predicted occupancy probabilities over a D^3 grid, strictly in (0,1).
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub d: usize,
    pub probs: Vec<f64>,
}

impl OccupancyGrid {
    /// Extract batch row `b` from a `[B, D^3]` probability tensor.
    pub fn from_tensor_row<T: Scalar>(t: &Tensor<T>, row: usize, d: usize) -> Result<Self> {
        let n = d * d * d;
        if t.shape().len() != 2 || t.shape()[1] != n || row >= t.shape()[0] {
            return Err(Error::config(
                "occupancy",
                format!("row {row} of {:?} is not a D^3={n} grid", t.shape()),
            ));
        }
        let probs = t.data()[row * n..(row + 1) * n].iter().map(|v| v.as_f64()).collect();
        Ok(OccupancyGrid { d, probs })
    }

    pub fn iou(&self, truth: &VoxelGrid, tau: f64) -> f64 {
        metrics::iou(&self.probs, &truth.occ, tau)
    }

    pub fn probs_f32(&self) -> Vec<f32> {
        self.probs.iter().map(|&p| p as f32).collect()
    }
}

struct EncBlock {
    w: ParamId,
    b: ParamId,
}

/// One conv3d stage of the occupancy decoder.
struct DecStage {
    w: ParamId,
    b: ParamId,
}

struct ViewEncoder {
    blocks: Vec<EncBlock>,
    fc_w: ParamId,
    fc_b: ParamId,
    out_len: usize,
    calls: AtomicUsize,
}

pub struct ReconNet {
    pub cfg: Recon3DConfig,
    enc: Option<ViewEncoder>,
    pub grid: Lstm3dGrid,
    stages: Vec<DecStage>,
    out_w: ParamId,
    out_b: ParamId,
    decode_calls: AtomicUsize,
}

impl ReconNet {
    /// `embed_len`: output width of the view encoder, `None` to omit the
    /// encoder entirely (codes feed the grid directly). `grid_input_len`
    /// is the length of the vector entering the 3D-ConvLSTM grid.
    pub fn init<T: Scalar>(
        cfg: Recon3DConfig,
        embed_len: Option<usize>,
        grid_input_len: usize,
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let enc = match embed_len {
            Some(out_len) => {
                let mut blocks = Vec::with_capacity(cfg.pools);
                let mut in_ch = 3;
                for (i, &w) in cfg.enc_widths.iter().enumerate() {
                    let fan_in = in_ch * 9;
                    blocks.push(EncBlock {
                        w: ps.add_uniform(
                            format!("e3d.conv{i}.w"),
                            vec![w, in_ch, 3, 3],
                            fan_in,
                            rng,
                        ),
                        b: ps.add_const(format!("e3d.conv{i}.b"), vec![w], 0.0),
                    });
                    in_ch = w;
                }
                let fh = cfg.height >> cfg.pools;
                let fw = cfg.width >> cfg.pools;
                let flat = in_ch * fh * fw;
                Some(ViewEncoder {
                    blocks,
                    fc_w: ps.add_uniform("e3d.fc.w", vec![flat, out_len], flat, rng),
                    fc_b: ps.add_const("e3d.fc.b", vec![out_len], 0.0),
                    out_len,
                    calls: AtomicUsize::new(0),
                })
            }
            None => None,
        };
        let grid = Lstm3dGrid::init("grid", grid_input_len, cfg.n_hidden, ps, rng);
        let mut stages = Vec::with_capacity(3);
        let mut in_ch = cfg.n_hidden;
        for (i, &w) in cfg.dec_widths.iter().enumerate() {
            let fan_in = in_ch * 27;
            stages.push(DecStage {
                w: ps.add_uniform(format!("d3d.stage{i}.w"), vec![w, in_ch, 3, 3, 3], fan_in, rng),
                b: ps.add_const(format!("d3d.stage{i}.b"), vec![w], 0.0),
            });
            in_ch = w;
        }
        // zero-initialized head: the untrained model predicts exactly 0.5
        // everywhere instead of a random blob it must first unlearn
        let out_w = ps.add_const("d3d.out.w", vec![2, in_ch, 3, 3, 3], 0.0);
        let out_b = ps.add_const("d3d.out.b", vec![2], 0.0);
        Ok(ReconNet {
            cfg,
            enc,
            grid,
            stages,
            out_w,
            out_b,
            decode_calls: AtomicUsize::new(0),
        })
    }

    pub fn has_encoder(&self) -> bool {
        self.enc.is_some()
    }

    pub fn encode_view_calls(&self) -> usize {
        self.enc.as_ref().map(|e| e.calls.load(Ordering::Relaxed)).unwrap_or(0)
    }

    pub fn decode_occupancy_calls(&self) -> usize {
        self.decode_calls.load(Ordering::Relaxed)
    }

    /// Embed one view `[B, 3, H, W]` (values in [0,1]) to `[B, K]`.
    pub fn encode_view<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        image01: Var,
    ) -> Result<Var> {
        let enc = self
            .enc
            .as_ref()
            .ok_or_else(|| Error::config("encode_view", "this model has no view encoder"))?;
        let shape = tape.shape(image01).to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != self.cfg.height || shape[3] != self.cfg.width
        {
            return Err(Error::ShapeMismatch {
                op: "encode_view",
                lhs: shape,
                rhs: vec![0, 3, self.cfg.height, self.cfg.width],
            });
        }
        enc.calls.fetch_add(1, Ordering::Relaxed);
        let alpha = T::from_f64(LEAKY_ALPHA);
        let batch = shape[0];
        // Invert intensities: renders are dark objects on a white
        // background, and max-pooling keeps the largest responses, so the
        // object has to be the bright part or pooling erases it.
        let mut x = tape.affine(image01, -T::one(), T::one());
        for block in &enc.blocks {
            let c = tape.conv2d(x, bind.var(block.w), Some(bind.var(block.b)), 1, 1)?;
            let a = tape.leaky_relu(c, alpha);
            x = tape.maxpool2d(a, 2, 2)?;
        }
        let flat_len = tape.value(x).numel() / batch;
        let flat = tape.reshape(x, vec![batch, flat_len])?;
        let y = tape.matmul(flat, bind.var(enc.fc_w))?;
        let y = tape.add_row(y, bind.var(enc.fc_b))?;
        debug_assert_eq!(tape.shape(y)[1], enc.out_len);
        Ok(y)
    }

    /// Fold a sequence of view vectors into the grid; returns the final
    /// hidden state `[B, N_h, 4, 4, 4]`.
    pub fn fuse_views<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        inputs: &[Var],
    ) -> Result<LstmState> {
        if inputs.is_empty() {
            return Err(Error::config("fuse_views", "need at least one view"));
        }
        let batch = tape.shape(inputs[0])[0];
        let mut state = self.grid.zero_state(tape, batch);
        for &x in inputs {
            state = self.grid.step(tape, bind, x, &state)?;
        }
        Ok(state)
    }

    /// Decode the hidden grid to per-voxel occupancy probabilities
    /// `[B, D^3]`, strictly inside (0,1).
    pub fn decode_occupancy<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        hidden: Var,
    ) -> Result<Var> {
        let shape = tape.shape(hidden).to_vec();
        let want = vec![shape[0], self.cfg.n_hidden, GRID_SIDE, GRID_SIDE, GRID_SIDE];
        if shape != want {
            return Err(Error::ShapeMismatch { op: "decode_occupancy", lhs: shape, rhs: want });
        }
        self.decode_calls.fetch_add(1, Ordering::Relaxed);
        let alpha = T::from_f64(LEAKY_ALPHA);
        let batch = shape[0];
        let mut x = hidden;
        for stage in &self.stages {
            let up = tape.upsample3d(x, 2)?;
            let c = tape.conv3d(up, bind.var(stage.w), Some(bind.var(stage.b)), 1, 1)?;
            x = tape.leaky_relu(c, alpha);
        }
        let logits = tape.conv3d(x, bind.var(self.out_w), Some(bind.var(self.out_b)), 1, 1)?;
        let soft = tape.softmax_channels(logits)?;
        let p = tape.select_channel(soft, 1)?;
        tape.reshape(p, vec![batch, self.cfg.voxels()])
    }
}

/// Voxel-wise binary cross-entropy between predicted probabilities
/// `[B, D^3]` and binary targets, mean over voxels, probabilities clamped
/// by `BCE_EPS`.
pub fn recon_loss<T: Scalar>(tape: &mut Tape<T>, p: Var, target: &Tensor<T>) -> Result<Var> {
    tape.bce_mean(p, target, T::from_f64(BCE_EPS))
}
