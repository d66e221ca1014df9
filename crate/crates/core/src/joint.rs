//! The three unified compression + reconstruction architectures.
//!
//! - *sequential*: each view is compressed and decompressed, the decoded
//!   image feeds the view encoder, embeddings feed the grid.
//! - *direct*: the binary codes themselves feed the grid (the view encoder
//!   does not exist in this model); decoded images are still produced by
//!   the iterative loop and carry the compression loss during training.
//! - *implicit*: the view encoder's output passes through tanh and the
//!   binarizer straight into the grid; no image codec exists and only the
//!   reconstruction loss is minimized. One model per rate, controlled by K.
//!
//! All per-view submodules reference the same parameter leaves on the tape,
//! so weight sharing across viewpoints is structural.

use crate::codec::{compression_loss, Bitstream, CodeMode, CodecConfig, CodecNet, Ratio};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamSet};
use crate::recon3d::{recon_loss, Recon3DConfig, ReconNet};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Sequential,
    Direct,
    Implicit,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Sequential => "sequential",
            ModelKind::Direct => "direct",
            ModelKind::Implicit => "implicit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(ModelKind::Sequential),
            "direct" => Ok(ModelKind::Direct),
            "implicit" => Ok(ModelKind::Implicit),
            _ => Err(Error::config("model", format!("unknown kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub kind: ModelKind,
    /// Present for sequential/direct, absent for implicit.
    pub codec: Option<CodecConfig>,
    pub recon: Recon3DConfig,
    /// Bits per view for the implicit model (its rate control).
    pub k_implicit: Option<usize>,
    pub v_max: usize,
    /// Disable the binarizer and use the float vector as the code
    /// (low-rate path); rate accounting counts 32 bits per element.
    pub float_code: bool,
}

impl JointConfig {
    pub fn desk_sequential(height: usize, width: usize) -> Self {
        JointConfig {
            kind: ModelKind::Sequential,
            codec: Some(CodecConfig::small(height, width)),
            recon: Recon3DConfig::desk(height, width),
            k_implicit: None,
            v_max: 5,
            float_code: false,
        }
    }

    pub fn desk_direct(height: usize, width: usize) -> Self {
        JointConfig { kind: ModelKind::Direct, ..Self::desk_sequential(height, width) }
    }

    pub fn desk_implicit(height: usize, width: usize, k: usize) -> Self {
        let mut recon = Recon3DConfig::desk(height, width);
        recon.k_embed = k;
        JointConfig {
            kind: ModelKind::Implicit,
            codec: None,
            recon,
            k_implicit: Some(k),
            v_max: 5,
            float_code: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.recon.validate()?;
        match self.kind {
            ModelKind::Implicit => {
                if self.codec.is_some() {
                    return Err(Error::config("joint", "implicit model must not carry a codec"));
                }
                let k = self
                    .k_implicit
                    .ok_or_else(|| Error::config("joint", "implicit model needs k_implicit"))?;
                if k == 0 {
                    return Err(Error::config("joint", "k_implicit must be >= 1"));
                }
            }
            ModelKind::Sequential | ModelKind::Direct => {
                let codec = self
                    .codec
                    .as_ref()
                    .ok_or_else(|| Error::config("joint", "sequential/direct models need a codec"))?;
                codec.validate()?;
                if self.k_implicit.is_some() {
                    return Err(Error::config("joint", "k_implicit only applies to the implicit model"));
                }
                if codec.height != self.recon.height || codec.width != self.recon.width {
                    return Err(Error::config(
                        "joint",
                        format!(
                            "codec extents {}x{} differ from reconstruction extents {}x{}",
                            codec.height, codec.width, self.recon.height, self.recon.width
                        ),
                    ));
                }
            }
        }
        if self.v_max == 0 {
            return Err(Error::config("joint", "v_max must be >= 1"));
        }
        Ok(())
    }

    /// Compression rate of this configuration at the given iteration count
    /// (ignored by the implicit model).
    pub fn rate(&self, n: usize) -> Ratio {
        let raw = (self.recon.height * self.recon.width * 24) as u64;
        match self.kind {
            ModelKind::Implicit => {
                let k = self.k_implicit.unwrap_or(1) as u64;
                let bits = if self.float_code { k * 32 } else { k };
                Ratio::new(raw, bits)
            }
            _ => {
                let cfg = self.codec.as_ref().expect("validated");
                let m = cfg.code_len() as u64;
                let bits = if self.float_code { n as u64 * m * 32 } else { n as u64 * m };
                Ratio::new(raw, bits)
            }
        }
    }
}

/// Operation counts observed during one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardStats {
    pub encode_view_calls: usize,
    pub encode_step_calls: usize,
    pub decode_step_calls: usize,
}

pub struct JointForward {
    /// Occupancy probabilities `[B, D^3]` after the final view.
    pub p_v: Var,
    /// Per view: residual trace r_1..r_N (empty for implicit).
    pub view_residuals: Vec<Vec<Var>>,
    /// Per view: the vector(s) that fed the grid or decoder.
    pub view_codes: Vec<Vec<Var>>,
    /// Per view: decoded image [0,1] after the last iteration
    /// (sequential/direct only).
    pub decoded_views: Vec<Var>,
    /// Per view, per batch element (sequential/direct, binarized modes).
    pub bitstreams: Vec<Vec<Bitstream>>,
    pub stats: ForwardStats,
}

pub struct JointModel<T: Scalar> {
    pub cfg: JointConfig,
    pub params: ParamSet<T>,
    pub codec: Option<CodecNet>,
    pub recon: ReconNet,
}

impl<T: Scalar> JointModel<T> {
    pub fn new(cfg: JointConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (codec, recon) = match cfg.kind {
            ModelKind::Sequential => {
                let codec = CodecNet::init(*cfg.codec.as_ref().unwrap(), &mut params, &mut rng)?;
                let recon = ReconNet::init(
                    cfg.recon.clone(),
                    Some(cfg.recon.k_embed),
                    cfg.recon.k_embed,
                    &mut params,
                    &mut rng,
                )?;
                (Some(codec), recon)
            }
            ModelKind::Direct => {
                let ccfg = *cfg.codec.as_ref().unwrap();
                let codec = CodecNet::init(ccfg, &mut params, &mut rng)?;
                // codes from all iterations concatenate to N_max * m inputs;
                // shorter runs are zero-padded on the right
                let grid_in = ccfg.n_max * ccfg.code_len();
                let recon = ReconNet::init(cfg.recon.clone(), None, grid_in, &mut params, &mut rng)?;
                (Some(codec), recon)
            }
            ModelKind::Implicit => {
                let k = cfg.k_implicit.unwrap();
                let recon =
                    ReconNet::init(cfg.recon.clone(), Some(k), k, &mut params, &mut rng)?;
                (None, recon)
            }
        };
        Ok(JointModel { cfg, params, codec, recon })
    }

    fn code_mode(&self, train: bool) -> CodeMode {
        if self.cfg.float_code {
            CodeMode::Float
        } else if train {
            CodeMode::Train
        } else {
            CodeMode::Infer
        }
    }

    /// Run the model over `views` (each `[B, 3, H, W]`, values in [0,1]).
    /// `n_iters` is the codec iteration count (ignored by implicit).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        views: &[Tensor<T>],
        n_iters: usize,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<JointForward> {
        if views.is_empty() {
            return Err(Error::config("forward", "need at least one view"));
        }
        let mode = self.code_mode(train);
        let stats0 = self.snapshot_stats();
        let mut view_residuals = Vec::with_capacity(views.len());
        let mut view_codes = Vec::with_capacity(views.len());
        let mut decoded_views = Vec::new();
        let mut bitstreams = Vec::new();
        let mut grid_inputs = Vec::with_capacity(views.len());

        match self.cfg.kind {
            ModelKind::Sequential => {
                let codec = self.codec.as_ref().unwrap();
                for img in views {
                    let x = tape.constant(img.clone());
                    let trace = codec.compress(tape, bind, x, n_iters, mode, rng)?;
                    let xhat01 = crate::codec::to_image01(tape, *trace.xhat.last().unwrap());
                    let e = self.recon.encode_view(tape, bind, xhat01)?;
                    grid_inputs.push(e);
                    decoded_views.push(xhat01);
                    view_residuals.push(trace.residuals);
                    view_codes.push(trace.codes);
                    if let Some(bs) = trace.bitstreams {
                        bitstreams.push(bs);
                    }
                }
            }
            ModelKind::Direct => {
                let codec = self.codec.as_ref().unwrap();
                let m = codec.cfg.code_len();
                let full = codec.cfg.n_max * m;
                for img in views {
                    let x = tape.constant(img.clone());
                    let trace = codec.compress(tape, bind, x, n_iters, mode, rng)?;
                    let batch = tape.shape(trace.codes[0])[0];
                    let mut parts = trace.codes.clone();
                    let got = n_iters * m;
                    if got < full {
                        parts.push(tape.zeros(vec![batch, full - got]));
                    }
                    let code_vec = tape.concat_cols(&parts)?;
                    grid_inputs.push(code_vec);
                    decoded_views.push(crate::codec::to_image01(tape, *trace.xhat.last().unwrap()));
                    view_residuals.push(trace.residuals);
                    view_codes.push(trace.codes);
                    if let Some(bs) = trace.bitstreams {
                        bitstreams.push(bs);
                    }
                }
            }
            ModelKind::Implicit => {
                for img in views {
                    let x = tape.constant(img.clone());
                    let e = self.recon.encode_view(tape, bind, x)?;
                    let t = tape.tanh(e);
                    let code = match mode {
                        CodeMode::Train => tape.binarize_train(t, rng)?,
                        CodeMode::Infer => tape.binarize_infer(t)?,
                        CodeMode::Float => t,
                    };
                    grid_inputs.push(code);
                    view_codes.push(vec![code]);
                    view_residuals.push(Vec::new());
                }
            }
        }

        let hidden = self.recon.fuse_views(tape, bind, &grid_inputs)?;
        let p_v = self.recon.decode_occupancy(tape, bind, hidden.h)?;
        let stats1 = self.snapshot_stats();
        Ok(JointForward {
            p_v,
            view_residuals,
            view_codes,
            decoded_views,
            bitstreams,
            stats: ForwardStats {
                encode_view_calls: stats1.encode_view_calls - stats0.encode_view_calls,
                encode_step_calls: stats1.encode_step_calls - stats0.encode_step_calls,
                decode_step_calls: stats1.decode_step_calls - stats0.decode_step_calls,
            },
        })
    }

    fn snapshot_stats(&self) -> ForwardStats {
        ForwardStats {
            encode_view_calls: self.recon.encode_view_calls(),
            encode_step_calls: self.codec.as_ref().map(|c| c.encode_step_calls()).unwrap_or(0),
            decode_step_calls: self.codec.as_ref().map(|c| c.decode_step_calls()).unwrap_or(0),
        }
    }

    /// The total training objective for one forward pass: the per-view
    /// losses of `total_loss` summed over views.
    pub fn training_loss(
        &self,
        tape: &mut Tape<T>,
        fwd: &JointForward,
        targets: &Tensor<T>,
    ) -> Result<LossParts> {
        let v = fwd.view_residuals.len();
        let l_3d = recon_loss(tape, fwd.p_v, targets)?;
        let mut total: Option<Var> = None;
        let mut comp_sum: Option<Var> = None;
        for i in 1..=v {
            let l_comp = match self.cfg.kind {
                ModelKind::Implicit => None,
                _ => Some(compression_loss(tape, &fwd.view_residuals[i - 1])?),
            };
            if let Some(lc) = l_comp {
                comp_sum = Some(match comp_sum {
                    Some(s) => tape.add(s, lc)?,
                    None => lc,
                });
            }
            let li = total_loss(tape, self.cfg.kind, i, v, l_comp, Some(l_3d))?;
            total = Some(match total {
                Some(t) => tape.add(t, li)?,
                None => li,
            });
        }
        Ok(LossParts {
            total: total.expect("at least one view"),
            l_comp_sum: comp_sum,
            l_3d,
        })
    }
}

pub struct LossParts {
    pub total: Var,
    /// Sum of per-view compression losses (None for implicit).
    pub l_comp_sum: Option<Var>,
    pub l_3d: Var,
}

/// Viewpoint-dependent loss: for sequential/direct, L_comp for i < V and
/// L_comp + L_3D at i = V; for implicit, L_3D at i = V only.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    kind: ModelKind,
    view_idx: usize,
    v_total: usize,
    l_comp: Option<Var>,
    l_3d: Option<Var>,
) -> Result<Var> {
    if view_idx == 0 || view_idx > v_total {
        return Err(Error::config(
            "total_loss",
            format!("view index {view_idx} outside 1..={v_total}"),
        ));
    }
    let last = view_idx == v_total;
    match kind {
        ModelKind::Implicit => {
            if last {
                l_3d.ok_or_else(|| Error::config("total_loss", "missing L_3D at the final view"))
            } else {
                Ok(tape.constant(Tensor::scalar(T::zero())))
            }
        }
        ModelKind::Sequential | ModelKind::Direct => {
            let lc =
                l_comp.ok_or_else(|| Error::config("total_loss", "missing L_comp"))?;
            if last {
                let l3 = l_3d
                    .ok_or_else(|| Error::config("total_loss", "missing L_3D at the final view"))?;
                tape.add(lc, l3)
            } else {
                Ok(lc)
            }
        }
    }
}
