//! Training loop, checkpointing, evaluation, and timing benchmarks.
//!
//! Training runs at 32-bit precision. Each minibatch draws the viewpoint
//! count V uniformly from 1..=v_max and, for models with a codec, the
//! iteration count N uniformly from 1..=n_max. Checkpoints capture
//! parameters, optimizer moments, the training RNG position, and the
//! config, so an interrupted run resumed from disk retraces the
//! uninterrupted one bit for bit.

use crate::codec::{CodecConfig, CodecNet, CodeMode, CodecVariant, Ratio};
use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::io::{
    read_f32, read_magic, read_u128, read_u16, read_u32, read_u64, read_u8, write_f32,
    write_u128, write_u16, write_u32, write_u64, write_u8,
};
use crate::joint::{JointConfig, JointModel, ModelKind};
use crate::metrics::{self, IOU_TAU};
use crate::params::ParamSet;
use crate::recon3d::{Recon3DConfig, ReconNet};
use crate::tape::Tape;
use crate::tensor::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VXCK";
pub const CHECKPOINT_VERSION: u8 = 1;
pub const LATEST_CHECKPOINT: &str = "latest.vxck";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub joint: JointConfig,
}

impl TrainConfig {
    pub fn new(joint: JointConfig) -> Self {
        TrainConfig {
            batch: 6,
            epochs: 20,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
            seed: 0,
            joint,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.epochs == 0 {
            return Err(Error::config("train", "batch and epochs must be >= 1"));
        }
        self.joint.validate()
    }
}

// ---------------------------------------------------------------------------
// config text form (the `key = value` format shared with the CLI)
// ---------------------------------------------------------------------------

fn join_usizes(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn config_to_text(cfg: &TrainConfig) -> String {
    let j = &cfg.joint;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
    kv("model", j.kind.name().to_string());
    kv("height", j.recon.height.to_string());
    kv("width", j.recon.width.to_string());
    match j.kind {
        ModelKind::Implicit => kv("k", j.k_implicit.unwrap_or(0).to_string()),
        _ => kv("k", j.recon.k_embed.to_string()),
    }
    if let Some(c) = &j.codec {
        kv(
            "variant",
            match c.variant {
                CodecVariant::Original => "original".into(),
                CodecVariant::Small => "small".into(),
            },
        );
        kv("gamma", (c.gamma as u8).to_string());
        kv("n_max", c.n_max.to_string());
    }
    kv("n_hidden", j.recon.n_hidden.to_string());
    kv("d_out", j.recon.d_out.to_string());
    kv("pools", j.recon.pools.to_string());
    kv("enc_widths", join_usizes(&j.recon.enc_widths));
    kv("dec_widths", join_usizes(&j.recon.dec_widths));
    kv("v_max", j.v_max.to_string());
    kv("float_code", (j.float_code as u8).to_string());
    kv("batch", cfg.batch.to_string());
    kv("epochs", cfg.epochs.to_string());
    kv("lr", format!("{}", cfg.lr));
    kv("beta1", format!("{}", cfg.beta1));
    kv("beta2", format!("{}", cfg.beta2));
    kv("eps", format!("{}", cfg.eps));
    kv("clip_norm", format!("{}", cfg.clip_norm));
    kv("seed", cfg.seed.to_string());
    s
}

/// Parse the `key = value` config format. Unknown keys are rejected.
pub fn config_from_text(text: &str) -> Result<TrainConfig> {
    let mut map = std::collections::BTreeMap::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::config("config", format!("line {}: expected `key = value`", ln + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    config_from_map(map)
}

pub fn config_from_map(mut map: std::collections::BTreeMap<String, String>) -> Result<TrainConfig> {
    fn take<T: std::str::FromStr>(
        map: &mut std::collections::BTreeMap<String, String>,
        key: &str,
        default: T,
    ) -> Result<T> {
        match map.remove(key) {
            Some(v) => v
                .parse()
                .map_err(|_| Error::config("config", format!("bad value for `{key}`: {v}"))),
            None => Ok(default),
        }
    }
    fn take_list(
        map: &mut std::collections::BTreeMap<String, String>,
        key: &str,
        default: Vec<usize>,
    ) -> Result<Vec<usize>> {
        match map.remove(key) {
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::config("config", format!("bad value for `{key}`: {v}")))
                })
                .collect(),
            None => Ok(default),
        }
    }

    let model = map.remove("model").unwrap_or_else(|| "implicit".into());
    let kind = ModelKind::parse(&model)?;
    let height = take(&mut map, "height", 32usize)?;
    let width = take(&mut map, "width", 32usize)?;
    let k = take(&mut map, "k", 64usize)?;

    let mut recon = Recon3DConfig::desk(height, width);
    recon.k_embed = k;
    recon.n_hidden = take(&mut map, "n_hidden", recon.n_hidden)?;
    recon.d_out = take(&mut map, "d_out", recon.d_out)?;
    recon.pools = take(&mut map, "pools", recon.pools)?;
    recon.enc_widths = take_list(&mut map, "enc_widths", recon.enc_widths.clone())?;
    let dec = take_list(&mut map, "dec_widths", recon.dec_widths.to_vec())?;
    if dec.len() != 3 {
        return Err(Error::config("config", "dec_widths needs exactly 3 entries"));
    }
    recon.dec_widths = [dec[0], dec[1], dec[2]];

    let codec = match kind {
        ModelKind::Implicit => {
            for key in ["variant", "gamma", "n_max"] {
                if map.contains_key(key) {
                    return Err(Error::config(
                        "config",
                        format!("`{key}` does not apply to the implicit model"),
                    ));
                }
            }
            None
        }
        _ => {
            let variant = match map.remove("variant").as_deref() {
                None | Some("small") => CodecVariant::Small,
                Some("original") => CodecVariant::Original,
                Some(v) => return Err(Error::config("config", format!("unknown variant `{v}`"))),
            };
            let gamma = take(&mut map, "gamma", 0u8)? != 0;
            let n_max = take(&mut map, "n_max", 8usize)?;
            Some(CodecConfig { variant, gamma, n_max, height, width })
        }
    };

    let joint = JointConfig {
        kind,
        codec,
        recon,
        k_implicit: matches!(kind, ModelKind::Implicit).then_some(k),
        v_max: take(&mut map, "v_max", 5usize)?,
        float_code: take(&mut map, "float_code", 0u8)? != 0,
    };
    let cfg = TrainConfig {
        batch: take(&mut map, "batch", 6usize)?,
        epochs: take(&mut map, "epochs", 20usize)?,
        lr: take(&mut map, "lr", 1e-3)?,
        beta1: take(&mut map, "beta1", 0.9)?,
        beta2: take(&mut map, "beta2", 0.999)?,
        eps: take(&mut map, "eps", 1e-8)?,
        clip_norm: take(&mut map, "clip_norm", 5.0)?,
        seed: take(&mut map, "seed", 0u64)?,
        joint,
    };
    if let Some(key) = map.keys().next() {
        return Err(Error::config("config", format!("unknown key `{key}`")));
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// optimizer
// ---------------------------------------------------------------------------

/// Adam moment estimates, one pair of buffers per parameter.
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let m = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape().to_vec())).collect();
        let v = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape().to_vec())).collect();
        AdamState { m, v, step: 0 }
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.iter() {
        for v in g.data() {
            let f = v.as_f64();
            sq += f * f;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = T::from_f64(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}

/// One Adam update with bias correction. Moment math runs in f64 and is
/// stored back at parameter precision, so state round-trips exactly
/// through 32-bit checkpoints.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::config(
            "adam_step",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for (id, grad) in params.ids().collect::<Vec<_>>().into_iter().zip(grads) {
        if params.value(id).shape() != grad.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: params.value(id).shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        let p = params.value_mut(id);
        for i in 0..grad.numel() {
            let g = grad.data()[i].as_f64();
            let mi = beta1 * m.data()[i].as_f64() + (1.0 - beta1) * g;
            let vi = beta2 * v.data()[i].as_f64() + (1.0 - beta2) * g * g;
            m.data_mut()[i] = T::from_f64(mi);
            v.data_mut()[i] = T::from_f64(vi);
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            let upd = lr * m_hat / (v_hat.sqrt() + eps);
            p.data_mut()[i] = T::from_f64(p.data()[i].as_f64() - upd);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

/// On-disk training snapshot. Parameter and moment values are 32-bit
/// little-endian; reload reproduces forward outputs bit-exactly at that
/// precision.
pub struct Checkpoint {
    pub config_text: String,
    pub epoch: u32,
    pub adam_step: u64,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub adam_m: Vec<Vec<f32>>,
    pub adam_v: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u8(w, CHECKPOINT_VERSION)?;
        write_u32(w, self.config_text.len() as u32)?;
        w.write_all(self.config_text.as_bytes())?;
        write_u32(w, self.epoch)?;
        write_u64(w, self.adam_step)?;
        write_u64(w, self.rng_seed)?;
        write_u128(w, self.rng_word_pos)?;
        write_u32(w, self.params.len() as u32)?;
        for (name, shape, data) in &self.params {
            write_u16(w, name.len() as u16)?;
            w.write_all(name.as_bytes())?;
            write_u8(w, shape.len() as u8)?;
            for &d in shape {
                write_u32(w, d as u32)?;
            }
            for &v in data {
                write_f32(w, v)?;
            }
        }
        for block in self.adam_m.iter().chain(self.adam_v.iter()) {
            for &v in block {
                write_f32(w, v)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, CHECKPOINT_MAGIC, "checkpoint")?;
        let version = read_u8(r, "checkpoint")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let clen = read_u32(r, "checkpoint")? as usize;
        let mut cbuf = vec![0u8; clen];
        r.read_exact(&mut cbuf).map_err(|_| Error::format("checkpoint", "truncated config"))?;
        let config_text = String::from_utf8(cbuf)
            .map_err(|_| Error::format("checkpoint", "config is not UTF-8"))?;
        let epoch = read_u32(r, "checkpoint")?;
        let adam_step = read_u64(r, "checkpoint")?;
        let rng_seed = read_u64(r, "checkpoint")?;
        let rng_word_pos = read_u128(r, "checkpoint")?;
        let n_params = read_u32(r, "checkpoint")? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let nlen = read_u16(r, "checkpoint")? as usize;
            let mut nbuf = vec![0u8; nlen];
            r.read_exact(&mut nbuf).map_err(|_| Error::format("checkpoint", "truncated name"))?;
            let name = String::from_utf8(nbuf)
                .map_err(|_| Error::format("checkpoint", "name is not UTF-8"))?;
            let ndim = read_u8(r, "checkpoint")? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(r, "checkpoint")? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(read_f32(r, "checkpoint")?);
            }
            params.push((name, shape, data));
        }
        let mut read_blocks = |params: &[(String, Vec<usize>, Vec<f32>)]| -> Result<Vec<Vec<f32>>> {
            params
                .iter()
                .map(|(_, _, d)| (0..d.len()).map(|_| read_f32(r, "checkpoint")).collect())
                .collect()
        };
        let adam_m = read_blocks(&params)?;
        let adam_v = read_blocks(&params)?;
        Ok(Checkpoint {
            config_text,
            epoch,
            adam_step,
            rng_seed,
            rng_word_pos,
            params,
            adam_m,
            adam_v,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| Error::Path(path.display().to_string(), e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| Error::Path(path.display().to_string(), e))?;
        Self::read_from(&mut std::io::BufReader::new(f))
    }

    pub fn config(&self) -> Result<TrainConfig> {
        config_from_text(&self.config_text)
    }

    /// Rebuild the model this checkpoint was saved from.
    pub fn restore_model(&self) -> Result<(TrainConfig, JointModel<f32>)> {
        let cfg = self.config()?;
        let mut model = JointModel::<f32>::new(cfg.joint.clone(), cfg.seed)?;
        if self.params.len() != model.params.len() {
            return Err(Error::format(
                "checkpoint",
                format!("{} stored params vs {} in model", self.params.len(), model.params.len()),
            ));
        }
        for (id, (name, shape, data)) in model.params.ids().collect::<Vec<_>>().into_iter().zip(&self.params) {
            if model.params.name(id) != name || model.params.value(id).shape() != &shape[..] {
                return Err(Error::format(
                    "checkpoint",
                    format!("parameter layout mismatch at `{name}`"),
                ));
            }
            for (dst, src) in model.params.value_mut(id).data_mut().iter_mut().zip(data) {
                *dst = *src;
            }
        }
        Ok((cfg, model))
    }
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_comp: f64,
    pub l_3d: f64,
    pub l_total: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub checkpoints: Vec<PathBuf>,
}

pub struct CachedExample {
    pub views: Vec<Tensor<f32>>,
    pub target: Vec<f32>,
}

pub fn load_split_cache(manifest: &DatasetManifest, split: Split) -> Result<Vec<CachedExample>> {
    manifest
        .split(split)
        .map(|e| {
            let views = manifest.load_views::<f32>(e)?;
            let grid = manifest.load_grid(e)?;
            let target = grid.occ.iter().map(|&b| if b { 1.0f32 } else { 0.0 }).collect();
            Ok(CachedExample { views, target })
        })
        .collect()
}

fn stack_views(
    cache: &[CachedExample],
    idxs: &[usize],
    v: usize,
    h: usize,
    w: usize,
) -> Result<(Vec<Tensor<f32>>, Tensor<f32>)> {
    let b = idxs.len();
    let plane = 3 * h * w;
    let mut views = Vec::with_capacity(v);
    for vi in 0..v {
        let mut data = Vec::with_capacity(b * plane);
        for &i in idxs {
            data.extend_from_slice(cache[i].views[vi].data());
        }
        views.push(Tensor::from_vec(vec![b, 3, h, w], data)?);
    }
    let dvox = cache[idxs[0]].target.len();
    let mut t = Vec::with_capacity(b * dvox);
    for &i in idxs {
        t.extend_from_slice(&cache[i].target);
    }
    Ok((views, Tensor::from_vec(vec![b, dvox], t)?))
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: JointModel<f32>,
    pub adam: AdamState<f32>,
    pub rng: ChaCha8Rng,
    rng_seed: u64,
    pub epoch: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let model = JointModel::<f32>::new(cfg.joint.clone(), cfg.seed)?;
        let adam = AdamState::new(&model.params);
        // training stream is separate from the init stream
        let rng_seed = cfg.seed.wrapping_add(1);
        Ok(Trainer {
            cfg,
            adam,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            rng_seed,
            model,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let (cfg, model) = ckpt.restore_model()?;
        let mut adam = AdamState::new(&model.params);
        for ((m, v), (cm, cv)) in adam
            .m
            .iter_mut()
            .zip(adam.v.iter_mut())
            .zip(ckpt.adam_m.iter().zip(&ckpt.adam_v))
        {
            m.data_mut().copy_from_slice(cm);
            v.data_mut().copy_from_slice(cv);
        }
        adam.step = ckpt.adam_step;
        let mut rng = ChaCha8Rng::seed_from_u64(ckpt.rng_seed);
        rng.set_word_pos(ckpt.rng_word_pos);
        Ok(Trainer {
            cfg,
            model,
            adam,
            rng,
            rng_seed: ckpt.rng_seed,
            epoch: ckpt.epoch as usize,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config_text: config_to_text(&self.cfg),
            epoch: self.epoch as u32,
            adam_step: self.adam.step,
            rng_seed: self.rng_seed,
            rng_word_pos: self.rng.get_word_pos(),
            params: self
                .model
                .params
                .iter()
                .map(|(_, name, t)| {
                    (name.to_string(), t.shape().to_vec(), t.data().to_vec())
                })
                .collect(),
            adam_m: self.adam.m.iter().map(|t| t.data().to_vec()).collect(),
            adam_v: self.adam.v.iter().map(|t| t.data().to_vec()).collect(),
        }
    }

    /// One pass over the training split. Returns epoch-mean losses.
    pub fn run_epoch(&mut self, cache: &[CachedExample]) -> Result<EpochMetrics> {
        let started = Instant::now();
        let n = cache.len();
        if n == 0 {
            return Err(Error::Train("empty training split".into()));
        }
        let (h, w) = (self.cfg.joint.recon.height, self.cfg.joint.recon.width);
        let views_avail = cache[0].views.len();
        if self.cfg.joint.v_max > views_avail {
            return Err(Error::Train(format!(
                "v_max {} exceeds the {} views per example in the dataset",
                self.cfg.joint.v_max, views_avail
            )));
        }

        // deterministic shuffle
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        let mut batches = 0usize;
        for chunk in order.chunks(self.cfg.batch) {
            let v = self.rng.gen_range(1..=self.cfg.joint.v_max);
            let n_iters = match &self.cfg.joint.codec {
                Some(c) => self.rng.gen_range(1..=c.n_max),
                None => 1,
            };
            let (views, targets) = stack_views(cache, chunk, v, h, w)?;
            let mut tape = Tape::new();
            let bind = tape.bind(&self.model.params);
            let fwd = self.model.forward(&mut tape, &bind, &views, n_iters, true, &mut self.rng)?;
            let parts = self.model.training_loss(&mut tape, &fwd, &targets)?;

            let l_total = tape.value(parts.total).item() as f64;
            let l_3d = tape.value(parts.l_3d).item() as f64;
            let l_comp = parts.l_comp_sum.map(|v| tape.value(v).item() as f64).unwrap_or(0.0);
            if !l_total.is_finite() {
                return Err(Error::Train(format!(
                    "non-finite loss at epoch {} batch {batches}: l_comp={l_comp} l_3d={l_3d}",
                    self.epoch + 1
                )));
            }

            tape.backward(parts.total)?;
            let mut grads: Vec<Tensor<f32>> = self
                .model
                .params
                .ids()
                .collect::<Vec<_>>()
                .into_iter()
                .map(|id| tape.param_grad(&bind, id, self.model.params.value(id).shape()))
                .collect();
            let gnorm = clip_global_norm(&mut grads, self.cfg.clip_norm);
            if std::env::var("VXC_TRACE_GRAD").is_ok() {
                eprintln!("grad norm {gnorm:.3}");
            }
            adam_step(
                &mut self.model.params,
                &grads,
                &mut self.adam,
                self.cfg.lr,
                self.cfg.beta1,
                self.cfg.beta2,
                self.cfg.eps,
            )?;

            sums.0 += l_comp;
            sums.1 += l_3d;
            sums.2 += l_total;
            batches += 1;
        }
        self.epoch += 1;
        let b = batches as f64;
        Ok(EpochMetrics {
            epoch: self.epoch,
            l_comp: sums.0 / b,
            l_3d: sums.1 / b,
            l_total: sums.2 / b,
            wall_s: started.elapsed().as_secs_f64(),
        })
    }
}

/// Full training run with per-epoch checkpoints and a metrics CSV under
/// `out_dir`. With `resume`, picks up from `latest.vxck` if present.
pub fn train_loop(
    cfg: &TrainConfig,
    manifest: &DatasetManifest,
    out_dir: &Path,
    resume: bool,
) -> Result<TrainReport> {
    fs::create_dir_all(out_dir).map_err(|e| Error::Path(out_dir.display().to_string(), e))?;
    let latest = out_dir.join(LATEST_CHECKPOINT);
    let mut trainer = if resume && latest.is_file() {
        Trainer::from_checkpoint(&Checkpoint::load(&latest)?)?
    } else {
        Trainer::new(cfg.clone())?
    };
    if trainer.cfg.joint.recon.d_out != manifest.d {
        return Err(Error::Train(format!(
            "model outputs {}^3 grids but the dataset stores {}^3",
            trainer.cfg.joint.recon.d_out, manifest.d
        )));
    }
    let cache = load_split_cache(manifest, Split::Train)?;

    let metrics_path = out_dir.join(METRICS_FILE);
    if trainer.epoch == 0 || !metrics_path.is_file() {
        fs::write(&metrics_path, "epoch,l_comp,l_3d,l_total,wall_s\n")
            .map_err(|e| Error::Path(metrics_path.display().to_string(), e))?;
    }

    let mut report = TrainReport { metrics: Vec::new(), checkpoints: Vec::new() };
    while trainer.epoch < trainer.cfg.epochs {
        let em = match trainer.run_epoch(&cache) {
            Ok(em) => em,
            Err(e) => {
                // diagnostic dump for non-finite aborts
                let dump = out_dir.join("diagnostic.txt");
                let _ = fs::write(&dump, format!("{e}\n"));
                return Err(e);
            }
        };
        let line = format!(
            "{},{:.6},{:.6},{:.6},{:.3}\n",
            em.epoch, em.l_comp, em.l_3d, em.l_total, em.wall_s
        );
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&metrics_path)
            .map_err(|e| Error::Path(metrics_path.display().to_string(), e))?;
        f.write_all(line.as_bytes())?;

        let ck = trainer.checkpoint();
        let path = out_dir.join(format!("ckpt_ep{:03}.vxck", em.epoch));
        ck.save(&path)?;
        ck.save(&latest)?;
        report.checkpoints.push(path);
        report.metrics.push(em);
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct RateRow {
    /// "N=4" or "K=64".
    pub param: String,
    pub rate: Ratio,
    pub miou: f64,
    pub std: f64,
    pub per_example: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub v_used: usize,
    pub rows: Vec<RateRow>,
}

impl EvalReport {
    /// Summary CSV: one row per rate.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("param,rate,miou,std_iou,n_examples\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{}\n",
                r.param,
                r.rate,
                r.miou,
                r.std,
                r.per_example.len()
            ));
        }
        s
    }

    /// Per-example CSV for one rate row, with a trailing summary row.
    pub fn per_example_csv(&self, row: usize) -> String {
        let r = &self.rows[row];
        let mut s = String::from("example_id,iou\n");
        for (id, iou) in &r.per_example {
            s.push_str(&format!("{id},{iou:.6}\n"));
        }
        s.push_str(&format!("summary,{:.6},{:.6}\n", r.miou, r.std));
        s
    }

    /// Minimal SVG line chart of mIoU against the rate axis.
    pub fn to_svg(&self) -> String {
        let (w, h, ml, mb) = (480.0, 320.0, 50.0, 40.0);
        let pts: Vec<(f64, f64)> = self
            .rows
            .iter()
            .map(|r| (r.rate.as_f64(), r.miou))
            .collect();
        let xmax = pts.iter().map(|p| p.0).fold(1.0, f64::max) * 1.05;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
             <line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
             <line x1=\"{ml}\" y1=\"10\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
            h - mb,
            w - 10.0,
            h - mb,
            h - mb,
        );
        let map = |p: &(f64, f64)| {
            let x = ml + (p.0 / xmax) * (w - ml - 20.0);
            let y = (h - mb) - p.1.clamp(0.0, 1.0) * (h - mb - 20.0);
            (x, y)
        };
        let path: Vec<String> = pts.iter().map(|p| {
            let (x, y) = map(p);
            format!("{x:.1},{y:.1}")
        }).collect();
        if path.len() > 1 {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\"/>\n",
                path.join(" ")
            ));
        }
        for (p, r) in pts.iter().zip(&self.rows) {
            let (x, y) = map(p);
            svg.push_str(&format!(
                "<circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"#1f6fb2\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\">{}</text>\n",
                x + 4.0,
                y - 4.0,
                r.param
            ));
        }
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\">compression rate (c:1)</text>\n\
             <text x=\"12\" y=\"16\" font-size=\"12\">mIoU</text>\n</svg>\n",
            w / 2.0 - 60.0,
            h - 12.0
        ));
        svg
    }
}

/// Mean and std of IoU over a dataset split at V viewpoints, for each
/// requested rate (N values for codec models; the implicit model has a
/// single rate fixed by K). Per-example work runs in parallel with a
/// deterministic reduction order.
pub fn evaluate(
    model: &JointModel<f32>,
    manifest: &DatasetManifest,
    split: Split,
    rates_n: &[usize],
    v_eval: usize,
) -> Result<EvalReport> {
    if model.cfg.recon.d_out != manifest.d {
        return Err(Error::config(
            "evaluate",
            format!("model d_out {} vs dataset d {}", model.cfg.recon.d_out, manifest.d),
        ));
    }
    if v_eval == 0 || v_eval > manifest.views {
        return Err(Error::config(
            "evaluate",
            format!("v_eval {v_eval} outside 1..={}", manifest.views),
        ));
    }
    let entries: Vec<_> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(Error::config("evaluate", "empty split"));
    }
    let todo: Vec<(String, usize)> = match model.cfg.kind {
        ModelKind::Implicit => {
            vec![(format!("K={}", model.cfg.k_implicit.unwrap()), 1usize)]
        }
        _ => {
            let n_max = model.cfg.codec.as_ref().unwrap().n_max;
            if rates_n.is_empty() {
                return Err(Error::config("evaluate", "no rates requested"));
            }
            for &n in rates_n {
                if n == 0 || n > n_max {
                    return Err(Error::config(
                        "evaluate",
                        format!("rate N={n} unachievable: config allows 1..={n_max}"),
                    ));
                }
            }
            rates_n.iter().map(|&n| (format!("N={n}"), n)).collect()
        }
    };

    let mut rows = Vec::with_capacity(todo.len());
    for (param, n) in todo {
        let per_example: Vec<(String, f64)> = entries
            .par_iter()
            .map(|e| -> Result<(String, f64)> {
                let views: Vec<Tensor<f32>> = manifest.load_views::<f32>(e)?
                    .into_iter()
                    .take(v_eval)
                    .map(|t| {
                        let s = t.shape().to_vec();
                        t.reshaped(vec![1, s[0], s[1], s[2]])
                    })
                    .collect::<Result<_>>()?;
                let truth = manifest.load_grid(e)?;
                let mut tape = Tape::new();
                let bind = tape.bind(&model.params);
                let mut rng = ChaCha8Rng::seed_from_u64(0); // unused in infer mode
                let fwd = model.forward(&mut tape, &bind, &views, n, false, &mut rng)?;
                let probs = tape.value(fwd.p_v).as_f64_vec();
                Ok((e.id.clone(), metrics::iou(&probs, &truth.occ, IOU_TAU)))
            })
            .collect::<Result<Vec<_>>>()?;
        let ious: Vec<f64> = per_example.iter().map(|(_, i)| *i).collect();
        let (miou, std) = metrics::mean_std(&ious);
        rows.push(RateRow { param, rate: model.cfg.rate(n), miou, std, per_example });
    }
    Ok(EvalReport { v_used: v_eval, rows })
}

/// Fraction of images whose per-iteration mean |r_t| is non-increasing in
/// t (one-shot mode). Reported, not asserted.
pub fn residual_monotonicity(
    model: &JointModel<f32>,
    manifest: &DatasetManifest,
    split: Split,
    n_iters: usize,
) -> Result<f64> {
    let codec = model
        .codec
        .as_ref()
        .ok_or_else(|| Error::config("residuals", "model has no codec"))?;
    let _ = codec;
    let entries: Vec<_> = manifest.split(split).collect();
    let mut ok = 0usize;
    let mut total = 0usize;
    for e in &entries {
        let views: Vec<Tensor<f32>> = manifest.load_views::<f32>(e)?;
        let img = views[0].clone();
        let s = img.shape().to_vec();
        let img = img.reshaped(vec![1, s[0], s[1], s[2]])?;
        let mut tape = Tape::new();
        let bind = tape.bind(&model.params);
        let x = tape.constant(img);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = model.codec.as_ref().unwrap().compress(
            &mut tape,
            &bind,
            x,
            n_iters,
            CodeMode::Infer,
            &mut rng,
        )?;
        let means: Vec<f64> = trace
            .residuals
            .iter()
            .map(|&r| {
                let v = tape.value(r);
                v.data().iter().map(|x| x.as_f64().abs()).sum::<f64>() / v.numel() as f64
            })
            .collect();
        let monotone = means.windows(2).all(|w| w[1] <= w[0] + 1e-9);
        ok += monotone as usize;
        total += 1;
    }
    Ok(ok as f64 / total.max(1) as f64)
}

// ---------------------------------------------------------------------------
// benchmarks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub name: String,
    pub forward_ms: f64,
    pub backward_ms: f64,
    /// Relative forward speed-up vs (original codec + bare reconstruction).
    pub forward_speedup_pct: Option<f64>,
    pub backward_speedup_pct: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub iters: usize,
    pub views: usize,
    pub codec_iters: usize,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("block,forward_ms,backward_ms,fwd_speedup_pct,bwd_speedup_pct\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{:.3},{:.3},{},{}\n",
                r.name,
                r.forward_ms,
                r.backward_ms,
                r.forward_speedup_pct.map(|v| format!("{v:.1}")).unwrap_or_default(),
                r.backward_speedup_pct.map(|v| format!("{v:.1}")).unwrap_or_default(),
            ));
        }
        s
    }

    pub fn row(&self, name: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn flat_image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::<f32>::zeros(vec![1, 3, h, w]);
    t.fill_uniform(0.5, &mut rng);
    // shift into [0,1]
    for v in t.data_mut() {
        *v += 0.5;
    }
    t
}

/// Median single-threaded forward/backward wall time per block under the
/// 5-viewpoint, 4-iteration scenario. Speed-up percentages are relative to
/// running the original codec and the bare reconstruction sequentially.
pub fn bench(height: usize, width: usize, iters: usize, seed: u64) -> Result<BenchReport> {
    let views_n = 5usize;
    let codec_n = 4usize;
    let warmup = 3usize;

    let views: Vec<Tensor<f32>> = (0..views_n).map(|i| flat_image(height, width, seed + i as u64)).collect();
    let target = Tensor::<f32>::full(vec![1, 32 * 32 * 32], 0.0);

    // bare reconstruction (no binarizer)
    let bare_cfg = Recon3DConfig::desk(height, width);
    let mut bare_ps = ParamSet::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bare = ReconNet::init(bare_cfg.clone(), Some(bare_cfg.k_embed), bare_cfg.k_embed, &mut bare_ps, &mut rng)?;

    // codecs
    let mut orig_ps = ParamSet::<f32>::new();
    let mut co = CodecConfig::original(height, width);
    co.n_max = codec_n;
    let codec_orig = CodecNet::init(co, &mut orig_ps, &mut rng)?;
    let mut small_ps = ParamSet::<f32>::new();
    let mut cs = CodecConfig::small(height, width);
    cs.n_max = codec_n;
    let codec_small = CodecNet::init(cs, &mut small_ps, &mut rng)?;

    // joint models
    let mut seq_cfg = JointConfig::desk_sequential(height, width);
    seq_cfg.codec.as_mut().unwrap().n_max = codec_n;
    let seq = JointModel::<f32>::new(seq_cfg, seed)?;
    let mut dir_cfg = JointConfig::desk_direct(height, width);
    dir_cfg.codec.as_mut().unwrap().n_max = codec_n;
    let dir = JointModel::<f32>::new(dir_cfg, seed)?;
    let imp = JointModel::<f32>::new(JointConfig::desk_implicit(height, width, 64), seed)?;

    // measurement helpers: forward rebuilds the tape per run; backward
    // re-sweeps one recorded tape with grads cleared
    let time_fb = |fwd: &dyn Fn(&mut Tape<f32>) -> Result<crate::tape::Var>| -> Result<(f64, f64)> {
        let mut fwd_times = Vec::with_capacity(iters);
        for i in 0..warmup + iters {
            let mut tape = Tape::serial();
            let t0 = Instant::now();
            let _ = fwd(&mut tape)?;
            let dt = t0.elapsed().as_secs_f64() * 1e3;
            if i >= warmup {
                fwd_times.push(dt);
            }
        }
        let mut tape = Tape::serial();
        let loss = fwd(&mut tape)?;
        let mut bwd_times = Vec::with_capacity(iters);
        for i in 0..warmup + iters {
            tape.zero_grads();
            let t0 = Instant::now();
            tape.backward(loss)?;
            let dt = t0.elapsed().as_secs_f64() * 1e3;
            if i >= warmup {
                bwd_times.push(dt);
            }
        }
        Ok((median(fwd_times), median(bwd_times)))
    };

    let mut rows = Vec::new();

    // bare 3D reconstruction over 5 viewpoints
    let (f_bare, b_bare) = time_fb(&|tape| {
        let bind = tape.bind(&bare_ps);
        let embeds = views
            .iter()
            .map(|v| {
                let s = v.shape().to_vec();
                let x = tape.constant(v.clone().reshaped(vec![s[0], s[1], s[2], s[3]])?);
                bare.encode_view(tape, &bind, x)
            })
            .collect::<Result<Vec<_>>>()?;
        let hidden = bare.fuse_views(tape, &bind, &embeds)?;
        let p = bare.decode_occupancy(tape, &bind, hidden.h)?;
        crate::recon3d::recon_loss(tape, p, &target)
    })?;
    rows.push(("recon3d".to_string(), f_bare, b_bare));

    // encoder only, single view
    let (f_enc, b_enc) = time_fb(&|tape| {
        let bind = tape.bind(&bare_ps);
        let x = tape.constant(views[0].clone());
        let e = bare.encode_view(tape, &bind, x)?;
        Ok(tape.sum(e))
    })?;
    rows.push(("recon3d-encoder-only".to_string(), f_enc, b_enc));

    // codecs: compress one image for 4 iterations
    for (name, net, ps) in [
        ("codec-original", &codec_orig, &orig_ps),
        ("codec-small", &codec_small, &small_ps),
    ] {
        let (f, b) = time_fb(&|tape| {
            let bind = tape.bind(ps);
            let x = tape.constant(views[0].clone());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let trace = net.compress(tape, &bind, x, codec_n, CodeMode::Infer, &mut rng)?;
            crate::codec::compression_loss(tape, &trace.residuals)
        })?;
        rows.push((name.to_string(), f, b));
    }

    // joint models: full forward at V=5
    for (name, model) in [("sequential", &seq), ("direct", &dir), ("implicit", &imp)] {
        let (f, b) = time_fb(&|tape| {
            let bind = tape.bind(&model.params);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let fwd = model.forward(tape, &bind, &views, codec_n, false, &mut rng)?;
            let parts = model.training_loss(tape, &fwd, &target)?;
            Ok(parts.total)
        })?;
        rows.push((name.to_string(), f, b));
    }

    let base_f = rows[0].1 + rows[2].1; // recon3d + codec-original forward
    let base_b = rows[0].2 + rows[2].2;
    let report_rows = rows
        .into_iter()
        .map(|(name, f, b)| {
            let speed = matches!(name.as_str(), "sequential" | "direct" | "implicit");
            BenchRow {
                name,
                forward_ms: f,
                backward_ms: b,
                forward_speedup_pct: speed.then(|| (1.0 - f / base_f) * 100.0),
                backward_speedup_pct: speed.then(|| (1.0 - b / base_b) * 100.0),
            }
        })
        .collect();
    Ok(BenchReport { rows: report_rows, iters, views: views_n, codec_iters: codec_n })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_decays_moments_only() {
        // from rest: zero gradient leaves parameters bitwise untouched
        let mut ps = ParamSet::<f32>::new();
        let id = ps.add("w", Tensor::from_vec(vec![2], vec![1.0, -2.0]).unwrap());
        let mut st = AdamState::new(&ps);
        let grads = vec![Tensor::<f32>::zeros(vec![2])];
        adam_step(&mut ps, &grads, &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(ps.value(id).data(), &[1.0, -2.0]);
        // with live moments, a zero gradient decays them by beta1/beta2
        st.m[0].data_mut()[0] = 0.5;
        st.v[0].data_mut()[0] = 0.25;
        adam_step(&mut ps, &grads, &mut st, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert!((st.m[0].data()[0] - 0.45).abs() < 1e-7);
        assert!((st.v[0].data()[0] - 0.24975).abs() < 1e-7);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // from zero state with constant gradient g, the bias-corrected
        // first step is lr * g/|g| (magnitude lr, any |g|)
        for &g in &[0.001f32, 1.0, 250.0] {
            let mut ps = ParamSet::<f32>::new();
            let id = ps.add("w", Tensor::from_vec(vec![1], vec![0.0]).unwrap());
            let mut st = AdamState::new(&ps);
            let grads = vec![Tensor::from_vec(vec![1], vec![g]).unwrap()];
            adam_step(&mut ps, &grads, &mut st, 0.01, 0.9, 0.999, 1e-12).unwrap();
            let got = ps.value(id).data()[0].abs();
            assert!((got - 0.01).abs() < 1e-4, "g={g} -> step {got}");
        }
    }

    #[test]
    fn adam_symmetric_trajectories() {
        let mut ps = ParamSet::<f32>::new();
        let a = ps.add("a", Tensor::from_vec(vec![1], vec![0.0]).unwrap());
        let b = ps.add("b", Tensor::from_vec(vec![1], vec![0.0]).unwrap());
        let mut st = AdamState::new(&ps);
        for _ in 0..5 {
            let grads = vec![
                Tensor::from_vec(vec![1], vec![0.3]).unwrap(),
                Tensor::from_vec(vec![1], vec![-0.3]).unwrap(),
            ];
            adam_step(&mut ps, &grads, &mut st, 0.05, 0.9, 0.999, 1e-8).unwrap();
            assert_eq!(ps.value(a).data()[0], -ps.value(b).data()[0]);
        }
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = vec![Tensor::from_vec(vec![2], vec![3.0f32, 4.0]).unwrap()];
        let norm = clip_global_norm(&mut grads, 1.0);
        assert!((norm - 5.0).abs() < 1e-6);
        let clipped: f64 = grads[0].data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((clipped - 1.0).abs() < 1e-6);
        // below the bound: untouched
        let mut g2 = vec![Tensor::from_vec(vec![1], vec![0.5f32]).unwrap()];
        clip_global_norm(&mut g2, 1.0);
        assert_eq!(g2[0].data()[0], 0.5);
    }

    #[test]
    fn config_text_round_trip() {
        for joint in [
            JointConfig::desk_sequential(32, 32),
            JointConfig::desk_direct(32, 32),
            JointConfig::desk_implicit(32, 32, 128),
        ] {
            let mut cfg = TrainConfig::new(joint);
            cfg.seed = 42;
            cfg.lr = 0.004;
            let text = config_to_text(&cfg);
            let back = config_from_text(&text).unwrap();
            assert_eq!(cfg, back);
        }
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = config_from_text("model = implicit\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn checkpoint_round_trip_bit_exact() {
        let cfg = TrainConfig::new(JointConfig::desk_implicit(32, 32, 64));
        let trainer = Trainer::new(cfg).unwrap();
        let ck = trainer.checkpoint();
        let mut buf = Vec::new();
        ck.write_to(&mut buf).unwrap();
        let back = Checkpoint::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(ck.config_text, back.config_text);
        assert_eq!(ck.params.len(), back.params.len());
        for (a, b) in ck.params.iter().zip(&back.params) {
            assert_eq!(a.0, b.0);
            assert_eq!(a.1, b.1);
            // bitwise equality
            for (x, y) in a.2.iter().zip(&b.2) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // tampered magic rejected
        let mut bad = buf.clone();
        bad[0] = b'Z';
        assert!(Checkpoint::read_from(&mut bad.as_slice()).is_err());
        // truncation rejected
        let mut short = buf.clone();
        short.truncate(buf.len() - 2);
        assert!(Checkpoint::read_from(&mut short.as_slice()).is_err());
    }

    #[test]
    fn restore_model_reproduces_forward() {
        let cfg = TrainConfig::new(JointConfig::desk_implicit(32, 32, 64));
        let trainer = Trainer::new(cfg).unwrap();
        let ck = trainer.checkpoint();
        let (_, model2) = ck.restore_model().unwrap();
        let views = vec![Tensor::<f32>::full(vec![1, 3, 32, 32], 0.4)];
        let run = |m: &JointModel<f32>| {
            let mut tape = Tape::new();
            let bind = tape.bind(&m.params);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let fwd = m.forward(&mut tape, &bind, &views, 1, false, &mut rng).unwrap();
            tape.value(fwd.p_v).clone()
        };
        let a = run(&trainer.model);
        let b = run(&model2);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
