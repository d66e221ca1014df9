//! Recurrence units: vanilla RNN, fully-connected LSTM, 2D convolutional
//! LSTM, and the 4x4x4 grid of 3D-convolutional LSTM units.
//!
//! All cells are pure functions of (input, previous state, parameters); the
//! structs below hold [`ParamId`]s plus layer geometry and build the ops on
//! a caller-supplied tape.
//!
//! Gate equations, shared by every variant:
//!   f = sigmoid(Wfx x + Wfh h + bf)     i = sigmoid(Wix x + Wih h + bi)
//!   o = sigmoid(Wox x + Woh h + bo)     g = tanh  (Wcx x + Wch h + bc)
//!   c' = f .* c + i .* g                h' = o .* tanh(c')
//!
//! Gate biases initialize to bf = 1 and 0 elsewhere; weights to
//! U(-s, s), s = 1/sqrt(fan_in).

use crate::error::Result;
use crate::params::{Binding, ParamId, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;
use rand_chacha::ChaCha8Rng;

/// Hidden and cell state handles for one LSTM layer on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    /// All-zero initial state of the given shape.
    pub fn zeros<T: Scalar>(tape: &mut Tape<T>, shape: Vec<usize>) -> Self {
        LstmState { h: tape.zeros(shape.clone()), c: tape.zeros(shape) }
    }
}

// ---------------------------------------------------------------------------
// vanilla RNN
// ---------------------------------------------------------------------------

/// Parameters of the vanilla recurrence h' = tanh(Wh h + Wx x), y = Wy h'.
pub struct RnnCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub w_y: ParamId,
    pub hidden: usize,
}

impl RnnCell {
    pub fn init<T: Scalar>(
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        RnnCell {
            w_x: ps.add_uniform(format!("{prefix}.wx"), vec![in_dim, hidden], in_dim, rng),
            w_h: ps.add_uniform(format!("{prefix}.wh"), vec![hidden, hidden], hidden, rng),
            w_y: ps.add_uniform(format!("{prefix}.wy"), vec![hidden, out_dim], hidden, rng),
            hidden,
        }
    }

    /// One step: returns (h_t, y_t) for x_t `[B, in]`, h_prev `[B, hidden]`.
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
        h_prev: Var,
    ) -> Result<(Var, Var)> {
        let xa = tape.matmul(x, bind.var(self.w_x))?;
        let ha = tape.matmul(h_prev, bind.var(self.w_h))?;
        let pre = tape.add(xa, ha)?;
        let h = tape.tanh(pre);
        let y = tape.matmul(h, bind.var(self.w_y))?;
        Ok((h, y))
    }
}

// ---------------------------------------------------------------------------
// fully-connected LSTM
// ---------------------------------------------------------------------------

pub struct LstmCell {
    pub w_fx: ParamId,
    pub w_fh: ParamId,
    pub w_ix: ParamId,
    pub w_ih: ParamId,
    pub w_ox: ParamId,
    pub w_oh: ParamId,
    pub w_cx: ParamId,
    pub w_ch: ParamId,
    pub b_f: ParamId,
    pub b_i: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn init<T: Scalar>(
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut wx = |g: &str, rng: &mut ChaCha8Rng| {
            ps.add_uniform(format!("{prefix}.w{g}x"), vec![in_dim, hidden], in_dim, rng)
        };
        let w_fx = wx("f", rng);
        let w_ix = wx("i", rng);
        let w_ox = wx("o", rng);
        let w_cx = wx("c", rng);
        let mut wh = |g: &str, rng: &mut ChaCha8Rng| {
            ps.add_uniform(format!("{prefix}.w{g}h"), vec![hidden, hidden], hidden, rng)
        };
        let w_fh = wh("f", rng);
        let w_ih = wh("i", rng);
        let w_oh = wh("o", rng);
        let w_ch = wh("c", rng);
        LstmCell {
            w_fx,
            w_fh,
            w_ix,
            w_ih,
            w_ox,
            w_oh,
            w_cx,
            w_ch,
            b_f: ps.add_const(format!("{prefix}.bf"), vec![hidden], 1.0),
            b_i: ps.add_const(format!("{prefix}.bi"), vec![hidden], 0.0),
            b_o: ps.add_const(format!("{prefix}.bo"), vec![hidden], 0.0),
            b_c: ps.add_const(format!("{prefix}.bc"), vec![hidden], 0.0),
            hidden,
        }
    }

    fn gate<T: Scalar>(
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
        h: Var,
        wx: ParamId,
        wh: ParamId,
        b: ParamId,
    ) -> Result<Var> {
        let xa = tape.matmul(x, bind.var(wx))?;
        let ha = tape.matmul(h, bind.var(wh))?;
        let s = tape.add(xa, ha)?;
        tape.add_row(s, bind.var(b))
    }

    /// One step for x `[B, in]` and state tensors `[B, hidden]`.
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
        state: &LstmState,
    ) -> Result<LstmState> {
        let f_pre = Self::gate(tape, bind, x, state.h, self.w_fx, self.w_fh, self.b_f)?;
        let i_pre = Self::gate(tape, bind, x, state.h, self.w_ix, self.w_ih, self.b_i)?;
        let o_pre = Self::gate(tape, bind, x, state.h, self.w_ox, self.w_oh, self.b_o)?;
        let g_pre = Self::gate(tape, bind, x, state.h, self.w_cx, self.w_ch, self.b_c)?;
        let f = tape.sigmoid(f_pre);
        let i = tape.sigmoid(i_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }
}

// ---------------------------------------------------------------------------
// 2D convolutional LSTM
// ---------------------------------------------------------------------------

/// LSTM with convolutional gate paths. The input path may stride; the
/// hidden path is always a 3x3 same-padded convolution.
pub struct ConvLstm2dCell {
    pub w_fx: ParamId,
    pub w_fh: ParamId,
    pub w_ix: ParamId,
    pub w_ih: ParamId,
    pub w_ox: ParamId,
    pub w_oh: ParamId,
    pub w_cx: ParamId,
    pub w_ch: ParamId,
    pub b_f: ParamId,
    pub b_i: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    pub in_ch: usize,
    pub hid_ch: usize,
    pub x_kernel: usize,
    pub x_stride: usize,
    pub x_pad: usize,
}

/// Hidden-path kernel size (same-padded).
const H_KERNEL: usize = 3;
const H_PAD: usize = 1;

impl ConvLstm2dCell {
    pub fn init<T: Scalar>(
        prefix: &str,
        in_ch: usize,
        hid_ch: usize,
        x_kernel: usize,
        x_stride: usize,
        x_pad: usize,
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_x = in_ch * x_kernel * x_kernel;
        let fan_h = hid_ch * H_KERNEL * H_KERNEL;
        let mut wx = |g: &str, rng: &mut ChaCha8Rng| {
            ps.add_uniform(
                format!("{prefix}.w{g}x"),
                vec![hid_ch, in_ch, x_kernel, x_kernel],
                fan_x,
                rng,
            )
        };
        let w_fx = wx("f", rng);
        let w_ix = wx("i", rng);
        let w_ox = wx("o", rng);
        let w_cx = wx("c", rng);
        let mut wh = |g: &str, rng: &mut ChaCha8Rng| {
            ps.add_uniform(
                format!("{prefix}.w{g}h"),
                vec![hid_ch, hid_ch, H_KERNEL, H_KERNEL],
                fan_h,
                rng,
            )
        };
        let w_fh = wh("f", rng);
        let w_ih = wh("i", rng);
        let w_oh = wh("o", rng);
        let w_ch = wh("c", rng);
        ConvLstm2dCell {
            w_fx,
            w_fh,
            w_ix,
            w_ih,
            w_ox,
            w_oh,
            w_cx,
            w_ch,
            b_f: ps.add_const(format!("{prefix}.bf"), vec![hid_ch], 1.0),
            b_i: ps.add_const(format!("{prefix}.bi"), vec![hid_ch], 0.0),
            b_o: ps.add_const(format!("{prefix}.bo"), vec![hid_ch], 0.0),
            b_c: ps.add_const(format!("{prefix}.bc"), vec![hid_ch], 0.0),
            in_ch,
            hid_ch,
            x_kernel,
            x_stride,
            x_pad,
        }
    }

    /// Spatial extent of the hidden state for a given input extent.
    pub fn out_extent(&self, input: usize) -> usize {
        (input + 2 * self.x_pad - self.x_kernel) / self.x_stride + 1
    }

    fn gate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
        h: Var,
        wx: ParamId,
        wh: ParamId,
        b: ParamId,
    ) -> Result<Var> {
        let xa = tape.conv2d(x, bind.var(wx), Some(bind.var(b)), self.x_stride, self.x_pad)?;
        let ha = tape.conv2d(h, bind.var(wh), None, 1, H_PAD)?;
        tape.add(xa, ha)
    }

    /// One step for x `[B, in_ch, H, W]`; state maps are
    /// `[B, hid_ch, H', W']` with H' = out_extent(H).
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
        state: &LstmState,
    ) -> Result<LstmState> {
        let f_pre = self.gate(tape, bind, x, state.h, self.w_fx, self.w_fh, self.b_f)?;
        let i_pre = self.gate(tape, bind, x, state.h, self.w_ix, self.w_ih, self.b_i)?;
        let o_pre = self.gate(tape, bind, x, state.h, self.w_ox, self.w_oh, self.b_o)?;
        let g_pre = self.gate(tape, bind, x, state.h, self.w_cx, self.w_ch, self.b_c)?;
        let f = tape.sigmoid(f_pre);
        let i = tape.sigmoid(i_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    pub fn zero_state<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        batch: usize,
        h: usize,
        w: usize,
    ) -> LstmState {
        LstmState::zeros(tape, vec![batch, self.hid_ch, h, w])
    }
}

// ---------------------------------------------------------------------------
// 3D-convolutional LSTM grid
// ---------------------------------------------------------------------------

/// Grid side length: 4x4x4 units, each covering a region of voxel space.
pub const GRID_SIDE: usize = 4;
pub const GRID_CELLS: usize = GRID_SIDE * GRID_SIDE * GRID_SIDE;

/// A 4x4x4 lattice of LSTM units. The input vector enters through a
/// fully-connected map producing a distinct slice per grid cell and gate
/// (no weight sharing across cells); only the hidden state undergoes
/// convolution, with 3x3x3 same-padded kernels. The hidden tensor is
/// `[B, n_hidden, 4, 4, 4]`.
pub struct Lstm3dGrid {
    pub w_fx: ParamId,
    pub w_ix: ParamId,
    pub w_ox: ParamId,
    pub w_cx: ParamId,
    pub w_fh: ParamId,
    pub w_ih: ParamId,
    pub w_oh: ParamId,
    pub w_ch: ParamId,
    pub b_f: ParamId,
    pub b_i: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
    pub input_len: usize,
    pub n_hidden: usize,
}

impl Lstm3dGrid {
    pub fn init<T: Scalar>(
        prefix: &str,
        input_len: usize,
        n_hidden: usize,
        ps: &mut ParamSet<T>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let per_gate = GRID_CELLS * n_hidden;
        let fan_h = n_hidden * 27;
        let mut wx = |g: &str, rng: &mut ChaCha8Rng| {
            ps.add_uniform(
                format!("{prefix}.w{g}x"),
                vec![input_len, per_gate],
                input_len,
                rng,
            )
        };
        let w_fx = wx("f", rng);
        let w_ix = wx("i", rng);
        let w_ox = wx("o", rng);
        let w_cx = wx("c", rng);
        let mut wh = |g: &str, rng: &mut ChaCha8Rng| {
            ps.add_uniform(
                format!("{prefix}.w{g}h"),
                vec![n_hidden, n_hidden, 3, 3, 3],
                fan_h,
                rng,
            )
        };
        let w_fh = wh("f", rng);
        let w_ih = wh("i", rng);
        let w_oh = wh("o", rng);
        let w_ch = wh("c", rng);
        Lstm3dGrid {
            w_fx,
            w_ix,
            w_ox,
            w_cx,
            w_fh,
            w_ih,
            w_oh,
            w_ch,
            b_f: ps.add_const(format!("{prefix}.bf"), vec![n_hidden], 1.0),
            b_i: ps.add_const(format!("{prefix}.bi"), vec![n_hidden], 0.0),
            b_o: ps.add_const(format!("{prefix}.bo"), vec![n_hidden], 0.0),
            b_c: ps.add_const(format!("{prefix}.bc"), vec![n_hidden], 0.0),
            input_len,
            n_hidden,
        }
    }

    fn gate<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
        h: Var,
        wx: ParamId,
        wh: ParamId,
        b: ParamId,
        batch: usize,
    ) -> Result<Var> {
        // FC input path, reshaped onto the grid: [B,K] -> [B, Nh, 4,4,4]
        let xa = tape.matmul(x, bind.var(wx))?;
        let xg = tape.reshape(
            xa,
            vec![batch, self.n_hidden, GRID_SIDE, GRID_SIDE, GRID_SIDE],
        )?;
        // hidden path: 3D convolution, bias rides on the conv (per channel)
        let ha = tape.conv3d(h, bind.var(wh), Some(bind.var(b)), 1, 1)?;
        tape.add(xg, ha)
    }

    /// One view step for x `[B, input_len]` and grid state
    /// `[B, n_hidden, 4, 4, 4]`.
    pub fn step<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &Binding,
        x: Var,
        state: &LstmState,
    ) -> Result<LstmState> {
        let batch = tape.shape(x)[0];
        let f_pre = self.gate(tape, bind, x, state.h, self.w_fx, self.w_fh, self.b_f, batch)?;
        let i_pre = self.gate(tape, bind, x, state.h, self.w_ix, self.w_ih, self.b_i, batch)?;
        let o_pre = self.gate(tape, bind, x, state.h, self.w_ox, self.w_oh, self.b_o, batch)?;
        let g_pre = self.gate(tape, bind, x, state.h, self.w_cx, self.w_ch, self.b_c, batch)?;
        let f = tape.sigmoid(f_pre);
        let i = tape.sigmoid(i_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let fc = tape.mul(f, state.c)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    pub fn zero_state<T: Scalar>(&self, tape: &mut Tape<T>, batch: usize) -> LstmState {
        LstmState::zeros(
            tape,
            vec![batch, self.n_hidden, GRID_SIDE, GRID_SIDE, GRID_SIDE],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;

    fn zero_params<T: Scalar>(ps: &mut ParamSet<T>) {
        for id in ps.ids().collect::<Vec<_>>() {
            let t = ps.value_mut(id);
            for v in t.data_mut() {
                *v = T::zero();
            }
        }
    }

    #[test]
    fn rnn_zero_weights_give_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let cell = RnnCell::init("rnn", 2, 3, 2, &mut ps, &mut rng);
        zero_params(&mut ps);
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let x = tape.constant(Tensor::from_vec(vec![1, 2], vec![1.0, -1.0]).unwrap());
        let h0 = tape.zeros(vec![1, 3]);
        let (h, y) = cell.step(&mut tape, &bind, x, h0).unwrap();
        assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rnn_identity_input_path() {
        // Wh = 0, Wx = I, x = [0.5] -> h = tanh(0.5)
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let cell = RnnCell::init("rnn", 1, 1, 1, &mut ps, &mut rng);
        zero_params(&mut ps);
        ps.value_mut(cell.w_x).data_mut()[0] = 1.0;
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let x = tape.constant(Tensor::from_vec(vec![1, 1], vec![0.5]).unwrap());
        let h0 = tape.zeros(vec![1, 1]);
        let (h, _) = cell.step(&mut tape, &bind, x, h0).unwrap();
        let expected = 0.5f64.tanh(); // 0.46211715726...
        assert!((tape.value(h).data()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.4621).abs() < 1e-4);
    }

    #[test]
    fn lstm_all_zero_params() {
        // gates = sigmoid(0) = 0.5, g = 0 -> c1 = 0, h1 = 0
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let cell = LstmCell::init("lstm", 2, 3, &mut ps, &mut rng);
        zero_params(&mut ps);
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let x = tape.constant(Tensor::from_vec(vec![1, 2], vec![0.3, -0.2]).unwrap());
        let st = LstmState::zeros(&mut tape, vec![1, 3]);
        let out = cell.step(&mut tape, &bind, x, &st).unwrap();
        assert!(tape.value(out.c).data().iter().all(|&v| v == 0.0));
        assert!(tape.value(out.h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_saturated_gates_carry_cell_state() {
        // zero weights, bf=bi=bo=+10 (gates ~ 1), bc=0, c0=v:
        // c1 ~ v, h1 ~ tanh(v)
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let cell = LstmCell::init("lstm", 1, 2, &mut ps, &mut rng);
        zero_params(&mut ps);
        for b in [cell.b_f, cell.b_i, cell.b_o] {
            for v in ps.value_mut(b).data_mut() {
                *v = 10.0;
            }
        }
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let x = tape.constant(Tensor::from_vec(vec![1, 1], vec![0.0]).unwrap());
        let c0 = tape.constant(Tensor::from_vec(vec![1, 2], vec![0.7, -1.2]).unwrap());
        let h0 = tape.zeros(vec![1, 2]);
        let st = LstmState { h: h0, c: c0 };
        let out = cell.step(&mut tape, &bind, x, &st).unwrap();
        let sig10 = 1.0 / (1.0 + (-10.0f64).exp());
        for (i, &v) in [0.7f64, -1.2].iter().enumerate() {
            let c_expect = sig10 * v; // i*g term vanishes (g = tanh(0) = 0)
            let h_expect = sig10 * c_expect.tanh();
            assert!((tape.value(out.c).data()[i] - c_expect).abs() < 1e-12);
            assert!((tape.value(out.h).data()[i] - h_expect).abs() < 1e-12);
            // within ~1e-4 of the idealized gates-at-1 values
            assert!((tape.value(out.c).data()[i] - v).abs() < 1e-3);
            assert!((tape.value(out.h).data()[i] - v.tanh()).abs() < 1e-3);
        }
    }

    #[test]
    fn lstm_hidden_is_o_times_tanh_c() {
        // invariant h = o .* tanh(c) after every step
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut ps = ParamSet::<f64>::new();
        let cell = LstmCell::init("lstm", 3, 4, &mut ps, &mut rng);
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let mut x = Tensor::<f64>::zeros(vec![2, 3]);
        x.fill_uniform(1.0, &mut rng);
        let xv = tape.constant(x);
        let mut st = LstmState::zeros(&mut tape, vec![2, 4]);
        for _ in 0..3 {
            st = cell.step(&mut tape, &bind, xv, &st).unwrap();
            // recompute o from the tape inputs is awkward; instead verify
            // |h| <= |tanh(c)| elementwise and signs match where h != 0
            let h = tape.value(st.h).data();
            let c = tape.value(st.c).data();
            for (hv, cv) in h.iter().zip(c) {
                let tc = cv.tanh();
                assert!(hv.abs() <= tc.abs() + 1e-15);
                if *hv != 0.0 {
                    assert_eq!(hv.signum(), tc.signum());
                }
            }
        }
    }

    #[test]
    fn conv_lstm_zero_params_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let cell = ConvLstm2dCell::init("cl", 2, 3, 3, 1, 1, &mut ps, &mut rng);
        zero_params(&mut ps);
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let x = tape.constant(Tensor::full(vec![1, 2, 4, 4], 0.5));
        let st = cell.zero_state(&mut tape, 1, 4, 4);
        let out = cell.step(&mut tape, &bind, x, &st).unwrap();
        assert!(tape.value(out.h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_zero_params_zero_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let grid = Lstm3dGrid::init("g", 8, 2, &mut ps, &mut rng);
        zero_params(&mut ps);
        let mut tape = Tape::new();
        let bind = tape.bind(&ps);
        let x = tape.constant(Tensor::full(vec![1, 8], 0.3));
        let st = grid.zero_state(&mut tape, 1);
        let out = grid.step(&mut tape, &bind, x, &st).unwrap();
        assert!(tape.value(out.h).data().iter().all(|&v| v == 0.0));
        assert_eq!(tape.shape(out.h), &[1, 2, 4, 4, 4]);
    }
}
