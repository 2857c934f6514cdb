//! One ConvLSTM cell: gate convolutions over the concatenated [input;
//! hidden] channels, peephole connections on the cell state, and the exact
//! reverse-mode gradients of all fifteen parameter tensors.
//!
//! Per step, with * a same-padded convolution and ⊙ element-wise:
//!   g = tanh(Wxg*X + Whg*H_prev + b_g)
//!   i = σ(Wxi*X + Whi*H_prev + Wci ⊙ C_prev + b_i)
//!   f = σ(Wxf*X + Whf*H_prev + Wcf ⊙ C_prev + b_f)
//!   C = f ⊙ C_prev + i ⊙ g
//!   o = σ(Wxo*X + Who*H_prev + Wco ⊙ C + b_o)
//!   H = o ⊙ tanh(C)
//!
//! The four gate convolutions run as one gemm: kernels are stacked into a
//! [4·K_h × (C_in+K_h)·k^d] matrix applied to the patch matrix of [X; H].

use super::conv::{col2im_add, im2col_into};
use super::scalar::Scalar;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use super::NnError;
use rand::Rng;

pub const GATE_G: usize = 0;
pub const GATE_I: usize = 1;
pub const GATE_F: usize = 2;
pub const GATE_O: usize = 3;
pub const GATE_NAMES: [&str; 4] = ["g", "i", "f", "o"];

pub const PEEP_I: usize = 0;
pub const PEEP_F: usize = 1;
pub const PEEP_O: usize = 2;
pub const PEEP_NAMES: [&str; 3] = ["i", "f", "o"];

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmCell<S: Scalar> {
    /// Input-to-gate kernels, gate order g/i/f/o: [K_h, C_in, k, k(, k)].
    pub w_x: [Tensor<S>; 4],
    /// Hidden-to-gate kernels: [K_h, K_h, k, k(, k)].
    pub w_h: [Tensor<S>; 4],
    /// Peephole weights for i/f/o, shaped like the cell state: [K_h, n, n(, n)].
    pub w_peep: [Tensor<S>; 3],
    /// Per-channel gate biases: [K_h].
    pub b: [Tensor<S>; 4],
    in_channels: usize,
    hidden: usize,
    kernel: usize,
    side: usize,
    dim: usize,
}

/// Post-activation values cached by the forward pass for one time step,
/// each [K_h, batch·n^d].
pub(crate) struct StepCache<S> {
    pub g: Vec<S>,
    pub i: Vec<S>,
    pub f: Vec<S>,
    pub o: Vec<S>,
    pub c: Vec<S>,
}

impl<S: Scalar> ConvLstmCell<S> {
    pub fn zeros(
        in_channels: usize,
        hidden: usize,
        kernel: usize,
        side: usize,
        dim: usize,
    ) -> ConvLstmCell<S> {
        let spatial = vec![kernel; dim];
        let mut kx = vec![hidden, in_channels];
        kx.extend(&spatial);
        let mut kh = vec![hidden, hidden];
        kh.extend(&spatial);
        let mut peep = vec![hidden];
        peep.extend(std::iter::repeat(side).take(dim));
        ConvLstmCell {
            w_x: std::array::from_fn(|_| Tensor::zeros(&kx)),
            w_h: std::array::from_fn(|_| Tensor::zeros(&kh)),
            w_peep: std::array::from_fn(|_| Tensor::zeros(&peep)),
            b: std::array::from_fn(|_| Tensor::zeros(&[hidden])),
            in_channels,
            hidden,
            kernel,
            side,
            dim,
        }
    }

    /// Kernels uniform in ±1/√fan_in, forget bias 1, everything else 0.
    pub fn init<R: Rng>(
        in_channels: usize,
        hidden: usize,
        kernel: usize,
        side: usize,
        dim: usize,
        rng: &mut R,
    ) -> ConvLstmCell<S> {
        let mut cell = Self::zeros(in_channels, hidden, kernel, side, dim);
        let kd = kernel.pow(dim as u32) as f64;
        let sx = 1.0 / (in_channels as f64 * kd).sqrt();
        let sh = 1.0 / (hidden as f64 * kd).sqrt();
        for g in 0..4 {
            cell.w_x[g] = Tensor::uniform(cell.w_x[g].shape(), sx, rng);
            cell.w_h[g] = Tensor::uniform(cell.w_h[g].shape(), sh, rng);
        }
        cell.b[GATE_F].fill(S::ONE);
        cell
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    pub fn hidden(&self) -> usize {
        self.hidden
    }
    pub fn kernel(&self) -> usize {
        self.kernel
    }
    pub fn side(&self) -> usize {
        self.side
    }
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per channel plane, n^d.
    pub fn plane(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    fn kd(&self) -> usize {
        self.kernel.pow(self.dim as u32)
    }

    /// Patch-matrix row count for the concatenated [X; H] input.
    pub(crate) fn patch_rows(&self) -> usize {
        (self.in_channels + self.hidden) * self.kd()
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// The fifteen parameter tensors in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::with_capacity(15);
        for g in 0..4 {
            out.push((format!("w_x{}", GATE_NAMES[g]), &self.w_x[g]));
        }
        for g in 0..4 {
            out.push((format!("w_h{}", GATE_NAMES[g]), &self.w_h[g]));
        }
        for p in 0..3 {
            out.push((format!("w_c{}", PEEP_NAMES[p]), &self.w_peep[p]));
        }
        for g in 0..4 {
            out.push((format!("b_{}", GATE_NAMES[g]), &self.b[g]));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::with_capacity(15);
        let [wx0, wx1, wx2, wx3] = &mut self.w_x;
        let [wh0, wh1, wh2, wh3] = &mut self.w_h;
        let [wp0, wp1, wp2] = &mut self.w_peep;
        let [b0, b1, b2, b3] = &mut self.b;
        for (g, t) in [wx0, wx1, wx2, wx3].into_iter().enumerate() {
            out.push((format!("w_x{}", GATE_NAMES[g]), t));
        }
        for (g, t) in [wh0, wh1, wh2, wh3].into_iter().enumerate() {
            out.push((format!("w_h{}", GATE_NAMES[g]), t));
        }
        for (p, t) in [wp0, wp1, wp2].into_iter().enumerate() {
            out.push((format!("w_c{}", PEEP_NAMES[p]), t));
        }
        for (g, t) in [b0, b1, b2, b3].into_iter().enumerate() {
            out.push((format!("b_{}", GATE_NAMES[g]), t));
        }
        out
    }

    /// Stack the eight gate kernels as one row-major matrix
    /// [4·K_h × (C_in+K_h)·k^d]; row gate·K_h+o, input-channel blocks X then H.
    pub(crate) fn assemble_wcat(&self) -> Vec<S> {
        let kd = self.kd();
        let (cin, kh) = (self.in_channels, self.hidden);
        let rcols = (cin + kh) * kd;
        let mut w = vec![S::ZERO; 4 * kh * rcols];
        for gate in 0..4 {
            for o in 0..kh {
                let row = &mut w[(gate * kh + o) * rcols..][..rcols];
                for c in 0..cin {
                    row[c * kd..(c + 1) * kd]
                        .copy_from_slice(&self.w_x[gate].data()[(o * cin + c) * kd..][..kd]);
                }
                for c in 0..kh {
                    row[(cin + c) * kd..(cin + c + 1) * kd]
                        .copy_from_slice(&self.w_h[gate].data()[(o * kh + c) * kd..][..kd]);
                }
            }
        }
        w
    }

    /// Scatter a stacked-kernel gradient back onto the per-gate tensors.
    pub(crate) fn accumulate_dwcat(&mut self, dw: &[S]) {
        let kd = self.kd();
        let (cin, kh) = (self.in_channels, self.hidden);
        let rcols = (cin + kh) * kd;
        for gate in 0..4 {
            for o in 0..kh {
                let row = &dw[(gate * kh + o) * rcols..][..rcols];
                for c in 0..cin {
                    let dst = &mut self.w_x[gate].data_mut()[(o * cin + c) * kd..][..kd];
                    for (d, s) in dst.iter_mut().zip(&row[c * kd..(c + 1) * kd]) {
                        *d += *s;
                    }
                }
                for c in 0..kh {
                    let dst = &mut self.w_h[gate].data_mut()[(o * kh + c) * kd..][..kd];
                    for (d, s) in dst.iter_mut().zip(&row[(cin + c) * kd..(cin + c + 1) * kd]) {
                        *d += *s;
                    }
                }
            }
        }
    }

    fn fill_patches(&self, p: &mut [S], x: &[S], h_prev: &[S], batch: usize) {
        let m = self.plane();
        let cols = batch * m;
        let rows_x = self.in_channels * self.kd();
        for s in 0..batch {
            im2col_into(p, cols, 0, s * m, x, cols, s * m, self.in_channels, self.side, self.dim, self.kernel);
            im2col_into(p, cols, rows_x, s * m, h_prev, cols, s * m, self.hidden, self.side, self.dim, self.kernel);
        }
    }

    /// One batched forward step. Inputs are channel-major with per-sample
    /// column blocks: x [C_in, B·m], h_prev/c_prev/h_out [K_h, B·m].
    pub(crate) fn forward_step(
        &self,
        wcat: &[S],
        x: &[S],
        h_prev: &[S],
        c_prev: &[S],
        batch: usize,
        p_buf: &mut Vec<S>,
        a_buf: &mut Vec<S>,
        h_out: &mut [S],
    ) -> StepCache<S> {
        let m = self.plane();
        let cols = batch * m;
        let kh = self.hidden;
        let rows = self.patch_rows();
        p_buf.resize(rows * cols, S::ZERO);
        a_buf.resize(4 * kh * cols, S::ZERO);
        self.fill_patches(p_buf, x, h_prev, batch);
        gemm_nn(4 * kh, rows, cols, wcat, p_buf, S::ZERO, a_buf);

        let mut cache = StepCache {
            g: vec![S::ZERO; kh * cols],
            i: vec![S::ZERO; kh * cols],
            f: vec![S::ZERO; kh * cols],
            o: vec![S::ZERO; kh * cols],
            c: vec![S::ZERO; kh * cols],
        };
        let (wci, wcf, wco) =
            (self.w_peep[PEEP_I].data(), self.w_peep[PEEP_F].data(), self.w_peep[PEEP_O].data());
        for r in 0..kh {
            let (bg, bi, bf, bo) = (
                self.b[GATE_G].data()[r],
                self.b[GATE_I].data()[r],
                self.b[GATE_F].data()[r],
                self.b[GATE_O].data()[r],
            );
            let ag = &a_buf[(GATE_G * kh + r) * cols..][..cols];
            let ai = &a_buf[(GATE_I * kh + r) * cols..][..cols];
            let af = &a_buf[(GATE_F * kh + r) * cols..][..cols];
            let ao = &a_buf[(GATE_O * kh + r) * cols..][..cols];
            for s in 0..batch {
                for pos in 0..m {
                    let j = s * m + pos;
                    let idx = r * cols + j;
                    let peep = r * m + pos;
                    let cp = c_prev[idx];
                    let g = (ag[j] + bg).tanh();
                    let i = (ai[j] + bi + wci[peep] * cp).sigmoid();
                    let f = (af[j] + bf + wcf[peep] * cp).sigmoid();
                    let c = f * cp + i * g;
                    let o = (ao[j] + bo + wco[peep] * c).sigmoid();
                    debug_assert!(
                        g.is_finite() && i.is_finite() && f.is_finite() && o.is_finite() && c.is_finite()
                    );
                    // Saturated gates round to exactly 0 or 1 in f32.
                    debug_assert!(
                        i >= S::ZERO && i <= S::ONE && f >= S::ZERO && f <= S::ONE && o >= S::ZERO && o <= S::ONE
                    );
                    cache.g[idx] = g;
                    cache.i[idx] = i;
                    cache.f[idx] = f;
                    cache.o[idx] = o;
                    cache.c[idx] = c;
                    h_out[idx] = o * c.tanh();
                }
            }
        }
        cache
    }

    /// Reverse-mode step. `dh` is the total gradient flowing into H_t,
    /// `dc_in` the cell-state gradient from step t+1. Writes gradients for
    /// this cell's parameters into `grads`/`dwcat` (accumulating) and fills
    /// dx, dh_prev, dc_prev (overwriting).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_step(
        &self,
        wcat: &[S],
        grads: &mut ConvLstmCell<S>,
        dwcat: &mut [S],
        cache: &StepCache<S>,
        x: &[S],
        h_prev: &[S],
        c_prev: &[S],
        dh: &[S],
        dc_in: &[S],
        batch: usize,
        dx: &mut [S],
        dh_prev: &mut [S],
        dc_prev: &mut [S],
        p_buf: &mut Vec<S>,
        da_buf: &mut Vec<S>,
        dp_buf: &mut Vec<S>,
    ) {
        let m = self.plane();
        let cols = batch * m;
        let kh = self.hidden;
        let rows = self.patch_rows();
        da_buf.resize(4 * kh * cols, S::ZERO);

        let (wci, wcf, wco) =
            (self.w_peep[PEEP_I].data(), self.w_peep[PEEP_F].data(), self.w_peep[PEEP_O].data());
        for r in 0..kh {
            let mut db = [S::ZERO; 4];
            for s in 0..batch {
                for pos in 0..m {
                    let j = s * m + pos;
                    let idx = r * cols + j;
                    let peep = r * m + pos;
                    let (g, i, f, o, c) =
                        (cache.g[idx], cache.i[idx], cache.f[idx], cache.o[idx], cache.c[idx]);
                    let cp = c_prev[idx];
                    let tc = c.tanh();
                    let da_o = dh[idx] * tc * o * (S::ONE - o);
                    let dc = dh[idx] * o * (S::ONE - tc * tc) + dc_in[idx] + da_o * wco[peep];
                    let da_f = dc * cp * f * (S::ONE - f);
                    let da_i = dc * g * i * (S::ONE - i);
                    let da_g = dc * i * (S::ONE - g * g);
                    dc_prev[idx] = dc * f + da_i * wci[peep] + da_f * wcf[peep];

                    grads.w_peep[PEEP_O].data_mut()[peep] += da_o * c;
                    grads.w_peep[PEEP_I].data_mut()[peep] += da_i * cp;
                    grads.w_peep[PEEP_F].data_mut()[peep] += da_f * cp;
                    db[GATE_G] += da_g;
                    db[GATE_I] += da_i;
                    db[GATE_F] += da_f;
                    db[GATE_O] += da_o;

                    da_buf[(GATE_G * kh + r) * cols + j] = da_g;
                    da_buf[(GATE_I * kh + r) * cols + j] = da_i;
                    da_buf[(GATE_F * kh + r) * cols + j] = da_f;
                    da_buf[(GATE_O * kh + r) * cols + j] = da_o;
                }
            }
            for gate in 0..4 {
                grads.b[gate].data_mut()[r] += db[gate];
            }
        }

        p_buf.resize(rows * cols, S::ZERO);
        self.fill_patches(p_buf, x, h_prev, batch);
        gemm_nt(4 * kh, cols, rows, da_buf, p_buf, S::ONE, dwcat);

        dp_buf.resize(rows * cols, S::ZERO);
        gemm_tn(rows, 4 * kh, cols, wcat, da_buf, S::ZERO, dp_buf);
        dx.fill(S::ZERO);
        dh_prev.fill(S::ZERO);
        let rows_x = self.in_channels * self.kd();
        for s in 0..batch {
            col2im_add(dp_buf, cols, 0, s * m, dx, cols, s * m, self.in_channels, self.side, self.dim, self.kernel);
            col2im_add(dp_buf, cols, rows_x, s * m, dh_prev, cols, s * m, self.hidden, self.side, self.dim, self.kernel);
        }
    }
}

/// Single-sample cell step on plain tensors: X [C_in, n, ...],
/// H_prev/C_prev [K_h, n, ...]. Returns (H_t, C_t).
pub fn convlstm_cell_forward<S: Scalar>(
    params: &ConvLstmCell<S>,
    x: &Tensor<S>,
    h_prev: &Tensor<S>,
    c_prev: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>), NnError> {
    let m = params.plane();
    let mut state_shape = vec![params.hidden()];
    state_shape.extend(std::iter::repeat(params.side()).take(params.dim()));
    if x.shape().len() != params.dim() + 1
        || x.shape()[0] != params.in_channels()
        || x.len() != params.in_channels() * m
    {
        return Err(NnError::Shape(format!("cell input shape {:?} mismatch", x.shape())));
    }
    for (name, t) in [("H_prev", h_prev), ("C_prev", c_prev)] {
        if t.shape() != &state_shape[..] {
            return Err(NnError::Shape(format!("{name} shape {:?}, expected {state_shape:?}", t.shape())));
        }
    }
    let wcat = params.assemble_wcat();
    let mut h_out = Tensor::zeros(&state_shape);
    let mut p_buf = Vec::new();
    let mut a_buf = Vec::new();
    let cache = params.forward_step(
        &wcat,
        x.data(),
        h_prev.data(),
        c_prev.data(),
        1,
        &mut p_buf,
        &mut a_buf,
        h_out.data_mut(),
    );
    let c_out = Tensor::from_vec(&state_shape, cache.c)?;
    Ok((h_out, c_out))
}
