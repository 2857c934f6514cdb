//! The stacked ConvLSTM predictor: four cells feeding upward, a 1×1
//! sigmoid head on the top hidden state, teacher-forced training loss and
//! exact backpropagation through time.

use super::cell::{ConvLstmCell, StepCache};
use super::scalar::Scalar;
use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use super::NnError;
use crate::frames::{Clip, Frame};
use crate::util::RngSeed;
use serde::{Deserialize, Serialize};

/// Probability predictions are clamped to [EPS, 1-EPS] inside the loss.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    /// Predict every channel of the next frame.
    FullFrame,
    /// Predict only the robot state channels (ablation).
    ProbOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub side: usize,
    pub dim: usize,
    pub in_channels: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub layers: usize,
    pub output_mode: OutputMode,
}

impl NetConfig {
    pub fn robots(&self) -> usize {
        (self.in_channels - 1) / 2
    }

    pub fn out_channels(&self) -> usize {
        match self.output_mode {
            OutputMode::FullFrame => self.in_channels,
            OutputMode::ProbOnly => self.robots(),
        }
    }

    /// Frame channels each output channel is scored against.
    pub fn target_channels(&self) -> Vec<usize> {
        match self.output_mode {
            OutputMode::FullFrame => (0..self.in_channels).collect(),
            OutputMode::ProbOnly => (0..self.robots()).map(|i| 2 * i + 1).collect(),
        }
    }

    pub fn plane(&self) -> usize {
        self.side.pow(self.dim as u32)
    }

    fn validate(&self) -> Result<(), NnError> {
        if self.layers == 0 {
            return Err(NnError::Config("layer count must be >= 1".into()));
        }
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(NnError::Config(format!("kernel side must be odd, got {}", self.kernel)));
        }
        if self.dim != 2 && self.dim != 3 {
            return Err(NnError::Config(format!("dimensionality must be 2 or 3, got {}", self.dim)));
        }
        if self.in_channels == 0 {
            return Err(NnError::Config("frame channels must be >= 1".into()));
        }
        if self.output_mode == OutputMode::ProbOnly
            && (self.in_channels < 3 || self.in_channels % 2 == 0)
        {
            return Err(NnError::Config(format!(
                "prob-only output needs the planner frame layout (odd channels >= 3), got {}",
                self.in_channels
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<S: Scalar> {
    pub meta: NetConfig,
    pub cells: Vec<ConvLstmCell<S>>,
    /// Head kernel [C_out, K_h] (a 1×1 convolution) and bias [C_out].
    pub head_w: Tensor<S>,
    pub head_b: Tensor<S>,
}

impl<S: Scalar> NetworkParams<S> {
    pub fn init(meta: NetConfig, seed: RngSeed) -> Result<NetworkParams<S>, NnError> {
        meta.validate()?;
        let mut rng = seed.rng();
        let mut cells = Vec::with_capacity(meta.layers);
        for layer in 0..meta.layers {
            let cin = if layer == 0 { meta.in_channels } else { meta.hidden };
            cells.push(ConvLstmCell::init(cin, meta.hidden, meta.kernel, meta.side, meta.dim, &mut rng));
        }
        let scale = 1.0 / (meta.hidden as f64).sqrt();
        let head_w = Tensor::uniform(&[meta.out_channels(), meta.hidden], scale, &mut rng);
        let head_b = Tensor::zeros(&[meta.out_channels()]);
        Ok(NetworkParams { meta, cells, head_w, head_b })
    }

    pub fn zeros_like(&self) -> NetworkParams<S> {
        NetworkParams {
            meta: self.meta,
            cells: self
                .cells
                .iter()
                .map(|c| ConvLstmCell::zeros(c.in_channels(), c.hidden(), c.kernel(), c.side(), c.dim()))
                .collect(),
            head_w: self.head_w.zeros_like(),
            head_b: self.head_b.zeros_like(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> NetworkParams<T> {
        let mut out = NetworkParams::<T> {
            meta: self.meta,
            cells: self
                .cells
                .iter()
                .map(|c| ConvLstmCell::zeros(c.in_channels(), c.hidden(), c.kernel(), c.side(), c.dim()))
                .collect(),
            head_w: self.head_w.cast(),
            head_b: self.head_b.cast(),
        };
        for (dst, src) in out.cells.iter_mut().zip(&self.cells) {
            for ((_, d), (_, s)) in dst.named_tensors_mut().into_iter().zip(src.named_tensors()) {
                *d = s.cast();
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Every parameter tensor with a stable name and order: the fifteen
    /// per-cell tensors as `cells.{layer}.{role}`, then head.w / head.b.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (l, cell) in self.cells.iter().enumerate() {
            for (name, t) in cell.named_tensors() {
                out.push((format!("cells.{l}.{name}"), t));
            }
        }
        out.push(("head.w".to_string(), &self.head_w));
        out.push(("head.b".to_string(), &self.head_b));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out: Vec<(String, &mut Tensor<S>)> = Vec::new();
        for (l, cell) in self.cells.iter_mut().enumerate() {
            for (name, t) in cell.named_tensors_mut() {
                out.push((format!("cells.{l}.{name}"), t));
            }
        }
        out.push(("head.w".to_string(), &mut self.head_w));
        out.push(("head.b".to_string(), &mut self.head_b));
        out
    }
}

/// Recurrent state: one (H, C) pair per layer, each [K_h, n, ...].
#[derive(Clone, Debug, PartialEq)]
pub struct CellState<S: Scalar> {
    pub h: Vec<Tensor<S>>,
    pub c: Vec<Tensor<S>>,
}

impl<S: Scalar> CellState<S> {
    pub fn zeros(meta: &NetConfig) -> CellState<S> {
        let mut shape = vec![meta.hidden];
        shape.extend(std::iter::repeat(meta.side).take(meta.dim));
        CellState {
            h: (0..meta.layers).map(|_| Tensor::zeros(&shape)).collect(),
            c: (0..meta.layers).map(|_| Tensor::zeros(&shape)).collect(),
        }
    }
}

fn frame_matches<S: Scalar>(params: &NetworkParams<S>, frame: &Frame) -> Result<(), NnError> {
    let m = &params.meta;
    if frame.channels() != m.in_channels || frame.side() != m.side || frame.dim() != m.dim {
        return Err(NnError::Shape(format!(
            "frame ({}ch, n={}, d={}) does not match network ({}ch, n={}, d={})",
            frame.channels(),
            frame.side(),
            frame.dim(),
            m.in_channels,
            m.side,
            m.dim
        )));
    }
    Ok(())
}

/// Run the head on a top-layer hidden state: sigmoid(W·H + b).
fn head_forward<S: Scalar>(params: &NetworkParams<S>, h_top: &[S], cols: usize, out: &mut [S]) {
    let c_out = params.meta.out_channels();
    let kh = params.meta.hidden;
    gemm_nn(c_out, kh, cols, params.head_w.data(), h_top, S::ZERO, out);
    for c in 0..c_out {
        let b = params.head_b.data()[c];
        for v in &mut out[c * cols..(c + 1) * cols] {
            *v = (*v + b).sigmoid();
        }
    }
}

/// Feed frames through the stack (oldest first), carrying recurrent state,
/// and predict the next frame from the final hidden state. Incremental
/// calls with carried state are bitwise identical to reprocessing the full
/// clip from scratch.
pub fn network_forward<S: Scalar>(
    params: &NetworkParams<S>,
    frames: &[Frame],
    state: Option<CellState<S>>,
) -> Result<(Frame, CellState<S>), NnError> {
    let meta = &params.meta;
    if frames.is_empty() && state.is_none() {
        return Err(NnError::Shape("no frames and no carried state".into()));
    }
    for f in frames {
        frame_matches(params, f)?;
    }
    let mut state = state.unwrap_or_else(|| CellState::zeros(meta));
    if state.h.len() != meta.layers {
        return Err(NnError::Shape(format!(
            "carried state has {} layers, network has {}",
            state.h.len(),
            meta.layers
        )));
    }
    let m = meta.plane();
    let wcats: Vec<Vec<S>> = params.cells.iter().map(|c| c.assemble_wcat()).collect();
    let (mut p_buf, mut a_buf) = (Vec::new(), Vec::new());
    let mut x = vec![S::ZERO; meta.in_channels * m];
    for frame in frames {
        for (dst, src) in x.iter_mut().zip(frame.data()) {
            *dst = S::from_f32(*src);
        }
        let mut input: &[S] = &x;
        for (layer, cell) in params.cells.iter().enumerate() {
            let mut h_out = vec![S::ZERO; meta.hidden * m];
            let cache = cell.forward_step(
                &wcats[layer],
                input,
                state.h[layer].data(),
                state.c[layer].data(),
                1,
                &mut p_buf,
                &mut a_buf,
                &mut h_out,
            );
            state.c[layer].data_mut().copy_from_slice(&cache.c);
            state.h[layer].data_mut().copy_from_slice(&h_out);
            input = state.h[layer].data();
        }
    }
    let mut out = vec![S::ZERO; meta.out_channels() * m];
    head_forward(params, state.h[meta.layers - 1].data(), m, &mut out);
    let mut frame = Frame::zeros(meta.out_channels(), meta.side, meta.dim);
    for (dst, src) in frame.data_mut().iter_mut().zip(&out) {
        *dst = src.to_f32();
    }
    debug_assert!(frame.data().iter().all(|v| (0.0..=1.0).contains(v)));
    Ok((frame, state))
}

/// Everything the training backward pass needs from the forward rollout.
struct Rollout<S: Scalar> {
    /// Per-step network inputs [C_in, B·m], steps 0..T-1.
    xs: Vec<Vec<S>>,
    /// h[layer][t]: hidden output of `layer` after consuming input step t.
    h: Vec<Vec<Vec<S>>>,
    caches: Vec<Vec<StepCache<S>>>,
    /// preds[t] for scored steps t (input index), else None.
    preds: Vec<Option<Vec<S>>>,
    /// targets[t] aligned with preds.
    targets: Vec<Option<Vec<S>>>,
    loss: f64,
    batch: usize,
}

fn check_pairs<S: Scalar>(
    params: &NetworkParams<S>,
    pairs: &[(&Clip, &Clip)],
    j: usize,
) -> Result<usize, NnError> {
    if pairs.is_empty() {
        return Err(NnError::Shape("empty batch".into()));
    }
    let t_len = pairs[0].0.len();
    if j == 0 || j >= t_len {
        return Err(NnError::Config(format!("need 1 <= J < T, got J={j}, T={t_len}")));
    }
    for (input, target) in pairs {
        if input.len() != t_len || target.len() != t_len {
            return Err(NnError::Shape("all clips in a batch must share one length".into()));
        }
        for f in input.frames.iter().chain(&target.frames) {
            frame_matches(params, f)?;
        }
    }
    Ok(t_len)
}

fn rollout<S: Scalar>(
    params: &NetworkParams<S>,
    pairs: &[(&Clip, &Clip)],
    j: usize,
    keep: bool,
) -> Result<Rollout<S>, NnError> {
    let t_len = check_pairs(params, pairs, j)?;
    let meta = &params.meta;
    let batch = pairs.len();
    let m = meta.plane();
    let cols = batch * m;
    let steps = t_len - 1;
    let scored = t_len - j;
    let norm = (batch * scored * meta.out_channels() * m) as f64;

    // Channel-major batched inputs per step.
    let mut xs = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut x = vec![S::ZERO; meta.in_channels * cols];
        for (s, (input, _)) in pairs.iter().enumerate() {
            let frame = &input.frames[t];
            for c in 0..meta.in_channels {
                let dst = &mut x[c * cols + s * m..][..m];
                for (d, v) in dst.iter_mut().zip(frame.channel(c)) {
                    *d = S::from_f32(*v);
                }
            }
        }
        xs.push(x);
    }

    let wcats: Vec<Vec<S>> = params.cells.iter().map(|c| c.assemble_wcat()).collect();
    let mut h: Vec<Vec<Vec<S>>> = vec![Vec::with_capacity(steps); meta.layers];
    let mut caches: Vec<Vec<StepCache<S>>> = (0..meta.layers).map(|_| Vec::new()).collect();
    let (mut p_buf, mut a_buf) = (Vec::new(), Vec::new());
    let zero_state = vec![S::ZERO; meta.hidden * cols];
    let mut preds: Vec<Option<Vec<S>>> = vec![None; steps];
    let mut targets: Vec<Option<Vec<S>>> = vec![None; steps];
    let target_chans = meta.target_channels();
    let mut loss = 0.0f64;

    for t in 0..steps {
        let mut step_h: Vec<Vec<S>> = Vec::with_capacity(meta.layers);
        let mut step_caches: Vec<StepCache<S>> = Vec::with_capacity(meta.layers);
        for layer in 0..meta.layers {
            let input: &[S] = if layer == 0 { &xs[t] } else { &step_h[layer - 1] };
            let (h_prev, c_prev) = if t == 0 {
                (&zero_state[..], &zero_state[..])
            } else {
                (&h[layer][t - 1][..], &caches[layer][t - 1].c[..])
            };
            let mut h_out = vec![S::ZERO; meta.hidden * cols];
            let cache = params.cells[layer].forward_step(
                &wcats[layer],
                input,
                h_prev,
                c_prev,
                batch,
                &mut p_buf,
                &mut a_buf,
                &mut h_out,
            );
            step_h.push(h_out);
            step_caches.push(cache);
        }
        if t + 1 >= j {
            let mut pred = vec![S::ZERO; meta.out_channels() * cols];
            head_forward(params, step_h.last().unwrap(), cols, &mut pred);
            let mut target = vec![S::ZERO; meta.out_channels() * cols];
            for (s, (_, target_clip)) in pairs.iter().enumerate() {
                let frame = &target_clip.frames[t + 1];
                for (cc, &ch) in target_chans.iter().enumerate() {
                    let dst = &mut target[cc * cols + s * m..][..m];
                    for (d, v) in dst.iter_mut().zip(frame.channel(ch)) {
                        *d = S::from_f32(*v);
                    }
                }
            }
            for (p, tv) in pred.iter().zip(&target) {
                let pf = p.to_f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
                let tf = tv.to_f64();
                loss -= tf * pf.ln() + (1.0 - tf) * (1.0 - pf).ln();
            }
            preds[t] = Some(pred);
            targets[t] = Some(target);
        }
        for (layer, (hh, cc)) in step_h.into_iter().zip(step_caches).enumerate() {
            h[layer].push(hh);
            caches[layer].push(cc);
        }
        if !keep && t > 0 {
            // Only the previous step's state is needed for the next one.
            for layer in 0..meta.layers {
                h[layer][t - 1] = Vec::new();
                let c = std::mem::take(&mut caches[layer][t - 1].c);
                caches[layer][t - 1] =
                    StepCache { g: Vec::new(), i: Vec::new(), f: Vec::new(), o: Vec::new(), c };
            }
        }
    }
    Ok(Rollout { xs, h, caches, preds, targets, loss: loss / norm, batch })
}

/// Mean teacher-forced BCE over the scored steps of a batch: predictions
/// made after consuming input frames j-1 .. T-2 are scored against target
/// frames j .. T-1.
pub fn evaluate_loss<S: Scalar>(
    params: &NetworkParams<S>,
    pairs: &[(&Clip, &Clip)],
    j: usize,
) -> Result<f64, NnError> {
    Ok(rollout(params, pairs, j, false)?.loss)
}

/// Exact gradients of `evaluate_loss` for every parameter tensor,
/// backpropagated through time across all layers, peepholes included.
pub fn backward<S: Scalar>(
    params: &NetworkParams<S>,
    pairs: &[(&Clip, &Clip)],
    j: usize,
) -> Result<(f64, NetworkParams<S>), NnError> {
    let roll = rollout(params, pairs, j, true)?;
    let meta = &params.meta;
    let m = meta.plane();
    let batch = roll.batch;
    let cols = batch * m;
    let steps = roll.xs.len();
    let scored = steps + 1 - j;
    let norm = S::from_f64((batch * scored * meta.out_channels() * m) as f64);
    let kh = meta.hidden;
    let c_out = meta.out_channels();

    let mut grads = params.zeros_like();
    let wcats: Vec<Vec<S>> = params.cells.iter().map(|c| c.assemble_wcat()).collect();
    let mut dwcats: Vec<Vec<S>> = wcats.iter().map(|w| vec![S::ZERO; w.len()]).collect();

    let zero_state = vec![S::ZERO; kh * cols];
    let mut dh_rec: Vec<Vec<S>> = vec![vec![S::ZERO; kh * cols]; meta.layers];
    let mut dc_rec: Vec<Vec<S>> = vec![vec![S::ZERO; kh * cols]; meta.layers];
    let mut dh_total = vec![S::ZERO; kh * cols];
    let mut dh_prev = vec![S::ZERO; kh * cols];
    let mut dc_prev = vec![S::ZERO; kh * cols];
    let mut dz = vec![S::ZERO; c_out * cols];
    let mut dh_head = vec![S::ZERO; kh * cols];
    // dx per layer: layer 0 consumes the frame (its gradient is unused).
    let mut dx: Vec<Vec<S>> = params
        .cells
        .iter()
        .map(|c| vec![S::ZERO; c.in_channels() * cols])
        .collect();
    let (mut p_buf, mut da_buf, mut dp_buf) = (Vec::new(), Vec::new(), Vec::new());

    for t in (0..steps).rev() {
        let have_head = roll.preds[t].is_some();
        if have_head {
            let pred = roll.preds[t].as_ref().unwrap();
            let target = roll.targets[t].as_ref().unwrap();
            for ((d, p), tv) in dz.iter_mut().zip(pred).zip(target) {
                *d = (*p - *tv) / norm;
            }
            let h_top = &roll.h[meta.layers - 1][t];
            gemm_nt(c_out, cols, kh, &dz, h_top, S::ONE, grads.head_w.data_mut());
            for c in 0..c_out {
                let mut s = S::ZERO;
                for &v in &dz[c * cols..(c + 1) * cols] {
                    s += v;
                }
                grads.head_b.data_mut()[c] += s;
            }
            gemm_tn(kh, c_out, cols, params.head_w.data(), &dz, S::ZERO, &mut dh_head);
        }

        for layer in (0..meta.layers).rev() {
            let from_above: &[S] = if layer == meta.layers - 1 {
                if have_head {
                    &dh_head
                } else {
                    &zero_state
                }
            } else {
                &dx[layer + 1]
            };
            for ((d, a), r) in dh_total.iter_mut().zip(from_above).zip(&dh_rec[layer]) {
                *d = *a + *r;
            }
            let x_in: &[S] = if layer == 0 { &roll.xs[t] } else { &roll.h[layer - 1][t] };
            let (h_prev, c_prev) = if t == 0 {
                (&zero_state[..], &zero_state[..])
            } else {
                (&roll.h[layer][t - 1][..], &roll.caches[layer][t - 1].c[..])
            };
            let mut dx_layer = std::mem::take(&mut dx[layer]);
            params.cells[layer].backward_step(
                &wcats[layer],
                &mut grads.cells[layer],
                &mut dwcats[layer],
                &roll.caches[layer][t],
                x_in,
                h_prev,
                c_prev,
                &dh_total,
                &dc_rec[layer],
                batch,
                &mut dx_layer,
                &mut dh_prev,
                &mut dc_prev,
                &mut p_buf,
                &mut da_buf,
                &mut dp_buf,
            );
            dx[layer] = dx_layer;
            std::mem::swap(&mut dh_rec[layer], &mut dh_prev);
            std::mem::swap(&mut dc_rec[layer], &mut dc_prev);
        }
    }
    for (cell, dw) in grads.cells.iter_mut().zip(&dwcats) {
        cell.accumulate_dwcat(dw);
    }
    Ok((roll.loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{encode_initial_frame, path_to_clip, PatchSpec};
    use crate::grid::{Cell, OccupancyGrid, Path};

    fn tiny_meta() -> NetConfig {
        NetConfig {
            side: 6,
            dim: 2,
            in_channels: 3,
            hidden: 4,
            kernel: 3,
            layers: 4,
            output_mode: OutputMode::FullFrame,
        }
    }

    fn tiny_clip(side: usize, len: usize) -> Clip {
        let g = OccupancyGrid::new_free(side, 2).unwrap();
        let cells: Vec<Cell> = (0..len).map(|t| Cell::new2(0, t as i32 % side as i32)).collect();
        let goal = *cells.last().unwrap();
        path_to_clip(&g, &[Path::new(cells)], &[goal], PatchSpec::new(3).unwrap()).unwrap()
    }

    #[test]
    fn zero_params_predict_half() {
        let meta = tiny_meta();
        let params = NetworkParams::<f32>::init(meta, RngSeed(0)).unwrap();
        let zeroed = params.zeros_like();
        let g = OccupancyGrid::new_free(6, 2).unwrap();
        let f = encode_initial_frame(&g, &[Cell::new2(0, 0)], &[Cell::new2(5, 5)], PatchSpec::new(3).unwrap())
            .unwrap();
        let (pred, _) = network_forward(&zeroed, &[f], None).unwrap();
        assert_eq!(pred.channels(), 3);
        assert!(pred.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn prediction_shape_matches_input() {
        let meta = tiny_meta();
        let params = NetworkParams::<f32>::init(meta, RngSeed(1)).unwrap();
        let clip = tiny_clip(6, 4);
        let (pred, _) = network_forward(&params, &clip.frames, None).unwrap();
        assert_eq!(
            (pred.channels(), pred.side(), pred.dim()),
            (clip.channels(), clip.side(), clip.dim())
        );
    }

    #[test]
    fn incremental_equals_full_reprocess() {
        let meta = tiny_meta();
        let params = NetworkParams::<f32>::init(meta, RngSeed(2)).unwrap();
        let clip = tiny_clip(6, 6);
        let (full, full_state) = network_forward(&params, &clip.frames, None).unwrap();
        let mut state = None;
        let mut last = None;
        for f in &clip.frames {
            let (pred, s) = network_forward(&params, std::slice::from_ref(f), state).unwrap();
            state = Some(s);
            last = Some(pred);
        }
        let state = state.unwrap();
        assert_eq!(last.unwrap().data(), full.data());
        for l in 0..meta.layers {
            assert_eq!(state.h[l], full_state.h[l]);
            assert_eq!(state.c[l], full_state.c[l]);
        }
    }

    #[test]
    fn prob_only_output_width() {
        let mut meta = tiny_meta();
        meta.output_mode = OutputMode::ProbOnly;
        assert_eq!(meta.out_channels(), 1);
        assert_eq!(meta.target_channels(), vec![1]);
        let params = NetworkParams::<f32>::init(meta, RngSeed(3)).unwrap();
        let clip = tiny_clip(6, 3);
        let (pred, _) = network_forward(&params, &clip.frames, None).unwrap();
        assert_eq!(pred.channels(), 1);
    }

    #[test]
    fn network_param_count() {
        let meta = tiny_meta();
        let params = NetworkParams::<f32>::init(meta, RngSeed(4)).unwrap();
        let per_cell = |cin: usize| 4 * 9 * cin * 4 + 4 * 9 * 4 * 4 + 3 * 4 * 36 + 4 * 4;
        let expect = per_cell(3) + 3 * per_cell(4) + 3 * 4 + 3;
        assert_eq!(params.param_count(), expect);
    }

    #[test]
    fn head_bias_gradient_is_scaled_mean_residual() {
        let meta = tiny_meta();
        let params = NetworkParams::<f64>::init(meta, RngSeed(5)).unwrap();
        let clip = tiny_clip(6, 4);
        let j = 2;
        let (_, grads) = backward(&params, &[(&clip, &clip)], j).unwrap();

        // Average the scored-step residuals in full f64; rounding the
        // predictions through a Frame (f32) would swamp a 1e-9 tolerance.
        let m = meta.plane();
        let c_count = meta.in_channels;
        let roll = rollout(&params, &[(&clip, &clip)], j, false).unwrap();
        let mut residual_sum = vec![0.0f64; c_count];
        let mut n_terms = 0usize;
        for (pred, target) in roll.preds.iter().zip(&roll.targets) {
            let (Some(pred), Some(target)) = (pred, target) else { continue };
            n_terms += 1;
            for c in 0..c_count {
                for (p, tv) in pred[c * m..(c + 1) * m].iter().zip(&target[c * m..(c + 1) * m]) {
                    residual_sum[c] += *p - *tv;
                }
            }
        }
        for c in 0..c_count {
            let mean = residual_sum[c] / (n_terms * m) as f64;
            // Mean over the channel's cells and steps, divided by the
            // channel count because the loss averages across channels too.
            let want = mean / c_count as f64;
            let got = grads.head_b.data()[c];
            assert!(
                (got - want).abs() < 1e-9,
                "channel {c}: grad {got} vs mean residual {want}"
            );
        }
    }

    #[test]
    fn prob_only_single_channel_head_bias_exact() {
        let mut meta = tiny_meta();
        meta.output_mode = OutputMode::ProbOnly;
        let params = NetworkParams::<f64>::init(meta, RngSeed(6)).unwrap();
        let clip = tiny_clip(6, 4);
        let j = 2;
        let (_, grads) = backward(&params, &[(&clip, &clip)], j).unwrap();
        let m = meta.plane();
        let roll = rollout(&params, &[(&clip, &clip)], j, false).unwrap();
        let mut residual_sum = 0.0f64;
        let mut n_terms = 0usize;
        for (pred, target) in roll.preds.iter().zip(&roll.targets) {
            let (Some(pred), Some(target)) = (pred, target) else { continue };
            n_terms += 1;
            for (p, tv) in pred.iter().zip(target) {
                residual_sum += *p - *tv;
            }
        }
        // With one output channel the gradient IS the mean residual.
        let want = residual_sum / (n_terms * m) as f64;
        assert!((grads.head_b.data()[0] - want).abs() < 1e-9);
    }

    #[test]
    fn gradients_vanish_when_prediction_is_target() {
        let meta = tiny_meta();
        let params = NetworkParams::<f64>::init(meta, RngSeed(7)).unwrap();
        let clip = tiny_clip(6, 4);
        let j = 2;
        // Build a target clip whose scored frames equal the model's own
        // predictions, so every residual is exactly zero.
        let mut target = clip.clone();
        let mut state: Option<CellState<f64>> = None;
        for t in 0..clip.len() - 1 {
            let (pred, s) = network_forward(&params, std::slice::from_ref(&clip.frames[t]), state).unwrap();
            state = Some(s);
            if t + 1 >= j {
                target.frames[t + 1] = pred;
            }
        }
        let (_, grads) = backward(&params, &[(&clip, &target)], j).unwrap();
        // Targets round-trip through a Frame (f32), so residuals are not
        // bitwise zero; 1e-6 bounds the f32 rounding leaking into gradients.
        for (name, t) in grads.named_tensors() {
            for &v in t.data() {
                assert!(v.abs() <= 1e-6, "{name} has nonzero gradient {v}");
            }
        }
    }

    /// Spot finite-difference check; the acceptance suite runs the full
    /// sampled sweep over all parameter roles.
    #[test]
    fn backward_matches_finite_differences_spot() {
        let mut meta = tiny_meta();
        meta.layers = 2;
        let params = NetworkParams::<f64>::init(meta, RngSeed(8)).unwrap();
        let clip = tiny_clip(6, 3);
        let j = 1;
        let pairs = [(&clip, &clip)];
        let (_, grads) = backward(&params, &pairs, j).unwrap();
        let names: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        let h = 1e-5;
        let mut rng = RngSeed(9).rng();
        for name in names.iter().step_by(3) {
            let len = params
                .named_tensors()
                .iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
                .len();
            let idx = rand::Rng::random_range(&mut rng, 0..len);
            let mut plus = params.clone();
            let mut minus = params.clone();
            for (n, t) in plus.named_tensors_mut() {
                if &n == name {
                    t.data_mut()[idx] += h;
                }
            }
            for (n, t) in minus.named_tensors_mut() {
                if &n == name {
                    t.data_mut()[idx] -= h;
                }
            }
            let fp = evaluate_loss(&plus, &pairs, j).unwrap();
            let fm = evaluate_loss(&minus, &pairs, j).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let got = grads
                .named_tensors()
                .iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
                .data()[idx];
            // Floor the denominator: with loss ~O(1) and h=1e-5, central
            // differences carry ~1e-10 of cancellation noise, so gradients
            // below ~1e-6 cannot be resolved to 1e-4 relative.
            let denom = fd.abs().max(got.abs()).max(1e-6);
            assert!(
                (fd - got).abs() / denom < 1e-4,
                "{name}[{idx}]: fd {fd} vs analytic {got}"
            );
        }
    }
}
