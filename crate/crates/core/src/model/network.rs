//! Forward and backward passes for one sample.
//!
//! Shapes: `E` embedding width, `H` hidden width (per encoder direction, and
//! of the decoder and attention), `K = 2H` encoder state width.

use super::params::Params;
use super::{EncoderOutput, ModelConfig};
use crate::corpus::{BOS, EOS};
use crate::linalg::{
    axpy, dot, gemm, matvec_acc, matvec_t_acc, outer_acc, sigmoid, softmax_in_place, Matrix, View,
};

/// Activations of one LSTM direction, rows in processing order.
struct LstmTrace {
    /// `[x_t ; h_{t-1}]` per step.
    inputs: Matrix,
    /// Gate activations `i f g o` per step.
    gates: Matrix,
    cells: Matrix,
    hidden: Matrix,
    tanh_cells: Matrix,
}

/// Applies the gate nonlinearities to `pre` (length 4n) and advances the
/// state; writes gates, new cell, tanh(cell) and new hidden.
#[inline]
fn lstm_pointwise(
    pre: &[f64],
    c_prev: &[f64],
    gates: &mut [f64],
    c: &mut [f64],
    tc: &mut [f64],
    h: &mut [f64],
) {
    let n = c.len();
    for j in 0..n {
        let i = sigmoid(pre[j]);
        let f = sigmoid(pre[n + j]);
        let g = pre[2 * n + j].tanh();
        let o = sigmoid(pre[3 * n + j]);
        gates[j] = i;
        gates[n + j] = f;
        gates[2 * n + j] = g;
        gates[3 * n + j] = o;
        c[j] = f * c_prev[j] + i * g;
        tc[j] = c[j].tanh();
        h[j] = o * tc[j];
    }
}

/// Backward through the pointwise part of one step. `dc` holds the gradient
/// reaching the new cell (from the future) and is replaced by the gradient
/// for the previous cell; `dpre` receives the pre-activation gradient.
#[inline]
fn lstm_pointwise_backward(
    gates: &[f64],
    c_prev: &[f64],
    tc: &[f64],
    dh: &[f64],
    dc: &mut [f64],
    dpre: &mut [f64],
) {
    let n = dc.len();
    for j in 0..n {
        let (i, f, g, o) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
        let d_o = dh[j] * tc[j];
        let dcj = dc[j] + dh[j] * o * (1.0 - tc[j] * tc[j]);
        dpre[j] = dcj * g * i * (1.0 - i);
        dpre[n + j] = dcj * c_prev[j] * f * (1.0 - f);
        dpre[2 * n + j] = dcj * i * (1.0 - g * g);
        dpre[3 * n + j] = d_o * o * (1.0 - o);
        dc[j] = dcj * f;
    }
}

fn lstm_forward(w: &Matrix, b: &Matrix, xs: &Matrix) -> LstmTrace {
    let steps = xs.rows;
    let e = xs.cols;
    let n = b.cols / 4;
    let mut pre = Matrix::zeros(steps, 4 * n);
    gemm(1.0, xs.view(), w.cols_view(0, e).t(), 0.0, pre.view_mut());
    let mut trace = LstmTrace {
        inputs: Matrix::zeros(steps, e + n),
        gates: Matrix::zeros(steps, 4 * n),
        cells: Matrix::zeros(steps, n),
        hidden: Matrix::zeros(steps, n),
        tanh_cells: Matrix::zeros(steps, n),
    };
    let zero = vec![0.0; n];
    for t in 0..steps {
        let (h_prev, c_prev) = if t == 0 {
            (zero.clone(), zero.clone())
        } else {
            (trace.hidden.row(t - 1).to_vec(), trace.cells.row(t - 1).to_vec())
        };
        let p = pre.row_mut(t);
        axpy(1.0, &b.data, p);
        matvec_acc(&w.data, w.cols, e, &h_prev, p);
        let row = trace.inputs.row_mut(t);
        row[..e].copy_from_slice(xs.row(t));
        row[e..].copy_from_slice(&h_prev);
        let (g, c, tc, h) = (
            &mut trace.gates.data[t * 4 * n..(t + 1) * 4 * n],
            &mut trace.cells.data[t * n..(t + 1) * n],
            &mut trace.tanh_cells.data[t * n..(t + 1) * n],
            &mut trace.hidden.data[t * n..(t + 1) * n],
        );
        lstm_pointwise(pre.row(t), &c_prev, g, c, tc, h);
    }
    trace
}

/// Backward through a whole direction. `dh_ext` (steps × n) carries the
/// gradient reaching each hidden output from above; `dc_last` that reaching
/// the final cell. Accumulates weight gradients and returns the gradient
/// for the inputs `x_t` (steps × e).
fn lstm_backward(
    w: &Matrix,
    trace: &LstmTrace,
    dh_ext: &Matrix,
    dc_last: &[f64],
    dw: &mut Matrix,
    db: &mut Matrix,
) -> Matrix {
    let steps = trace.hidden.rows;
    let n = trace.hidden.cols;
    let e = trace.inputs.cols - n;
    let mut dpre = Matrix::zeros(steps, 4 * n);
    let mut dh_next = vec![0.0; n];
    let mut dc = dc_last.to_vec();
    let zero = vec![0.0; n];
    let mut dh = vec![0.0; n];
    for t in (0..steps).rev() {
        for j in 0..n {
            dh[j] = dh_ext[(t, j)] + dh_next[j];
        }
        let c_prev = if t == 0 { &zero[..] } else { trace.cells.row(t - 1) };
        lstm_pointwise_backward(
            trace.gates.row(t),
            c_prev,
            trace.tanh_cells.row(t),
            &dh,
            &mut dc,
            dpre.row_mut(t),
        );
        dh_next.iter_mut().for_each(|x| *x = 0.0);
        if t > 0 {
            matvec_t_acc(&w.data, w.cols, e, dpre.row(t), &mut dh_next);
        }
    }
    gemm(1.0, dpre.view().t(), trace.inputs.view(), 1.0, dw.view_mut());
    for t in 0..steps {
        axpy(1.0, dpre.row(t), &mut db.data);
    }
    let mut dx = Matrix::zeros(steps, e);
    gemm(1.0, dpre.view(), w.cols_view(0, e), 0.0, dx.view_mut());
    dx
}

/// Encoder activations shared by training and decoding.
pub(crate) struct Encoding {
    fwd: LstmTrace,
    bwd: LstmTrace,
    /// Encoder states `[h_fwd ; h_bwd]` per input position (T × K).
    pub states: Matrix,
    /// Attention keys `U_k · state` per position (T × H).
    keys: Matrix,
    /// Final states `[h_fwd ; h_bwd ; c_fwd ; c_bwd]`, or the hidden half.
    pub output: Vec<f64>,
    /// `tanh(W_b · output + b_b)`: the decoder's initial hidden state
    /// followed by its initial cell.
    init: Vec<f64>,
}

impl Encoding {
    fn initial_state(&self) -> (Vec<f64>, Vec<f64>) {
        let (s, c) = self.init.split_at(self.init.len() / 2);
        (s.to_vec(), c.to_vec())
    }
}

pub(crate) fn encode(p: &Params, config: &ModelConfig, input: &[usize]) -> Encoding {
    let steps = input.len();
    let e = config.embed_dim;
    let h = config.hidden_dim;
    let mut xs = Matrix::zeros(steps, e);
    let mut xs_rev = Matrix::zeros(steps, e);
    for (t, &tok) in input.iter().enumerate() {
        xs.row_mut(t).copy_from_slice(p.src_embed.row(tok));
        xs_rev.row_mut(steps - 1 - t).copy_from_slice(p.src_embed.row(tok));
    }
    let fwd = lstm_forward(&p.enc_fwd_w, &p.enc_fwd_b, &xs);
    let bwd = lstm_forward(&p.enc_bwd_w, &p.enc_bwd_b, &xs_rev);
    let mut states = Matrix::zeros(steps, 2 * h);
    for t in 0..steps {
        let row = states.row_mut(t);
        row[..h].copy_from_slice(fwd.hidden.row(t));
        row[h..].copy_from_slice(bwd.hidden.row(steps - 1 - t));
    }
    let mut keys = Matrix::zeros(steps, h);
    gemm(1.0, states.view(), p.att_key.view().t(), 0.0, keys.view_mut());
    let last = steps - 1;
    let mut output = Vec::with_capacity(config.encoder_output_dim());
    output.extend_from_slice(fwd.hidden.row(last));
    output.extend_from_slice(bwd.hidden.row(last));
    if config.encoder_output == EncoderOutput::HiddenAndCell {
        output.extend_from_slice(fwd.cells.row(last));
        output.extend_from_slice(bwd.cells.row(last));
    }
    let mut init = p.bridge_b.data.clone();
    matvec_acc(&p.bridge_w.data, p.bridge_w.cols, 0, &output, &mut init);
    init.iter_mut().for_each(|x| *x = x.tanh());
    Encoding {
        fwd,
        bwd,
        states,
        keys,
        output,
        init,
    }
}

/// One decoder step's activations.
pub(crate) struct DecoderStep {
    /// `tanh(q + K_t)` per position (T × H).
    att_hidden: Matrix,
    pub attention: Vec<f64>,
    pub context: Vec<f64>,
    /// `[emb(prev) ; context ; s_prev]`.
    input: Vec<f64>,
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    pub cell: Vec<f64>,
    tanh_cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

pub(crate) fn decoder_step(
    p: &Params,
    config: &ModelConfig,
    enc: &Encoding,
    prev_token: usize,
    s_prev: &[f64],
    c_prev: &[f64],
) -> DecoderStep {
    let h = config.hidden_dim;
    let e = config.embed_dim;
    let k = 2 * h;
    let steps = enc.states.rows;
    let mut q = p.att_bias.data.clone();
    matvec_acc(&p.att_query.data, h, 0, s_prev, &mut q);
    let mut att_hidden = Matrix::zeros(steps, h);
    let mut attention = vec![0.0; steps];
    for t in 0..steps {
        let u = att_hidden.row_mut(t);
        for ((ui, &qi), &ki) in u.iter_mut().zip(&q).zip(enc.keys.row(t)) {
            *ui = (qi + ki).tanh();
        }
        attention[t] = dot(u, &p.att_score.data);
    }
    softmax_in_place(&mut attention);
    let mut context = vec![0.0; k];
    for (t, &a) in attention.iter().enumerate() {
        axpy(a, enc.states.row(t), &mut context);
    }
    let mut input = Vec::with_capacity(e + k + h);
    input.extend_from_slice(p.tgt_embed.row(prev_token));
    input.extend_from_slice(&context);
    input.extend_from_slice(s_prev);
    let mut pre = p.dec_b.data.clone();
    matvec_acc(&p.dec_w.data, p.dec_w.cols, 0, &input, &mut pre);
    let mut step = DecoderStep {
        att_hidden,
        attention,
        context,
        input,
        gates: vec![0.0; 4 * h],
        c_prev: c_prev.to_vec(),
        cell: vec![0.0; h],
        tanh_cell: vec![0.0; h],
        hidden: vec![0.0; h],
    };
    lstm_pointwise(
        &pre,
        c_prev,
        &mut step.gates,
        &mut step.cell,
        &mut step.tanh_cell,
        &mut step.hidden,
    );
    step
}

fn logits_for(p: &Params, step: &DecoderStep) -> Vec<f64> {
    let mut logits = p.out_b.data.clone();
    let hd = step.hidden.len();
    matvec_acc(&p.out_w.data, p.out_w.cols, 0, &step.hidden, &mut logits);
    matvec_acc(&p.out_w.data, p.out_w.cols, hd, &step.context, &mut logits);
    logits
}

/// Teacher-forced loss minus the constant `ln V`.
///
/// For moderate logits, `logsumexp(z) − ln V = ln1p(mean(expm1(z)))`, which
/// keeps rounding at the scale of the logits instead of the scale of `ln V`.
/// Central differences of this quantity resolve far smaller gradients than
/// differences of the plain loss.
pub(crate) fn shifted_loss(p: &Params, config: &ModelConfig, input: &[usize], target: &[usize]) -> f64 {
    let enc = encode(p, config, input);
    let m = target.len() - 1;
    let (mut s, mut c) = enc.initial_state();
    let mut total = 0.0;
    for j in 0..m {
        let step = decoder_step(p, config, &enc, target[j], &s, &c);
        let z = logits_for(p, &step);
        let largest = z.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let lse = if largest < 30.0 {
            (z.iter().map(|x| x.exp_m1()).sum::<f64>() / z.len() as f64).ln_1p()
        } else {
            let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|x| (x - top).exp()).sum();
            top + sum.ln() - (z.len() as f64).ln()
        };
        total += lse - z[target[j + 1]];
        s.clone_from(&step.hidden);
        c.clone_from(&step.cell);
    }
    total / m as f64
}

/// Result of a teacher-forced pass.
pub(crate) struct Trace {
    pub enc: Encoding,
    pub steps: Vec<DecoderStep>,
    /// Softmax outputs per step (m × V_out).
    pub probs: Matrix,
    pub loss: f64,
}

/// Teacher-forced pass over `target = BOS y.. EOS`; the loss is the mean
/// per-step cross-entropy.
pub(crate) fn forward(p: &Params, config: &ModelConfig, input: &[usize], target: &[usize]) -> Trace {
    let enc = encode(p, config, input);
    let h = config.hidden_dim;
    let m = target.len() - 1;
    let mut steps = Vec::with_capacity(m);
    let (mut s, mut c) = enc.initial_state();
    for j in 0..m {
        let step = decoder_step(p, config, &enc, target[j], &s, &c);
        s.clone_from(&step.hidden);
        c.clone_from(&step.cell);
        steps.push(step);
    }
    let k = 2 * h;
    let mut out_in = Matrix::zeros(m, h + k);
    for (j, st) in steps.iter().enumerate() {
        let row = out_in.row_mut(j);
        row[..h].copy_from_slice(&st.hidden);
        row[h..].copy_from_slice(&st.context);
    }
    let vocab = config.output_vocab;
    let mut probs = Matrix::zeros(m, vocab);
    gemm(1.0, out_in.view(), p.out_w.view().t(), 0.0, probs.view_mut());
    let mut loss = 0.0;
    for j in 0..m {
        let row = probs.row_mut(j);
        axpy(1.0, &p.out_b.data, row);
        softmax_in_place(row);
        loss -= row[target[j + 1]].max(f64::MIN_POSITIVE).ln();
    }
    Trace {
        enc,
        steps,
        probs,
        loss: loss / m as f64,
    }
}

/// Backpropagates `scale · loss` of `trace` into `grads`.
pub(crate) fn backward(
    p: &Params,
    config: &ModelConfig,
    input: &[usize],
    target: &[usize],
    trace: &Trace,
    scale: f64,
    grads: &mut Params,
) {
    let h = config.hidden_dim;
    let e = config.embed_dim;
    let k = 2 * h;
    let m = trace.steps.len();
    let steps_in = input.len();

    // output projection
    let mut dlogits = trace.probs.clone();
    for j in 0..m {
        dlogits[(j, target[j + 1])] -= 1.0;
    }
    dlogits.data.iter_mut().for_each(|x| *x *= scale / m as f64);
    let mut out_in = Matrix::zeros(m, h + k);
    for (j, st) in trace.steps.iter().enumerate() {
        let row = out_in.row_mut(j);
        row[..h].copy_from_slice(&st.hidden);
        row[h..].copy_from_slice(&st.context);
    }
    gemm(1.0, dlogits.view().t(), out_in.view(), 1.0, grads.out_w.view_mut());
    for j in 0..m {
        axpy(1.0, dlogits.row(j), &mut grads.out_b.data);
    }
    let mut d_out_in = Matrix::zeros(m, h + k);
    gemm(1.0, dlogits.view(), p.out_w.view(), 0.0, d_out_in.view_mut());

    // decoder, newest step first
    let mut d_states = Matrix::zeros(steps_in, k);
    let mut d_keys = Matrix::zeros(steps_in, h);
    let mut d_dec_pre = Matrix::zeros(m, 4 * h);
    let mut d_dec_in = Matrix::zeros(m, e + k + h);
    let mut ds_next = vec![0.0; h];
    let mut dc = vec![0.0; h];
    let mut d_att_pre = vec![0.0; h];
    for j in (0..m).rev() {
        let st = &trace.steps[j];
        let ds: Vec<f64> = d_out_in.row(j)[..h]
            .iter()
            .zip(&ds_next)
            .map(|(a, b)| a + b)
            .collect();
        lstm_pointwise_backward(
            &st.gates,
            &st.c_prev,
            &st.tanh_cell,
            &ds,
            &mut dc,
            d_dec_pre.row_mut(j),
        );
        let d_in = d_dec_in.row_mut(j);
        matvec_t_acc(&p.dec_w.data, p.dec_w.cols, 0, d_dec_pre.row(j), d_in);
        let d_in = d_dec_in.row(j);
        axpy(1.0, &d_in[..e], grads.tgt_embed.row_mut(target[j]));
        let mut dctx = d_out_in.row(j)[h..].to_vec();
        axpy(1.0, &d_in[e..e + k], &mut dctx);
        let s_prev = &st.input[e + k..];
        ds_next.copy_from_slice(&d_in[e + k..]);

        // context = Σ α_t state_t
        let mut dalpha = vec![0.0; steps_in];
        for t in 0..steps_in {
            axpy(st.attention[t], &dctx, d_states.row_mut(t));
            dalpha[t] = dot(&dctx, trace.enc.states.row(t));
        }
        let mean = dot(&dalpha, &st.attention);
        let mut dq = vec![0.0; h];
        for t in 0..steps_in {
            let dscore = st.attention[t] * (dalpha[t] - mean);
            if dscore == 0.0 {
                continue;
            }
            let u = st.att_hidden.row(t);
            axpy(dscore, u, &mut grads.att_score.data);
            for i in 0..h {
                d_att_pre[i] = dscore * p.att_score.data[i] * (1.0 - u[i] * u[i]);
            }
            axpy(1.0, &d_att_pre, &mut dq);
            axpy(1.0, &d_att_pre, d_keys.row_mut(t));
        }
        outer_acc(&mut grads.att_query.data, h, 0, &dq, s_prev);
        axpy(1.0, &dq, &mut grads.att_bias.data);
        matvec_t_acc(&p.att_query.data, h, 0, &dq, &mut ds_next);
    }
    gemm(1.0, d_dec_pre.view().t(), View::row_major(&flatten_inputs(&trace.steps), m, e + k + h), 1.0, grads.dec_w.view_mut());
    for j in 0..m {
        axpy(1.0, d_dec_pre.row(j), &mut grads.dec_b.data);
    }

    // bridge: [s_0 ; c_0] = tanh(W_b z + b_b)
    let d_bridge: Vec<f64> = ds_next
        .iter()
        .chain(&dc)
        .zip(&trace.enc.init)
        .map(|(d, s)| d * (1.0 - s * s))
        .collect();
    let z = &trace.enc.output;
    outer_acc(&mut grads.bridge_w.data, z.len(), 0, &d_bridge, z);
    axpy(1.0, &d_bridge, &mut grads.bridge_b.data);
    let mut dz = vec![0.0; z.len()];
    matvec_t_acc(&p.bridge_w.data, z.len(), 0, &d_bridge, &mut dz);

    // keys = states · U_kᵀ
    gemm(1.0, d_keys.view().t(), trace.enc.states.view(), 1.0, grads.att_key.view_mut());
    gemm(1.0, d_keys.view(), p.att_key.view(), 1.0, d_states.view_mut());

    // encoder directions
    let last = steps_in - 1;
    let mut dh_fwd = Matrix::zeros(steps_in, h);
    let mut dh_bwd = Matrix::zeros(steps_in, h);
    for t in 0..steps_in {
        let row = d_states.row(t);
        dh_fwd.row_mut(t).copy_from_slice(&row[..h]);
        dh_bwd.row_mut(last - t).copy_from_slice(&row[h..]);
    }
    axpy(1.0, &dz[..h], dh_fwd.row_mut(last));
    axpy(1.0, &dz[h..2 * h], dh_bwd.row_mut(last));
    let (dc_fwd, dc_bwd) = if config.encoder_output == EncoderOutput::HiddenAndCell {
        (dz[2 * h..3 * h].to_vec(), dz[3 * h..].to_vec())
    } else {
        (vec![0.0; h], vec![0.0; h])
    };
    let dx_fwd = lstm_backward(
        &p.enc_fwd_w,
        &trace.enc.fwd,
        &dh_fwd,
        &dc_fwd,
        &mut grads.enc_fwd_w,
        &mut grads.enc_fwd_b,
    );
    let dx_bwd = lstm_backward(
        &p.enc_bwd_w,
        &trace.enc.bwd,
        &dh_bwd,
        &dc_bwd,
        &mut grads.enc_bwd_w,
        &mut grads.enc_bwd_b,
    );
    for (t, &tok) in input.iter().enumerate() {
        let g = grads.src_embed.row_mut(tok);
        axpy(1.0, dx_fwd.row(t), g);
        axpy(1.0, dx_bwd.row(last - t), g);
    }
}

fn flatten_inputs(steps: &[DecoderStep]) -> Vec<f64> {
    steps.iter().flat_map(|s| s.input.iter().copied()).collect()
}

/// Greedy decoding result with its per-step activations.
pub(crate) struct Decoded {
    pub enc: Encoding,
    /// Emitted tokens, EOS included if it was reached.
    pub tokens: Vec<usize>,
    pub steps: Vec<DecoderStep>,
    /// Probability of each emitted token.
    #[cfg_attr(not(test), allow(dead_code))]
    pub chosen_probs: Vec<f64>,
}

/// Greedy decoding from BOS until EOS or `max_decode_len` steps. Ties in the
/// argmax go to the lowest index.
pub(crate) fn greedy(p: &Params, config: &ModelConfig, input: &[usize]) -> Decoded {
    let enc = encode(p, config, input);
    let (mut s, mut c) = enc.initial_state();
    let mut prev = BOS;
    let mut tokens = Vec::new();
    let mut steps = Vec::new();
    let mut chosen_probs = Vec::new();
    for _ in 0..config.max_decode_len {
        let step = decoder_step(p, config, &enc, prev, &s, &c);
        let mut probs = logits_for(p, &step);
        softmax_in_place(&mut probs);
        let mut best = 0;
        for (i, &v) in probs.iter().enumerate() {
            if v > probs[best] {
                best = i;
            }
        }
        s.clone_from(&step.hidden);
        c.clone_from(&step.cell);
        steps.push(step);
        tokens.push(best);
        chosen_probs.push(probs[best]);
        if best == EOS {
            break;
        }
        prev = best;
    }
    Decoded {
        enc,
        tokens,
        steps,
        chosen_probs,
    }
}
