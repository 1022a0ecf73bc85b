//! LSTM cell and bidirectional sequence encoder.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{param_rng, uniform_tensor, ParamId, ParamStore, Tensor};

pub const INIT_BOUND: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

/// Stacked gate weights in the order input, forget, output, candidate:
/// `w: [4h, in]`, `u: [4h, h]`, `b: [4h]`.
///
/// An optional `w_ctx: [4h, context]` holds the input columns that read a
/// vector appended to every step's input. Since that vector is constant over
/// the sequence, its projection is folded into the bias once per run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub w_ctx: Option<ParamId>,
    pub input: usize,
    pub context: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        Self::register_with_context(store, prefix, input, 0, hidden, seed)
    }

    /// Like [`LstmParams::register`] with `context` extra input columns.
    pub fn register_with_context(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        context: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Config(format!("{prefix}: zero-sized LSTM")));
        }
        let name_w = format!("{prefix}.w");
        let name_u = format!("{prefix}.u");
        let name_b = format!("{prefix}.b");
        let w = uniform_tensor(vec![4 * hidden, input], INIT_BOUND, &mut param_rng(seed, &name_w))?;
        let u = uniform_tensor(vec![4 * hidden, hidden], INIT_BOUND, &mut param_rng(seed, &name_u))?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].iter_mut().for_each(|x| *x = FORGET_BIAS);
        let w = store.register(name_w, w)?;
        let u = store.register(name_u, u)?;
        let b = store.register(name_b, Tensor::vector(b)?)?;
        let w_ctx = if context > 0 {
            let name = format!("{prefix}.w_ctx");
            let t = uniform_tensor(vec![4 * hidden, context], INIT_BOUND, &mut param_rng(seed, &name))?;
            Some(store.register(name, t)?)
        } else {
            None
        };
        Ok(LstmParams {
            w,
            u,
            b,
            w_ctx,
            input,
            context,
            hidden,
        })
    }

    pub fn on_tape(&self, tape: &mut Tape, store: &ParamStore) -> Result<LstmVars> {
        self.on_tape_with_context(tape, store, None)
    }

    /// Puts the weights on the tape; `ctx` is the per-sequence vector read
    /// by `w_ctx` and must be given exactly when the cell has one.
    pub fn on_tape_with_context(&self, tape: &mut Tape, store: &ParamStore, ctx: Option<Var>) -> Result<LstmVars> {
        let mut b = tape.param(store, self.b)?;
        match (self.w_ctx, ctx) {
            (None, None) => {}
            (Some(id), Some(x)) => {
                let m = tape.param(store, id)?;
                let proj = tape.matvec(m, x)?;
                b = tape.add(b, proj)?;
            }
            (Some(_), None) => return Err(Error::dim("lstm", format!("missing {}-wide context", self.context))),
            (None, Some(_)) => return Err(Error::dim("lstm", "cell takes no context vector")),
        }
        Ok(LstmVars {
            w: tape.param(store, self.w)?,
            u: tape.param(store, self.u)?,
            b,
            hidden: self.hidden,
        })
    }
}

/// LSTM weights copied onto a tape for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub u: Var,
    pub b: Var,
    pub hidden: usize,
}

/// One LSTM step with logistic gates: returns `(h, c)`.
pub fn lstm_step(tape: &mut Tape, p: &LstmVars, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
    let h = p.hidden;
    let wx = tape.matvec(p.w, x)?;
    let uh = tape.matvec(p.u, h_prev)?;
    let pre = tape.add(wx, uh)?;
    let pre = tape.add(pre, p.b)?;
    let ifo = tape.slice(pre, 0, 3 * h)?;
    let ifo = tape.sigmoid(ifo)?;
    let g = tape.slice(pre, 3 * h, h)?;
    let g = tape.tanh(g)?;
    let i = tape.slice(ifo, 0, h)?;
    let f = tape.slice(ifo, h, h)?;
    let o = tape.slice(ifo, 2 * h, h)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h_new = tape.mul(o, tc)?;
    Ok((h_new, c))
}

/// Runs the cell over `seq` from zero state; returns every hidden state.
pub fn lstm_run(tape: &mut Tape, p: &LstmVars, seq: impl IntoIterator<Item = Var>) -> Result<Vec<Var>> {
    let mut h = tape.zeros(p.hidden)?;
    let mut c = h;
    let mut out = Vec::new();
    for x in seq {
        let (h2, c2) = lstm_step(tape, p, x, h, c)?;
        h = h2;
        c = c2;
        out.push(h);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BiLstmParams {
    /// `hidden` is the per-direction size; the encoder output is `2 * hidden`.
    pub fn register(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, seed: u64) -> Result<Self> {
        Self::register_with_context(store, prefix, input, 0, hidden, seed)
    }

    /// Encoder whose every step reads `x_t ⊕ ctx` for a fixed `context`-wide `ctx`.
    pub fn register_with_context(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        context: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(BiLstmParams {
            forward: LstmParams::register_with_context(store, &format!("{prefix}.fwd"), input, context, hidden, seed)?,
            backward: LstmParams::register_with_context(store, &format!("{prefix}.bwd"), input, context, hidden, seed)?,
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }

    /// Full per-step input width, context columns included.
    pub fn input_dim(&self) -> usize {
        self.forward.input + self.forward.context
    }
}

#[derive(Debug, Clone)]
pub struct Encoded {
    /// `states[t]` = forward state after `x_t` ⊕ backward state after `x_t`.
    pub states: Vec<Var>,
    /// Final forward state ⊕ final backward state.
    pub summary: Var,
}

pub fn bilstm_encode(tape: &mut Tape, store: &ParamStore, p: &BiLstmParams, seq: &[Var]) -> Result<Encoded> {
    bilstm_encode_with_context(tape, store, p, seq, None)
}

/// Encodes `x_t ⊕ ctx` for every `t`.
pub fn bilstm_encode_with_context(
    tape: &mut Tape,
    store: &ParamStore,
    p: &BiLstmParams,
    seq: &[Var],
    ctx: Option<Var>,
) -> Result<Encoded> {
    if seq.is_empty() {
        return Err(Error::EmptyInput("bilstm_encode sequence"));
    }
    let fw = p.forward.on_tape_with_context(tape, store, ctx)?;
    let bw = p.backward.on_tape_with_context(tape, store, ctx)?;
    let fwd = lstm_run(tape, &fw, seq.iter().copied())?;
    let mut bwd = lstm_run(tape, &bw, seq.iter().rev().copied())?;
    bwd.reverse();
    let states = fwd
        .iter()
        .zip(&bwd)
        .map(|(&f, &b)| tape.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    let summary = tape.concat(&[fwd[seq.len() - 1], bwd[0]])?;
    Ok(Encoded { states, summary })
}
