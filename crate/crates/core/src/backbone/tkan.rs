//! Recurrent KAN sublayers wrapped in LSTM-style gating.

use crate::error::Result;
use crate::nn::layers::Initializer;
use crate::nn::spline::SplineGrid;
use crate::nn::{ParameterStore, Tape, Tensor, Var};

use super::kan::{init_kan, kan_apply};

/// Widths of one TKAN layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TkanShape {
    pub input: usize,
    pub hidden: usize,
    pub sublayers: usize,
    pub kan_width: usize,
    pub grid: SplineGrid,
}

const RECURRENT_GAIN: f64 = 0.5;

pub fn init_tkan(init: &mut Initializer, prefix: &str, shape: &TkanShape) -> Result<()> {
    let (x, h, k) = (shape.input, shape.hidden, shape.kan_width);
    for l in 0..shape.sublayers {
        let p = format!("{prefix}.sub.{l}");
        init.glorot(&format!("{p}.wx"), x, k, 1.0)?;
        init.glorot(&format!("{p}.wh"), k, k, RECURRENT_GAIN)?;
        init_kan(init, &format!("{p}.kan"), k, k, &shape.grid)?;
        init.glorot(&format!("{p}.whh"), k, k, RECURRENT_GAIN)?;
        init.glorot(&format!("{p}.whz"), k, k, 1.0)?;
    }
    for g in ["f", "i", "c"] {
        init.glorot(&format!("{prefix}.w{g}"), x, h, 1.0)?;
        init.glorot(&format!("{prefix}.u{g}"), h, h, RECURRENT_GAIN)?;
        init.constant(&format!("{prefix}.b{g}"), &[1, h], 0.0)?;
    }
    init.glorot(&format!("{prefix}.wo"), shape.sublayers * k, h, 1.0)?;
    init.constant(&format!("{prefix}.bo"), &[1, h], 0.0)
}

/// Recurrent state carried between steps.
#[derive(Clone, Copy, Debug)]
pub struct TkanState {
    pub h: Var,
    pub c: Var,
    /// Sublayer memories, one per RKAN sublayer (up to 8).
    pub sub: [Option<Var>; 8],
}

impl TkanState {
    pub fn zeros(tape: &mut Tape, shape: &TkanShape) -> Self {
        let h = tape.constant(Tensor::zeros(&[1, shape.hidden]));
        let c = tape.constant(Tensor::zeros(&[1, shape.hidden]));
        let mut sub = [None; 8];
        for slot in sub.iter_mut().take(shape.sublayers) {
            *slot = Some(tape.constant(Tensor::zeros(&[1, shape.kan_width])));
        }
        Self { h, c, sub }
    }

    pub fn sub_state(&self, l: usize) -> Var {
        self.sub[l].expect("sublayer state initialized")
    }
}

/// One RKAN sublayer step given the already-projected input `W_x x_t`:
/// `s = W_x x_t + W_h h̃`, `õ = φ(s)`, `h̃' = W_hh h̃ + W_hz õ`.
pub fn rkan_step(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    grid: SplineGrid,
    projected_x: Var,
    sub_state: Var,
) -> Result<(Var, Var)> {
    let wh = tape.param(store, &format!("{prefix}.wh"))?;
    let whh = tape.param(store, &format!("{prefix}.whh"))?;
    let whz = tape.param(store, &format!("{prefix}.whz"))?;
    let rec = tape.matmul(sub_state, wh)?;
    let s = tape.add(projected_x, rec)?;
    let o = kan_apply(tape, store, s, &format!("{prefix}.kan"), grid)?;
    let keep = tape.matmul(sub_state, whh)?;
    let write = tape.matmul(o, whz)?;
    let next = tape.add(keep, write)?;
    Ok((o, next))
}

/// Per-step projections of the layer input that do not depend on state.
struct Projections {
    gates: Var,
    sub: Vec<Var>,
}

fn project_inputs(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    shape: &TkanShape,
    x: Var,
) -> Result<Projections> {
    let mut w = Vec::new();
    let mut b = Vec::new();
    for g in ["f", "i", "c"] {
        w.push(tape.param(store, &format!("{prefix}.w{g}"))?);
        b.push(tape.param(store, &format!("{prefix}.b{g}"))?);
    }
    let w = tape.concat_cols(&w)?;
    let b = tape.concat_cols(&b)?;
    let gx = tape.matmul(x, w)?;
    let gates = tape.add_row(gx, b)?;
    let mut sub = Vec::with_capacity(shape.sublayers);
    for l in 0..shape.sublayers {
        let wx = tape.param(store, &format!("{prefix}.sub.{l}.wx"))?;
        sub.push(tape.matmul(x, wx)?);
    }
    Ok(Projections { gates, sub })
}

fn recurrent_weights(tape: &mut Tape, store: &ParameterStore, prefix: &str) -> Result<Var> {
    let mut u = Vec::new();
    for g in ["f", "i", "c"] {
        u.push(tape.param(store, &format!("{prefix}.u{g}"))?);
    }
    tape.concat_cols(&u)
}

fn step_with(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    shape: &TkanShape,
    proj: &Projections,
    u: Var,
    t: usize,
    state: &TkanState,
) -> Result<TkanState> {
    let hdim = shape.hidden;
    let mut next = *state;
    let mut outs = Vec::with_capacity(shape.sublayers);
    for l in 0..shape.sublayers {
        let px = tape.slice_rows(proj.sub[l], t, 1)?;
        let (o, h_sub) = rkan_step(
            tape,
            store,
            &format!("{prefix}.sub.{l}"),
            shape.grid,
            px,
            state.sub_state(l),
        )?;
        outs.push(o);
        next.sub[l] = Some(h_sub);
    }
    let r = tape.concat_cols(&outs)?;

    let gx = tape.slice_rows(proj.gates, t, 1)?;
    let gh = tape.matmul(state.h, u)?;
    let pre = tape.add(gx, gh)?;
    let act = tape.sigmoid(pre);
    let f = tape.slice_cols(act, 0, hdim)?;
    let i = tape.slice_cols(act, hdim, hdim)?;
    let c_tilde = tape.slice_cols(act, 2 * hdim, hdim)?;

    let wo = tape.param(store, &format!("{prefix}.wo"))?;
    let bo = tape.param(store, &format!("{prefix}.bo"))?;
    let o = tape.matmul(r, wo)?;
    let o = tape.add_row(o, bo)?;
    let o = tape.sigmoid(o);

    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, c_tilde)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    next.h = tape.mul(o, tc)?;
    next.c = c;
    Ok(next)
}

/// A single TKAN step on a `1 x input` row.
pub fn tkan_step(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    shape: &TkanShape,
    x_t: Var,
    state: &TkanState,
) -> Result<TkanState> {
    let proj = project_inputs(tape, store, prefix, shape, x_t)?;
    let u = recurrent_weights(tape, store, prefix)?;
    step_with(tape, store, prefix, shape, &proj, u, 0, state)
}

/// Runs the layer over all rows of `x` (`T x input`) from a zero state and
/// returns the stacked hidden states (`T x hidden`).
pub fn tkan_sequence(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    shape: &TkanShape,
    x: Var,
) -> Result<Var> {
    let steps = tape.value(x).rows();
    let proj = project_inputs(tape, store, prefix, shape, x)?;
    let u = recurrent_weights(tape, store, prefix)?;
    let mut state = TkanState::zeros(tape, shape);
    let mut hs = Vec::with_capacity(steps);
    for t in 0..steps {
        state = step_with(tape, store, prefix, shape, &proj, u, t, &state)?;
        hs.push(state.h);
    }
    tape.concat_rows(&hs)
}
