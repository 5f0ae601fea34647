//! Type-specific recurrent history encoders and trajectory decoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scene::AgentType;
use crate::tensor::{Tape, Tensor, Var};

/// Per-step history input: `(x, y, vx, vy, cos yaw, sin yaw)`.
pub const HISTORY_FEATURES: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub input: usize,
    pub hidden: usize,
    pub w: [ParamId; 3],
    pub u: [ParamId; 3],
    pub b: [ParamId; 3],
}

const GRU_GATES: [&str; 3] = ["z", "r", "h"];

impl GruParams {
    pub fn init(store: &mut ParamStore, group: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = GRU_GATES.map(|g| store.add_glorot(group, &format!("{group}.w_{g}"), input, hidden, rng));
        let u = GRU_GATES.map(|g| store.add_glorot(group, &format!("{group}.u_{g}"), hidden, hidden, rng));
        let b = GRU_GATES.map(|g| store.add(group, &format!("{group}.b_{g}"), Tensor::zeros(&[hidden])));
        GruParams { input, hidden, w, u, b }
    }
}

/// Runs a GRU over `steps` (each `[n x input]`) from a zero state and returns
/// the final hidden state `[n x hidden]`:
///
/// ```text
/// z = sigmoid(x Wz + h Uz + bz)
/// r = sigmoid(x Wr + h Ur + br)
/// c = tanh(x Wh + (r * h) Uh + bh)
/// h = h + z * (c - h)
/// ```
pub fn gru_encode<'t>(bound: &Bound<'t>, steps: &[Var<'t>], params: &GruParams) -> Result<Var<'t>> {
    let Some(first) = steps.first() else {
        return Err(Error::Config("GRU needs at least one step".into()));
    };
    let tape = first.tape();
    let n = first.shape()[0];
    let [wz, wr, wh] = params.w.map(|id| bound.get(id));
    let [uz, ur, uh] = params.u.map(|id| bound.get(id));
    let [bz, br, bh] = params.b.map(|id| bound.get(id));
    let mut h = tape.constant(Tensor::zeros(&[n, params.hidden]));
    for &x in steps {
        let z = x.matmul(wz)?.add(h.matmul(uz)?)?.add_row(bz)?.sigmoid();
        let r = x.matmul(wr)?.add(h.matmul(ur)?)?.add_row(br)?.sigmoid();
        let c = x.matmul(wh)?.add(r.mul(h)?.matmul(uh)?)?.add_row(bh)?.tanh();
        h = h.add(z.mul(c.sub(h)?)?)?;
    }
    Ok(h)
}

/// How the decoder sees its conditioning feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// The same feature is the input at every step.
    Repeated,
    /// The feature is the first input; later inputs are zero.
    FirstStep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmDecoderParams {
    pub input: usize,
    pub hidden: usize,
    /// Input, forget, output and candidate gates.
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub proj: ParamId,
    pub proj_b: ParamId,
}

const LSTM_GATES: [&str; 4] = ["i", "f", "o", "c"];

impl LstmDecoderParams {
    pub fn init(store: &mut ParamStore, group: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let w = LSTM_GATES.map(|g| store.add_glorot(group, &format!("{group}.w_{g}"), input, hidden, rng));
        let u = LSTM_GATES.map(|g| store.add_glorot(group, &format!("{group}.u_{g}"), hidden, hidden, rng));
        // forget gate starts open
        let b = LSTM_GATES.map(|g| {
            let fill = if g == "f" { 1.0 } else { 0.0 };
            store.add(group, &format!("{group}.b_{g}"), Tensor::filled(&[hidden], fill))
        });
        let proj = store.add_glorot(group, &format!("{group}.proj"), hidden, 2, rng);
        let proj_b = store.add(group, &format!("{group}.proj_b"), Tensor::zeros(&[2]));
        LstmDecoderParams {
            input,
            hidden,
            w,
            u,
            b,
            proj,
            proj_b,
        }
    }
}

/// Unrolls an LSTM for `horizon` steps from zero state, projecting each
/// hidden state to a 2D position. Returns `[m x 2 * horizon]` with row
/// layout `x1, y1, x2, y2, ...`.
pub fn lstm_decode<'t>(
    bound: &Bound<'t>,
    feature: Var<'t>,
    params: &LstmDecoderParams,
    horizon: usize,
    conditioning: Conditioning,
) -> Result<Var<'t>> {
    if horizon == 0 {
        return Err(Error::Config("decoder horizon must be at least 1".into()));
    }
    let shape = feature.shape();
    if shape.len() != 2 || shape[1] != params.input {
        return Err(Error::dim("lstm_decode", &shape, &[shape[0], params.input]));
    }
    let tape: &Tape = feature.tape();
    let m = shape[0];
    let w = params.w.map(|id| bound.get(id));
    let u = params.u.map(|id| bound.get(id));
    let b = params.b.map(|id| bound.get(id));
    let zeros = tape.constant(Tensor::zeros(&[m, params.hidden]));
    let mut x_gates = Vec::with_capacity(4);
    for k in 0..4 {
        x_gates.push(feature.matmul(w[k])?.add_row(b[k])?);
    }
    let bias_only = match conditioning {
        Conditioning::Repeated => None,
        Conditioning::FirstStep => Some(
            (0..4)
                .map(|k| zeros.add_row(b[k]))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let proj = bound.get(params.proj);
    let proj_b = bound.get(params.proj_b);
    let mut h = zeros;
    let mut c = zeros;
    let mut outputs = Vec::with_capacity(horizon);
    for step in 0..horizon {
        let xg = match (&bias_only, step) {
            (Some(bias), s) if s > 0 => bias,
            _ => &x_gates,
        };
        let i = xg[0].add(h.matmul(u[0])?)?.sigmoid();
        let f = xg[1].add(h.matmul(u[1])?)?.sigmoid();
        let o = xg[2].add(h.matmul(u[2])?)?.sigmoid();
        let g = xg[3].add(h.matmul(u[3])?)?.tanh();
        c = f.mul(c)?.add(i.mul(g)?)?;
        h = o.mul(c.tanh())?;
        outputs.push(h.matmul(proj)?.add_row(proj_b)?);
    }
    if outputs.len() == 1 {
        Ok(outputs[0])
    } else {
        tape.concat(&outputs, 1)
    }
}

/// Resolves each agent's type from its masks; exactly one must be set.
pub fn resolve_types(vehicle_mask: &[bool], pedestrian_mask: &[bool]) -> Result<Vec<AgentType>> {
    if vehicle_mask.len() != pedestrian_mask.len() {
        return Err(Error::Mask(format!(
            "type masks have lengths {} and {}",
            vehicle_mask.len(),
            pedestrian_mask.len()
        )));
    }
    vehicle_mask
        .iter()
        .zip(pedestrian_mask)
        .enumerate()
        .map(|(i, (&v, &p))| match (v, p) {
            (true, false) => Ok(AgentType::Vehicle),
            (false, true) => Ok(AgentType::PedestrianBicycle),
            (true, true) => Err(Error::Mask(format!("agent {i} matches both type masks"))),
            (false, false) => Err(Error::Mask(format!("agent {i} matches no type mask"))),
        })
        .collect()
}

/// Groups agents by type, applies `op` once per non-empty group, and returns
/// the outputs in agent order. `op` must return one output per agent given.
pub fn route_by_type<I, O>(
    agents: &[I],
    vehicle_mask: &[bool],
    pedestrian_mask: &[bool],
    mut op: impl FnMut(AgentType, &[&I]) -> Result<Vec<O>>,
) -> Result<Vec<O>> {
    let types = resolve_types(vehicle_mask, pedestrian_mask)?;
    if types.len() != agents.len() {
        return Err(Error::Mask(format!("{} agents but {} mask entries", agents.len(), types.len())));
    }
    let mut slots: Vec<Option<O>> = (0..agents.len()).map(|_| None).collect();
    for ty in AgentType::ALL {
        let idx: Vec<usize> = (0..agents.len()).filter(|&i| types[i] == ty).collect();
        if idx.is_empty() {
            continue;
        }
        let group: Vec<&I> = idx.iter().map(|&i| &agents[i]).collect();
        let out = op(ty, &group)?;
        if out.len() != idx.len() {
            return Err(Error::Shape(format!("{} outputs for {} agents", out.len(), idx.len())));
        }
        for (i, o) in idx.into_iter().zip(out) {
            slots[i] = Some(o);
        }
    }
    Ok(slots.into_iter().map(|o| o.expect("every agent routed")).collect())
}
