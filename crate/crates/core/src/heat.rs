//! Heterogeneous edge-enhanced graph attention (HEAT) layers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{InteractionGraph, EDGE_ATTR_WIDTH, EDGE_TYPE_COUNT};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tape, Var};

/// Widths of one HEAT layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct HeatDims {
    /// Number of node types with their own projection; 1 collapses types.
    pub node_types: usize,
    pub input: usize,
    pub projected: usize,
    pub edge_attr: usize,
    pub edge_type: usize,
    pub heads: usize,
    /// Concatenated output width over all heads.
    pub output: usize,
}

impl HeatDims {
    pub fn validate(&self) -> Result<()> {
        if self.node_types == 0 || self.heads == 0 || self.projected == 0 || self.output == 0 {
            return Err(Error::Config("HEAT widths, heads and node types must be positive".into()));
        }
        if !self.output.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "output width {} is not divisible by {} heads",
                self.output, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_width(&self) -> usize {
        self.output / self.heads
    }

    pub fn attention_width(&self) -> usize {
        2 * self.projected + self.edge_attr + self.edge_type
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatLayerParams {
    pub dims: HeatDims,
    /// One `[input x projected]` matrix per node type.
    pub node_proj: Vec<ParamId>,
    /// `[6 x edge_attr]`, absent when the width is zero.
    pub attr_proj: Option<ParamId>,
    /// `[4 x edge_type]`, absent when the width is zero.
    pub type_proj: Option<ParamId>,
    /// Per head, an `[attention_width x 1]` column.
    pub attn: Vec<ParamId>,
    /// Per head, `[(edge_attr + projected) x head_width]`.
    pub agg: Vec<ParamId>,
    pub slope: f64,
}

impl HeatLayerParams {
    pub fn init(store: &mut ParamStore, group: &str, dims: HeatDims, slope: f64, rng: &mut impl Rng) -> Result<Self> {
        dims.validate()?;
        let node_proj = (0..dims.node_types)
            .map(|k| store.add_glorot(group, &format!("{group}.node_proj.{k}"), dims.input, dims.projected, rng))
            .collect();
        let attr_proj = (dims.edge_attr > 0)
            .then(|| store.add_glorot(group, &format!("{group}.attr_proj"), EDGE_ATTR_WIDTH, dims.edge_attr, rng));
        let type_proj = (dims.edge_type > 0)
            .then(|| store.add_glorot(group, &format!("{group}.type_proj"), EDGE_TYPE_COUNT, dims.edge_type, rng));
        let mut attn = Vec::with_capacity(dims.heads);
        let mut agg = Vec::with_capacity(dims.heads);
        for k in 0..dims.heads {
            attn.push(store.add_glorot(group, &format!("{group}.attn.{k}"), dims.attention_width(), 1, rng));
            agg.push(store.add_glorot(
                group,
                &format!("{group}.agg.{k}"),
                dims.edge_attr + dims.projected,
                dims.head_width(),
                rng,
            ));
        }
        Ok(HeatLayerParams {
            dims,
            node_proj,
            attr_proj,
            type_proj,
            attn,
            agg,
            slope,
        })
    }

    /// Projection slot used by each node of `graph`.
    pub fn node_slots(&self, graph: &InteractionGraph) -> Vec<usize> {
        graph
            .node_types
            .iter()
            .map(|t| if self.dims.node_types == 1 { 0 } else { t.index() })
            .collect()
    }
}

/// Raw edge inputs of a graph recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EdgeInputs<'t> {
    /// `[E x 6]` attributes, positions and velocities divided by a scale.
    pub attrs: Var<'t>,
    /// `[E x 4]` one-hot types.
    pub types: Var<'t>,
}

impl<'t> EdgeInputs<'t> {
    pub fn new(tape: &'t Tape, graph: &InteractionGraph, scale: f64) -> Self {
        let mut attrs = graph.attr_matrix();
        for row in attrs.data_mut().chunks_mut(EDGE_ATTR_WIDTH) {
            for v in &mut row[..4] {
                *v /= scale;
            }
        }
        EdgeInputs {
            attrs: tape.constant(attrs),
            types: tape.constant(graph.type_one_hot()),
        }
    }
}

/// Applies each node's type-specific projection to its row of `h`.
pub fn project_nodes<'t>(bound: &Bound<'t>, h: Var<'t>, slots: &[usize], mats: &[ParamId]) -> Result<Var<'t>> {
    let tape = h.tape();
    if let Some(&bad) = slots.iter().find(|&&s| s >= mats.len()) {
        return Err(Error::Config(format!(
            "node type slot {bad} has no projection ({} declared)",
            mats.len()
        )));
    }
    route_rows(tape, h, slots, mats.len(), |slot, rows| rows.matmul(bound.get(mats[slot])))
}

/// Splits the rows of `x` by `slots`, maps each group, and reassembles the
/// results in the original row order.
pub(crate) fn route_rows<'t>(
    tape: &'t Tape,
    x: Var<'t>,
    slots: &[usize],
    slot_count: usize,
    mut f: impl FnMut(usize, Var<'t>) -> Result<Var<'t>>,
) -> Result<Var<'t>> {
    let mut parts = Vec::new();
    let mut order = Vec::with_capacity(slots.len());
    for slot in 0..slot_count {
        let rows: Vec<usize> = (0..slots.len()).filter(|&i| slots[i] == slot).collect();
        if rows.is_empty() {
            continue;
        }
        let group = if rows.len() == slots.len() {
            x
        } else {
            x.gather_rows(&rows)?
        };
        parts.push(f(slot, group)?);
        order.extend(rows);
    }
    if parts.is_empty() {
        return Err(Error::Shape("routing an empty row set".into()));
    }
    let stacked = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat(&parts, 0)?
    };
    if order.iter().enumerate().all(|(k, &i)| k == i) {
        return Ok(stacked);
    }
    let mut inverse = vec![0; order.len()];
    for (k, &i) in order.iter().enumerate() {
        inverse[i] = k;
    }
    stacked.gather_rows(&inverse)
}

/// Edge-enhanced masked attention: per-edge logits
/// `LeakyReLU(a . [h_dst | attr | type | h_src])`, normalized over each
/// destination's in-edges.
pub fn attention_coefficients<'t>(
    graph: &InteractionGraph,
    hk: Var<'t>,
    attr: Option<Var<'t>>,
    ty: Option<Var<'t>>,
    a: Var<'t>,
    slope: f64,
) -> Result<Var<'t>> {
    let tape = hk.tape();
    let mut parts = vec![hk.gather_rows(&graph.destinations())?];
    parts.extend(attr);
    parts.extend(ty);
    parts.push(hk.gather_rows(&graph.sources())?);
    let logits = tape
        .concat(&parts, 1)?
        .matmul(a)?
        .reshape(&[graph.edge_count()])?
        .leaky_relu(slope);
    tape.segment_softmax(logits, &graph.destinations(), graph.node_count())
}

/// `sigmoid(sum_j alpha_ij W [attr_ij | h_j])` for every node `i`.
pub fn aggregate<'t>(
    graph: &InteractionGraph,
    alpha: Var<'t>,
    hk: Var<'t>,
    attr: Option<Var<'t>>,
    w: Var<'t>,
) -> Result<Var<'t>> {
    let tape = hk.tape();
    let src = hk.gather_rows(&graph.sources())?;
    let message = match attr {
        Some(a) => tape.concat(&[a, src], 1)?,
        None => src,
    };
    Ok(message
        .matmul(w)?
        .scale_rows(alpha)?
        .segment_sum(&graph.destinations(), graph.node_count())?
        .sigmoid())
}

/// Per-head attention coefficients of one layer, `[E]` each.
pub fn layer_attention<'t>(
    bound: &Bound<'t>,
    graph: &InteractionGraph,
    edges: EdgeInputs<'t>,
    h: Var<'t>,
    params: &HeatLayerParams,
) -> Result<Vec<Var<'t>>> {
    let (hk, attr, ty) = project_all(bound, graph, edges, h, params)?;
    params
        .attn
        .iter()
        .map(|&a| attention_coefficients(graph, hk, attr, ty, bound.get(a), params.slope))
        .collect()
}

#[allow(clippy::type_complexity)]
fn project_all<'t>(
    bound: &Bound<'t>,
    graph: &InteractionGraph,
    edges: EdgeInputs<'t>,
    h: Var<'t>,
    params: &HeatLayerParams,
) -> Result<(Var<'t>, Option<Var<'t>>, Option<Var<'t>>)> {
    let width = h.shape();
    if width.len() != 2 || width[0] != graph.node_count() || width[1] != params.dims.input {
        return Err(Error::Config(format!(
            "HEAT layer expects [{} x {}] node features, got {width:?}",
            graph.node_count(),
            params.dims.input
        )));
    }
    let hk = project_nodes(bound, h, &params.node_slots(graph), &params.node_proj)?;
    let attr = params.attr_proj.map(|m| edges.attrs.matmul(bound.get(m))).transpose()?;
    let ty = params.type_proj.map(|m| edges.types.matmul(bound.get(m))).transpose()?;
    Ok((hk, attr, ty))
}

/// One multi-head HEAT layer; head outputs are concatenated in head order.
pub fn heat_forward<'t>(
    bound: &Bound<'t>,
    graph: &InteractionGraph,
    edges: EdgeInputs<'t>,
    h: Var<'t>,
    params: &HeatLayerParams,
) -> Result<Var<'t>> {
    let (hk, attr, ty) = project_all(bound, graph, edges, h, params)?;
    let heads = params
        .attn
        .iter()
        .zip(&params.agg)
        .map(|(&a, &w)| {
            let alpha = attention_coefficients(graph, hk, attr, ty, bound.get(a), params.slope)?;
            aggregate(graph, alpha, hk, attr, bound.get(w))
        })
        .collect::<Result<Vec<_>>>()?;
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        h.tape().concat(&heads, 1)
    }
}

/// Applies `layers` in sequence; an empty stack is the identity.
pub fn heat_stack<'t>(
    bound: &Bound<'t>,
    graph: &InteractionGraph,
    edges: EdgeInputs<'t>,
    h: Var<'t>,
    layers: &[HeatLayerParams],
) -> Result<Var<'t>> {
    let mut x = h;
    for (i, layer) in layers.iter().enumerate() {
        if i > 0 && layers[i - 1].dims.output != layer.dims.input {
            return Err(Error::Config(format!(
                "HEAT layer {i} takes width {} but the previous layer emits {}",
                layer.dims.input,
                layers[i - 1].dims.output
            )));
        }
        x = heat_forward(bound, graph, edges, x, layer)?;
    }
    Ok(x)
}
