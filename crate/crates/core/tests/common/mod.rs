//! Scalar-loop reference implementations shared by several test targets.
#![allow(dead_code, clippy::needless_range_loop)]

use heatnet::graph::{build_graph_from_states, InteractionGraph, EDGE_TYPE_COUNT};
use heatnet::heat::{heat_forward, layer_attention, EdgeInputs, HeatDims, HeatLayerParams};
use heatnet::params::ParamStore;
use heatnet::scene::{AgentState, AgentType};
use heatnet::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `v` (row vector) times matrix `m`.
pub fn vec_mat(v: &[f64], m: &Tensor) -> Vec<f64> {
    (0..m.cols())
        .map(|c| (0..m.rows()).map(|r| v[r] * m.at(r, c)).sum())
        .collect()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.5..1.5)).collect())
        .collect()
}

/// A random graph over `n` agents of mixed types, some pairs out of range.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> InteractionGraph {
    let states: Vec<AgentState> = (0..n)
        .map(|_| {
            AgentState::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-6.0..6.0),
                rng.gen_range(-3.0..3.0),
            )
        })
        .collect();
    let types: Vec<AgentType> = (0..n)
        .map(|_| if rng.gen_bool(0.5) { AgentType::Vehicle } else { AgentType::PedestrianBicycle })
        .collect();
    build_graph_from_states(&states, &types, 25.0)
}

pub fn random_layer(seed: u64, dims: HeatDims) -> (ParamStore, HeatLayerParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let layer = HeatLayerParams::init(&mut store, "layer", dims, 0.2, &mut rng).unwrap();
    (store, layer)
}

/// Output rows and per-head attention of a layer computed on the tape.
pub fn tape_layer(
    store: &ParamStore,
    layer: &HeatLayerParams,
    graph: &InteractionGraph,
    h: &[Vec<f64>],
    scale: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let tape = Tape::new();
    let bound = store.bind(&tape, false);
    let edges = EdgeInputs::new(&tape, graph, scale);
    let x = tape.constant(Tensor::from_rows(h).unwrap());
    let out = heat_forward(&bound, graph, edges, x, layer).unwrap().value();
    let alphas = layer_attention(&bound, graph, edges, x, layer)
        .unwrap()
        .into_iter()
        .map(|a| a.value().data().to_vec())
        .collect();
    let rows = (0..out.rows()).map(|r| out.row(r).to_vec()).collect();
    (rows, alphas)
}

/// Per-edge scalar loops over one HEAT layer: outputs and per-head
/// attention coefficients in edge order.
pub fn heat_oracle(
    store: &ParamStore,
    layer: &HeatLayerParams,
    graph: &InteractionGraph,
    h: &[Vec<f64>],
    scale: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = layer.dims;
    let n = graph.node_count();
    let hk: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let slot = if d.node_types == 1 { 0 } else { graph.node_types[i].index() };
            vec_mat(&h[i], store.get(layer.node_proj[slot]))
        })
        .collect();
    let mut attr = Vec::new();
    let mut ty = Vec::new();
    for e in 0..graph.edge_count() {
        let mut raw = graph.attrs[e].to_array();
        for v in &mut raw[..4] {
            *v /= scale;
        }
        attr.push(layer.attr_proj.map_or(Vec::new(), |m| vec_mat(&raw, store.get(m))));
        let mut onehot = [0.0; EDGE_TYPE_COUNT];
        onehot[graph.type_ids[e]] = 1.0;
        ty.push(layer.type_proj.map_or(Vec::new(), |m| vec_mat(&onehot, store.get(m))));
    }
    let mut out = vec![Vec::new(); n];
    let mut alphas = Vec::new();
    for k in 0..d.heads {
        let a = store.get(layer.attn[k]).data();
        let w = store.get(layer.agg[k]);
        let mut alpha = vec![0.0; graph.edge_count()];
        for i in 0..n {
            let incoming: Vec<usize> = (0..graph.edge_count()).filter(|&e| graph.edges[e].dst == i).collect();
            let mut logits = Vec::new();
            for &e in &incoming {
                let j = graph.edges[e].src;
                let mut z = 0.0;
                for (idx, v) in hk[i].iter().chain(&attr[e]).chain(&ty[e]).chain(&hk[j]).enumerate() {
                    z += a[idx] * v;
                }
                logits.push(leaky(z, layer.slope));
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for (&e, l) in incoming.iter().zip(&logits) {
                alpha[e] = (l - max).exp() / denom;
            }
            for c in 0..d.head_width() {
                let mut acc = 0.0;
                for &e in &incoming {
                    let j = graph.edges[e].src;
                    let mut m = 0.0;
                    for (r, v) in attr[e].iter().chain(&hk[j]).enumerate() {
                        m += v * w.at(r, c);
                    }
                    acc += alpha[e] * m;
                }
                out[i].push(sigmoid(acc));
            }
        }
        alphas.push(alpha);
    }
    (out, alphas)
}

/// Plain graph attention: one shared projection `m`, logits from
/// `[m h_i | m h_j]`, aggregation `sigmoid(sum alpha W m h_j)`.
pub fn gat_oracle(
    m: &Tensor,
    a: &[Tensor],
    w: &[Tensor],
    slope: f64,
    graph: &InteractionGraph,
    h: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = graph.node_count();
    let p = m.cols();
    let z: Vec<Vec<f64>> = h.iter().map(|row| vec_mat(row, m)).collect();
    let mut out = vec![Vec::new(); n];
    for (ak, wk) in a.iter().zip(w) {
        for i in 0..n {
            let nbrs: Vec<usize> = graph.edges.iter().filter(|e| e.dst == i).map(|e| e.src).collect();
            let scores: Vec<f64> = nbrs
                .iter()
                .map(|&j| {
                    let mut s = 0.0;
                    for q in 0..p {
                        s += ak.data()[q] * z[i][q] + ak.data()[p + q] * z[j][q];
                    }
                    leaky(s, slope)
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for c in 0..wk.cols() {
                let mut acc = 0.0;
                for (&j, s) in nbrs.iter().zip(&scores) {
                    let wz: f64 = (0..p).map(|q| wk.at(q, c) * z[j][q]).sum();
                    acc += (s - max).exp() / total * wz;
                }
                out[i].push(sigmoid(acc));
            }
        }
    }
    out
}

pub fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
