//! Directed, edge-featured heterogeneous interaction graphs.

use std::io::Write;

use crate::error::Result;
use crate::scene::{wrap_angle, AgentState, AgentType, Frame, SceneSample};
use crate::tensor::Tensor;

/// Width of an edge attribute: relative position, relative velocity, and
/// the relative yaw as `(cos, sin)`.
pub const EDGE_ATTR_WIDTH: usize = 6;

/// Number of distinct `(source type, destination type)` pairs.
pub const EDGE_TYPE_COUNT: usize = AgentType::COUNT * AgentType::COUNT;

/// Relative measurements of a source agent in the destination's frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttr {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub cos_yaw: f64,
    pub sin_yaw: f64,
}

impl EdgeAttr {
    pub const SELF: EdgeAttr = EdgeAttr {
        position: [0.0, 0.0],
        velocity: [0.0, 0.0],
        cos_yaw: 1.0,
        sin_yaw: 0.0,
    };

    pub fn to_array(self) -> [f64; EDGE_ATTR_WIDTH] {
        [
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
            self.cos_yaw,
            self.sin_yaw,
        ]
    }
}

/// Attributes of `src` seen from `dst`, rotated into the frame whose +x axis
/// points along `dst_heading`.
pub fn edge_attr(src: &AgentState, dst: &AgentState, dst_heading: f64) -> EdgeAttr {
    let frame = Frame {
        origin: dst.position(),
        heading: dst_heading,
    };
    let dyaw = wrap_angle(src.yaw - dst.yaw);
    EdgeAttr {
        position: frame.point_to_local(src.position()),
        velocity: frame.vector_to_local([src.vx - dst.vx, src.vy - dst.vy]),
        cos_yaw: dyaw.cos(),
        sin_yaw: dyaw.sin(),
    }
}

/// Type id of an edge from a `src`-typed node into a `dst`-typed node.
pub fn edge_type_id(src: AgentType, dst: AgentType) -> usize {
    src.index() * AgentType::COUNT + dst.index()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
}

/// Edges are stored grouped by destination, sources ascending within a group.
#[derive(Debug, Clone)]
pub struct InteractionGraph {
    pub node_types: Vec<AgentType>,
    pub edges: Vec<Edge>,
    pub attrs: Vec<EdgeAttr>,
    pub type_ids: Vec<usize>,
    /// Edge indices entering each node.
    pub in_edges: Vec<Vec<usize>>,
}

impl InteractionGraph {
    pub fn node_count(&self) -> usize {
        self.node_types.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.src).collect()
    }

    pub fn destinations(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.dst).collect()
    }

    /// `[E x 6]` edge attribute matrix.
    pub fn attr_matrix(&self) -> Tensor {
        let data = self.attrs.iter().flat_map(|a| a.to_array()).collect();
        Tensor::new(vec![self.edges.len(), EDGE_ATTR_WIDTH], data).expect("attr shape")
    }

    /// `[E x 4]` one-hot edge types.
    pub fn type_one_hot(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.edges.len(), EDGE_TYPE_COUNT]);
        for (e, &id) in self.type_ids.iter().enumerate() {
            t.data_mut()[e * EDGE_TYPE_COUNT + id] = 1.0;
        }
        t
    }

    /// Writes `src,dst,type,attr0..attr5`, one edge per row.
    pub fn write_csv<W: Write>(&self, out: W, ids: &[u64]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["src", "dst", "type", "dx", "dy", "dvx", "dvy", "cos_dyaw", "sin_dyaw"])
            .map_err(std::io::Error::from)?;
        for ((edge, attr), ty) in self.edges.iter().zip(&self.attrs).zip(&self.type_ids) {
            let mut row = vec![ids[edge.src].to_string(), ids[edge.dst].to_string(), ty.to_string()];
            row.extend(attr.to_array().iter().map(f64::to_string));
            w.write_record(&row).map_err(std::io::Error::from)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Connects every ordered pair of agents whose current positions lie within
/// `radius` of each other, plus a self-loop on every node.
pub fn build_graph(sample: &SceneSample, radius: f64) -> InteractionGraph {
    build_graph_from_states(&sample.current, &sample.agent_types, radius)
}

pub fn build_graph_from_states(states: &[AgentState], types: &[AgentType], radius: f64) -> InteractionGraph {
    let n = states.len();
    let mut graph = InteractionGraph {
        node_types: types.to_vec(),
        edges: Vec::new(),
        attrs: Vec::new(),
        type_ids: Vec::new(),
        in_edges: vec![Vec::new(); n],
    };
    for dst in 0..n {
        let heading = states[dst].heading();
        for src in 0..n {
            let attr = if src == dst {
                EdgeAttr::SELF
            } else {
                let d = (states[src].x - states[dst].x).hypot(states[src].y - states[dst].y);
                if d > radius {
                    continue;
                }
                edge_attr(&states[src], &states[dst], heading)
            };
            graph.in_edges[dst].push(graph.edges.len());
            graph.edges.push(Edge { src, dst });
            graph.attrs.push(attr);
            graph.type_ids.push(edge_type_id(types[src], types[dst]));
        }
    }
    graph
}
