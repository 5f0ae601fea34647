use std::cell::Cell;

use rand::Rng;

use super::MapRaster;
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Tensor, Var};

/// Width of an agent's map-relative attribute vector.
pub const MAP_ATTR_WIDTH: usize = 6;

const KERNEL: usize = 3;
const STRIDE: usize = 2;
const PAD: usize = 1;

thread_local! {
    static ENCODE_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of [`encode_map`] calls made on this thread so far.
pub fn encode_calls() -> usize {
    ENCODE_CALLS.with(Cell::get)
}

/// Three stride-2 3x3 convolutions followed by a linear map to `output`.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub raster_size: usize,
    pub channels: [usize; 3],
    pub output: usize,
    pub slope: f64,
    pub kernels: [ParamId; 3],
    pub biases: [ParamId; 3],
    pub proj: ParamId,
    pub proj_b: ParamId,
}

fn conv_out(size: usize) -> usize {
    (size + 2 * PAD - KERNEL) / STRIDE + 1
}

impl CnnParams {
    pub fn init(
        store: &mut ParamStore,
        group: &str,
        raster_size: usize,
        channels: [usize; 3],
        output: usize,
        slope: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let mut c_in = 1;
        let mut kernels = Vec::with_capacity(3);
        let mut biases = Vec::with_capacity(3);
        for (k, &c_out) in channels.iter().enumerate() {
            let fan = (c_in + c_out) * KERNEL * KERNEL;
            let limit = (6.0 / fan as f64).sqrt();
            let n = c_out * c_in * KERNEL * KERNEL;
            let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
            let kernel = Tensor::new(vec![c_out, c_in, KERNEL, KERNEL], data).expect("kernel shape");
            kernels.push(store.add(group, &format!("{group}.conv{k}.kernel"), kernel));
            // nonzero so flat (e.g. blank) regions sit off the activation kink
            let bias = (0..c_out).map(|_| rng.gen_range(-0.1..0.1)).collect();
            biases.push(store.add(group, &format!("{group}.conv{k}.bias"), Tensor::vector(bias)));
            c_in = c_out;
        }
        let flat = channels[2] * Self::final_side(raster_size).pow(2);
        let proj = store.add_glorot(group, &format!("{group}.proj"), flat, output, rng);
        let proj_b = store.add(group, &format!("{group}.proj_b"), Tensor::zeros(&[output]));
        CnnParams {
            raster_size,
            channels,
            output,
            slope,
            kernels: kernels.try_into().expect("three kernels"),
            biases: biases.try_into().expect("three biases"),
            proj,
            proj_b,
        }
    }

    /// Side length of the last feature map.
    pub fn final_side(raster_size: usize) -> usize {
        conv_out(conv_out(conv_out(raster_size)))
    }
}

/// Encodes the whole scene raster into a `[1 x output]` feature.
pub fn encode_map<'t>(bound: &Bound<'t>, raster: &MapRaster, params: &CnnParams) -> Result<Var<'t>> {
    if raster.size() != params.raster_size {
        return Err(Error::Config(format!(
            "map encoder expects {0}x{0} rasters, got {1}x{1}",
            params.raster_size,
            raster.size()
        )));
    }
    ENCODE_CALLS.with(|c| c.set(c.get() + 1));
    let tape = bound.get(params.proj).tape();
    let input = Tensor::new(vec![1, raster.size(), raster.size()], raster.pixels().to_vec())?;
    let mut x = tape.constant(input);
    for k in 0..3 {
        x = x
            .conv2d(bound.get(params.kernels[k]), bound.get(params.biases[k]), STRIDE, PAD)?
            .leaky_relu(params.slope);
    }
    let flat = x.shape().iter().product();
    x.reshape(&[1, flat])?
        .matmul(bound.get(params.proj))?
        .add_row(bound.get(params.proj_b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub width: usize,
    /// `[(width + 6) x width]`.
    pub w: ParamId,
    pub b: ParamId,
}

impl GateParams {
    pub fn init(store: &mut ParamStore, group: &str, width: usize, rng: &mut impl Rng) -> Self {
        GateParams {
            width,
            w: store.add_glorot(group, &format!("{group}.w"), width + MAP_ATTR_WIDTH, width, rng),
            b: store.add(group, &format!("{group}.b"), Tensor::zeros(&[width])),
        }
    }
}

/// Per-agent selection of the shared map feature:
/// `z = sigmoid([M | s] Wz + bz)`, `m = z * M`, one row per row of `attrs`.
pub fn gate_select<'t>(bound: &Bound<'t>, map: Var<'t>, attrs: Var<'t>, params: &GateParams) -> Result<Var<'t>> {
    let n = attrs.shape()[0];
    let repeated = map.gather_rows(&vec![0; n])?;
    let z = map
        .tape()
        .concat(&[repeated, attrs], 1)?
        .matmul(bound.get(params.w))?
        .add_row(bound.get(params.b))?
        .sigmoid();
    z.mul(repeated)
}
