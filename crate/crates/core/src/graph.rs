//! kNN graphs, spiking edge convolution and the dense block.
//!
//! Per-edge tensors use the row layout `((t·N + i)·k + j)`: time-major, then
//! centre point, then neighbour slot. Per-point tensors use `t·N + i`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{matmul, matmul_a_bt_acc, matmul_at_b_acc, CustomBackward, Tape, Tensor, Var};
use crate::energy::{InputKind, LayerTrace};
use crate::error::{Error, Result};
use crate::model::ForwardCtx;
use crate::neuron::{NeuronConfig, SpikeTensor};
use crate::spatial::{KdTree, Point3};

/// Exact k-nearest-neighbour graph without self-loops.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnnGraph {
    n: usize,
    k: usize,
    neighbors: Vec<usize>,
}

impl KnnGraph {
    /// Builds the graph with a kd-tree. Rows are sorted by distance, ties by index.
    pub fn build(points: &[Point3], k: usize) -> Result<Self> {
        let n = points.len();
        if k == 0 || n <= k {
            return Err(Error::Config(format!("kNN needs N > k >= 1, got N={n}, k={k}")));
        }
        let tree = KdTree::new(points);
        let mut neighbors = Vec::with_capacity(n * k);
        for (i, p) in points.iter().enumerate() {
            neighbors.extend(tree.knn_filtered(p, k, |j| j == i).into_iter().map(|nb| nb.index));
        }
        Ok(Self { n, k, neighbors })
    }

    /// Wraps a precomputed `N×k` neighbour table after validating it.
    pub fn from_neighbors(n: usize, k: usize, neighbors: Vec<usize>) -> Result<Self> {
        if k == 0 || neighbors.len() != n * k {
            return Err(Error::Config(format!("neighbour table of {} entries is not {n}x{k}", neighbors.len())));
        }
        for (e, &j) in neighbors.iter().enumerate() {
            if j >= n || j == e / k {
                return Err(Error::Config(format!("invalid neighbour {j} for point {}", e / k)));
            }
        }
        Ok(Self { n, k, neighbors })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k..(i + 1) * self.k]
    }

    pub fn table(&self) -> &[usize] {
        &self.neighbors
    }

    /// Point rows of every edge's centre and neighbour over `t_steps` time blocks.
    pub fn edge_rows(&self, t_steps: usize) -> (Vec<usize>, Vec<usize>) {
        let e = t_steps * self.n * self.k;
        let mut centres = Vec::with_capacity(e);
        let mut nbrs = Vec::with_capacity(e);
        for t in 0..t_steps {
            for (slot, &j) in self.neighbors.iter().enumerate() {
                centres.push(t * self.n + slot / self.k);
                nbrs.push(t * self.n + j);
            }
        }
        (centres, nbrs)
    }
}

pub fn build_knn(points: &[Point3], k: usize) -> Result<KnnGraph> {
    KnnGraph::build(points, k)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

/// `[S(x_i), S(x_j) − S(x_i)]` for every edge of one time step: `N×k×2C`.
pub fn edge_features(spikes: &Tensor, graph: &KnnGraph) -> Result<Tensor> {
    if spikes.rank() != 2 || spikes.rows() != graph.len() {
        return Err(Error::shape("edge_features", format!("{:?} for a graph over {} points", spikes.shape(), graph.len())));
    }
    let c = spikes.cols();
    let mut out = Vec::with_capacity(graph.len() * graph.k() * 2 * c);
    for i in 0..graph.len() {
        let si = spikes.row(i);
        for &j in graph.neighbors(i) {
            out.extend_from_slice(si);
            out.extend(spikes.row(j).iter().zip(si).map(|(a, b)| a - b));
        }
    }
    Ok(Tensor::from_parts(vec![graph.len(), graph.k(), 2 * c], out))
}

/// Reduces an `N×k×C` per-edge tensor over the neighbour axis.
pub fn aggregate(per_edge: &Tensor, scheme: Pooling) -> Result<Tensor> {
    let s = per_edge.shape();
    if s.len() != 3 {
        return Err(Error::shape("aggregate", format!("expected N×k×C, got {s:?}")));
    }
    let (n, k, c) = (s[0], s[1], s[2]);
    let d = per_edge.data();
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let o = &mut out[i * c..(i + 1) * c];
        match scheme {
            Pooling::Mean => {
                for j in 0..k {
                    for (a, b) in o.iter_mut().zip(&d[(i * k + j) * c..(i * k + j + 1) * c]) {
                        *a += b;
                    }
                }
                o.iter_mut().for_each(|v| *v /= k as f64);
            }
            Pooling::Max => {
                o.copy_from_slice(&d[i * k * c..(i * k + 1) * c]);
                for j in 1..k {
                    for (a, &b) in o.iter_mut().zip(&d[(i * k + j) * c..(i * k + j + 1) * c]) {
                        *a = a.max(b);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c], out))
}

/// Edge features of time-major `(T·N)×C` point rows as `(T·N·k)×2C` edge rows.
pub fn edge_features_var(tape: &mut Tape, x: Var, graph: &KnnGraph, t_steps: usize) -> Result<Var> {
    let (centres, nbrs) = graph.edge_rows(t_steps);
    if tape.value(x).rows() != t_steps * graph.len() {
        return Err(Error::shape("edge_features", format!("{:?} for {t_steps}x{} rows", tape.value(x).shape(), graph.len())));
    }
    let xi = tape.gather_rows(x, &centres)?;
    let xj = tape.gather_rows(x, &nbrs)?;
    let diff = tape.sub(xj, xi)?;
    tape.concat(&[xi, diff], 1)
}

/// Reduces `(rows·k)×C` edge rows to `rows×C`.
pub fn aggregate_var(tape: &mut Tape, x: Var, k: usize, scheme: Pooling) -> Result<Var> {
    match scheme {
        Pooling::Mean => tape.segment_mean(x, k),
        Pooling::Max => tape.segment_max(x, k),
    }
}

/// `X_i·Wa + (X_j − X_i)·Wb` evaluated per point and scattered to edges.
struct EdgeLinear {
    k: usize,
    nbr_rows: Vec<usize>,
}

impl EdgeLinear {
    fn forward(&self, x: &Tensor, wa: &Tensor, wb: &Tensor) -> Tensor {
        let (rows, c, g) = (x.rows(), x.cols(), wa.cols());
        let wd: Vec<f64> = wa.data().iter().zip(wb.data()).map(|(a, b)| a - b).collect();
        let a = matmul(x.data(), &wd, rows, c, g);
        let b = matmul(x.data(), wb.data(), rows, c, g);
        let mut out = Vec::with_capacity(self.nbr_rows.len() * g);
        for (e, &nb) in self.nbr_rows.iter().enumerate() {
            let ar = &a[(e / self.k) * g..(e / self.k + 1) * g];
            let br = &b[nb * g..(nb + 1) * g];
            out.extend(ar.iter().zip(br).map(|(p, q)| p + q));
        }
        Tensor::from_parts(vec![self.nbr_rows.len(), g], out)
    }
}

impl CustomBackward for EdgeLinear {
    fn name(&self) -> &'static str {
        "edge_linear"
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>> {
        let (x, wa, wb) = (inputs[0], inputs[1], inputs[2]);
        let (rows, c, g) = (x.rows(), x.cols(), wa.cols());
        let gd = grad.data();
        let mut da = vec![0.0; rows * g];
        let mut db = vec![0.0; rows * g];
        for (e, &nb) in self.nbr_rows.iter().enumerate() {
            let ge = &gd[e * g..(e + 1) * g];
            let r = e / self.k;
            for q in 0..g {
                da[r * g + q] += ge[q];
                db[nb * g + q] += ge[q];
            }
        }
        let gx = needs[0].then(|| {
            let wd: Vec<f64> = wa.data().iter().zip(wb.data()).map(|(a, b)| a - b).collect();
            let mut gx = vec![0.0; rows * c];
            matmul_a_bt_acc(&mut gx, &da, &wd, rows, c, g);
            matmul_a_bt_acc(&mut gx, &db, wb.data(), rows, c, g);
            Tensor::from_parts(x.shape().to_vec(), gx)
        });
        let gwa = needs[1].then(|| {
            let mut gw = vec![0.0; c * g];
            matmul_at_b_acc(&mut gw, x.data(), &da, rows, c, g);
            Tensor::from_parts(wa.shape().to_vec(), gw)
        });
        let gwb = needs[2].then(|| {
            let diff: Vec<f64> = db.iter().zip(&da).map(|(b, a)| b - a).collect();
            let mut gw = vec![0.0; c * g];
            matmul_at_b_acc(&mut gw, x.data(), &diff, rows, c, g);
            Tensor::from_parts(wb.shape().to_vec(), gw)
        });
        vec![gx, gwa, gwb]
    }
}

/// Linear map of edge features `[X_i, X_j − X_i]` without materialising them.
///
/// `wa` and `wb` are the centre and difference halves of the weight. The
/// result equals `edge_features_var` followed by a matmul with `[wa; wb]`.
pub fn edge_linear(tape: &mut Tape, x: Var, wa: Var, wb: Var, graph: &KnnGraph, t_steps: usize) -> Result<Var> {
    let (xs, was, wbs) = (tape.value(x).shape(), tape.value(wa).shape(), tape.value(wb).shape());
    if xs.len() != 2 || xs[0] != t_steps * graph.len() || was != wbs || was.len() != 2 || was[0] != xs[1] {
        return Err(Error::shape("edge_linear", format!("x {xs:?}, wa {was:?}, wb {wbs:?}")));
    }
    let (_, nbr_rows) = graph.edge_rows(t_steps);
    let rule = EdgeLinear { k: graph.k(), nbr_rows };
    let out = rule.forward(tape.value(x), tape.value(wa), tape.value(wb));
    Ok(tape.custom(&[x, wa, wb], out, Box::new(rule)))
}

/// Shape of one dense block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    pub layers: usize,
    pub growth: usize,
    pub pooling: Pooling,
}

impl BlockConfig {
    pub fn out_channels(&self, in_channels: usize) -> usize {
        in_channels + self.layers * self.growth
    }

    /// Weight shapes `[in, out]` of each sub-layer.
    pub fn weight_shapes(&self, in_channels: usize) -> Vec<[usize; 2]> {
        (0..self.layers).map(|l| [2 * in_channels + l * self.growth, self.growth]).collect()
    }
}

pub(crate) fn param<'p>(params: &'p BTreeMap<String, Tensor>, name: &str) -> Result<&'p Tensor> {
    params.get(name).ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
}

/// Number of nonzero entries in the logical `[X_i, X_j − X_i, Y]` edge input.
fn edge_input_nonzeros(tape: &Tape, x: Var, ys: &[Var], graph: &KnnGraph, t_steps: usize) -> f64 {
    let xv = tape.value(x);
    let c = xv.cols();
    let nnz_rows: Vec<usize> = (0..xv.rows()).map(|r| xv.row(r).iter().filter(|v| **v != 0.0).count()).collect();
    let (centres, nbrs) = graph.edge_rows(t_steps);
    let mut count = 0usize;
    for (&ci, &nj) in centres.iter().zip(&nbrs) {
        count += nnz_rows[ci];
        let (a, b) = (&xv.data()[ci * c..(ci + 1) * c], &xv.data()[nj * c..(nj + 1) * c]);
        count += a.iter().zip(b).filter(|(p, q)| p != q).count();
    }
    for &y in ys {
        count += tape.value(y).data().iter().filter(|v| **v != 0.0).count();
    }
    count as f64
}

/// One dense block over time-major `(T·N)×C` spike rows, with parameters
/// `{prefix}.fc{l}.weight` / `.bias`.
///
/// Each sub-layer sees the block's edge features together with the edge-wise
/// outputs of all earlier sub-layers. The block output concatenates the input
/// with the neighbour-pooled sub-layer outputs and passes it through a neuron.
#[allow(clippy::too_many_arguments)]
pub fn dense_block_forward(
    tape: &mut Tape,
    x: Var,
    graph: &KnnGraph,
    t_steps: usize,
    params: &BTreeMap<String, Tensor>,
    prefix: &str,
    block: &BlockConfig,
    neuron: &NeuronConfig,
    ctx: &mut ForwardCtx,
) -> Result<Var> {
    let c = tape.value(x).cols();
    let rows = tape.value(x).rows();
    if rows != t_steps * graph.len() {
        return Err(Error::shape("dense_block", format!("{rows} rows for T={t_steps}, N={}", graph.len())));
    }
    let mut ys: Vec<Var> = Vec::with_capacity(block.layers);
    for (l, shape) in block.weight_shapes(c).into_iter().enumerate() {
        let wname = format!("{prefix}.fc{l}.weight");
        let wt = param(params, &wname)?;
        if wt.shape() != shape {
            return Err(Error::Config(format!("`{wname}` has shape {:?}, block expects {shape:?}", wt.shape())));
        }
        let w = tape.param(&wname, wt);
        let b = tape.param(&format!("{prefix}.fc{l}.bias"), param(params, &format!("{prefix}.fc{l}.bias"))?);
        let wa = tape.slice_rows(w, 0, c)?;
        let wb = tape.slice_rows(w, c, 2 * c)?;
        let mut pre = edge_linear(tape, x, wa, wb, graph, t_steps)?;
        if l > 0 {
            let ycat = if ys.len() == 1 { ys[0] } else { tape.concat(&ys, 1)? };
            let wy = tape.slice_rows(w, 2 * c, shape[0])?;
            let py = tape.matmul(ycat, wy)?;
            pre = tape.add(pre, py)?;
        }
        if ctx.tracing() {
            let nnz = edge_input_nonzeros(tape, x, &ys, graph, t_steps);
            ctx.record(LayerTrace {
                name: format!("{prefix}.fc{l}"),
                fan_in: shape[0],
                fan_out: shape[1],
                rows: graph.len() * graph.k(),
                t_steps,
                input: InputKind::Spike,
                nonzero: nnz,
            });
        }
        let pre = tape.add_bias(pre, b)?;
        let y = ctx.spike(tape, pre, t_steps, neuron, &format!("{prefix}.fc{l}"))?;
        ys.push(y);
    }
    let mut parts = Vec::with_capacity(block.layers + 1);
    parts.push(x);
    for &y in &ys {
        parts.push(aggregate_var(tape, y, graph.k(), block.pooling)?);
    }
    let pre = tape.concat(&parts, 1)?;
    ctx.spike(tape, pre, t_steps, neuron, &format!("{prefix}.out"))
}

/// Dense block on a standalone spike tensor `[T, N, C]`.
pub fn dense_block(
    spikes: &SpikeTensor,
    graph: &KnnGraph,
    params: &BTreeMap<String, Tensor>,
    prefix: &str,
    block: &BlockConfig,
    neuron: &NeuronConfig,
    ctx: &mut ForwardCtx,
) -> Result<SpikeTensor> {
    let t = spikes.t_steps();
    let c = spikes.step_len() / graph.len().max(1);
    if c * graph.len() != spikes.step_len() {
        return Err(Error::shape("dense_block", format!("{:?} over {} points", spikes.values().shape(), graph.len())));
    }
    let mut tape = Tape::new();
    let x = tape.input(Tensor::from_parts(vec![t * graph.len(), c], spikes.values().data().to_vec()));
    let out = dense_block_forward(&mut tape, x, graph, t, params, prefix, block, neuron, ctx)?;
    SpikeTensor::from_time_major(tape.value(out), t)
}
