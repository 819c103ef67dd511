//! One graph-network block: edge update, node update, global update.
//!
//! Every undirected edge `k = {i, j}` (with `i < j`) becomes two directed
//! edges: `2k` is `i -> j` and `2k + 1` is `j -> i`. Latent edge attributes
//! live on directed edges.

use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{AutodiffError, Tape, Tensor, Var};
use crate::graph::Graph;

/// Affine map `x·w + b`, optionally followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<P> {
    pub w: P,
    pub b: P,
    pub relu: bool,
}

impl Dense<Tensor> {
    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, relu: bool, rng: &mut R) -> Self {
        Self { w: Tensor::glorot(fan_in, fan_out, rng), b: Tensor::zeros(&[1, fan_out]), relu }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, relu: bool) -> Self {
        Self { w: Tensor::zeros(&[fan_in, fan_out]), b: Tensor::zeros(&[1, fan_out]), relu }
    }
}

impl<P> Dense<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> Dense<Q> {
        Dense { w: f(&self.w), b: f(&self.b), relu: self.relu }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        out.push((format!("{prefix}.w"), &self.w));
        out.push((format!("{prefix}.b"), &self.b));
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

impl Dense<Var> {
    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let h = tape.matmul(x, self.w)?;
        let h = tape.add(h, self.b)?;
        if self.relu {
            tape.relu(h)
        } else {
            Ok(h)
        }
    }
}

/// Update functions of one block: `phi_e: 4d -> d`, `phi_v: 4d -> d`, `phi_u: 3d -> d`, all ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct GnParams<P> {
    pub phi_e: Dense<P>,
    pub phi_v: Dense<P>,
    pub phi_u: Dense<P>,
}

impl GnParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(d_h: usize, rng: &mut R) -> Self {
        Self {
            phi_e: Dense::init(4 * d_h, d_h, true, rng),
            phi_v: Dense::init(4 * d_h, d_h, true, rng),
            phi_u: Dense::init(3 * d_h, d_h, true, rng),
        }
    }

    pub fn zeros(d_h: usize) -> Self {
        Self {
            phi_e: Dense::zeros(4 * d_h, d_h, true),
            phi_v: Dense::zeros(4 * d_h, d_h, true),
            phi_u: Dense::zeros(3 * d_h, d_h, true),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> GnParams<Var> {
        self.map(&mut |t| tape.leaf(t.clone()))
    }
}

impl<P> GnParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> GnParams<Q> {
        GnParams { phi_e: self.phi_e.map(f), phi_v: self.phi_v.map(f), phi_u: self.phi_u.map(f) }
    }

    pub fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a P)>) {
        self.phi_e.named(&format!("{prefix}.phi_e"), out);
        self.phi_v.named(&format!("{prefix}.phi_v"), out);
        self.phi_u.named(&format!("{prefix}.phi_u"), out);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut P)) {
        self.phi_e.visit_mut(f);
        self.phi_v.visit_mut(f);
        self.phi_u.visit_mut(f);
    }
}

/// Latent node, directed-edge and global attributes (`n x d`, `2|E| x d`, `1 x d`).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    pub node_h: T,
    pub edge_h: T,
    pub global_h: T,
}

impl LatentState<Var> {
    pub fn values(&self, tape: &Tape) -> LatentState<Tensor> {
        LatentState {
            node_h: tape.value(self.node_h).clone(),
            edge_h: tape.value(self.edge_h).clone(),
            global_h: tape.value(self.global_h).clone(),
        }
    }
}

impl LatentState<Tensor> {
    pub fn constants(&self, tape: &mut Tape) -> LatentState<Var> {
        LatentState {
            node_h: tape.constant(self.node_h.clone()),
            edge_h: tape.constant(self.edge_h.clone()),
            global_h: tape.constant(self.global_h.clone()),
        }
    }
}

/// Index arrays describing the directed-edge expansion of a graph.
#[derive(Debug, Clone)]
pub struct Topology {
    n_nodes: usize,
    senders: Arc<[usize]>,
    receivers: Arc<[usize]>,
    node_to_global: Arc<[usize]>,
    edge_to_global: Arc<[usize]>,
}

impl Topology {
    pub fn new(g: &Graph) -> Self {
        let mut senders = Vec::with_capacity(2 * g.n_edges());
        let mut receivers = Vec::with_capacity(2 * g.n_edges());
        for &(i, j) in g.edges() {
            senders.extend([i, j]);
            receivers.extend([j, i]);
        }
        Self {
            n_nodes: g.n_nodes(),
            node_to_global: vec![0; g.n_nodes()].into(),
            edge_to_global: vec![0; senders.len()].into(),
            senders: senders.into(),
            receivers: receivers.into(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_directed_edges(&self) -> usize {
        self.senders.len()
    }

    pub fn senders(&self) -> &[usize] {
        &self.senders
    }

    pub fn receivers(&self) -> &[usize] {
        &self.receivers
    }

    /// Directed edge index of `a -> b`, if the edge exists.
    pub fn directed_index(&self, a: usize, b: usize) -> Option<usize> {
        (0..self.senders.len()).find(|&e| self.senders[e] == a && self.receivers[e] == b)
    }

    /// Row index that broadcasts the global attribute to every node.
    pub fn node_to_global(&self) -> Arc<[usize]> {
        self.node_to_global.clone()
    }
}

fn check_rows(tape: &Tape, v: Var, rows: usize, d: usize, what: &str) -> Result<(), AutodiffError> {
    let t = tape.value(v);
    if t.shape() != [rows, d] {
        return Err(AutodiffError::ShapeMismatch {
            op: "gn_step",
            detail: format!("{what} has shape {:?}, expected [{rows}, {d}]", t.shape()),
        });
    }
    Ok(())
}

/// One block applied as edge, then node, then global update.
///
/// `e'_ij = phi_e(e_ij, v_i, v_j, u)`, `v'_i = phi_v(v_i, Σ_out e', Σ_in e', u)`,
/// `u' = phi_u(u, mean e', mean v')`. Empty sums and means are zero.
pub fn gn_step(
    tape: &mut Tape,
    topo: &Topology,
    h: &LatentState<Var>,
    params: &GnParams<Var>,
) -> Result<LatentState<Var>, AutodiffError> {
    let d = tape.value(h.node_h).dims().1;
    check_rows(tape, h.node_h, topo.n_nodes, d, "node_h")?;
    check_rows(tape, h.edge_h, topo.n_directed_edges(), d, "edge_h")?;
    check_rows(tape, h.global_h, 1, d, "global_h")?;

    let v_s = tape.gather_rows(h.node_h, topo.senders.clone())?;
    let v_r = tape.gather_rows(h.node_h, topo.receivers.clone())?;
    let u_e = tape.gather_rows(h.global_h, topo.edge_to_global.clone())?;
    let edge_in = tape.concat(&[h.edge_h, v_s, v_r, u_e])?;
    let edge_h = params.phi_e.apply(tape, edge_in)?;

    let out_agg = tape.segment_sum(edge_h, topo.senders.clone(), topo.n_nodes)?;
    let in_agg = tape.segment_sum(edge_h, topo.receivers.clone(), topo.n_nodes)?;
    let u_v = tape.gather_rows(h.global_h, topo.node_to_global.clone())?;
    let node_in = tape.concat(&[h.node_h, out_agg, in_agg, u_v])?;
    let node_h = params.phi_v.apply(tape, node_in)?;

    let mean_e = tape.mean_rows(edge_h)?;
    let mean_v = tape.mean_rows(node_h)?;
    let global_in = tape.concat(&[h.global_h, mean_e, mean_v])?;
    let global_h = params.phi_u.apply(tape, global_in)?;

    Ok(LatentState { node_h, edge_h, global_h })
}

/// `H + gn_step(H)` on every attribute.
pub fn gn_skip_step(
    tape: &mut Tape,
    topo: &Topology,
    h: &LatentState<Var>,
    params: &GnParams<Var>,
) -> Result<LatentState<Var>, AutodiffError> {
    let step = gn_step(tape, topo, h, params)?;
    Ok(LatentState {
        node_h: tape.add(h.node_h, step.node_h)?,
        edge_h: tape.add(h.edge_h, step.edge_h)?,
        global_h: tape.add(h.global_h, step.global_h)?,
    })
}

/// Forward-only convenience wrapper around [`gn_step`] / [`gn_skip_step`].
pub fn gn_step_values(
    topo: &Topology,
    h: &LatentState<Tensor>,
    params: &GnParams<Tensor>,
    skip: bool,
) -> Result<LatentState<Tensor>, AutodiffError> {
    let mut tape = Tape::new();
    let hv = h.constants(&mut tape);
    let pv = params.map(&mut |t| tape.constant(t.clone()));
    let out = if skip {
        gn_skip_step(&mut tape, topo, &hv, &pv)?
    } else {
        gn_step(&mut tape, topo, &hv, &pv)?
    };
    Ok(out.values(&tape))
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::autodiff::{grad_check, relu_margin};
    use crate::graph::{cycle, path};

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_state(topo: &Topology, d: usize, rng: &mut ChaCha8Rng) -> LatentState<Tensor> {
        LatentState {
            node_h: random(topo.n_nodes(), d, rng),
            edge_h: random(topo.n_directed_edges(), d, rng),
            global_h: random(1, d, rng),
        }
    }

    #[test]
    fn edgeless_graph_sees_zero_aggregates() {
        let g = Graph::new(3, &[], None, None).unwrap();
        let topo = Topology::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_state(&topo, 2, &mut rng);
        let params = GnParams::init(2, &mut rng);
        let out = gn_step_values(&topo, &h, &params, false).unwrap();
        assert_eq!(out.edge_h.shape(), &[0, 2]);

        // node update equals phi_v on (v, 0, 0, u)
        for i in 0..3 {
            let mut x: Vec<f64> = h.node_h.row(i).to_vec();
            x.extend([0.0; 4]);
            x.extend_from_slice(h.global_h.row(0));
            for c in 0..2 {
                let pre: f64 = (0..8).map(|r| x[r] * params.phi_v.w.data()[r * 2 + c]).sum();
                assert!((out.node_h.row(i)[c] - pre.max(0.0)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_params_give_zero_state_and_skip_identity() {
        let topo = Topology::new(&cycle(5));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = random_state(&topo, 3, &mut rng);
        let zero = GnParams::zeros(3);
        let out = gn_step_values(&topo, &h, &zero, false).unwrap();
        for t in [&out.node_h, &out.edge_h, &out.global_h] {
            assert!(t.data().iter().all(|&x| x == 0.0));
        }
        let skip = gn_step_values(&topo, &h, &zero, true).unwrap();
        assert_eq!(skip, h);
    }

    #[test]
    fn skip_differs_from_plain_by_input() {
        let topo = Topology::new(&path(4));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_state(&topo, 2, &mut rng);
        let params = GnParams::init(2, &mut rng);
        let plain = gn_step_values(&topo, &h, &params, false).unwrap();
        let skip = gn_step_values(&topo, &h, &params, true).unwrap();
        for (a, b, x) in [
            (&plain.node_h, &skip.node_h, &h.node_h),
            (&plain.edge_h, &skip.edge_h, &h.edge_h),
            (&plain.global_h, &skip.global_h, &h.global_h),
        ] {
            for k in 0..a.len() {
                assert_eq!(b.data()[k], a.data()[k] + x.data()[k]);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let topo = Topology::new(&path(3));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut h = random_state(&topo, 2, &mut rng);
        h.edge_h = random(3, 2, &mut rng);
        let params = GnParams::init(2, &mut rng);
        assert!(matches!(
            gn_step_values(&topo, &h, &params, false),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn shared_weights_on_disjoint_copies() {
        // two disjoint triangles-with-tail: nodes 0..4 and 4..8, same shape
        let edges = [(0, 1), (1, 2), (0, 2), (2, 3), (4, 5), (5, 6), (4, 6), (6, 7)];
        let g = Graph::unweighted(8, &edges).unwrap();
        let topo = Topology::new(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 3;
        let mut h = random_state(&topo, d, &mut rng);
        // copy node and edge attributes of the first component onto the second
        let mut node = h.node_h.data().to_vec();
        node.copy_within(0..4 * d, 4 * d);
        h.node_h = Tensor::matrix(8, d, node).unwrap();
        let mut edge = h.edge_h.data().to_vec();
        for (k, &(i, j)) in g.edges().iter().enumerate() {
            if i >= 4 {
                let src = g.edge_index(i - 4, j - 4).unwrap();
                for dir in 0..2 {
                    let (to, from) = ((2 * k + dir) * d, (2 * src + dir) * d);
                    let row: Vec<f64> = edge[from..from + d].to_vec();
                    edge[to..to + d].copy_from_slice(&row);
                }
            }
        }
        h.edge_h = Tensor::matrix(topo.n_directed_edges(), d, edge).unwrap();
        let params = GnParams::init(d, &mut rng);
        let out = gn_step_values(&topo, &h, &params, false).unwrap();
        for i in 0..4 {
            assert_eq!(out.node_h.row(i), out.node_h.row(i + 4));
        }
    }

    #[test]
    fn one_block_passes_grad_check() {
        let topo = Topology::new(&cycle(4));
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 2;
        let sample = |rng: &mut ChaCha8Rng| {
            let h = random_state(&topo, d, rng);
            let params = GnParams::init(d, rng);
            let mut named = Vec::new();
            params.named("gn", &mut named);
            let mut inputs: BTreeMap<String, Tensor> = named.into_iter().map(|(k, t)| (k, t.clone())).collect();
            inputs.insert("node_h".into(), h.node_h.clone());
            inputs.insert("edge_h".into(), h.edge_h.clone());
            inputs.insert("global_h".into(), h.global_h.clone());
            inputs
        };
        let f = |tape: &mut Tape, v: &BTreeMap<String, Var>| {
            let dense = |p: &str, relu| Dense { w: v[&format!("gn.{p}.w")], b: v[&format!("gn.{p}.b")], relu };
            let p = GnParams { phi_e: dense("phi_e", true), phi_v: dense("phi_v", true), phi_u: dense("phi_u", true) };
            let hv = LatentState { node_h: v["node_h"], edge_h: v["edge_h"], global_h: v["global_h"] };
            let out = gn_step(tape, &topo, &hv, &p)?;
            let s1 = tape.sum(out.node_h)?;
            let s2 = tape.sum(out.edge_h)?;
            let s3 = tape.sum(out.global_h)?;
            let zero = tape.constant(Tensor::zeros(tape.value(out.node_h).shape()));
            let s4 = tape.squared_error(out.node_h, zero)?;
            tape.add_all(&[s1, s2, s3, s4])
        };
        let inputs = loop {
            let inputs = sample(&mut rng);
            if relu_margin(f, &inputs).unwrap() > 1e-3 {
                break inputs;
            }
        };
        assert!(grad_check(f, &inputs, 1e-5).unwrap() < 1e-5);
    }
}
