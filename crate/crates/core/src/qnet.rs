//! Dueling Q-network over (state, action-entity) pairs and the full forward
//! and backward pass from graph inputs to Q-values.

use std::collections::HashMap;

use ndarray::{Array1, Array2, Axis};

use crate::encoder::{gcn_backward, gcn_forward, seq_backward, seq_forward, sequence_nodes};
use crate::encoder::{DynamicGraph, GcnCache, Node, SeqCache};
use crate::nn::{affine, affine_backward, relu, relu_backward, NetParams};
use crate::scalar::Scalar;

/// `Q_k = V + A_k - mean(A)`.
pub fn dueling<T: Scalar>(value: T, adv: &[T]) -> Vec<T> {
    assert!(!adv.is_empty(), "dueling aggregation needs at least one action");
    let mean = adv.iter().copied().sum::<T>() / T::of_usize(adv.len());
    adv.iter().map(|a| value + *a - mean).collect()
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache<T> {
    state: Array2<T>,
    zv: Array2<T>,
    hv: Array2<T>,
    za: Array2<T>,
    ha: Array2<T>,
}

/// Value and advantage heads. Returns `(q, value, advantages)`.
pub(crate) fn heads_forward<T: Scalar>(
    p: &NetParams<T>,
    state: &Array1<T>,
    actions: &Array2<T>,
) -> (Array1<T>, T, Array1<T>, HeadCache<T>) {
    let s2 = state.view().insert_axis(Axis(0)).to_owned();
    let zv = affine(&s2.view(), &p.val_w1, &p.val_b1);
    let hv = relu(&zv);
    let value = affine(&hv.view(), &p.val_w2, &p.val_b2)[[0, 0]];
    let mut za = actions.dot(&p.adv_wa);
    za += &s2.dot(&p.adv_ws);
    za += &p.adv_b1;
    let ha = relu(&za);
    let adv = affine(&ha.view(), &p.adv_w2, &p.adv_b2).column(0).to_owned();
    let q = Array1::from(dueling(value, adv.as_slice().expect("contiguous")));
    let cache = HeadCache {
        state: s2,
        zv,
        hv,
        za,
        ha,
    };
    (q, value, adv, cache)
}

/// Returns `(d_state, d_actions)`.
pub(crate) fn heads_backward<T: Scalar>(
    p: &NetParams<T>,
    c: &HeadCache<T>,
    actions: &Array2<T>,
    d_q: &Array1<T>,
    g: &mut NetParams<T>,
) -> (Array1<T>, Array2<T>) {
    let k = T::of_usize(d_q.len());
    let d_value = d_q.sum();
    let mean_dq = d_value / k;
    let d_adv = d_q.mapv(|d| d - mean_dq).insert_axis(Axis(1));
    let d_v = Array2::from_elem((1, 1), d_value);
    let mut d_hv = affine_backward(&c.hv.view(), &p.val_w2, &d_v, &mut g.val_w2, &mut g.val_b2);
    relu_backward(&c.zv, &mut d_hv);
    let mut d_s = affine_backward(&c.state.view(), &p.val_w1, &d_hv, &mut g.val_w1, &mut g.val_b1);
    let mut d_ha = affine_backward(&c.ha.view(), &p.adv_w2, &d_adv, &mut g.adv_w2, &mut g.adv_b2);
    relu_backward(&c.za, &mut d_ha);
    let d_za_sum = d_ha.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.adv_wa.scaled_add(T::one(), &actions.t().dot(&d_ha));
    g.adv_ws.scaled_add(T::one(), &c.state.t().dot(&d_za_sum));
    g.adv_b1 += &d_za_sum;
    d_s += &d_za_sum.dot(&p.adv_ws.t());
    let d_actions = d_ha.dot(&p.adv_wa.t());
    (d_s.row(0).to_owned(), d_actions)
}

/// Cached activations of one state's forward pass.
#[derive(Debug, Clone)]
pub(crate) struct QCache<T> {
    gcn: GcnCache<T>,
    n_rows: usize,
    seq_rows: Vec<usize>,
    act_rows: Vec<usize>,
    seq: SeqCache<T>,
    actions: Array2<T>,
    heads: HeadCache<T>,
}

/// Output of a full forward pass for one state.
#[derive(Debug, Clone)]
pub struct StateEval<T> {
    pub q: Array1<T>,
    pub value: T,
    pub advantages: Array1<T>,
    pub state: Array1<T>,
}

/// Graph convolution, sequence encoding, pooling and Q-heads for the
/// `actions` of one state. `xw1` is the stacked embedding table times the
/// first-layer weight.
pub(crate) fn forward<T: Scalar>(
    p: &NetParams<T>,
    xw1: &Array2<T>,
    g: &DynamicGraph<T>,
    actions: &[Node],
) -> (StateEval<T>, QCache<T>) {
    let seq_nodes = sequence_nodes(g, p.pos.nrows());
    let mut row_of: HashMap<usize, usize> = HashMap::new();
    let mut rows = Vec::new();
    let mut slot = |n: usize, rows: &mut Vec<usize>| {
        *row_of.entry(n).or_insert_with(|| {
            rows.push(n);
            rows.len() - 1
        })
    };
    let seq_rows: Vec<usize> = seq_nodes.iter().map(|n| slot(*n, &mut rows)).collect();
    let act_rows: Vec<usize> = actions
        .iter()
        .map(|a| {
            let n = g.node_index(*a).expect("action entity is a graph node");
            slot(n, &mut rows)
        })
        .collect();
    let (out, gcn) = gcn_forward(p, xw1, g, &rows);
    let tokens = out.select(Axis(0), &seq_rows);
    let (y2, seq) = seq_forward(p, &tokens);
    let state = y2.mean_axis(Axis(0)).expect("nonempty sequence");
    let act = out.select(Axis(0), &act_rows);
    let (q, value, advantages, heads) = heads_forward(p, &state, &act);
    let cache = QCache {
        gcn,
        n_rows: rows.len(),
        seq_rows,
        act_rows,
        seq,
        actions: act,
        heads,
    };
    let eval = StateEval {
        q,
        value,
        advantages,
        state,
    };
    (eval, cache)
}

/// Sign pattern of every ReLU pre-activation in the pass. Two parameter
/// settings with equal patterns lie in the same linear piece of every ReLU.
pub(crate) fn relu_pattern<T: Scalar>(c: &QCache<T>) -> Vec<bool> {
    let positive = |a: &Array2<T>| a.iter().map(|v| *v > T::zero()).collect::<Vec<_>>();
    let mut out = c.gcn.relu_pattern();
    out.extend(c.seq.relu_pattern());
    out.extend(positive(&c.heads.zv));
    out.extend(positive(&c.heads.za));
    out
}

/// Accumulates parameter gradients of `sum_k d_q[k] * Q_k` into `g`, with the
/// first-layer part routed through `d_xw1`.
pub(crate) fn backward<T: Scalar>(
    p: &NetParams<T>,
    graph: &DynamicGraph<T>,
    c: &QCache<T>,
    d_q: &Array1<T>,
    g: &mut NetParams<T>,
    d_xw1: &mut Array2<T>,
) {
    let (d_state, d_act) = heads_backward(p, &c.heads, &c.actions, d_q, g);
    let len = c.seq_rows.len();
    let d_y2 = Array2::from_shape_fn((len, d_state.len()), |(_, j)| d_state[j] / T::of_usize(len));
    let d_tokens = seq_backward(p, &c.seq, &d_y2, g);
    let mut d_out = Array2::zeros((c.n_rows, d_state.len()));
    for (k, r) in c.seq_rows.iter().enumerate() {
        d_out.row_mut(*r).scaled_add(T::one(), &d_tokens.row(k));
    }
    for (k, r) in c.act_rows.iter().enumerate() {
        d_out.row_mut(*r).scaled_add(T::one(), &d_act.row(k));
    }
    gcn_backward(p, graph, &c.gcn, &d_out, g, d_xw1);
}
