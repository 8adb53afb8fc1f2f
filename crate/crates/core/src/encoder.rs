//! Per-turn conversation graph, graph convolution over it, self-attention over
//! the click history and mean pooling into a state vector.

use std::collections::{BTreeSet, HashMap};

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::embeddings::EmbeddingTable;
use crate::estimation::ItemDistribution;
use crate::ids::{AttrId, ItemId, UserId};
use crate::nn::{
    affine, affine_backward, layer_norm, layer_norm_backward, positions, relu, relu_backward,
    softmax_rows, softmax_rows_backward, LayerNormCache, NetParams,
};
use crate::scalar::Scalar;
use crate::simulator::Conversation;

pub const DEFAULT_SAMPLE_CAP: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Node {
    User(UserId),
    Item(ItemId),
    Attr(AttrId),
}

/// Compact description of a turn's graph; the item–attribute edges are
/// recovered from the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GraphInput<T> {
    pub user: UserId,
    /// Sampled candidate items, ascending.
    pub items: Vec<ItemId>,
    /// Soft score of each entry of `items`, used as the user–item edge weight.
    pub item_weights: Vec<T>,
    /// Clicked, non-clicked and candidate attributes, ascending.
    pub attrs: Vec<AttrId>,
    /// Clicked attributes in click order.
    pub clicks: Vec<AttrId>,
}

/// Builds the node sets for the current turn.
///
/// When `V_cand` exceeds `sample_cap`, items of `must_include` that are still
/// candidates are kept first and the rest of the sample is drawn uniformly.
pub fn build_graph<T: Scalar, R: Rng + ?Sized>(
    conv: &Conversation,
    item_dist: &ItemDistribution<T>,
    sample_cap: usize,
    must_include: &[ItemId],
    rng: &mut R,
) -> GraphInput<T> {
    let cand = conv.v_cand();
    let items: Vec<ItemId> = if cand.len() <= sample_cap {
        cand.iter().copied().collect()
    } else {
        let mut chosen: BTreeSet<ItemId> = BTreeSet::new();
        for v in must_include {
            if chosen.len() < sample_cap && cand.contains(v) {
                chosen.insert(*v);
            }
        }
        let rest: Vec<ItemId> = cand.iter().filter(|v| !chosen.contains(v)).copied().collect();
        let k = sample_cap - chosen.len();
        chosen.extend(sample(rng, rest.len(), k).into_iter().map(|i| rest[i]));
        chosen.into_iter().collect()
    };
    let item_weights = items
        .iter()
        .map(|v| item_dist.get(*v).expect("item distribution covers V_cand"))
        .collect();
    let mut attrs: BTreeSet<AttrId> = conv.p_cand().collect();
    let clicks = conv.clicked_history();
    attrs.extend(clicks.iter().copied());
    attrs.extend(conv.nonclicked_history());
    GraphInput {
        user: conv.user(),
        items,
        item_weights,
        attrs: attrs.into_iter().collect(),
        clicks,
    }
}

/// Materialised weighted graph with symmetric edges.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicGraph<T> {
    nodes: Vec<Node>,
    /// Row of the stacked embedding table for each node.
    entity: Vec<usize>,
    index: HashMap<Node, usize>,
    /// Undirected weighted edges, each listed once.
    edges: Vec<(usize, usize, T)>,
    /// Node index of each clicked attribute, in click order.
    clicks: Vec<usize>,
}

impl<T: Scalar> DynamicGraph<T> {
    pub fn from_input(input: &GraphInput<T>, catalog: &Catalog) -> Self {
        let mut nodes = Vec::with_capacity(1 + input.items.len() + input.attrs.len());
        nodes.push(Node::User(input.user));
        nodes.extend(input.items.iter().map(|v| Node::Item(*v)));
        nodes.extend(input.attrs.iter().map(|p| Node::Attr(*p)));
        let mut edges = Vec::new();
        let attr_base = 1 + input.items.len();
        for (k, (v, w)) in input.items.iter().zip(&input.item_weights).enumerate() {
            edges.push((0, 1 + k, *w));
            for p in catalog.item_attrs(*v) {
                if let Ok(j) = input.attrs.binary_search(p) {
                    edges.push((1 + k, attr_base + j, T::one()));
                }
            }
        }
        let clicks = input
            .clicks
            .iter()
            .map(|p| attr_base + input.attrs.binary_search(p).expect("clicked attribute is a node"))
            .collect();
        Self::assemble(nodes, edges, clicks, catalog)
    }

    fn assemble(
        nodes: Vec<Node>,
        edges: Vec<(usize, usize, T)>,
        clicks: Vec<usize>,
        catalog: &Catalog,
    ) -> Self {
        let entity = nodes
            .iter()
            .map(|n| match n {
                Node::User(u) => catalog.user_entity(*u),
                Node::Item(v) => catalog.item_entity(*v),
                Node::Attr(p) => catalog.attr_entity(*p),
            } as usize)
            .collect();
        let index = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        DynamicGraph {
            nodes,
            entity,
            index,
            edges,
            clicks,
        }
    }

    /// The same graph with node `i` moved to position `perm[i]`.
    pub fn permuted(&self, perm: &[usize], catalog: &Catalog) -> Self {
        assert_eq!(perm.len(), self.nodes.len());
        let mut nodes = self.nodes.clone();
        for (i, n) in self.nodes.iter().enumerate() {
            nodes[perm[i]] = *n;
        }
        let edges = self.edges.iter().map(|(a, b, w)| (perm[*a], perm[*b], *w)).collect();
        let clicks = self.clicks.iter().map(|c| perm[*c]).collect();
        Self::assemble(nodes, edges, clicks, catalog)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }
    pub fn node_set(&self) -> BTreeSet<Node> {
        self.nodes.iter().copied().collect()
    }
    pub fn node_index(&self, n: Node) -> Option<usize> {
        self.index.get(&n).copied()
    }
    /// Stacked-embedding row of each node.
    pub fn node_feature_index(&self) -> &[usize] {
        &self.entity
    }
    pub fn edges(&self) -> &[(usize, usize, T)] {
        &self.edges
    }
    pub fn click_nodes(&self) -> &[usize] {
        &self.clicks
    }

    /// Dense symmetric adjacency without self-loops.
    pub fn adjacency(&self) -> Array2<T> {
        let n = self.nodes.len();
        let mut a = Array2::zeros((n, n));
        for (i, j, w) in &self.edges {
            a[[*i, *j]] = *w;
            a[[*j, *i]] = *w;
        }
        a
    }
}

/// `D^{-1/2} (A + I) D^{-1/2}` as neighbour lists.
#[derive(Debug, Clone)]
struct Propagation<T> {
    self_w: Vec<T>,
    nbrs: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> Propagation<T> {
    fn new(g: &DynamicGraph<T>) -> Self {
        let n = g.n_nodes();
        let mut deg = vec![T::one(); n];
        for (i, j, w) in &g.edges {
            deg[*i] += *w;
            deg[*j] += *w;
        }
        let inv_sqrt: Vec<T> = deg.iter().map(|d| T::one() / d.sqrt()).collect();
        let mut nbrs = vec![Vec::new(); n];
        for (i, j, w) in &g.edges {
            let v = *w * inv_sqrt[*i] * inv_sqrt[*j];
            nbrs[*i].push((*j, v));
            nbrs[*j].push((*i, v));
        }
        Propagation {
            self_w: deg.iter().map(|d| T::one() / *d).collect(),
            nbrs,
        }
    }
}

/// Intermediate values of one graph-convolution pass.
#[derive(Debug, Clone)]
pub(crate) struct GcnCache<T> {
    prop: Propagation<T>,
    rows: Vec<usize>,
    need1: Vec<bool>,
    z1: Array2<T>,
    agg2: Array2<T>,
}

impl<T: Scalar> GcnCache<T> {
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        self.z1
            .rows()
            .into_iter()
            .zip(&self.need1)
            .filter(|(_, n)| **n)
            .flat_map(|(r, _)| r.iter().map(|v| *v > T::zero()).collect::<Vec<_>>())
            .collect()
    }
}

/// Two-layer convolution evaluated only at `rows`; `xw1` is the stacked
/// embedding table already multiplied by the first-layer weight.
pub(crate) fn gcn_forward<T: Scalar>(
    params: &NetParams<T>,
    xw1: &Array2<T>,
    g: &DynamicGraph<T>,
    rows: &[usize],
) -> (Array2<T>, GcnCache<T>) {
    let n = g.n_nodes();
    let h = params.gcn_w1.ncols();
    let prop = Propagation::new(g);
    let mut need1 = vec![false; n];
    for r in rows {
        need1[*r] = true;
        for (j, _) in &prop.nbrs[*r] {
            need1[*j] = true;
        }
    }
    let b1 = params.gcn_b1.row(0);
    let mut z1 = Array2::zeros((n, h));
    for i in (0..n).filter(|i| need1[*i]) {
        let mut z = z1.row_mut(i);
        z.scaled_add(prop.self_w[i], &xw1.row(g.entity[i]));
        for (j, w) in &prop.nbrs[i] {
            z.scaled_add(*w, &xw1.row(g.entity[*j]));
        }
        z += &b1;
    }
    let h1 = relu(&z1);
    let mut agg2 = Array2::zeros((rows.len(), h));
    for (k, r) in rows.iter().enumerate() {
        let mut a = agg2.row_mut(k);
        a.scaled_add(prop.self_w[*r], &h1.row(*r));
        for (j, w) in &prop.nbrs[*r] {
            a.scaled_add(*w, &h1.row(*j));
        }
    }
    let out = affine(&agg2.view(), &params.gcn_w2, &params.gcn_b2);
    let cache = GcnCache {
        prop,
        rows: rows.to_vec(),
        need1,
        z1,
        agg2,
    };
    (out, cache)
}

/// Backward pass of [`gcn_forward`]. The first-layer weight gradient is
/// returned through `d_xw1` (rows of the stacked table); callers finish it
/// with `X^T d_xw1`.
pub(crate) fn gcn_backward<T: Scalar>(
    params: &NetParams<T>,
    g: &DynamicGraph<T>,
    cache: &GcnCache<T>,
    d_out: &Array2<T>,
    grads: &mut NetParams<T>,
    d_xw1: &mut Array2<T>,
) {
    let d_agg2 = affine_backward(
        &cache.agg2.view(),
        &params.gcn_w2,
        d_out,
        &mut grads.gcn_w2,
        &mut grads.gcn_b2,
    );
    let prop = &cache.prop;
    let mut dz1 = Array2::zeros(cache.z1.raw_dim());
    for (k, r) in cache.rows.iter().enumerate() {
        let d = d_agg2.row(k);
        dz1.row_mut(*r).scaled_add(prop.self_w[*r], &d);
        for (j, w) in &prop.nbrs[*r] {
            dz1.row_mut(*j).scaled_add(*w, &d);
        }
    }
    relu_backward(&cache.z1, &mut dz1);
    for i in (0..g.n_nodes()).filter(|i| cache.need1[*i]) {
        let d = dz1.row(i);
        grads.gcn_b1.row_mut(0).scaled_add(T::one(), &d);
        d_xw1.row_mut(g.entity[i]).scaled_add(prop.self_w[i], &d);
        for (j, w) in &prop.nbrs[i] {
            d_xw1.row_mut(g.entity[*j]).scaled_add(*w, &d);
        }
    }
}

/// Refined representation of every node, one hidden-size row per node.
pub fn encode_nodes<T: Scalar>(
    graph: &DynamicGraph<T>,
    table: &EmbeddingTable<T>,
    params: &NetParams<T>,
) -> Array2<T> {
    let xw1 = table.stacked().dot(&params.gcn_w1);
    let rows: Vec<usize> = (0..graph.n_nodes()).collect();
    gcn_forward(params, &xw1, graph, &rows).0
}

#[derive(Debug, Clone)]
pub(crate) struct SeqCache<T> {
    x0: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    attn: Array2<T>,
    ctx: Array2<T>,
    ln1: LayerNormCache<T>,
    y1: Array2<T>,
    f_pre: Array2<T>,
    f_act: Array2<T>,
    ln2: LayerNormCache<T>,
}

impl<T: Scalar> SeqCache<T> {
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        self.f_pre.iter().map(|v| *v > T::zero()).collect()
    }
}

/// Post-norm single-head self-attention block with a feed-forward sublayer.
pub(crate) fn seq_forward<T: Scalar>(
    params: &NetParams<T>,
    tokens: &Array2<T>,
) -> (Array2<T>, SeqCache<T>) {
    let len = tokens.nrows();
    let x0 = tokens + &positions(&params.pos, len);
    let xv = x0.view();
    let q = affine(&xv, &params.att_wq, &params.att_bq);
    let k = affine(&xv, &params.att_wk, &params.att_bk);
    let v = affine(&xv, &params.att_wv, &params.att_bv);
    let scale = T::one() / T::of_usize(q.ncols()).sqrt();
    let attn = softmax_rows(&(q.dot(&k.t()) * scale));
    let ctx = attn.dot(&v);
    let r1 = &x0 + &affine(&ctx.view(), &params.att_wo, &params.att_bo);
    let (y1, ln1) = layer_norm(&r1, &params.ln1_g, &params.ln1_b);
    let f_pre = affine(&y1.view(), &params.ffn_w1, &params.ffn_b1);
    let f_act = relu(&f_pre);
    let r2 = &y1 + &affine(&f_act.view(), &params.ffn_w2, &params.ffn_b2);
    let (y2, ln2) = layer_norm(&r2, &params.ln2_g, &params.ln2_b);
    let cache = SeqCache {
        x0,
        q,
        k,
        v,
        attn,
        ctx,
        ln1,
        y1,
        f_pre,
        f_act,
        ln2,
    };
    (y2, cache)
}

/// Backward pass of [`seq_forward`]; returns the token gradient.
pub(crate) fn seq_backward<T: Scalar>(
    params: &NetParams<T>,
    c: &SeqCache<T>,
    d_y2: &Array2<T>,
    grads: &mut NetParams<T>,
) -> Array2<T> {
    let d_r2 = layer_norm_backward(&c.ln2, &params.ln2_g, d_y2, &mut grads.ln2_g, &mut grads.ln2_b);
    let mut d_fact = affine_backward(
        &c.f_act.view(),
        &params.ffn_w2,
        &d_r2,
        &mut grads.ffn_w2,
        &mut grads.ffn_b2,
    );
    relu_backward(&c.f_pre, &mut d_fact);
    let d_y1 = &d_r2
        + &affine_backward(&c.y1.view(), &params.ffn_w1, &d_fact, &mut grads.ffn_w1, &mut grads.ffn_b1);
    let d_r1 = layer_norm_backward(&c.ln1, &params.ln1_g, &d_y1, &mut grads.ln1_g, &mut grads.ln1_b);
    let d_ctx = affine_backward(&c.ctx.view(), &params.att_wo, &d_r1, &mut grads.att_wo, &mut grads.att_bo);
    let d_attn = d_ctx.dot(&c.v.t());
    let d_v = c.attn.t().dot(&d_ctx);
    let scale = T::one() / T::of_usize(c.q.ncols()).sqrt();
    let d_scores = softmax_rows_backward(&c.attn, &d_attn) * scale;
    let d_q = d_scores.dot(&c.k);
    let d_k = d_scores.t().dot(&c.q);
    let xv = c.x0.view();
    let mut d_x0 = d_r1;
    d_x0 += &affine_backward(&xv, &params.att_wq, &d_q, &mut grads.att_wq, &mut grads.att_bq);
    d_x0 += &affine_backward(&xv, &params.att_wk, &d_k, &mut grads.att_wk, &mut grads.att_bk);
    d_x0 += &affine_backward(&xv, &params.att_wv, &d_v, &mut grads.att_wv, &mut grads.att_bv);
    let len = d_x0.nrows();
    let mut dpos = grads.pos.slice_mut(s![..len, ..]);
    dpos += &d_x0;
    d_x0
}

/// Length-preserving encoding of a click sequence (one row per token).
pub fn encode_history<T: Scalar>(tokens: &Array2<T>, params: &NetParams<T>) -> Array2<T> {
    seq_forward(params, tokens).0
}

/// Mean over sequence positions.
pub fn conversation_state<T: Scalar>(history_rep: &Array2<T>) -> Array1<T> {
    assert!(history_rep.nrows() > 0, "history representation is empty");
    history_rep
        .mean_axis(Axis(0))
        .expect("nonempty history representation")
}

/// Nodes whose outputs feed the sequence encoder: the most recent clicks
/// (at most `max_seq`), or the user node when nothing has been clicked.
pub fn sequence_nodes<T: Scalar>(g: &DynamicGraph<T>, max_seq: usize) -> Vec<usize> {
    let c = g.click_nodes();
    if c.is_empty() {
        vec![0]
    } else {
        c[c.len().saturating_sub(max_seq)..].to_vec()
    }
}
