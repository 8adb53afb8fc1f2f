//! Entity vectors and the translational pretraining that produces them.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::ids::{AttrId, ItemId, UserId};
use crate::scalar::{dot, Scalar};

pub const CHECKPOINT_MAGIC: &str = "vaguecrs-embeddings";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("unknown {class} id {id}")]
    UnknownId { class: &'static str, id: u32 },
    #[error("catalog has no triplets; use init_embeddings for a random table")]
    NoTriplets,
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed embedding checkpoint (line {line}): {message}")]
    Format { line: usize, message: String },
}

/// Frozen id-indexed vectors for users, items and attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable<T> {
    dim: usize,
    users: Array2<T>,
    items: Array2<T>,
    attrs: Array2<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Builds a table from explicit matrices (rows are entities).
    pub fn from_parts(users: Array2<T>, items: Array2<T>, attrs: Array2<T>) -> Self {
        let dim = users.ncols();
        assert_eq!(items.ncols(), dim, "item vectors have inconsistent dimension");
        assert_eq!(attrs.ncols(), dim, "attribute vectors have inconsistent dimension");
        EmbeddingTable {
            dim,
            users: users.as_standard_layout().into_owned(),
            items: items.as_standard_layout().into_owned(),
            attrs: attrs.as_standard_layout().into_owned(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_users(&self) -> usize {
        self.users.nrows()
    }
    pub fn n_items(&self) -> usize {
        self.items.nrows()
    }
    pub fn n_attrs(&self) -> usize {
        self.attrs.nrows()
    }

    #[inline]
    pub fn user(&self, u: UserId) -> &[T] {
        row(&self.users, u.idx())
    }
    #[inline]
    pub fn item(&self, v: ItemId) -> &[T] {
        row(&self.items, v.idx())
    }
    #[inline]
    pub fn attr(&self, p: AttrId) -> &[T] {
        row(&self.attrs, p.idx())
    }

    pub fn users(&self) -> &Array2<T> {
        &self.users
    }
    pub fn items(&self) -> &Array2<T> {
        &self.items
    }
    pub fn attrs(&self) -> &Array2<T> {
        &self.attrs
    }

    pub fn try_user(&self, u: UserId) -> Result<&[T], EmbeddingError> {
        if u.idx() < self.n_users() {
            Ok(self.user(u))
        } else {
            Err(EmbeddingError::UnknownId { class: "user", id: u.0 })
        }
    }
    pub fn try_item(&self, v: ItemId) -> Result<&[T], EmbeddingError> {
        if v.idx() < self.n_items() {
            Ok(self.item(v))
        } else {
            Err(EmbeddingError::UnknownId { class: "item", id: v.0 })
        }
    }
    pub fn try_attr(&self, p: AttrId) -> Result<&[T], EmbeddingError> {
        if p.idx() < self.n_attrs() {
            Ok(self.attr(p))
        } else {
            Err(EmbeddingError::UnknownId { class: "attribute", id: p.0 })
        }
    }

    pub fn is_finite(&self) -> bool {
        [&self.users, &self.items, &self.attrs]
            .iter()
            .all(|m| m.iter().all(|x| x.is_finite()))
    }

    /// Whether the table covers every id of `catalog`.
    pub fn covers(&self, catalog: &Catalog) -> bool {
        self.n_users() >= catalog.n_users()
            && self.n_items() >= catalog.n_items()
            && self.n_attrs() >= catalog.n_attributes()
    }

    /// All entities stacked in global entity order (users, items, attributes).
    pub fn stacked(&self) -> Array2<T> {
        ndarray::concatenate(
            ndarray::Axis(0),
            &[self.users.view(), self.items.view(), self.attrs.view()],
        )
        .expect("same width")
    }

    /// Writes the versioned text checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let path = path.as_ref();
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        let _ = writeln!(
            out,
            "dim {} users {} items {} attributes {}",
            self.dim,
            self.n_users(),
            self.n_items(),
            self.n_attrs()
        );
        for m in [&self.users, &self.items, &self.attrs] {
            for r in m.rows() {
                let cells: Vec<String> = r.iter().map(|x| x.to_string()).collect();
                out.push_str(&cells.join(" "));
                out.push('\n');
            }
        }
        fs::write(path, out).map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&body)
    }

    pub fn parse(body: &str) -> Result<Self, EmbeddingError> {
        let fmt_err = |line: usize, message: String| EmbeddingError::Format { line, message };
        let mut lines = body.lines().enumerate();
        let (_, magic) = lines.next().ok_or_else(|| fmt_err(1, "empty file".into()))?;
        let version = magic
            .strip_prefix(CHECKPOINT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| fmt_err(1, "missing magic header".into()))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(fmt_err(1, format!("unsupported version {version}")));
        }
        let (_, header) = lines.next().ok_or_else(|| fmt_err(2, "missing size header".into()))?;
        let toks: Vec<&str> = header.split_whitespace().collect();
        let field = |name: &str| -> Result<usize, EmbeddingError> {
            toks.iter()
                .position(|t| *t == name)
                .and_then(|i| toks.get(i + 1))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| fmt_err(2, format!("missing field {name}")))
        };
        let dim = field("dim")?;
        let counts = [field("users")?, field("items")?, field("attributes")?];
        let mut mats = Vec::with_capacity(3);
        for n in counts {
            let mut data = Vec::with_capacity(n * dim);
            for _ in 0..n {
                let (ln, l) = lines
                    .next()
                    .ok_or_else(|| fmt_err(0, "unexpected end of file".into()))?;
                let before = data.len();
                for tok in l.split_whitespace() {
                    let x = tok
                        .parse::<T>()
                        .map_err(|_| fmt_err(ln + 1, format!("bad number {tok:?}")))?;
                    data.push(x);
                }
                if data.len() - before != dim {
                    return Err(fmt_err(ln + 1, format!("expected {dim} values")));
                }
            }
            mats.push(Array2::from_shape_vec((n, dim), data).expect("shape checked"));
        }
        let attrs = mats.pop().expect("three blocks");
        let items = mats.pop().expect("three blocks");
        let users = mats.pop().expect("three blocks");
        Ok(EmbeddingTable {
            dim,
            users,
            items,
            attrs,
        })
    }
}

#[inline]
fn row<T: Scalar>(m: &Array2<T>, i: usize) -> &[T] {
    let d = m.ncols();
    &m.as_slice().expect("standard layout")[i * d..(i + 1) * d]
}

/// Random table with i.i.d. `N(0, 1/dim)` entries (scale `1/sqrt(dim)`).
pub fn init_embeddings<T: Scalar>(catalog: &Catalog, dim: usize, seed: u64) -> EmbeddingTable<T> {
    assert!(dim >= 1, "embedding dimension must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut draw = |n: usize| {
        Array2::from_shape_fn((n, dim), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(z * scale)
        })
    };
    let users = draw(catalog.n_users());
    let items = draw(catalog.n_items());
    let attrs = draw(catalog.n_attributes());
    EmbeddingTable {
        dim,
        users,
        items,
        attrs,
    }
}

/// `w_{v-u} = e_u . e_v`.
pub fn score_user_item<T: Scalar>(
    table: &EmbeddingTable<T>,
    u: UserId,
    v: ItemId,
) -> Result<T, EmbeddingError> {
    Ok(dot(table.try_user(u)?, table.try_item(v)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub margin: f64,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            dim: 64,
            epochs: 20,
            margin: 1.0,
            lr: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome<T> {
    pub table: EmbeddingTable<T>,
    /// Mean margin loss over all triplets, before training and after each epoch.
    pub loss_curve: Vec<f64>,
}

/// Entity classes in the global numbering, used to draw same-class corruptions.
struct EntityLayout {
    bounds: [usize; 4],
}

impl EntityLayout {
    fn new(c: &Catalog) -> Self {
        let u = c.n_users();
        let i = u + c.n_items();
        EntityLayout {
            bounds: [0, u, i, i + c.n_attributes()],
        }
    }

    fn class_range(&self, entity: usize) -> (usize, usize) {
        for w in self.bounds.windows(2) {
            if entity >= w[0] && entity < w[1] {
                return (w[0], w[1]);
            }
        }
        (0, self.bounds[3])
    }

    fn corrupt(&self, entity: usize, rng: &mut ChaCha8Rng) -> usize {
        let (lo, hi) = self.class_range(entity);
        if hi - lo <= 1 {
            return rng.gen_range(0..self.bounds[3]);
        }
        loop {
            let e = rng.gen_range(lo..hi);
            if e != entity {
                return e;
            }
        }
    }
}

fn distance(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| (h + r - t).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn project_unit_ball(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Margin-ranking translational pretraining.
///
/// Scores a triplet by `-||e_h + r - e_t||`; each step draws one corrupted
/// triplet (head or tail replaced by a random entity of the same class) and
/// applies SGD on `max(0, margin + d(pos) - d(neg))`. Entity vectors are kept
/// inside the unit ball. Relation vectors are discarded afterwards.
pub fn pretrain_translational<T: Scalar>(
    catalog: &Catalog,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome<T>, EmbeddingError> {
    if catalog.triplets().is_empty() {
        return Err(EmbeddingError::NoTriplets);
    }
    let init: EmbeddingTable<T> = init_embeddings(catalog, cfg.dim, cfg.seed);
    let dim = cfg.dim;
    let mut ent: Vec<Vec<f64>> = init
        .stacked()
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.as_f64()).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);
    let n_rel = catalog.triplets().iter().map(|t| t.relation as usize + 1).max().unwrap_or(1);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut rel: Vec<Vec<f64>> = (0..n_rel)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * scale
                })
                .collect()
        })
        .collect();

    let layout = EntityLayout::new(catalog);
    let triplets = catalog.triplets();
    // fixed corruptions so the loss curve is comparable across epochs
    let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe7a1);
    let eval_neg: Vec<(usize, usize)> = triplets
        .iter()
        .map(|t| corrupt_pair(&layout, t.head as usize, t.tail as usize, &mut eval_rng))
        .collect();
    let eval_loss = |ent: &[Vec<f64>], rel: &[Vec<f64>]| -> f64 {
        let total: f64 = triplets
            .iter()
            .zip(&eval_neg)
            .map(|(t, (nh, nt))| {
                let r = &rel[t.relation as usize];
                let pos = distance(&ent[t.head as usize], r, &ent[t.tail as usize]);
                let neg = distance(&ent[*nh], r, &ent[*nt]);
                (cfg.margin + pos - neg).max(0.0)
            })
            .sum();
        total / triplets.len() as f64
    };

    let mut loss_curve = vec![eval_loss(&ent, &rel)];
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let lr = cfg.lr;
    for _ in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for &k in &order {
            let t = triplets[k];
            let (h, tl, r) = (t.head as usize, t.tail as usize, t.relation as usize);
            let (nh, nt) = corrupt_pair(&layout, h, tl, &mut rng);
            let pos_d = distance(&ent[h], &rel[r], &ent[tl]);
            let neg_d = distance(&ent[nh], &rel[r], &ent[nt]);
            if cfg.margin + pos_d - neg_d <= 0.0 {
                continue;
            }
            let eps = 1e-12;
            let gp: Vec<f64> = (0..dim)
                .map(|j| (ent[h][j] + rel[r][j] - ent[tl][j]) / (pos_d + eps))
                .collect();
            let gn: Vec<f64> = (0..dim)
                .map(|j| (ent[nh][j] + rel[r][j] - ent[nt][j]) / (neg_d + eps))
                .collect();
            for j in 0..dim {
                ent[h][j] -= lr * gp[j];
                ent[tl][j] += lr * gp[j];
                ent[nh][j] += lr * gn[j];
                ent[nt][j] -= lr * gn[j];
                rel[r][j] -= lr * (gp[j] - gn[j]);
            }
            for e in [h, tl, nh, nt] {
                project_unit_ball(&mut ent[e]);
            }
        }
        loss_curve.push(eval_loss(&ent, &rel));
    }

    let to_mat = |lo: usize, hi: usize| {
        Array2::from_shape_fn((hi - lo, dim), |(i, j)| T::of(ent[lo + i][j]))
    };
    let b = layout.bounds;
    let table = if cfg.epochs == 0 {
        init
    } else {
        EmbeddingTable {
            dim,
            users: to_mat(b[0], b[1]),
            items: to_mat(b[1], b[2]),
            attrs: to_mat(b[2], b[3]),
        }
    };
    Ok(PretrainOutcome { table, loss_curve })
}

fn corrupt_pair(
    layout: &EntityLayout,
    head: usize,
    tail: usize,
    rng: &mut ChaCha8Rng,
) -> (usize, usize) {
    if rng.gen_bool(0.5) {
        (layout.corrupt(head, rng), tail)
    } else {
        (head, layout.corrupt(tail, rng))
    }
}

/// Mean of a set of rows; zero vector for an empty set.
pub fn mean_vector<'a, T: Scalar>(rows: impl IntoIterator<Item = &'a [T]>, dim: usize) -> Array1<T> {
    let mut acc = Array1::<T>::zeros(dim);
    let mut n = 0usize;
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r) {
            *a += *x;
        }
        n += 1;
    }
    if n > 0 {
        acc.mapv_inplace(|x| x / T::of_usize(n));
    }
    acc
}
