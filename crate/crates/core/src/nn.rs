//! Network parameters and the dense building blocks shared by the encoder
//! and the Q-heads. Forward passes return caches; backward passes accumulate
//! into a gradient struct of the same shape as the parameters.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;

/// Layer sizes of the encoder and Q-heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetDims {
    pub embed: usize,
    pub hidden: usize,
    /// Rows of the learned positional table.
    pub max_seq: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        NetDims {
            embed: 64,
            hidden: 100,
            max_seq: 30,
        }
    }
}

macro_rules! define_params {
    ($($name:ident),* $(,)?) => {
        /// Every trainable tensor of the agent. Biases are `1 x n` rows.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(bound = "T: Scalar")]
        pub struct NetParams<T> {
            $(pub $name: Array2<T>,)*
        }

        impl<T: Scalar> NetParams<T> {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($name)),*];

            pub fn tensors(&self) -> Vec<&Array2<T>> {
                vec![$(&self.$name),*]
            }

            pub fn tensors_mut(&mut self) -> Vec<&mut Array2<T>> {
                vec![$(&mut self.$name),*]
            }

            pub fn zeros_like(&self) -> Self {
                NetParams { $($name: Array2::zeros(self.$name.raw_dim()),)* }
            }

            pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> NetParams<U> {
                NetParams { $($name: self.$name.mapv(&f),)* }
            }
        }
    };
}

define_params!(
    gcn_w1, gcn_b1, gcn_w2, gcn_b2,
    pos,
    att_wq, att_bq, att_wk, att_bk, att_wv, att_bv, att_wo, att_bo,
    ln1_g, ln1_b,
    ffn_w1, ffn_b1, ffn_w2, ffn_b2,
    ln2_g, ln2_b,
    val_w1, val_b1, val_w2, val_b2,
    adv_ws, adv_wa, adv_b1, adv_w2, adv_b2,
);

fn glorot<T: Scalar, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let u = Uniform::new_inclusive(-a, a);
    Array2::from_shape_simple_fn((rows, cols), || T::of(u.sample(rng)))
}

fn zeros<T: Scalar>(cols: usize) -> Array2<T> {
    Array2::zeros((1, cols))
}

fn ones<T: Scalar>(cols: usize) -> Array2<T> {
    Array2::from_elem((1, cols), T::one())
}

impl<T: Scalar> NetParams<T> {
    pub fn init<R: Rng + ?Sized>(dims: NetDims, rng: &mut R) -> Self {
        let (e, h) = (dims.embed, dims.hidden);
        let pos_u = Uniform::new_inclusive(-0.02, 0.02);
        NetParams {
            gcn_w1: glorot(e, h, rng),
            gcn_b1: zeros(h),
            gcn_w2: glorot(h, h, rng),
            gcn_b2: zeros(h),
            pos: Array2::from_shape_simple_fn((dims.max_seq, h), || T::of(pos_u.sample(rng))),
            att_wq: glorot(h, h, rng),
            att_bq: zeros(h),
            att_wk: glorot(h, h, rng),
            att_bk: zeros(h),
            att_wv: glorot(h, h, rng),
            att_bv: zeros(h),
            att_wo: glorot(h, h, rng),
            att_bo: zeros(h),
            ln1_g: ones(h),
            ln1_b: zeros(h),
            ffn_w1: glorot(h, h, rng),
            ffn_b1: zeros(h),
            ffn_w2: glorot(h, h, rng),
            ffn_b2: zeros(h),
            ln2_g: ones(h),
            ln2_b: zeros(h),
            val_w1: glorot(h, h, rng),
            val_b1: zeros(h),
            val_w2: glorot(h, 1, rng),
            val_b2: zeros(1),
            adv_ws: glorot(h, h, rng),
            adv_wa: glorot(h, h, rng),
            adv_b1: zeros(h),
            adv_w2: glorot(h, 1, rng),
            adv_b2: zeros(1),
        }
    }

    pub fn dims(&self) -> NetDims {
        NetDims {
            embed: self.gcn_w1.nrows(),
            hidden: self.gcn_w1.ncols(),
            max_seq: self.pos.nrows(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Checks that every tensor has the shape implied by [`NetParams::dims`].
    pub fn shapes_consistent(&self) -> bool {
        let NetDims { embed: e, hidden: h, max_seq } = self.dims();
        let expect = |t: &Array2<T>, r: usize, c: usize| t.dim() == (r, c);
        expect(&self.gcn_w1, e, h)
            && expect(&self.pos, max_seq, h)
            && [&self.val_w2, &self.adv_w2].iter().all(|t| expect(t, h, 1))
            && [&self.val_b2, &self.adv_b2].iter().all(|t| expect(t, 1, 1))
            && [
                &self.gcn_w2, &self.att_wq, &self.att_wk, &self.att_wv, &self.att_wo,
                &self.ffn_w1, &self.ffn_w2, &self.val_w1, &self.adv_ws, &self.adv_wa,
            ]
            .iter()
            .all(|t| expect(t, h, h))
            && [
                &self.gcn_b1, &self.gcn_b2, &self.att_bq, &self.att_bk, &self.att_bv,
                &self.att_bo, &self.ln1_g, &self.ln1_b, &self.ffn_b1, &self.ffn_b2,
                &self.ln2_g, &self.ln2_b, &self.val_b1, &self.adv_b1,
            ]
            .iter()
            .all(|t| expect(t, 1, h))
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: T, other: &NetParams<T>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.scaled_add(alpha, b);
        }
    }

    /// `self = (1 - tau) * self + tau * online`.
    pub fn soft_update(&mut self, online: &NetParams<T>, tau: T) {
        for (a, b) in self.tensors_mut().into_iter().zip(online.tensors()) {
            a.zip_mut_with(b, |x, y| *x = (T::one() - tau) * *x + tau * *y);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(T::zero());
        }
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}

/// `x W + b` with `b` a `1 x n` row.
pub fn affine<T: Scalar>(x: &ArrayView2<T>, w: &Array2<T>, b: &Array2<T>) -> Array2<T> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)` and returns `dy W^T`.
pub fn affine_backward<T: Scalar>(
    x: &ArrayView2<T>,
    w: &Array2<T>,
    dy: &Array2<T>,
    dw: &mut Array2<T>,
    db: &mut Array2<T>,
) -> Array2<T> {
    dw.scaled_add(T::one(), &x.t().dot(dy));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&w.t())
}

pub fn relu<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Zeroes `dy` where the pre-activation was not positive.
pub fn relu_backward<T: Scalar>(pre: &Array2<T>, dy: &mut Array2<T>) {
    dy.zip_mut_with(pre, |d, z| {
        if *z <= T::zero() {
            *d = T::zero()
        }
    });
}

/// Row-wise softmax.
pub fn softmax_rows<T: Scalar>(x: &Array2<T>) -> Array2<T> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let m = row.fold(T::neg_infinity(), |a, b| a.max(*b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    y
}

/// Gradient of the pre-softmax input given the softmax output `a`.
pub fn softmax_rows_backward<T: Scalar>(a: &Array2<T>, da: &Array2<T>) -> Array2<T> {
    let mut dx = Array2::zeros(a.raw_dim());
    for ((a, da), mut dx) in a.rows().into_iter().zip(da.rows()).zip(dx.rows_mut()) {
        let inner: T = a.iter().zip(da.iter()).map(|(p, g)| *p * *g).sum();
        for ((p, g), o) in a.iter().zip(da.iter()).zip(dx.iter_mut()) {
            *o = *p * (*g - inner);
        }
    }
    dx
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

pub fn layer_norm<T: Scalar>(
    x: &Array2<T>,
    g: &Array2<T>,
    b: &Array2<T>,
) -> (Array2<T>, LayerNormCache<T>) {
    let n = T::of_usize(x.ncols());
    let eps = T::of(LN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| *v * *v).sum::<T>() / n;
        *is = T::one() / (var + eps).sqrt();
        let s = *is;
        row.mapv_inplace(|v| v * s);
    }
    let mut y = &xhat * g;
    y += b;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    g: &Array2<T>,
    dy: &Array2<T>,
    dg: &mut Array2<T>,
    db: &mut Array2<T>,
) -> Array2<T> {
    *dg += &(dy * &cache.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let n = T::of_usize(dy.ncols());
    let dxhat = dy * g;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
        let dh = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let sum_dh = dh.sum();
        let sum_dh_xh: T = dh.iter().zip(xh.iter()).map(|(a, b)| *a * *b).sum();
        let k = cache.inv_std[i] / n;
        for ((o, d), x) in out.iter_mut().zip(dh.iter()).zip(xh.iter()) {
            *o = k * (n * *d - sum_dh - *x * sum_dh_xh);
        }
    }
    dx
}

/// First `len` rows of the positional table.
pub fn positions<T: Scalar>(pos: &Array2<T>, len: usize) -> ArrayView2<'_, T> {
    pos.slice(s![..len, ..])
}
