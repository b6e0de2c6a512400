//! Small self-attention imputer.
//!
//! Each step's `[values, mask]` pair is embedded to `model_dim`, a sinusoidal
//! position code is added, and the sequence passes through `blocks` encoder
//! blocks (multi-head attention and a `tanh` feed-forward, both residual).
//! A linear head maps back to `D` values per step.

use super::linalg::{add_row_bias, col_sum_acc, matmul, matmul_nt, matmul_tn_acc};
use super::ParamBlock;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
struct BlockOffsets {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    len: usize,
    dims: usize,
    model_dim: usize,
    heads: usize,
    ff_dim: usize,
    embed_w: usize,
    embed_b: usize,
    layers: Vec<BlockOffsets>,
    out_w: usize,
    out_b: usize,
    count: usize,
    positions: Vec<f64>,
}

struct BlockCache {
    input: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights per head, `T x T` each.
    weights: Vec<Vec<f64>>,
    heads_out: Vec<f64>,
    mid: Vec<f64>,
    ff_hidden: Vec<f64>,
}

pub(crate) struct Cache {
    input: Vec<f64>,
    blocks: Vec<BlockCache>,
    last_hidden: Vec<f64>,
    output: Vec<f64>,
}

fn sinusoidal_positions(len: usize, model_dim: usize) -> Vec<f64> {
    let mut pe = vec![0.0; len * model_dim];
    for t in 0..len {
        for i in 0..model_dim {
            let pair = (i / 2) as f64;
            let angle = t as f64 / 10_000f64.powf(2.0 * pair / model_dim as f64);
            pe[t * model_dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

impl Attention {
    pub fn new(
        len: usize,
        dims: usize,
        model_dim: usize,
        heads: usize,
        blocks: usize,
        ff_dim: usize,
    ) -> Result<Self> {
        if model_dim == 0 || heads == 0 || blocks == 0 || ff_dim == 0 {
            return Err(Error::Argument(
                "attention sizes (model_dim, heads, blocks, ff_dim) must be >= 1".into(),
            ));
        }
        if !model_dim.is_multiple_of(heads) {
            return Err(Error::Argument(format!(
                "model_dim {model_dim} is not divisible by {heads} heads"
            )));
        }
        let mut at = 0;
        let mut take = |n: usize| {
            let start = at;
            at += n;
            start
        };
        let (dm, ff) = (model_dim, ff_dim);
        let embed_w = take(2 * dims * dm);
        let embed_b = take(dm);
        let layers = (0..blocks)
            .map(|_| BlockOffsets {
                wq: take(dm * dm),
                bq: take(dm),
                wk: take(dm * dm),
                bk: take(dm),
                wv: take(dm * dm),
                bv: take(dm),
                wo: take(dm * dm),
                bo: take(dm),
                w1: take(dm * ff),
                b1: take(ff),
                w2: take(ff * dm),
                b2: take(dm),
            })
            .collect();
        let out_w = take(dm * dims);
        let out_b = take(dims);
        Ok(Self {
            len,
            dims,
            model_dim,
            heads,
            ff_dim,
            embed_w,
            embed_b,
            layers,
            out_w,
            out_b,
            count: at,
            positions: sinusoidal_positions(len, model_dim),
        })
    }

    pub fn param_count(&self) -> usize {
        self.count
    }

    pub(crate) fn blocks(&self) -> Vec<ParamBlock> {
        let (dm, ff, d) = (self.model_dim, self.ff_dim, self.dims);
        let mut out = vec![
            ParamBlock::new(self.embed_w, 2 * d * dm, 2 * d),
            ParamBlock::new(self.embed_b, dm, 2 * d),
        ];
        for b in &self.layers {
            for (w, bias) in [(b.wq, b.bq), (b.wk, b.bk), (b.wv, b.bv), (b.wo, b.bo)] {
                out.push(ParamBlock::new(w, dm * dm, dm));
                out.push(ParamBlock::new(bias, dm, dm));
            }
            out.push(ParamBlock::new(b.w1, dm * ff, dm));
            out.push(ParamBlock::new(b.b1, ff, dm));
            out.push(ParamBlock::new(b.w2, ff * dm, ff));
            out.push(ParamBlock::new(b.b2, dm, ff));
        }
        out.push(ParamBlock::new(self.out_w, dm * d, dm));
        out.push(ParamBlock::new(self.out_b, d, dm));
        out
    }

    fn slice(params: &[f64], at: usize, n: usize) -> &[f64] {
        &params[at..at + n]
    }

    pub(crate) fn forward(&self, params: &[f64], observed: &[f64], mask: &[f64]) -> Cache {
        let (t, d, dm, ff) = (self.len, self.dims, self.model_dim, self.ff_dim);
        let mut input = Vec::with_capacity(t * 2 * d);
        for s in 0..t {
            input.extend_from_slice(&observed[s * d..(s + 1) * d]);
            input.extend_from_slice(&mask[s * d..(s + 1) * d]);
        }
        let mut h = matmul(
            &input,
            Self::slice(params, self.embed_w, 2 * d * dm),
            t,
            2 * d,
            dm,
        );
        add_row_bias(&mut h, Self::slice(params, self.embed_b, dm));
        for (v, p) in h.iter_mut().zip(&self.positions) {
            *v += p;
        }

        let dh = dm / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut blocks = Vec::with_capacity(self.layers.len());
        for b in &self.layers {
            let project = |w: usize, bias: usize| {
                let mut x = matmul(&h, Self::slice(params, w, dm * dm), t, dm, dm);
                add_row_bias(&mut x, Self::slice(params, bias, dm));
                x
            };
            let q = project(b.wq, b.bq);
            let k = project(b.wk, b.bk);
            let v = project(b.wv, b.bv);

            let mut heads_out = vec![0.0; t * dm];
            let mut weights = Vec::with_capacity(self.heads);
            for head in 0..self.heads {
                let off = head * dh;
                let mut a = vec![0.0; t * t];
                for i in 0..t {
                    let qi = &q[i * dm + off..i * dm + off + dh];
                    let row = &mut a[i * t..(i + 1) * t];
                    for (j, r) in row.iter_mut().enumerate() {
                        let kj = &k[j * dm + off..j * dm + off + dh];
                        *r = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                    }
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for r in row.iter_mut() {
                        *r = (*r - max).exp();
                        z += *r;
                    }
                    for r in row.iter_mut() {
                        *r /= z;
                    }
                    let out = &mut heads_out[i * dm + off..i * dm + off + dh];
                    for (j, &w) in row.iter().enumerate() {
                        for (o, vv) in out.iter_mut().zip(&v[j * dm + off..j * dm + off + dh]) {
                            *o += w * vv;
                        }
                    }
                }
                weights.push(a);
            }

            let mut mid = matmul(&heads_out, Self::slice(params, b.wo, dm * dm), t, dm, dm);
            add_row_bias(&mut mid, Self::slice(params, b.bo, dm));
            for (m, x) in mid.iter_mut().zip(&h) {
                *m += x;
            }

            let mut ff_hidden = matmul(&mid, Self::slice(params, b.w1, dm * ff), t, dm, ff);
            add_row_bias(&mut ff_hidden, Self::slice(params, b.b1, ff));
            ff_hidden.iter_mut().for_each(|x| *x = x.tanh());
            let mut next = matmul(&ff_hidden, Self::slice(params, b.w2, ff * dm), t, ff, dm);
            add_row_bias(&mut next, Self::slice(params, b.b2, dm));
            for (n, m) in next.iter_mut().zip(&mid) {
                *n += m;
            }

            let input = std::mem::replace(&mut h, next);
            blocks.push(BlockCache {
                input,
                q,
                k,
                v,
                weights,
                heads_out,
                mid,
                ff_hidden,
            });
        }

        let mut output = matmul(&h, Self::slice(params, self.out_w, dm * d), t, dm, d);
        add_row_bias(&mut output, Self::slice(params, self.out_b, d));
        Cache {
            input,
            blocks,
            last_hidden: h,
            output,
        }
    }

    pub(crate) fn output(cache: &Cache) -> &[f64] {
        &cache.output
    }

    pub(crate) fn backward(&self, params: &[f64], cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
        let (t, d, dm, ff) = (self.len, self.dims, self.model_dim, self.ff_dim);
        let dh = dm / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        matmul_tn_acc(
            &mut grad[self.out_w..self.out_w + dm * d],
            &cache.last_hidden,
            d_out,
            t,
            dm,
            d,
        );
        col_sum_acc(&mut grad[self.out_b..self.out_b + d], d_out);
        let mut dh_next = matmul_nt(d_out, Self::slice(params, self.out_w, dm * d), t, d, dm);

        for (b, c) in self.layers.iter().zip(&cache.blocks).rev() {
            // feed-forward residual
            let d_block_out = dh_next;
            let mut d_mid = d_block_out.clone();
            matmul_tn_acc(
                &mut grad[b.w2..b.w2 + ff * dm],
                &c.ff_hidden,
                &d_block_out,
                t,
                ff,
                dm,
            );
            col_sum_acc(&mut grad[b.b2..b.b2 + dm], &d_block_out);
            let mut d_pre = matmul_nt(&d_block_out, Self::slice(params, b.w2, ff * dm), t, dm, ff);
            for (g, a) in d_pre.iter_mut().zip(&c.ff_hidden) {
                *g *= 1.0 - a * a;
            }
            matmul_tn_acc(&mut grad[b.w1..b.w1 + dm * ff], &c.mid, &d_pre, t, dm, ff);
            col_sum_acc(&mut grad[b.b1..b.b1 + ff], &d_pre);
            let back = matmul_nt(&d_pre, Self::slice(params, b.w1, dm * ff), t, ff, dm);
            for (x, y) in d_mid.iter_mut().zip(&back) {
                *x += y;
            }

            // attention residual
            matmul_tn_acc(
                &mut grad[b.wo..b.wo + dm * dm],
                &c.heads_out,
                &d_mid,
                t,
                dm,
                dm,
            );
            col_sum_acc(&mut grad[b.bo..b.bo + dm], &d_mid);
            let d_heads = matmul_nt(&d_mid, Self::slice(params, b.wo, dm * dm), t, dm, dm);
            let mut d_in = d_mid;

            let mut dq = vec![0.0; t * dm];
            let mut dk = vec![0.0; t * dm];
            let mut dv = vec![0.0; t * dm];
            for head in 0..self.heads {
                let off = head * dh;
                let a = &c.weights[head];
                for i in 0..t {
                    let go = &d_heads[i * dm + off..i * dm + off + dh];
                    let arow = &a[i * t..(i + 1) * t];
                    let mut da = vec![0.0; t];
                    for j in 0..t {
                        let vj = &c.v[j * dm + off..j * dm + off + dh];
                        da[j] = go.iter().zip(vj).map(|(x, y)| x * y).sum();
                        let w = arow[j];
                        for (g, x) in dv[j * dm + off..j * dm + off + dh].iter_mut().zip(go) {
                            *g += w * x;
                        }
                    }
                    let dot: f64 = arow.iter().zip(&da).map(|(x, y)| x * y).sum();
                    for j in 0..t {
                        let ds = arow[j] * (da[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        for c_ in 0..dh {
                            dq[i * dm + off + c_] += ds * c.k[j * dm + off + c_];
                            dk[j * dm + off + c_] += ds * c.q[i * dm + off + c_];
                        }
                    }
                }
            }

            for (w, bias, g) in [(b.wq, b.bq, &dq), (b.wk, b.bk, &dk), (b.wv, b.bv, &dv)] {
                matmul_tn_acc(&mut grad[w..w + dm * dm], &c.input, g, t, dm, dm);
                col_sum_acc(&mut grad[bias..bias + dm], g);
                let back = matmul_nt(g, Self::slice(params, w, dm * dm), t, dm, dm);
                for (x, y) in d_in.iter_mut().zip(&back) {
                    *x += y;
                }
            }
            dh_next = d_in;
        }

        matmul_tn_acc(
            &mut grad[self.embed_w..self.embed_w + 2 * d * dm],
            &cache.input,
            &dh_next,
            t,
            2 * d,
            dm,
        );
        col_sum_acc(&mut grad[self.embed_b..self.embed_b + dm], &dh_next);
    }
}
