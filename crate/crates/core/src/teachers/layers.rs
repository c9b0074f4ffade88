use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numkit::{Backward, CsrMatrix, Input, ParamId, ParamStore, Rng, SparseOperand, Tape, Tensor, Var};

/// `Â·(H·W) + b`
#[derive(Debug, Clone)]
pub struct GcnLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl GcnLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weight = store.add(
            format!("{prefix}.weight"),
            Tensor::from_parts(vec![in_dim, out_dim], rng.glorot(in_dim, out_dim)),
        );
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, adj: &Arc<SparseOperand>, h: &Input) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let hw = h.matmul(tape, w)?;
        let y = tape.spmm(adj, hw)?;
        let b = tape.param(store, self.bias);
        tape.add_bias(y, b)
    }
}

/// `H·W_self + mean_{j∈N(i)}(H_j)·W_neigh + b`
#[derive(Debug, Clone)]
pub struct SageLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight_self: ParamId,
    pub weight_neigh: ParamId,
    pub bias: ParamId,
}

impl SageLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weight_self = store.add(
            format!("{prefix}.weight_self"),
            Tensor::from_parts(vec![in_dim, out_dim], rng.glorot(in_dim, out_dim)),
        );
        let weight_neigh = store.add(
            format!("{prefix}.weight_neigh"),
            Tensor::from_parts(vec![in_dim, out_dim], rng.glorot(in_dim, out_dim)),
        );
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            in_dim,
            out_dim,
            weight_self,
            weight_neigh,
            bias,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mean_adj: &Arc<SparseOperand>, h: &Input) -> Result<Var> {
        let ws = tape.param(store, self.weight_self);
        let wn = tape.param(store, self.weight_neigh);
        let own = h.matmul(tape, ws)?;
        let hn = h.matmul(tape, wn)?;
        let neigh = tape.spmm(mean_adj, hn)?;
        let y = tape.add(own, neigh)?;
        let b = tape.param(store, self.bias);
        tape.add_bias(y, b)
    }
}

/// Multi-head graph attention over `N(i) ∪ {i}`.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub in_dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Concatenate heads (hidden layers) or average them (output layer).
    pub concat: bool,
    pub leaky_relu_slope: f32,
    pub weight: ParamId,
    pub attn_src: ParamId,
    pub attn_dst: ParamId,
    pub bias: ParamId,
}

impl GatLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        heads: usize,
        head_dim: usize,
        concat: bool,
        rng: &mut Rng,
    ) -> Self {
        let width = heads * head_dim;
        let weight = store.add(
            format!("{prefix}.weight"),
            Tensor::from_parts(vec![in_dim, width], rng.glorot(in_dim, width)),
        );
        let attn_src = store.add(
            format!("{prefix}.attn_src"),
            Tensor::from_parts(vec![heads, head_dim], rng.glorot(head_dim, heads)),
        );
        let attn_dst = store.add(
            format!("{prefix}.attn_dst"),
            Tensor::from_parts(vec![heads, head_dim], rng.glorot(head_dim, heads)),
        );
        let out = if concat { width } else { head_dim };
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[out]));
        Self {
            in_dim,
            heads,
            head_dim,
            concat,
            leaky_relu_slope: 0.2,
            weight,
            attn_src,
            attn_dst,
            bias,
        }
    }

    pub fn out_dim(&self) -> usize {
        if self.concat {
            self.heads * self.head_dim
        } else {
            self.head_dim
        }
    }

    /// `pattern` must be `A + I` (every row contains its diagonal).
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, pattern: &Arc<CsrMatrix>, h: &Input) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let z = h.matmul(tape, w)?;
        let a_src = tape.param(store, self.attn_src);
        let a_dst = tape.param(store, self.attn_dst);
        let y = gat_aggregate(tape, pattern, z, a_src, a_dst, self.heads, self.leaky_relu_slope)?;
        let y = if self.concat { y } else { tape.mean_heads(y, self.heads)? };
        let b = tape.param(store, self.bias);
        tape.add_bias(y, b)
    }

    /// Attention coefficients `[nnz × heads]` in pattern order (evaluation only).
    pub fn attention(&self, store: &ParamStore, pattern: &CsrMatrix, x: &Tensor) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.param(store, self.weight);
        let z = tape.matmul(xv, w)?;
        let (alpha, _) = gat_coefficients(
            pattern,
            tape.value(z).data(),
            store.get(self.attn_src).data(),
            store.get(self.attn_dst).data(),
            self.heads,
            self.head_dim,
            self.leaky_relu_slope,
        );
        Ok(alpha)
    }
}

fn head_scores(z: &[f32], attn: &[f32], n: usize, heads: usize, dh: usize) -> Vec<f32> {
    let mut s = vec![0f32; n * heads];
    for u in 0..n {
        for h in 0..heads {
            let zz = &z[(u * heads + h) * dh..(u * heads + h + 1) * dh];
            s[u * heads + h] = crate::numkit::kernels::dot(zz, &attn[h * dh..(h + 1) * dh]);
        }
    }
    s
}

/// Returns `(alpha, pre_activation)`, both `[nnz × heads]`.
fn gat_coefficients(
    pattern: &CsrMatrix,
    z: &[f32],
    a_src: &[f32],
    a_dst: &[f32],
    heads: usize,
    dh: usize,
    slope: f32,
) -> (Vec<f32>, Vec<f32>) {
    let n = pattern.n_rows();
    let ss = head_scores(z, a_src, n, heads, dh);
    let sd = head_scores(z, a_dst, n, heads, dh);
    let nnz = pattern.nnz();
    let mut pre = vec![0f32; nnz * heads];
    let mut alpha = vec![0f32; nnz * heads];
    for i in 0..n {
        let range = pattern.row_range(i);
        for h in 0..heads {
            let mut max = f32::NEG_INFINITY;
            for e in range.clone() {
                let j = pattern.col_idx()[e];
                let p = ss[j * heads + h] + sd[i * heads + h];
                pre[e * heads + h] = p;
                let act = if p > 0.0 { p } else { slope * p };
                alpha[e * heads + h] = act;
                max = max.max(act);
            }
            let mut sum = 0f32;
            for e in range.clone() {
                let v = (alpha[e * heads + h] - max).exp();
                alpha[e * heads + h] = v;
                sum += v;
            }
            for e in range.clone() {
                alpha[e * heads + h] /= sum;
            }
        }
    }
    (alpha, pre)
}

struct GatAggregate {
    pattern: Arc<CsrMatrix>,
    heads: usize,
    head_dim: usize,
    slope: f32,
    alpha: Vec<f32>,
    pre: Vec<f32>,
}

/// `out[i,h,:] = Σ_j α_ij^h z[j,h,:]`; inputs `[z, attn_src, attn_dst]`.
fn gat_aggregate(
    tape: &mut Tape,
    pattern: &Arc<CsrMatrix>,
    z: Var,
    a_src: Var,
    a_dst: Var,
    heads: usize,
    slope: f32,
) -> Result<Var> {
    let (n, width) = tape.value(z).dims2()?;
    let att_shape = tape.shape(a_src).to_vec();
    if att_shape.len() != 2 || att_shape[0] != heads || att_shape[0] * att_shape[1] != width || pattern.n_rows() != n {
        return Err(Error::shape("gat_aggregate", format!("z {n}x{width}, attention {att_shape:?}")));
    }
    let dh = width / heads;
    let zd = tape.value(z).data();
    let (alpha, pre) = gat_coefficients(pattern, zd, tape.value(a_src).data(), tape.value(a_dst).data(), heads, dh, slope);
    let mut out = vec![0f32; n * width];
    for i in 0..n {
        for e in pattern.row_range(i) {
            let j = pattern.col_idx()[e];
            for h in 0..heads {
                let a = alpha[e * heads + h];
                let dst = &mut out[i * width + h * dh..i * width + (h + 1) * dh];
                let src = &zd[j * width + h * dh..j * width + (h + 1) * dh];
                for (o, &s) in dst.iter_mut().zip(src) {
                    *o += a * s;
                }
            }
        }
    }
    Ok(tape.push(
        Tensor::from_parts(vec![n, width], out),
        vec![z, a_src, a_dst],
        GatAggregate {
            pattern: pattern.clone(),
            heads,
            head_dim: dh,
            slope,
            alpha,
            pre,
        },
    ))
}

impl Backward for GatAggregate {
    fn name(&self) -> &'static str {
        "gat_aggregate"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (z, a_src, a_dst) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let (heads, dh) = (self.heads, self.head_dim);
        let width = heads * dh;
        let n = self.pattern.n_rows();
        let dot = crate::numkit::kernels::dot;
        let mut dz = vec![0f32; z.len()];
        let mut ds_src = vec![0f32; n * heads];
        let mut ds_dst = vec![0f32; n * heads];
        let mut dalpha = vec![0f32; self.alpha.len()];
        for i in 0..n {
            let range = self.pattern.row_range(i);
            for h in 0..heads {
                let gi = &g[i * width + h * dh..i * width + (h + 1) * dh];
                let mut weighted = 0f32;
                for e in range.clone() {
                    let j = self.pattern.col_idx()[e];
                    let zj = &z[j * width + h * dh..j * width + (h + 1) * dh];
                    let da = dot(gi, zj);
                    dalpha[e * heads + h] = da;
                    weighted += self.alpha[e * heads + h] * da;
                    let a = self.alpha[e * heads + h];
                    let dzj = &mut dz[j * width + h * dh..j * width + (h + 1) * dh];
                    for (d, &gv) in dzj.iter_mut().zip(gi) {
                        *d += a * gv;
                    }
                }
                for e in range.clone() {
                    let j = self.pattern.col_idx()[e];
                    let k = e * heads + h;
                    let de = self.alpha[k] * (dalpha[k] - weighted);
                    let dp = if self.pre[k] > 0.0 { de } else { self.slope * de };
                    ds_src[j * heads + h] += dp;
                    ds_dst[i * heads + h] += dp;
                }
            }
        }
        let mut da_src = vec![0f32; heads * dh];
        let mut da_dst = vec![0f32; heads * dh];
        for u in 0..n {
            for h in 0..heads {
                let (gs, gd) = (ds_src[u * heads + h], ds_dst[u * heads + h]);
                let off = u * width + h * dh;
                for c in 0..dh {
                    da_src[h * dh + c] += gs * z[off + c];
                    da_dst[h * dh + c] += gd * z[off + c];
                    dz[off + c] += gs * a_src[h * dh + c] + gd * a_dst[h * dh + c];
                }
            }
        }
        vec![Some(dz), Some(da_src), Some(da_dst)]
    }
}
