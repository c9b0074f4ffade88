//! Node attention over graph edges and the edge sampling distribution it induces.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graphio::{with_self_loops, Graph};
use crate::numkit::kernels::{dot, matmul};
use crate::numkit::{sigmoid, Backward, CsrMatrix, Input, ParamId, ParamStore, Rng, SparseOperand, Tape, Tensor, Var};

/// Query/key/value projections and the sharpness `β = exp(log_beta)` of the
/// sampling sigmoid.
#[derive(Debug, Clone)]
pub struct AttentionSampler {
    pub in_dim: usize,
    pub attn_dim: usize,
    pub store: ParamStore,
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub log_beta: ParamId,
}

impl AttentionSampler {
    pub fn new(in_dim: usize, attn_dim: usize, beta: f32, seed: u64) -> Result<Self> {
        if in_dim == 0 || attn_dim == 0 {
            return Err(Error::Config("attention dimensions must be positive".into()));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        let mut rng = Rng::derive(seed, 0xA7);
        let mut store = ParamStore::new();
        let mut proj = |store: &mut ParamStore, name: &str| {
            let w = store.add(
                format!("sampler.w_{name}"),
                Tensor::from_parts(vec![in_dim, attn_dim], rng.glorot(in_dim, attn_dim)),
            );
            let b = store.add(format!("sampler.b_{name}"), Tensor::zeros(&[attn_dim]));
            (w, b)
        };
        let (w_q, b_q) = proj(&mut store, "q");
        let (w_k, b_k) = proj(&mut store, "k");
        let (w_v, b_v) = proj(&mut store, "v");
        let log_beta = store.add("sampler.log_beta", Tensor::new(&[1], vec![beta.ln()])?);
        Ok(Self {
            in_dim,
            attn_dim,
            store,
            w_q,
            b_q,
            w_k,
            b_k,
            w_v,
            b_v,
            log_beta,
        })
    }

    pub fn beta(&self) -> f32 {
        self.store.get(self.log_beta).data()[0].exp()
    }

    fn project(&self, tape: &mut Tape, x: &Input, w: ParamId, b: ParamId) -> Result<Var> {
        if x.cols(tape) != self.in_dim {
            return Err(Error::shape(
                "qkv_project",
                format!("input width {}, sampler expects {}", x.cols(tape), self.in_dim),
            ));
        }
        let w = tape.param(&self.store, w);
        let y = x.matmul(tape, w)?;
        let b = tape.param(&self.store, b);
        tape.add_bias(y, b)
    }

    /// Recorded `Q` and `K`; `V` plays no part in the sampling path.
    pub fn query_key(&self, tape: &mut Tape, x: &Input) -> Result<(Var, Var)> {
        Ok((self.project(tape, x, self.w_q, self.b_q)?, self.project(tape, x, self.w_k, self.b_k)?))
    }

    /// Evaluation-mode `(Q, K, V)`, each `[N × H]`.
    pub fn qkv_project(&self, x: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let input = Input::Dense(xv);
        let q = self.project(&mut tape, &input, self.w_q, self.b_q)?;
        let k = self.project(&mut tape, &input, self.w_k, self.b_k)?;
        let v = self.project(&mut tape, &input, self.w_v, self.b_v)?;
        Ok((tape.value(q).clone(), tape.value(k).clone(), tape.value(v).clone()))
    }
}

/// Per-graph constants of the sampling pipeline.
#[derive(Debug, Clone)]
pub struct EdgeContext {
    /// `A + I`; attention is defined on its stored entries.
    pub pattern: Arc<CsrMatrix>,
    /// Undirected edges `(u, v)`, `u < v`, in graph order.
    pub edges: Vec<(usize, usize)>,
    /// Linear map from attention entries to the per-edge mean received attention.
    phi_map: Arc<SparseOperand>,
    /// Minus the uniform-attention baseline of each edge.
    phi_offset: Arc<Vec<f32>>,
}

impl EdgeContext {
    pub fn new(g: &Graph) -> Self {
        let pattern = with_self_loops(g);
        let n = g.n_nodes();
        let count: Vec<f32> = (0..n).map(|u| (g.degree(u) + 1) as f32).collect();
        // entries of column u, found through row u since the pattern is symmetric
        let incoming: Vec<Vec<usize>> = (0..n)
            .map(|u| {
                let cols = &pattern.col_idx()[pattern.row_range(u)];
                cols.iter().map(|&j| pattern.position(j, u).expect("symmetric pattern")).collect()
            })
            .collect();
        let baseline: Vec<f32> = (0..n)
            .map(|u| {
                let cols = &pattern.col_idx()[pattern.row_range(u)];
                cols.iter().map(|&j| 1.0 / count[j]).sum::<f32>() / count[u]
            })
            .collect();
        let mut triplets = Vec::new();
        let mut offset = Vec::with_capacity(g.n_edges());
        for (e, &(u, v)) in g.edges().iter().enumerate() {
            for w in [u, v] {
                let wt = 0.5 / count[w];
                triplets.extend(incoming[w].iter().map(|&k| (e, k, wt)));
            }
            offset.push(-0.5 * (baseline[u] + baseline[v]));
        }
        let phi = CsrMatrix::from_triplets(g.n_edges(), pattern.nnz(), &triplets).expect("valid by construction");
        Self {
            pattern: Arc::new(pattern),
            edges: g.edges().to_vec(),
            phi_map: SparseOperand::new(phi),
            phi_offset: Arc::new(offset),
        }
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

struct EdgeAttention {
    pattern: Arc<CsrMatrix>,
    scale: f32,
}

/// `α` over the entries of `pattern`: row-wise softmax of `Q_i·K_j/√H`. Output `[nnz × 1]`.
pub fn edge_attention(tape: &mut Tape, pattern: &Arc<CsrMatrix>, q: Var, k: Var) -> Result<Var> {
    let (n, h) = tape.value(q).dims2()?;
    if tape.shape(k) != [n, h] || pattern.n_rows() != n || pattern.n_cols() != n {
        return Err(Error::shape(
            "attention_weights",
            format!("Q {:?}, K {:?}, pattern {}x{}", tape.shape(q), tape.shape(k), pattern.n_rows(), pattern.n_cols()),
        ));
    }
    let scale = 1.0 / (h as f32).sqrt();
    let alpha = attention_values(pattern, tape.value(q).data(), tape.value(k).data(), h, scale);
    Ok(tape.push(
        Tensor::from_parts(vec![pattern.nnz(), 1], alpha),
        vec![q, k],
        EdgeAttention {
            pattern: pattern.clone(),
            scale,
        },
    ))
}

fn attention_values(pattern: &CsrMatrix, q: &[f32], k: &[f32], h: usize, scale: f32) -> Vec<f32> {
    let mut alpha = vec![0f32; pattern.nnz()];
    for i in 0..pattern.n_rows() {
        let range = pattern.row_range(i);
        if range.is_empty() {
            continue;
        }
        let qi = &q[i * h..(i + 1) * h];
        let mut max = f32::NEG_INFINITY;
        for e in range.clone() {
            let j = pattern.col_idx()[e];
            let s = dot(qi, &k[j * h..(j + 1) * h]) * scale;
            alpha[e] = s;
            max = max.max(s);
        }
        let mut sum = 0f32;
        for e in range.clone() {
            alpha[e] = (alpha[e] - max).exp();
            sum += alpha[e];
        }
        for e in range {
            alpha[e] /= sum;
        }
    }
    alpha
}

impl Backward for EdgeAttention {
    fn name(&self) -> &'static str {
        "edge_attention"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (q, k) = (inputs[0].data(), inputs[1].data());
        let h = inputs[0].shape()[1];
        let alpha = output.data();
        let mut dq = vec![0f32; q.len()];
        let mut dk = vec![0f32; k.len()];
        for i in 0..self.pattern.n_rows() {
            let range = self.pattern.row_range(i);
            let weighted: f32 = range.clone().map(|e| alpha[e] * g[e]).sum();
            for e in range {
                let j = self.pattern.col_idx()[e];
                let ds = alpha[e] * (g[e] - weighted) * self.scale;
                for c in 0..h {
                    dq[i * h + c] += ds * k[j * h + c];
                    dk[j * h + c] += ds * q[i * h + c];
                }
            }
        }
        vec![Some(dq), Some(dk)]
    }
}

/// Evaluation-mode sparse attention: `α` per stored entry of `pattern`.
pub fn attention_weights(q: &Tensor, k: &Tensor, pattern: &CsrMatrix) -> Result<Vec<f32>> {
    let (n, h) = q.dims2()?;
    if k.shape() != [n, h] || pattern.n_rows() != n {
        return Err(Error::shape("attention_weights", format!("Q {:?}, K {:?}", q.shape(), k.shape())));
    }
    Ok(attention_values(pattern, q.data(), k.data(), h, 1.0 / (h as f32).sqrt()))
}

/// All-pairs attention `softmax_j(Q_i·K_j/√H)` as an `N × N` matrix; for
/// cross-checking the sparse path on small graphs.
pub fn attention_weights_dense(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let (n, h) = q.dims2()?;
    if k.shape() != [n, h] {
        return Err(Error::shape("attention_weights_dense", format!("Q {:?}, K {:?}", q.shape(), k.shape())));
    }
    let kt: Vec<f32> = (0..h).flat_map(|c| (0..n).map(move |j| (c, j))).map(|(c, j)| k.data()[j * h + c]).collect();
    let scale = 1.0 / (h as f32).sqrt();
    let scores: Vec<f32> = matmul(q.data(), &kt, n, h, n).into_iter().map(|s| s * scale).collect();
    Tensor::new(&[n, n], crate::numkit::softmax_rows_data(&scores, n))
}

/// Clamp bounds and agreement factors of the sampling distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbConfig {
    pub prob_floor: f32,
    pub prob_ceil: f32,
    pub weight_true: f32,
    pub weight_false: f32,
}

impl Default for ProbConfig {
    fn default() -> Self {
        Self {
            prob_floor: 0.05,
            prob_ceil: 0.95,
            weight_true: 1.2,
            weight_false: 0.8,
        }
    }
}

impl ProbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.prob_floor && self.prob_floor < self.prob_ceil && self.prob_ceil < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < prob_floor < prob_ceil < 1, got [{}, {}]",
                self.prob_floor, self.prob_ceil
            )));
        }
        if !(self.weight_true >= 1.0 && 1.0 >= self.weight_false && self.weight_false > 0.0) {
            return Err(Error::Config(format!(
                "need weight_true ≥ 1 ≥ weight_false > 0, got {} and {}",
                self.weight_true, self.weight_false
            )));
        }
        Ok(())
    }
}

/// `Φ_e` for every undirected edge, `[E × 1]`. For an endpoint `u`, the mean
/// attention it receives over `N(u) ∪ {u}` is centred by its value under
/// uniform attention; `Φ` averages the two centred endpoint means.
pub fn edge_importance(tape: &mut Tape, ctx: &EdgeContext, alpha: Var) -> Result<Var> {
    let m = tape.spmm(&ctx.phi_map, alpha)?;
    let offset = tape.constant(Tensor::from_parts(vec![ctx.n_edges(), 1], ctx.phi_offset.to_vec()));
    tape.add(m, offset)
}

/// `clamp(sigmoid(β·Φ))`, `[E × 1]`; `log_beta` is a one-element variable.
pub fn edge_sampling_probs(tape: &mut Tape, phi: Var, log_beta: Var, cfg: &ProbConfig) -> Result<Var> {
    let beta = tape.exp(log_beta);
    let z = tape.scale_by(phi, beta)?;
    let p = tape.sigmoid(z);
    Ok(tape.clamp(p, cfg.prob_floor, cfg.prob_ceil))
}

/// Per-edge factor: `weight_true` when teacher and student agree on both
/// endpoints, `weight_false` when they disagree on both, 1 otherwise.
pub fn agreement_factors(edges: &[(usize, usize)], teacher: &[usize], student: &[usize], cfg: &ProbConfig) -> Vec<f32> {
    edges
        .iter()
        .map(|&(u, v)| match (teacher[u] == student[u], teacher[v] == student[v]) {
            (true, true) => cfg.weight_true,
            (false, false) => cfg.weight_false,
            _ => 1.0,
        })
        .collect()
}

/// Recorded reweighting: `clamp(p · factor)`.
pub fn reweight(tape: &mut Tape, p: Var, factors: Vec<f32>, cfg: &ProbConfig) -> Result<Var> {
    let scaled = tape.mul_const(p, Arc::new(factors))?;
    Ok(tape.clamp(scaled, cfg.prob_floor, cfg.prob_ceil))
}

/// Plain-value reweighting of `probs` (one entry per undirected edge).
pub fn consistency_reweight(
    probs: &[f32],
    teacher_argmax: &[usize],
    student_argmax: &[usize],
    edges: &[(usize, usize)],
    cfg: &ProbConfig,
) -> Result<Vec<f32>> {
    if probs.len() != edges.len() {
        return Err(Error::shape("consistency_reweight", format!("{} probs, {} edges", probs.len(), edges.len())));
    }
    if teacher_argmax.len() != student_argmax.len() {
        return Err(Error::shape(
            "consistency_reweight",
            format!("argmax lengths {} and {}", teacher_argmax.len(), student_argmax.len()),
        ));
    }
    let f = agreement_factors(edges, teacher_argmax, student_argmax, cfg);
    Ok(probs
        .iter()
        .zip(f)
        .map(|(p, w)| (p * w).clamp(cfg.prob_floor, cfg.prob_ceil))
        .collect())
}

/// One Bernoulli draw per undirected edge, in edge order.
pub fn sample_edges(probs: &[f32], rng: &mut Rng) -> Vec<bool> {
    probs.iter().map(|&p| rng.bernoulli(p)).collect()
}

/// Expands a per-undirected-edge mask into the directed sampled set `𝒩`.
pub fn sampled_pairs(edges: &[(usize, usize)], mask: &[bool]) -> Vec<(usize, usize)> {
    edges
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .flat_map(|(&(u, v), _)| [(u, v), (v, u)])
        .collect()
}

/// Snapshot of the sampling pipeline for one evaluation of the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSampleState {
    /// Undirected edges `(u, v)`, `u < v`.
    pub edges: Vec<(usize, usize)>,
    /// Attention per stored entry of `A + I` (row `i` = destination).
    pub alpha: Vec<f32>,
    /// `Φ` per undirected edge.
    pub phi: Vec<f32>,
    /// Sampling probability per undirected edge (before reweighting).
    pub probs: Vec<f32>,
    pub config: ProbConfig,
}

impl EdgeSampleState {
    /// Evaluation-mode pass of attention → `Φ` → probabilities.
    pub fn compute(sampler: &AttentionSampler, ctx: &EdgeContext, x: &Tensor, cfg: &ProbConfig) -> Result<Self> {
        cfg.validate()?;
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (q, k) = sampler.query_key(&mut tape, &Input::Dense(xv))?;
        let alpha = edge_attention(&mut tape, &ctx.pattern, q, k)?;
        let phi = edge_importance(&mut tape, ctx, alpha)?;
        let lb = tape.param(&sampler.store, sampler.log_beta);
        let p = edge_sampling_probs(&mut tape, phi, lb, cfg)?;
        Ok(Self {
            edges: ctx.edges.clone(),
            alpha: tape.value(alpha).data().to_vec(),
            phi: tape.value(phi).data().to_vec(),
            probs: tape.value(p).data().to_vec(),
            config: *cfg,
        })
    }
}

/// Scalar `sigmoid(β·φ)` clamped, as used by [`edge_sampling_probs`].
pub fn prob_from_phi(phi: f32, beta: f32, cfg: &ProbConfig) -> f32 {
    sigmoid(beta * phi).clamp(cfg.prob_floor, cfg.prob_ceil)
}
