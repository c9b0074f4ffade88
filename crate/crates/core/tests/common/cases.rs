//! Gradient and forward checks of every layer against the f64 oracles.
//!
//! Each case owns a parameter store (inputs included as trainable tensors),
//! a recorded forward pass and an oracle over the same tensors. The scalar
//! checked is `Σ w ⊙ y` for a fixed random `w`.

use std::sync::Arc;

use kdst::graphio::Graph;
use kdst::numkit::{Input, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use kdst::sadsd::{edge_attention, edge_importance, edge_sampling_probs, edge_weighted_mean, kl_rows, EdgeContext, ProbConfig};
use kdst::students::{FrKanLayer, FrKanPlusLayer, LinearLayer, SplineGrid, SplineKanLayer};
use kdst::teachers::{GatLayer, GcnLayer, GraphContext, SageLayer};

use super::*;

type Forward = Box<dyn Fn(&mut Tape, &ParamStore) -> kdst::Result<Var>>;
type Oracle = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;

pub struct Case {
    pub name: String,
    pub store: ParamStore,
    pub ids: Vec<ParamId>,
    pub forward: Forward,
    pub oracle: Oracle,
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    /// Largest forward difference against the oracle.
    pub forward_diff: f64,
    /// `(tensor name, worst relative gradient error)`.
    pub grads: Vec<(String, f64)>,
}

impl CaseResult {
    pub fn worst_grad(&self) -> f64 {
        self.grads.iter().map(|g| g.1).fold(0.0, f64::max)
    }
}

pub const COORDS: usize = 20;
pub const GRAD_TOL: f64 = 1e-3;
/// Denominator floor of the relative error, for coordinates whose gradient is ~0.
pub const GRAD_FLOOR: f64 = 1e-3;

pub fn run_case(case: &Case, seed: u64) -> CaseResult {
    let mut rng = Rng::new(seed);
    let mut tape = Tape::new();
    let y = (case.forward)(&mut tape, &case.store).expect("forward");
    let weights = rng.normal_vec(tape.value(y).len(), 1.0);
    let w64 = to64(&weights);
    let yw = tape.mul_const(y, Arc::new(weights)).expect("weights");
    let loss = tape.sum(yw);
    let params: Vec<Vec<f64>> = case.ids.iter().map(|&id| to64(case.store.get(id).data())).collect();
    let reference = (case.oracle)(&params);
    let forward_diff = tape
        .value(y)
        .data()
        .iter()
        .zip(&reference)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert_eq!(tape.value(y).len(), reference.len(), "{}: oracle size", case.name);
    let grads = tape.backward(loss).expect("backward");
    let mut out = Vec::new();
    for (t, &id) in case.ids.iter().enumerate() {
        let analytic = grads.of_param(&case.store, id).expect("parameter gradient").to_vec();
        let f = |p: &[f64]| {
            let mut all = params.clone();
            all[t] = p.to_vec();
            (case.oracle)(&all).iter().zip(&w64).map(|(a, b)| a * b).sum::<f64>()
        };
        let err = grad_check(&analytic, &params[t], f, COORDS, &mut rng, GRAD_FLOOR);
        out.push((case.store.name(id).to_string(), err));
    }
    CaseResult {
        name: case.name.clone(),
        forward_diff,
        grads: out,
    }
}

fn mat(p: &[f64], rows: usize, cols: usize) -> Mat {
    assert_eq!(p.len(), rows * cols);
    Mat {
        rows,
        cols,
        data: p.to_vec(),
    }
}

fn add_input(store: &mut ParamStore, rng: &mut Rng, n: usize, d: usize, scale: f32) -> ParamId {
    store.add("input", Tensor::new(&[n, d], rng.normal_vec(n * d, scale)).unwrap())
}

fn randomize(store: &mut ParamStore, id: ParamId, rng: &mut Rng, std: f32) {
    let t = store.get_mut(id);
    let n = t.len();
    t.data_mut().copy_from_slice(&rng.normal_vec(n, std));
}

const N: usize = 9;
const D: usize = 4;
const O: usize = 3;

pub fn frkan_case(seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let x = add_input(&mut store, &mut rng, N, D, 1.0);
    let g = 3;
    let layer = FrKanLayer::new(&mut store, "frkan", D, O, g, &mut rng);
    randomize(&mut store, layer.bias, &mut rng, 0.3);
    let ids = vec![x, layer.cos_coeff, layer.sin_coeff, layer.bias];
    Case {
        name: "FR-KAN".into(),
        store,
        ids,
        forward: Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            layer.forward(tape, store, &Input::Dense(xv))
        }),
        oracle: Box::new(move |p| frkan(&mat(&p[0], N, D), &p[1], &p[2], &p[3], O, g).data),
    }
}

pub fn frkan_plus_case(seed: u64, centered: bool) -> Case {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let x = add_input(&mut store, &mut rng, N, D, 1.0);
    let g = 3;
    let layer = FrKanPlusLayer::new(&mut store, "frkan_plus", D, O, g, &mut rng).with_centering(centered);
    randomize(&mut store, layer.phase, &mut rng, 0.7);
    randomize(&mut store, layer.log_freq, &mut rng, 0.4);
    randomize(&mut store, layer.bias, &mut rng, 0.3);
    let ids = vec![x, layer.coeff_real, layer.coeff_imag, layer.log_freq, layer.phase, layer.bias];
    Case {
        name: if centered { "FR-KAN+ (centered)" } else { "FR-KAN+" }.into(),
        store,
        ids,
        forward: Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            layer.forward(tape, store, &Input::Dense(xv))
        }),
        oracle: Box::new(move |p| frkan_plus(&mat(&p[0], N, D), &p[1], &p[2], &p[3], &p[4], &p[5], O, centered).data),
    }
}

pub fn spline_case(seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let x = add_input(&mut store, &mut rng, N, D, 1.0);
    let grid = SplineGrid::default();
    let layer = SplineKanLayer::new(&mut store, "spline", D, O, grid, &mut rng);
    randomize(&mut store, layer.spline_coeff, &mut rng, 0.5);
    let ids = vec![x, layer.silu_weight, layer.spline_coeff];
    Case {
        name: "spline KAN".into(),
        store,
        ids,
        forward: Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            layer.forward(tape, store, &Input::Dense(xv))
        }),
        oracle: Box::new(move |p| {
            spline_kan(&mat(&p[0], N, D), &p[1], &p[2], O, grid.lo as f64, grid.hi as f64, grid.intervals).data
        }),
    }
}

/// Linear → ReLU → Linear.
pub fn mlp_case(seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    let mut store = ParamStore::new();
    let x = add_input(&mut store, &mut rng, N, D, 1.0);
    let hid = 6;
    let l1 = LinearLayer::new(&mut store, "mlp.0", D, hid, true, &mut rng);
    let l2 = LinearLayer::new(&mut store, "mlp.1", hid, O, true, &mut rng);
    let (b1, b2) = (l1.bias.unwrap(), l2.bias.unwrap());
    randomize(&mut store, b1, &mut rng, 0.3);
    randomize(&mut store, b2, &mut rng, 0.3);
    let ids = vec![x, l1.weight, b1, l2.weight, b2];
    Case {
        name: "MLP".into(),
        store,
        ids,
        forward: Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            let h = l1.forward(tape, store, &Input::Dense(xv))?;
            let h = tape.relu(h);
            l2.forward(tape, store, &Input::Dense(h))
        }),
        oracle: Box::new(move |p| {
            let h = linear(&mat(&p[0], N, D), &mat(&p[1], D, hid), Some(&p[2])).map(|v| v.max(0.0));
            linear(&h, &mat(&p[3], hid, O), Some(&p[4])).data
        }),
    }
}

pub fn test_graph(seed: u64) -> Graph {
    random_graph(N, D, O, 8, seed)
}

pub fn gcn_case(seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    let g = test_graph(seed);
    let ctx = GraphContext::new(&g);
    let a = dense_adj(&g);
    let mut store = ParamStore::new();
    let x = add_input(&mut store, &mut rng, N, D, 1.0);
    let layer = GcnLayer::new(&mut store, "gcn", D, O, &mut rng);
    randomize(&mut store, layer.bias, &mut rng, 0.3);
    let ids = vec![x, layer.weight, layer.bias];
    Case {
        name: "GCN".into(),
        store,
        ids,
        forward: Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            layer.forward(tape, store, &ctx.norm_adj, &Input::Dense(xv))
        }),
        oracle: Box::new(move |p| gcn_layer(&a, &mat(&p[0], N, D), &mat(&p[1], D, O), &p[2]).data),
    }
}

pub fn sage_case(seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    let g = test_graph(seed);
    let ctx = GraphContext::new(&g);
    let a = dense_adj(&g);
    let mut store = ParamStore::new();
    let x = add_input(&mut store, &mut rng, N, D, 1.0);
    let layer = SageLayer::new(&mut store, "sage", D, O, &mut rng);
    randomize(&mut store, layer.bias, &mut rng, 0.3);
    let ids = vec![x, layer.weight_self, layer.weight_neigh, layer.bias];
    Case {
        name: "GraphSAGE".into(),
        store,
        ids,
        forward: Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            layer.forward(tape, store, &ctx.mean_adj, &Input::Dense(xv))
        }),
        oracle: Box::new(move |p| {
            sage_layer(&a, &mat(&p[0], N, D), &mat(&p[1], D, O), &mat(&p[2], D, O), &p[3]).data
        }),
    }
}

pub fn gat_case(seed: u64, concat: bool) -> Case {
    let mut rng = Rng::new(seed);
    let g = test_graph(seed);
    let ctx = GraphContext::new(&g);
    let a = dense_adj(&g);
    let mut store = ParamStore::new();
    let x = add_input(&mut store, &mut rng, N, D, 1.0);
    let (heads, dh) = (2, 3);
    let layer = GatLayer::new(&mut store, "gat", D, heads, dh, concat, &mut rng);
    randomize(&mut store, layer.bias, &mut rng, 0.3);
    let ids = vec![x, layer.weight, layer.attn_src, layer.attn_dst, layer.bias];
    let slope = layer.leaky_relu_slope as f64;
    Case {
        name: if concat { "GAT (concat)" } else { "GAT (mean)" }.into(),
        store,
        ids,
        forward: Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            layer.forward(tape, store, &ctx.self_loops, &Input::Dense(xv))
        }),
        oracle: Box::new(move |p| {
            let w = mat(&p[1], D, heads * dh);
            gat_layer(&a, &mat(&p[0], N, D), &w, &p[2], &p[3], &p[4], heads, dh, concat, slope).1.data
        }),
    }
}

/// Attention → edge importance → clamped probabilities.
pub fn sampler_case(seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    let g = test_graph(seed);
    let ctx = EdgeContext::new(&g);
    let cfg = ProbConfig::default();
    let attn = 5;
    let sampler = kdst::sadsd::AttentionSampler::new(D, attn, 1.0, seed).unwrap();
    let mut store = sampler.store.clone();
    let x = add_input(&mut store, &mut rng, N, D, 1.0);
    let (wq, bq, wk, bk, lb) = (sampler.w_q, sampler.b_q, sampler.w_k, sampler.b_k, sampler.log_beta);
    randomize(&mut store, bq, &mut rng, 0.3);
    randomize(&mut store, bk, &mut rng, 0.3);
    // sharp enough for Φ to matter, small enough that no edge sits on a clamp
    store.get_mut(lb).data_mut()[0] = 1.5;
    let ids = vec![x, wq, bq, wk, bk, lb];
    Case {
        name: "attention sampler".into(),
        store,
        ids,
        forward: Box::new(move |tape, store| {
            let xv = tape.param(store, x);
            let input = Input::Dense(xv);
            let w = tape.param(store, wq);
            let q = input.matmul(tape, w)?;
            let b = tape.param(store, bq);
            let q = tape.add_bias(q, b)?;
            let w = tape.param(store, wk);
            let k = input.matmul(tape, w)?;
            let b = tape.param(store, bk);
            let k = tape.add_bias(k, b)?;
            let alpha = edge_attention(tape, &ctx.pattern, q, k)?;
            let phi = edge_importance(tape, &ctx, alpha)?;
            let beta = tape.param(store, lb);
            edge_sampling_probs(tape, phi, beta, &cfg)
        }),
        oracle: Box::new(move |p| {
            let xm = mat(&p[0], N, D);
            let (fl, ce) = (cfg.prob_floor as f64, cfg.prob_ceil as f64);
            sampler_pipeline(&g, &xm, &mat(&p[1], D, attn), &p[2], &mat(&p[3], D, attn), &p[4], p[5][0], fl, ce).probs
        }),
    }
}

/// p-weighted KL over sampled edges, differentiated in the student logits and in p.
pub fn kd_case(seed: u64) -> Case {
    let mut rng = Rng::new(seed);
    let g = test_graph(seed);
    let edges = Arc::new(g.edges().to_vec());
    let mask: Arc<Vec<bool>> = Arc::new((0..edges.len()).map(|_| rng.bernoulli(0.6)).collect());
    let tau = 2.0f32;
    let teacher = rng.normal_vec(N * O, 2.0);
    let t64 = to64(&teacher);
    let teacher_soft = {
        let scaled: Vec<f32> = teacher.iter().map(|v| v / tau).collect();
        Arc::new(Tensor::new(&[N, O], kdst::numkit::softmax_rows_data(&scaled, O)).unwrap())
    };
    let mut store = ParamStore::new();
    let z = store.add("student_logits", Tensor::new(&[N, O], rng.normal_vec(N * O, 2.0)).unwrap());
    let probs: Vec<f32> = (0..edges.len()).map(|_| 0.1 + 0.8 * rng.uniform()).collect();
    let p = store.add("edge_probs", Tensor::new(&[edges.len(), 1], probs).unwrap());
    let ids = vec![z, p];
    let (e2, m2) = (edges.clone(), mask.clone());
    Case {
        name: "distillation loss".into(),
        store,
        ids,
        forward: Box::new(move |tape, store| {
            let zv = tape.param(store, z);
            let kl = kl_rows(tape, zv, &teacher_soft, tau)?;
            let pv = tape.param(store, p);
            edge_weighted_mean(tape, kl, pv, &edges, &mask)
        }),
        oracle: Box::new(move |prm| {
            let kl: Vec<f64> = (0..N)
                .map(|i| kl_row(&t64[i * O..(i + 1) * O], &prm[0][i * O..(i + 1) * O], tau as f64))
                .collect();
            let (mut num, mut den) = (0.0, 0.0);
            for (e, &(u, v)) in e2.iter().enumerate() {
                if m2[e] {
                    num += prm[1][e] * 0.5 * (kl[u] + kl[v]);
                    den += prm[1][e];
                }
            }
            vec![if den > 0.0 { num / den } else { 0.0 }]
        }),
    }
}

pub fn all_cases(seed: u64) -> Vec<Case> {
    vec![
        frkan_case(seed),
        frkan_plus_case(seed, false),
        frkan_plus_case(seed, true),
        spline_case(seed),
        mlp_case(seed),
        gcn_case(seed),
        sage_case(seed),
        gat_case(seed, true),
        gat_case(seed, false),
        sampler_case(seed),
        kd_case(seed),
    ]
}
