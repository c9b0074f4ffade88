//! Forward comparisons of the library against the oracles. Every function
//! returns `(label, largest absolute difference)` pairs.

use kdst::graphio::Graph;
use kdst::numkit::{CsrMatrix, Input, ParamStore, Rng, SparseOperand, Tape, Tensor};
use kdst::sadsd::{consistency_reweight, distill_loss, AttentionSampler, EdgeContext, EdgeSampleState, ProbConfig};
use kdst::students::{FrKanLayer, FrKanPlusLayer, StudentArch, StudentKind, StudentModel};
use kdst::teachers::{GraphContext, TeacherArch, TeacherKind, TeacherLayer, TeacherModel};

use super::*;

pub type Diffs = Vec<(String, f64)>;

/// Binary bag-of-words style features (sparse path) with a few isolated nodes.
pub fn sparse_graph(n: usize, d: usize, k: usize, seed: u64) -> Graph {
    let mut rng = Rng::new(seed);
    let feats: Vec<f32> = (0..n * d).map(|_| if rng.bernoulli(0.1) { 1.0 } else { 0.0 }).collect();
    let mut edges = Vec::new();
    for _ in 0..2 * n {
        let u = rng.below(n as u64 - 3) as usize;
        let v = rng.below(n as u64 - 3) as usize;
        if u != v {
            edges.push((u, v));
        }
    }
    let labels = (0..n).map(|i| i % k).collect();
    Graph::new(Tensor::new(&[n, d], feats).unwrap(), labels, k, &edges).unwrap()
}

/// Graphs of at most 50 nodes: dense features, sparse features with isolated nodes, and a tiny path.
pub fn oracle_graphs() -> Vec<Graph> {
    vec![random_graph(50, 12, 4, 60, 11), sparse_graph(50, 30, 3, 12), random_graph(7, 3, 2, 2, 13)]
}

fn param(store: &ParamStore, name: &str) -> Mat {
    Mat::from_tensor(store.get(store.find(name).unwrap_or_else(|| panic!("no parameter {name}"))))
}

fn vec_param(store: &ParamStore, name: &str) -> Vec<f64> {
    to64(store.get(store.find(name).unwrap_or_else(|| panic!("no parameter {name}"))).data())
}

fn teacher_oracle(t: &TeacherModel, g: &Graph) -> Mat {
    let a = dense_adj(g);
    let mut h = Mat::from_tensor(g.features());
    let last = t.layers.len() - 1;
    for (l, layer) in t.layers.iter().enumerate() {
        let p = |s: &str| format!("layer{l}.{s}");
        let s = &t.store;
        h = match layer {
            TeacherLayer::Gcn(_) => gcn_layer(&a, &h, &param(s, &p("weight")), &vec_param(s, &p("bias"))),
            TeacherLayer::Sage(_) => sage_layer(
                &a,
                &h,
                &param(s, &p("weight_self")),
                &param(s, &p("weight_neigh")),
                &vec_param(s, &p("bias")),
            ),
            TeacherLayer::Gat(gl) => {
                gat_layer(
                    &a,
                    &h,
                    &param(s, &p("weight")),
                    &vec_param(s, &p("attn_src")),
                    &vec_param(s, &p("attn_dst")),
                    &vec_param(s, &p("bias")),
                    gl.heads,
                    gl.head_dim,
                    gl.concat,
                    gl.leaky_relu_slope as f64,
                )
                .1
            }
        };
        if l < last {
            h = match t.arch.kind {
                TeacherKind::Gat => h.map(|v| if v > 0.0 { v } else { v.exp() - 1.0 }),
                _ => h.map(|v| v.max(0.0)),
            };
        }
    }
    h
}

/// Two-layer GCN, SAGE and GAT teachers against dense per-node loops.
pub fn teacher_forwards() -> Diffs {
    let mut out = Vec::new();
    for g in oracle_graphs() {
        for kind in [TeacherKind::Gcn, TeacherKind::Sage, TeacherKind::Gat] {
            let mut arch = TeacherArch::new(kind, g.n_feats(), g.n_classes());
            arch.hidden = 8;
            arch.heads = 3;
            let t = TeacherModel::new(arch, 5).unwrap();
            let diff = max_diff(&t.predict(&g).unwrap(), &teacher_oracle(&t, &g));
            out.push((format!("{kind} forward, {} nodes", g.n_nodes()), diff));
        }
    }
    out
}

/// Per-head GAT attention coefficients.
pub fn gat_attention() -> Diffs {
    let mut out = Vec::new();
    for g in oracle_graphs() {
        let arch = TeacherArch::new(TeacherKind::Gat, g.n_feats(), g.n_classes());
        let t = TeacherModel::new(arch, 2).unwrap();
        let TeacherLayer::Gat(layer) = &t.layers[0] else { unreachable!() };
        let ctx = GraphContext::new(&g);
        let got = layer.attention(&t.store, &ctx.self_loops, g.features()).unwrap();
        let (alphas, _) = gat_layer(
            &dense_adj(&g),
            &Mat::from_tensor(g.features()),
            &param(&t.store, "layer0.weight"),
            &vec_param(&t.store, "layer0.attn_src"),
            &vec_param(&t.store, "layer0.attn_dst"),
            &vec_param(&t.store, "layer0.bias"),
            layer.heads,
            layer.head_dim,
            true,
            layer.leaky_relu_slope as f64,
        );
        let p = &ctx.self_loops;
        let mut worst = 0f64;
        for i in 0..g.n_nodes() {
            for e in p.row_range(i) {
                let j = p.col_idx()[e];
                for h in 0..layer.heads {
                    worst = worst.max((got[e * layer.heads + h] as f64 - alphas[h].at(i, j)).abs());
                }
            }
        }
        out.push((format!("GAT attention, {} nodes", g.n_nodes()), worst));
    }
    out
}

/// Two-layer students of every kind (tanh or ReLU between layers).
pub fn student_forwards() -> Diffs {
    let mut out = Vec::new();
    for g in oracle_graphs() {
        let x = Mat::from_tensor(g.features());
        for kind in [StudentKind::FrkanPlus, StudentKind::Frkan, StudentKind::SplineKan, StudentKind::Mlp] {
            let mut arch = StudentArch::new(kind, g.n_feats(), g.n_classes());
            arch.hidden = vec![6];
            arch.grid = 2;
            let m = StudentModel::new(arch, 9).unwrap();
            let s = &m.store;
            let mut h = x.clone();
            for l in 0..2 {
                let v = |n: &str| vec_param(s, &format!("layer{l}.{n}"));
                let width = if l == 0 { 6 } else { g.n_classes() };
                h = match kind {
                    StudentKind::FrkanPlus => frkan_plus(
                        &h,
                        &v("coeff_real"),
                        &v("coeff_imag"),
                        &v("log_freq"),
                        &v("phase"),
                        &v("bias"),
                        width,
                        true,
                    ),
                    StudentKind::Frkan => frkan(&h, &v("cos_coeff"), &v("sin_coeff"), &v("bias"), width, 2),
                    StudentKind::SplineKan => spline_kan(&h, &v("silu_weight"), &v("spline_coeff"), width, -2.0, 2.0, 7),
                    StudentKind::Mlp => linear(&h, &param(s, &format!("layer{l}.weight")), Some(&v("bias"))),
                };
                if l == 0 {
                    h = if kind == StudentKind::Mlp { h.map(|v| v.max(0.0)) } else { h.map(f64::tanh) };
                }
            }
            out.push((format!("{kind} forward, {} nodes", g.n_nodes()), max_diff(&m.predict(&g).unwrap(), &h)));
        }
    }
    out
}

/// Attention, edge importance, clamped and reweighted probabilities.
pub fn sampling_pipeline() -> Diffs {
    let cfg = ProbConfig::default();
    let mut out = Vec::new();
    for (gi, g) in oracle_graphs().into_iter().enumerate() {
        let mut sampler = AttentionSampler::new(g.n_feats(), 16, 1.0, gi as u64).unwrap();
        // a sharper β so that some probabilities reach the clamps
        sampler.store.get_mut(sampler.log_beta).data_mut()[0] = 4.0;
        let ctx = EdgeContext::new(&g);
        let st = EdgeSampleState::compute(&sampler, &ctx, g.features(), &cfg).unwrap();
        let s = &sampler.store;
        let o = sampler_pipeline(
            &g,
            &Mat::from_tensor(g.features()),
            &param(s, "sampler.w_q"),
            &vec_param(s, "sampler.b_q"),
            &param(s, "sampler.w_k"),
            &vec_param(s, "sampler.b_k"),
            4.0,
            cfg.prob_floor as f64,
            cfg.prob_ceil as f64,
        );
        let p = &ctx.pattern;
        let mut alpha = 0f64;
        for i in 0..g.n_nodes() {
            for e in p.row_range(i) {
                alpha = alpha.max((st.alpha[e] as f64 - o.alpha.at(i, p.col_idx()[e])).abs());
            }
        }
        let worst = |a: &[f32], b: &[f64]| a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max);
        let n = g.n_nodes();
        out.push((format!("sampler attention, {n} nodes"), alpha));
        out.push((format!("edge importance, {n} nodes"), worst(&st.phi, &o.phi)));
        out.push((format!("edge probabilities, {n} nodes"), worst(&st.probs, &o.probs)));

        let mut rng = Rng::new(gi as u64);
        let teacher: Vec<usize> = (0..n).map(|_| rng.below(3) as usize).collect();
        let student: Vec<usize> = (0..n).map(|_| rng.below(3) as usize).collect();
        let got = consistency_reweight(&st.probs, &teacher, &student, g.edges(), &cfg).unwrap();
        let want: Vec<f64> = g
            .edges()
            .iter()
            .zip(&o.probs)
            .map(|(&(u, v), &p)| {
                let factor = match (teacher[u] == student[u], teacher[v] == student[v]) {
                    (true, true) => cfg.weight_true as f64,
                    (false, false) => cfg.weight_false as f64,
                    _ => 1.0,
                };
                (p * factor).clamp(cfg.prob_floor as f64, cfg.prob_ceil as f64)
            })
            .collect();
        out.push((format!("reweighted probabilities, {n} nodes"), worst(&got, &want)));
    }
    out
}

/// `τ²`-scaled mean KL over sampled pairs, source-only and both-endpoint forms.
pub fn distillation_loss() -> Diffs {
    let mut rng = Rng::new(4);
    let (n, k) = (20, 5);
    let t = Tensor::new(&[n, k], rng.normal_vec(n * k, 3.0)).unwrap();
    let s = Tensor::new(&[n, k], rng.normal_vec(n * k, 3.0)).unwrap();
    let pairs: Vec<(usize, usize)> = (0..40).map(|_| (rng.below(n as u64) as usize, rng.below(n as u64) as usize)).collect();
    let mut out = Vec::new();
    for tau in [0.5f32, 1.0, 2.0, 4.0] {
        for both in [false, true] {
            let got = distill_loss(&t, &s, &pairs, tau, both).unwrap() as f64;
            let kl = |i: usize| kl_row(&to64(t.row(i)), &to64(s.row(i)), tau as f64);
            let sum: f64 = pairs.iter().map(|&(i, j)| if both { 0.5 * (kl(i) + kl(j)) } else { kl(i) }).sum();
            let want = (tau as f64).powi(2) * sum / pairs.len() as f64;
            // relative for large losses
            out.push((format!("KD loss, tau {tau}, both endpoints {both}"), (got - want).abs() / want.abs().max(1.0)));
        }
    }
    out
}

/// FR-KAN against FR-KAN+ with `log_freq = ln k`, `φ = 0`, `a = cos_coeff`,
/// `b = −sin_coeff` (every other FR-KAN+ parameter scrambled first).
pub fn embedding_diff(seed: u64, n: usize, d: usize, o: usize, g: usize, sparse: bool) -> f64 {
    let mut rng = Rng::new(seed);
    let mut s1 = ParamStore::new();
    let plain = FrKanLayer::new(&mut s1, "a", d, o, g, &mut rng);
    let bias = rng.normal_vec(o, 0.5);
    s1.get_mut(plain.bias).data_mut().copy_from_slice(&bias);
    let mut s2 = ParamStore::new();
    let plus = FrKanPlusLayer::new(&mut s2, "b", d, o, g, &mut rng);
    for id in [plus.log_freq, plus.phase, plus.coeff_real, plus.coeff_imag] {
        let t = s2.get_mut(id);
        let v = rng.normal_vec(t.len(), 1.0);
        t.data_mut().copy_from_slice(&v);
    }
    let cos = s1.get(plain.cos_coeff).data().to_vec();
    let sin: Vec<f32> = s1.get(plain.sin_coeff).data().iter().map(|v| -v).collect();
    s2.get_mut(plus.coeff_real).data_mut().copy_from_slice(&cos);
    s2.get_mut(plus.coeff_imag).data_mut().copy_from_slice(&sin);
    let lf: Vec<f32> = (1..=g).map(|k| (k as f32).ln()).collect();
    s2.get_mut(plus.log_freq).data_mut().copy_from_slice(&lf);
    s2.get_mut(plus.phase).data_mut().fill(0.0);
    s2.get_mut(plus.bias).data_mut().copy_from_slice(&bias);

    let xs = rng.normal_vec(n * d, 3.0);
    let xs: Vec<f32> = if sparse {
        xs.into_iter().map(|v| if rng.bernoulli(0.3) { v } else { 0.0 }).collect()
    } else {
        xs
    };
    let x = Tensor::new(&[n, d], xs).unwrap();
    let mut tape = Tape::new();
    let input = if sparse {
        Input::Sparse(SparseOperand::new(CsrMatrix::from_dense(&x).unwrap()))
    } else {
        Input::Dense(tape.constant(x))
    };
    let y1 = plain.forward(&mut tape, &s1, &input).unwrap();
    let y2 = plus.forward(&mut tape, &s2, &input).unwrap();
    tape.value(y1).max_abs_diff(tape.value(y2)) as f64
}
