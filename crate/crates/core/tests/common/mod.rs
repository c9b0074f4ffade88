//! Naive f64 reference implementations and checking helpers shared by the
//! integration tests and the acceptance runner. Nothing here calls into the
//! library's kernels; every formula is written out with explicit loops.

#![allow(dead_code)]

pub mod cases;
pub mod checks;

use kdst::graphio::Graph;
use kdst::numkit::{Rng, Tensor};

/// Row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            [n] => (1, *n),
            s => panic!("unsupported shape {s:?}"),
        };
        Self {
            rows,
            cols,
            data: to64(t.data()),
        }
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut s = 0.0;
                for k in 0..self.cols {
                    s += self.at(i, k) * other.at(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    pub fn add_row(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                self.data[r * self.cols + c] += bias[c];
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

pub fn to64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Largest absolute difference between an f32 tensor and an f64 reference.
pub fn max_diff(t: &Tensor, m: &Mat) -> f64 {
    assert_eq!(t.len(), m.data.len(), "size mismatch");
    t.data().iter().zip(&m.data).map(|(&a, &b)| (a as f64 - b).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------- students

/// `y[n,o] = bias[o] + Σ_i Σ_k a[o,i,k]·cos(ω_k x + φ[i,k]) − b[o,i,k]·sin(ω_k x + φ[i,k])`,
/// optionally minus the same expression at `x = 0`.
#[allow(clippy::too_many_arguments)]
pub fn frkan_plus(x: &Mat, a: &[f64], b: &[f64], log_freq: &[f64], phase: &[f64], bias: &[f64], out: usize, centered: bool) -> Mat {
    let (d, g) = (x.cols, log_freq.len());
    let mut y = Mat::zeros(x.rows, out);
    for n in 0..x.rows {
        for o in 0..out {
            let mut s = bias[o];
            for i in 0..d {
                for k in 0..g {
                    let w = log_freq[k].exp();
                    let ph = phase[i * g + k];
                    let th = w * x.at(n, i) + ph;
                    let idx = (o * d + i) * g + k;
                    s += a[idx] * th.cos() - b[idx] * th.sin();
                    if centered {
                        s -= a[idx] * ph.cos() - b[idx] * ph.sin();
                    }
                }
            }
            y.set(n, o, s);
        }
    }
    y
}

/// `y[n,o] = bias[o] + Σ_i Σ_{k=1..g} c[o,i,k]·cos(k x) + s[o,i,k]·sin(k x)`
pub fn frkan(x: &Mat, c: &[f64], s: &[f64], bias: &[f64], out: usize, g: usize) -> Mat {
    let d = x.cols;
    let mut y = Mat::zeros(x.rows, out);
    for n in 0..x.rows {
        for o in 0..out {
            let mut acc = bias[o];
            for i in 0..d {
                for k in 0..g {
                    let t = (k + 1) as f64 * x.at(n, i);
                    let idx = (o * d + i) * g + k;
                    acc += c[idx] * t.cos() + s[idx] * t.sin();
                }
            }
            y.set(n, o, acc);
        }
    }
    y
}

/// Uniform knot vector with `order` extension knots on each side.
pub fn spline_knots(lo: f64, hi: f64, intervals: usize, order: usize) -> Vec<f64> {
    let h = (hi - lo) / intervals as f64;
    (0..intervals + 1 + 2 * order).map(|j| lo + (j as f64 - order as f64) * h).collect()
}

/// Cox–de Boor recursion: every basis function of degree `order` at `x`.
/// Half-open intervals, except that `x == knots[last interior]` is assigned
/// to the last interior interval.
pub fn cox_de_boor(knots: &[f64], order: usize, x: f64) -> Vec<f64> {
    let m = knots.len();
    let last = m - 1 - order;
    let mut b: Vec<f64> = (0..m - 1)
        .map(|j| {
            let hit = if x == knots[last] {
                j + 1 == last
            } else {
                knots[j] <= x && x < knots[j + 1]
            };
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    for p in 1..=order {
        let next: Vec<f64> = (0..m - 1 - p)
            .map(|j| {
                let left = (x - knots[j]) / (knots[j + p] - knots[j]) * b[j];
                let right = (knots[j + p + 1] - x) / (knots[j + p + 1] - knots[j + 1]) * b[j + 1];
                left + right
            })
            .collect();
        b = next;
    }
    b
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// `y = silu(x)·ωᵀ + Σ_i Σ_k c[o,i,k]·B_k(clamp(x_i))`
pub fn spline_kan(x: &Mat, omega: &[f64], c: &[f64], out: usize, lo: f64, hi: f64, intervals: usize) -> Mat {
    let d = x.cols;
    let knots = spline_knots(lo, hi, intervals, 3);
    let k = intervals + 3;
    let mut y = Mat::zeros(x.rows, out);
    for n in 0..x.rows {
        let bases: Vec<Vec<f64>> = (0..d).map(|i| cox_de_boor(&knots, 3, x.at(n, i).clamp(lo, hi))).collect();
        for o in 0..out {
            let mut s = 0.0;
            for i in 0..d {
                s += omega[o * d + i] * silu(x.at(n, i));
                for j in 0..k {
                    s += c[(o * d + i) * k + j] * bases[i][j];
                }
            }
            y.set(n, o, s);
        }
    }
    y
}

/// `x·W + b` with `W: [in × out]`.
pub fn linear(x: &Mat, w: &Mat, bias: Option<&[f64]>) -> Mat {
    let mut y = x.matmul(w);
    if let Some(b) = bias {
        y.add_row(b);
    }
    y
}

// ---------------------------------------------------------------- graphs

/// Dense 0/1 adjacency from the graph's undirected edge list.
pub fn dense_adj(g: &Graph) -> Mat {
    let n = g.n_nodes();
    let mut a = Mat::zeros(n, n);
    for &(u, v) in g.edges() {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    a
}

/// `D̃^{-1/2}(A + I)D̃^{-1/2}`
pub fn gcn_norm(a: &Mat) -> Mat {
    let n = a.rows;
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + (0..n).map(|j| a.at(i, j)).sum::<f64>()).collect();
    let mut out = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let aij = a.at(i, j) + if i == j { 1.0 } else { 0.0 };
            out.set(i, j, aij / (deg[i] * deg[j]).sqrt());
        }
    }
    out
}

pub fn gcn_layer(a: &Mat, h: &Mat, w: &Mat, bias: &[f64]) -> Mat {
    let mut y = gcn_norm(a).matmul(&h.matmul(w));
    y.add_row(bias);
    y
}

/// `h_i·W_s + mean_{j∈N(i)} h_j·W_n + b`; isolated nodes get no neighbour term.
pub fn sage_layer(a: &Mat, h: &Mat, ws: &Mat, wn: &Mat, bias: &[f64]) -> Mat {
    let n = a.rows;
    let mut mean = Mat::zeros(n, h.cols);
    for i in 0..n {
        let nb: Vec<usize> = (0..n).filter(|&j| a.at(i, j) != 0.0).collect();
        for c in 0..h.cols {
            if !nb.is_empty() {
                mean.set(i, c, nb.iter().map(|&j| h.at(j, c)).sum::<f64>() / nb.len() as f64);
            }
        }
    }
    let mut y = h.matmul(ws);
    let m = mean.matmul(wn);
    for (v, m) in y.data.iter_mut().zip(&m.data) {
        *v += m;
    }
    y.add_row(bias);
    y
}

/// Attention `[n × n]` per head (zero outside `N(i) ∪ {i}`) and the layer output.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer(
    a: &Mat,
    h: &Mat,
    w: &Mat,
    a_src: &[f64],
    a_dst: &[f64],
    bias: &[f64],
    heads: usize,
    dh: usize,
    concat: bool,
    slope: f64,
) -> (Vec<Mat>, Mat) {
    let n = a.rows;
    let z = h.matmul(w);
    let zf = |u: usize, hd: usize, c: usize| z.at(u, hd * dh + c);
    let mut alphas = Vec::with_capacity(heads);
    let width = if concat { heads * dh } else { dh };
    let mut y = Mat::zeros(n, width);
    for hd in 0..heads {
        let mut al = Mat::zeros(n, n);
        for i in 0..n {
            let nb: Vec<usize> = (0..n).filter(|&j| j == i || a.at(i, j) != 0.0).collect();
            let scores: Vec<f64> = nb
                .iter()
                .map(|&j| {
                    let mut e = 0.0;
                    for c in 0..dh {
                        e += a_src[hd * dh + c] * zf(j, hd, c) + a_dst[hd * dh + c] * zf(i, hd, c);
                    }
                    if e > 0.0 {
                        e
                    } else {
                        slope * e
                    }
                })
                .collect();
            let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
            for (&j, s) in nb.iter().zip(&scores) {
                al.set(i, j, (s - mx).exp() / total);
            }
            for c in 0..dh {
                let v: f64 = nb.iter().map(|&j| al.at(i, j) * zf(j, hd, c)).sum();
                if concat {
                    y.set(i, hd * dh + c, v);
                } else {
                    let cur = y.at(i, c);
                    y.set(i, c, cur + v / heads as f64);
                }
            }
        }
        alphas.push(al);
    }
    y.add_row(bias);
    (alphas, y)
}

// ---------------------------------------------------------------- sampler

pub struct SamplerOracle {
    /// Row-softmax of `q_i·k_j/√H` over `N(i) ∪ {i}`, zero elsewhere.
    pub alpha: Mat,
    /// Per undirected edge, in graph edge order.
    pub phi: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Attention, edge importance and clamped probabilities, evaluated directly
/// from the definitions: `Φ(u,v)` is the mean over both endpoints of
/// (mean attention the endpoint receives from `N(w) ∪ {w}`) minus the same
/// quantity under uniform attention.
#[allow(clippy::too_many_arguments)]
pub fn sampler_pipeline(
    g: &Graph,
    x: &Mat,
    wq: &Mat,
    bq: &[f64],
    wk: &Mat,
    bk: &[f64],
    log_beta: f64,
    floor: f64,
    ceil: f64,
) -> SamplerOracle {
    let n = g.n_nodes();
    let a = dense_adj(g);
    let mut q = x.matmul(wq);
    q.add_row(bq);
    let mut k = x.matmul(wk);
    k.add_row(bk);
    let h = q.cols;
    let closed = |i: usize| -> Vec<usize> { (0..n).filter(|&j| j == i || a.at(i, j) != 0.0).collect() };
    let mut alpha = Mat::zeros(n, n);
    for i in 0..n {
        let nb = closed(i);
        let s: Vec<f64> = nb
            .iter()
            .map(|&j| (0..h).map(|c| q.at(i, c) * k.at(j, c)).sum::<f64>() / (h as f64).sqrt())
            .collect();
        let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let tot: f64 = s.iter().map(|v| (v - mx).exp()).sum();
        for (&j, v) in nb.iter().zip(&s) {
            alpha.set(i, j, (v - mx).exp() / tot);
        }
    }
    let received = |w: usize| -> f64 {
        let nb = closed(w);
        nb.iter().map(|&j| alpha.at(j, w)).sum::<f64>() / nb.len() as f64
    };
    let uniform = |w: usize| -> f64 {
        let nb = closed(w);
        nb.iter().map(|&j| 1.0 / closed(j).len() as f64).sum::<f64>() / nb.len() as f64
    };
    let beta = log_beta.exp();
    let phi: Vec<f64> = g
        .edges()
        .iter()
        .map(|&(u, v)| 0.5 * (received(u) - uniform(u)) + 0.5 * (received(v) - uniform(v)))
        .collect();
    let probs = phi.iter().map(|&f| sigmoid(beta * f).clamp(floor, ceil)).collect();
    SamplerOracle { alpha, phi, probs }
}

/// `KL(softmax(t/τ) ‖ softmax(s/τ))` for one row.
pub fn kl_row(teacher: &[f64], student: &[f64], tau: f64) -> f64 {
    let sm = |z: &[f64]| -> Vec<f64> {
        let m = z.iter().map(|v| v / tau).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v / tau - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    let (p, q) = (sm(teacher), sm(student));
    p.iter().zip(&q).map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 }).sum()
}

// ---------------------------------------------------------------- helpers

/// Connected-ish random graph: a path through all nodes plus `extra` random edges.
pub fn random_graph(n: usize, d: usize, k: usize, extra: usize, seed: u64) -> Graph {
    let mut rng = Rng::new(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    for _ in 0..extra {
        let u = rng.below(n as u64) as usize;
        let v = rng.below(n as u64) as usize;
        if u != v {
            edges.push((u.min(v), u.max(v)));
        }
    }
    let features = Tensor::new(&[n, d], rng.normal_vec(n * d, 1.0)).unwrap();
    let labels = (0..n).map(|i| i % k).collect();
    Graph::new(features, labels, k, &edges).unwrap()
}

/// Central differences of `f` at up to `coords` random coordinates of `p`,
/// compared against `analytic`. Returns the largest relative error, using
/// `max(|a|, |n|, floor)` as the denominator.
pub fn grad_check(
    analytic: &[f32],
    p: &[f64],
    f: impl Fn(&[f64]) -> f64,
    coords: usize,
    rng: &mut Rng,
    floor: f64,
) -> f64 {
    assert_eq!(analytic.len(), p.len());
    let mut idx: Vec<usize> = (0..p.len()).collect();
    rng.shuffle(&mut idx);
    idx.truncate(coords.min(p.len()));
    let mut worst = 0f64;
    let mut q = p.to_vec();
    for &i in &idx {
        let h = 1e-5 * p[i].abs().max(1.0);
        q[i] = p[i] + h;
        let up = f(&q);
        q[i] = p[i] - h;
        let down = f(&q);
        q[i] = p[i];
        let num = (up - down) / (2.0 * h);
        let a = analytic[i] as f64;
        let rel = (a - num).abs() / a.abs().max(num.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

/// `Σ w ⊙ y` with the weights used by every gradient check.
pub fn weighted_sum(y: &Mat, w: &[f64]) -> f64 {
    y.data.iter().zip(w).map(|(a, b)| a * b).sum()
}

/// Planted-partition graph: `k` classes of `per_class` nodes, dense edges
/// inside a class, a few across, and noisy class-indicator features.
pub fn planted_graph(k: usize, per_class: usize, d: usize, seed: u64) -> Graph {
    let mut rng = Rng::new(seed);
    let n = k * per_class;
    let labels: Vec<usize> = (0..n).map(|i| i / per_class).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if labels[u] == labels[v] { 0.15 } else { 0.01 };
            if rng.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }
    let mut feats = vec![0f32; n * d];
    for u in 0..n {
        for j in 0..d {
            let signal = if j % k == labels[u] { 0.3 } else { 0.05 };
            if rng.bernoulli(signal) {
                feats[u * d + j] = 1.0;
            }
        }
    }
    Graph::new(Tensor::new(&[n, d], feats).unwrap(), labels, k, &edges).unwrap()
}
