//! Fourier KAN layers.
//!
//! `FrKanPlusLayer` computes, per output `o`,
//! `bias[o] + Σ_i Σ_k Re((a[o,i,k] + i·b[o,i,k]) · e^{i(ω_k x_i + φ[i,k])})`
//! with `ω_k = exp(log_freq[k])`. The dense path builds the `[B × D·g]` cosine
//! and sine blocks once and contracts them against the coefficients with two
//! matrix products. For constant sparse inputs the contraction is split into
//! an all-zero baseline plus per-non-zero corrections.
//!
//! A centered layer subtracts its own response to `x = 0`, i.e. uses
//! `cos(ω_k x_i + φ) − cos φ` and `sin(ω_k x_i + φ) − sin φ`. The function
//! class is unchanged (the difference is a constant per output, which the
//! bias absorbs), but the summed zero-input response of a wide sparse input no
//! longer drifts with every coefficient update.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numkit::kernels::{matmul, matmul_nt, matmul_tn};
use crate::numkit::{Backward, Input, ParamId, ParamStore, Rng, SparseOperand, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct FrKanPlusLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub grid: usize,
    pub coeff_real: ParamId,
    pub coeff_imag: ParamId,
    pub log_freq: ParamId,
    pub phase: ParamId,
    pub bias: ParamId,
    pub centered: bool,
}

impl FrKanPlusLayer {
    /// `log_freq = ln k`, `φ = 0`, coefficients `~ N(0, 1/(D·g))`, zero bias.
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, grid: usize, rng: &mut Rng) -> Self {
        let n = out_dim * in_dim * grid;
        let std = (1.0 / (in_dim * grid) as f32).sqrt();
        let shape = [out_dim, in_dim, grid];
        let coeff_real = store.add(format!("{prefix}.coeff_real"), Tensor::from_parts(shape.to_vec(), rng.normal_vec(n, std)));
        let coeff_imag = store.add(format!("{prefix}.coeff_imag"), Tensor::from_parts(shape.to_vec(), rng.normal_vec(n, std)));
        let log_freq = store.add(
            format!("{prefix}.log_freq"),
            Tensor::from_parts(vec![grid], (1..=grid).map(|k| (k as f32).ln()).collect()),
        );
        let phase = store.add(format!("{prefix}.phase"), Tensor::zeros(&[in_dim, grid]));
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            in_dim,
            out_dim,
            grid,
            coeff_real,
            coeff_imag,
            log_freq,
            phase,
            bias,
            centered: false,
        }
    }

    pub fn with_centering(mut self, centered: bool) -> Self {
        self.centered = centered;
        self
    }

    /// `2·O·D·g + g + D·g + O`
    pub fn param_count(&self) -> usize {
        2 * self.out_dim * self.in_dim * self.grid + self.grid + self.in_dim * self.grid + self.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &Input) -> Result<Var> {
        if x.cols(tape) != self.in_dim {
            return Err(Error::shape(
                "frkan_plus_forward",
                format!("input width {}, layer expects {}", x.cols(tape), self.in_dim),
            ));
        }
        let a = tape.param(store, self.coeff_real);
        let b = tape.param(store, self.coeff_imag);
        let lf = tape.param(store, self.log_freq);
        let ph = tape.param(store, self.phase);
        let y = match x {
            Input::Dense(x) => fourier_plus_dense(tape, *x, a, b, lf, ph, self.grid, self.centered),
            Input::Sparse(s) => fourier_plus_sparse(tape, s, a, b, lf, ph, self.grid, self.centered),
        };
        let bias = tape.param(store, self.bias);
        tape.add_bias(y, bias)
    }
}

struct FourierPlusDense {
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    grid: usize,
    omega: Vec<f32>,
    // cos/sin of φ when centered, else empty
    base_cos: Vec<f32>,
    base_sin: Vec<f32>,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

/// Inputs: `[x, a, b, log_freq, phase]`.
#[allow(clippy::too_many_arguments)]
fn fourier_plus_dense(tape: &mut Tape, x: Var, a: Var, b: Var, lf: Var, ph: Var, grid: usize, centered: bool) -> Var {
    let (batch, in_dim) = tape.value(x).dims2().expect("checked by caller");
    let out_dim = tape.shape(a)[0];
    let omega: Vec<f32> = tape.value(lf).data().iter().map(|v| v.exp()).collect();
    let xd = tape.value(x).data();
    let phd = tape.value(ph).data();
    let width = in_dim * grid;
    let mut cos = vec![0f32; batch * width];
    let mut sin = vec![0f32; batch * width];
    for n in 0..batch {
        for i in 0..in_dim {
            let xv = xd[n * in_dim + i];
            for k in 0..grid {
                let theta = omega[k] * xv + phd[i * grid + k];
                let (s, c) = theta.sin_cos();
                cos[n * width + i * grid + k] = c;
                sin[n * width + i * grid + k] = s;
            }
        }
    }
    let (base_sin, base_cos): (Vec<f32>, Vec<f32>) = if centered {
        phd.iter().map(|p| p.sin_cos()).unzip()
    } else {
        (Vec::new(), Vec::new())
    };
    let shifted = |block: &[f32], base: &[f32]| -> Vec<f32> {
        if base.is_empty() {
            return block.to_vec();
        }
        block.iter().enumerate().map(|(j, v)| v - base[j % width]).collect()
    };
    let yc = matmul_nt(&shifted(&cos, &base_cos), tape.value(a).data(), batch, width, out_dim);
    let ys = matmul_nt(&shifted(&sin, &base_sin), tape.value(b).data(), batch, width, out_dim);
    let y: Vec<f32> = yc.iter().zip(&ys).map(|(c, s)| c - s).collect();
    tape.push(
        Tensor::from_parts(vec![batch, out_dim], y),
        vec![x, a, b, lf, ph],
        FourierPlusDense {
            batch,
            in_dim,
            out_dim,
            grid,
            omega,
            base_cos,
            base_sin,
            cos,
            sin,
        },
    )
}

impl Backward for FourierPlusDense {
    fn name(&self) -> &'static str {
        "frkan_plus_dense"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (bsz, d, o, gr) = (self.batch, self.in_dim, self.out_dim, self.grid);
        let width = d * gr;
        let gsum = (!self.base_cos.is_empty()).then(|| crate::numkit::kernels::sum_rows(g, bsz, o));
        let da = needs[1].then(|| {
            let mut v = matmul_tn(g, &self.cos, bsz, o, width);
            if let Some(gs) = &gsum {
                for (r, row) in v.chunks_mut(width).enumerate() {
                    row.iter_mut().zip(&self.base_cos).for_each(|(x, c)| *x -= gs[r] * c);
                }
            }
            v
        });
        let db = needs[2].then(|| {
            let mut v = matmul_tn(g, &self.sin, bsz, o, width);
            if let Some(gs) = &gsum {
                for (r, row) in v.chunks_mut(width).enumerate() {
                    row.iter_mut().zip(&self.base_sin).for_each(|(x, s)| *x -= gs[r] * s);
                }
            }
            v.iter_mut().for_each(|x| *x = -*x);
            v
        });
        let mut out = vec![None, da, db, None, None];
        if !(needs[0] || needs[3] || needs[4]) {
            return out;
        }
        let dc = matmul(g, inputs[1].data(), bsz, o, width);
        let ds = matmul(g, inputs[2].data(), bsz, o, width);
        // dθ = −dC·sin + dS·cos with dS = −g·b
        let dtheta: Vec<f32> = (0..bsz * width)
            .map(|j| -dc[j] * self.sin[j] - ds[j] * self.cos[j])
            .collect();
        let x = inputs[0].data();
        if needs[0] {
            let mut dx = vec![0f32; bsz * d];
            for n in 0..bsz {
                for i in 0..d {
                    let base = n * width + i * gr;
                    dx[n * d + i] = (0..gr).map(|k| dtheta[base + k] * self.omega[k]).sum();
                }
            }
            out[0] = Some(dx);
        }
        if needs[3] {
            let mut dlf = vec![0f32; gr];
            for n in 0..bsz {
                for i in 0..d {
                    let xv = x[n * d + i];
                    let base = n * width + i * gr;
                    for k in 0..gr {
                        dlf[k] += dtheta[base + k] * xv;
                    }
                }
            }
            for k in 0..gr {
                dlf[k] *= self.omega[k];
            }
            out[3] = Some(dlf);
        }
        if needs[4] {
            let mut dph = vec![0f32; width];
            for n in 0..bsz {
                crate::numkit::kernels::add_assign(&mut dph, &dtheta[n * width..(n + 1) * width]);
            }
            if !self.base_cos.is_empty() {
                // subtracted baseline: (g·a)·sin φ + (g·b)·cos φ per row
                for n in 0..bsz {
                    for j in 0..width {
                        dph[j] += dc[n * width + j] * self.base_sin[j] + ds[n * width + j] * self.base_cos[j];
                    }
                }
            }
            out[4] = Some(dph);
        }
        out
    }
}

struct FourierPlusSparse {
    x: Arc<SparseOperand>,
    out_dim: usize,
    grid: usize,
    centered: bool,
    omega: Vec<f32>,
    base_cos: Vec<f32>,
    base_sin: Vec<f32>,
    // cos/sin of θ at every stored entry, [nnz × g]
    cos: Vec<f32>,
    sin: Vec<f32>,
}

/// Inputs: `[a, b, log_freq, phase]`; `x` is constant.
#[allow(clippy::too_many_arguments)]
fn fourier_plus_sparse(
    tape: &mut Tape,
    x: &Arc<SparseOperand>,
    a: Var,
    b: Var,
    lf: Var,
    ph: Var,
    grid: usize,
    centered: bool,
) -> Var {
    let m = &x.matrix;
    let (batch, in_dim) = (m.n_rows(), m.n_cols());
    let out_dim = tape.shape(a)[0];
    let width = in_dim * grid;
    let omega: Vec<f32> = tape.value(lf).data().iter().map(|v| v.exp()).collect();
    let phd = tape.value(ph).data();
    let (base_sin, base_cos): (Vec<f32>, Vec<f32>) = phd.iter().map(|p| p.sin_cos()).unzip();
    // coefficients as [D·g × O] so a row is contiguous over outputs
    let at = transpose(tape.value(a).data(), out_dim, width);
    let bt = transpose(tape.value(b).data(), out_dim, width);

    let mut y0 = vec![0f32; out_dim];
    for j in 0..if centered { 0 } else { width } {
        for o in 0..out_dim {
            y0[o] += at[j * out_dim + o] * base_cos[j] - bt[j * out_dim + o] * base_sin[j];
        }
    }
    let nnz = m.nnz();
    let mut cos = vec![0f32; nnz * grid];
    let mut sin = vec![0f32; nnz * grid];
    let mut y = vec![0f32; batch * out_dim];
    for n in 0..batch {
        let row = &mut y[n * out_dim..(n + 1) * out_dim];
        row.copy_from_slice(&y0);
        for e in m.row_range(n) {
            let (i, v) = (m.col_idx()[e], m.values()[e]);
            for k in 0..grid {
                let j = i * grid + k;
                let (s, c) = (omega[k] * v + phd[j]).sin_cos();
                cos[e * grid + k] = c;
                sin[e * grid + k] = s;
                let (dc, ds) = (c - base_cos[j], s - base_sin[j]);
                for o in 0..out_dim {
                    row[o] += at[j * out_dim + o] * dc - bt[j * out_dim + o] * ds;
                }
            }
        }
    }
    tape.push(
        Tensor::from_parts(vec![batch, out_dim], y),
        vec![a, b, lf, ph],
        FourierPlusSparse {
            x: x.clone(),
            out_dim,
            grid,
            centered,
            omega,
            base_cos,
            base_sin,
            cos,
            sin,
        },
    )
}

fn transpose(a: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut t = vec![0f32; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}

impl Backward for FourierPlusSparse {
    fn name(&self) -> &'static str {
        "frkan_plus_sparse"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let m = &self.x.matrix;
        let (batch, o_dim, gr) = (m.n_rows(), self.out_dim, self.grid);
        let width = m.n_cols() * gr;
        let gsum = crate::numkit::kernels::sum_rows(g, batch, o_dim);
        let at = transpose(inputs[0].data(), o_dim, width);
        let bt = transpose(inputs[1].data(), o_dim, width);

        // coefficient gradients, accumulated as [D·g × O]
        let mut dat = vec![0f32; width * o_dim];
        let mut dbt = vec![0f32; width * o_dim];
        let centered = self.centered;
        for j in 0..if centered { 0 } else { width } {
            for o in 0..o_dim {
                dat[j * o_dim + o] = gsum[o] * self.base_cos[j];
                dbt[j * o_dim + o] = -gsum[o] * self.base_sin[j];
            }
        }
        let need_theta = needs[2] || needs[3];
        let mut dlf = vec![0f32; gr];
        let mut dph = vec![0f32; width];
        if needs[3] && !centered {
            // every row contributes its all-zero-input term; corrected below
            for j in 0..width {
                let (mut ga, mut gb) = (0f32, 0f32);
                for o in 0..o_dim {
                    ga += gsum[o] * at[j * o_dim + o];
                    gb += gsum[o] * bt[j * o_dim + o];
                }
                dph[j] = -ga * self.base_sin[j] - gb * self.base_cos[j];
            }
        }
        for n in 0..batch {
            let gr_row = &g[n * o_dim..(n + 1) * o_dim];
            for e in m.row_range(n) {
                let (i, v) = (m.col_idx()[e], m.values()[e]);
                for k in 0..gr {
                    let j = i * gr + k;
                    let (c, s) = (self.cos[e * gr + k], self.sin[e * gr + k]);
                    let (dc, ds) = (c - self.base_cos[j], s - self.base_sin[j]);
                    for o in 0..o_dim {
                        dat[j * o_dim + o] += gr_row[o] * dc;
                        dbt[j * o_dim + o] -= gr_row[o] * ds;
                    }
                    if need_theta {
                        let (mut ga, mut gb) = (0f32, 0f32);
                        for o in 0..o_dim {
                            ga += gr_row[o] * at[j * o_dim + o];
                            gb += gr_row[o] * bt[j * o_dim + o];
                        }
                        // dC = ga, dS = −gb ; dθ = −dC·sin + dS·cos
                        let dtheta = -ga * s - gb * c;
                        let dtheta_zero = -ga * self.base_sin[j] - gb * self.base_cos[j];
                        dph[j] += dtheta - dtheta_zero;
                        dlf[k] += dtheta * v;
                    }
                }
            }
        }
        for k in 0..gr {
            dlf[k] *= self.omega[k];
        }
        vec![
            needs[0].then(|| transpose(&dat, width, o_dim)),
            needs[1].then(|| transpose(&dbt, width, o_dim)),
            needs[2].then_some(dlf),
            needs[3].then_some(dph),
        ]
    }
}

/// Classic Fourier KAN layer with fixed integer frequencies `k = 1..g`.
#[derive(Debug, Clone)]
pub struct FrKanLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub grid: usize,
    pub cos_coeff: ParamId,
    pub sin_coeff: ParamId,
    pub bias: ParamId,
}

impl FrKanLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, out_dim: usize, grid: usize, rng: &mut Rng) -> Self {
        let n = out_dim * in_dim * grid;
        let std = (1.0 / (in_dim * grid) as f32).sqrt();
        let shape = vec![out_dim, in_dim, grid];
        let cos_coeff = store.add(format!("{prefix}.cos_coeff"), Tensor::from_parts(shape.clone(), rng.normal_vec(n, std)));
        let sin_coeff = store.add(format!("{prefix}.sin_coeff"), Tensor::from_parts(shape, rng.normal_vec(n, std)));
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[out_dim]));
        Self {
            in_dim,
            out_dim,
            grid,
            cos_coeff,
            sin_coeff,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        2 * self.out_dim * self.in_dim * self.grid + self.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &Input) -> Result<Var> {
        if x.cols(tape) != self.in_dim {
            return Err(Error::shape(
                "frkan_forward",
                format!("input width {}, layer expects {}", x.cols(tape), self.in_dim),
            ));
        }
        let x = x.to_dense(tape);
        let c = tape.param(store, self.cos_coeff);
        let s = tape.param(store, self.sin_coeff);
        let (batch, d) = tape.value(x).dims2()?;
        let (o, gr) = (self.out_dim, self.grid);
        let width = d * gr;
        let xd = tape.value(x).data();
        let mut cos = vec![0f32; batch * width];
        let mut sin = vec![0f32; batch * width];
        for n in 0..batch {
            for i in 0..d {
                for k in 0..gr {
                    let (sv, cv) = ((k + 1) as f32 * xd[n * d + i]).sin_cos();
                    cos[n * width + i * gr + k] = cv;
                    sin[n * width + i * gr + k] = sv;
                }
            }
        }
        let yc = matmul_nt(&cos, tape.value(c).data(), batch, width, o);
        let ys = matmul_nt(&sin, tape.value(s).data(), batch, width, o);
        let y: Vec<f32> = yc.iter().zip(&ys).map(|(a, b)| a + b).collect();
        let y = tape.push(
            Tensor::from_parts(vec![batch, o], y),
            vec![x, c, s],
            FourierFixed {
                batch,
                in_dim: d,
                out_dim: o,
                grid: gr,
                cos,
                sin,
            },
        );
        let bias = tape.param(store, self.bias);
        tape.add_bias(y, bias)
    }
}

struct FourierFixed {
    batch: usize,
    in_dim: usize,
    out_dim: usize,
    grid: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

impl Backward for FourierFixed {
    fn name(&self) -> &'static str {
        "frkan_dense"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], needs: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (bsz, d, o, gr) = (self.batch, self.in_dim, self.out_dim, self.grid);
        let width = d * gr;
        let dx = needs[0].then(|| {
            let dc = matmul(g, inputs[1].data(), bsz, o, width);
            let ds = matmul(g, inputs[2].data(), bsz, o, width);
            let mut dx = vec![0f32; bsz * d];
            for n in 0..bsz {
                for i in 0..d {
                    let base = n * width + i * gr;
                    dx[n * d + i] = (0..gr)
                        .map(|k| (k + 1) as f32 * (-dc[base + k] * self.sin[base + k] + ds[base + k] * self.cos[base + k]))
                        .sum();
                }
            }
            dx
        });
        vec![
            dx,
            needs[1].then(|| matmul_tn(g, &self.cos, bsz, o, width)),
            needs[2].then(|| matmul_tn(g, &self.sin, bsz, o, width)),
        ]
    }
}
