//! B-spline KAN layer: `y[o] = Σ_i ω[o,i]·silu(x_i) + Σ_i Σ_k c[o,i,k]·B_k(x_i)`.
//!
//! Cubic B-splines on a uniform grid over `[lo, hi]` extended by three knots
//! on either side, giving `intervals + 3` basis functions per input. Inputs
//! are clamped to `[lo, hi]` before the basis is evaluated.

use crate::error::{Error, Result};
use crate::numkit::{Backward, Input, ParamId, ParamStore, Rng, Tape, Tensor, Var};

pub const SPLINE_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineGrid {
    pub lo: f32,
    pub hi: f32,
    /// Number of grid intervals (knots inside the range minus one).
    pub intervals: usize,
}

impl Default for SplineGrid {
    /// 8 uniform knots on `[-2, 2]`.
    fn default() -> Self {
        Self {
            lo: -2.0,
            hi: 2.0,
            intervals: 7,
        }
    }
}

impl SplineGrid {
    pub fn n_basis(&self) -> usize {
        self.intervals + SPLINE_ORDER
    }

    pub fn step(&self) -> f32 {
        (self.hi - self.lo) / self.intervals as f32
    }

    /// Full knot vector, including the three extension knots on each side.
    pub fn knots(&self) -> Vec<f32> {
        let h = self.step();
        (0..self.intervals + 1 + 2 * SPLINE_ORDER)
            .map(|j| self.lo + (j as f32 - SPLINE_ORDER as f32) * h)
            .collect()
    }

    /// Writes the `n_basis` values and their derivatives at `x` (clamped).
    /// Returns whether `x` lay inside the range.
    pub fn eval(&self, x: f32, basis: &mut [f32], deriv: &mut [f32]) -> bool {
        let inside = x >= self.lo && x <= self.hi;
        let xc = x.clamp(self.lo, self.hi);
        let h = self.step();
        let t = (xc - self.lo) / h;
        let m = (t.floor() as usize).min(self.intervals - 1);
        let u = t - m as f32;
        let (u2, u3) = (u * u, u * u * u);
        let w = 1.0 - u;
        basis.fill(0.0);
        deriv.fill(0.0);
        // uniform cubic pieces; basis m..m+3 are the non-zero ones
        basis[m] = w * w * w / 6.0;
        basis[m + 1] = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
        basis[m + 2] = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
        basis[m + 3] = u3 / 6.0;
        deriv[m] = -w * w / (2.0 * h);
        deriv[m + 1] = (3.0 * u2 - 4.0 * u) / (2.0 * h);
        deriv[m + 2] = (-3.0 * u2 + 2.0 * u + 1.0) / (2.0 * h);
        deriv[m + 3] = u2 / (2.0 * h);
        inside
    }
}

#[derive(Debug, Clone)]
pub struct SplineKanLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub grid: SplineGrid,
    pub silu_weight: ParamId,
    pub spline_coeff: ParamId,
}

impl SplineKanLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        grid: SplineGrid,
        rng: &mut Rng,
    ) -> Self {
        let k = grid.n_basis();
        let silu_weight = store.add(
            format!("{prefix}.silu_weight"),
            Tensor::from_parts(vec![out_dim, in_dim], rng.glorot(in_dim, out_dim)),
        );
        let std = 0.1 / (in_dim as f32).sqrt();
        let spline_coeff = store.add(
            format!("{prefix}.spline_coeff"),
            Tensor::from_parts(vec![out_dim, in_dim, k], rng.normal_vec(out_dim * in_dim * k, std)),
        );
        Self {
            in_dim,
            out_dim,
            grid,
            silu_weight,
            spline_coeff,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim * (1 + self.grid.n_basis())
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &Input) -> Result<Var> {
        if x.cols(tape) != self.in_dim {
            return Err(Error::shape(
                "spline_kan_forward",
                format!("input width {}, layer expects {}", x.cols(tape), self.in_dim),
            ));
        }
        let x = x.to_dense(tape);
        let w = tape.param(store, self.silu_weight);
        let c = tape.param(store, self.spline_coeff);
        let act = tape.silu(x);
        let base = tape.matmul_nt(act, w)?;
        let b = spline_basis(tape, x, self.grid);
        let (o, d, k) = (self.out_dim, self.in_dim, self.grid.n_basis());
        let c_flat = tape.value(c).clone().reshape(&[o, d * k])?;
        let c2 = reshape_var(tape, c, c_flat);
        let spline = tape.matmul_nt(b, c2)?;
        tape.add(base, spline)
    }
}

/// Identity op that only changes the recorded shape.
struct Reshape;

impl Backward for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        vec![Some(g.to_vec())]
    }
}

fn reshape_var(tape: &mut Tape, v: Var, reshaped: Tensor) -> Var {
    tape.push(reshaped, vec![v], Reshape)
}

struct SplineBasis {
    n_basis: usize,
    deriv: Vec<f32>,
}

/// `[B × D] -> [B × D·K]` basis values.
fn spline_basis(tape: &mut Tape, x: Var, grid: SplineGrid) -> Var {
    let (rows, d) = tape.value(x).dims2().expect("rank 2 input");
    let k = grid.n_basis();
    let mut basis = vec![0f32; rows * d * k];
    let mut deriv = vec![0f32; rows * d * k];
    for (j, &xv) in tape.value(x).data().iter().enumerate() {
        let span = j * k..(j + 1) * k;
        let inside = grid.eval(xv, &mut basis[span.clone()], &mut deriv[span.clone()]);
        if !inside {
            deriv[span].fill(0.0);
        }
    }
    tape.push(
        Tensor::from_parts(vec![rows, d * k], basis),
        vec![x],
        SplineBasis { n_basis: k, deriv },
    )
}

impl Backward for SplineBasis {
    fn name(&self) -> &'static str {
        "spline_basis"
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let k = self.n_basis;
        let dx = (0..inputs[0].len())
            .map(|j| {
                let span = j * k..(j + 1) * k;
                crate::numkit::kernels::dot(&g[span.clone()], &self.deriv[span])
            })
            .collect();
        vec![Some(dx)]
    }
}
