use crate::error::Result;
use crate::numkit::{Input, ParamId, ParamStore, Rng, Tape, Tensor, Var};

/// `y = x·W + b` with `W: [in × out]`, Glorot-uniform initialised.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add(
            format!("{prefix}.weight"),
            Tensor::from_parts(vec![in_dim, out_dim], rng.glorot(in_dim, out_dim)),
        );
        let bias = bias.then(|| store.add(format!("{prefix}.bias"), Tensor::zeros(&[out_dim])));
        Self {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_dim * self.out_dim + if self.bias.is_some() { self.out_dim } else { 0 }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: &Input) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = x.matmul(tape, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}
