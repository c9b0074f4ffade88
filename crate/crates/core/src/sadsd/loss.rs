//! Distillation objectives.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numkit::{log_softmax_rows_data, softmax_rows_data, Backward, Tape, Tensor, Var};

/// `KL(t_i ‖ softmax(z_i/τ))` per row, where `t` is a fixed distribution.
fn kl_values(student_logits: &[f32], teacher_soft: &[f32], k: usize, tau: f32) -> (Vec<f32>, Vec<f32>) {
    let scaled: Vec<f32> = student_logits.iter().map(|v| v / tau).collect();
    let logs = log_softmax_rows_data(&scaled, k);
    let n = student_logits.len() / k;
    let kl = (0..n)
        .map(|i| {
            (0..k)
                .map(|c| {
                    let t = teacher_soft[i * k + c];
                    if t > 0.0 { t * (t.ln() - logs[i * k + c]) } else { 0.0 }
                })
                .sum::<f32>()
                .max(0.0)
        })
        .collect();
    let soft = logs.iter().map(|v| v.exp()).collect();
    (kl, soft)
}

struct KlRows {
    teacher: Arc<Tensor>,
    tau: f32,
    student_soft: Vec<f32>,
}

/// Row-wise `KL(teacher_soft ‖ softmax(student_logits/τ))`, `[N × 1]`.
pub fn kl_rows(tape: &mut Tape, student_logits: Var, teacher_soft: &Arc<Tensor>, tau: f32) -> Result<Var> {
    let (n, k) = tape.value(student_logits).dims2()?;
    if teacher_soft.shape() != [n, k] {
        return Err(Error::shape(
            "distill_loss",
            format!("student {n}x{k}, teacher {:?}", teacher_soft.shape()),
        ));
    }
    let (kl, student_soft) = kl_values(tape.value(student_logits).data(), teacher_soft.data(), k, tau);
    Ok(tape.push(
        Tensor::from_parts(vec![n, 1], kl),
        vec![student_logits],
        KlRows {
            teacher: teacher_soft.clone(),
            tau,
            student_soft,
        },
    ))
}

impl Backward for KlRows {
    fn name(&self) -> &'static str {
        "kl_rows"
    }

    fn backward(&self, _: &[&Tensor], _: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let k = self.teacher.shape()[1];
        let t = self.teacher.data();
        let dz = self
            .student_soft
            .iter()
            .enumerate()
            .map(|(j, s)| g[j / k] * (s - t[j]) / self.tau)
            .collect();
        vec![Some(dz)]
    }
}

struct EdgeWeightedMean {
    edges: Arc<Vec<(usize, usize)>>,
    mask: Arc<Vec<bool>>,
    total_p: f32,
}

/// `Σ_{e∈𝒩} p_e·(kl_u + kl_v)/2 / Σ_{e∈𝒩} p_e` over the sampled undirected
/// edges `e = (u, v)`. Every sampled edge contributes both directed pairs, so
/// this is the `p`-weighted mean of the source-endpoint KL over `𝒩`; with
/// equal `p` it is the plain mean. Returns a scalar (0 when nothing is sampled).
pub fn edge_weighted_mean(
    tape: &mut Tape,
    kl: Var,
    probs: Var,
    edges: &Arc<Vec<(usize, usize)>>,
    mask: &Arc<Vec<bool>>,
) -> Result<Var> {
    let e = edges.len();
    if tape.value(probs).len() != e || mask.len() != e {
        return Err(Error::shape(
            "distill_loss",
            format!("{} edges, {} probs, {} mask entries", e, tape.value(probs).len(), mask.len()),
        ));
    }
    let (klv, p) = (tape.value(kl).data(), tape.value(probs).data());
    let mut num = 0f32;
    let mut den = 0f32;
    for (i, &(u, v)) in edges.iter().enumerate() {
        if mask[i] {
            num += p[i] * 0.5 * (klv[u] + klv[v]);
            den += p[i];
        }
    }
    let loss = if den > 0.0 { num / den } else { 0.0 };
    Ok(tape.push(
        Tensor::scalar(loss),
        vec![kl, probs],
        EdgeWeightedMean {
            edges: edges.clone(),
            mask: mask.clone(),
            total_p: den,
        },
    ))
}

impl Backward for EdgeWeightedMean {
    fn name(&self) -> &'static str {
        "edge_weighted_mean"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, g: &[f32], _: &[bool]) -> Vec<Option<Vec<f32>>> {
        let (kl, p) = (inputs[0].data(), inputs[1].data());
        let mut dkl = vec![0f32; kl.len()];
        let mut dp = vec![0f32; p.len()];
        if self.total_p > 0.0 {
            let loss = output.data()[0];
            let scale = g[0] / self.total_p;
            for (i, &(u, v)) in self.edges.iter().enumerate() {
                if self.mask[i] {
                    dkl[u] += 0.5 * p[i] * scale;
                    dkl[v] += 0.5 * p[i] * scale;
                    dp[i] = (0.5 * (kl[u] + kl[v]) - loss) * scale;
                }
            }
        }
        vec![Some(dkl), Some(dp)]
    }
}

/// `τ² · (1/|𝒩|) · Σ_{(i,j)∈𝒩} KL(softmax(t_i/τ) ‖ softmax(s_i/τ))` over
/// directed pairs. With `both_endpoints` each pair uses the mean of the KL at
/// `i` and at `j`. An empty `𝒩` gives 0.
pub fn distill_loss(
    teacher_logits: &Tensor,
    student_logits: &Tensor,
    sampled: &[(usize, usize)],
    tau: f32,
    both_endpoints: bool,
) -> Result<f32> {
    let (n, k) = student_logits.dims2()?;
    if teacher_logits.shape() != [n, k] {
        return Err(Error::shape(
            "distill_loss",
            format!("teacher {:?}, student {:?}", teacher_logits.shape(), student_logits.shape()),
        ));
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    if !teacher_logits.is_finite() || !student_logits.is_finite() {
        return Err(Error::NonFinite { op: "distill_loss".into() });
    }
    if sampled.is_empty() {
        return Ok(0.0);
    }
    let t_scaled: Vec<f32> = teacher_logits.data().iter().map(|v| v / tau).collect();
    let t_soft = softmax_rows_data(&t_scaled, k);
    let (kl, _) = kl_values(student_logits.data(), &t_soft, k, tau);
    let sum: f32 = sampled
        .iter()
        .map(|&(i, j)| if both_endpoints { 0.5 * (kl[i] + kl[j]) } else { kl[i] })
        .sum();
    Ok(tau * tau * sum / sampled.len() as f32)
}

/// Mean cross-entropy of the student over `train_idx`.
pub fn ce_loss(tape: &mut Tape, student_logits: Var, labels: &[usize], train_idx: &[usize]) -> Result<Var> {
    if train_idx.is_empty() {
        return Err(Error::Config("empty training split".into()));
    }
    let y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    tape.cross_entropy(student_logits, train_idx, &y)
}

/// `λ·ce + (1−λ)·kd`
pub fn total_loss(tape: &mut Tape, ce: Var, kd: Var, lambda: f32) -> Result<Var> {
    let a = tape.scale(ce, lambda);
    let b = tape.scale(kd, 1.0 - lambda);
    tape.add(a, b)
}
