//! Self-attention driven edge sampling for teacher-to-student distillation.

mod attention;
mod loss;
mod train;

pub use attention::{
    agreement_factors, attention_weights, attention_weights_dense, consistency_reweight, edge_attention,
    edge_importance, edge_sampling_probs, prob_from_phi, reweight, sample_edges, sampled_pairs, AttentionSampler,
    EdgeContext, EdgeSampleState, ProbConfig,
};
pub use loss::{ce_loss, distill_loss, edge_weighted_mean, kl_rows, total_loss};
pub use train::{distill_train, DistillConfig, DistillResult, EpochRecord, StudentReport};
