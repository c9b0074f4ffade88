//! GNN teachers (GCN, GraphSAGE-mean, GAT) and their supervised training loop.

mod layers;
mod model;
mod train;

pub use layers::{GatLayer, GcnLayer, SageLayer};
pub use model::{load_teacher, save_teacher, GraphContext, TeacherArch, TeacherKind, TeacherLayer, TeacherModel, TeacherSidecar};
pub use train::{mean_nll, train_teacher, TeacherOutput, TeacherReport, TrainHyper, TrainedTeacher};
