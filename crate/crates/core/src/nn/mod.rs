//! Differentiable tensor kernel and the two-pathway classifier.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod graph;
pub mod init;
pub mod loss;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, Adam, AdamHyper, AdamState};
pub use checkpoint::ModelCheckpoint;
pub use conv::ConvGeom;
pub use init::kaiming_init;
pub use loss::{margin_for, mine_triplets, total_loss, total_loss_graph, triplet_loss, weighted_ce_loss};
pub use model::{normalize_hu, ForwardVars, IchNet, IchNetConfig};
pub use graph::{Gradients, Graph, Triplet, Var};
pub use params::{Param, ParamId, ParamStore};
pub use train::{load_volumes, softmax, train_fold, train_fold_with, EpochLog, TrainOutcome};
pub use tensor::{Real, Tensor};
