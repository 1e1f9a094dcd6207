//! Logic-tensor-network grounding of the ontology and labels, and the
//! train / evaluate / ablate harness.
//!
//! `IsClassOf(x, y) = y^T p`, `IsValid(q) = sum(omega_hat q_hat)` and
//! `IsSimilar(x, q) = p^T omega_hat q_hat`, where `omega_hat` is the
//! ontology biadjacency with l1-normalized columns and `q_hat` the
//! normalized label histogram. Labels enter through the equivalence axiom
//! `forall v: IsClassOf(x_v, y_v)`; the ontology through the inclusion axiom
//! `forall v: IsValid(q_v) -> IsSimilar(x_v, q_v)`.

mod ablation;
mod evaluate;
mod loss;
mod predicates;
mod train;

pub use ablation::{mean_std, run_ablation, AblationConfig, AblationReport, AblationRow, CellSummary};
pub use evaluate::{argmax, evaluate, evaluate_many, Metrics, Predictor};
pub use loss::{class_of_truths, compute_loss, equivalence_axiom, inclusion_axiom, LossKind, LossOutput, Supervision};
pub use predicates::{check_alignment, is_class_of, is_similar, is_valid, ontology_target, OntologyTargets};
pub use train::{apply_masking, train, EpochRecord, History, InclusionScope, TrainConfig, TrainOutcome, TrainedModel};
