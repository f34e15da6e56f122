//! Permutation distillation into a linear student over lexical features.

pub mod features;
pub mod loss;
pub mod train;

use thiserror::Error;

use crate::retrieval::RetrievalError;
use crate::types::ValidationError;

pub use features::{extract_features, FeatureVector, FEATURE_NAMES, NUM_FEATURES};
pub use loss::{
    extract_pairs, grad_check, loss_and_grad, student_ranks, Discount, Gain, GradInstance,
    LambdaConfig, LossError, LossGrad, LossKind, Pair,
};
pub use train::{
    agreement_over, pairwise_agreement, prepare_dataset, rank_with_student, score_query,
    teacher_grade, train, train_on_features, LinearStudent, TrainConfig, TrainLog, TrainingQuery,
};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("teacher dataset is empty")]
    EmptyDataset,
    #[error("query `{query_id}`: docid `{docid}` is not in the corpus")]
    UnknownDocid { query_id: String, docid: String },
    #[error("query `{query_id}`: {source}")]
    Loss {
        query_id: String,
        #[source]
        source: LossError,
    },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("invalid student: {0}")]
    Student(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}
