use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::metrics::AccuracyMatrix;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{context}: expected shape {expected:?}, found {found:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{context}: {message}")]
    Dimension {
        context: &'static str,
        message: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no interval was tracked during the task")]
    NothingTracked,
    #[error("task index {k} out of range for a matrix with {tasks} tasks")]
    TaskOutOfRange { k: usize, tasks: usize },
    #[error("joint reference accuracy missing for task {0}")]
    MissingJointReference(usize),
    #[error("no head stored for task {0}")]
    UnknownTask(usize),
    #[error("head for task {0} already stored")]
    DuplicateTask(usize),
    #[error("label {label} outside head range 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("task {task} failed: {source}")]
    StageFailed {
        task: usize,
        partial: AccuracyMatrix,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dim(context: &'static str, message: impl Into<String>) -> Self {
        Error::Dimension {
            context,
            message: message.into(),
        }
    }
}
