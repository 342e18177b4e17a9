//! Loading, splitting and standardizing the configured dataset.

use htil_core::data::{fold_split, synth_dataset};
use htil_core::{ClipRecord, FoldSplit, Standardizer, TaskData};

use crate::config::{Config, Source};
use crate::error::Result;

/// Standardized records with their fold split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<ClipRecord>,
    pub split: FoldSplit,
    pub standardizer: Standardizer,
}

impl Dataset {
    /// Standardization statistics come from the training folds only.
    pub fn from_records(mut records: Vec<ClipRecord>, test_fold: u8, val_fold: u8) -> Result<Self> {
        let split = fold_split(&records, test_fold, val_fold)?;
        let standardizer = Standardizer::fit(&records, &split.train)?;
        standardizer.apply(&mut records);
        Ok(Self {
            records,
            split,
            standardizer,
        })
    }

    pub fn load(config: &Config) -> Result<Self> {
        let records = match config.data.source {
            Source::Synthetic => synth_dataset(&config.synth_spec())?,
            Source::Esc => config.esc_source().load()?,
        };
        Self::from_records(records, config.data.test_fold, config.data.val_fold)
    }

    pub fn task_data(&self) -> TaskData<'_> {
        TaskData {
            records: &self.records,
            train: &self.split.train,
            test: &self.split.test,
        }
    }
}
