//! Accuracy matrix and continual-learning measures.
//!
//! `a[l][j]` is the accuracy on task `j` after training through task `l`
//! (`j <= l`). The measures take a 1-based stage `k`, so `a_{k,j}` is row
//! `k - 1`, column `j - 1`:
//!
//! ```text
//! FM_k  = 1/(k-1) * sum_{j<k} ( max_{j<=i<=k} a_{i,j} - a_{k,j} )
//! BWT_k = 1/(k-1) * sum_{j<k} ( a_{k,j} - a_{j,j} )
//! IM_k  = a*_k - a_{k,k}
//! ```
//!
//! The forgetting peak includes the current stage, so a task that improved
//! since its last peak contributes zero rather than a negative term.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Appends the row for the next stage; it must hold one entry per task so far.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::dim(
                "accuracy matrix",
                alloc::format!("row {} needs {} entries, got {}", self.rows.len(), self.rows.len() + 1, row.len()),
            ));
        }
        if let Some(bad) = row.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidArgument(alloc::format!("accuracy {bad} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Accuracy on task `j` after stage `l`, both 0-based.
    pub fn get(&self, l: usize, j: usize) -> Option<f64> {
        self.rows.get(l).and_then(|r| r.get(j)).copied()
    }

    /// Unweighted mean over all tasks seen at stage `l`.
    pub fn overall(&self, l: usize) -> Option<f64> {
        let row = self.rows.get(l)?;
        Some(row.iter().sum::<f64>() / row.len() as f64)
    }

    /// Unweighted mean over the tasks before stage `l`.
    pub fn previous(&self, l: usize) -> Option<f64> {
        let row = self.rows.get(l)?;
        if l == 0 {
            return None;
        }
        Some(row[..l].iter().sum::<f64>() / l as f64)
    }

    /// Accuracy on the task learned at stage `l`.
    pub fn last(&self, l: usize) -> Option<f64> {
        self.get(l, l)
    }

    fn check_stage(&self, k: usize, min: usize) -> Result<()> {
        if k < min || k > self.rows.len() {
            return Err(Error::TaskOutOfRange {
                k,
                tasks: self.rows.len(),
            });
        }
        Ok(())
    }
}

/// Forgetting measure at 1-based stage `k >= 2`.
pub fn forgetting_measure(m: &AccuracyMatrix, k: usize) -> Result<f64> {
    m.check_stage(k, 2)?;
    let current = &m.rows[k - 1];
    let mut total = 0.0;
    for (j, &now) in current[..k - 1].iter().enumerate() {
        let peak = m.rows[j..k]
            .iter()
            .map(|row| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        total += peak - now;
    }
    Ok(total / (k - 1) as f64)
}

/// Backward transfer at 1-based stage `k >= 2`; negative means forgetting.
pub fn backward_transfer(m: &AccuracyMatrix, k: usize) -> Result<f64> {
    m.check_stage(k, 2)?;
    let current = &m.rows[k - 1];
    let total: f64 = current[..k - 1]
        .iter()
        .enumerate()
        .map(|(j, &now)| now - m.rows[j][j])
        .sum();
    Ok(total / (k - 1) as f64)
}

/// Intransigence at 1-based stage `k` against the jointly trained accuracy.
pub fn intransigence(m: &AccuracyMatrix, k: usize, joint_ref: Option<f64>) -> Result<f64> {
    m.check_stage(k, 1)?;
    let joint = joint_ref.ok_or(Error::MissingJointReference(k))?;
    Ok(joint - m.rows[k - 1][k - 1])
}
