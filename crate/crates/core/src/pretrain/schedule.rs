//! Step-to-task assignment over the six objectives.

use super::{PretrainError, PretrainTask};
use crate::apportion::{interleave, largest_remainder};
use std::fmt::Write as _;

/// Minimum steps so that every task is scheduled at least once.
pub const MIN_STEPS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    counts: [usize; 6],
    order: Vec<PretrainTask>,
}

impl Schedule {
    /// Exact largest-remainder counts per task, interleaved so that every
    /// prefix stays within one step of each task's share.
    pub fn new(total_steps: usize) -> Result<Self, PretrainError> {
        if total_steps < MIN_STEPS {
            return Err(PretrainError::TooFewSteps(total_steps));
        }
        let shares: Vec<f64> = PretrainTask::ALL.iter().map(|t| t.share()).collect();
        let raw = largest_remainder(total_steps, &shares);
        let mut counts = [0usize; 6];
        counts.copy_from_slice(&raw);
        let order = interleave(&raw).into_iter().map(|i| PretrainTask::ALL[i]).collect();
        Ok(Self { counts, order })
    }

    pub fn total_steps(&self) -> usize {
        self.order.len()
    }

    /// Steps per task, in [`PretrainTask::ALL`] order.
    pub fn counts(&self) -> [usize; 6] {
        self.counts
    }

    pub fn task_at(&self, step: usize) -> PretrainTask {
        self.order[step]
    }

    pub fn tasks(&self) -> &[PretrainTask] {
        &self.order
    }

    /// `step,task` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,task\n");
        for (i, t) in self.order.iter().enumerate() {
            writeln!(out, "{i},{}", t.name()).unwrap();
        }
        out
    }
}
