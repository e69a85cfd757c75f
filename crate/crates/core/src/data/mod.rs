//! Sample stores, the synthetic Gaussian-cluster generator, session splits
//! and seeded batching.

mod sessions;
mod store;
mod synthetic;

pub use sessions::{make_batches, split_sessions, Session};
pub use store::{
    decode_store, encode_store, load_store, load_store_csv, load_store_facl, save_store, save_store_csv, STORE_MAGIC,
};
pub use synthetic::{gen_synthetic, SyntheticOptions};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Class counts of a few-shot incremental benchmark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSpec {
    pub base_classes: usize,
    pub inc_classes: usize,
    /// Number of incremental sessions (session 0 is the base session).
    pub sessions: usize,
    pub ways: usize,
    pub shots: usize,
    pub input_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.base_classes,
            self.inc_classes,
            self.sessions,
            self.ways,
            self.shots,
            self.input_dim,
            self.train_per_class,
            self.test_per_class,
        ];
        if counts.contains(&0) {
            return Err(Error::Dataset(format!("all dataset counts must be positive: {self:?}")));
        }
        if self.ways * self.sessions != self.inc_classes {
            return Err(Error::Dataset(format!(
                "ways × sessions = {} × {} does not equal the {} incremental classes",
                self.ways, self.sessions, self.inc_classes
            )));
        }
        Ok(())
    }

    pub fn total_classes(&self) -> usize {
        self.base_classes + self.inc_classes
    }

    /// Classes tested after session `s`.
    pub fn classes_seen(&self, s: usize) -> usize {
        self.base_classes + s.min(self.sessions) * self.ways
    }

    /// 60 base classes, 8 sessions of 5-way 5-shot.
    pub fn cifar100(input_dim: usize) -> Self {
        Self {
            base_classes: 60,
            inc_classes: 40,
            sessions: 8,
            ways: 5,
            shots: 5,
            input_dim,
            train_per_class: 500,
            test_per_class: 100,
        }
    }

    /// Same session schema as CIFAR100.
    pub fn mini_imagenet(input_dim: usize) -> Self {
        Self {
            train_per_class: 500,
            test_per_class: 100,
            ..Self::cifar100(input_dim)
        }
    }

    /// 100 base classes, 10 sessions of 10-way 5-shot.
    pub fn cub200(input_dim: usize) -> Self {
        Self {
            base_classes: 100,
            inc_classes: 100,
            sessions: 10,
            ways: 10,
            shots: 5,
            input_dim,
            train_per_class: 30,
            test_per_class: 29,
        }
    }
}

/// Samples with real labels and a train/test flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStore {
    pub num_classes: usize,
    /// `[n × input_dim]`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub is_test: Vec<bool>,
}

impl SampleStore {
    pub fn new(num_classes: usize, inputs: Tensor, labels: Vec<usize>, is_test: Vec<bool>) -> Result<Self> {
        let (n, _) = inputs.dims2("sample_store")?;
        if labels.len() != n || is_test.len() != n {
            return Err(Error::Dataset(format!(
                "{n} rows but {} labels and {} split flags",
                labels.len(),
                is_test.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        Ok(Self {
            num_classes,
            inputs,
            labels,
            is_test,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Indices of split `test` samples of class `y`, in store order.
    pub fn class_indices(&self, y: usize, test: bool) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == y && self.is_test[i] == test)
            .collect()
    }

    pub fn rows(&self, indices: &[usize]) -> Result<Tensor> {
        self.inputs.gather_rows(indices)
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Every class needs at least one test sample.
    pub fn check_test_coverage(&self) -> Result<()> {
        let mut has_test = vec![false; self.num_classes];
        for (&l, &t) in self.labels.iter().zip(&self.is_test) {
            if t {
                has_test[l] = true;
            }
        }
        match has_test.iter().position(|&h| !h) {
            Some(c) => Err(Error::Dataset(format!("class {c} has no test samples"))),
            None => Ok(()),
        }
    }
}
