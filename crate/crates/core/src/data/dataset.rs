use std::collections::HashMap;

use ndarray::Array2;

use super::PretextLabelTable;
use crate::error::{Error, Result};
use crate::hsic::ClassPartition;
use crate::kernels::{value_kind, DownsampledEmbedding, TaskValue};

/// Per-sample values of one candidate label.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskColumn {
    pub id: String,
    pub values: Vec<TaskValue>,
}

/// Everything a conditional independence estimate needs: sample embeddings,
/// downstream classes and candidate label columns, all in one sample order.
#[derive(Debug, Clone)]
pub struct CiDataset {
    sample_ids: Vec<String>,
    labels: Vec<String>,
    partition: ClassPartition,
    pub embeddings: Vec<DownsampledEmbedding>,
    tasks: Vec<TaskColumn>,
}

impl CiDataset {
    pub fn new(
        sample_ids: Vec<String>,
        labels: Vec<String>,
        embeddings: Vec<DownsampledEmbedding>,
        tasks: Vec<TaskColumn>,
    ) -> Result<Self> {
        let m = sample_ids.len();
        if m == 0 {
            return Err(Error::Malformed("dataset has no samples".into()));
        }
        if labels.len() != m || embeddings.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "{m} samples, {} labels, {} embeddings",
                labels.len(),
                embeddings.len()
            )));
        }
        let shape = embeddings[0].values.dim();
        if let Some(e) = embeddings.iter().find(|e| e.values.dim() != shape) {
            return Err(Error::ShapeMismatch(format!(
                "embedding '{}' is {:?}, expected {:?}",
                e.id,
                e.values.dim(),
                shape
            )));
        }
        for t in &tasks {
            if t.values.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "task '{}' has {} values for {m} samples",
                    t.id,
                    t.values.len()
                )));
            }
            value_kind(&t.id, &t.values)?;
        }
        let partition = ClassPartition::from_labels(&labels);
        Ok(Self {
            sample_ids,
            labels,
            partition,
            embeddings,
            tasks,
        })
    }

    /// Builds a dataset from scalar labels plus embeddings matched by sample id.
    ///
    /// With `standardize`, scalar columns are scaled to zero mean and unit
    /// variance over the whole table.
    pub fn from_table(
        table: &PretextLabelTable,
        embeddings: Vec<DownsampledEmbedding>,
        standardize: bool,
    ) -> Result<Self> {
        let mut by_id: HashMap<String, DownsampledEmbedding> =
            embeddings.into_iter().map(|e| (e.id.clone(), e)).collect();
        let ordered = table
            .sample_ids()
            .iter()
            .map(|id| {
                by_id
                    .remove(id)
                    .ok_or_else(|| Error::Malformed(format!("no embedding for sample '{id}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = if standardize {
            table.standardized()
        } else {
            table.values().clone()
        };
        let tasks = table
            .task_ids()
            .iter()
            .zip(values.columns())
            .map(|(id, col)| TaskColumn {
                id: id.clone(),
                values: col.iter().map(|&v| TaskValue::Scalar(v)).collect(),
            })
            .collect();
        Self::new(
            table.sample_ids().to_vec(),
            table.labels().to_vec(),
            ordered,
            tasks,
        )
    }

    /// Adds a matrix-valued task (e.g. a spectral representation).
    pub fn with_matrix_task(mut self, id: &str, values: Vec<Array2<f64>>) -> Result<Self> {
        if self.tasks.iter().any(|t| t.id == id) {
            return Err(Error::Malformed(format!("duplicate task '{id}'")));
        }
        if values.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "task '{id}' has {} values for {} samples",
                values.len(),
                self.len()
            )));
        }
        self.tasks.push(TaskColumn {
            id: id.to_string(),
            values: values.into_iter().map(TaskValue::Matrix).collect(),
        });
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn partition(&self) -> &ClassPartition {
        &self.partition
    }

    pub fn tasks(&self) -> &[TaskColumn] {
        &self.tasks
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.id.clone()).collect()
    }

    pub fn task(&self, task_id: &str) -> Result<&TaskColumn> {
        self.tasks
            .iter()
            .find(|t| t.id == task_id)
            .ok_or_else(|| Error::MissingTask(task_id.to_string()))
    }

    /// Scalar tasks as a samples × tasks matrix.
    pub fn scalar_columns(&self, task_ids: &[String]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.len(), task_ids.len()));
        for (j, id) in task_ids.iter().enumerate() {
            for (i, v) in self.task(id)?.values.iter().enumerate() {
                match v {
                    TaskValue::Scalar(x) => out[[i, j]] = *x,
                    TaskValue::Matrix(_) => {
                        return Err(Error::InvalidParameter(format!("task '{id}' is not scalar")))
                    }
                }
            }
        }
        Ok(out)
    }

    /// Rows `indices`, in the given order. Task values are kept as they are
    /// (no re-standardization).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let pick = |i: usize| {
            if i < self.len() {
                Ok(i)
            } else {
                Err(Error::Malformed(format!("sample index {i} out of range")))
            }
        };
        let idx = indices.iter().map(|&i| pick(i)).collect::<Result<Vec<_>>>()?;
        Self::new(
            idx.iter().map(|&i| self.sample_ids[i].clone()).collect(),
            idx.iter().map(|&i| self.labels[i].clone()).collect(),
            idx.iter().map(|&i| self.embeddings[i].clone()).collect(),
            self.tasks
                .iter()
                .map(|t| TaskColumn {
                    id: t.id.clone(),
                    values: idx.iter().map(|&i| t.values[i].clone()).collect(),
                })
                .collect(),
        )
    }
}
