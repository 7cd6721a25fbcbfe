use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;

use super::Manifest;
use crate::error::{Error, Result};
use crate::features::{
    extract_features, read_wav, summarize_task_label, AudioSignal, ExtractionConfig, PretextTask,
};

/// Population mean and standard deviation of a column.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

/// `M × k` per-sample scalar labels, rows in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextLabelTable {
    sample_ids: Vec<String>,
    labels: Vec<String>,
    task_ids: Vec<String>,
    values: Array2<f64>,
    standardization: Vec<Standardization>,
}

impl PretextLabelTable {
    pub fn new(
        sample_ids: Vec<String>,
        labels: Vec<String>,
        task_ids: Vec<String>,
        values: Array2<f64>,
    ) -> Result<Self> {
        if values.dim() != (sample_ids.len(), task_ids.len()) || labels.len() != sample_ids.len() {
            return Err(Error::ShapeMismatch(format!(
                "table values {:?} for {} samples, {} labels and {} tasks",
                values.dim(),
                sample_ids.len(),
                labels.len(),
                task_ids.len()
            )));
        }
        for ((row, col), v) in values.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    sample: sample_ids[row].clone(),
                    task: task_ids[col].clone(),
                });
            }
        }
        let standardization = values
            .columns()
            .into_iter()
            .map(|c| {
                let n = c.len().max(1) as f64;
                let mean = c.sum() / n;
                let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                Standardization {
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect();
        Ok(Self {
            sample_ids,
            labels,
            task_ids,
            values,
            standardization,
        })
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn task_ids(&self) -> &[String] {
        &self.task_ids
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn standardization(&self) -> &[Standardization] {
        &self.standardization
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    fn task_index(&self, task_id: &str) -> Result<usize> {
        self.task_ids
            .iter()
            .position(|t| t == task_id)
            .ok_or_else(|| Error::MissingTask(task_id.to_string()))
    }

    pub fn column(&self, task_id: &str) -> Result<ArrayView1<'_, f64>> {
        Ok(self.values.column(self.task_index(task_id)?))
    }

    /// Columns scaled to zero mean and unit variance. Constant columns become 0.
    pub fn standardized(&self) -> Array2<f64> {
        let mut out = self.values.clone();
        for (mut col, s) in out.columns_mut().into_iter().zip(&self.standardization) {
            let scale = if s.std > 0.0 { 1.0 / s.std } else { 0.0 };
            col.mapv_inplace(|v| (v - s.mean) * scale);
        }
        out
    }

    /// Restricts (and reorders) the table to `task_ids`.
    pub fn select_tasks(&self, task_ids: &[String]) -> Result<Self> {
        let idx = task_ids
            .iter()
            .map(|t| self.task_index(t))
            .collect::<Result<Vec<_>>>()?;
        let values = Array2::from_shape_fn((self.len(), idx.len()), |(i, j)| self.values[[i, idx[j]]]);
        Self::new(
            self.sample_ids.clone(),
            self.labels.clone(),
            task_ids.to_vec(),
            values,
        )
    }

    /// Reorders rows to manifest order; ids must match exactly.
    pub fn align_to(&self, manifest: &Manifest) -> Result<Self> {
        let pos: HashMap<&str, usize> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        if pos.len() != manifest.len() {
            return Err(Error::Malformed(format!(
                "feature table has {} samples, manifest has {}",
                pos.len(),
                manifest.len()
            )));
        }
        let rows = manifest
            .entries
            .iter()
            .map(|e| {
                pos.get(e.sample_id.as_str()).copied().ok_or_else(|| {
                    Error::Malformed(format!("sample '{}' missing from feature table", e.sample_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let values =
            Array2::from_shape_fn((rows.len(), self.task_ids.len()), |(i, j)| self.values[[rows[i], j]]);
        Self::new(
            manifest.sample_ids(),
            manifest.labels(),
            self.task_ids.clone(),
            values,
        )
    }

    /// Reads a wide `id,label,<task>...` CSV.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("id") || headers.get(1) != Some("label") {
            return Err(Error::Malformed(
                "feature table header must start with 'id,label'".into(),
            ));
        }
        let task_ids: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let (mut ids, mut labels, mut flat) = (Vec::new(), Vec::new(), Vec::new());
        for record in rdr.records() {
            let record = record?;
            let row = ids.len();
            let id = record.get(0).unwrap_or("").to_string();
            for (j, task) in task_ids.iter().enumerate() {
                let cell = record.get(j + 2).unwrap_or("");
                let v: f64 = cell.parse().map_err(|_| Error::NonFinite {
                    row,
                    sample: id.clone(),
                    task: task.clone(),
                })?;
                flat.push(v);
            }
            labels.push(record.get(1).unwrap_or("").to_string());
            ids.push(id);
        }
        let values = Array2::from_shape_vec((ids.len(), task_ids.len()), flat)
            .map_err(|e| Error::Malformed(e.to_string()))?;
        Self::new(ids, labels, task_ids, values)
    }

    /// Writes the wide CSV with 17 significant digits per value.
    pub fn to_writer<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend(self.task_ids.iter().cloned());
        w.write_record(&header)?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            let mut rec = vec![self.sample_ids[i].clone(), self.labels[i].clone()];
            rec.extend(row.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<feature table>", e))
    }
}

/// Extracts and summarizes every task for one signal, in task order.
pub fn summarize_file(
    signal: &AudioSignal,
    tasks: &[PretextTask],
    config: &ExtractionConfig,
) -> Result<Vec<f64>> {
    extract_features(signal, tasks, config)?
        .iter()
        .map(|s| summarize_task_label(s).map(|p| p.value))
        .collect()
}

/// Runs extraction over every manifest entry (in parallel, one file per job).
pub fn build_label_table(
    manifest: &Manifest,
    tasks: &[PretextTask],
    config: &ExtractionConfig,
) -> Result<PretextLabelTable> {
    manifest.check_audio()?;
    let rows = manifest
        .entries
        .par_iter()
        .map(|e| {
            let path = e.audio_path.as_deref().expect("checked above");
            summarize_file(&read_wav(path)?, tasks, config)
        })
        .collect::<Result<Vec<_>>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((manifest.len(), tasks.len()), flat)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    PretextLabelTable::new(
        manifest.sample_ids(),
        manifest.labels(),
        tasks.iter().map(|t| t.id().to_string()).collect(),
        values,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn table(values: Array2<f64>) -> PretextLabelTable {
        let n = values.nrows();
        let k = values.ncols();
        PretextLabelTable::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            (0..n).map(|i| format!("c{}", i % 2)).collect(),
            (0..k).map(|j| format!("t{j}")).collect(),
            values,
        )
        .unwrap()
    }

    #[test]
    fn standardized_columns() {
        let t = table(array![[1.0, 10.0], [2.0, 10.0], [6.0, 10.0], [-3.0, 10.0]]);
        let z = t.standardized();
        let col = z.column(0);
        let mean = col.sum() / 4.0;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-12);
        assert!(z.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nan_cell_reports_coordinates() {
        let err = PretextLabelTable::new(
            vec!["a".into(), "b".into()],
            vec!["x".into(), "y".into()],
            vec!["f0".into()],
            array![[1.0], [f64::NAN]],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, ref task, .. } if task == "f0"));
    }

    #[test]
    fn missing_task_column() {
        let t = table(array![[1.0], [2.0]]);
        assert!(matches!(
            t.select_tasks(&["zcr".to_string()]),
            Err(Error::MissingTask(_))
        ));
    }

    #[test]
    fn csv_requires_id_label_header() {
        assert!(PretextLabelTable::from_reader("label,id,f0\n".as_bytes()).is_err());
        let err = PretextLabelTable::from_reader("id,label,f0\na,x,nan\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 6)
        ) {
            let t = table(Array2::from_shape_vec((3, 2), vals).unwrap());
            let mut buf = Vec::new();
            t.to_writer(&mut buf).unwrap();
            let back = PretextLabelTable::from_reader(buf.as_slice()).unwrap();
            prop_assert_eq!(back.sample_ids(), t.sample_ids());
            prop_assert_eq!(back.labels(), t.labels());
            for (a, b) in back.values().iter().zip(t.values().iter()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
