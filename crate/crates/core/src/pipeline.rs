//! End-to-end orchestration: manifest to dataset to reports.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{mrmr_select, mrmr_select_greedy, rfe_select, MrmrInputs, SubsetSelection};
use crate::data::{parse_manifest, summarize_file, CiDataset, Manifest, PretextLabelTable};
use crate::error::{Error, Result};
use crate::features::{mel_spectrogram, read_wav, AudioSignal, ExtractionConfig, MelConfig, PretextTask};
use crate::hsic::{ci_single_task_with, CiEstimate, ClassKernels, SigmaChoice};
use crate::io::write_atomic;
use crate::kernels::{gaussian_downsample, read_embedding_cache, DownsampleConfig, DownsampledEmbedding};

/// Settings that turn audio into a sample embedding.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub mel: MelConfig,
    pub downsample: DownsampleConfig,
}

pub fn embed_signal(signal: &AudioSignal, id: &str, config: &EmbeddingConfig) -> Result<DownsampledEmbedding> {
    gaussian_downsample(&mel_spectrogram(signal, &config.mel)?, id, &config.downsample)
}

/// Reads every file once, producing scalar labels for `tasks` and embeddings.
pub fn extract_all(
    manifest: &Manifest,
    tasks: &[PretextTask],
    extraction: &ExtractionConfig,
    embedding: &EmbeddingConfig,
) -> Result<(PretextLabelTable, Vec<DownsampledEmbedding>)> {
    manifest.check_audio()?;
    let per_file = manifest
        .entries
        .par_iter()
        .map(|e| {
            let signal = read_wav(e.audio_path.as_deref().expect("checked above"))?;
            let values = summarize_file(&signal, tasks, extraction)?;
            Ok((values, embed_signal(&signal, &e.sample_id, embedding)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut flat = Vec::with_capacity(manifest.len() * tasks.len());
    let mut embeddings = Vec::with_capacity(manifest.len());
    for (values, emb) in per_file {
        flat.extend(values);
        embeddings.push(emb);
    }
    let values = Array2::from_shape_vec((manifest.len(), tasks.len()), flat)
        .map_err(|e| Error::Malformed(e.to_string()))?;
    let table = PretextLabelTable::new(
        manifest.sample_ids(),
        manifest.labels(),
        tasks.iter().map(|t| t.id().to_string()).collect(),
        values,
    )?;
    Ok((table, embeddings))
}

pub fn compute_embeddings(manifest: &Manifest, config: &EmbeddingConfig) -> Result<Vec<DownsampledEmbedding>> {
    manifest.check_audio()?;
    manifest
        .entries
        .par_iter()
        .map(|e| embed_signal(&read_wav(e.audio_path.as_deref().expect("checked above"))?, &e.sample_id, config))
        .collect()
}

/// Where dataset inputs come from. Precomputed tables and caches take
/// precedence over extraction from audio.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub manifest: PathBuf,
    /// Scalar task ids; empty means every column of the feature table, or
    /// every known task when extracting.
    pub tasks: Vec<String>,
    pub features: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Matrix-valued tasks read from embedding caches, as `(id, path)`.
    pub matrix_tasks: Vec<(String, PathBuf)>,
    /// Keep raw scalar values instead of standardizing them.
    pub raw: bool,
    pub extraction: ExtractionConfig,
    pub embedding: EmbeddingConfig,
}

fn parse_tasks(ids: &[String]) -> Result<Vec<PretextTask>> {
    if ids.is_empty() {
        return Ok(PretextTask::ALL.to_vec());
    }
    ids.iter().map(|s| s.parse()).collect()
}

/// Embeddings from a cache, reordered to manifest order.
fn aligned_cache(path: &Path, manifest: &Manifest) -> Result<Vec<DownsampledEmbedding>> {
    let mut by_id: HashMap<String, DownsampledEmbedding> =
        read_embedding_cache(path)?.into_iter().map(|e| (e.id.clone(), e)).collect();
    manifest
        .entries
        .iter()
        .map(|e| {
            by_id.remove(&e.sample_id).ok_or_else(|| {
                Error::Cache(format!("{} has no entry for sample '{}'", path.display(), e.sample_id))
            })
        })
        .collect()
}

/// Loads or computes the scalar label table for `spec`.
pub fn load_table(spec: &DatasetSpec, manifest: &Manifest) -> Result<PretextLabelTable> {
    match &spec.features {
        Some(path) => {
            let table = PretextLabelTable::read_csv(path)?.align_to(manifest)?;
            if spec.tasks.is_empty() {
                Ok(table)
            } else {
                table.select_tasks(&spec.tasks)
            }
        }
        None => {
            let tasks = parse_tasks(&spec.tasks)?;
            crate::data::build_label_table(manifest, &tasks, &spec.extraction)
        }
    }
}

pub fn load_dataset(spec: &DatasetSpec) -> Result<CiDataset> {
    let manifest = parse_manifest(&spec.manifest)?;
    let (table, embeddings) = match (&spec.features, &spec.embeddings) {
        (None, None) => extract_all(&manifest, &parse_tasks(&spec.tasks)?, &spec.extraction, &spec.embedding)?,
        (_, Some(cache)) => (load_table(spec, &manifest)?, aligned_cache(cache, &manifest)?),
        (Some(_), None) => (load_table(spec, &manifest)?, compute_embeddings(&manifest, &spec.embedding)?),
    };
    let mut dataset = CiDataset::from_table(&table, embeddings, !spec.raw)?;
    for (id, path) in &spec.matrix_tasks {
        let values = aligned_cache(path, &manifest)?.into_iter().map(|e| e.values).collect();
        dataset = dataset.with_matrix_task(id, values)?;
    }
    Ok(dataset)
}

/// Conditional estimate for each task, sharing the sample kernels.
pub fn compute_ci(dataset: &CiDataset, task_ids: &[String], sigma: SigmaChoice) -> Result<Vec<CiEstimate>> {
    let kernels = ClassKernels::build(dataset)?;
    task_ids
        .iter()
        .map(|t| ci_single_task_with(dataset, &kernels, t, sigma))
        .collect()
}

/// MRMR over the dataset's scalar tasks.
pub fn select_mrmr(
    dataset: &CiDataset,
    task_ids: &[String],
    p: usize,
    bins: usize,
    greedy: bool,
    sigma: SigmaChoice,
) -> Result<SubsetSelection> {
    let values = dataset.scalar_columns(task_ids)?;
    let ci = compute_ci(dataset, task_ids, sigma)?.into_iter().map(|e| e.value).collect();
    let inputs = MrmrInputs::new(task_ids.to_vec(), ci, values.view(), bins)?;
    if greedy {
        mrmr_select_greedy(&inputs, p)
    } else {
        mrmr_select(&inputs, p)
    }
}

/// RFE over the dataset's scalar tasks, standardized over the whole dataset.
pub fn select_rfe(dataset: &CiDataset, task_ids: &[String], p: usize) -> Result<SubsetSelection> {
    let mut z = dataset.scalar_columns(task_ids)?;
    for mut col in z.columns_mut() {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let scale = if std > 0.0 { 1.0 / std } else { 0.0 };
        col.mapv_inplace(|v| (v - mean) * scale);
    }
    rfe_select(task_ids, z.view(), dataset.labels(), p)
}

pub const CI_REPORT: &str = "ci_report.csv";
pub const CI_PER_CLASS: &str = "ci_per_class.csv";

#[derive(Serialize)]
struct ReportRow<'a> {
    task_id: &'a str,
    ci_estimate: f64,
}

#[derive(Serialize)]
struct PerClassRow<'a> {
    task_id: &'a str,
    class_id: &'a str,
    n_c: usize,
    hsic_c: f64,
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))
}

/// Writes `ci_report.csv` and `ci_per_class.csv` into `dir`.
pub fn write_ci_report(dir: &Path, estimates: &[CiEstimate]) -> Result<()> {
    let report = csv_bytes(estimates.iter().map(|e| ReportRow {
        task_id: &e.subject,
        ci_estimate: e.value,
    }))?;
    let per_class = csv_bytes(estimates.iter().flat_map(|e| {
        e.per_class.iter().map(|c| PerClassRow {
            task_id: &e.subject,
            class_id: &c.class_id,
            n_c: c.n,
            hsic_c: c.hsic,
        })
    }))?;
    write_atomic(&dir.join(CI_REPORT), &report)?;
    write_atomic(&dir.join(CI_PER_CLASS), &per_class)
}
