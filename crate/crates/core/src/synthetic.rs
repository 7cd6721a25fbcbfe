//! Seeded synthetic datasets with known conditional structure.
//!
//! Each sample has a class `Y`, an embedding `X = prototype(Y) + noise` and
//! three scalar labels:
//!
//! * `z_ci`: `g(Y) + noise`, independent of `X` given `Y`;
//! * `z_dep`: a fixed linear read-out of `X`, dependent on `X` given `Y`;
//! * `z_mix`: the average of the two.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{CiDataset, PretextLabelTable};
use crate::error::{Error, Result};
use crate::kernels::DownsampledEmbedding;
use crate::rng::{streams, substream};

pub const Z_CI: &str = "z_ci";
pub const Z_DEP: &str = "z_dep";
pub const Z_MIX: &str = "z_mix";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub per_class: usize,
    pub rows: usize,
    pub cols: usize,
    pub embedding_noise: f64,
    pub label_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 5,
            per_class: 20,
            rows: 4,
            cols: 8,
            embedding_noise: 0.5,
            label_noise: 0.5,
        }
    }
}

/// The same samples as a scalar label table and as a ready dataset.
#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub table: PretextLabelTable,
    pub dataset: CiDataset,
}

pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<SyntheticSet> {
    if config.classes == 0 || config.per_class == 0 || config.rows == 0 || config.cols == 0 {
        return Err(Error::InvalidParameter("synthetic sizes must be positive".into()));
    }
    let mut rng = substream(seed, streams::SYNTHETIC);
    let dim = config.rows * config.cols;
    let normal = |rng: &mut rand_chacha::ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);

    let prototypes: Vec<Vec<f64>> = (0..config.classes)
        .map(|_| (0..dim).map(|_| normal(&mut rng)).collect())
        .collect();
    let offsets: Vec<f64> = (0..config.classes).map(|_| 2.0 * normal(&mut rng)).collect();
    let readout: Vec<f64> = (0..dim).map(|_| normal(&mut rng) / (dim as f64).sqrt()).collect();

    let m = config.classes * config.per_class;
    let mut ids = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);
    let mut embeddings = Vec::with_capacity(m);
    let mut values = Array2::zeros((m, 3));
    for c in 0..config.classes {
        for _ in 0..config.per_class {
            let i = ids.len();
            let id = format!("s{i:05}");
            let x: Vec<f64> = prototypes[c]
                .iter()
                .map(|p| p + config.embedding_noise * normal(&mut rng))
                .collect();
            let z_ci = offsets[c] + config.label_noise * normal(&mut rng);
            let z_dep: f64 = x.iter().zip(&readout).map(|(a, b)| a * b).sum();
            values[[i, 0]] = z_ci;
            values[[i, 1]] = z_dep;
            values[[i, 2]] = 0.5 * (z_ci + z_dep);
            embeddings.push(DownsampledEmbedding {
                id: id.clone(),
                values: Array2::from_shape_vec((config.rows, config.cols), x)
                    .expect("dimensions match"),
            });
            labels.push(format!("y{c:03}"));
            ids.push(id);
        }
    }
    let table = PretextLabelTable::new(
        ids,
        labels,
        vec![Z_CI.into(), Z_DEP.into(), Z_MIX.into()],
        values,
    )?;
    let dataset = CiDataset::from_table(&table, embeddings, true)?;
    Ok(SyntheticSet { table, dataset })
}
