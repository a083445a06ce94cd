use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::trainer::{rng_stream, Stream, TrainedModel};
use crate::corpus::{LabeledRecord, Task};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub id: String,
    pub label: usize,
    pub x: f64,
    pub y: f64,
}

/// Projects the rows of `features` (n × d) onto their first two principal
/// components. Each axis is signed so that its largest-magnitude loading is
/// positive.
pub fn principal_components_2d(features: &DMatrix<f64>) -> Vec<(f64, f64)> {
    let n = features.nrows();
    if n == 0 {
        return Vec::new();
    }
    let mean = features.row_mean();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| {
        let Some(&col) = order.get(k) else {
            return nalgebra::DVector::zeros(features.ncols());
        };
        let v = eig.eigenvectors.column(col).into_owned();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            -v
        } else {
            v
        }
    };
    let (a, b) = (axis(0), axis(1));
    centered.row_iter().map(|r| (r.dot(&a.transpose()), r.dot(&b.transpose()))).collect()
}

/// Samples up to `n_per_class` records per class with the sampling stream
/// of `seed`, computes their fused features `F_u` and projects them to 2-D.
/// Rows follow the input order of the sampled records.
pub fn export_embeddings(
    trained: &TrainedModel,
    records: &[LabeledRecord],
    task: Task,
    n_per_class: usize,
    seed: u64,
) -> Result<Vec<EmbeddingRow>> {
    if records.is_empty() {
        return Err(Error::domain("cannot export embeddings of an empty split"));
    }
    let mut rng = rng_stream(seed, Stream::Sampling);
    let mut chosen = Vec::new();
    for class in 0..2 {
        let mut idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].class(task) == class).collect();
        if idx.is_empty() {
            log::warn!("class {class} is absent from the split; exporting the other class only");
            continue;
        }
        idx.shuffle(&mut rng);
        idx.truncate(n_per_class);
        chosen.extend(idx);
    }
    chosen.sort_unstable();

    let d = trained.model.d();
    let mut features = DMatrix::zeros(chosen.len(), d);
    for (row, &i) in chosen.iter().enumerate() {
        let bundle = trained.featurizer.bundle(&records[i].record)?;
        let trace = trained.model.forward(&trained.params, &bundle)?;
        for (j, v) in trace.f_u.iter().enumerate() {
            features[(row, j)] = *v;
        }
    }
    let coords = principal_components_2d(&features);
    Ok(chosen
        .iter()
        .zip(coords)
        .map(|(&i, (x, y))| EmbeddingRow {
            id: records[i].record.id.clone(),
            label: records[i].class(task),
            x,
            y,
        })
        .collect())
}

/// Writes rows as CSV with header `id,label,x,y`.
pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_features_share_coordinates() {
        let m = DMatrix::from_row_slice(3, 4, &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0, 0.0, 1.0, 0.0, -1.0]);
        let c = principal_components_2d(&m);
        assert_eq!(c[0], c[1]);
        assert!(c.iter().all(|(x, y)| x.is_finite() && y.is_finite()));
    }

    #[test]
    fn first_axis_carries_more_variance() {
        let mut data = Vec::new();
        for i in 0..20 {
            let t = i as f64;
            data.extend_from_slice(&[3.0 * t, 0.5 * (t * 1.7).sin(), 0.1 * (t * 0.3).cos()]);
        }
        let m = DMatrix::from_row_slice(20, 3, &data);
        let c = principal_components_2d(&m);
        let var = |f: &dyn Fn(&(f64, f64)) -> f64| {
            let mean = c.iter().map(f).sum::<f64>() / c.len() as f64;
            c.iter().map(|p| (f(p) - mean).powi(2)).sum::<f64>()
        };
        assert!(var(&|p| p.0) >= var(&|p| p.1));
    }
}
