use serde::{Deserialize, Serialize};

use super::{ArticleRecord, MetadataVector, METADATA_DIM};
use crate::{Error, Result};

/// Per-column z-score transform of the metadata vector, fitted on the
/// training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: [f64; METADATA_DIM],
    /// Population standard deviation; zero marks a constant column.
    pub sd: [f64; METADATA_DIM],
}

impl Normalizer {
    pub fn fit(train: &[ArticleRecord]) -> Result<Self> {
        let rows: Vec<MetadataVector> = train.iter().map(ArticleRecord::metadata).collect();
        Self::fit_vectors(&rows)
    }

    pub fn fit_vectors(rows: &[MetadataVector]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::domain("cannot fit a normalizer on an empty split"));
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; METADATA_DIM];
        let mut sd = [0.0; METADATA_DIM];
        for j in 0..METADATA_DIM {
            mean[j] = rows.iter().map(|r| r.values[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r.values[j] - mean[j]).powi(2)).sum::<f64>() / n;
            sd[j] = var.sqrt();
            // treat round-off noise around a constant column as constant
            if sd[j] <= 1e-12 * mean[j].abs().max(1.0) {
                sd[j] = 0.0;
            }
        }
        Ok(Self { mean, sd })
    }

    pub fn transform(&self, v: &MetadataVector) -> MetadataVector {
        if v.normalized {
            return *v;
        }
        let mut values = [0.0; METADATA_DIM];
        for j in 0..METADATA_DIM {
            values[j] = if self.sd[j] == 0.0 {
                0.0
            } else {
                (v.values[j] - self.mean[j]) / self.sd[j]
            };
        }
        MetadataVector {
            values,
            normalized: true,
        }
    }

    pub fn transform_record(&self, r: &ArticleRecord) -> MetadataVector {
        self.transform(&r.metadata())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::test_article;

    fn raw(values: [f64; METADATA_DIM]) -> MetadataVector {
        MetadataVector {
            values,
            normalized: false,
        }
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let rows = vec![raw([3.0; 7]), raw([3.0; 7]), raw([3.0; 7])];
        let n = Normalizer::fit_vectors(&rows).unwrap();
        assert!(n.transform(&rows[0]).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_column() {
        let rows = vec![raw([0.0; 7]), raw([2.0; 7])];
        let n = Normalizer::fit_vectors(&rows).unwrap();
        assert_eq!(n.mean[0], 1.0);
        assert_eq!(n.sd[0], 1.0);
        assert_eq!(n.transform(&rows[0]).values[0], -1.0);
        assert_eq!(n.transform(&rows[1]).values[0], 1.0);
    }

    #[test]
    fn test_records_use_train_statistics() {
        let mut a = test_article("a");
        let mut b = test_article("b");
        a.h_index = 10;
        b.h_index = 20;
        let n = Normalizer::fit(&[a, b]).unwrap();
        let mut t = test_article("t");
        t.h_index = 40;
        // train mean 15, sd 5
        assert_eq!(n.transform_record(&t).values[4], 5.0);
        assert!(n.transform_record(&t).normalized);
    }

    #[test]
    fn normalized_train_is_standardized() {
        let rows: Vec<MetadataVector> = (0..50)
            .map(|i| {
                let x = i as f64;
                raw([2000.0 + x, x * x, (x * 0.37).sin(), x / 49.0, 3.0 * x, 1e4 - x, 5.0])
            })
            .collect();
        let n = Normalizer::fit_vectors(&rows).unwrap();
        let t: Vec<MetadataVector> = rows.iter().map(|r| n.transform(r)).collect();
        for j in 0..6 {
            let m = t.iter().map(|r| r.values[j]).sum::<f64>() / 50.0;
            let sd = (t.iter().map(|r| (r.values[j] - m).powi(2)).sum::<f64>() / 50.0).sqrt();
            assert!(m.abs() < 1e-9, "column {j} mean {m}");
            assert!((sd - 1.0).abs() < 1e-9, "column {j} sd {sd}");
        }
        assert!(t.iter().all(|r| r.values[6] == 0.0));
    }

    #[test]
    fn empty_train_is_an_error() {
        assert!(Normalizer::fit(&[]).is_err());
    }
}
