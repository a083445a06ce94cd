use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HasId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            seed: 7,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|x| !(*x > 0.0)) {
            return Err(Error::Config(format!("split fractions must be positive, got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions must sum to 1, got {f:?}")));
        }
        Ok(())
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train_fraction, self.val_fraction, self.test_fraction]
    }
}

/// Index sets into the record list, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Stratified, seeded partition of `labels.len()` items.
///
/// Split sizes are the rounded global fractions. Within each class the
/// floor of its share goes to every split and the leftover items are handed
/// to the splits with the largest fractional remainder that still have room,
/// which keeps every class within one item of its proportional share.
pub fn split_indices(labels: &[usize], spec: &SplitSpec) -> Result<SplitIndices> {
    spec.validate()?;
    let n = labels.len();
    if n == 0 {
        return Err(Error::domain("cannot split an empty corpus"));
    }
    let fr = spec.fractions();
    let train_n = (fr[0] * n as f64).round() as usize;
    let val_n = ((fr[1] * n as f64).round() as usize).min(n - train_n.min(n));
    let targets = [train_n.min(n), val_n, n - train_n.min(n) - val_n];

    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut alloc = vec![[0usize; 3]; n_classes];
    let mut remainders = vec![[0f64; 3]; n_classes];
    let mut deficit = targets;
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        for s in 0..3 {
            let share = fr[s] * members.len() as f64;
            alloc[c][s] = share.floor() as usize;
            remainders[c][s] = share - share.floor();
        }
        // floors can exceed a rounded-down global target; trim from the largest share
        for s in 0..3 {
            let used: usize = (0..=c).map(|k| alloc[k][s]).sum();
            if used > targets[s] {
                alloc[c][s] -= used - targets[s];
                remainders[c][s] = 0.0;
            }
        }
    }
    for s in 0..3 {
        deficit[s] = targets[s] - alloc.iter().map(|a| a[s]).sum::<usize>();
    }
    for c in 0..n_classes {
        let mut leftover = by_class[c].len() - alloc[c].iter().sum::<usize>();
        while leftover > 0 {
            let s = (0..3)
                .filter(|&s| deficit[s] > 0)
                .max_by(|&a, &b| {
                    remainders[c][a]
                        .total_cmp(&remainders[c][b])
                        .then(deficit[a].cmp(&deficit[b]))
                        .then(b.cmp(&a))
                })
                .expect("leftover items always fit a remaining deficit");
            alloc[c][s] += 1;
            deficit[s] -= 1;
            remainders[c][s] = -1.0;
            leftover -= 1;
        }
    }

    let mut parts: [Vec<usize>; 3] = Default::default();
    for (c, members) in by_class.iter().enumerate() {
        let mut it = members.iter().copied();
        for (s, part) in parts.iter_mut().enumerate() {
            part.extend(it.by_ref().take(alloc[c][s]));
        }
    }
    for (name, part) in ["train", "val", "test"].iter().zip(parts.iter_mut()) {
        if part.is_empty() {
            return Err(Error::domain(format!("{name} split would receive no records")));
        }
        part.sort_unstable();
    }
    let [train, val, test] = parts;
    Ok(SplitIndices { train, val, test })
}

/// Stratified split of records by their class.
pub fn split<T: Clone>(records: &[T], class_of: impl Fn(&T) -> usize, spec: &SplitSpec) -> Result<Split<T>> {
    let labels: Vec<usize> = records.iter().map(class_of).collect();
    let idx = split_indices(&labels, spec)?;
    let pick = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: pick(&idx.train),
        val: pick(&idx.val),
        test: pick(&idx.test),
    })
}

/// Writes a split manifest: one record id per line.
pub fn write_manifest<T: HasId>(path: &Path, records: &[T]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        writeln!(f, "{}", r.id()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let id = line.trim();
        if !id.is_empty() {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}
