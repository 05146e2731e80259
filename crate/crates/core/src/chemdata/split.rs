use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Disjoint train/validation/test index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    /// `None` when loaded from index files.
    pub seed: Option<u64>,
}

impl SplitIndices {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }
}

/// Seeded shuffle then partition. Validation and test get `floor(f·n)`
/// entries; the remainder goes to train.
pub fn split_dataset(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<SplitIndices> {
    let (ftr, fva, fte) = fractions;
    if [ftr, fva, fte].iter().any(|f| !(*f > 0.0)) {
        return Err(Error::Split(format!("fractions must be positive, got {fractions:?}")));
    }
    if (ftr + fva + fte - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("fractions must sum to 1, got {fractions:?}")));
    }
    // guard against 0.1 * 30 = 2.9999999999999996
    let take = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
    let n_va = take(fva);
    let n_te = take(fte);
    let n_tr = n.saturating_sub(n_va + n_te);
    if n_tr == 0 || n_va == 0 || n_te == 0 {
        return Err(Error::Split(format!(
            "n={n} too small for fractions {fractions:?} (sizes {n_tr}/{n_va}/{n_te})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n - n_te);
    let validation = idx.split_off(n_tr);
    Ok(SplitIndices { train: idx, validation, test, seed: Some(seed) })
}

pub fn write_split_files(dir: impl AsRef<Path>, split: &SplitIndices) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for (name, idx) in [("train.idx", &split.train), ("val.idx", &split.validation), ("test.idx", &split.test)] {
        let body: String = idx.iter().map(|i| format!("{i}\n")).collect();
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

pub fn read_split_files(dir: impl AsRef<Path>) -> Result<SplitIndices> {
    let dir = dir.as_ref();
    let read = |name: &str| -> Result<Vec<usize>> {
        let text = std::fs::read_to_string(dir.join(name))?;
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| l.trim().parse().map_err(|_| Error::parse(k + 1, format!("{name}: bad index `{l}`"))))
            .collect()
    };
    Ok(SplitIndices { train: read("train.idx")?, validation: read("val.idx")?, test: read("test.idx")?, seed: None })
}
