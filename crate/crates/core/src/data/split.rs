use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, EpochedDataset, Result};

/// Index partition produced by [`split_indices`]; both sides sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Class-balanced validation partition holding `floor(frac · n / n_classes)`
/// trials of every class (capped by the rarest class).
pub fn split_indices(labels: &[usize], n_classes: usize, frac: f64, seed: u64) -> Result<SplitIndices> {
    if !(0.0..1.0).contains(&frac) {
        return Err(DataError::Split(format!("validation fraction {frac} outside [0, 1)")));
    }
    if frac == 0.0 || labels.is_empty() {
        return Ok(SplitIndices { train: (0..labels.len()).collect(), val: Vec::new() });
    }
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(DataError::Split(format!("class {c} has no trials")));
    }
    let rarest = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let per_class = ((frac * labels.len() as f64 / n_classes as f64).floor() as usize).min(rarest);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_val = vec![false; labels.len()];
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in &members[..per_class] {
            in_val[i] = true;
        }
    }
    let (val, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| in_val[i]);
    Ok(SplitIndices { train, val })
}

pub fn split_train_val(d: &EpochedDataset, frac: f64, seed: u64) -> Result<(EpochedDataset, EpochedDataset)> {
    let s = split_indices(d.labels(), d.n_classes(), frac, seed)?;
    Ok((d.select_trials(&s.train), d.select_trials(&s.val)))
}
