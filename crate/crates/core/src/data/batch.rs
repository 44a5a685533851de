use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, EpochedDataset, Montage, Result};

/// The same trials seen through the high-density and the student montage.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBatch {
    /// `N × C_hd × T`, row-major.
    pub x_teacher: Vec<f32>,
    /// `N × C_ld × T`, row-major.
    pub x_student: Vec<f32>,
    pub y: Vec<usize>,
    pub trial_indices: Vec<usize>,
    pub teacher_channels: usize,
    pub student_channels: usize,
    pub n_samples: usize,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }
    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Iterator over one pass of paired mini-batches.
pub struct PairedBatches<'a> {
    data: &'a EpochedDataset,
    student_idx: Vec<usize>,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

/// Shuffled pass over `d_hd`; the trailing partial batch is kept.
pub fn paired_batches<'a>(
    d_hd: &'a EpochedDataset,
    m_student: &Montage,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<PairedBatches<'a>> {
    let mut it = PairedBatches::sequential(d_hd, m_student, batch_size)?;
    it.order.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle_seed));
    Ok(it)
}

impl<'a> PairedBatches<'a> {
    /// Unshuffled pass in trial order.
    pub fn sequential(d_hd: &'a EpochedDataset, m_student: &Montage, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(DataError::Argument("batch size must be at least 1".into()));
        }
        let student_idx = d_hd.channel_indices(m_student.channels())?;
        Ok(Self {
            data: d_hd,
            student_idx,
            order: (0..d_hd.n_trials()).collect(),
            batch_size,
            cursor: 0,
        })
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}

impl Iterator for PairedBatches<'_> {
    type Item = PairedBatch;

    fn next(&mut self) -> Option<PairedBatch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;

        let d = self.data;
        let t = d.n_samples();
        let mut x_teacher = Vec::with_capacity(indices.len() * d.n_channels() * t);
        let mut x_student = Vec::with_capacity(indices.len() * self.student_idx.len() * t);
        for &i in &indices {
            let block = d.trial(i);
            x_teacher.extend_from_slice(block);
            for &ch in &self.student_idx {
                x_student.extend_from_slice(&block[ch * t..(ch + 1) * t]);
            }
        }
        Some(PairedBatch {
            x_teacher,
            x_student,
            y: indices.iter().map(|&i| d.labels()[i]).collect(),
            trial_indices: indices,
            teacher_channels: d.n_channels(),
            student_channels: self.student_idx.len(),
            n_samples: t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n_trials: usize) -> EpochedDataset {
        let m = Montage::bcic_22();
        let t = 4;
        let trials: Vec<f32> = (0..n_trials * 22 * t).map(|v| v as f32).collect();
        let labels = (0..n_trials).map(|i| i % 4).collect();
        EpochedDataset::new(trials, labels, t, 4, 128.0, m.channels().to_vec(), "S01", "T").unwrap()
    }

    #[test]
    fn partial_final_batch_is_kept() {
        let d = dataset(252);
        let sizes: Vec<usize> =
            paired_batches(&d, &Montage::headphone_4p(), 128, 0).unwrap().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![128, 124]);
    }

    #[test]
    fn student_rows_are_montage_restrictions() {
        let d = dataset(10);
        let m = Montage::headband_4b();
        let idx = m.parent_indices().unwrap().to_vec();
        for b in paired_batches(&d, &m, 3, 9).unwrap() {
            let t = b.n_samples;
            for i in 0..b.len() {
                for (k, &ch) in idx.iter().enumerate() {
                    let s = &b.x_student[(i * 4 + k) * t..(i * 4 + k + 1) * t];
                    let hd = &b.x_teacher[(i * 22 + ch) * t..(i * 22 + ch + 1) * t];
                    assert_eq!(s, hd);
                }
                assert_eq!(b.y[i], d.labels()[b.trial_indices[i]]);
            }
        }
    }

    #[test]
    fn zero_batch_size_is_rejected() {
        let d = dataset(2);
        assert!(paired_batches(&d, &Montage::headphone_4p(), 0, 0).is_err());
    }

    proptest! {
        #[test]
        fn each_pass_is_a_seeded_permutation(n in 1usize..60, bs in 1usize..20, seed in any::<u64>()) {
            let d = dataset(n);
            let m = Montage::headphone_4p();
            let pass = |s| paired_batches(&d, &m, bs, s).unwrap().flat_map(|b| b.trial_indices).collect::<Vec<_>>();
            let a = pass(seed);
            let mut sorted = a.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            prop_assert_eq!(a, pass(seed));
        }
    }
}
