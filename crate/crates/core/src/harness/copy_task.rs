use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// The separator token; symbols are `1..=vocab`.
pub const SEPARATOR: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CopyTaskConfig {
    /// Number of distinct symbols, excluding the separator.
    pub vocab: usize,
    pub word_len: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for CopyTaskConfig {
    fn default() -> Self {
        Self {
            vocab: 10,
            word_len: 15,
            n_train: 1024,
            n_test: 256,
            seed: 0,
        }
    }
}

impl CopyTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::Config(format!("copy task needs vocab >= 2, got {}", self.vocab)));
        }
        if self.word_len == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("word_len, n_train and n_test must be positive".into()));
        }
        Ok(())
    }

    /// Tokens the model must embed: the symbols plus the separator.
    pub fn n_tokens(&self) -> usize {
        self.vocab + 1
    }

    pub fn seq_len(&self) -> usize {
        2 * (self.word_len + 1)
    }
}

/// Samples `0·w·0·w`, all of length `2·(word_len + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyDataset {
    word_len: usize,
    sequences: Vec<Vec<usize>>,
}

/// `0·w·0·w`.
pub fn copy_sample(word: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(2 * word.len() + 2);
    for _ in 0..2 {
        s.push(SEPARATOR);
        s.extend_from_slice(word);
    }
    s
}

impl CopyDataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn word_len(&self) -> usize {
        self.word_len
    }

    pub fn seq_len(&self) -> usize {
        2 * (self.word_len + 1)
    }

    pub fn sequences(&self) -> &[Vec<usize>] {
        &self.sequences
    }

    /// Input positions whose next token lies in the second copy of `w`.
    pub fn copy_positions(&self) -> std::ops::Range<usize> {
        self.word_len + 1..2 * self.word_len + 1
    }

    /// Row-stacked tokens and next-token targets for the given samples; the
    /// final position of each sequence has no target.
    pub fn batch(&self, indices: &[usize]) -> (Vec<usize>, Vec<Option<usize>>) {
        let t = self.seq_len();
        let mut tokens = Vec::with_capacity(indices.len() * t);
        let mut targets = Vec::with_capacity(indices.len() * t);
        for &i in indices {
            let s = &self.sequences[i];
            tokens.extend_from_slice(s);
            targets.extend(s[1..].iter().map(|&x| Some(x)));
            targets.push(None);
        }
        (tokens, targets)
    }
}

/// Deterministic train/test split; words are uniform over `1..=vocab`.
pub fn generate_copy_dataset(cfg: &CopyTaskConfig) -> Result<(CopyDataset, CopyDataset)> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let mut draw = |n: usize| CopyDataset {
        word_len: cfg.word_len,
        sequences: (0..n)
            .map(|_| {
                let w: Vec<usize> = (0..cfg.word_len).map(|_| 1 + rng.below(cfg.vocab)).collect();
                copy_sample(&w)
            })
            .collect(),
    };
    let train = draw(cfg.n_train);
    let test = draw(cfg.n_test);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_format() {
        assert_eq!(copy_sample(&[5, 2, 9]), vec![0, 5, 2, 9, 0, 5, 2, 9]);
    }

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = CopyTaskConfig { word_len: 3, n_train: 50, n_test: 10, ..Default::default() };
        let (a, b) = generate_copy_dataset(&cfg).unwrap();
        assert_eq!((a.clone(), b.clone()), generate_copy_dataset(&cfg).unwrap());
        for s in a.sequences().iter().chain(b.sequences()) {
            assert_eq!(s.len(), 8);
            assert_eq!((s[0], s[4]), (0, 0));
            assert_eq!(s[1..4], s[5..8]);
            assert!(s[1..4].iter().all(|&x| (1..=10).contains(&x)));
        }
        let other = generate_copy_dataset(&CopyTaskConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(other.0, a);
    }

    #[test]
    fn targets_and_copy_region() {
        let cfg = CopyTaskConfig { word_len: 3, n_train: 2, n_test: 1, ..Default::default() };
        let (train, _) = generate_copy_dataset(&cfg).unwrap();
        let (tokens, targets) = train.batch(&[1]);
        let s = &train.sequences()[1];
        assert_eq!(&tokens, s);
        assert_eq!(targets[..7], s[1..].iter().map(|&x| Some(x)).collect::<Vec<_>>()[..]);
        assert_eq!(targets[7], None);
        // Inputs 4..7 predict the second copy s[5..8].
        assert_eq!(train.copy_positions(), 4..7);
    }

    #[test]
    fn rejects_tiny_vocab() {
        let cfg = CopyTaskConfig { vocab: 1, ..Default::default() };
        assert!(matches!(generate_copy_dataset(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn symbols_are_uniform() {
        let cfg = CopyTaskConfig { n_train: 10_000, n_test: 1, ..Default::default() };
        let (train, _) = generate_copy_dataset(&cfg).unwrap();
        let mut counts = [0usize; 10];
        for s in train.sequences() {
            for &x in &s[1..=cfg.word_len] {
                counts[x - 1] += 1;
            }
        }
        let expected = (10_000 * cfg.word_len) as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.99 quantile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }
}
