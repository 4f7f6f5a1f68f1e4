use clipsight_tensor::Stream;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Validation,
    Holdout,
}

impl SplitTag {
    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Validation => "validation",
            SplitTag::Holdout => "holdout",
        }
    }

    pub fn parse(name: &str) -> Option<SplitTag> {
        [SplitTag::Train, SplitTag::Validation, SplitTag::Holdout]
            .into_iter()
            .find(|t| t.name() == name)
    }
}

/// Record indices per split, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub holdout: Vec<usize>,
}

impl Split {
    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.holdout.len()
    }

    /// Per-record tags, indexed by record position.
    pub fn tags(&self) -> Vec<SplitTag> {
        let mut out = vec![SplitTag::Train; self.total()];
        for &i in &self.validation {
            out[i] = SplitTag::Validation;
        }
        for &i in &self.holdout {
            out[i] = SplitTag::Holdout;
        }
        out
    }

    pub fn part(&self, tag: SplitTag) -> &[usize] {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Validation => &self.validation,
            SplitTag::Holdout => &self.holdout,
        }
    }
}

/// Uniform random 60/20/20 split. Validation and holdout each get
/// floor(n/5) records; training takes the remainder.
pub fn split_dataset(n: usize, seed: u64) -> Result<Split> {
    if n < 5 {
        return Err(PipelineError::invalid(format!("need at least 5 records to split, got {n}")));
    }
    let n_val = n / 5;
    let n_hold = n / 5;
    let n_train = n - n_val - n_hold;

    let mut order: Vec<usize> = (0..n).collect();
    let mut stream = Stream::new(seed, "dataset-split", 0);
    stream.shuffle(&mut order);

    let mut split = Split {
        train: order[..n_train].to_vec(),
        validation: order[n_train..n_train + n_val].to_vec(),
        holdout: order[n_train + n_val..].to_vec(),
    };
    split.train.sort_unstable();
    split.validation.sort_unstable();
    split.holdout.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_corpus_size_splits_972_324_324() {
        let s = split_dataset(1620, 7).unwrap();
        assert_eq!(s.train.len(), 972);
        assert_eq!(s.validation.len(), 324);
        assert_eq!(s.holdout.len(), 324);
    }

    #[test]
    fn five_records_split_3_1_1_and_fewer_error() {
        let s = split_dataset(5, 0).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.holdout.len()), (3, 1, 1));
        assert!(split_dataset(4, 0).is_err());
    }

    #[test]
    fn same_seed_same_split_and_parts_partition() {
        let a = split_dataset(101, 42).unwrap();
        let b = split_dataset(101, 42).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(101, 43).unwrap();
        assert_ne!(a, c, "different seed should reshuffle");

        let mut all: Vec<usize> = a
            .train
            .iter()
            .chain(&a.validation)
            .chain(&a.holdout)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..101).collect::<Vec<_>>());
    }

    #[test]
    fn tags_line_up_with_parts() {
        let s = split_dataset(20, 3).unwrap();
        let tags = s.tags();
        for &i in &s.validation {
            assert_eq!(tags[i], SplitTag::Validation);
        }
        for &i in &s.holdout {
            assert_eq!(tags[i], SplitTag::Holdout);
        }
        assert_eq!(tags.iter().filter(|t| **t == SplitTag::Train).count(), s.train.len());
    }
}
