//! Few-shot, hold-out and cross-validation splits over dataset indices.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    ZeroShot,
    KShot(usize),
    FractionSplit(f64),
    CrossVal(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub stratified: bool,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            mode: SplitMode::FractionSplit(0.8),
            stratified: true,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn new(mode: SplitMode, seed: u64) -> Self {
        SplitPlan {
            mode,
            stratified: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            SplitMode::KShot(0) => Err(Error::Config("k-shot needs k >= 1".into())),
            SplitMode::CrossVal(f) if f < 2 => Err(Error::Config(format!("cross-validation needs >= 2 folds, got {f}"))),
            SplitMode::FractionSplit(t) if !(t > 0.0 && t < 1.0) => {
                Err(Error::Config(format!("train fraction must lie in (0, 1), got {t}")))
            }
            _ => Ok(()),
        }
    }

    pub fn describe(&self) -> String {
        let strat = if self.stratified { "stratified" } else { "unstratified" };
        match self.mode {
            SplitMode::ZeroShot => "zero-shot (no task training)".to_string(),
            SplitMode::KShot(k) => format!("{k}-shot {strat}"),
            SplitMode::FractionSplit(t) => format!("{:.0}/{:.0} {strat} hold-out", t * 100.0, (1.0 - t) * 100.0),
            SplitMode::CrossVal(f) => format!("{f}-fold {strat} cross-validation"),
        }
    }
}

/// Index sets into the dataset, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fisher-Yates shuffle.
pub fn shuffle<T, R: Rng + ?Sized>(items: &mut [T], rng: &mut R) {
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn by_class(labels: &[usize], num_classes: usize, seed: u64) -> Vec<Vec<usize>> {
    (0..num_classes)
        .map(|c| {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            shuffle(&mut idx, &mut rng::stream(seed, &[tag::SPLIT, c as u64]));
            idx
        })
        .collect()
}

fn shuffled_all(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    shuffle(&mut idx, &mut rng::stream(seed, &[tag::SPLIT, u64::MAX]));
    idx
}

fn finish(mut train: Vec<usize>, mut test: Vec<usize>) -> Split {
    train.sort_unstable();
    test.sort_unstable();
    Split { train, test }
}

/// Build `(train, test)` index pairs for `plan`; deterministic in `plan.seed`.
pub fn make_splits(data: &EmbeddingDataset, plan: &SplitPlan) -> Result<Vec<Split>> {
    plan.validate()?;
    let n = data.len();
    let labels = data.labels();
    let k_classes = data.num_classes();

    match plan.mode {
        SplitMode::ZeroShot => Ok(vec![Split {
            train: Vec::new(),
            test: (0..n).collect(),
        }]),
        SplitMode::KShot(k) => {
            if plan.stratified {
                let groups = by_class(&labels, k_classes, plan.seed);
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for (c, g) in groups.iter().enumerate() {
                    if g.len() < k {
                        return Err(Error::InsufficientClass {
                            class: data.classes[c].clone(),
                            needed: k,
                            found: g.len(),
                        });
                    }
                    train.extend_from_slice(&g[..k]);
                    test.extend_from_slice(&g[k..]);
                }
                Ok(vec![finish(train, test)])
            } else {
                let total = k * k_classes;
                if total > n {
                    return Err(Error::InsufficientClass {
                        class: "<all>".into(),
                        needed: total,
                        found: n,
                    });
                }
                let idx = shuffled_all(n, plan.seed);
                Ok(vec![finish(idx[..total].to_vec(), idx[total..].to_vec())])
            }
        }
        SplitMode::FractionSplit(t) => {
            if plan.stratified {
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for g in by_class(&labels, k_classes, plan.seed) {
                    let cut = (t * g.len() as f64).round() as usize;
                    train.extend_from_slice(&g[..cut]);
                    test.extend_from_slice(&g[cut..]);
                }
                Ok(vec![finish(train, test)])
            } else {
                let idx = shuffled_all(n, plan.seed);
                let cut = (t * n as f64).round() as usize;
                Ok(vec![finish(idx[..cut].to_vec(), idx[cut..].to_vec())])
            }
        }
        SplitMode::CrossVal(folds) => {
            if folds > n {
                return Err(Error::Config(format!("{folds} folds requested for {n} instances")));
            }
            // Deal a class-ordered (or plain) permutation round-robin so fold
            // sizes differ by at most one.
            let order: Vec<usize> = if plan.stratified {
                by_class(&labels, k_classes, plan.seed).concat()
            } else {
                shuffled_all(n, plan.seed)
            };
            let mut fold_of = vec![0usize; n];
            for (pos, &i) in order.iter().enumerate() {
                fold_of[i] = pos % folds;
            }
            Ok((0..folds)
                .map(|f| {
                    let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| fold_of[i] == f);
                    Split { train, test }
                })
                .collect())
        }
    }
}
