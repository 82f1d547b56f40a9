use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PatchSet;
use crate::error::{Error, Result};
use crate::seed;

/// Train / validation / test fractions, each in (0, 1), summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Fractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = Self { train, val, test };
        f.validate()?;
        Ok(f)
    }

    /// Symmetric train/validation share with the remainder for testing,
    /// e.g. `percent(15.0)` is 15/15/70.
    pub fn percent(train_percent: f64) -> Result<Self> {
        let t = train_percent / 100.0;
        Self::new(t, t, 1.0 - 2.0 * t)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "fractions must be positive, got {self}"
            )));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "fractions must sum to 1, got {self}"
            )));
        }
        Ok(())
    }
}

impl Default for Fractions {
    fn default() -> Self {
        Self {
            train: 0.15,
            val: 0.15,
            test: 0.70,
        }
    }
}

impl fmt::Display for Fractions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.train * 100.0,
            self.val * 100.0,
            self.test * 100.0
        )
    }
}

/// Parses `a/b/c` either as percentages (summing to 100) or fractions.
impl FromStr for Fractions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split('/')
            .map(|p| p.trim().trim_end_matches('%').parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("cannot parse fractions {s:?}")))?;
        let [a, b, c] = parts[..] else {
            return Err(Error::InvalidArgument(format!(
                "expected three fractions a/b/c, got {s:?}"
            )));
        };
        let scale = if (a + b + c - 100.0).abs() < 1e-6 { 100.0 } else { 1.0 };
        Self::new(a / scale, b / scale, c / scale)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub class: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Disjoint train/validation/test index lists into a [`PatchSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub fractions: Fractions,
    pub classes: Vec<ClassSplit>,
}

impl SplitAssignment {
    pub fn train_idx(&self) -> Vec<usize> {
        self.classes.iter().flat_map(|c| c.train.iter().copied()).collect()
    }

    pub fn val_idx(&self) -> Vec<usize> {
        self.classes.iter().flat_map(|c| c.val.iter().copied()).collect()
    }

    pub fn test_idx(&self) -> Vec<usize> {
        self.classes.iter().flat_map(|c| c.test.iter().copied()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that the lists are valid, disjoint indices into `patches`.
    pub fn check_against(&self, patches: &PatchSet) -> Result<()> {
        let mut seen = vec![false; patches.len()];
        for c in &self.classes {
            for &i in c.train.iter().chain(&c.val).chain(&c.test) {
                if i >= patches.len() || seen[i] || patches.labels[i] != c.class {
                    return Err(Error::InvalidArgument(format!(
                        "split index {i} for class {} does not match the patch set",
                        c.class
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

fn round_half_away(x: f64) -> usize {
    // nudge so that products like 0.15 * 10 land on the intended side of .5
    (x + 1e-9).round().max(0.0) as usize
}

/// Per-class split sizes for `n` samples: (train, val, test).
///
/// Train and validation get `max(1, round(f * n))`; test gets the rest. For
/// tiny classes the train and validation counts are capped so that every
/// split keeps at least one sample.
pub fn split_counts(n: usize, fractions: &Fractions) -> (usize, usize, usize) {
    let train = round_half_away(fractions.train * n as f64).max(1).min(n.saturating_sub(2));
    let val = round_half_away(fractions.val * n as f64)
        .max(1)
        .min(n.saturating_sub(train + 1));
    (train, val, n - train - val)
}

/// Stratified random split. The result depends only on the patch labels,
/// the fractions and the seed.
pub fn stratified_split(
    patches: &PatchSet,
    fractions: Fractions,
    seed: u64,
) -> Result<SplitAssignment> {
    fractions.validate()?;
    let mut classes = Vec::with_capacity(patches.class_count);
    for (ci, mut idx) in patches.indices_by_class().into_iter().enumerate() {
        let class = ci + 1;
        if idx.len() < 3 {
            return Err(Error::ClassTooSmall {
                class,
                count: idx.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, class as u64));
        idx.shuffle(&mut rng);
        let (tr, va, _) = split_counts(idx.len(), &fractions);
        let mut train = idx[..tr].to_vec();
        let mut val = idx[tr..tr + va].to_vec();
        let mut test = idx[tr + va..].to_vec();
        train.sort_unstable();
        val.sort_unstable();
        test.sort_unstable();
        classes.push(ClassSplit {
            class,
            train,
            val,
            test,
        });
    }
    Ok(SplitAssignment {
        seed,
        fractions,
        classes,
    })
}
