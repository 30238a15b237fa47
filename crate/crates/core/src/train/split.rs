use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn holdout_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).round() as usize).clamp(1, n - 1)
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Argument(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    Ok(())
}

/// Seeded shuffle of `0..n`, then `round(val_fraction * n)` indices go to
/// validation (at least one, and at least one left for training). Both
/// halves come back sorted.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_fraction(val_fraction)?;
    if n < 2 {
        return Err(Error::Data(format!("cannot split {n} item(s) into train and validation")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = holdout_count(n, val_fraction);
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

pub fn split_train_val<T: Clone>(items: &[T], val_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (tr, va) = split_indices(items.len(), val_fraction, seed)?;
    Ok((
        tr.iter().map(|&i| items[i].clone()).collect(),
        va.iter().map(|&i| items[i].clone()).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holdout {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_subjects: Vec<u32>,
    pub test_subjects: Vec<u32>,
}

/// Splits item indices by subject: subjects are shuffled and
/// `round(test_fraction * subjects)` of them are held out entirely.
pub fn split_subject_holdout(subject_of: &[u32], test_fraction: f64, seed: u64) -> Result<Holdout> {
    check_fraction(test_fraction)?;
    let distinct: Vec<u32> = subject_of.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if distinct.len() < 2 {
        return Err(Error::Contract(format!(
            "subject holdout needs at least 2 subjects, got {}",
            distinct.len()
        )));
    }
    let mut order = distinct.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_test = holdout_count(order.len(), test_fraction);
    let test_set: BTreeSet<u32> = order[..n_test].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, s) in subject_of.iter().enumerate() {
        if test_set.contains(s) {
            test.push(i);
        } else {
            train.push(i);
        }
    }
    Ok(Holdout {
        train,
        test,
        train_subjects: distinct.iter().copied().filter(|s| !test_set.contains(s)).collect(),
        test_subjects: test_set.into_iter().collect(),
    })
}
