use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Partition the distinct patients into `k` disjoint folds whose sizes differ by at most one.
///
/// Patients are sorted, shuffled with the seeded `folds` stream and dealt
/// round-robin; each fold lists its patients in sorted order.
pub fn patient_folds<S: AsRef<str>>(patient_ids: &[S], k: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if k < 2 {
        return Err(Error::param("folds", "must be >= 2"));
    }
    let unique: BTreeSet<&str> = patient_ids.iter().map(|p| p.as_ref()).collect();
    if unique.len() < k {
        return Err(Error::Data(format!("{} patients cannot fill {k} folds", unique.len())));
    }
    let mut patients: Vec<&str> = unique.into_iter().collect();
    patients.shuffle(&mut rng::stream(seed, "folds"));
    let mut folds = vec![Vec::new(); k];
    for (i, p) in patients.into_iter().enumerate() {
        folds[i % k].push(p.to_string());
    }
    folds.iter_mut().for_each(|f| f.sort());
    Ok(folds)
}

/// Fold index of every patient.
pub fn fold_lookup(folds: &[Vec<String>]) -> HashMap<&str, usize> {
    folds
        .iter()
        .enumerate()
        .flat_map(|(i, f)| f.iter().map(move |p| (p.as_str(), i)))
        .collect()
}

/// Indices of items outside and inside fold `fold`, keyed by each item's patient.
pub fn split_by_fold<S: AsRef<str>>(patient_of: &[S], folds: &[Vec<String>], fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if fold >= folds.len() {
        return Err(Error::Usage(format!("fold {fold} out of range 0..{}", folds.len())));
    }
    let lookup = fold_lookup(folds);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, p) in patient_of.iter().enumerate() {
        match lookup.get(p.as_ref()) {
            Some(&f) if f == fold => test.push(i),
            Some(_) => train.push(i),
            None => return Err(Error::Data(format!("patient {} is in no fold", p.as_ref()))),
        }
    }
    Ok((train, test))
}
