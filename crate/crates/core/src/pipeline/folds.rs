//! Participant-grouped, label-stratified fold planning.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::SeededRng;

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, participant: &str) -> Option<usize> {
        self.assignment.get(participant).copied()
    }

    pub fn participants_in(&self, fold: usize) -> Vec<&str> {
        self.assignment.iter().filter(|(_, &f)| f == fold).map(|(p, _)| p.as_str()).collect()
    }

    /// `(train_rows, test_rows)` for `fold`, given each row's participant.
    pub fn split(&self, participant_ids: &[String], fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, p) in participant_ids.iter().enumerate() {
            match self.fold_of(p) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => return Err(Error::Unknown { kind: "participant", name: p.clone() }),
            }
        }
        Ok((train, test))
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let plan: FoldPlan = serde_json::from_reader(reader)?;
        if let Some((p, f)) = plan.assignment.iter().find(|(_, &f)| f >= plan.n_folds) {
            return Err(Error::Schema(format!("participant {p} assigned to fold {f} of {}", plan.n_folds)));
        }
        Ok(plan)
    }
}

fn l1_to_global(hist: &[f64], global: &[f64]) -> f64 {
    let total: f64 = hist.iter().sum();
    if total == 0.0 {
        return global.iter().sum();
    }
    hist.iter().zip(global).map(|(h, g)| (h / total - g).abs()).sum()
}

/// L1 divergence between each fold's normalized label histogram and the global one, summed over folds.
pub fn plan_divergence(plan: &FoldPlan, participant_ids: &[String], labels: &[usize], n_classes: usize) -> f64 {
    let mut fold_hist = vec![vec![0.0; n_classes]; plan.n_folds];
    let mut global = vec![0.0; n_classes];
    for (p, &y) in participant_ids.iter().zip(labels) {
        if let Some(f) = plan.fold_of(p) {
            fold_hist[f][y] += 1.0;
        }
        global[y] += 1.0;
    }
    let n: f64 = global.iter().sum();
    global.iter_mut().for_each(|g| *g /= n);
    fold_hist.iter().map(|h| l1_to_global(h, &global)).sum()
}

/// Assigns whole participants to folds. Participants are shuffled by `seed`, then
/// stably sorted by descending row count. Each goes to one of the folds with the fewest
/// participants (so fold sizes differ by at most one), choosing the fold whose label
/// histogram after adding it is closest in L1 to the global histogram; ties go to the
/// fold with fewer rows, then the lower index.
pub fn plan_folds(participant_ids: &[String], labels: &[usize], n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if participant_ids.len() != labels.len() {
        return Err(Error::Shape(format!("{} participant ids for {} labels", participant_ids.len(), labels.len())));
    }
    if n_folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {n_folds}")));
    }
    let n_classes = labels.iter().max().map_or(1, |m| m + 1);
    let mut per_participant: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut global = vec![0.0; n_classes];
    for (p, &y) in participant_ids.iter().zip(labels) {
        per_participant.entry(p.as_str()).or_insert_with(|| vec![0.0; n_classes])[y] += 1.0;
        global[y] += 1.0;
    }
    if per_participant.len() < n_folds {
        return Err(Error::Degenerate(format!("{} participants cannot fill {n_folds} folds", per_participant.len())));
    }
    let n: f64 = global.iter().sum();
    global.iter_mut().for_each(|g| *g /= n);

    let mut order: Vec<(&str, Vec<f64>)> = per_participant.into_iter().collect();
    order.shuffle(&mut SeededRng::seed_from_u64(seed));
    order.sort_by(|a, b| b.1.iter().sum::<f64>().total_cmp(&a.1.iter().sum::<f64>()));

    let mut fold_hist = vec![vec![0.0; n_classes]; n_folds];
    let mut fold_members = vec![0usize; n_folds];
    let mut assignment = BTreeMap::new();
    for (p, hist) in order {
        let fewest = *fold_members.iter().min().expect("n_folds ≥ 2");
        let mut best: Option<(f64, f64, usize)> = None;
        for f in (0..n_folds).filter(|&f| fold_members[f] == fewest) {
            let merged: Vec<f64> = fold_hist[f].iter().zip(&hist).map(|(a, b)| a + b).collect();
            let key = (l1_to_global(&merged, &global), fold_hist[f].iter().sum::<f64>(), f);
            if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
                best = Some(key);
            }
        }
        let (_, _, f) = best.expect("at least one candidate fold");
        fold_hist[f].iter_mut().zip(&hist).for_each(|(a, b)| *a += b);
        fold_members[f] += 1;
        assignment.insert(p.to_string(), f);
    }
    Ok(FoldPlan { n_folds, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize, per: usize) -> Vec<String> {
        (0..n).flat_map(|p| std::iter::repeat_n(format!("p{p}"), per)).collect()
    }

    #[test]
    fn ten_participants_two_per_fold() {
        let pids = ids(10, 3);
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let plan = plan_folds(&pids, &labels, 5, 1).unwrap();
        for f in 0..5 {
            assert_eq!(plan.participants_in(f).len(), 2);
        }
    }

    #[test]
    fn too_few_participants() {
        assert!(plan_folds(&ids(3, 2), &[0; 6], 5, 0).is_err());
    }

    #[test]
    fn split_partitions_rows() {
        let pids = ids(7, 4);
        let labels: Vec<usize> = (0..28).map(|i| (i / 3) % 3).collect();
        let plan = plan_folds(&pids, &labels, 5, 9).unwrap();
        for f in 0..5 {
            let (train, test) = plan.split(&pids, f).unwrap();
            assert_eq!(train.len() + test.len(), 28);
            assert!(test.iter().all(|&i| !train.iter().any(|&j| pids[j] == pids[i])));
        }
    }

    #[test]
    fn json_round_trip() {
        let plan = plan_folds(&ids(6, 1), &[0, 1, 2, 0, 1, 2], 3, 2).unwrap();
        let mut buf = Vec::new();
        plan.write_json(&mut buf).unwrap();
        assert_eq!(FoldPlan::read_json(buf.as_slice()).unwrap(), plan);
    }
}
