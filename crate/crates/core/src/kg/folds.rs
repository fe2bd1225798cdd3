//! K-fold splitting with semantic vocabulary coverage.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::{CrossModalKg, NodeId};
use crate::error::{NrkgError, Result};

/// Resamples attempted before a coverage failure is reported.
pub const MAX_FOLD_RETRIES: usize = 1000;

/// Train/validation/test proxies of one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldRoles {
    pub train: Vec<NodeId>,
    pub validation: Vec<NodeId>,
    pub test: Vec<NodeId>,
}

impl FoldRoles {
    /// Every proxy that must be masked while training this fold.
    pub fn held_out(&self) -> BTreeSet<NodeId> {
        self.validation.iter().chain(&self.test).copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Part index of every labeled proxy.
    pub assignments: BTreeMap<NodeId, usize>,
    pub folds: Vec<FoldRoles>,
}

fn partition(nodes: &[NodeId], k: usize) -> Vec<Vec<NodeId>> {
    let n = nodes.len();
    (0..k).map(|i| nodes[i * n / k..(i + 1) * n / k].to_vec()).collect()
}

fn uncovered_token(kg: &CrossModalKg, labeled: &BTreeSet<NodeId>, folds: &[FoldRoles]) -> Option<NodeId> {
    let token_of = |train: &BTreeSet<NodeId>| -> BTreeSet<NodeId> {
        kg.triples()
            .iter()
            .filter(|t| train.contains(&t.tail))
            .map(|t| t.head)
            .collect()
    };
    let needed = token_of(labeled);
    folds.iter().find_map(|f| {
        let covered = token_of(&f.train.iter().copied().collect());
        needed.iter().find(|t| !covered.contains(t)).copied()
    })
}

/// Random equal partition of the labeled proxies into `k` parts.
///
/// Fold `i` tests on part `i`, validates on part `i + 1 (mod k)` and trains
/// on the rest. Partitions are resampled until every token attached to a
/// labeled proxy appears on a training proxy of every fold. Proxies without
/// a target are left out of the plan.
pub fn make_folds(kg: &CrossModalKg, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 3 {
        return Err(NrkgError::Split(format!("k = {k}; need at least 3 folds")));
    }
    let labeled: Vec<NodeId> = kg.proxy_ids().filter(|&p| kg.node(p).target.is_some()).collect();
    if labeled.len() < k {
        return Err(NrkgError::Split(format!(
            "{} labeled proxies cannot fill {k} folds",
            labeled.len()
        )));
    }
    let labeled_set: BTreeSet<NodeId> = labeled.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_missing = None;
    for _ in 0..MAX_FOLD_RETRIES {
        let mut order = labeled.clone();
        order.shuffle(&mut rng);
        let parts = partition(&order, k);
        let folds: Vec<FoldRoles> = (0..k)
            .map(|i| {
                let v = (i + 1) % k;
                let mut train: Vec<NodeId> = (0..k)
                    .filter(|&j| j != i && j != v)
                    .flat_map(|j| parts[j].iter().copied())
                    .collect();
                train.sort();
                let mut validation = parts[v].clone();
                validation.sort();
                let mut test = parts[i].clone();
                test.sort();
                FoldRoles {
                    train,
                    validation,
                    test,
                }
            })
            .collect();
        match uncovered_token(kg, &labeled_set, &folds) {
            None => {
                let assignments = parts
                    .iter()
                    .enumerate()
                    .flat_map(|(i, p)| p.iter().map(move |&n| (n, i)))
                    .collect();
                return Ok(FoldPlan { k, assignments, folds });
            }
            Some(tok) => last_missing = Some(tok),
        }
    }
    let tok = last_missing.expect("at least one attempt");
    Err(NrkgError::Split(format!(
        "token {:?} is missing from some training set after {MAX_FOLD_RETRIES} resamples",
        kg.node(tok).label
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{build_cross_modal_kg, Record, Tag};

    fn recs(n: usize, tagger: impl Fn(usize) -> Vec<Tag>) -> Vec<Record> {
        (0..n)
            .map(|i| Record {
                id: format!("r{i}"),
                features: vec![1.0],
                target: Some(i as f64),
                tags: tagger(i),
            })
            .collect()
    }

    #[test]
    fn twelve_proxies_six_folds() {
        let kg = build_cross_modal_kg(&recs(12, |i| vec![Tag::new("p", format!("T{}", i % 2))])).unwrap();
        let plan = make_folds(&kg, 6, 3).unwrap();
        assert_eq!(plan.folds.len(), 6);
        for f in &plan.folds {
            assert_eq!((f.train.len(), f.validation.len(), f.test.len()), (8, 2, 2));
        }
        // each proxy is tested exactly once
        let tested: BTreeSet<NodeId> = plan.folds.iter().flat_map(|f| f.test.clone()).collect();
        assert_eq!(tested.len(), 12);
        assert_eq!(plan, make_folds(&kg, 6, 3).unwrap());
    }

    #[test]
    fn singleton_token_cannot_be_covered() {
        let kg =
            build_cross_modal_kg(&recs(12, |i| if i == 0 { vec![Tag::new("p", "Rare")] } else { vec![] })).unwrap();
        let err = make_folds(&kg, 6, 1).unwrap_err();
        assert!(err.to_string().contains("Rare"), "{err}");
    }

    #[test]
    fn too_few_proxies_or_folds() {
        let kg = build_cross_modal_kg(&recs(4, |_| vec![])).unwrap();
        assert!(make_folds(&kg, 6, 0).is_err());
        assert!(make_folds(&kg, 2, 0).is_err());
    }
}
