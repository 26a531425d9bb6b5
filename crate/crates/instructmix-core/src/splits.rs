//! Cluster-holdout split planning.
//!
//! A dataset is only "unseen" if nothing from its task cluster was tuned on,
//! so a split plan holds out a whole cluster and additionally drops clusters
//! that are too close to the held-out one: reading comprehension with
//! commonsense overlaps both reading comprehension and commonsense, and
//! paraphrase overlaps NLI (in both directions).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::registry::{Cluster, Registry};

/// Why a cluster was kept out of the tuning set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// Too similar to a held-out cluster.
    SimilarToHeldout,
    /// Not yet added by the cluster-count ablation schedule.
    OutsideSchedule,
}

/// A held-out evaluation cluster (or clusters) plus the exact tuning set
/// after exclusion rules.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitPlan {
    pub heldout_clusters: Vec<Cluster>,
    pub tuning_datasets: BTreeSet<String>,
    pub excluded_clusters: BTreeMap<Cluster, ExclusionReason>,
    pub eval_datasets: BTreeSet<String>,
}

impl SplitPlan {
    /// Datasets in excluded clusters (neither tuned on nor evaluated).
    pub fn excluded_datasets(&self, registry: &Registry) -> BTreeSet<String> {
        self.excluded_clusters
            .keys()
            .flat_map(|&c| registry.members(c))
            .collect()
    }
}

/// Clusters dropped from tuning when `heldout` is evaluated.
fn similar_clusters(heldout: Cluster) -> &'static [Cluster] {
    match heldout {
        Cluster::ReadingComprehensionWithCommonsense => {
            &[Cluster::ReadingComprehension, Cluster::Commonsense]
        }
        Cluster::ReadingComprehension | Cluster::Commonsense => {
            &[Cluster::ReadingComprehensionWithCommonsense]
        }
        Cluster::Nli => &[Cluster::Paraphrase],
        Cluster::Paraphrase => &[Cluster::Nli],
        _ => &[],
    }
}

fn build_plan(
    registry: &Registry,
    heldout: &[Cluster],
    excluded: BTreeMap<Cluster, ExclusionReason>,
) -> SplitPlan {
    let eval_datasets: BTreeSet<String> = heldout
        .iter()
        .flat_map(|&c| registry.members(c))
        .collect();
    let tuning_datasets: BTreeSet<String> = registry
        .datasets
        .iter()
        .filter(|d| !heldout.contains(&d.cluster) && !excluded.contains_key(&d.cluster))
        .map(|d| d.name.clone())
        .collect();
    SplitPlan {
        heldout_clusters: heldout.to_vec(),
        tuning_datasets,
        excluded_clusters: excluded,
        eval_datasets,
    }
}

/// Plans a single-cluster holdout with the similarity exclusion rules.
pub fn plan_split(registry: &Registry, heldout: Cluster) -> SplitPlan {
    let excluded: BTreeMap<Cluster, ExclusionReason> = similar_clusters(heldout)
        .iter()
        .map(|&c| (c, ExclusionReason::SimilarToHeldout))
        .collect();
    build_plan(registry, &[heldout], excluded)
}

/// Clusters available for a cluster-count ablation over `heldout`, in the
/// order they are added: descending member count, ties alphabetical.
/// Paraphrase and reading comprehension with commonsense never participate.
pub fn ablation_order(registry: &Registry, heldout: &[Cluster]) -> Vec<Cluster> {
    let always_excluded = [
        Cluster::Paraphrase,
        Cluster::ReadingComprehensionWithCommonsense,
    ];
    let mut remaining: Vec<Cluster> = Cluster::ALL
        .into_iter()
        .filter(|c| !heldout.contains(c) && !always_excluded.contains(c))
        .collect();
    remaining.sort_by(|a, b| {
        registry
            .members(*b)
            .len()
            .cmp(&registry.members(*a).len())
            .then_with(|| a.name().cmp(b.name()))
    });
    remaining
}

/// The cluster-count ablation: plan k tunes on the first k clusters of
/// [`ablation_order`]. Clusters not yet added are tagged as excluded so every
/// plan still partitions the registry.
pub fn ablation_schedule(registry: &Registry, heldout: &[Cluster]) -> Result<Vec<SplitPlan>> {
    let order = ablation_order(registry, heldout);
    let mut plans = Vec::with_capacity(order.len());
    for k in 1..=order.len() {
        let mut excluded: BTreeMap<Cluster, ExclusionReason> = [
            Cluster::Paraphrase,
            Cluster::ReadingComprehensionWithCommonsense,
        ]
        .into_iter()
        .filter(|c| !heldout.contains(c))
        .map(|c| (c, ExclusionReason::SimilarToHeldout))
        .collect();
        for &cluster in &order[k..] {
            excluded.insert(cluster, ExclusionReason::OutsideSchedule);
        }
        plans.push(build_plan(registry, heldout, excluded));
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> Registry {
        Registry::builtin()
    }

    fn assert_partition(registry: &Registry, plan: &SplitPlan) {
        let excluded = plan.excluded_datasets(registry);
        let mut all: BTreeSet<String> = BTreeSet::new();
        all.extend(plan.tuning_datasets.iter().cloned());
        assert!(all.is_disjoint(&plan.eval_datasets), "tuning overlaps eval");
        all.extend(plan.eval_datasets.iter().cloned());
        assert!(all.is_disjoint(&excluded), "excluded overlaps tuning/eval");
        all.extend(excluded);
        let registry_names: BTreeSet<String> =
            registry.datasets.iter().map(|d| d.name.clone()).collect();
        assert_eq!(all, registry_names);
    }

    #[test]
    fn nli_holdout_excludes_exactly_paraphrase() {
        let registry = registry();
        let plan = plan_split(&registry, Cluster::Nli);
        assert_eq!(
            plan.excluded_clusters.keys().copied().collect::<Vec<_>>(),
            vec![Cluster::Paraphrase]
        );
        let expected_eval: BTreeSet<String> = [
            "anli_r1", "anli_r2", "anli_r3", "cb", "mnli", "qnli", "rte", "snli", "wnli",
        ]
        .into_iter()
        .map(String::from)
        .collect();
        assert_eq!(plan.eval_datasets, expected_eval);
        assert_partition(&registry, &plan);
    }

    #[test]
    fn rc_with_commonsense_holdout_excludes_both_parents() {
        let registry = registry();
        let plan = plan_split(&registry, Cluster::ReadingComprehensionWithCommonsense);
        let excluded: BTreeSet<Cluster> = plan.excluded_clusters.keys().copied().collect();
        assert_eq!(
            excluded,
            BTreeSet::from([Cluster::ReadingComprehension, Cluster::Commonsense])
        );
        assert_partition(&registry, &plan);
    }

    #[test]
    fn translation_holdout_excludes_nothing_extra() {
        let registry = registry();
        let plan = plan_split(&registry, Cluster::Translation);
        assert!(plan.excluded_clusters.is_empty());
        assert_partition(&registry, &plan);
    }

    #[test]
    fn exclusion_is_symmetric_between_nli_and_paraphrase() {
        let registry = registry();
        let nli = plan_split(&registry, Cluster::Nli);
        let paraphrase = plan_split(&registry, Cluster::Paraphrase);
        assert!(nli.excluded_clusters.contains_key(&Cluster::Paraphrase));
        assert!(paraphrase.excluded_clusters.contains_key(&Cluster::Nli));
    }

    #[test]
    fn every_holdout_has_zero_leakage_and_full_coverage() {
        let registry = registry();
        for cluster in Cluster::ALL {
            let plan = plan_split(&registry, cluster);
            for dataset in &plan.tuning_datasets {
                let spec = registry.get(dataset).unwrap();
                assert!(
                    !plan.heldout_clusters.contains(&spec.cluster),
                    "{dataset} leaks from held-out cluster {cluster}"
                );
            }
            assert_partition(&registry, &plan);
        }
    }

    #[test]
    fn ablation_order_is_descending_with_alphabetical_ties() {
        let registry = registry();
        let heldout = [Cluster::Nli, Cluster::ClosedBookQa, Cluster::Commonsense];
        let order = ablation_order(&registry, &heldout);
        assert_eq!(order.len(), 7);
        // Largest remaining cluster first.
        assert_eq!(order[0], Cluster::Summarization);
        let sizes: Vec<usize> = order.iter().map(|&c| registry.members(c).len()).collect();
        for pair in sizes.windows(2) {
            assert!(pair[0] >= pair[1], "sizes not descending: {sizes:?}");
        }
        // Sentiment and struct-to-text are both size 4; alphabetical order.
        let sentiment = order.iter().position(|&c| c == Cluster::Sentiment).unwrap();
        let s2t = order.iter().position(|&c| c == Cluster::StructToText).unwrap();
        assert!(sentiment < s2t);
    }

    #[test]
    fn ablation_plans_nest_and_partition() {
        let registry = registry();
        let heldout = [Cluster::Nli, Cluster::ClosedBookQa, Cluster::Commonsense];
        let plans = ablation_schedule(&registry, &heldout).unwrap();
        assert_eq!(plans.len(), 7);
        let order = ablation_order(&registry, &heldout);
        let largest: BTreeSet<String> = registry.members(order[0]).into_iter().collect();
        assert_eq!(plans[0].tuning_datasets, largest);
        for window in plans.windows(2) {
            assert!(window[0].tuning_datasets.is_subset(&window[1].tuning_datasets));
        }
        for plan in &plans {
            assert!(!plan.excluded_clusters.contains_key(&Cluster::Nli));
            assert!(plan
                .excluded_clusters
                .get(&Cluster::Paraphrase)
                .is_some());
            assert_partition(&registry, plan);
        }
        // The final plan tunes on all seven clusters.
        let last = &plans[6];
        let expected: BTreeSet<String> = order
            .iter()
            .flat_map(|&c| registry.members(c))
            .collect();
        assert_eq!(last.tuning_datasets, expected);
    }
}
