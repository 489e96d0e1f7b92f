//! Label-driven cluster merging.
//!
//! A [`Merger`] sees only the keyword labels of the current clusters and
//! proposes pairs to merge. Proposals are closed transitively, the smallest
//! id of each group survives, labels are recomputed, and the process repeats
//! until the merger proposes nothing.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::keywords::{label_strings, top_keywords, LABEL_SIZE};
use super::ClusteringError;
use crate::annotation::extract::find_first_object;
use crate::provider::{with_retries, Provider, RETRY_ATTEMPTS};

pub trait Merger: Send + Sync {
    fn name(&self) -> String;
    fn propose(&self, labels: &BTreeMap<usize, Vec<String>>) -> Result<Vec<(usize, usize)>, ClusteringError>;
}

/// Merges two clusters when their labels share at least `min_shared`
/// keywords.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OfflineMerger {
    pub min_shared: usize,
}

impl Default for OfflineMerger {
    fn default() -> Self {
        Self { min_shared: 3 }
    }
}

impl OfflineMerger {
    pub fn pairs(&self, labels: &BTreeMap<usize, Vec<String>>) -> Vec<(usize, usize)> {
        let sets: Vec<(usize, BTreeSet<&str>)> = labels
            .iter()
            .map(|(c, l)| (*c, l.iter().take(LABEL_SIZE).map(String::as_str).collect()))
            .collect();
        let mut out = Vec::new();
        for (i, (a, sa)) in sets.iter().enumerate() {
            for (b, sb) in &sets[i + 1..] {
                if sa.intersection(sb).count() >= self.min_shared {
                    out.push((*a, *b));
                }
            }
        }
        out
    }
}

impl Merger for OfflineMerger {
    fn name(&self) -> String {
        format!("offline/shared>={}", self.min_shared)
    }

    fn propose(&self, labels: &BTreeMap<usize, Vec<String>>) -> Result<Vec<(usize, usize)>, ClusteringError> {
        Ok(self.pairs(labels))
    }
}

/// Header line of the merge task sent to `complete()`.
pub const MERGE_TASK: &str = "TASK: merge-clusters";

pub fn merge_prompt(labels: &BTreeMap<usize, Vec<String>>) -> String {
    let mut p = format!(
        "{MERGE_TASK}\nEach line below is a behavior cluster and its most frequent keywords. \
         Decide which clusters describe the same behavior. Reply with one JSON object \
         {{\"merge\": [[id, id], ...]}} listing the pairs to merge, or {{\"merge\": []}}.\n"
    );
    for (c, l) in labels {
        p.push_str(&format!("cluster {c}: {}\n", l.join(", ")));
    }
    p
}

fn parse_labels(prompt: &str) -> Option<BTreeMap<usize, Vec<String>>> {
    if !prompt.starts_with(MERGE_TASK) {
        return None;
    }
    let mut labels = BTreeMap::new();
    for line in prompt.lines() {
        let Some(rest) = line.strip_prefix("cluster ") else { continue };
        let (id, kws) = rest.split_once(':')?;
        let kws = kws.split(',').map(|k| k.trim().to_string()).filter(|k| !k.is_empty()).collect();
        labels.insert(id.trim().parse().ok()?, kws);
    }
    Some(labels)
}

/// Offline answer to a merge task prompt.
pub fn answer_offline(prompt: &str) -> Option<String> {
    let labels = parse_labels(prompt)?;
    let pairs = OfflineMerger::default().pairs(&labels);
    Some(serde_json::json!({ "merge": pairs }).to_string())
}

#[derive(Deserialize)]
struct MergeReply {
    merge: Vec<[usize; 2]>,
}

pub fn parse_merge_reply(text: &str) -> Result<Vec<(usize, usize)>, ClusteringError> {
    let obj = find_first_object(text).ok_or_else(|| ClusteringError::ContractViolation("merge reply has no JSON object".into()))?;
    let reply: MergeReply =
        serde_json::from_str(obj).map_err(|e| ClusteringError::ContractViolation(format!("merge reply: {e}")))?;
    Ok(reply.merge.into_iter().map(|[a, b]| (a, b)).collect())
}

/// Sends the labels to a provider's `complete()` and parses the pair list.
pub struct ProviderMerger {
    provider: Arc<dyn Provider>,
}

impl ProviderMerger {
    pub fn new(provider: Arc<dyn Provider>) -> Self {
        Self { provider }
    }
}

impl Merger for ProviderMerger {
    fn name(&self) -> String {
        format!("provider/{}", self.provider.name())
    }

    fn propose(&self, labels: &BTreeMap<usize, Vec<String>>) -> Result<Vec<(usize, usize)>, ClusteringError> {
        let prompt = merge_prompt(labels);
        let text = with_retries(RETRY_ATTEMPTS, || self.provider.complete(&prompt)).0?;
        parse_merge_reply(&text)
    }
}

pub type MergerFactory = Box<dyn Fn(Option<Arc<dyn Provider>>) -> Result<Box<dyn Merger>, ClusteringError> + Send + Sync>;

/// Name-keyed merger strategies: `offline` and `provider`.
pub struct MergerRegistry {
    factories: BTreeMap<String, MergerFactory>,
}

impl MergerRegistry {
    pub fn with_builtins() -> Self {
        let mut r = Self { factories: BTreeMap::new() };
        r.register("offline", Box::new(|_| Ok(Box::new(OfflineMerger::default()) as Box<dyn Merger>)));
        r.register(
            "provider",
            Box::new(|p| {
                let p = p.ok_or_else(|| ClusteringError::Parameter("provider merger needs a provider".into()))?;
                Ok(Box::new(ProviderMerger::new(p)) as Box<dyn Merger>)
            }),
        );
        r
    }

    pub fn register(&mut self, name: &str, factory: MergerFactory) {
        self.factories.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, provider: Option<Arc<dyn Provider>>) -> Result<Box<dyn Merger>, ClusteringError> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| ClusteringError::Parameter(format!("unknown merger {name:?}")))?;
        f(provider)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeAction {
    pub from: usize,
    pub into: usize,
    pub round: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub assignments: Vec<usize>,
    pub labels: BTreeMap<usize, Vec<super::keywords::KeywordCount>>,
    pub history: Vec<MergeAction>,
}

/// Applies `merger` until it proposes no further merges.
pub fn merge_clusters(
    assignments: Vec<usize>,
    keywords: &[Vec<String>],
    merger: &dyn Merger,
) -> Result<MergeOutcome, ClusteringError> {
    let mut assignments = assignments;
    let mut history = Vec::new();
    let initial = assignments.iter().collect::<BTreeSet<_>>().len();
    for round in 1..=initial.max(1) {
        let labels = top_keywords(&assignments, keywords, LABEL_SIZE);
        let strings = label_strings(&labels);
        let proposals = merger.propose(&strings)?;
        if let Some(&(a, b)) = proposals.iter().find(|(a, b)| !strings.contains_key(a) || !strings.contains_key(b)) {
            return Err(ClusteringError::ContractViolation(format!(
                "merger {} proposed unknown cluster pair ({a}, {b})",
                merger.name()
            )));
        }
        let proposals: Vec<_> = proposals.into_iter().filter(|(a, b)| a != b).collect();
        if proposals.is_empty() {
            return Ok(MergeOutcome { assignments, labels, history });
        }
        let mut parent: BTreeMap<usize, usize> = strings.keys().map(|&c| (c, c)).collect();
        fn find(parent: &mut BTreeMap<usize, usize>, x: usize) -> usize {
            let mut r = x;
            while parent[&r] != r {
                r = parent[&r];
            }
            let mut y = x;
            while parent[&y] != r {
                let next = parent[&y];
                parent.insert(y, r);
                y = next;
            }
            r
        }
        for (a, b) in &proposals {
            let (ra, rb) = (find(&mut parent, *a), find(&mut parent, *b));
            if ra != rb {
                // keep the smaller id as root so it survives
                parent.insert(ra.max(rb), ra.min(rb));
            }
        }
        let mut changed = false;
        for c in strings.keys() {
            let root = find(&mut parent, *c);
            if root != *c {
                changed = true;
                let partners: Vec<String> = proposals
                    .iter()
                    .filter_map(|(a, b)| if a == c { Some(*b) } else if b == c { Some(*a) } else { None })
                    .map(|p| p.to_string())
                    .collect();
                history.push(MergeAction {
                    from: *c,
                    into: root,
                    round,
                    reason: format!("{} paired it with cluster(s) {}", merger.name(), partners.join(", ")),
                });
            }
        }
        if !changed {
            return Ok(MergeOutcome { assignments, labels, history });
        }
        for a in &mut assignments {
            *a = find(&mut parent, *a);
        }
    }
    let labels = top_keywords(&assignments, keywords, LABEL_SIZE);
    Ok(MergeOutcome { assignments, labels, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[(usize, &[&str])]) -> BTreeMap<usize, Vec<String>> {
        v.iter().map(|(c, l)| (*c, l.iter().map(|s| s.to_string()).collect())).collect()
    }

    #[test]
    fn offline_rule_examples() {
        let m = OfflineMerger::default();
        let l = labels(&[
            (0, &["walking", "moving", "forward", "ground", "tail"]),
            (1, &["walking", "moving", "ground", "head", "forward"]),
        ]);
        assert_eq!(m.pairs(&l), vec![(0, 1)]);
        let l = labels(&[(0, &["a", "b", "c"]), (1, &["d", "e", "f"])]);
        assert!(m.pairs(&l).is_empty());
    }

    fn frames(groups: &[(usize, &[&str], usize)]) -> (Vec<usize>, Vec<Vec<String>>) {
        let mut a = Vec::new();
        let mut k = Vec::new();
        for (c, kws, count) in groups {
            for _ in 0..*count {
                a.push(*c);
                k.push(kws.iter().map(|s| s.to_string()).collect());
            }
        }
        (a, k)
    }

    #[test]
    fn chains_merge_transitively_into_min_id() {
        let (a, k) = frames(&[
            (4, &["a", "b", "c", "d", "e"], 3),
            (2, &["a", "b", "c", "x", "y"], 3),
            (7, &["x", "y", "a", "p", "q"], 3),
            (9, &["m", "n", "o", "p", "q"], 3),
        ]);
        let out = merge_clusters(a, &k, &OfflineMerger::default()).unwrap();
        let ids: BTreeSet<_> = out.assignments.iter().copied().collect();
        assert!(ids.contains(&2));
        assert!(!ids.contains(&4));
        assert!(out.history.iter().any(|h| h.from == 4 && h.into == 2));
        // 7 shares x, y, a with 2 directly
        assert!(out.history.iter().any(|h| h.from == 7 && h.into == 2));
    }

    #[test]
    fn merging_is_idempotent() {
        let (a, k) = frames(&[
            (0, &["walking", "moving", "forward", "ground", "tail"], 5),
            (1, &["walking", "moving", "ground", "head", "forward"], 5),
            (2, &["resting", "lying", "still", "flat", "eyes"], 5),
        ]);
        let once = merge_clusters(a, &k, &OfflineMerger::default()).unwrap();
        let twice = merge_clusters(once.assignments.clone(), &k, &OfflineMerger::default()).unwrap();
        assert_eq!(once.assignments, twice.assignments);
        assert!(twice.history.is_empty());
        assert_eq!(once.history.len(), 1);
    }

    struct Rogue;
    impl Merger for Rogue {
        fn name(&self) -> String {
            "rogue".into()
        }
        fn propose(&self, _: &BTreeMap<usize, Vec<String>>) -> Result<Vec<(usize, usize)>, ClusteringError> {
            Ok(vec![(0, 42)])
        }
    }

    #[test]
    fn unknown_ids_are_a_contract_violation() {
        let (a, k) = frames(&[(0, &["a"], 1), (1, &["b"], 1)]);
        assert!(matches!(merge_clusters(a, &k, &Rogue), Err(ClusteringError::ContractViolation(_))));
    }

    #[test]
    fn offline_provider_merger_agrees_with_rule() {
        let (a, k) = frames(&[
            (0, &["walking", "moving", "forward", "ground", "tail"], 4),
            (1, &["walking", "moving", "ground", "head", "forward"], 4),
            (2, &["resting", "lying", "still", "flat", "eyes"], 4),
        ]);
        let p: Arc<dyn Provider> = Arc::new(crate::provider::OfflineProvider::new(16));
        let via_provider = merge_clusters(a.clone(), &k, &ProviderMerger::new(p)).unwrap();
        let direct = merge_clusters(a, &k, &OfflineMerger::default()).unwrap();
        assert_eq!(via_provider.assignments, direct.assignments);
        assert_eq!(MergerRegistry::with_builtins().names(), vec!["offline", "provider"]);
    }

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_merge_reply("ok: {\"merge\": [[1, 2]]}").unwrap(), vec![(1, 2)]);
        assert!(parse_merge_reply("no").is_err());
        assert!(parse_merge_reply("{\"merge\": [[1]]}").is_err());
    }
}
