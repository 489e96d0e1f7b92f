use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Number of keywords kept as a cluster's preliminary label.
pub const LABEL_SIZE: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordCount {
    pub keyword: String,
    /// Number of frames in the cluster that carry the keyword.
    pub count: usize,
}

/// Per cluster, the `k` keywords carried by the most frames; ties are broken
/// alphabetically. A keyword repeated within one frame counts once.
pub fn top_keywords(assignments: &[usize], keywords: &[Vec<String>], k: usize) -> BTreeMap<usize, Vec<KeywordCount>> {
    let mut counts: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for (&c, kws) in assignments.iter().zip(keywords) {
        let entry = counts.entry(c).or_default();
        let unique: BTreeSet<&str> = kws.iter().map(String::as_str).collect();
        for kw in unique {
            *entry.entry(kw).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(c, m)| {
            let mut v: Vec<(&str, usize)> = m.into_iter().collect();
            v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            let top = v
                .into_iter()
                .take(k)
                .map(|(kw, count)| KeywordCount { keyword: kw.to_string(), count })
                .collect();
            (c, top)
        })
        .collect()
}

/// Keyword strings only, in rank order.
pub fn label_strings(labels: &BTreeMap<usize, Vec<KeywordCount>>) -> BTreeMap<usize, Vec<String>> {
    labels
        .iter()
        .map(|(c, v)| (*c, v.iter().map(|k| k.keyword.clone()).collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kw(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn ranking_and_ties() {
        let assignments = [0, 0, 0, 1];
        let keywords = vec![
            kw(&["walking", "rearing", "walking"]),
            kw(&["walking", "grooming"]),
            kw(&["walking", "rearing", "grooming"]),
            kw(&["resting"]),
        ];
        let top = label_strings(&top_keywords(&assignments, &keywords, 5));
        assert_eq!(top[&0], vec!["walking", "grooming", "rearing"]);
        assert_eq!(top[&1], vec!["resting"]);
        let counts = top_keywords(&assignments, &keywords, 1);
        assert_eq!(counts[&0], vec![KeywordCount { keyword: "walking".into(), count: 3 }]);
    }
}
