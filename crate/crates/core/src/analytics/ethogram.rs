use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::AnalyticsError;

/// z for a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time_s: f64,
    pub frame_id: u64,
    pub label: String,
}

/// Labels of one subject sampled at a fixed stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EthogramTrack {
    pub subject: String,
    pub stride_s: f64,
    pub samples: Vec<Sample>,
}

impl EthogramTrack {
    /// Checks that times start at or after zero and step by `stride_s`.
    pub fn new(subject: &str, stride_s: f64, samples: Vec<Sample>) -> Result<Self, AnalyticsError> {
        if !(stride_s > 0.0 && stride_s.is_finite()) {
            return Err(AnalyticsError::Parameter(format!("stride {stride_s} must be positive")));
        }
        if let Some(first) = samples.first() {
            if first.time_s < -TIME_EPS {
                return Err(AnalyticsError::Parameter("track starts before t = 0".into()));
            }
        }
        for w in samples.windows(2) {
            let step = w[1].time_s - w[0].time_s;
            if (step - stride_s).abs() > TIME_EPS * stride_s.max(1.0) * 1e3 {
                return Err(AnalyticsError::Parameter(format!(
                    "samples at {} and {} are not {stride_s} s apart",
                    w[0].time_s, w[1].time_s
                )));
            }
        }
        Ok(Self { subject: subject.into(), stride_s, samples })
    }

    /// Track from per-frame labels: sample `i` sits at `i · stride_s`.
    pub fn from_labels(subject: &str, stride_s: f64, frames: &[(u64, String)]) -> Result<Self, AnalyticsError> {
        let samples = frames
            .iter()
            .enumerate()
            .map(|(i, (f, l))| Sample { time_s: i as f64 * stride_s, frame_id: *f, label: l.clone() })
            .collect();
        Self::new(subject, stride_s, samples)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.time_s + self.stride_s)
    }

    /// Whole-track share of each label.
    pub fn proportions(&self) -> BTreeMap<String, f64> {
        proportions(self.samples.iter().map(|s| s.label.as_str()))
    }
}

fn proportions<'a>(labels: impl Iterator<Item = &'a str>) -> BTreeMap<String, f64> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for l in labels {
        *counts.entry(l).or_default() += 1;
        total += 1;
    }
    counts.into_iter().map(|(l, c)| (l.to_string(), c as f64 / total as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub samples: usize,
    /// True for a final window the track does not fill.
    pub partial: bool,
    pub proportions: BTreeMap<String, f64>,
}

/// Label shares in consecutive windows of `window_s` seconds from t = 0.
pub fn window_proportions(track: &EthogramTrack, window_s: f64) -> Result<Vec<Window>, AnalyticsError> {
    if !(window_s > 0.0 && window_s.is_finite()) {
        return Err(AnalyticsError::Parameter(format!("window {window_s} must be positive")));
    }
    let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for s in &track.samples {
        let idx = (s.time_s / window_s + TIME_EPS).floor().max(0.0) as usize;
        groups.entry(idx).or_default().push(&s.label);
    }
    let end = track.duration_s();
    let last = groups.keys().next_back().copied();
    Ok(groups
        .into_iter()
        .map(|(index, labels)| {
            let start_s = index as f64 * window_s;
            let end_s = start_s + window_s;
            Window {
                index,
                start_s,
                end_s,
                samples: labels.len(),
                partial: Some(index) == last && end < end_s - TIME_EPS * end_s.max(1.0),
                proportions: proportions(labels.into_iter()),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub group: String,
    pub label: String,
    pub subjects: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single subject.
    pub sd: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
}

impl ProportionRow {
    pub fn ci_defined(&self) -> bool {
        self.sd.is_some()
    }
}

/// Per group and label, the mean whole-session proportion over subjects with
/// a normal-approximation 95% interval. Labels absent from a subject count
/// as 0 for it; every label seen in any group gets a row in every group.
pub fn behavior_proportions(groups: &BTreeMap<String, Vec<EthogramTrack>>) -> Result<Vec<ProportionRow>, AnalyticsError> {
    let per_subject: BTreeMap<&str, Vec<BTreeMap<String, f64>>> = groups
        .iter()
        .map(|(g, tracks)| (g.as_str(), tracks.iter().filter(|t| !t.samples.is_empty()).map(EthogramTrack::proportions).collect()))
        .collect();
    if let Some((g, _)) = per_subject.iter().find(|(_, s)| s.is_empty()) {
        return Err(AnalyticsError::Parameter(format!("group {g:?} has no subjects with samples")));
    }
    let labels: BTreeSet<&String> = per_subject.values().flatten().flat_map(|p| p.keys()).collect();
    let mut rows = Vec::new();
    for (g, subjects) in &per_subject {
        let n = subjects.len();
        for label in &labels {
            let xs: Vec<f64> = subjects.iter().map(|p| p.get(*label).copied().unwrap_or(0.0)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let sd = (n > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
            let half = sd.map(|s| Z_95 * s / (n as f64).sqrt());
            rows.push(ProportionRow {
                group: g.to_string(),
                label: label.to_string(),
                subjects: n,
                mean,
                sd,
                ci_low: half.map(|h| mean - h),
                ci_high: half.map(|h| mean + h),
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(subject: &str, labels: &[&str], stride: f64) -> EthogramTrack {
        let frames: Vec<(u64, String)> = labels.iter().enumerate().map(|(i, l)| (i as u64, l.to_string())).collect();
        EthogramTrack::from_labels(subject, stride, &frames).unwrap()
    }

    #[test]
    fn twenty_minutes_give_sixty_full_windows() {
        let labels: Vec<&str> = (0..6000).map(|i| if i % 3 == 0 { "walking" } else { "resting" }).collect();
        let w = window_proportions(&track("m1", &labels, 0.2), 20.0).unwrap();
        assert_eq!(w.len(), 60);
        for win in &w {
            assert_eq!(win.samples, 100);
            assert!(!win.partial);
            assert!((win.proportions.values().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partial_last_window() {
        let labels = vec!["resting"; 550];
        let w = window_proportions(&track("m1", &labels, 0.2), 20.0).unwrap();
        assert_eq!(w.len(), 6);
        assert!(w[..5].iter().all(|x| x.samples == 100 && !x.partial));
        assert_eq!((w[5].samples, w[5].partial), (50, true));
        assert!(w.iter().all(|x| x.proportions["resting"] == 1.0));
        assert!(window_proportions(&track("e", &[], 0.2), 20.0).unwrap().is_empty());
        assert!(window_proportions(&track("e", &[], 0.2), 0.0).is_err());
    }

    #[test]
    fn irregular_stride_is_rejected() {
        let s = |t: f64| Sample { time_s: t, frame_id: 0, label: "a".into() };
        assert!(EthogramTrack::new("x", 0.2, vec![s(0.0), s(0.2), s(0.5)]).is_err());
    }

    #[test]
    fn group_statistics() {
        let one = BTreeMap::from([(
            "solo".to_string(),
            vec![track("a", &["w", "w", "w", "w", "w", "r", "r", "r", "g", "g"], 0.2)],
        )]);
        let rows = behavior_proportions(&one).unwrap();
        let get = |rows: &[ProportionRow], l: &str| rows.iter().find(|r| r.label == l).unwrap().clone();
        assert_eq!(get(&rows, "w").mean, 0.5);
        assert_eq!(get(&rows, "r").mean, 0.3);
        assert!(!get(&rows, "g").ci_defined());

        let twins = BTreeMap::from([("t".to_string(), vec![track("a", &["w", "r"], 0.2), track("b", &["w", "r"], 0.2)])]);
        let r = get(&behavior_proportions(&twins).unwrap(), "w");
        assert_eq!(r.sd, Some(0.0));
        assert_eq!(r.ci_high, r.ci_low);

        // subjects at 0.2, 0.4, 0.9 walking
        let mk = |k: usize| {
            let labels: Vec<&str> = (0..10).map(|i| if i < k { "w" } else { "r" }).collect();
            track("s", &labels, 0.2)
        };
        let g = BTreeMap::from([("g".to_string(), vec![mk(2), mk(4), mk(9)])]);
        let r = get(&behavior_proportions(&g).unwrap(), "w");
        let mean = (0.2 + 0.4 + 0.9) / 3.0;
        let sd = (((0.2f64 - mean).powi(2) + (0.4f64 - mean).powi(2) + (0.9f64 - mean).powi(2)) / 2.0).sqrt();
        assert!((r.mean - mean).abs() < 1e-12);
        assert!((r.ci_high.unwrap() - (mean + 1.96 * sd / 3f64.sqrt())).abs() < 1e-12);
    }
}
