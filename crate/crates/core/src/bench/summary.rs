use serde::{Deserialize, Serialize};

use super::{Method, TrialRecord};
use crate::error::{Error, Result};
use crate::graspworld::Variant;

/// Histogram bucket width in steps.
pub const BUCKET: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub method: Method,
    pub trials: usize,
    pub seeds: usize,
    pub success_by_seed: Vec<f64>,
    pub success_mean: f64,
    pub success_std: f64,
    pub steps_mean: f64,
    pub steps_std: f64,
    pub recoveries_mean: f64,
    /// `recovery_count_histogram[c]` trials ended with `c` recoveries.
    pub recovery_count_histogram: Vec<usize>,
    /// Attempt lengths at trigger time, bucketed by [`BUCKET`] steps.
    pub recovery_time_histogram: Vec<usize>,
    pub recoveries_total: usize,
    /// Share of recoveries triggered before the mean expert length; `None` without recoveries.
    pub early_recovery_fraction: Option<f64>,
    /// Mean planar distance between consecutive grasp attempts within a trial.
    pub grasp_distance_mean: Option<f64>,
    pub grasp_distance_pairs: usize,
    pub mean_expert_length: f64,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn row(&self, variant: Variant, method: Method) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.variant == variant && r.method == method)
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Distances between consecutive grasp attempts of one trial.
pub fn grasp_distances(record: &TrialRecord) -> Vec<f64> {
    record
        .result
        .grasp_attempts
        .windows(2)
        .map(|w| ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt())
        .collect()
}

fn bump(hist: &mut Vec<usize>, i: usize) {
    if hist.len() <= i {
        hist.resize(i + 1, 0);
    }
    hist[i] += 1;
}

fn seed_groups<'a>(records: &[&'a TrialRecord]) -> Vec<(u64, Vec<&'a TrialRecord>)> {
    let mut groups: Vec<(u64, Vec<&'a TrialRecord>)> = Vec::new();
    for r in records {
        match groups.iter_mut().find(|(s, _)| *s == r.seed) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.seed, vec![r])),
        }
    }
    groups
}

fn summarize_group(variant: Variant, method: Method, records: &[&TrialRecord]) -> SummaryRow {
    let groups = seed_groups(records);
    let success_by_seed: Vec<f64> = groups
        .iter()
        .map(|(_, g)| g.iter().filter(|r| r.result.success).count() as f64 / g.len() as f64)
        .collect();
    let steps_by_seed: Vec<f64> = groups
        .iter()
        .map(|(_, g)| mean(&g.iter().map(|r| r.steps_to_success() as f64).collect::<Vec<_>>()))
        .collect();

    let mean_expert_length = records[0].mean_expert_length;
    let mut recovery_count_histogram = Vec::new();
    let mut recovery_time_histogram = Vec::new();
    let mut early = 0usize;
    let mut total = 0usize;
    let mut distances = Vec::new();
    for r in records {
        bump(&mut recovery_count_histogram, r.result.recoveries);
        for &len in &r.result.recovery_attempt_lengths {
            bump(&mut recovery_time_histogram, len / BUCKET);
            total += 1;
            if (len as f64) < mean_expert_length {
                early += 1;
            }
        }
        distances.extend(grasp_distances(r));
    }

    SummaryRow {
        variant,
        method,
        trials: records.len(),
        seeds: groups.len(),
        success_mean: mean(&success_by_seed),
        success_std: sample_std(&success_by_seed),
        success_by_seed,
        steps_mean: mean(&steps_by_seed),
        steps_std: sample_std(&steps_by_seed),
        recoveries_mean: mean(&records.iter().map(|r| r.result.recoveries as f64).collect::<Vec<_>>()),
        recovery_count_histogram,
        recovery_time_histogram,
        recoveries_total: total,
        early_recovery_fraction: (total > 0).then(|| early as f64 / total as f64),
        grasp_distance_mean: (!distances.is_empty()).then(|| mean(&distances)),
        grasp_distance_pairs: distances.len(),
        mean_expert_length,
        horizon: records[0].horizon,
    }
}

/// Aggregate records per `(variant, method)` in first-seen order.
pub fn summarize(records: &[TrialRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Validation("cannot summarize zero records".into()));
    }
    let mut keys: Vec<(Variant, Method)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.variant, r.method)) {
            keys.push((r.variant, r.method));
        }
    }
    let rows = keys
        .into_iter()
        .map(|(v, m)| {
            let group: Vec<&TrialRecord> = records.iter().filter(|r| r.variant == v && r.method == m).collect();
            summarize_group(v, m, &group)
        })
        .collect();
    Ok(Summary { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::fake_record;

    #[test]
    fn all_successes_at_thirty() {
        let recs: Vec<_> = (0..3)
            .flat_map(|s| (0..10).map(move |t| fake_record(Variant::Train, Method::OursFull, s, t, true, 30)))
            .collect();
        let s = summarize(&recs).unwrap();
        let row = s.row(Variant::Train, Method::OursFull).unwrap();
        assert_eq!((row.success_mean, row.success_std), (1.0, 0.0));
        assert_eq!((row.steps_mean, row.steps_std), (30.0, 0.0));
        assert_eq!((row.trials, row.seeds), (30, 3));
        assert_eq!(row.early_recovery_fraction, None);
    }

    #[test]
    fn all_failures_score_the_horizon() {
        let recs: Vec<_> = (0..5)
            .map(|t| fake_record(Variant::Blocked, Method::BaseNoRecovery, 0, t, false, 57))
            .collect();
        let row = summarize(&recs).unwrap().rows[0].clone();
        assert_eq!(row.success_mean, 0.0);
        assert_eq!(row.steps_mean, 400.0);
    }

    #[test]
    fn seed_rates_aggregate_with_sample_std() {
        let mut recs = Vec::new();
        for (seed, wins) in [(0u64, 6), (1, 7), (2, 8)] {
            for t in 0..10 {
                recs.push(fake_record(Variant::Blocked, Method::OursNoSkew, seed, t, t < wins, 50));
            }
        }
        let row = summarize(&recs).unwrap().rows[0].clone();
        assert_eq!(row.success_by_seed, vec![0.6, 0.7, 0.8]);
        assert!((row.success_mean - 0.7).abs() < 1e-12);
        assert!((row.success_std - 0.1).abs() < 1e-12);
    }

    #[test]
    fn recovery_histograms_and_grasp_distances() {
        let mut a = fake_record(Variant::AdversarialSlip, Method::OursFull, 0, 0, true, 90);
        a.result.recoveries = 2;
        a.result.recovery_attempt_lengths = vec![12, 31];
        a.result.grasp_attempts = vec![[0.0, 0.0], [0.3, 0.4], [0.3, 0.4]];
        let mut b = fake_record(Variant::AdversarialSlip, Method::OursFull, 0, 1, true, 40);
        b.result.recoveries = 1;
        b.result.recovery_attempt_lengths = vec![20];
        let row = summarize(&[a.clone(), b]).unwrap().rows[0].clone();
        assert_eq!(row.recovery_count_histogram, vec![0, 1, 1]);
        assert_eq!(row.recovery_time_histogram, vec![0, 1, 1, 1]);
        assert_eq!(row.recoveries_total, 3);
        assert_eq!(row.early_recovery_fraction, Some(2.0 / 3.0));
        assert_eq!(grasp_distances(&a), vec![0.5, 0.0]);
        assert_eq!(row.grasp_distance_mean, Some(0.25));
        assert_eq!(row.grasp_distance_pairs, 2);
    }

    #[test]
    fn rows_keep_first_seen_order() {
        let recs = vec![
            fake_record(Variant::Blocked, Method::OursFull, 0, 0, true, 10),
            fake_record(Variant::Blocked, Method::BaseNoRecovery, 0, 0, true, 10),
            fake_record(Variant::Train, Method::OursFull, 0, 0, true, 10),
            fake_record(Variant::Blocked, Method::OursFull, 0, 1, true, 10),
        ];
        let keys: Vec<_> = summarize(&recs)
            .unwrap()
            .rows
            .iter()
            .map(|r| (r.variant, r.method))
            .collect();
        assert_eq!(
            keys,
            vec![
                (Variant::Blocked, Method::OursFull),
                (Variant::Blocked, Method::BaseNoRecovery),
                (Variant::Train, Method::OursFull)
            ]
        );
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn sample_std_edges() {
        assert_eq!(sample_std(&[]), 0.0);
        assert_eq!(sample_std(&[3.0]), 0.0);
        assert!((sample_std(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-12);
    }
}
