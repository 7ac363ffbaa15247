//! Attack quality metrics: AUC-ROC, TPR at fixed FPR, accuracy at the median
//! threshold and rank aggregation across attacks.
//!
//! Conventions: AUC counts tied member/non-member pairs as one half (midrank
//! Mann–Whitney). TPR@FPR reads the empirical step ROC without interpolation,
//! using the `score > γ` decision rule.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use crate::attacks::{decide, median, AttackId, AttackScores};

pub const DEFAULT_FPR_LEVELS: [f64; 3] = [0.001, 0.01, 0.1];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("score at index {0} is not finite")]
    NonFinite(usize),
    #[error("metric needs both members and non-members")]
    SingleClass,
    #[error("FPR level {0} is outside (0, 1)")]
    BadLevel(f64),
    #[error("no scores to evaluate")]
    Empty,
}

/// Scores with membership labels (1 = training member).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self, EvalError> {
        if scores.len() != labels.len() {
            return Err(EvalError::LengthMismatch {
                scores: scores.len(),
                labels: labels.len(),
            });
        }
        if let Some(&l) = labels.iter().find(|&&l| l > 1) {
            return Err(EvalError::BadLabel(l));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(EvalError::NonFinite(i));
        }
        Ok(Self { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> (u64, u64) {
        let pos = self.labels.iter().filter(|&&l| l == 1).count() as u64;
        (pos, self.labels.len() as u64 - pos)
    }

    fn require_both(&self) -> Result<(u64, u64), EvalError> {
        match self.class_counts() {
            (0, _) | (_, 0) => Err(EvalError::SingleClass),
            c => Ok(c),
        }
    }

    /// Indices sorted by descending score, grouped into runs of equal score.
    /// Each group is reported as (members, non-members).
    fn descending_groups(&self) -> Vec<(u64, u64)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut groups: Vec<(u64, u64)> = Vec::new();
        let mut last: Option<f64> = None;
        for i in idx {
            let s = self.scores[i];
            if last != Some(s) {
                groups.push((0, 0));
                last = Some(s);
            }
            let g = groups.last_mut().unwrap();
            if self.labels[i] == 1 {
                g.0 += 1;
            } else {
                g.1 += 1;
            }
        }
        groups
    }
}

/// Pairwise concordance counts, doubled so that ties stay integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Concordance {
    /// Twice the Mann–Whitney U: 2 per member/non-member pair won by the
    /// member, 1 per tied pair.
    pub twice_u: u64,
    pub twice_pairs: u64,
}

pub fn concordance(data: &LabeledScores) -> Result<Concordance, EvalError> {
    let (pos, neg) = data.require_both()?;
    let mut twice_u: u64 = 0;
    let mut neg_below = neg;
    for (p, q) in data.descending_groups() {
        neg_below -= q;
        twice_u += 2 * p * neg_below + p * q;
    }
    Ok(Concordance {
        twice_u,
        twice_pairs: 2 * pos * neg,
    })
}

/// Probability that a random member outscores a random non-member, ties
/// counting one half.
pub fn auc_roc(data: &LabeledScores) -> Result<f64, EvalError> {
    let Concordance { twice_u, twice_pairs } = concordance(data)?;
    // Evaluating the smaller side and subtracting from one makes
    // auc(s) + auc(-s) == 1 hold exactly in floating point.
    let complement = twice_pairs - twice_u;
    Ok(if twice_u <= complement {
        twice_u as f64 / twice_pairs as f64
    } else {
        1.0 - complement as f64 / twice_pairs as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TprAtFpr {
    pub fpr: f64,
    pub tpr: f64,
}

/// For each level α, the TPR at the smallest threshold whose empirical FPR
/// is at most α.
pub fn tpr_at_fpr(data: &LabeledScores, levels: &[f64]) -> Result<Vec<TprAtFpr>, EvalError> {
    let (pos, neg) = data.require_both()?;
    if let Some(&bad) = levels.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(EvalError::BadLevel(bad));
    }
    // ROC vertices for γ = each distinct score (descending) then γ = -inf
    let mut points = vec![(0u64, 0u64)];
    let (mut tp, mut fp) = (0, 0);
    for (p, q) in data.descending_groups() {
        tp += p;
        fp += q;
        points.push((tp, fp));
    }
    Ok(levels
        .iter()
        .map(|&alpha| {
            let best_tp = points
                .iter()
                .filter(|&&(_, fp)| fp as f64 / neg as f64 <= alpha)
                .map(|&(tp, _)| tp)
                .max()
                .unwrap_or(0);
            TprAtFpr {
                fpr: alpha,
                tpr: best_tp as f64 / pos as f64,
            }
        })
        .collect())
}

/// Accuracy of `score > median(scores)`.
pub fn accuracy_at_median(data: &LabeledScores) -> Result<f64, EvalError> {
    if data.is_empty() {
        return Err(EvalError::Empty);
    }
    let gamma = median(data.scores());
    let bits = decide(data.scores(), gamma).bits;
    let correct = bits.iter().zip(data.labels()).filter(|(b, l)| b == l).count();
    Ok(correct as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attack: AttackId,
    pub params: BTreeMap<String, Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub auc: f64,
    pub tpr_at_fpr: Vec<TprAtFpr>,
    pub accuracy_median: f64,
}

impl EvalReport {
    pub fn tpr_at(&self, fpr: f64) -> Option<f64> {
        self.tpr_at_fpr.iter().find(|p| p.fpr == fpr).map(|p| p.tpr)
    }
}

pub fn evaluate(
    scores: &AttackScores,
    labels: &[u8],
    fpr_levels: &[f64],
    seed: Option<u64>,
) -> Result<EvalReport, EvalError> {
    let data = LabeledScores::new(scores.scores.clone(), labels.to_vec())?;
    Ok(EvalReport {
        attack: scores.attack,
        params: scores.params.clone(),
        seed,
        auc: auc_roc(&data)?,
        tpr_at_fpr: tpr_at_fpr(&data, fpr_levels)?,
        accuracy_median: accuracy_at_median(&data)?,
    })
}

/// One report with the coordinates it is aggregated under.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportEntry {
    pub generator: String,
    pub dataset: String,
    pub attack: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprSummary {
    pub fpr: f64,
    pub tpr: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub generator: String,
    pub dataset: String,
    pub attack: String,
    pub seeds: usize,
    pub auc: MeanStd,
    pub tpr_at_fpr: Vec<TprSummary>,
    pub accuracy_median: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRank {
    pub attack: String,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRanks {
    pub generator: String,
    pub dataset: String,
    pub ranks: Vec<AttackRank>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<GroupSummary>,
    pub cells: Vec<CellRanks>,
    pub average_rank: Vec<AttackRank>,
}

/// Ranks 1..n by descending value; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Per (generator, dataset, attack) mean/std across seeds, attack ranks by
/// mean AUC within each (generator, dataset) cell, and average ranks.
pub fn aggregate(entries: &[ReportEntry]) -> Summary {
    let mut order: Vec<(String, String, String)> = Vec::new();
    let mut members: HashMap<(String, String, String), Vec<&EvalReport>> = HashMap::new();
    for e in entries {
        let key = (e.generator.clone(), e.dataset.clone(), e.attack.clone());
        members
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(&e.report);
    }

    let groups: Vec<GroupSummary> = order
        .iter()
        .map(|key| {
            let reps = &members[key];
            let levels: Vec<f64> = reps[0].tpr_at_fpr.iter().map(|p| p.fpr).collect();
            GroupSummary {
                generator: key.0.clone(),
                dataset: key.1.clone(),
                attack: key.2.clone(),
                seeds: reps.len(),
                auc: MeanStd::of(&reps.iter().map(|r| r.auc).collect::<Vec<_>>()),
                tpr_at_fpr: levels
                    .iter()
                    .map(|&fpr| TprSummary {
                        fpr,
                        tpr: MeanStd::of(
                            &reps.iter().filter_map(|r| r.tpr_at(fpr)).collect::<Vec<_>>(),
                        ),
                    })
                    .collect(),
                accuracy_median: MeanStd::of(
                    &reps.iter().map(|r| r.accuracy_median).collect::<Vec<_>>(),
                ),
            }
        })
        .collect();

    let mut cell_order: Vec<(String, String)> = Vec::new();
    let mut cell_groups: HashMap<(String, String), Vec<&GroupSummary>> = HashMap::new();
    for g in &groups {
        let key = (g.generator.clone(), g.dataset.clone());
        cell_groups
            .entry(key.clone())
            .or_insert_with(|| {
                cell_order.push(key);
                Vec::new()
            })
            .push(g);
    }
    let cells: Vec<CellRanks> = cell_order
        .iter()
        .map(|key| {
            let gs = &cell_groups[key];
            let aucs: Vec<f64> = gs.iter().map(|g| g.auc.mean).collect();
            CellRanks {
                generator: key.0.clone(),
                dataset: key.1.clone(),
                ranks: gs
                    .iter()
                    .zip(average_ranks(&aucs))
                    .map(|(g, rank)| AttackRank {
                        attack: g.attack.clone(),
                        rank,
                    })
                    .collect(),
            }
        })
        .collect();

    let mut attack_order: Vec<String> = Vec::new();
    let mut rank_lists: HashMap<String, Vec<f64>> = HashMap::new();
    for c in &cells {
        for r in &c.ranks {
            rank_lists
                .entry(r.attack.clone())
                .or_insert_with(|| {
                    attack_order.push(r.attack.clone());
                    Vec::new()
                })
                .push(r.rank);
        }
    }
    let average_rank = attack_order
        .iter()
        .map(|a| AttackRank {
            attack: a.clone(),
            rank: MeanStd::of(&rank_lists[a]).mean,
        })
        .collect();

    Summary {
        groups,
        cells,
        average_rank,
    }
}

/// Plain-text tables: mean (std) AUC per cell and attack with an average
/// rank row, then one TPR table per FPR level, then median-threshold accuracy.
pub fn render_table(summary: &Summary) -> String {
    let mut attacks: Vec<&str> = Vec::new();
    for g in &summary.groups {
        if !attacks.contains(&g.attack.as_str()) {
            attacks.push(&g.attack);
        }
    }
    let lookup: HashMap<(&str, &str, &str), &GroupSummary> = summary
        .groups
        .iter()
        .map(|g| ((g.generator.as_str(), g.dataset.as_str(), g.attack.as_str()), g))
        .collect();
    let levels: Vec<f64> = summary
        .groups
        .first()
        .map(|g| g.tpr_at_fpr.iter().map(|t| t.fpr).collect())
        .unwrap_or_default();

    let mut out = String::new();
    let mut section = |title: String,
                       cell: &dyn Fn(&GroupSummary) -> Option<MeanStd>,
                       footer: Option<Vec<String>>| {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["generator".to_string(), "dataset".to_string()];
        header.extend(attacks.iter().map(|a| a.to_string()));
        rows.push(header);
        for c in &summary.cells {
            let mut row = vec![c.generator.clone(), c.dataset.clone()];
            for a in &attacks {
                row.push(
                    lookup
                        .get(&(c.generator.as_str(), c.dataset.as_str(), *a))
                        .and_then(|g| cell(g))
                        .map_or_else(|| "-".to_string(), |m| format!("{:.3} ({:.2})", m.mean, m.std)),
                );
            }
            rows.push(row);
        }
        if let Some(f) = footer {
            rows.push(f);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
            .collect();
        let _ = writeln!(out, "{title}");
        for (i, r) in rows.iter().enumerate() {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (s, w))| if j < 2 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out.push('\n');
    };

    let rank_of: HashMap<&str, f64> = summary
        .average_rank
        .iter()
        .map(|r| (r.attack.as_str(), r.rank))
        .collect();
    let mut footer = vec!["average rank".to_string(), String::new()];
    footer.extend(
        attacks
            .iter()
            .map(|a| rank_of.get(a).map_or("-".into(), |r| format!("{r:.2}"))),
    );
    section("AUC-ROC, mean (std) over seeds".into(), &|g| Some(g.auc), Some(footer));
    for &fpr in &levels {
        section(
            format!("TPR at FPR = {fpr}"),
            &move |g| g.tpr_at_fpr.iter().find(|t| t.fpr == fpr).map(|t| t.tpr),
            None,
        );
    }
    section(
        "Accuracy at median threshold".into(),
        &|g| Some(g.accuracy_median),
        None,
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn ls(scores: &[f64], labels: &[u8]) -> LabeledScores {
        LabeledScores::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    /// All member/non-member pairs, counted directly.
    fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&ls(&[4.0, 3.0, 2.0, 1.0], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc_roc(&ls(&[1.0; 6], &[1, 0, 1, 0, 1, 1])).unwrap(), 0.5);
        assert_eq!(auc_roc(&ls(&[0.9, 0.8, 0.3, 0.1], &[1, 0, 1, 0])).unwrap(), 0.75);
        assert_eq!(auc_roc(&ls(&[1.0, 2.0], &[1, 1])), Err(EvalError::SingleClass));
    }

    #[test]
    fn labeled_scores_validation() {
        assert!(matches!(
            LabeledScores::new(vec![1.0], vec![1, 0]),
            Err(EvalError::LengthMismatch { .. })
        ));
        assert_eq!(LabeledScores::new(vec![1.0], vec![2]), Err(EvalError::BadLabel(2)));
        assert_eq!(
            LabeledScores::new(vec![f64::NAN], vec![1]),
            Err(EvalError::NonFinite(0))
        );
    }

    #[test]
    fn tpr_examples() {
        let d = ls(&[4.0, 3.0, 2.0, 1.0], &[1, 1, 0, 0]);
        assert_eq!(tpr_at_fpr(&d, &[0.5]).unwrap()[0].tpr, 1.0);
        let anti = ls(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1, 1, 0, 0, 0]);
        assert_eq!(tpr_at_fpr(&anti, &[0.3]).unwrap()[0].tpr, 0.0);
        assert_eq!(tpr_at_fpr(&anti, &[0.999]).unwrap()[0].tpr, 0.0);
        let mixed = ls(&[5.0, 1.0, 3.0, 2.0], &[1, 1, 0, 0]);
        // γ=1 admits both members at FPR 1.0 only; at 0.999 only γ=3 or higher
        assert_eq!(tpr_at_fpr(&mixed, &[0.999]).unwrap()[0].tpr, 0.5);
        assert_eq!(tpr_at_fpr(&d, &[0.0]), Err(EvalError::BadLevel(0.0)));
        assert_eq!(tpr_at_fpr(&d, &[1.0]), Err(EvalError::BadLevel(1.0)));
    }

    #[test]
    fn tpr_with_tied_scores_does_not_split_groups() {
        // the top group mixes one member and one non-member
        let d = ls(&[5.0, 5.0, 1.0, 1.0], &[1, 0, 1, 0]);
        assert_eq!(tpr_at_fpr(&d, &[0.4]).unwrap()[0].tpr, 0.0);
        assert_eq!(tpr_at_fpr(&d, &[0.5]).unwrap()[0].tpr, 0.5);
    }

    #[test]
    fn median_accuracy_examples() {
        assert_eq!(accuracy_at_median(&ls(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(accuracy_at_median(&ls(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 0, 0])).unwrap(), 0.0);
        assert_eq!(accuracy_at_median(&ls(&[2.0; 5], &[1, 0, 0, 0, 1])).unwrap(), 0.6);
    }

    fn report(auc: f64, seed: u64) -> EvalReport {
        EvalReport {
            attack: AttackId::Dcr,
            params: BTreeMap::new(),
            seed: Some(seed),
            auc,
            tpr_at_fpr: vec![TprAtFpr { fpr: 0.1, tpr: auc / 2.0 }],
            accuracy_median: auc,
        }
    }

    fn entry(gen: &str, attack: &str, auc: f64, seed: u64) -> ReportEntry {
        ReportEntry {
            generator: gen.into(),
            dataset: "d".into(),
            attack: attack.into(),
            report: report(auc, seed),
        }
    }

    #[test]
    fn aggregate_ranks() {
        let entries = vec![
            entry("g1", "a", 0.9, 0),
            entry("g1", "b", 0.6, 0),
            entry("g1", "c", 0.6, 0),
            entry("g2", "a", 0.8, 0),
            entry("g2", "b", 0.7, 0),
            entry("g2", "c", 0.5, 0),
        ];
        let s = aggregate(&entries);
        assert_eq!(s.cells[0].ranks[1].rank, 2.5);
        assert_eq!(s.cells[0].ranks[2].rank, 2.5);
        let avg: Vec<f64> = s.average_rank.iter().map(|r| r.rank).collect();
        assert_eq!(avg, vec![1.0, 2.25, 2.75]);
        assert!(render_table(&s).contains("average rank"));
    }

    #[test]
    fn aggregate_two_way_tie_and_single_seed() {
        let s = aggregate(&[entry("g", "a", 0.7, 0), entry("g", "b", 0.7, 0)]);
        assert!(s.cells[0].ranks.iter().all(|r| r.rank == 1.5));
        assert_eq!(s.groups[0].auc.std, 0.0);
        let s = aggregate(&[entry("g", "a", 0.6, 0), entry("g", "a", 0.8, 1)]);
        assert_eq!(s.groups[0].seeds, 2);
        assert!((s.groups[0].auc.mean - 0.7).abs() < 1e-12);
        assert!((s.groups[0].auc.std - 0.1).abs() < 1e-12);
    }

    fn random_instance(seed: u64) -> (Vec<f64>, Vec<u8>) {
        let mut rng = rng::seeded(seed);
        let m = rng.random_range(2..=500);
        let levels = rng.random_range(2..50);
        let mut labels: Vec<u8> = (0..m).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let scores = (0..m).map(|_| rng.random_range(0..levels) as f64 * 0.37 - 3.0).collect();
        (scores, labels)
    }

    proptest! {
        #[test]
        fn auc_matches_all_pairs(seed: u64) {
            let (s, l) = random_instance(seed);
            prop_assert!((auc_roc(&ls(&s, &l)).unwrap() - brute_auc(&s, &l)).abs() < 1e-12);
        }

        #[test]
        fn auc_complement_is_exact(seed: u64) {
            let (s, l) = random_instance(seed);
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert_eq!(auc_roc(&ls(&s, &l)).unwrap() + auc_roc(&ls(&neg, &l)).unwrap(), 1.0);
        }

        #[test]
        fn auc_ignores_monotone_transforms(seed: u64) {
            let (s, l) = random_instance(seed);
            let t: Vec<f64> = s.iter().map(|v| (0.5 * v).exp() + 3.0).collect();
            prop_assert_eq!(auc_roc(&ls(&s, &l)).unwrap(), auc_roc(&ls(&t, &l)).unwrap());
        }

        #[test]
        fn tpr_is_monotone_in_level(seed: u64) {
            let (s, l) = random_instance(seed);
            let levels: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
            let t = tpr_at_fpr(&ls(&s, &l), &levels).unwrap();
            prop_assert!(t.windows(2).all(|w| w[0].tpr <= w[1].tpr));
        }
    }
}
