//! Exact-match span scoring and the ablation matrix.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::attentive::{change_stats, ChangeStats};
use crate::data::{EntityCategory, EntitySpan, Vocab};
use crate::error::{Error, Result};
use crate::model::AsacModel;
use crate::train::{train, Dataset, ExperimentConfig};

/// Precision, recall and F1 with the counts behind them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Gold spans.
    pub support: usize,
}

impl Scores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            support: tp + fn_,
        }
    }
}

/// Micro-averaged scores overall and for every category.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Metrics {
    pub overall: Scores,
    pub per_category: BTreeMap<EntityCategory, Scores>,
}

/// Scores predicted span sets against gold, example by example. A
/// prediction counts only if its `(start, end, category)` is in the gold
/// set of the same example.
pub fn score(predictions: &[BTreeSet<EntitySpan>], gold: &[BTreeSet<EntitySpan>]) -> Result<Metrics> {
    if predictions.len() != gold.len() {
        return Err(Error::LengthMismatch {
            expected: gold.len(),
            found: predictions.len(),
        });
    }
    let mut counts: BTreeMap<EntityCategory, [usize; 3]> = EntityCategory::ALL.iter().map(|&c| (c, [0; 3])).collect();
    for (pred, gold) in predictions.iter().zip(gold) {
        for s in pred {
            let c = counts.get_mut(&s.category).expect("all categories present");
            if gold.contains(s) {
                c[0] += 1;
            } else {
                c[1] += 1;
            }
        }
        for s in gold.difference(pred) {
            counts.get_mut(&s.category).expect("all categories present")[2] += 1;
        }
    }
    let mut total = [0; 3];
    let per_category = counts
        .into_iter()
        .map(|(cat, c)| {
            for k in 0..3 {
                total[k] += c[k];
            }
            (cat, Scores::from_counts(c[0], c[1], c[2]))
        })
        .collect();
    Ok(Metrics {
        overall: Scores::from_counts(total[0], total[1], total[2]),
        per_category,
    })
}

/// Micro F1 over the counts of `categories` only.
pub fn class_f1(metrics: &Metrics, categories: &[EntityCategory]) -> f64 {
    let mut c = [0; 3];
    for cat in categories {
        if let Some(s) = metrics.per_category.get(cat) {
            c[0] += s.true_positives;
            c[1] += s.false_positives;
            c[2] += s.false_negatives;
        }
    }
    Scores::from_counts(c[0], c[1], c[2]).f1
}

/// Both passes scored on a dataset, with label-change counts per class.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub pass1: Metrics,
    pub pass2: Metrics,
    pub change_stats: Vec<ChangeStats>,
    pub pass1_spans: Vec<BTreeSet<EntitySpan>>,
    pub pass2_spans: Vec<BTreeSet<EntitySpan>>,
}

pub fn evaluate(model: &AsacModel, data: &Dataset<'_>) -> Result<Evaluation> {
    let mut stats = vec![ChangeStats::default(); model.num_classes()];
    let mut pass1_spans = Vec::with_capacity(data.len());
    let mut pass2_spans = Vec::with_capacity(data.len());
    let mut gold = Vec::with_capacity(data.len());
    for (i, ex) in data.examples.iter().enumerate() {
        let pred = match data.states(i) {
            Some(s) => model.decode_states(s)?,
            None => model.predict(ex.sentence())?,
        };
        for (class, (d, g)) in pred.decodes.iter().zip(model.gold_tags(ex)).enumerate() {
            stats[class] += change_stats(&d.pass1, &d.pass2, &g)?;
        }
        pass1_spans.push(pred.pass1_spans);
        pass2_spans.push(pred.pass2_spans);
        gold.push(ex.spans().clone());
    }
    Ok(Evaluation {
        pass1: score(&pass1_spans, &gold)?,
        pass2: score(&pass2_spans, &gold)?,
        change_stats: stats,
        pass1_spans,
        pass2_spans,
    })
}

/// The four ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AblationConfig {
    Full,
    /// Last encoder layer instead of the adaptive mixture.
    WithoutAs,
    /// First-pass decodes only.
    WithoutAcrf,
    WithoutBoth,
}

impl AblationConfig {
    pub const ALL: [AblationConfig; 4] = [Self::Full, Self::WithoutAs, Self::WithoutAcrf, Self::WithoutBoth];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::WithoutAs => "wo_as",
            Self::WithoutAcrf => "wo_acrf",
            Self::WithoutBoth => "wo_both",
        }
    }

    pub fn adaptive_shared(self) -> bool {
        matches!(self, Self::Full | Self::WithoutAcrf)
    }

    pub fn acrf(self) -> bool {
        matches!(self, Self::Full | Self::WithoutAs)
    }

    /// `base` with this configuration's switches; the recurrent head is
    /// always off in ablation runs.
    pub fn apply(self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.train.switches.adaptive_shared = self.adaptive_shared();
        cfg.train.switches.acrf = self.acrf();
        cfg.train.switches.recurrent_head = false;
        cfg
    }
}

/// Test-set result of one configuration and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub config: AblationConfig,
    pub seed: u64,
    /// Scores of the final (second-pass) decode.
    pub metrics: Metrics,
    pub first_pass: Metrics,
}

/// Trains and evaluates every configuration for every seed, seed-major.
/// `on_row` sees each row as soon as it is finished.
pub fn run_ablation_matrix(
    train_set: &Dataset<'_>,
    test_set: &Dataset<'_>,
    vocab: &Vocab,
    base: &ExperimentConfig,
    seeds: &[u64],
    on_row: &mut dyn FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    let no_dev = Dataset::new(&[]);
    let mut rows = Vec::with_capacity(seeds.len() * AblationConfig::ALL.len());
    for &seed in seeds {
        for config in AblationConfig::ALL {
            let mut cfg = config.apply(base);
            cfg.train.seed = seed;
            let model = cfg.build_model(vocab.clone())?;
            let (model, _) = train(model, &cfg.train, train_set, &no_dev, &mut |_| {})?;
            let e = evaluate(&model, test_set)?;
            let row = AblationRow {
                config,
                seed,
                metrics: e.pass2,
                first_pass: e.pass1,
            };
            on_row(&row);
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Mean overall F1 of `config` across the rows.
pub fn mean_f1(rows: &[AblationRow], config: AblationConfig) -> Option<f64> {
    let f: Vec<f64> = rows.iter().filter(|r| r.config == config).map(|r| r.metrics.overall.f1).collect();
    (!f.is_empty()).then(|| f.iter().sum::<f64>() / f.len() as f64)
}
