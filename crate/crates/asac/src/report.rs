//! Text renderings of results: JSON metrics, JSON-lines logs and CSV tables.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use asac_core::adaptive::WeightRow;
use asac_core::attentive::ChangeStats;
use asac_core::data::{EntitySpan, Sentence};
use asac_core::eval::{AblationRow, Metrics};
use asac_core::train::EpochRecord;
use serde::Serialize;

use crate::corpus::RawEntity;

/// Pretty JSON with `overall` and `per_category` scores.
pub fn metrics_json(metrics: &Metrics) -> String {
    serde_json::to_string_pretty(metrics).expect("plain data serializes") + "\n"
}

/// One line of the training log.
pub fn epoch_line(record: &EpochRecord) -> String {
    serde_json::to_string(record).expect("plain data serializes") + "\n"
}

pub fn weights_csv(rows: &[WeightRow]) -> String {
    let mut out = String::from("class,layer,weight\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.class, r.layer, r.weight);
    }
    out
}

/// `ratio` is empty for a class with no changes.
pub fn change_stats_csv(stats: &[ChangeStats]) -> String {
    let mut out = String::from("class,changed,positive,ratio\n");
    for (class, s) in stats.iter().enumerate() {
        let ratio = s.ratio().map(|r| r.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{class},{},{},{ratio}", s.changed, s.positive);
    }
    out
}

pub const ABLATION_HEADER: &str = "config,seed,precision,recall,f1\n";

pub fn ablation_line(row: &AblationRow) -> String {
    let o = &row.metrics.overall;
    format!("{},{},{},{},{}\n", row.config.name(), row.seed, o.precision, o.recall, o.f1)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    for r in rows {
        out.push_str(&ablation_line(r));
    }
    out
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    text: &'a str,
    pass1_spans: Vec<RawEntity>,
    pass2_spans: Vec<RawEntity>,
}

fn raw_spans(sentence: &Sentence, spans: &BTreeSet<EntitySpan>) -> Vec<RawEntity> {
    let chars = sentence.chars();
    spans
        .iter()
        .map(|s| RawEntity {
            start_idx: s.start,
            end_idx: s.end,
            category: s.category.name().to_string(),
            entity: chars[s.start..=s.end].iter().collect(),
        })
        .collect()
}

pub fn prediction_line(sentence: &Sentence, pass1: &BTreeSet<EntitySpan>, pass2: &BTreeSet<EntitySpan>) -> String {
    let text = sentence.text();
    let record = PredictionRecord {
        text: &text,
        pass1_spans: raw_spans(sentence, pass1),
        pass2_spans: raw_spans(sentence, pass2),
    };
    serde_json::to_string(&record).expect("plain data serializes") + "\n"
}
