//! Accuracy, inter-annotator agreement and per-category breakdowns.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn accuracy<T: PartialEq>(predictions: &[T], golds: &[T]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("accuracy inputs"));
    }
    if predictions.len() != golds.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    let correct = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scale {
    Nominal,
    /// Categories listed from lowest to highest.
    Ordinal { order: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub statistic: String,
    pub value: f64,
    pub n_items: usize,
    pub n_annotators: usize,
    pub scale: String,
    /// Set when the chance term leaves the formula undefined and the value
    /// is fixed by convention.
    pub degenerate: bool,
}

/// Cohen's κ for two complete label vectors. When chance agreement is 1
/// (both annotators use one identical category) κ is reported as 1.0 and
/// flagged degenerate.
pub fn cohen_kappa<T: Ord + Clone>(a: &[T], b: &[T]) -> Result<AgreementReport> {
    if a.is_empty() {
        return Err(Error::Agreement("kappa needs at least one item".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Agreement(format!(
            "annotators rated {} and {} items",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mut ma: BTreeMap<&T, f64> = BTreeMap::new();
    let mut mb: BTreeMap<&T, f64> = BTreeMap::new();
    let mut agree = 0.0;
    for (x, y) in a.iter().zip(b) {
        *ma.entry(x).or_default() += 1.0;
        *mb.entry(y).or_default() += 1.0;
        if x == y {
            agree += 1.0;
        }
    }
    // (p_o - p_e) / (1 - p_e) scaled by n²: every term is an integer count,
    // so the only rounding is the final division.
    let chance: f64 = ma
        .iter()
        .map(|(c, na)| na * mb.get(c).copied().unwrap_or(0.0))
        .sum();
    let (value, degenerate) = if chance == n * n {
        (1.0, true)
    } else {
        ((n * agree - chance) / (n * n - chance), false)
    };
    Ok(AgreementReport {
        statistic: "cohen_kappa".into(),
        value,
        n_items: a.len(),
        n_annotators: 2,
        scale: "nominal".into(),
        degenerate,
    })
}

/// Items × annotators matrix of category labels; `None` marks a missing
/// annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationTable {
    pub items: Vec<String>,
    pub annotators: Vec<String>,
    pub values: Vec<Vec<Option<String>>>,
    pub scale: Scale,
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item: String,
    pub annotator: String,
    pub aspect: String,
    pub value: serde_json::Value,
}

fn value_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

impl AnnotationTable {
    /// Builds the table for `aspect`. Items and annotators keep first-seen
    /// order; a repeated (item, annotator) pair is an error.
    pub fn from_records(records: &[AnnotationRecord], aspect: &str, scale: Scale) -> Result<Self> {
        let mut items: Vec<String> = Vec::new();
        let mut annotators: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize), String> = BTreeMap::new();
        for r in records.iter().filter(|r| r.aspect == aspect) {
            let i = position_or_push(&mut items, &r.item);
            let a = position_or_push(&mut annotators, &r.annotator);
            if cells.insert((i, a), value_text(&r.value)).is_some() {
                return Err(Error::Agreement(format!(
                    "annotator {} rated item {} twice for aspect {aspect}",
                    r.annotator, r.item
                )));
            }
        }
        let values = (0..items.len())
            .map(|i| (0..annotators.len()).map(|a| cells.get(&(i, a)).cloned()).collect())
            .collect();
        let table = AnnotationTable {
            items,
            annotators,
            values,
            scale,
        };
        table.check()?;
        Ok(table)
    }

    pub fn check(&self) -> Result<()> {
        if self.annotators.len() < 2 {
            return Err(Error::Agreement(format!(
                "need at least 2 annotators, found {}",
                self.annotators.len()
            )));
        }
        if self.values.len() != self.items.len()
            || self.values.iter().any(|r| r.len() != self.annotators.len())
        {
            return Err(Error::Agreement("table shape does not match items × annotators".into()));
        }
        if let Scale::Ordinal { order } = &self.scale {
            for v in self.values.iter().flatten().flatten() {
                if !order.contains(v) {
                    return Err(Error::Agreement(format!("value {v:?} not in the declared order")));
                }
            }
        }
        Ok(())
    }

    fn column(&self, a: usize) -> Vec<Option<&str>> {
        self.values.iter().map(|r| r[a].as_deref()).collect()
    }

    fn scale_name(&self) -> String {
        match self.scale {
            Scale::Nominal => "nominal".into(),
            Scale::Ordinal { .. } => "ordinal".into(),
        }
    }
}

fn position_or_push(v: &mut Vec<String>, s: &str) -> usize {
    match v.iter().position(|x| x == s) {
        Some(p) => p,
        None => {
            v.push(s.to_string());
            v.len() - 1
        }
    }
}

/// Cohen's κ for two annotators; with more, the mean over all annotator
/// pairs. Items missing either annotation are skipped for that pair.
pub fn pairwise_kappa(table: &AnnotationTable) -> Result<AgreementReport> {
    table.check()?;
    let m = table.annotators.len();
    let mut values = Vec::new();
    let mut degenerate = false;
    for a in 0..m {
        for b in a + 1..m {
            let (ca, cb) = (table.column(a), table.column(b));
            let (xa, xb): (Vec<&str>, Vec<&str>) = ca
                .iter()
                .zip(&cb)
                .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
                .unzip();
            let r = cohen_kappa(&xa, &xb)?;
            degenerate |= r.degenerate;
            values.push(r.value);
        }
    }
    let value = values.iter().sum::<f64>() / values.len() as f64;
    Ok(AgreementReport {
        statistic: if m == 2 { "cohen_kappa" } else { "mean_pairwise_cohen_kappa" }.into(),
        value,
        n_items: table.items.len(),
        n_annotators: m,
        scale: table.scale_name(),
        degenerate,
    })
}

/// Krippendorff's α with the ordinal metric, from the coincidence matrix of
/// pairable values. Units with fewer than two values are ignored.
pub fn krippendorff_alpha_ordinal(table: &AnnotationTable) -> Result<AgreementReport> {
    table.check()?;
    let Scale::Ordinal { order } = &table.scale else {
        return Err(Error::Agreement("ordinal alpha needs an ordinal scale".into()));
    };
    let k = order.len();
    let rank = |v: &str| order.iter().position(|o| o == v).expect("checked");
    let mut o = vec![vec![0.0; k]; k];
    let mut pairable_units = 0;
    for row in &table.values {
        let vals: Vec<usize> = row.iter().flatten().map(|v| rank(v)).collect();
        let m = vals.len();
        if m < 2 {
            continue;
        }
        pairable_units += 1;
        let w = 1.0 / (m as f64 - 1.0);
        for (i, &c) in vals.iter().enumerate() {
            for (j, &d) in vals.iter().enumerate() {
                if i != j {
                    o[c][d] += w;
                }
            }
        }
    }
    if pairable_units == 0 {
        return Err(Error::Agreement("no item has two or more values".into()));
    }
    let n_c: Vec<f64> = o.iter().map(|r| r.iter().sum()).collect();
    let n: f64 = n_c.iter().sum();
    let delta2 = |c: usize, d: usize| {
        let (lo, hi) = if c <= d { (c, d) } else { (d, c) };
        let s: f64 = n_c[lo..=hi].iter().sum::<f64>() - (n_c[lo] + n_c[hi]) / 2.0;
        s * s
    };
    let (mut num, mut den) = (0.0, 0.0);
    for c in 0..k {
        for d in 0..k {
            let dd = delta2(c, d);
            num += o[c][d] * dd;
            den += n_c[c] * n_c[d] * dd;
        }
    }
    let (value, degenerate) = if den == 0.0 {
        (1.0, true)
    } else {
        (1.0 - (n - 1.0) * num / den, false)
    };
    Ok(AgreementReport {
        statistic: "krippendorff_alpha_ordinal".into(),
        value,
        n_items: table.items.len(),
        n_annotators: table.annotators.len(),
        scale: "ordinal".into(),
        degenerate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityVote {
    /// (item, label) for items with a strict majority.
    pub labels: Vec<(String, String)>,
    /// Items without one.
    pub excluded: Vec<String>,
}

/// Label chosen by more than half of the annotators who rated the item.
pub fn majority_vote(table: &AnnotationTable) -> Result<MajorityVote> {
    table.check()?;
    let mut out = MajorityVote {
        labels: Vec::new(),
        excluded: Vec::new(),
    };
    for (item, row) in table.items.iter().zip(&table.values) {
        let present: Vec<&String> = row.iter().flatten().collect();
        let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
        for v in &present {
            *counts.entry(v).or_default() += 1;
        }
        match counts.into_iter().find(|(_, c)| 2 * c > present.len()) {
            Some((label, _)) => out.labels.push((item.clone(), label.clone())),
            None => out.excluded.push(item.clone()),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRecord {
    pub category: Option<String>,
    pub prediction: Option<u8>,
    pub gold: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub category: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub error_rate: f64,
}

pub const OTHER_CATEGORY: &str = "other";

/// Per-category counts. Categories outside `known` (or missing) are grouped
/// under `other`; with `known = None` every category stands on its own.
pub fn breakdown_report(records: &[BreakdownRecord], known: Option<&[String]>) -> Vec<BreakdownRow> {
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let known: Option<BTreeSet<&str>> = known.map(|k| k.iter().map(String::as_str).collect());
    for r in records {
        let cat = match (&r.category, &known) {
            (Some(c), Some(k)) if k.contains(c.as_str()) => c.clone(),
            (Some(c), None) => c.clone(),
            _ => OTHER_CATEGORY.to_string(),
        };
        let e = groups.entry(cat).or_default();
        e.0 += 1;
        if r.prediction == Some(r.gold) {
            e.1 += 1;
        }
    }
    groups
        .into_iter()
        .map(|(category, (n, correct))| BreakdownRow {
            category,
            n,
            correct,
            accuracy: correct as f64 / n as f64,
            error_rate: (n - correct) as f64 / n as f64,
        })
        .collect()
}
