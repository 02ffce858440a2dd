use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::divergence::DecisionRule;

/// What a row's suspects are, relative to the source model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    /// Copies of the source; verdict rate is a TPR.
    Match,
    /// Independent models; verdict rate is an FPR.
    NonMatch,
    /// Both of the above pooled per condition.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub condition: String,
    pub kind: RowKind,
    pub trials: usize,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub mean_kl_match: Option<f64>,
    pub mean_kl_non_match: Option<f64>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub title: String,
    pub tau: f64,
    pub decision_rule: DecisionRule,
    pub rows: Vec<MetricsRow>,
}

fn cell(v: Option<f64>, pct: bool) -> String {
    match v {
        Some(x) if pct => format!("{:.1}%", 100.0 * x),
        Some(x) => format!("{x:.3}"),
        None => "-".to_string(),
    }
}

impl MetricsTable {
    pub fn row(&self, condition: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.condition == condition)
    }

    /// One JSON object per row, tagged with the table title.
    pub fn to_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            table: &'a str,
            decision_rule: DecisionRule,
            #[serde(flatten)]
            row: &'a MetricsRow,
        }
        let mut out = String::new();
        for row in &self.rows {
            let line = Line {
                table: &self.title,
                decision_rule: self.decision_rule,
                row,
            };
            out.push_str(&serde_json::to_string(&line).expect("rows serialize"));
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = ["condition", "trials", "TPR", "FPR", "KL match", "KL non-match"];
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.condition.clone(),
                    r.trials.to_string(),
                    cell(r.tpr, true),
                    cell(r.fpr, true),
                    cell(r.mean_kl_match, false),
                    cell(r.mean_kl_non_match, false),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let mut out = format!("{}  (tau = {:.4}, rule = {})\n", self.title, self.tau, self.decision_rule);
        let line = |out: &mut String, cells: &[&str]| {
            for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
                if i == 0 {
                    let _ = write!(out, "{c:<w$}");
                } else {
                    let _ = write!(out, "  {c:>w$}");
                }
            }
            out.push('\n');
        };
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for row in &body {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> MetricsTable {
        MetricsTable {
            title: "trials".into(),
            tau: 2.5,
            decision_rule: DecisionRule::SmallKlIsMatch,
            rows: vec![
                MetricsRow {
                    condition: "source-copy".into(),
                    kind: RowKind::Match,
                    trials: 100,
                    tpr: Some(0.97),
                    fpr: None,
                    mean_kl_match: Some(0.41),
                    mean_kl_non_match: None,
                    tau: 2.5,
                },
                MetricsRow {
                    condition: "benign:basalt".into(),
                    kind: RowKind::NonMatch,
                    trials: 100,
                    tpr: None,
                    fpr: Some(0.0),
                    mean_kl_match: None,
                    mean_kl_non_match: Some(9.7),
                    tau: 2.5,
                },
            ],
        }
    }

    #[test]
    fn text_rendering() {
        let t = table().to_text();
        assert!(t.contains("97.0%"));
        assert!(t.contains("benign:basalt"));
        assert_eq!(t.lines().count(), 5);
    }

    #[test]
    fn jsonl_has_one_line_per_row() {
        let s = table().to_jsonl();
        let lines: Vec<serde_json::Value> = s.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["table"], "trials");
        assert_eq!(lines[1]["fpr"], 0.0);
        assert!(lines[0]["fpr"].is_null());
    }
}
