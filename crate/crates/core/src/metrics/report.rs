use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type Pick = (&'static str, fn(&ScoreSet) -> Option<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScoreSet {
    pub r0: Option<f64>,
    pub r1: Option<f64>,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub specificity: Option<f64>,
    pub frames_evaluated: usize,
    pub frames_skipped: usize,
}

impl ScoreSet {
    pub fn check(&self) -> Result<()> {
        let bad = |a: Option<f64>, b: Option<f64>| matches!((a, b), (Some(x), Some(y)) if y < x);
        if bad(self.r0, self.r1) || bad(self.p0, self.p1) {
            return Err(Error::Shape(format!(
                "offset-allowance scores must dominate exact scores: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One evaluated drive (a column of the report table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DriveColumn {
    pub name: String,
    pub student_max_range_m: f64,
    pub teacher_max_range_m: Option<f64>,
    /// Student against teacher labels.
    pub vs_teacher: ScoreSet,
    /// Student against simulator ground truth.
    pub vs_ground_truth: ScoreSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvalReport {
    pub decision_threshold: f32,
    pub drives: Vec<DriveColumn>,
    /// Scores pooled over all frames; ranges averaged over drives.
    pub overall: DriveColumn,
    pub teacher_vs_ground_truth: Option<ScoreSet>,
    pub student_mean_latency_ms: Option<f64>,
    pub teacher_mean_latency_ms: Option<f64>,
    pub speedup_factor: Option<f64>,
    pub notes: Vec<String>,
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

impl EvalReport {
    pub fn check(&self) -> Result<()> {
        for c in self.drives.iter().chain(std::iter::once(&self.overall)) {
            c.vs_teacher.check()?;
            c.vs_ground_truth.check()?;
        }
        if let Some(s) = &self.teacher_vs_ground_truth {
            s.check()?;
        }
        Ok(())
    }

    /// Aligned plain-text table, one column per drive plus the pooled column.
    pub fn to_table(&self) -> String {
        let cols: Vec<&DriveColumn> = self.drives.iter().chain(std::iter::once(&self.overall)).collect();
        let mut rows: Vec<(String, Vec<String>)> = vec![(String::new(), cols.iter().map(|c| c.name.clone()).collect())];
        rows.push((
            "Stu max range (m)".into(),
            cols.iter().map(|c| format!("{:.1}", c.student_max_range_m)).collect(),
        ));
        if cols.iter().any(|c| c.teacher_max_range_m.is_some()) {
            rows.push((
                "Tea max range (m)".into(),
                cols.iter().map(|c| cell(c.teacher_max_range_m, 1)).collect(),
            ));
        }
        let pick: [Pick; 5] = [
            ("R0", |s| s.r0),
            ("R1", |s| s.r1),
            ("P0", |s| s.p0),
            ("P1", |s| s.p1),
            ("sp", |s| s.specificity),
        ];
        for (name, f) in pick {
            rows.push((name.into(), cols.iter().map(|c| cell(f(&c.vs_teacher), 2)).collect()));
        }
        for (name, f) in pick {
            rows.push((
                format!("{name} vs truth*"),
                cols.iter().map(|c| cell(f(&c.vs_ground_truth), 2)).collect(),
            ));
        }
        let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let col_w: Vec<usize> = (0..cols.len())
            .map(|i| rows.iter().map(|(_, v)| v[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (label, vals) in &rows {
            let _ = write!(out, "{label:<label_w$}");
            for (v, w) in vals.iter().zip(&col_w) {
                let _ = write!(out, " | {v:>w$}");
            }
            out.push('\n');
        }
        if let (Some(s), Some(t)) = (self.student_mean_latency_ms, self.teacher_mean_latency_ms) {
            let _ = writeln!(
                out,
                "mean latency: student {s:.3} ms, teacher {t:.3} ms, speedup {}",
                cell(self.speedup_factor, 1)
            );
        }
        out.push_str("* simulator ground truth; only available for synthetic drives\n");
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}
