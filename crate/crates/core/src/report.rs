//! Per-task result rows and the aggregate success-rate report.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::agent::Termination;
use crate::task::{Level, Site, SubsetTag, TaskSpec};

/// Outcome of one task in a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub site: Site,
    pub action_difficulty: Level,
    pub visual_difficulty: Level,
    pub overall_difficulty: Level,
    pub subset_tags: Vec<SubsetTag>,
    pub achievable: bool,
    pub score: u8,
    pub unevaluated: bool,
    pub steps: usize,
    pub termination: Termination,
}

impl TaskRow {
    pub fn new(task: &TaskSpec, score: u8, unevaluated: bool, steps: usize, termination: Termination) -> Self {
        Self {
            task_id: task.task_id.clone(),
            site: task.site,
            action_difficulty: task.difficulty.action_difficulty,
            visual_difficulty: task.difficulty.visual_difficulty,
            overall_difficulty: task.difficulty.overall,
            subset_tags: task.subset_tags.iter().copied().collect(),
            achievable: task.achievable,
            score,
            unevaluated,
            steps,
            termination,
        }
    }
}

/// Successes out of evaluated tasks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rate {
    pub successes: usize,
    pub total: usize,
}

impl Rate {
    fn add(&mut self, success: bool) {
        self.total += 1;
        self.successes += usize::from(success);
    }

    pub fn value(&self) -> Option<f64> {
        (self.total > 0).then(|| self.successes as f64 / self.total as f64)
    }

    /// Percentage with two decimals, or `-` when nothing was evaluated.
    pub fn percent(&self) -> String {
        match self.value() {
            Some(v) => format!("{:.2}%", v * 100.0),
            None => "-".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Aggregates {
    pub overall: Rate,
    pub by_site: BTreeMap<Site, Rate>,
    /// Keyed `"<action>/<visual>"`.
    pub difficulty_matrix: BTreeMap<String, Rate>,
    pub by_overall_difficulty: BTreeMap<Level, Rate>,
    pub by_subset: BTreeMap<SubsetTag, Rate>,
    pub by_achievability: BTreeMap<String, Rate>,
    /// Keyed by bucket label (`1-5`, `6-10`, ...; `0` for episodes with no steps).
    pub step_histogram: BTreeMap<String, usize>,
    pub unevaluated: usize,
    pub tasks: usize,
}

pub const STEP_BUCKET: usize = 5;

/// `1-5`, `6-10`, and so on. Labels sort numerically via zero padding.
pub fn step_bucket(steps: usize) -> String {
    if steps == 0 {
        return "000".into();
    }
    let lo = (steps - 1) / STEP_BUCKET * STEP_BUCKET + 1;
    format!("{lo:03}-{:03}", lo + STEP_BUCKET - 1)
}

fn bucket_label(key: &str) -> String {
    key.split('-')
        .map(|p| p.trim_start_matches('0'))
        .map(|p| if p.is_empty() { "0" } else { p })
        .collect::<Vec<_>>()
        .join("-")
}

/// Plain counting; nothing is rounded here.
pub fn aggregate(rows: &[TaskRow]) -> Aggregates {
    let mut a = Aggregates {
        overall: Rate::default(),
        by_site: BTreeMap::new(),
        difficulty_matrix: BTreeMap::new(),
        by_overall_difficulty: BTreeMap::new(),
        by_subset: BTreeMap::new(),
        by_achievability: BTreeMap::new(),
        step_histogram: BTreeMap::new(),
        unevaluated: 0,
        tasks: rows.len(),
    };
    for r in rows {
        *a.step_histogram.entry(step_bucket(r.steps)).or_default() += 1;
        if r.unevaluated {
            a.unevaluated += 1;
            continue;
        }
        let ok = r.score == 1;
        a.overall.add(ok);
        a.by_site.entry(r.site).or_default().add(ok);
        a.difficulty_matrix
            .entry(format!("{}/{}", r.action_difficulty.as_str(), r.visual_difficulty.as_str()))
            .or_default()
            .add(ok);
        a.by_overall_difficulty.entry(r.overall_difficulty).or_default().add(ok);
        for t in &r.subset_tags {
            a.by_subset.entry(*t).or_default().add(ok);
        }
        let key = if r.achievable { "achievable" } else { "unachievable" };
        a.by_achievability.entry(key.to_string()).or_default().add(ok);
    }
    a
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<TaskRow>,
    pub aggregates: Aggregates,
}

impl RunReport {
    /// Rows are sorted by task id so the report does not depend on completion order.
    pub fn from_rows(mut rows: Vec<TaskRow>) -> Self {
        rows.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        let aggregates = aggregate(&rows);
        Self { rows, aggregates }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report json");
        s.push('\n');
        s
    }
}

/// Fixed-width text tables. Byte-stable for equal reports.
pub fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<12} {:<8} {:<8} {:<6} {:>5} {:>6} {:<10} tags",
        "task", "site", "action", "visual", "score", "eval", "steps", "end"
    );
    for r in &report.rows {
        let tags: Vec<&str> = r.subset_tags.iter().map(|t| t.as_str()).collect();
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:<8} {:<8} {:<6} {:>5} {:>6} {:<10} {}",
            r.task_id,
            r.site.as_str(),
            r.action_difficulty.as_str(),
            r.visual_difficulty.as_str(),
            r.score,
            if r.unevaluated { "no" } else { "yes" },
            r.steps,
            r.termination.as_str(),
            tags.join(",")
        );
    }
    let a = &report.aggregates;
    if a.tasks == 0 {
        return out;
    }
    let line = |out: &mut String, label: &str, rate: &Rate| {
        let _ = writeln!(out, "  {label:<24} {:>8}  ({}/{})", rate.percent(), rate.successes, rate.total);
    };
    let _ = writeln!(out, "\nsuccess rate");
    line(&mut out, "overall", &a.overall);
    for (site, r) in &a.by_site {
        line(&mut out, site.as_str(), r);
    }
    let _ = writeln!(out, "\nby difficulty (action/visual)");
    for (k, r) in &a.difficulty_matrix {
        line(&mut out, k, r);
    }
    let _ = writeln!(out, "\nby overall difficulty");
    for (k, r) in &a.by_overall_difficulty {
        line(&mut out, k.as_str(), r);
    }
    if !a.by_subset.is_empty() {
        let _ = writeln!(out, "\nby subset");
        for (k, r) in &a.by_subset {
            line(&mut out, k.as_str(), r);
        }
    }
    let _ = writeln!(out, "\nby achievability");
    for (k, r) in &a.by_achievability {
        line(&mut out, k, r);
    }
    let _ = writeln!(out, "\nsteps histogram");
    for (k, n) in &a.step_histogram {
        let _ = writeln!(out, "  {:<24} {n:>8}", bucket_label(k));
    }
    let _ = writeln!(out, "\nunevaluated: {}", a.unevaluated);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, site: Site, score: u8) -> TaskRow {
        TaskRow {
            task_id: id.into(),
            site,
            action_difficulty: Level::Easy,
            visual_difficulty: Level::Medium,
            overall_difficulty: Level::Medium,
            subset_tags: vec![],
            achievable: true,
            score,
            unevaluated: false,
            steps: 3,
            termination: Termination::Stopped,
        }
    }

    #[test]
    fn buckets() {
        assert_eq!(bucket_label(&step_bucket(1)), "1-5");
        assert_eq!(bucket_label(&step_bucket(5)), "1-5");
        assert_eq!(bucket_label(&step_bucket(6)), "6-10");
        assert_eq!(bucket_label(&step_bucket(30)), "26-30");
        assert_eq!(bucket_label(&step_bucket(0)), "0");
    }

    #[test]
    fn all_success_is_full_rate() {
        let rows: Vec<_> = (0..4).map(|i| row(&format!("t{i}"), Site::Reddit, 1)).collect();
        let a = aggregate(&rows);
        assert_eq!(a.overall.percent(), "100.00%");
        assert!(a.by_site.values().all(|r| r.percent() == "100.00%"));
    }

    #[test]
    fn single_row_sets_every_rate() {
        let a = aggregate(&[row("a", Site::Shopping, 0)]);
        assert_eq!(a.overall.value(), Some(0.0));
        assert_eq!(a.by_site[&Site::Shopping].value(), Some(0.0));
        assert_eq!(a.difficulty_matrix["easy/medium"].value(), Some(0.0));
    }

    #[test]
    fn unevaluated_rows_are_excluded() {
        let mut r = row("b", Site::Reddit, 0);
        r.unevaluated = true;
        let a = aggregate(&[row("a", Site::Reddit, 1), r]);
        assert_eq!(a.overall, Rate { successes: 1, total: 1 });
        assert_eq!(a.unevaluated, 1);
        assert_eq!(a.step_histogram.values().sum::<usize>(), 2);
    }

    #[test]
    fn empty_report_is_header_only() {
        let text = render_text(&RunReport::from_rows(vec![]));
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("task"));
    }
}
