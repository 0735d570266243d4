//! Per-stage processing time and its summed report.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    DetectionIngest,
    Classification,
    Lane,
    Tracking,
}

impl Stage {
    pub const ALL: [Stage; 4] =
        [Stage::DetectionIngest, Stage::Classification, Stage::Lane, Stage::Tracking];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::DetectionIngest => "detection-ingest",
            Stage::Classification => "classification",
            Stage::Lane => "lane",
            Stage::Tracking => "tracking",
        }
    }

    /// Row label in the printed report.
    pub fn title(self) -> &'static str {
        match self {
            Stage::DetectionIngest => "Object detection",
            Stage::Classification => "Object classification",
            Stage::Lane => "Lane identification",
            Stage::Tracking => "Object tracking",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    #[default]
    Seconds,
    Minutes,
}

impl TimeUnit {
    fn suffix(self) -> &'static str {
        match self {
            TimeUnit::Seconds => "s",
            TimeUnit::Minutes => "min",
        }
    }
}

/// Stage durations in one unit. Stages may be accumulated piecewise.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TimingTable {
    pub unit: TimeUnit,
    pub durations: BTreeMap<Stage, f64>,
}

impl TimingTable {
    pub fn new(unit: TimeUnit) -> Self {
        Self { unit, durations: BTreeMap::new() }
    }

    pub fn from_stages(unit: TimeUnit, stages: &[(Stage, f64)]) -> Self {
        let mut t = Self::new(unit);
        for &(s, d) in stages {
            t.add(s, d);
        }
        t
    }

    pub fn add(&mut self, stage: Stage, duration: f64) {
        *self.durations.entry(stage).or_insert(0.0) += duration;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    pub unit: TimeUnit,
    pub rows: Vec<(Stage, f64)>,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub footnote: Option<String>,
}

/// Rows in fixed stage order with their exact sum. Every stage must be
/// present and non-negative.
pub fn timing_report(table: &TimingTable) -> Result<TimingReport, MetricsError> {
    let mut rows = Vec::with_capacity(Stage::ALL.len());
    for stage in Stage::ALL {
        let d = *table.durations.get(&stage).ok_or(MetricsError::MissingStage(stage.as_str()))?;
        if !(d >= 0.0) {
            return Err(MetricsError::NegativeDuration(stage.as_str()));
        }
        rows.push((stage, d));
    }
    let total = rows.iter().map(|(_, d)| d).sum();
    Ok(TimingReport { unit: table.unit, rows, total, footnote: None })
}

impl TimingReport {
    /// Notes a separately stated total that disagrees with the stage sum.
    pub fn with_stated_total(mut self, stated: f64, unit: TimeUnit) -> Self {
        let stated_in_own = match (unit, self.unit) {
            (TimeUnit::Minutes, TimeUnit::Seconds) => stated * 60.0,
            (TimeUnit::Seconds, TimeUnit::Minutes) => stated / 60.0,
            _ => stated,
        };
        if (stated_in_own - self.total).abs() > 1e-9 {
            self.footnote = Some(format!(
                "stated total {stated} {} differs from the stage sum {:.2} {}",
                unit.suffix(),
                self.total,
                self.unit.suffix()
            ));
        }
        self
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let unit = self.unit.suffix();
        for (stage, d) in &self.rows {
            writeln!(f, "{:<24}{:>10.2} {unit}", stage.title(), d)?;
        }
        writeln!(f, "{:<24}{:>10.2} {unit}", "Total", self.total)?;
        if let Some(note) = &self.footnote {
            writeln!(f, "* {note}")?;
        }
        Ok(())
    }
}
