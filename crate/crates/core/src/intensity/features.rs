use std::fmt;

use chrono::Weekday;
use serde::{Deserialize, Serialize};

use crate::calendar::DayMeta;

/// Calendar covariates available to the daily-count GLM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    /// Monday to Friday flag.
    Weekday,
    /// Raw days since the calendar origin.
    Trend,
    /// Month, one-hot with January as reference.
    Month,
    /// Day of week, one-hot over Tue..Sat with Monday as reference.
    DayOfWeek,
    DayAfterHoliday,
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Factor::Weekday => "weekday",
            Factor::Trend => "trend",
            Factor::Month => "month",
            Factor::DayOfWeek => "day_of_week",
            Factor::DayAfterHoliday => "day_after_holiday",
        })
    }
}

const MONTH_NAMES: [&str; 12] = [
    "jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec",
];
/// Levels with their own dummy column. Sundays are closed and share the
/// Monday reference encoding.
const DOW_LEVELS: [Weekday; 5] = [Weekday::Tue, Weekday::Wed, Weekday::Thu, Weekday::Fri, Weekday::Sat];

/// An ordered, duplicate-free set of factors. An intercept column is always
/// prepended when encoding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactorSpec(Vec<Factor>);

impl FactorSpec {
    pub fn new(factors: impl IntoIterator<Item = Factor>) -> Self {
        let mut v: Vec<Factor> = factors.into_iter().collect();
        v.sort();
        v.dedup();
        FactorSpec(v)
    }

    pub fn intercept_only() -> Self {
        FactorSpec(Vec::new())
    }

    pub fn factors(&self) -> &[Factor] {
        &self.0
    }

    pub fn contains(&self, factor: Factor) -> bool {
        self.0.contains(&factor)
    }

    pub fn n_columns(&self) -> usize {
        1 + self
            .0
            .iter()
            .map(|f| match f {
                Factor::Month => 11,
                Factor::DayOfWeek => DOW_LEVELS.len(),
                _ => 1,
            })
            .sum::<usize>()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_owned()];
        for f in &self.0 {
            match f {
                Factor::Month => names.extend(MONTH_NAMES[1..].iter().map(|m| format!("month_{m}"))),
                Factor::DayOfWeek => names.extend(DOW_LEVELS.iter().map(|d| format!("dow_{}", d.to_string().to_lowercase()))),
                other => names.push(other.to_string()),
            }
        }
        names
    }

    pub fn encode(&self, meta: &DayMeta) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_columns());
        x.push(1.0);
        for f in &self.0 {
            match f {
                Factor::Weekday => x.push(flag(meta.is_weekday)),
                Factor::Trend => x.push(meta.days_since_origin as f64),
                Factor::Month => x.extend((2..=12).map(|m| flag(meta.month == m))),
                Factor::DayOfWeek => x.extend(DOW_LEVELS.iter().map(|d| flag(meta.day_of_week == *d))),
                Factor::DayAfterHoliday => x.push(flag(meta.is_day_after_holiday)),
            }
        }
        x
    }

    /// The five nested candidates compared when fitting, from the weekday
    /// flag alone up to trend + month + day-of-week + day-after-holiday.
    pub fn default_candidates() -> Vec<FactorSpec> {
        use Factor::*;
        vec![
            FactorSpec::new([Weekday]),
            FactorSpec::new([Weekday, Trend]),
            FactorSpec::new([Weekday, Trend, Month]),
            FactorSpec::new([Trend, Month, DayOfWeek]),
            FactorSpec::new([Trend, Month, DayOfWeek, DayAfterHoliday]),
        ]
    }
}

impl fmt::Display for FactorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("intercept");
        }
        let parts: Vec<String> = self.0.iter().map(Factor::to_string).collect();
        f.write_str(&parts.join("+"))
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}
