use chrono::{Datelike, NaiveDateTime, TimeDelta, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DEFAULT_CALENDAR_ORIGIN: &str = "2024-01-01T00:00:00";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TodBucket {
    /// 16:00 up to midnight.
    Evening,
    /// Midnight up to 08:00.
    Night,
    /// 08:00 up to 16:00.
    Day,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DayKind {
    Weekday,
    Weekend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Context {
    pub tod: TodBucket,
    pub day: DayKind,
}

impl Context {
    pub const ALL: [Context; 6] = [
        Context { tod: TodBucket::Evening, day: DayKind::Weekday },
        Context { tod: TodBucket::Night, day: DayKind::Weekday },
        Context { tod: TodBucket::Day, day: DayKind::Weekday },
        Context { tod: TodBucket::Evening, day: DayKind::Weekend },
        Context { tod: TodBucket::Night, day: DayKind::Weekend },
        Context { tod: TodBucket::Day, day: DayKind::Weekend },
    ];
}

impl std::fmt::Display for Context {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tod = match self.tod {
            TodBucket::Evening => "16-24",
            TodBucket::Night => "0-8",
            TodBucket::Day => "8-16",
        };
        let day = match self.day {
            DayKind::Weekday => "weekday",
            DayKind::Weekend => "weekend",
        };
        write!(f, "{tod}/{day}")
    }
}

pub fn parse_origin(s: &str) -> Result<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .map_err(|e| Error::invalid("calendar_origin", format!("`{s}`: {e}")))
}

/// Context in effect `sim_time` seconds after `origin`.
pub fn context_of(sim_time: f64, origin: NaiveDateTime) -> Context {
    let t = sim_time.max(0.0);
    let secs = t.floor();
    let nanos = ((t - secs) * 1e9) as u32;
    let now = TimeDelta::new(secs as i64, nanos.min(999_999_999))
        .and_then(|d| origin.checked_add_signed(d))
        .unwrap_or(origin);
    let tod = match now.hour() {
        0..=7 => TodBucket::Night,
        8..=15 => TodBucket::Day,
        _ => TodBucket::Evening,
    };
    let day = match now.weekday() {
        Weekday::Sat | Weekday::Sun => DayKind::Weekend,
        _ => DayKind::Weekday,
    };
    Context { tod, day }
}
