use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Frequency {
    HalfHourly,
    Hourly,
    Daily,
}

impl Frequency {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "30min" | "30T" => Some(Frequency::HalfHourly),
            "H" | "1H" | "h" => Some(Frequency::Hourly),
            "D" | "1D" => Some(Frequency::Daily),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Frequency::HalfHourly => "30min",
            Frequency::Hourly => "H",
            Frequency::Daily => "D",
        }
    }

    pub fn step(self) -> Duration {
        match self {
            Frequency::HalfHourly => Duration::minutes(30),
            Frequency::Hourly => Duration::hours(1),
            Frequency::Daily => Duration::days(1),
        }
    }

    pub fn lags(self) -> &'static [usize] {
        match self {
            Frequency::HalfHourly => &[1, 2, 4, 12, 24, 48],
            Frequency::Hourly => &[1, 24, 168],
            Frequency::Daily => &[1, 7, 14],
        }
    }

    /// Calendar features, each mapped to [-0.5, 0.5] by `value / max - 0.5`.
    pub fn calendar_features(self, ts: NaiveDateTime) -> Vec<f64> {
        let norm = |v: u32, max: f64| v as f64 / max - 0.5;
        let dow = ts.weekday().num_days_from_monday();
        match self {
            Frequency::Hourly => vec![
                norm(ts.hour(), 23.0),
                norm(dow, 6.0),
                norm(ts.day() - 1, 30.0),
            ],
            Frequency::Daily => vec![norm(dow, 6.0)],
            Frequency::HalfHourly => vec![
                norm(ts.minute(), 59.0),
                norm(ts.hour(), 23.0),
                norm(dow, 6.0),
            ],
        }
    }

    pub fn calendar_width(self) -> usize {
        match self {
            Frequency::Daily => 1,
            Frequency::Hourly | Frequency::HalfHourly => 3,
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Real,
    Count,
}

/// D aligned series on a shared regular timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub start: NaiveDateTime,
    pub freq: Frequency,
    /// `values[i][t]`: dimension `i` at step `t`.
    pub values: Vec<Vec<f64>>,
    pub domain: Domain,
    /// Categorical id per dimension.
    pub item_ids: Vec<usize>,
    pub prediction_length: Option<usize>,
    /// Real-valued dynamic features, `F x T_dyn` with `T_dyn >= T`. Columns
    /// past `T` are the known future.
    pub dynamic: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    start: String,
    freq: String,
    target: Vec<Vec<f64>>,
    #[serde(default = "default_domain")]
    domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    item_ids: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prediction_length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timestamps: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feat_dynamic_real: Option<Vec<Vec<f64>>>,
}

fn default_domain() -> Domain {
    Domain::Real
}

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    const FORMATS: [&str; 4] = [
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%dT%H:%M",
    ];
    for f in FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%d %H:%M:%S").to_string()
}

impl SeriesDataset {
    pub fn new(
        start: NaiveDateTime,
        freq: Frequency,
        values: Vec<Vec<f64>>,
        domain: Domain,
    ) -> Result<Self> {
        let d = values.len();
        let ds = Self {
            start,
            freq,
            values,
            domain,
            item_ids: (0..d).collect(),
            prediction_length: None,
            dynamic: Vec::new(),
        };
        ds.validate().map_err(Error::Dataset)?;
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cardinality(&self) -> usize {
        self.item_ids.iter().max().map_or(0, |m| m + 1)
    }

    pub fn timestamp(&self, t: usize) -> NaiveDateTime {
        self.start + self.freq.step() * t as i32
    }

    /// Observation at step `t` across all dimensions.
    pub fn row(&self, t: usize) -> Vec<f64> {
        self.values.iter().map(|s| s[t]).collect()
    }

    /// Time-major copy of steps `[start, end)`.
    pub fn time_major(&self, start: usize, end: usize) -> Vec<f64> {
        (start..end)
            .flat_map(|t| self.values.iter().map(move |s| s[t]))
            .collect()
    }

    /// Steps `[start, end)` as a new dataset; dynamic features keep their
    /// tail so future covariates stay available.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InsufficientLength(format!(
                "slice [{start}, {end}) of a series of length {}",
                self.len()
            )));
        }
        Ok(Self {
            start: self.timestamp(start),
            values: self.values.iter().map(|s| s[start..end].to_vec()).collect(),
            dynamic: self.dynamic.iter().map(|f| f[start..].to_vec()).collect(),
            ..self.clone()
        })
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.values.is_empty() {
            return Err("target has no series".into());
        }
        let t = self.values[0].len();
        if t == 0 {
            return Err("series are empty".into());
        }
        for (i, s) in self.values.iter().enumerate() {
            if s.len() != t {
                return Err(format!(
                    "ragged series: series 0 has {t} steps but series {i} has {}",
                    s.len()
                ));
            }
            if let Some(v) = s.iter().find(|v| !v.is_finite()) {
                return Err(format!("series {i} contains non-finite value {v}"));
            }
            if self.domain == Domain::Count {
                if let Some(v) = s.iter().find(|v| **v < 0.0 || v.fract() != 0.0) {
                    return Err(format!(
                        "count series {i} contains non-integer or negative value {v}"
                    ));
                }
            }
        }
        if self.item_ids.len() != self.values.len() {
            return Err(format!(
                "{} item ids for {} series",
                self.item_ids.len(),
                self.values.len()
            ));
        }
        for (k, f) in self.dynamic.iter().enumerate() {
            if f.len() < t {
                return Err(format!(
                    "dynamic feature {k} has {} steps, fewer than the target's {t}",
                    f.len()
                ));
            }
            if f.len() != self.dynamic[0].len() {
                return Err(format!(
                    "ragged dynamic features: feature {k} has {} steps",
                    f.len()
                ));
            }
        }
        if self.prediction_length == Some(0) {
            return Err("prediction_length must be positive".into());
        }
        Ok(())
    }

    /// Parse one JSON record; `line` is used for error reporting.
    pub fn from_json(text: &str, path: &str, line: usize) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.into(),
            line,
            message,
        };
        let rec: Record = serde_json::from_str(text)
            .map_err(|e| err(line + e.line().saturating_sub(1), e.to_string()))?;
        let freq = Frequency::parse(&rec.freq).ok_or_else(|| {
            err(
                line,
                format!(
                    "unknown frequency {:?}; expected one of 30min, H, D",
                    rec.freq
                ),
            )
        })?;
        let start = parse_timestamp(&rec.start)
            .ok_or_else(|| err(line, format!("bad start timestamp {:?}", rec.start)))?;
        let d = rec.target.len();
        let ds = Self {
            start,
            freq,
            values: rec.target,
            domain: rec.domain,
            item_ids: rec.item_ids.unwrap_or_else(|| (0..d).collect()),
            prediction_length: rec.prediction_length,
            dynamic: rec.feat_dynamic_real.unwrap_or_default(),
        };
        ds.validate().map_err(|m| err(line, m))?;
        if let Some(ts) = rec.timestamps {
            if ts.len() != ds.len() {
                return Err(err(
                    line,
                    format!("{} timestamps for {} steps", ts.len(), ds.len()),
                ));
            }
            let mut prev: Option<NaiveDateTime> = None;
            for (k, s) in ts.iter().enumerate() {
                let t =
                    parse_timestamp(s).ok_or_else(|| err(line, format!("bad timestamp {s:?}")))?;
                if let Some(p) = prev {
                    if t <= p {
                        return Err(err(
                            line,
                            format!(
                                "non-monotone timeline at step {k}: {s} follows {}",
                                format_timestamp(p)
                            ),
                        ));
                    }
                }
                if t != ds.timestamp(k) {
                    return Err(err(
                        line,
                        format!("timestamp {s} at step {k} is off the {} grid", freq),
                    ));
                }
                prev = Some(t);
            }
        }
        Ok(ds)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let name = path.to_path_buf();
        let mut found = None;
        for (k, l) in text.lines().enumerate() {
            if l.trim().is_empty() {
                continue;
            }
            if found.is_some() {
                return Err(Error::Parse {
                    path: name.clone(),
                    line: k + 1,
                    message: "expected exactly one dataset record".into(),
                });
            }
            found = Some(Self::from_json(l, &path.display().to_string(), k + 1)?);
        }
        found.ok_or(Error::Parse {
            path: name.clone(),
            line: 1,
            message: "file contains no dataset record".into(),
        })
    }

    pub fn to_json(&self) -> String {
        let rec = Record {
            start: format_timestamp(self.start),
            freq: self.freq.as_str().to_string(),
            target: self.values.clone(),
            domain: self.domain,
            item_ids: Some(self.item_ids.clone()),
            prediction_length: self.prediction_length,
            timestamps: None,
            feat_dynamic_real: (!self.dynamic.is_empty()).then(|| self.dynamic.clone()),
        };
        serde_json::to_string(&rec).expect("dataset serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json() + "\n")?;
        Ok(())
    }
}
