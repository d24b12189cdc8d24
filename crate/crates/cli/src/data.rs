//! Observation tables: delimited text with a `series,time,value` header,
//! optional `trials` column and any number of predictor columns.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use dglm_core::ObsSlot;

use crate::error::{CliError, Result};

pub const TRIALS_COLUMN: &str = "trials";
const REQUIRED: [&str; 3] = ["series", "time", "value"];

/// One series on a contiguous time range.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesData {
    pub start: i64,
    pub values: Vec<Option<f64>>,
    pub trials: Vec<Option<u64>>,
    /// Predictor columns in header order; `NaN` where the cell was empty.
    pub predictors: Vec<Vec<f64>>,
}

impl SeriesData {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end(&self) -> i64 {
        self.start + self.values.len() as i64
    }

    fn offset(&self, time: i64) -> Option<usize> {
        (time >= self.start && time < self.end()).then(|| (time - self.start) as usize)
    }

    pub fn slot(&self, time: i64) -> ObsSlot {
        match self.offset(time) {
            Some(i) => ObsSlot {
                value: self.values[i],
                trials: self.trials[i],
            },
            None => ObsSlot::missing(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationTable {
    pub predictor_names: Vec<String>,
    pub series: BTreeMap<String, SeriesData>,
}

struct Row {
    line: u64,
    time: i64,
    value: Option<f64>,
    trials: Option<u64>,
    predictors: Vec<f64>,
}

fn missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan")
}

impl ObservationTable {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| CliError::Data(format!("header: {e}")))?
            .clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[..3] != REQUIRED {
            return Err(CliError::Data(format!(
                "line 1: header must start with series,time,value (got {})",
                cols.join(",")
            )));
        }
        let trials_col = cols.iter().position(|c| *c == TRIALS_COLUMN);
        let pred_cols: Vec<usize> = (3..cols.len()).filter(|&i| Some(i) != trials_col).collect();
        let predictor_names: Vec<String> = pred_cols.iter().map(|&i| cols[i].to_string()).collect();
        for (i, name) in predictor_names.iter().enumerate() {
            if predictor_names[..i].contains(name) || name.is_empty() {
                return Err(CliError::Data(format!("line 1: bad or repeated column name {name:?}")));
            }
        }

        let mut rows: BTreeMap<String, Vec<Row>> = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            let err = |what: String| CliError::Data(format!("line {line}: {what}"));
            let series = rec[0].to_string();
            if series.is_empty() {
                return Err(err("empty series id".into()));
            }
            let time: i64 = rec[1]
                .parse()
                .map_err(|_| err(format!("time {:?} is not an integer", &rec[1])))?;
            let value = if missing(&rec[2]) {
                None
            } else {
                let v: f64 = rec[2]
                    .parse()
                    .map_err(|_| err(format!("value {:?} is not a number", &rec[2])))?;
                if !v.is_finite() {
                    return Err(err(format!("value {v} is not finite")));
                }
                Some(v)
            };
            let trials = match trials_col {
                Some(c) if !missing(&rec[c]) => Some(
                    rec[c]
                        .parse::<u64>()
                        .map_err(|_| err(format!("trials {:?} is not a count", &rec[c])))?,
                ),
                _ => None,
            };
            let predictors = pred_cols
                .iter()
                .map(|&c| {
                    if missing(&rec[c]) {
                        Ok(f64::NAN)
                    } else {
                        rec[c]
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| err(format!("{} {:?} is not a finite number", cols[c], &rec[c])))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.entry(series).or_default().push(Row {
                line,
                time,
                value,
                trials,
                predictors,
            });
        }

        let mut series = BTreeMap::new();
        for (name, mut rs) in rows {
            rs.sort_by_key(|r| (r.time, r.line));
            for w in rs.windows(2) {
                if w[0].time == w[1].time {
                    return Err(CliError::Data(format!(
                        "line {}: duplicate row for series {name} at time {} (first on line {})",
                        w[1].line, w[1].time, w[0].line
                    )));
                }
                if w[1].time != w[0].time + 1 {
                    return Err(CliError::Data(format!(
                        "line {}: series {name} jumps from time {} to {}; times must be contiguous",
                        w[1].line, w[0].time, w[1].time
                    )));
                }
            }
            let start = rs[0].time;
            let mut predictors = vec![Vec::with_capacity(rs.len()); pred_cols.len()];
            for r in &rs {
                for (col, v) in predictors.iter_mut().zip(&r.predictors) {
                    col.push(*v);
                }
            }
            series.insert(
                name,
                SeriesData {
                    start,
                    values: rs.iter().map(|r| r.value).collect(),
                    trials: rs.iter().map(|r| r.trials).collect(),
                    predictors,
                },
            );
        }
        Ok(Self {
            predictor_names,
            series,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.series.values().map(SeriesData::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn get(&self, name: &str) -> Result<&SeriesData> {
        self.series
            .get(name)
            .ok_or_else(|| CliError::Data(format!("series {name} is not in the data")))
    }

    pub fn predictor_index(&self, name: &str) -> Result<usize> {
        self.predictor_names
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| CliError::Data(format!("no predictor column named {name}")))
    }

    /// Write in the same format, rows ordered by series then time.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> std::io::Result<()> {
        let has_trials = self.series.values().any(|s| s.trials.iter().any(Option::is_some));
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = REQUIRED.to_vec();
        if has_trials {
            header.push(TRIALS_COLUMN);
        }
        header.extend(self.predictor_names.iter().map(String::as_str));
        wtr.write_record(&header)?;
        for (name, s) in &self.series {
            for i in 0..s.len() {
                let mut rec = vec![name.clone(), (s.start + i as i64).to_string()];
                rec.push(s.values[i].map_or(String::new(), fmt_value));
                if has_trials {
                    rec.push(s.trials[i].map_or(String::new(), |n| n.to_string()));
                }
                for col in &s.predictors {
                    rec.push(if col[i].is_nan() { String::new() } else { fmt_value(col[i]) });
                }
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush()
    }
}

/// Integers print without a fraction; everything else round-trips.
fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ObservationTable> {
        ObservationTable::from_reader(s.as_bytes())
    }

    #[test]
    fn empty_data_section_is_empty_table() {
        let t = parse("series,time,value,promo\n").unwrap();
        assert!(t.is_empty());
        assert_eq!(t.predictor_names, vec!["promo"]);
    }

    #[test]
    fn duplicate_key_is_named() {
        let err = parse("series,time,value\na,1,2\na,2,3\na,1,4\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("series a at time 1"), "{msg}");
        assert!(msg.contains("line 4"), "{msg}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn gaps_and_bad_cells_report_lines() {
        let msg = parse("series,time,value\na,1,2\na,3,3\n").unwrap_err().to_string();
        assert!(msg.contains("contiguous") && msg.contains("line 3"), "{msg}");
        let msg = parse("series,time,value\na,1,x\n").unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
        let msg = parse("time,series,value\n").unwrap_err().to_string();
        assert!(msg.contains("header"), "{msg}");
    }

    #[test]
    fn n_series_by_t_times() {
        let mut s = String::from("series,time,value,trials,x\n");
        for name in ["b", "a", "c"] {
            for t in (0..5).rev() {
                s.push_str(&format!("{name},{t},{t},9,{}\n", t as f64 * 0.5));
            }
        }
        let t = parse(&s).unwrap();
        assert_eq!(t.n_rows(), 15);
        assert_eq!(t.series.len(), 3);
        let a = t.get("a").unwrap();
        assert_eq!(a.start, 0);
        assert_eq!(a.values[4], Some(4.0));
        assert_eq!(a.trials[0], Some(9));
        assert_eq!(a.predictors[0][3], 1.5);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(parse(std::str::from_utf8(&out).unwrap()).unwrap(), t);
    }

    #[test]
    fn missing_values_are_slots() {
        let t = parse("series,time,value\na,0,\na,1,NA\na,2,3\n").unwrap();
        let a = t.get("a").unwrap();
        assert_eq!(a.slot(0), ObsSlot::missing());
        assert_eq!(a.slot(1), ObsSlot::missing());
        assert_eq!(a.slot(2), ObsSlot::observed(3.0));
        assert_eq!(a.slot(7), ObsSlot::missing());
    }
}
