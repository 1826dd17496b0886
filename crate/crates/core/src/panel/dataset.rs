//! Balanced long-format panels and their CSV representation.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Observations for one unit, rows ordered by time.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitSeries {
    pub y: DVector<f64>,
    /// `T x p` regressors.
    pub x: DMatrix<f64>,
    /// `T x q` instruments, when present.
    pub z: Option<DMatrix<f64>>,
}

/// Balanced panel: every unit is observed at the same `times`.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    units: Vec<String>,
    times: Vec<i64>,
    regressor_names: Vec<String>,
    instrument_names: Vec<String>,
    series: Vec<UnitSeries>,
}

/// Column mapping for [`load_panel`].
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSchema {
    pub unit: String,
    pub time: String,
    pub y: String,
    pub regressors: Vec<String>,
    pub instruments: Vec<String>,
}

impl PanelSchema {
    /// Standard layout `unit,time,y,x1..xp[,z1..zq]`.
    pub fn infer(header: &[String]) -> Result<Self> {
        let numbered = |prefix: char| -> Vec<String> {
            let mut cols: Vec<(usize, String)> = header
                .iter()
                .filter_map(|h| {
                    let rest = h.strip_prefix(prefix)?;
                    rest.parse::<usize>().ok().map(|n| (n, h.clone()))
                })
                .collect();
            cols.sort();
            cols.into_iter().map(|(_, h)| h).collect()
        };
        for required in ["unit", "time", "y"] {
            if !header.iter().any(|h| h == required) {
                return Err(Error::Parse {
                    line: 1,
                    message: format!("missing required column {required:?}"),
                });
            }
        }
        let regressors = numbered('x');
        if regressors.is_empty() {
            return Err(Error::Parse {
                line: 1,
                message: "no regressor columns x1..xp".into(),
            });
        }
        Ok(Self {
            unit: "unit".into(),
            time: "time".into(),
            y: "y".into(),
            regressors,
            instruments: numbered('z'),
        })
    }
}

impl PanelDataset {
    /// Assembles a panel from per-unit series, enforcing balance, shape and
    /// identifiability invariants.
    pub fn new(
        units: Vec<String>,
        times: Vec<i64>,
        regressor_names: Vec<String>,
        instrument_names: Vec<String>,
        series: Vec<UnitSeries>,
    ) -> Result<Self> {
        let t = times.len();
        let p = regressor_names.len();
        let q = instrument_names.len();
        if units.len() != series.len() {
            return Err(Error::InvalidArgument(format!(
                "{} unit ids for {} series",
                units.len(),
                series.len()
            )));
        }
        if p == 0 {
            return Err(Error::InvalidArgument("panel needs at least one regressor".into()));
        }
        if t < p + 1 {
            return Err(Error::InvalidArgument(format!(
                "T = {t} is too short for p = {p} regressors"
            )));
        }
        if q > 0 && q < p {
            return Err(Error::InvalidArgument(format!(
                "{q} instruments cannot identify {p} regressors"
            )));
        }
        for (id, s) in units.iter().zip(&series) {
            let shape_ok = s.y.len() == t
                && s.x.shape() == (t, p)
                && match &s.z {
                    Some(z) => q > 0 && z.shape() == (t, q),
                    None => q == 0,
                };
            if !shape_ok {
                return Err(Error::UnbalancedPanel {
                    unit: id.clone(),
                    detail: format!("does not have {t} complete rows"),
                });
            }
            let finite = s.y.iter().chain(s.x.iter()).chain(s.z.iter().flat_map(|z| z.iter()));
            if finite.into_iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("non-finite value for unit {id}"),
                });
            }
            for (j, name) in regressor_names.iter().enumerate() {
                let col = s.x.column(j);
                let mean = col.mean();
                let spread = col.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
                if spread <= 1e-12 * mean.abs().max(1.0) {
                    return Err(Error::DegenerateRegressor {
                        unit: id.clone(),
                        column: name.clone(),
                    });
                }
            }
        }
        Ok(Self {
            units,
            times,
            regressor_names,
            instrument_names,
            series,
        })
    }

    pub fn n(&self) -> usize {
        self.series.len()
    }

    pub fn t(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.regressor_names.len()
    }

    pub fn q(&self) -> usize {
        self.instrument_names.len()
    }

    pub fn has_instruments(&self) -> bool {
        self.q() > 0
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn regressor_names(&self) -> &[String] {
        &self.regressor_names
    }

    pub fn instrument_names(&self) -> &[String] {
        &self.instrument_names
    }

    pub fn series(&self) -> &[UnitSeries] {
        &self.series
    }

    /// Writes the standard CSV layout.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["unit".to_string(), "time".to_string(), "y".to_string()];
        header.extend(self.regressor_names.iter().cloned());
        header.extend(self.instrument_names.iter().cloned());
        w.write_record(&header).map_err(csv_io)?;
        for (id, s) in self.units.iter().zip(&self.series) {
            for (r, time) in self.times.iter().enumerate() {
                let mut row = vec![id.clone(), time.to_string(), fmt_num(s.y[r])];
                row.extend(s.x.row(r).iter().map(|v| fmt_num(*v)));
                if let Some(z) = &s.z {
                    row.extend(z.row(r).iter().map(|v| fmt_num(*v)));
                }
                w.write_record(&row).map_err(csv_io)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt_num(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v:?}")
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

struct RawRow {
    time: i64,
    y: f64,
    x: Vec<f64>,
    z: Vec<f64>,
    line: usize,
}

/// Reads a long-format CSV panel. Units are ordered numerically when every id
/// parses as an integer and lexicographically otherwise; rows within a unit
/// are ordered by time.
pub fn load_panel<R: Read>(source: R, schema: Option<&PanelSchema>) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let schema = match schema {
        Some(s) => s.clone(),
        None => PanelSchema::infer(&header)?,
    };
    let index_of = |name: &str| -> Result<usize> {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let unit_col = index_of(&schema.unit)?;
    let time_col = index_of(&schema.time)?;
    let y_col = index_of(&schema.y)?;
    let x_cols = schema.regressors.iter().map(|c| index_of(c)).collect::<Result<Vec<_>>>()?;
    let z_cols = schema.instruments.iter().map(|c| index_of(c)).collect::<Result<Vec<_>>>()?;

    let mut by_unit: BTreeMap<String, Vec<RawRow>> = BTreeMap::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |c: usize| -> Result<&str> {
            record.get(c).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing field in column {}", header[c]),
            })
        };
        let number = |c: usize| -> Result<f64> {
            let raw = field(c)?;
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Parse {
                line,
                message: format!("column {}: cannot parse {raw:?} as a finite number", header[c]),
            })
        };
        let unit = field(unit_col)?.to_string();
        let time_raw = field(time_col)?;
        let time = time_raw.parse::<i64>().map_err(|_| Error::Parse {
            line,
            message: format!("column {}: cannot parse {time_raw:?} as an integer", header[time_col]),
        })?;
        let row = RawRow {
            time,
            y: number(y_col)?,
            x: x_cols.iter().map(|&c| number(c)).collect::<Result<_>>()?,
            z: z_cols.iter().map(|&c| number(c)).collect::<Result<_>>()?,
            line,
        };
        by_unit.entry(unit).or_default().push(row);
    }
    if by_unit.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no observations".into(),
        });
    }

    let mut ids: Vec<String> = by_unit.keys().cloned().collect();
    if ids.iter().all(|id| id.parse::<i64>().is_ok()) {
        ids.sort_by_key(|id| id.parse::<i64>().unwrap());
    }

    let mut times: Option<Vec<i64>> = None;
    let p = x_cols.len();
    let q = z_cols.len();
    let mut series = Vec::with_capacity(ids.len());
    for id in &ids {
        let rows = by_unit.get_mut(id).expect("unit key present");
        rows.sort_by_key(|r| r.time);
        if let Some(w) = rows.windows(2).find(|w| w[0].time == w[1].time) {
            return Err(Error::UnbalancedPanel {
                unit: id.clone(),
                detail: format!("has duplicate period {} (line {})", w[1].time, w[1].line),
            });
        }
        let unit_times: Vec<i64> = rows.iter().map(|r| r.time).collect();
        match &times {
            None => times = Some(unit_times),
            Some(reference) if *reference != unit_times => {
                let missing: Vec<i64> = reference.iter().filter(|t| !unit_times.contains(t)).copied().collect();
                let extra: Vec<i64> = unit_times.iter().filter(|t| !reference.contains(t)).copied().collect();
                let detail = if !missing.is_empty() {
                    format!("is missing period(s) {missing:?}")
                } else {
                    format!("has extra period(s) {extra:?}")
                };
                return Err(Error::UnbalancedPanel {
                    unit: id.clone(),
                    detail,
                });
            }
            Some(_) => {}
        }
        let t = rows.len();
        let y = DVector::from_iterator(t, rows.iter().map(|r| r.y));
        let x = DMatrix::from_fn(t, p, |r, c| rows[r].x[c]);
        let z = (q > 0).then(|| DMatrix::from_fn(t, q, |r, c| rows[r].z[c]));
        series.push(UnitSeries { y, x, z });
    }

    PanelDataset::new(
        ids,
        times.unwrap_or_default(),
        schema.regressors.clone(),
        schema.instruments.clone(),
        series,
    )
}
