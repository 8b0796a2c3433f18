//! File formats and command-line value syntaxes.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{GmError, Result};
use crate::feasible::FeasibleSet;
use crate::model::{GmModel, RawModel};

/// Parse and validate a model from its JSON text.
pub fn parse_model_json(text: &str) -> Result<GmModel> {
    let raw: RawModel = serde_json::from_str(text)?;
    GmModel::from_raw(&raw)
}

pub fn model_to_json(model: &GmModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&model.to_raw())?)
}

/// Return history: asset names from the header and one row per period.
#[derive(Debug, Clone, PartialEq)]
pub struct Returns {
    pub assets: Vec<String>,
    pub data: DMatrix<f64>,
}

/// Parse a returns CSV. Errors carry the 1-based line number.
pub fn parse_returns_csv(text: &str) -> Result<Returns> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let assets: Vec<String> = reader
        .headers()
        .map_err(|e| GmError::parse(1, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    if assets.is_empty() || assets.iter().all(String::is_empty) {
        return Err(GmError::parse(1, "missing header row"));
    }
    let n = assets.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            GmError::parse(line, e.to_string())
        })?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != n {
            return Err(GmError::parse(line, format!("expected {n} fields, found {}", record.len())));
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| GmError::parse(line, format!("'{field}' is not a number")))?;
            if !v.is_finite() {
                return Err(GmError::parse(line, format!("non-finite return '{field}'")));
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(GmError::parse(2, "no return rows"));
    }
    Ok(Returns {
        assets,
        data: DMatrix::from_row_slice(rows, n, &values),
    })
}

fn parse_bound(s: &str, default: f64) -> std::result::Result<f64, String> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(default);
    }
    s.parse::<f64>()
        .map_err(|_| format!("'{s}' is not a number"))
        .and_then(|v| if v.is_nan() { Err("NaN bound".into()) } else { Ok(v) })
}

/// Parse a bounds spec: either one `lower:upper` pair applied to every asset
/// or a comma-separated pair per asset. Either side may be left empty for no
/// bound, e.g. `0:` for long-only.
pub fn parse_bounds(spec: &str, n: usize) -> Result<FeasibleSet> {
    let pairs: Vec<&str> = spec.split(',').collect();
    if pairs.len() != 1 && pairs.len() != n {
        return Err(GmError::parse(
            1,
            format!("bounds list has {} pairs, expected 1 or {n}", pairs.len()),
        ));
    }
    let mut lower = Vec::with_capacity(pairs.len());
    let mut upper = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let (lo, hi) = pair
            .split_once(':')
            .ok_or_else(|| GmError::parse(1, format!("bound '{pair}' is not of the form lower:upper")))?;
        lower.push(parse_bound(lo, f64::NEG_INFINITY).map_err(|m| GmError::parse(1, m))?);
        upper.push(parse_bound(hi, f64::INFINITY).map_err(|m| GmError::parse(1, m))?);
    }
    if pairs.len() == 1 {
        lower = vec![lower[0]; n];
        upper = vec![upper[0]; n];
    }
    let lower = lower.iter().any(|v| v.is_finite()).then_some(lower);
    let upper = upper.iter().any(|v| v.is_finite()).then_some(upper);
    FeasibleSet::with_bounds(n, lower, upper)
}

/// Evenly spaced evaluation grid, `start:stop:steps` with `steps ≥ 2`
/// points including both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let h = (self.stop - self.start) / (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| if i + 1 == self.steps { self.stop } else { self.start + h * i as f64 })
            .collect()
    }
}

/// Hard cap on grid size so a typo cannot allocate unbounded memory.
pub const MAX_GRID_STEPS: usize = 10_000_000;

pub fn parse_grid(spec: &str) -> Result<GridSpec> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let [start, stop, steps] = parts.as_slice() else {
        return Err(GmError::parse(1, format!("grid '{spec}' is not start:stop:steps")));
    };
    let start: f64 = start.parse().map_err(|_| GmError::parse(1, format!("bad grid start '{start}'")))?;
    let stop: f64 = stop.parse().map_err(|_| GmError::parse(1, format!("bad grid stop '{stop}'")))?;
    let steps: usize = steps.parse().map_err(|_| GmError::parse(1, format!("bad grid steps '{steps}'")))?;
    if !start.is_finite() || !stop.is_finite() || !(start < stop) {
        return Err(GmError::parse(1, "grid needs finite start < stop"));
    }
    if !(2..=MAX_GRID_STEPS).contains(&steps) {
        return Err(GmError::parse(1, format!("grid steps must be in 2..={MAX_GRID_STEPS}")));
    }
    Ok(GridSpec { start, stop, steps })
}

/// Parse a comma-separated weight vector.
pub fn parse_weights(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| GmError::parse(1, format!("weight '{s}' is not a finite number")))
        })
        .collect()
}

/// Two-column CSV `a,cdf`.
pub fn write_cdf_csv<W: Write>(out: W, rows: &[(f64, f64)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["a", "cdf"]).map_err(csv_io)?;
    for (a, p) in rows {
        wtr.write_record([format!("{a}"), format!("{p}")]).map_err(csv_io)?;
    }
    wtr.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> GmError {
    GmError::Io(std::io::Error::other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_json_round_trip() {
        let text = r#"{"n":2,"k":1,"weights":[1.0],"means":[[0.1,0.2]],
            "covariances":[[[1.0,0.5],[0.5,2.0]]]}"#;
        let m = parse_model_json(text).unwrap();
        assert_eq!(m.covariances()[0][(0, 1)], 0.5);
        let back = parse_model_json(&model_to_json(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn model_json_errors() {
        assert!(parse_model_json("{").is_err());
        assert!(parse_model_json(r#"{"n":2,"k":1,"weights":[1.0],"means":[[0.1]],"covariances":[[[1.0]]]}"#).is_err());
    }

    #[test]
    fn returns_csv() {
        let r = parse_returns_csv("A,B\n0.01,0.02\n-0.01,0.00\n").unwrap();
        assert_eq!(r.assets, vec!["A", "B"]);
        assert_eq!(r.data.shape(), (2, 2));
        assert_eq!(r.data[(1, 0)], -0.01);
    }

    #[test]
    fn malformed_row_reports_line() {
        match parse_returns_csv("A,B\n0.01,0.02\n0.3,abc\n") {
            Err(GmError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_returns_csv("A,B\n0.01,0.02\n0.01,0.02\n0.3\n") {
            Err(GmError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(parse_returns_csv("A,B\n").is_err());
    }

    #[test]
    fn bounds_specs() {
        let s = parse_bounds("0:", 3).unwrap();
        assert_eq!(s.lower(), Some(&[0.0, 0.0, 0.0][..]));
        assert_eq!(s.upper(), None);
        let s = parse_bounds("0:0.5,0.1:1,:", 3).unwrap();
        assert_eq!(s.upper_at(0), 0.5);
        assert_eq!(s.lower_at(2), f64::NEG_INFINITY);
        assert!(parse_bounds("0:1,0:1", 3).is_err());
        assert!(parse_bounds("0.6:", 2).is_err());
        assert!(parse_bounds("x:1", 2).is_err());
        assert!(parse_bounds("01", 2).is_err());
        let free = parse_bounds(":", 2).unwrap();
        assert!(!free.is_boxed());
    }

    #[test]
    fn grid_specs() {
        let g = parse_grid("-1:1:5").unwrap();
        assert_eq!(g.points(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(parse_grid("1:0:5").is_err());
        assert!(parse_grid("0:1:1").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("0:nan:3").is_err());
    }

    #[test]
    fn cdf_csv_layout() {
        let mut buf = Vec::new();
        write_cdf_csv(&mut buf, &[(0.0, 0.5), (1.0, 0.75)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,cdf\n0,0.5\n1,0.75\n");
    }
}
