use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{DataError, Dataset, ExogenousInput, TestKind, Theta, ThirdKind, TriaxSeries};

/// Column order of the dataset CSV, one row per step.
pub const CSV_COLUMNS: [&str; 13] = [
    "test_id",
    "kind",
    "sigma3_kpa",
    "e0",
    "step",
    "eps",
    "deps",
    "delta",
    "cycle",
    "p_kpa",
    "q_kpa",
    "third_value",
    "third_kind",
];

pub fn save_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_csv(ds, std::io::BufWriter::new(file))
}

pub fn write_csv<W: Write>(ds: &Dataset, out: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for s in &ds.series {
        s.validate()?;
        for (t, state) in s.states.iter().enumerate() {
            let u = if t == 0 {
                ExogenousInput::default()
            } else {
                s.inputs[t - 1]
            };
            // `{}` on f64 prints the shortest representation that parses back
            // to the same value.
            w.write_record(&[
                s.test_id.clone(),
                s.kind.as_str().to_string(),
                s.theta.sigma3.to_string(),
                s.theta.e0.to_string(),
                t.to_string(),
                u.eps.to_string(),
                u.deps.to_string(),
                u.delta.to_string(),
                u.cycle.to_string(),
                state[0].to_string(),
                state[1].to_string(),
                state[2].to_string(),
                s.kind.third_kind().as_str().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file))
}

pub fn read_csv<R: Read>(input: R) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut col = HashMap::new();
    for name in CSV_COLUMNS {
        let idx = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))?;
        col.insert(name, idx);
    }

    let mut series: Vec<TriaxSeries> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |name: &str| rec.get(col[name]).unwrap_or("").trim();
        let num = |name: &str| -> Result<f64, DataError> {
            let raw = field(name);
            raw.parse::<f64>().map_err(|_| DataError::Row {
                line,
                msg: format!("column `{name}`: cannot parse `{raw}` as a number"),
            })
        };
        let row_err = |msg: String| DataError::Row { line, msg };

        let id = field("test_id").to_string();
        if id.is_empty() {
            return Err(row_err("empty test_id".into()));
        }
        let kind = TestKind::parse(field("kind"))
            .ok_or_else(|| row_err(format!("unknown kind `{}`", field("kind"))))?;
        let third = ThirdKind::parse(field("third_kind"))
            .ok_or_else(|| row_err(format!("unknown third_kind `{}`", field("third_kind"))))?;
        if third != kind.third_kind() {
            return Err(row_err(format!(
                "third_kind `{}` does not match kind `{}`",
                third.as_str(),
                kind
            )));
        }
        let step: usize = field("step")
            .parse()
            .map_err(|_| row_err(format!("bad step `{}`", field("step"))))?;
        let theta = Theta {
            sigma3: num("sigma3_kpa")?,
            e0: num("e0")?,
        };
        let state = [num("p_kpa")?, num("q_kpa")?, num("third_value")?];
        let input = ExogenousInput {
            eps: num("eps")?,
            deps: num("deps")?,
            delta: num("delta")?,
            cycle: num("cycle")?,
        };

        let slot = match index.get(&id) {
            Some(&i) => i,
            None => {
                if step != 0 {
                    return Err(row_err(format!("series `{id}` must start at step 0")));
                }
                index.insert(id.clone(), series.len());
                series.push(TriaxSeries {
                    test_id: id.clone(),
                    kind,
                    theta,
                    states: Vec::new(),
                    inputs: Vec::new(),
                });
                series.len() - 1
            }
        };
        let s = &mut series[slot];
        if s.kind != kind || s.theta != theta {
            return Err(row_err(format!("series `{id}` changes kind or test constants")));
        }
        if step != s.states.len() {
            return Err(row_err(format!(
                "series `{id}`: expected step {}, found {step}",
                s.states.len()
            )));
        }
        s.states.push(state);
        if step > 0 {
            s.inputs.push(input);
        }
    }
    let ds = Dataset::new(series);
    ds.common_steps()?;
    Ok(ds)
}
