use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::Serialize;
use serde_json::json;

use rbnn_core::datapipe::{Dataset, NormStats, State};
use rbnn_core::evalkit::{MetricReport, TestPrediction};

use crate::io::{coded, read_json, require_file, write_atomic, write_json, Manifest, EXIT_CONFIG, EXIT_MISMATCH};
use crate::predict::{channel_names, PRED_COLUMNS};
use crate::prep::load_dataset;

#[derive(Default)]
struct Partial {
    mean: Vec<State>,
    var: Vec<State>,
    epi: Vec<State>,
    seen: Vec<[bool; 3]>,
}

fn grow(v: &mut Vec<State>, n: usize) {
    if v.len() < n {
        v.resize(n, [f64::NAN; 3]);
    }
}

/// Reads a prediction CSV and aligns it with the dataset's truth.
fn read_predictions(path: &Path, ds: &Dataset) -> Result<Vec<TestPrediction>> {
    require_file(path)?;
    let names = channel_names(ds)?;
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let probabilistic = match header.len() {
        4 if header == PRED_COLUMNS[..4] => false,
        8 if header == PRED_COLUMNS => true,
        _ => return Err(coded(EXIT_CONFIG, format!("{}: unexpected columns {header:?}", path.display()))),
    };
    let mut order: Vec<String> = Vec::new();
    let mut parts: HashMap<String, Partial> = HashMap::new();
    let bad = |line: u64, msg: &str| coded(EXIT_CONFIG, format!("{} line {line}: {msg}", path.display()));
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let id = rec[0].to_string();
        let step: usize = rec[1].parse().map_err(|_| bad(line, "bad step"))?;
        if step == 0 {
            return Err(bad(line, "steps start at 1"));
        }
        let ch = names
            .iter()
            .position(|n| *n == &rec[2])
            .ok_or_else(|| coded(EXIT_MISMATCH, format!("channel `{}` does not belong to this dataset", &rec[2])))?;
        let num = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(line, "bad number")) };
        if !parts.contains_key(&id) {
            order.push(id.clone());
        }
        let p = parts.entry(id).or_default();
        grow(&mut p.mean, step);
        p.mean[step - 1][ch] = num(3)?;
        if probabilistic {
            grow(&mut p.var, step);
            grow(&mut p.epi, step);
            p.var[step - 1][ch] = num(4)?;
            p.epi[step - 1][ch] = num(7)?;
        }
        if p.seen.len() < step {
            p.seen.resize(step, [false; 3]);
        }
        p.seen[step - 1][ch] = true;
    }
    if order.is_empty() {
        return Err(coded(EXIT_CONFIG, format!("{}: no predictions", path.display())));
    }
    order
        .into_iter()
        .map(|id| {
            let p = parts.remove(&id).expect("collected above");
            let s = ds
                .get(&id)
                .ok_or_else(|| coded(EXIT_MISMATCH, format!("test `{id}` is not in the dataset")))?;
            if p.seen.len() != s.n_steps() || p.seen.iter().any(|c| c.contains(&false)) {
                return Err(coded(
                    EXIT_MISMATCH,
                    format!("test `{id}`: predictions cover {} of {} steps or miss channels", p.seen.len(), s.n_steps()),
                ));
            }
            Ok(TestPrediction {
                test_id: id,
                mean: p.mean,
                var: probabilistic.then_some(p.var),
                epistemic: probabilistic.then_some(p.epi),
                truth: s.states[1..].to_vec(),
            })
        })
        .collect()
}

fn normalized(preds: &[TestPrediction], ds: &Dataset, ns: &NormStats) -> Result<Vec<TestPrediction>> {
    let mismatch = |e: rbnn_core::datapipe::DataError| coded(EXIT_MISMATCH, format!("normalization stats do not match: {e}"));
    preds
        .iter()
        .map(|p| {
            let s3 = ds.get(&p.test_id).expect("aligned").theta.sigma3;
            let sc = ns.channel_scales(s3).map_err(mismatch)?;
            let st = |v: &[State]| -> Result<Vec<State>> { v.iter().map(|x| ns.normalize_state(s3, x).map_err(mismatch)).collect() };
            let var = |v: &[State]| -> Vec<State> { v.iter().map(|x| [0, 1, 2].map(|c| x[c] / (sc[c] * sc[c]))).collect() };
            Ok(TestPrediction {
                test_id: p.test_id.clone(),
                mean: st(&p.mean)?,
                var: p.var.as_deref().map(var),
                epistemic: p.epistemic.as_deref().map(var),
                truth: st(&p.truth)?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct Metrics {
    level: f64,
    /// Headline metrics, in the model's normalized units.
    normalized: Option<MetricReport>,
    physical: MetricReport,
}

pub fn run(predictions: &Path, dataset: &Path, norm_stats: Option<&Path>, level: f64, out: &Path) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(coded(EXIT_CONFIG, format!("level {level} outside (0, 1)")));
    }
    let ns_path: Option<PathBuf> = match norm_stats {
        Some(p) => Some(p.to_path_buf()),
        None => predictions
            .parent()
            .map(|d| d.join("norm_stats.json"))
            .filter(|p| p.is_file()),
    };
    let ns: Option<NormStats> = ns_path.as_deref().map(read_json).transpose()?;
    let ds = load_dataset(dataset)?;
    let preds = read_predictions(predictions, &ds)?;

    let physical = MetricReport::compute(&preds, level)?;
    let normalized = match &ns {
        Some(ns) => Some(MetricReport::compute(&normalized(&preds, &ds, ns)?, level)?),
        None => None,
    };
    let headline = normalized.as_ref().unwrap_or(&physical);
    write_atomic(&out.join("metrics.csv"), |w| Ok(headline.write_csv(w)?))?;
    let metrics = Metrics { level, normalized: normalized.clone(), physical };
    write_json(&out.join("metrics.json"), &metrics)?;

    let mut m = Manifest::new("evaluate", &json!({ "level": level }), None)?;
    m.input("predictions", predictions)?;
    m.input("dataset", dataset)?;
    if let Some(p) = &ns_path {
        m.input("norm_stats", p)?;
    }
    m.output("metrics.json");
    m.output("metrics.csv");
    m.report = json!({ "headline_units": if normalized.is_some() { "normalized" } else { "physical" } });
    m.write(out)
}
