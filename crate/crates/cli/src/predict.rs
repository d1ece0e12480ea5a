use std::path::Path;

use anyhow::Result;
use serde_json::json;

use rbnn_core::datapipe::{Dataset, State};
use rbnn_core::evalkit::{predict_bayesian, predict_deterministic, z_value, TestPrediction};

use crate::io::{coded, read_json, write_atomic, write_json, Manifest, EXIT_CONFIG};
use crate::prep::{load_dataset, Checkpoint, Trained};

pub const PRED_COLUMNS: [&str; 8] = ["test_id", "step", "channel", "mean", "variance", "lo95", "hi95", "epistemic_variance"];

pub fn channel_names(ds: &Dataset) -> Result<[&'static str; 3]> {
    let kind = ds.kind()?;
    Ok(["p", "q", kind.third_kind().as_str()])
}

/// Back to physical units using each series' raw confining pressure.
fn denormalize(ck: &Checkpoint, raw: &Dataset, preds: Vec<TestPrediction>) -> Result<Vec<TestPrediction>> {
    let ns = &ck.norm_stats;
    preds
        .into_iter()
        .zip(&raw.series)
        .map(|(p, s)| {
            let s3 = s.theta.sigma3;
            let states = |v: &[State]| -> Result<Vec<State>> { Ok(v.iter().map(|x| ns.denormalize_state(s3, x)).collect::<Result<_, _>>()?) };
            let vars = |v: &[State]| -> Result<Vec<State>> { Ok(v.iter().map(|x| ns.denormalize_var(s3, x)).collect::<Result<_, _>>()?) };
            Ok(TestPrediction {
                test_id: p.test_id,
                mean: states(&p.mean)?,
                var: p.var.as_deref().map(vars).transpose()?,
                epistemic: p.epistemic.as_deref().map(vars).transpose()?,
                truth: s.states[1..].to_vec(),
            })
        })
        .collect()
}

fn write_predictions(path: &Path, preds: &[TestPrediction], names: [&str; 3]) -> Result<()> {
    let probabilistic = preds.iter().all(|p| p.var.is_some());
    let z = z_value(0.95)?;
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        let n = if probabilistic { PRED_COLUMNS.len() } else { 4 };
        c.write_record(&PRED_COLUMNS[..n])?;
        for p in preds {
            for (t, m) in p.mean.iter().enumerate() {
                for ch in 0..3 {
                    let mut rec = vec![p.test_id.clone(), (t + 1).to_string(), names[ch].to_string(), m[ch].to_string()];
                    if let (Some(v), Some(e)) = (&p.var, &p.epistemic) {
                        let half = z * v[t][ch].sqrt();
                        rec.push(v[t][ch].to_string());
                        rec.push((m[ch] - half).to_string());
                        rec.push((m[ch] + half).to_string());
                        rec.push(e[t][ch].to_string());
                    }
                    c.write_record(&rec)?;
                }
            }
        }
        c.flush()?;
        Ok(())
    })
}

pub fn run(
    checkpoint: &Path,
    dataset: &Path,
    test_ids: Option<Vec<String>>,
    nmc: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let ck: Checkpoint = read_json(checkpoint)?;
    ck.check_format()?;
    let n_mc = nmc.unwrap_or(ck.config.n_mc);
    if n_mc == 0 {
        return Err(coded(EXIT_CONFIG, "--nmc must be positive"));
    }
    let seed = seed.unwrap_or(ck.seed);
    let ds = load_dataset(dataset)?;
    let ids = match test_ids {
        Some(ids) => ids,
        None if !ck.config.split.test.is_empty() => ck.config.split.test.clone(),
        None => ds.ids().into_iter().map(String::from).collect(),
    };
    let raw = ds.select(&ids).map_err(|e| coded(EXIT_CONFIG, e.to_string()))?;
    let normed = ck.normalize(&raw)?;
    let names = channel_names(&raw)?;

    let preds = match &ck.model {
        Trained::Rffnn { params } => predict_deterministic(params, &ck.arch, &normed)?,
        Trained::Rbnn { posterior } => predict_bayesian(posterior, &ck.arch, &normed, n_mc, seed)?,
    };
    let preds = denormalize(&ck, &raw, preds)?;
    write_predictions(&out.join("predictions.csv"), &preds, names)?;
    write_json(&out.join("norm_stats.json"), &ck.norm_stats)?;

    let bayes = matches!(ck.model, Trained::Rbnn { .. });
    let settings = json!({ "test_ids": ids, "n_mc": bayes.then_some(n_mc), "seed": seed });
    let mut m = Manifest::new("predict", &settings, Some(seed))?;
    m.input("checkpoint", checkpoint)?;
    m.input("dataset", dataset)?;
    m.output("predictions.csv");
    m.output("norm_stats.json");
    m.report = json!({ "tests": preds.len() });
    m.write(out)
}
