use std::path::Path;

use anyhow::Result;
use serde_json::json;

use rbnn_core::datapipe::write_csv;
use rbnn_core::triaxsim::{generate_dataset, Suite};

use crate::io::{coded, read_json, write_atomic, write_json, Manifest, EXIT_CONFIG};

pub fn run(config: &Path, strict: bool, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut suite: Suite = read_json(config)?;
    if let Some(s) = seed {
        suite.sim.seed = s;
    }
    suite.sim.validate().map_err(|e| coded(EXIT_CONFIG, e.to_string()))?;

    let res = generate_dataset(&suite.sim)?;
    for f in &res.failures {
        log::warn!("series {} failed: {}", f.test_id, f.error);
    }
    if strict && !res.failures.is_empty() {
        anyhow::bail!("{} of {} series failed", res.failures.len(), suite.sim.entries.len());
    }
    log::info!("simulated {} series", res.dataset.len());

    write_atomic(&out.join("dataset.csv"), |w| Ok(write_csv(&res.dataset, w)?))?;
    write_json(&out.join("split.json"), &suite.split)?;

    let mut m = Manifest::new("simulate", &suite, Some(suite.sim.seed))?;
    m.input("config", config)?;
    m.output("dataset.csv");
    m.output("split.json");
    m.report = json!({
        "series": res.dataset.len(),
        "failures": res.failures.iter().map(|f| json!({"test_id": f.test_id, "error": f.error})).collect::<Vec<_>>(),
        "stopped": res.stopped.iter().map(|(id, step)| json!({"test_id": id, "step": step})).collect::<Vec<_>>(),
    });
    m.write(out)
}
