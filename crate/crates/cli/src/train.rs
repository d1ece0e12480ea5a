use std::path::Path;

use anyhow::Result;
use serde::Serialize;
use serde_json::json;

use rbnn_core::bayesmodel::{train_rbnn, RbnnConfig};
use rbnn_core::datapipe::segment_windows;
use rbnn_core::detmodel::{train_rffnn, RffnnConfig, StopReason};
use rbnn_core::evalkit::{sweep_rbnn, sweep_rffnn, write_sweep_csv};

use crate::config::{ModelKind, Overrides, TrainConfig};
use crate::io::{coded, read_json, write_atomic, write_json, Manifest, EXIT_CONFIG, EXIT_DIVERGED};
use crate::prep::{load_dataset, prepare, Checkpoint, Trained, CHECKPOINT_FORMAT};

fn write_history<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        for r in rows {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    })
}

fn load_config(path: &Path, o: &Overrides) -> Result<TrainConfig> {
    let cfg: TrainConfig = read_json(path)?;
    cfg.resolve(o)
}

pub fn run(config: &Path, o: &Overrides, out: &Path) -> Result<()> {
    let cfg = load_config(config, o)?;
    let ds = load_dataset(&cfg.dataset)?;
    let prep = prepare(&cfg, &ds)?;
    let window = |d| segment_windows(d, cfg.h).map_err(|e| coded(EXIT_CONFIG, e.to_string()));
    let tw = window(&prep.train)?;
    let vw = if prep.val.is_empty() { Vec::new() } else { window(&prep.val)? };
    log::info!("training {:?} with H={} on {} windows ({} validation)", cfg.model, cfg.h, tw.len(), vw.len());

    let (model, arch, best_epoch, stop) = match cfg.model {
        ModelKind::Rbnn => {
            let r = train_rbnn(&tw, &vw, &cfg.rbnn)?;
            write_history(&out.join("history.csv"), &r.history)?;
            (Trained::Rbnn { posterior: r.model }, r.arch, r.best_epoch, r.stop)
        }
        _ => {
            let r = train_rffnn(&tw, &vw, &cfg.rffnn)?;
            write_history(&out.join("history.csv"), &r.history)?;
            (Trained::Rffnn { params: r.model }, r.arch, r.best_epoch, r.stop)
        }
    };
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.into(),
        model,
        arch,
        test_kind: prep.train.kind()?,
        h: cfg.h,
        norm_stats: prep.norm,
        seed: cfg.seed(),
        config: cfg.clone(),
        best_epoch,
        stop,
    };
    write_json(&out.join("checkpoint.json"), &ck)?;

    let mut m = Manifest::new("train", &cfg, Some(cfg.seed()))?;
    m.input("config", config)?;
    m.input("dataset", &cfg.dataset)?;
    m.output("checkpoint.json");
    m.output("history.csv");
    m.report = json!({ "best_epoch": best_epoch, "stop": stop });
    m.write(out)?;

    if let StopReason::Diverged { epoch } = stop {
        return Err(coded(EXIT_DIVERGED, format!("training diverged at epoch {epoch}; partial history kept")));
    }
    log::info!("best epoch {best_epoch}, stop {stop:?}");
    Ok(())
}

pub fn sweep(config: &Path, o: &Overrides, hs: Option<Vec<usize>>, out: &Path) -> Result<()> {
    let mut cfg = load_config(config, o)?;
    let Some(spec) = cfg.sweep.as_mut() else {
        return Err(coded(EXIT_CONFIG, "config has no `sweep` section"));
    };
    if let Some(hs) = hs {
        spec.hs = hs;
    }
    cfg.validate()?;
    let spec = cfg.sweep.clone().expect("checked above");
    let ds = load_dataset(&cfg.dataset)?;
    let prep = prepare(&cfg, &ds)?;
    if prep.val.is_empty() {
        return Err(coded(EXIT_CONFIG, "sweep needs a validation split"));
    }
    let table = match cfg.model {
        ModelKind::Rbnn => {
            let c = RbnnConfig { epochs: spec.epochs, ..cfg.rbnn.clone() };
            sweep_rbnn(&prep.train, &prep.val, &spec.hs, &c, spec.n_mc)
        }
        _ => {
            let c = RffnnConfig { epochs: spec.epochs, ..cfg.rffnn.clone() };
            sweep_rffnn(&prep.train, &prep.val, &spec.hs, &c)
        }
    };
    write_atomic(&out.join("sweep.csv"), |w| Ok(write_sweep_csv(&table, w)?))?;

    let mut m = Manifest::new("sweep", &cfg, Some(cfg.seed()))?;
    m.input("config", config)?;
    m.input("dataset", &cfg.dataset)?;
    m.output("sweep.csv");
    m.report = json!({
        "rule": table.rule,
        "chosen_H": table.chosen,
        "errors": table.rows.iter().filter_map(|r| r.error.as_ref().map(|e| json!({"H": r.h, "error": e}))).collect::<Vec<_>>(),
    });
    m.write(out)?;
    match table.chosen {
        Some(h) => log::info!("chosen H = {h}"),
        None => log::warn!("no window length succeeded"),
    }
    Ok(())
}
