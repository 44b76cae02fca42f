use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::config::FederationConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::federation::{run_federation, RoundRecord};
use crate::harness::{prepare, prepare_with};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_SNAPSHOT_FILE: &str = "config.toml";
pub const METRICS_HEADER: &str = "round,client_id,train_loss,test_acc,global_test_acc,mask_churn";

/// Everything needed to reproduce a run, written before the first round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: FederationConfig,
    pub config_snapshot: String,
    pub metrics: String,
    pub started_unix_secs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_unix_secs: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_mean_test_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rounds: usize,
    pub final_mean_test_acc: Option<f64>,
    pub final_mean_global_test_acc: Option<f64>,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.final_mean_test_acc, self.final_mean_global_test_acc) {
            (Some(acc), Some(global)) => write!(
                f,
                "final mean personalized accuracy {acc:.4} (global model {global:.4}) after {} rounds",
                self.rounds
            ),
            _ => write!(f, "no rounds run"),
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    let json =
        serde_json::to_string_pretty(manifest).map_err(|e| Error::load(dir.join(MANIFEST_FILE), e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), json + "\n")?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_round(out: &mut impl Write, record: &RoundRecord) -> std::io::Result<()> {
    for (i, ((loss, acc), global)) in record
        .train_loss
        .iter()
        .zip(&record.test_acc)
        .zip(&record.global_test_acc)
        .enumerate()
    {
        writeln!(
            out,
            "{},{i},{loss},{acc},{global},{}",
            record.round,
            opt(record.mask_churn)
        )?;
    }
    out.flush()
}

/// Run the configured federation, writing the config snapshot and manifest
/// up front and appending metrics rows after every round.
pub fn cmd_run(cfg: &FederationConfig, out_dir: &Path) -> Result<RunSummary> {
    run_inner(cfg, out_dir, None)
}

/// [`cmd_run`] with datasets already loaded (lets sweeps share one load).
pub fn cmd_run_with(cfg: &FederationConfig, out_dir: &Path, train: &Dataset, test: &Dataset) -> Result<RunSummary> {
    run_inner(cfg, out_dir, Some((train, test)))
}

fn run_inner(cfg: &FederationConfig, out_dir: &Path, data: Option<(&Dataset, &Dataset)>) -> Result<RunSummary> {
    cfg.validate()?;
    let prepared = match data {
        Some((train, test)) => prepare_with(cfg, train, test)?,
        None => prepare(cfg)?,
    };
    std::fs::create_dir_all(out_dir)?;
    let mut snapshot = cfg.clone();
    snapshot.out_dir = None;
    std::fs::write(out_dir.join(CONFIG_SNAPSHOT_FILE), snapshot.to_toml())?;
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: snapshot,
        config_snapshot: CONFIG_SNAPSHOT_FILE.into(),
        metrics: METRICS_FILE.into(),
        started_unix_secs: unix_now(),
        finished_unix_secs: None,
        final_mean_test_acc: None,
    };
    write_manifest(out_dir, &manifest)?;

    let mut metrics = BufWriter::new(File::create(out_dir.join(METRICS_FILE))?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    metrics.flush()?;
    let outcome = run_federation(cfg, &prepared.spec, prepared.clients, |record| {
        write_round(&mut metrics, record).map_err(Error::from)
    })?;

    manifest.finished_unix_secs = Some(unix_now());
    manifest.final_mean_test_acc = outcome.final_accuracy();
    write_manifest(out_dir, &manifest)?;
    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        rounds: outcome.history.len(),
        final_mean_test_acc: outcome.final_accuracy(),
        final_mean_global_test_acc: outcome.final_global_accuracy(),
    })
}

/// Parse a metrics CSV back into per-round records.
pub fn read_metrics(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::load(path, "unexpected metrics header"));
    }
    let mut records: Vec<RoundRecord> = Vec::new();
    for (n, line) in lines.enumerate() {
        let bad = || Error::load(path, format!("malformed metrics row {}", n + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let round: usize = cols[0].parse().map_err(|_| bad())?;
        let churn = if cols[5].is_empty() { None } else { Some(num(cols[5])?) };
        if records.last().map(|r| r.round) != Some(round) {
            records.push(RoundRecord {
                round,
                train_loss: Vec::new(),
                test_acc: Vec::new(),
                global_test_acc: Vec::new(),
                mask_churn: churn,
            });
        }
        let r = records.last_mut().unwrap();
        r.train_loss.push(num(cols[2])?);
        r.test_acc.push(num(cols[3])?);
        r.global_test_acc.push(num(cols[4])?);
    }
    Ok(records)
}
