//! Run configuration: a flat TOML document plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ClassShare;
use crate::error::{Error, Result};
use crate::federation::Method;
use crate::laplace::DEFAULT_DAMPING;
use crate::nn::{NetworkSpec, SgdConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetName {
    Synthetic,
    Mnist,
    Fmnist,
    Cifar10,
}

impl DatasetName {
    /// Directory under the dataset root.
    pub fn dir_name(self) -> &'static str {
        match self {
            DatasetName::Synthetic => "synthetic",
            DatasetName::Mnist => "mnist",
            DatasetName::Fmnist => "fashion-mnist",
            DatasetName::Cifar10 => "cifar-10-batches-bin",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Lenet,
}

/// Environment variable naming the directory that holds dataset folders.
pub const DATA_ROOT_ENV: &str = "FEDBPS_DATA_ROOT";

const REQUIRED: &[&str] = &["method", "dataset"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    pub method: Method,
    pub dataset: DatasetName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,

    #[serde(default = "defaults::model")]
    pub model: ModelKind,
    /// Hidden widths of the MLP.
    #[serde(default = "defaults::hidden")]
    pub hidden: Vec<usize>,
    /// Channel/width multiplier for LeNet.
    #[serde(default = "defaults::width")]
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier_start: Option<usize>,

    #[serde(default = "defaults::n_clients")]
    pub n_clients: usize,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::momentum")]
    pub momentum: f64,
    #[serde(default = "defaults::weight_decay")]
    pub weight_decay: f64,
    /// Personalized proportion for FedBPS.
    #[serde(default = "defaults::p")]
    pub p: f64,
    #[serde(default = "defaults::damping")]
    pub damping: f64,

    #[serde(default = "defaults::n_major")]
    pub n_major: usize,
    /// Fraction of each client's data spread uniformly over all classes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iid_share: Option<f64>,
    /// Alternative knob: fraction drawn from the major classes, the rest
    /// spread over the minor classes. Mutually exclusive with `iid_share`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub major_share: Option<f64>,
    #[serde(default = "defaults::train_per_client")]
    pub train_per_client: usize,
    #[serde(default = "defaults::test_per_client")]
    pub test_per_client: usize,

    #[serde(default = "defaults::synthetic_classes")]
    pub synthetic_classes: usize,
    #[serde(default = "defaults::synthetic_dims")]
    pub synthetic_dims: usize,
    #[serde(default = "defaults::synthetic_separation")]
    pub synthetic_separation: f64,
    /// Pool sizes per class for the synthetic train and test sets.
    #[serde(default = "defaults::synthetic_train_per_class")]
    pub synthetic_train_per_class: usize,
    #[serde(default = "defaults::synthetic_test_per_class")]
    pub synthetic_test_per_class: usize,

    #[serde(default)]
    pub init_seed: u64,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub shuffle_seed: u64,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

mod defaults {
    use super::*;
    pub fn model() -> ModelKind {
        ModelKind::Mlp
    }
    pub fn hidden() -> Vec<usize> {
        vec![128]
    }
    pub fn width() -> f64 {
        1.0
    }
    pub fn n_clients() -> usize {
        10
    }
    pub fn rounds() -> usize {
        60
    }
    pub fn local_epochs() -> usize {
        5
    }
    pub fn lr() -> f64 {
        0.01
    }
    pub fn batch_size() -> usize {
        128
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn weight_decay() -> f64 {
        5e-4
    }
    pub fn p() -> f64 {
        0.7
    }
    pub fn damping() -> f64 {
        DEFAULT_DAMPING
    }
    pub fn n_major() -> usize {
        2
    }
    pub fn train_per_client() -> usize {
        1000
    }
    pub fn test_per_client() -> usize {
        200
    }
    pub fn synthetic_classes() -> usize {
        10
    }
    pub fn synthetic_dims() -> usize {
        20
    }
    pub fn synthetic_separation() -> f64 {
        3.0
    }
    pub fn synthetic_train_per_class() -> usize {
        2000
    }
    pub fn synthetic_test_per_class() -> usize {
        500
    }
}

pub const DEFAULT_IID_SHARE: f64 = 0.2;

impl FederationConfig {
    /// Config with every default filled in.
    pub fn new(method: Method, dataset: DatasetName) -> Self {
        let mut table = toml::Table::new();
        table.insert(
            "method".into(),
            toml::Value::try_from(method).expect("method serializes"),
        );
        table.insert(
            "dataset".into(),
            toml::Value::try_from(dataset).expect("dataset serializes"),
        );
        from_table(table).expect("defaults are valid")
    }

    pub fn share(&self) -> ClassShare {
        match (self.iid_share, self.major_share) {
            (_, Some(m)) => ClassShare::MajorShare(m),
            (Some(s), None) => ClassShare::IidShare(s),
            (None, None) => ClassShare::IidShare(DEFAULT_IID_SHARE),
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Network for inputs of the given per-sample shape and class count.
    pub fn network(&self, sample_shape: &[usize], classes: usize) -> Result<NetworkSpec> {
        let mut spec = match self.model {
            ModelKind::Mlp => {
                let mut widths = vec![sample_shape.iter().product()];
                widths.extend(&self.hidden);
                widths.push(classes);
                NetworkSpec::mlp(&widths)
            }
            ModelKind::Lenet => {
                let [c, h, w] = sample_shape[..] else {
                    return Err(Error::config(
                        "model",
                        format!("lenet needs image inputs, got {sample_shape:?}"),
                    ));
                };
                if h != w {
                    return Err(Error::config("model", "lenet needs square images"));
                }
                NetworkSpec::lenet(c, h, classes, self.width)
            }
        };
        spec.classifier_start = self.classifier_start;
        spec.plan().map_err(|e| Error::config("model", e.to_string()))?;
        Ok(spec)
    }

    /// Range checks, reported against the offending key.
    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, key: &str, msg: impl FnOnce() -> String) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, msg()))
            }
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", || {
            format!("must be > 0, got {}", self.lr)
        })?;
        check(self.batch_size >= 1, "batch_size", || "must be at least 1".into())?;
        check(self.local_epochs >= 1, "local_epochs", || "must be at least 1".into())?;
        check(self.n_clients >= 1, "n_clients", || "must be at least 1".into())?;
        check(unit(self.p), "p", || format!("must be in [0, 1], got {}", self.p))?;
        check(unit(self.momentum) && self.momentum < 1.0, "momentum", || {
            format!("must be in [0, 1), got {}", self.momentum)
        })?;
        check(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay",
            || format!("must be >= 0, got {}", self.weight_decay),
        )?;
        check(self.damping > 0.0 && self.damping.is_finite(), "damping", || {
            format!("must be > 0, got {}", self.damping)
        })?;
        check(self.n_major >= 1, "n_major", || "must be at least 1".into())?;
        check(
            !(self.iid_share.is_some() && self.major_share.is_some()),
            "major_share",
            || "set either iid_share or major_share, not both".into(),
        )?;
        if let Some(s) = self.iid_share {
            check(unit(s), "iid_share", || format!("must be in [0, 1], got {s}"))?;
        }
        if let Some(m) = self.major_share {
            check(unit(m), "major_share", || format!("must be in [0, 1], got {m}"))?;
        }
        check(self.train_per_client >= 1, "train_per_client", || {
            "must be at least 1".into()
        })?;
        check(self.test_per_client >= 1, "test_per_client", || {
            "must be at least 1".into()
        })?;
        check(self.width > 0.0 && self.width.is_finite(), "width", || {
            format!("must be > 0, got {}", self.width)
        })?;
        check(!self.hidden.contains(&0), "hidden", || {
            "hidden widths must be positive".into()
        })?;
        if self.dataset == DatasetName::Synthetic {
            check(self.synthetic_classes >= 2, "synthetic_classes", || {
                "must be at least 2".into()
            })?;
            check(self.synthetic_dims >= 1, "synthetic_dims", || {
                "must be at least 1".into()
            })?;
            check(self.synthetic_separation >= 0.0, "synthetic_separation", || {
                "must be >= 0".into()
            })?;
            check(self.synthetic_train_per_class >= 1, "synthetic_train_per_class", || {
                "must be at least 1".into()
            })?;
            check(self.synthetic_test_per_class >= 1, "synthetic_test_per_class", || {
                "must be at least 1".into()
            })?;
        }
        Ok(())
    }

    /// Canonical TOML rendering, loadable by [`parse_config`].
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Directory holding this config's dataset files.
    pub fn resolve_data_dir(&self) -> Result<PathBuf> {
        if let Some(dir) = &self.data_dir {
            return Ok(dir.clone());
        }
        match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) => Ok(PathBuf::from(root).join(self.dataset.dir_name())),
            None => Err(Error::config(
                "data_dir",
                format!("not set and {DATA_ROOT_ENV} is not defined"),
            )),
        }
    }
}

fn known_keys() -> Vec<String> {
    let full = FederationConfig {
        data_dir: Some(PathBuf::new()),
        classifier_start: Some(0),
        iid_share: Some(0.0),
        major_share: Some(0.0),
        out_dir: Some(PathBuf::new()),
        ..FederationConfig::new(Method::FedAvg, DatasetName::Synthetic)
    };
    match toml::Value::try_from(&full).expect("config serializes") {
        toml::Value::Table(t) => t.keys().cloned().collect(),
        _ => unreachable!(),
    }
}

fn from_table(table: toml::Table) -> Result<FederationConfig> {
    for key in REQUIRED {
        if !table.contains_key(*key) {
            return Err(Error::config(*key, "required key is missing"));
        }
    }
    toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| Error::config(offending_key(&table), e.message().trim().to_string()))
}

/// Find the key whose value alone fails to deserialize on top of defaults.
fn offending_key(table: &toml::Table) -> String {
    let Ok(toml::Value::Table(base)) =
        toml::Value::try_from(FederationConfig::new(Method::FedAvg, DatasetName::Synthetic))
    else {
        return "config".into();
    };
    table
        .iter()
        .find(|(k, v)| {
            let mut probe = base.clone();
            probe.insert((*k).clone(), (*v).clone());
            toml::Value::Table(probe).try_into::<FederationConfig>().is_err()
        })
        .map(|(k, _)| k.clone())
        .unwrap_or_else(|| "config".into())
}

/// Parse `value` as a TOML value; bare words fall back to strings.
fn parse_override_value(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()))
}

/// Apply `key=value` overrides on top of a parsed table and validate.
pub fn config_from_table(mut table: toml::Table, overrides: &[String]) -> Result<FederationConfig> {
    for item in overrides {
        let Some((key, value)) = item.split_once('=') else {
            return Err(Error::config(item.clone(), "override must look like key=value"));
        };
        table.insert(key.trim().to_string(), parse_override_value(value.trim()));
    }
    let known = known_keys();
    if let Some(unknown) = table.keys().find(|k| !known.contains(k)) {
        return Err(Error::config(unknown.clone(), "unknown key"));
    }
    let cfg = from_table(table)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Read a config file (TOML, or the `config` object of a run manifest when the
/// path ends in `.json`) and apply overrides.
pub fn parse_config(file_path: &Path, overrides: &[String]) -> Result<FederationConfig> {
    let text = std::fs::read_to_string(file_path).map_err(|e| Error::load(file_path, e.to_string()))?;
    let table = if file_path.extension().is_some_and(|e| e == "json") {
        let manifest: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::load(file_path, e.to_string()))?;
        let config = manifest
            .get("config")
            .ok_or_else(|| Error::load(file_path, "manifest has no `config` object"))?;
        toml::Value::try_from(config)
            .ok()
            .and_then(|v| v.as_table().cloned())
            .ok_or_else(|| Error::load(file_path, "manifest `config` is not a table"))?
    } else {
        toml::from_str::<toml::Table>(&text).map_err(|e| Error::load(file_path, e.message().to_string()))?
    };
    config_from_table(table, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, overrides: &[&str]) -> Result<FederationConfig> {
        let table: toml::Table = toml::from_str(text).unwrap();
        let overrides: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        config_from_table(table, &overrides)
    }

    fn key_of(r: Result<FederationConfig>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    const MINIMAL: &str = "method = \"fedbps\"\ndataset = \"fmnist\"\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse(MINIMAL, &[]).unwrap();
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 5e-4);
        assert_eq!(cfg.damping, 1e-6);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.batch_size, 128);
        assert_eq!(cfg.local_epochs, 5);
        assert_eq!(cfg.n_major, 2);
        assert_eq!(cfg.share(), ClassShare::IidShare(0.2));
        assert_eq!(cfg.method, Method::FedBps);
    }

    #[test]
    fn range_errors_name_the_key() {
        assert_eq!(key_of(parse(MINIMAL, &["p=1.5"])), "p");
        assert_eq!(key_of(parse(MINIMAL, &["lr=0"])), "lr");
        assert_eq!(key_of(parse(MINIMAL, &["batch_size=0"])), "batch_size");
        assert_eq!(key_of(parse(MINIMAL, &["local_epochs=0"])), "local_epochs");
        assert_eq!(key_of(parse(MINIMAL, &["damping=-1"])), "damping");
        assert_eq!(
            key_of(parse(MINIMAL, &["iid_share=0.1", "major_share=0.8"])),
            "major_share"
        );
    }

    #[test]
    fn overrides_win() {
        let cfg = parse(&format!("{MINIMAL}lr = 0.01\n"), &["lr=0.05", "method=fedavg"]).unwrap();
        assert_eq!(cfg.lr, 0.05);
        assert_eq!(cfg.method, Method::FedAvg);
    }

    #[test]
    fn unknown_and_missing_keys() {
        assert_eq!(key_of(parse(MINIMAL, &["learning_rate=0.1"])), "learning_rate");
        assert_eq!(key_of(parse("dataset = \"fmnist\"\n", &[])), "method");
        assert_eq!(key_of(parse(MINIMAL, &["method=fedsgd"])), "method");
    }

    #[test]
    fn toml_snapshot_round_trips() {
        let cfg = parse(MINIMAL, &["iid_share=0.35", "hidden=[64, 32]", "weight_decay=0.0005"]).unwrap();
        let again = parse(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(cfg, again);
    }
}
