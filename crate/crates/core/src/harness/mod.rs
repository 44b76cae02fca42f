//! Experiment entry points behind the `fedbps` CLI.

mod gradcheck;
mod preview;
mod run;

pub use gradcheck::{
    cmd_gradcheck, gradcheck, gradcheck_spec, GradSelector, GradcheckReport, GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
pub use preview::{cmd_partition_preview, PartitionPreview, PREVIEW_CSV};
pub use run::{
    cmd_run, cmd_run_with, read_metrics, RunManifest, RunSummary, CONFIG_SNAPSHOT_FILE, MANIFEST_FILE, METRICS_FILE,
    METRICS_HEADER,
};

use crate::config::{DatasetName, FederationConfig};
use crate::data::{
    load_cifar10, load_idx, partition_major_minor, synthesize_split, Dataset, PartitionConfig, PartitionPlan,
    SyntheticSpec,
};
use crate::error::Result;
use crate::federation::{build_clients, ClientState};
use crate::nn::NetworkSpec;

/// Train and test datasets named by the config.
pub fn load_datasets(cfg: &FederationConfig) -> Result<(Dataset, Dataset)> {
    match cfg.dataset {
        DatasetName::Synthetic => {
            let spec = SyntheticSpec {
                classes: cfg.synthetic_classes,
                per_class: cfg.synthetic_train_per_class,
                dims: cfg.synthetic_dims,
                separation: cfg.synthetic_separation,
                seed: cfg.data_seed,
            };
            let train = synthesize_split(&spec, 0)?;
            let test = synthesize_split(
                &SyntheticSpec {
                    per_class: cfg.synthetic_test_per_class,
                    ..spec
                },
                1,
            )?;
            Ok((train, test))
        }
        DatasetName::Mnist | DatasetName::Fmnist => {
            let dir = cfg.resolve_data_dir()?;
            let train = load_idx(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = load_idx(&dir.join("t10k-images-idx3-ubyte"), &dir.join("t10k-labels-idx1-ubyte"))?;
            Ok((train, test))
        }
        DatasetName::Cifar10 => {
            let dir = cfg.resolve_data_dir()?;
            let batches: Vec<_> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
            Ok((load_cifar10(&batches)?, load_cifar10(&[dir.join("test_batch.bin")])?))
        }
    }
}

pub fn partition_config(cfg: &FederationConfig) -> PartitionConfig {
    PartitionConfig {
        n_clients: cfg.n_clients,
        n_major: cfg.n_major,
        share: cfg.share(),
        train_per_client: cfg.train_per_client,
        test_per_client: cfg.test_per_client,
        seed: cfg.data_seed,
    }
}

/// Everything a run needs before the first round.
pub struct Prepared {
    pub spec: NetworkSpec,
    pub plan: PartitionPlan,
    pub clients: Vec<ClientState>,
}

pub fn prepare(cfg: &FederationConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    prepare_with(cfg, &train, &test)
}

/// As [`prepare`], with datasets already in memory.
pub fn prepare_with(cfg: &FederationConfig, train: &Dataset, test: &Dataset) -> Result<Prepared> {
    cfg.validate()?;
    let spec = cfg.network(train.sample_shape(), train.classes())?;
    let plan = partition_major_minor(train, test, &partition_config(cfg))?;
    let clients = build_clients(&spec, train, test, &plan, cfg.init_seed, cfg.shuffle_seed)?;
    Ok(Prepared { spec, plan, clients })
}
