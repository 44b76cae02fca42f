use std::fmt::Write as _;
use std::path::Path;

use crate::config::FederationConfig;
use crate::data::{partition_major_minor, Dataset, PartitionPlan};
use crate::error::Result;
use crate::harness::{load_datasets, partition_config};

pub const PREVIEW_CSV: &str = "partition_preview.csv";

/// Per-client label histograms of a partition plan.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPreview {
    pub plan: PartitionPlan,
    pub train_histograms: Vec<Vec<usize>>,
    pub test_histograms: Vec<Vec<usize>>,
}

fn histograms(ds: &Dataset, shards: &[Vec<usize>]) -> Vec<Vec<usize>> {
    shards
        .iter()
        .map(|idx| {
            let mut h = vec![0; ds.classes()];
            for &i in idx {
                h[ds.labels()[i]] += 1;
            }
            h
        })
        .collect()
}

impl PartitionPreview {
    pub fn new(train: &Dataset, test: &Dataset, plan: PartitionPlan) -> Self {
        Self {
            train_histograms: histograms(train, &plan.train),
            test_histograms: histograms(test, &plan.test),
            plan,
        }
    }

    /// Human-readable table, one row per client and split.
    pub fn table(&self) -> String {
        let classes = self.train_histograms.first().map_or(0, Vec::len);
        let mut out = String::new();
        let _ = write!(out, "{:>6} {:>5} {:>8}", "client", "split", "majors");
        for c in 0..classes {
            let _ = write!(out, " {:>5}", format!("c{c}"));
        }
        let _ = writeln!(out, " {:>6}", "total");
        for (split, hists) in [("train", &self.train_histograms), ("test", &self.test_histograms)] {
            for (i, h) in hists.iter().enumerate() {
                let majors: Vec<String> = self.plan.major_classes[i].iter().map(|c| c.to_string()).collect();
                let _ = write!(out, "{i:>6} {split:>5} {:>8}", majors.join("/"));
                for k in h {
                    let _ = write!(out, " {k:>5}");
                }
                let _ = writeln!(out, " {:>6}", h.iter().sum::<usize>());
            }
        }
        out
    }

    /// Long-format CSV: `split,client_id,class,count,is_major`.
    pub fn csv(&self) -> String {
        let mut out = String::from("split,client_id,class,count,is_major\n");
        for (split, hists) in [("train", &self.train_histograms), ("test", &self.test_histograms)] {
            for (i, h) in hists.iter().enumerate() {
                for (c, k) in h.iter().enumerate() {
                    let major = self.plan.major_classes[i].contains(&c) as u8;
                    let _ = writeln!(out, "{split},{i},{c},{k},{major}");
                }
            }
        }
        out
    }
}

/// Partition the configured datasets and report per-client histograms,
/// writing the CSV form into `out_dir` when given.
pub fn cmd_partition_preview(cfg: &FederationConfig, out_dir: Option<&Path>) -> Result<PartitionPreview> {
    cfg.validate()?;
    let (train, test) = load_datasets(cfg)?;
    let plan = partition_major_minor(&train, &test, &partition_config(cfg))?;
    let preview = PartitionPreview::new(&train, &test, plan);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(PREVIEW_CSV), preview.csv())?;
    }
    Ok(preview)
}
