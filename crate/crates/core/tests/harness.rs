use std::path::Path;
use std::time::Instant;

use fedbps::config::{DatasetName, ModelKind};
use fedbps::federation::run_federation;
use fedbps::harness::{
    cmd_gradcheck, cmd_partition_preview, cmd_run, prepare, read_metrics, GradSelector, RunManifest,
    CONFIG_SNAPSHOT_FILE, MANIFEST_FILE, METRICS_FILE, METRICS_HEADER, PREVIEW_CSV,
};
use fedbps::{parse_config, FederationConfig, Method};

fn small(method: Method) -> FederationConfig {
    let mut cfg = FederationConfig::new(method, DatasetName::Synthetic);
    cfg.n_clients = 3;
    cfg.rounds = 3;
    cfg.local_epochs = 1;
    cfg.batch_size = 20;
    cfg.lr = 0.05;
    cfg.hidden = vec![8];
    cfg.train_per_client = 50;
    cfg.test_per_client = 20;
    cfg.synthetic_classes = 4;
    cfg.synthetic_dims = 5;
    cfg.synthetic_train_per_class = 80;
    cfg.synthetic_test_per_class = 30;
    cfg.shuffle_seed = 12;
    cfg
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn zero_round_run_writes_manifest_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Method::FedBps);
    cfg.rounds = 0;
    let summary = cmd_run(&cfg, dir.path()).unwrap();
    assert_eq!(summary.rounds, 0);
    assert_eq!(summary.to_string(), "no rounds run");
    assert_eq!(read(&dir.path().join(METRICS_FILE)), format!("{METRICS_HEADER}\n"));
    let manifest: RunManifest = serde_json::from_str(&read(&dir.path().join(MANIFEST_FILE))).unwrap();
    assert_eq!(manifest.config, cfg);
    assert!(manifest.finished_unix_secs.is_some());
    assert_eq!(parse_config(&dir.path().join(CONFIG_SNAPSHOT_FILE), &[]).unwrap(), cfg);
}

#[test]
fn rerunning_a_manifest_reproduces_metrics_byte_for_byte() {
    for method in Method::ALL {
        let first = tempfile::tempdir().unwrap();
        let second = tempfile::tempdir().unwrap();
        let cfg = small(method);
        cmd_run(&cfg, first.path()).unwrap();
        let again = parse_config(&first.path().join(MANIFEST_FILE), &[]).unwrap();
        assert_eq!(again, cfg);
        cmd_run(&again, second.path()).unwrap();
        let a = read(&first.path().join(METRICS_FILE));
        assert_eq!(a, read(&second.path().join(METRICS_FILE)), "{}", method.name());
        assert_eq!(a.lines().count(), 1 + cfg.rounds * cfg.n_clients);
    }
}

#[test]
fn metrics_round_trip_through_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Method::FedBps);
    let summary = cmd_run(&cfg, dir.path()).unwrap();
    let records = read_metrics(&dir.path().join(METRICS_FILE)).unwrap();

    let p = prepare(&cfg).unwrap();
    let outcome = run_federation(&cfg, &p.spec, p.clients, |_| Ok(())).unwrap();
    assert_eq!(records, outcome.history);
    assert_eq!(summary.final_mean_test_acc, outcome.final_accuracy());
    assert!(records[0].mask_churn.is_none());
    let manifest: RunManifest = serde_json::from_str(&read(&dir.path().join(MANIFEST_FILE))).unwrap();
    assert_eq!(manifest.final_mean_test_acc, outcome.final_accuracy());
}

#[test]
fn overrides_apply_on_top_of_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "method = \"fedper\"\ndataset = \"synthetic\"\nrounds = 4\n").unwrap();
    let cfg = parse_config(
        &path,
        &["rounds=7".into(), "method=lg-fedavg".into(), "hidden=[32, 16]".into()],
    )
    .unwrap();
    assert_eq!(cfg.rounds, 7);
    assert_eq!(cfg.method, Method::LgFedAvg);
    assert_eq!(cfg.hidden, vec![32, 16]);
    assert!(parse_config(&path, &["colour=red".into()]).is_err());
    assert!(parse_config(&dir.path().join("missing.toml"), &[]).is_err());
}

#[test]
fn preview_reflects_the_share_knob() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Method::FedAvg);
    cfg.iid_share = Some(0.0);
    let skewed = cmd_partition_preview(&cfg, Some(dir.path())).unwrap();
    for (h, majors) in skewed.train_histograms.iter().zip(&skewed.plan.major_classes) {
        for (c, &k) in h.iter().enumerate() {
            assert_eq!(k > 0, majors.contains(&c), "class {c} count {k}");
        }
    }
    let csv = read(&dir.path().join(PREVIEW_CSV));
    assert!(csv.starts_with("split,client_id,class,count,is_major\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * cfg.n_clients * cfg.synthetic_classes);

    cfg.iid_share = Some(1.0);
    let uniform = cmd_partition_preview(&cfg, None).unwrap();
    let ideal = cfg.train_per_client as f64 / cfg.synthetic_classes as f64;
    for h in &uniform.train_histograms {
        assert!(h.iter().all(|&k| (k as f64 - ideal).abs() <= 1.0));
    }
    assert!(uniform.table().contains("train"));
}

#[test]
fn gradcheck_command_passes_quickly_and_catches_corruption() {
    let start = Instant::now();
    for sel in [GradSelector::Mlp, GradSelector::Cnn] {
        let report = cmd_gradcheck(sel, 1, false).unwrap();
        assert!(report.passed, "{report}");
        assert!(report.to_string().starts_with("PASS"));
        let bad = cmd_gradcheck(sel, 1, true).unwrap();
        assert!(!bad.passed);
        assert!(bad.to_string().starts_with("FAIL"));
    }
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

fn write_idx(dir: &Path, prefix: &str, labels: &[u8], side: usize) {
    let n = labels.len() as u32;
    let mut images = vec![0, 0, 8, 3];
    images.extend(n.to_be_bytes());
    images.extend((side as u32).to_be_bytes());
    images.extend((side as u32).to_be_bytes());
    for (i, &l) in labels.iter().enumerate() {
        // Class-dependent bright pixel plus a little per-sample texture.
        for p in 0..side * side {
            images.push(if p == l as usize {
                255
            } else {
                ((i * 31 + p * 7) % 40) as u8
            });
        }
    }
    let mut lab = vec![0, 0, 8, 1];
    lab.extend(n.to_be_bytes());
    lab.extend_from_slice(labels);
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), lab).unwrap();
}

#[test]
fn idx_datasets_run_end_to_end() {
    let data = tempfile::tempdir().unwrap();
    let train: Vec<u8> = (0..400).map(|i| (i % 10) as u8).collect();
    let test: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
    write_idx(data.path(), "train", &train, 4);
    write_idx(data.path(), "t10k", &test, 4);

    let mut cfg = FederationConfig::new(Method::FedBps, DatasetName::Fmnist);
    cfg.data_dir = Some(data.path().to_path_buf());
    cfg.n_clients = 2;
    cfg.rounds = 2;
    cfg.local_epochs = 1;
    cfg.batch_size = 16;
    cfg.hidden = vec![6];
    cfg.train_per_client = 40;
    cfg.test_per_client = 10;
    let out = tempfile::tempdir().unwrap();
    let summary = cmd_run(&cfg, out.path()).unwrap();
    assert_eq!(summary.rounds, 2);

    cfg.model = ModelKind::Lenet;
    assert!(cmd_run(&cfg, out.path()).is_err(), "4x4 images are too small for LeNet");
}
