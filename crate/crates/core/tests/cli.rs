use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use facl::config::RunConfig;
use facl::data::{DatasetSpec, SampleStore};
use facl::encoder::{forward_features, read_checkpoint};
use facl::numcore::{cosine_similarity, Tensor};
use facl::protocol::run_pipeline;
use facl::report::export_embeddings;

const SMALL: &str = "\
base_classes = 4
inc_classes = 2
sessions = 1
ways = 2
shots = 2
input_dim = 6
train_per_class = 16
test_per_class = 5
hidden_dims = 8
feature_dim = 5
projection_dim = 4
epochs_base = 2
epochs_incremental = 2
batch_size = 16
queue_size = 32
";

fn facl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facl")).args(args).output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, format!("{SMALL}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn train_writes_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let run = facl(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["metrics.json", "metrics.csv", "confusion.csv", "model.facl", "manifest.cfg"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("session,accuracy"));
    assert_eq!(csv.lines().count(), 3);
    let manifest = fs::read_to_string(out.join("manifest.cfg")).unwrap();
    assert!(manifest.lines().any(|l| l.replace(' ', "") == "seed=3"));
    assert!(manifest.lines().any(|l| l.starts_with("tau")));
}

#[test]
fn unknown_key_exits_two_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "learning_speed = 3\n");
    let run = facl(&["train", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let err = String::from_utf8_lossy(&run.stderr);
    assert_eq!(err.trim_end().lines().count(), 1);
    assert!(err.starts_with("facl: config error:"));
    assert!(err.contains("learning_speed"));
}

#[test]
fn missing_store_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "store = /nonexistent/data.bin\n");
    let run = facl(&["train", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&run.stderr).starts_with("facl: runtime error:"));
}

#[test]
fn sweep_table_has_one_row_per_delta() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "sweep_deltas = 0,0.5,1\n");
    let out = tmp.path().join("sweep");
    let run = facl(&["sweep-delta", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next(), Some("delta,seeds,final_mean,final_sd,average_mean"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn ablate_writes_a_row_per_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ablations = ce,ce+pc,ce+sscl+pc+fa:ori+noise\n");
    let out = tmp.path().join("abl");
    let run = facl(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(out.join("ce_sscl_pc_fa_ori_noise").join("metrics.json").is_file());
}

fn nine_sample_store(spec: &DatasetSpec) -> SampleStore {
    let rows: Vec<Vec<f64>> = (0..9)
        .map(|i| (0..spec.input_dim).map(|k| ((i * 7 + k * 3) as f64 * 0.61).sin() * 2.0).collect())
        .collect();
    let labels = (0..9).map(|i| i % spec.total_classes()).collect();
    SampleStore::new(spec.total_classes(), Tensor::from_rows(&rows).unwrap(), labels, vec![false; 9]).unwrap()
}

#[test]
fn exported_embeddings_recompute_prototype_similarity() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(SMALL).unwrap();
    let outcome = run_pipeline(&cfg).unwrap();
    let spec = cfg.dataset_spec();
    let store = nine_sample_store(&spec);
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    export_embeddings(&outcome.params, &store, &spec, &a).unwrap();
    export_embeddings(&outcome.params, &store, &spec, &b).unwrap();
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());

    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().unwrap().clone();
    assert_eq!(header.len(), cfg.feature_dim + 2);
    assert_eq!(&header[0], "label");
    assert_eq!(&header[1], "session");
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 9);
    assert!(records.iter().all(|r| r.len() == cfg.feature_dim + 2));

    let row0: Vec<f64> = records[0].iter().skip(2).map(|v| v.parse().unwrap()).collect();
    let y: usize = records[0][0].parse().unwrap();
    let proto = outcome.state.prototype(y, 0).unwrap();
    let offline = row0.iter().zip(proto).map(|(u, v)| u * v).sum::<f64>()
        / (row0.iter().map(|v| v * v).sum::<f64>().sqrt() * proto.iter().map(|v| v * v).sum::<f64>().sqrt());
    let engine = forward_features(&outcome.params, &store.rows(&[0]).unwrap()).unwrap();
    let in_engine = cosine_similarity(engine.row(0), proto);
    assert!((offline - in_engine).abs() < 1e-9, "{offline} vs {in_engine}");
}

#[test]
fn export_command_uses_the_saved_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = tmp.path().join("out");
    assert_eq!(facl(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let file = tmp.path().join("emb.csv");
    let run = facl(&[
        "export-embeddings",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--file",
        file.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(&file).unwrap();
    // 4 base + 2 incremental classes, 16 train + 5 test samples each.
    assert_eq!(text.lines().count(), 1 + 6 * 21);
    let params = read_checkpoint(&out.join("model.facl")).unwrap();
    assert_eq!(params.classifier_width(), 12);
}
