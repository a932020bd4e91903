mod common;

use std::process::{Command, Output};

use domgen::formats::dgim::load_dgim;
use domgen::formats::idx::encode_idx;
use domgen_core::data::{digit_class_names, LabeledImageSet};

fn domgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_domgen")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn gradcheck_reports_every_op() {
    let o = domgen(&["gradcheck", "--configs", "3", "--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().all(|l| l.ends_with(" ok")), "{text}");
}

#[test]
fn converts_csv_and_idx() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("in.csv");
    std::fs::write(&csv, "label,p0,p1,p2,p3\n1,0,255,7,8\n0,9,9,9,9\n").unwrap();
    let out = dir.path().join("from_csv.dgim");
    let o = domgen(&[
        "convert", "--from", "csv", "--input", csv.to_str().unwrap(), "--output", out.to_str().unwrap(),
        "--shape", "1,2,2", "--classes", "no,yes",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let set = load_dgim(&out).unwrap();
    assert_eq!(set.labels(), &[1, 0]);
    assert_eq!(set.class_names(), &["no".to_string(), "yes".to_string()]);

    let digits = LabeledImageSet::new(1, 2, 3, (0..12).collect(), vec![4, 9], digit_class_names()).unwrap();
    let (im, lb) = encode_idx(&digits).unwrap();
    let (ip, lp) = (dir.path().join("im.idx"), dir.path().join("lb.idx"));
    std::fs::write(&ip, im).unwrap();
    std::fs::write(&lp, lb).unwrap();
    let out = dir.path().join("from_idx.dgim.gz");
    let o = domgen(&["convert", "--from", "idx", "--input", ip.to_str().unwrap(), lp.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(load_dgim(&out).unwrap(), digits);

    let o = domgen(&["convert", "--from", "idx", "--input", ip.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn table_renders_markdown_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    std::fs::write(&csv, "row_name,s_train,s_val,t\nmodel 1,0.900,0.800,0.700\nmodel 2,0.800,0.700,0.600\nEnA,0.950,0.850,0.750\n").unwrap();
    let o = domgen(&["table", "--results", csv.to_str().unwrap(), "--summary"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("| **EnA** | 0.950 | 0.850 | 0.750 |"), "{text}");
    assert!(text.contains("vs mean +0.1000"), "{text}");

    let o = domgen(&["table", "--results", dir.path().join("nope.csv").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
}

#[test]
fn run_reads_a_config_with_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    common::write_pair(dir.path(), 200, 60);
    let config = r#"{
        "source": {"id": "mnist", "paths": ["source.dgim"]},
        "target": {"id": "usps", "paths": ["target.dgim"]},
        "num_models": 2,
        "train": {"epochs": 1, "batch_size": 32},
        "learners": ["base", "ena", "lr"],
        "linear": {"epochs": 1},
        "output": {"dir": "ignored", "name": "cli"}
    }"#;
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, config).unwrap();
    let out = dir.path().join("elsewhere");
    let o = domgen(&["run", "--config", cfg.to_str().unwrap(), "--quiet", "--single-context", "--out-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("| **EnA** |"));
    let csv = std::fs::read_to_string(out.join("cli.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);

    std::fs::write(&cfg, r#"{"source": {"id": "mnist", "paths": ["a"]}, "target": {"id": "mnist", "paths": ["b"]}}"#).unwrap();
    let o = domgen(&["run", "--config", cfg.to_str().unwrap(), "--quiet"]);
    assert!(!o.status.success());
}
