mod common;

use common::*;
use l2i_core::reporting::{parse_csv, Metric};
use std::fs;

#[test]
fn validate_exit_codes() {
    let ws = Workspace::new(eval_records());
    let ok = l2i(&["--config", &ws.config(), "validate"]);
    assert_eq!(ok.code, 0, "{}", ok.stderr);
    assert!(ok.stdout.contains("6 records read, 6 accepted, 0 rejected"));

    let mut text = ws.read("annotations.jsonl");
    text.push_str("{\"id\":\"broken\"\n");
    fs::write(ws.path("annotations.jsonl"), text).unwrap();
    let bad = l2i(&["--config", &ws.config(), "validate"]);
    assert_eq!(bad.code, 1);
    assert!(bad.stdout.contains("line 7"), "{}", bad.stdout);

    let missing = l2i(&["validate", "--annotations", "/nonexistent/a.jsonl"]);
    assert_eq!(missing.code, 2);
}

#[test]
fn validate_eligible_reports_pair_counts() {
    let disjoint = record(
        "apart",
        None,
        vec![instance("a", None, [0.0, 0.0, 0.2, 0.2]), instance("b", None, [0.5, 0.5, 0.9, 0.9])],
        &[],
    );
    let mut records = eval_records();
    records.push(disjoint);
    let ws = Workspace::new(records);
    let out = l2i(&["--config", &ws.config(), "validate", "--eligible"]);
    assert_eq!(out.code, 1);
    assert!(out.stdout.contains("apart"), "{}", out.stdout);
}

#[test]
fn config_errors_exit_two() {
    let ws = Workspace::new(eval_records());
    fs::write(ws.path("bad.toml"), "[paths]\nannotation = \"x\"\n").unwrap();
    let out = l2i(&["--config", ws.path("bad.toml").to_str().unwrap(), "validate"]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("annotation"), "{}", out.stderr);

    let flag = l2i(&["validate", "--iou-min", "2"]);
    assert_eq!(flag.code, 2);
    assert_eq!(l2i(&["no-such-command"]).code, 2);
}

#[test]
fn print_config_resolves_relative_paths_and_flags() {
    let ws = Workspace::new(eval_records());
    let out = l2i(&["--config", &ws.config(), "--t-sr", "0.2", "--print-config"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let body: String = out.stdout.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let v: toml::Value = toml::from_str(&body).unwrap();
    let annotations = v["paths"]["annotations"].as_str().unwrap();
    assert_eq!(annotations, ws.path("annotations.jsonl").to_str().unwrap());
    assert_eq!(v["thresholds"]["simple_regular"].as_float(), Some(0.2));
    assert!(out.stdout.starts_with("# config_hash = "));
}

#[test]
fn env_url_sits_between_config_and_flags() {
    use clap::Parser;
    let ws = Workspace::new(eval_records());
    fs::write(
        ws.path("svc.toml"),
        "[embedding]\nservice_url = \"http://from-config\"\n",
    )
    .unwrap();
    let cfg_path = ws.path("svc.toml");
    let cfg_arg = cfg_path.to_str().unwrap();

    let cli = l2i_cli::Cli::parse_from(["l2i", "--config", cfg_arg, "validate"]);
    let cfg = l2i_cli::resolve_config(&cli, None).unwrap();
    assert_eq!(cfg.embedding.service_url.as_deref(), Some("http://from-config"));

    let cfg = l2i_cli::resolve_config(&cli, Some("http://from-env".into())).unwrap();
    assert_eq!(cfg.embedding.service_url.as_deref(), Some("http://from-env"));

    let cli = l2i_cli::Cli::parse_from(["l2i", "--config", cfg_arg, "--embed-url", "http://from-flag", "validate"]);
    let cfg = l2i_cli::resolve_config(&cli, Some("http://from-env".into())).unwrap();
    assert_eq!(cfg.embedding.service_url.as_deref(), Some("http://from-flag"));
}

#[test]
fn score_writes_provenance_and_buckets() {
    let ws = Workspace::new(eval_records());
    let out = l2i(&["--config", &ws.config(), "score"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let text = ws.read("out/scored.jsonl");
    let mut lines = text.lines();
    let prov: serde_json::Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(prov["provenance"]["command"], "score");
    assert_eq!(prov["provenance"]["inputs"].as_object().unwrap().len(), 2);
    assert_eq!(lines.count(), 6);
    assert!(out.stdout.contains("n=6"));
}

#[test]
fn score_fails_on_missing_embedding_without_output() {
    let ws = Workspace::new(eval_records());
    fs::write(ws.path("embeddings.tsv"), "#embeddings\tmodel=test\tdim=4\tencoding=base64\n").unwrap();
    let out = l2i(&["--config", &ws.config(), "score"]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("caption of"), "{}", out.stderr);
    assert!(!ws.path("out/scored.jsonl").exists());
}

fn cell(csv: &str, split: &str, metric: Metric) -> Option<(f64, f64)> {
    parse_csv(csv).unwrap().get(split, metric).map(|c| (c.mean, c.std))
}

#[test]
fn eval_perfect_and_empty() {
    let ws = Workspace::new(eval_records());
    ws.write_seeds(perfect_detection, "Yes");
    let out = l2i(&["--config", &ws.config(), "eval"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let csv = ws.read("out/report.csv");
    for split in ["simple", "regular", "complex"] {
        for m in [Metric::Miou, Metric::OMiou, Metric::SrE, Metric::SrR] {
            assert_eq!(cell(&csv, split, m), Some((1.0, 0.0)), "{split} {m:?}");
        }
    }
    // Records span three splits, so a pooled row follows.
    assert!(parse_csv(&csv).unwrap().rows.iter().any(|r| r.split == "all"));

    ws.write_seeds(empty_detection, "No");
    let out = l2i(&["--config", &ws.config(), "eval"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let csv = ws.read("out/report.csv");
    for m in [Metric::Miou, Metric::OMiou, Metric::SrE, Metric::SrR] {
        assert_eq!(cell(&csv, "simple", m), Some((0.0, 0.0)));
    }
}

#[test]
fn eval_skips_missing_seed_and_exits_one() {
    let ws = Workspace::new(eval_records());
    ws.write_seeds(perfect_detection, "Yes");
    fs::remove_file(ws.path("judge_20251203.jsonl")).unwrap();
    let out = l2i(&["--config", &ws.config(), "eval"]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("20251203"));
    let csv = ws.read("out/report.csv");
    let table = parse_csv(&csv).unwrap();
    assert_eq!(table.get("simple", Metric::Miou).unwrap().n_seeds, 2);
}

#[test]
fn eval_without_any_seed_is_an_error() {
    let ws = Workspace::new(eval_records());
    let out = l2i(&["--config", &ws.config(), "eval"]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("no seed"));
}

#[test]
fn eval_clip_scores_from_image_embeddings() {
    use l2i_core::embedding::{EmbeddingStore, PayloadEncoding};
    let ws = Workspace::new(eval_records());
    ws.write_seeds(perfect_detection, "Yes");
    let text = EmbeddingStore::load(ws.read("embeddings.tsv").as_bytes()).unwrap();
    for seed in SEEDS {
        // Image embedding equal to the caption embedding: cosine 1.
        let mut images = EmbeddingStore::new("test", 4);
        for r in &ws.records {
            let g = text.get(&r.global_caption).unwrap();
            images.insert(&r.id, g.values().to_vec()).unwrap();
            for i in &r.instances {
                let v = text.get(&i.caption).unwrap();
                images.insert(&format!("{}#{}", r.id, i.name), v.values().to_vec()).unwrap();
            }
        }
        images
            .write(fs::File::create(ws.path(&format!("img_{seed}.tsv"))).unwrap(), PayloadEncoding::Hex)
            .unwrap();
    }
    let out = l2i(&["--config", &ws.config(), "--image-embeddings", &ws.path("img_{seed}.tsv").to_string_lossy(), "eval"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let csv = ws.read("out/report.csv");
    let (g, _) = cell(&csv, "simple", Metric::ClipGlobal).unwrap();
    let (l, _) = cell(&csv, "simple", Metric::ClipLocal).unwrap();
    assert!((g - 100.0).abs() < 1e-4 && (l - 100.0).abs() < 1e-4, "{g} {l}");
}

#[test]
fn report_reaggregates_metrics_files() {
    let ws = Workspace::new(eval_records());
    ws.write_seeds(perfect_detection, "Yes");
    assert_eq!(l2i(&["--config", &ws.config(), "eval"]).code, 0);
    let metrics = ws.path("out/metrics.jsonl");
    let out = l2i(&["report", "--metrics", metrics.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(parse_csv(&out.stdout).unwrap(), parse_csv(&ws.read("out/report.csv")).unwrap());

    let text = l2i(&["report", "--metrics", metrics.to_str().unwrap(), "--fid", "--scores", ws.path("out/scored.jsonl").to_str().unwrap()]);
    assert_eq!(text.code, 2, "scored file is absent until `score` runs");
    assert_eq!(l2i(&["--config", &ws.config(), "score"]).code, 0);
    let text = l2i(&["report", "--metrics", metrics.to_str().unwrap(), "--fid", "--scores", ws.path("out/scored.jsonl").to_str().unwrap()]);
    assert_eq!(text.code, 0, "{}", text.stderr);
    assert!(text.stdout.contains("FID") && text.stdout.contains("n/a"));
    assert!(text.stdout.contains("100.00±0.00"));
    assert!(text.stdout.contains("buckets"));
}

#[test]
fn losses_check_on_fixtures() {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures");
    let out = l2i(&[
        "losses-check",
        "--fixture",
        &format!("{fixtures}/token_worked.txt"),
        "--fixture",
        &format!("{fixtures}/pixel_worked.txt"),
        "--trials",
        "10",
        "--mapping",
        "as-given",
    ]);
    assert_eq!(out.code, 0, "{}{}", out.stdout, out.stderr);
    assert!(out.stdout.contains("token=0.700000"), "{}", out.stdout);
    assert!(out.stdout.contains("pixel=0.164252"), "{}", out.stdout);
    let bad = l2i(&["losses-check", "--min-size", "5", "--max-size", "4"]);
    assert_eq!(bad.code, 2);
}
