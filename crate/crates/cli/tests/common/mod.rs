//! Fixture workspaces for driving the CLI end to end.
#![allow(dead_code)]

use l2i_core::annotations::{write_dataset, InstanceAnnotation, RelationshipAnnotation};
use l2i_core::embedding::{EmbeddingStore, PayloadEncoding};
use l2i_core::{BBox, Difficulty, ImageDims, LayoutRecord};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

pub const SEEDS: [&str; 3] = ["20251202", "20251203", "20251204"];

pub fn bbox(c: [f64; 4]) -> BBox {
    BBox::new(c[0], c[1], c[2], c[3]).unwrap()
}

pub fn instance(name: &str, category: Option<&str>, c: [f64; 4]) -> InstanceAnnotation {
    InstanceAnnotation {
        name: name.into(),
        category: category.map(String::from),
        caption: format!("caption of {name}"),
        bbox: bbox(c),
    }
}

pub fn record(
    id: &str,
    split: Option<Difficulty>,
    instances: Vec<InstanceAnnotation>,
    relationships: &[(&str, &str)],
) -> LayoutRecord {
    LayoutRecord {
        id: id.into(),
        global_caption: format!("scene {id}"),
        dims: ImageDims::new(512, 512).unwrap(),
        instances,
        relationships: relationships
            .iter()
            .map(|(s, o)| RelationshipAnnotation {
                subject: (*s).into(),
                object: (*o).into(),
                phrase: "next to".into(),
            })
            .collect(),
        split,
        image: None,
    }
}

/// Six overlapping layouts, two per split, each with one or two
/// relationships between intersecting boxes.
pub fn eval_records() -> Vec<LayoutRecord> {
    let mut out = Vec::new();
    for (k, split) in Difficulty::ALL.iter().enumerate() {
        for j in 0..2 {
            let off = 0.05 * (k * 2 + j) as f64;
            out.push(record(
                &format!("{}{j}", split.as_str()),
                Some(*split),
                vec![
                    instance("cat", None, [0.1 + off, 0.1, 0.5 + off, 0.5]),
                    instance("dog", None, [0.3 + off, 0.3, 0.7 + off, 0.7]),
                    instance("toy", Some("cat"), [0.35, 0.05, 0.55, 0.4]),
                ],
                &[("cat", "dog"), ("toy", "cat")],
            ));
        }
    }
    out
}

/// Detection line reproducing every ground-truth box.
pub fn perfect_detection(r: &LayoutRecord, seed: &str) -> Value {
    let mut cats: BTreeMap<&str, Vec<[f64; 4]>> = BTreeMap::new();
    for i in &r.instances {
        cats.entry(i.category()).or_default().push(i.bbox.coords());
    }
    json!({"record_id": r.id, "seed": seed, "categories": cats})
}

pub fn empty_detection(r: &LayoutRecord, seed: &str) -> Value {
    json!({"record_id": r.id, "seed": seed, "categories": {}})
}

pub fn judgment(r: &LayoutRecord, seed: &str, verdict: &str) -> Value {
    let entities: BTreeMap<&str, &str> = r.instances.iter().map(|i| (i.name.as_str(), verdict)).collect();
    let rels: Vec<Value> = r
        .relationships
        .iter()
        .map(|x| json!({"subject": x.subject, "object": x.object, "verdict": verdict}))
        .collect();
    json!({"record_id": r.id, "seed": seed, "entities": entities, "relationships": rels})
}

pub fn write_lines(path: &Path, lines: &[Value]) {
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    fs::write(path, text).unwrap();
}

/// A directory holding annotations, caption embeddings and a config file
/// with seed-templated detection and judgment paths.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub records: Vec<LayoutRecord>,
}

impl Workspace {
    pub fn new(records: Vec<LayoutRecord>) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut f = fs::File::create(dir.path().join("annotations.jsonl")).unwrap();
        write_dataset(&mut f, &records).unwrap();
        let mut store = EmbeddingStore::new("test", 4);
        let mut captions: Vec<&str> = records
            .iter()
            .flat_map(|r| r.instances.iter().map(|i| i.caption.as_str()))
            .chain(records.iter().map(|r| r.global_caption.as_str()))
            .collect();
        captions.sort();
        captions.dedup();
        for (k, c) in captions.iter().enumerate() {
            let mut v = vec![0.1f32; 4];
            v[k % 4] = 1.0;
            store.insert(c, v).unwrap();
        }
        store
            .write(fs::File::create(dir.path().join("embeddings.tsv")).unwrap(), PayloadEncoding::Base64)
            .unwrap();
        fs::write(
            dir.path().join("l2i.toml"),
            "[paths]\nannotations = \"annotations.jsonl\"\nembeddings = \"embeddings.tsv\"\n\
             detections = \"det_{seed}.jsonl\"\njudgments = \"judge_{seed}.jsonl\"\noutput_dir = \"out\"\n",
        )
        .unwrap();
        Self { dir, records }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn config(&self) -> String {
        self.path("l2i.toml").to_string_lossy().into_owned()
    }

    /// Writes detections and judgments for every seed.
    pub fn write_seeds(&self, det: impl Fn(&LayoutRecord, &str) -> Value, verdict: &str) {
        for seed in SEEDS {
            let d: Vec<Value> = self.records.iter().map(|r| det(r, seed)).collect();
            let j: Vec<Value> = self.records.iter().map(|r| judgment(r, seed, verdict)).collect();
            write_lines(&self.path(&format!("det_{seed}.jsonl")), &d);
            write_lines(&self.path(&format!("judge_{seed}.jsonl")), &j);
        }
    }

    pub fn read(&self, name: &str) -> String {
        fs::read_to_string(self.path(name)).unwrap()
    }
}

pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn l2i(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let mut argv = vec!["l2i"];
    argv.extend_from_slice(args);
    let code = l2i_cli::run(argv, &mut out, &mut err);
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}
