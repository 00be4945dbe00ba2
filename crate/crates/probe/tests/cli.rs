use std::path::{Path, PathBuf};
use std::process::Command;

use probe::io::{read_checkpoint, read_dataset, write_checkpoint, write_dataset, Checkpoint, Predictor};
use probe::report::EvalReport;
use probe_core::dataset::Dataset;
use probe_core::eval::is_heldout;

const SMALL: &str = r#"
seed = 3
categories = ["easy", "medium"]
episodes = 40
[curation]
target = 30
[model]
preset = "desk"
embed_dim = 16
epochs = 2
"#;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn probe(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_probe")).current_dir(dir).args(args).output().unwrap();
    Run {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn ok(r: Run) -> Run {
    assert_eq!(r.code, 0, "stdout:\n{}\nstderr:\n{}", r.stdout, r.stderr);
    r
}

fn svgs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

#[test]
fn gen_is_deterministic_and_reports_each_category() {
    let ws = workspace();
    let d = ws.path();
    let r = ok(probe(d, &["gen", "--config", "small.toml", "--out", "a"]));
    assert!(r.stdout.contains("[easy]") && r.stdout.contains("[medium]"));
    ok(probe(d, &["gen", "--config", "small.toml", "--out", "b"]));
    let (ha, a) = read_dataset(&d.join("a/dataset.jsonl")).unwrap();
    let (hb, b) = read_dataset(&d.join("b/dataset.jsonl")).unwrap();
    assert_eq!((ha, a.clone()), (hb, b));
    assert_eq!(a.trajectories.len(), 60);
    let mut ids: Vec<u64> = a.trajectories.iter().map(|t| t.episode).collect();
    ids.dedup();
    assert_eq!(ids.len(), 60);
    let curation = std::fs::read_to_string(d.join("a/curation.txt")).unwrap();
    assert!(curation.contains("direct-movable"));

    ok(probe(d, &["gen", "--config", "small.toml", "--out", "c", "--seed", "6"]));
    assert_ne!(read_dataset(&d.join("c/dataset.jsonl")).unwrap().1, a);
}

#[test]
fn zero_episodes_give_an_empty_dataset() {
    let ws = workspace();
    ok(probe(ws.path(), &["gen", "--config", "small.toml", "--episodes", "0", "--out", "o"]));
    let (header, data) = read_dataset(&ws.path().join("o/dataset.jsonl")).unwrap();
    assert_eq!(header.count, 0);
    assert!(data.trajectories.is_empty());
}

#[test]
fn train_resumes_and_zero_epochs_pass_through() {
    let ws = workspace();
    let d = ws.path();
    ok(probe(d, &["gen", "--config", "small.toml", "--category", "easy", "--out", "o"]));
    let data = ["--dataset", "o/dataset.jsonl"];

    std::fs::write(d.join("two.toml"), SMALL).unwrap();
    ok(probe(d, &[&["train", "--config", "two.toml", "--out", "full"][..], &data].concat()));
    ok(probe(d, &[&["train", "--config", "two.toml", "--out", "half", "--stop-after", "1"][..], &data].concat()));
    ok(probe(
        d,
        &[&["train", "--config", "two.toml", "--out", "resumed", "--checkpoint", "half/checkpoint.json"][..], &data]
            .concat(),
    ));
    let state = |p: &str| match read_checkpoint(&d.join(p)).unwrap().predictor {
        Predictor::Orm(s) => *s,
        Predictor::Oracle => panic!("expected a trained model"),
    };
    assert_eq!(state("half/checkpoint.json").epochs_done, 1);
    let (full, resumed) = (state("full/checkpoint.json"), state("resumed/checkpoint.json"));
    assert_eq!(full.log.epochs.len(), 2);
    assert_eq!(resumed.log, full.log);
    assert_eq!(resumed.params.values, full.params.values);

    std::fs::write(d.join("zero.toml"), SMALL.replace("epochs = 2", "epochs = 0")).unwrap();
    ok(probe(d, &[&["train", "--config", "zero.toml", "--out", "zero"][..], &data].concat()));
    assert!(state("zero/checkpoint.json").log.epochs.is_empty());

    ok(probe(d, &[&["eval", "--config", "two.toml", "--out", "full"][..], &data].concat()));
    let report: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("full/report.json")).unwrap()).unwrap();
    let text = std::fs::read_to_string(d.join("full/report.txt")).unwrap();
    assert!(text.contains("(0.473)"));
    assert!(text.contains(&report.provenance.config_digest));
    assert_eq!(report.split.train + report.split.heldout, 30);
}

fn oracle_setup(d: &Path) {
    ok(probe(d, &["gen", "--config", "small.toml", "--out", "o"]));
    write_checkpoint(&d.join("oracle.json"), &Checkpoint::new("fixture", 3, Predictor::Oracle)).unwrap();
}

#[test]
fn oracle_checkpoint_scores_perfectly() {
    let ws = workspace();
    let d = ws.path();
    oracle_setup(d);
    ok(probe(d, &["eval", "--config", "small.toml", "--out", "o", "--checkpoint", "oracle.json"]));
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(d.join("o/report.json")).unwrap()).unwrap();
    assert!(!report.results.is_empty());
    assert!(report.results.iter().all(|r| r.iou_final == 1.0));
    assert_eq!(report.contact_accuracy, Some(1.0));
}

#[test]
fn empty_heldout_split_is_a_check_failure() {
    let ws = workspace();
    let d = ws.path();
    oracle_setup(d);
    let (_, mut data) = read_dataset(&d.join("o/dataset.jsonl")).unwrap();
    data.trajectories.retain(|t| !is_heldout(t.episode, 3));
    assert!(!data.trajectories.is_empty());
    write_dataset(&d.join("train_only.jsonl"), "x", &Dataset { stride: data.stride, ..data }).unwrap();
    let r = probe(d, &["eval", "--dataset", "train_only.jsonl", "--checkpoint", "oracle.json", "--out", "o"]);
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(r.stderr.contains("held-out split"));
}

fn polygons<'a>(svg: &'a str, class: &str) -> Vec<(usize, Vec<f64>)> {
    let tag = format!("class=\"{class}\" data-obstacle=\"");
    svg.lines()
        .filter_map(|l| {
            let rest = &l[l.find(&tag)? + tag.len()..];
            let id: usize = rest[..rest.find('"')?].parse().ok()?;
            let pts = &rest[rest.find("points=\"")? + 8..];
            let pts = &pts[..pts.find('"')?];
            Some((id, pts.split([' ', ',']).map(|v| v.parse().unwrap()).collect()))
        })
        .collect()
}

#[test]
fn oracle_frames_coincide_with_truth_and_repeat_bytewise() {
    let ws = workspace();
    let d = ws.path();
    oracle_setup(d);
    let (_, data) = read_dataset(&d.join("o/dataset.jsonl")).unwrap();
    let t = data.trajectories.iter().find(|t| !t.windows.is_empty()).unwrap();
    let id = t.episode.to_string();
    let args =
        ["render", "--out", "r1", "--dataset", "o/dataset.jsonl", "--checkpoint", "oracle.json", "--episode", &id];
    ok(probe(d, &[&args[..], &["--every", "7"]].concat()));
    let frames = svgs(&d.join("r1/frames"));
    assert_eq!(frames.len(), t.steps.len().div_ceil(7));
    let mut compared = 0;
    for f in &frames {
        let svg = std::fs::read_to_string(f).unwrap();
        let truth = [polygons(&svg, "truth movable"), polygons(&svg, "truth static")].concat();
        for (obstacle, pred) in [polygons(&svg, "pred movable"), polygons(&svg, "pred static")].concat() {
            let (_, truth) = truth.iter().find(|(i, _)| *i == obstacle).unwrap();
            let gap = truth.iter().zip(&pred).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(gap < 1e-6, "{}: obstacle {obstacle} off by {gap}", f.display());
            compared += 1;
        }
    }
    assert!(compared > 0);

    let second =
        ["render", "--out", "r2", "--dataset", "o/dataset.jsonl", "--checkpoint", "oracle.json", "--episode", &id];
    ok(probe(d, &[&second[..], &["--every", "7"]].concat()));
    for (a, b) in frames.iter().zip(svgs(&d.join("r2/frames"))) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    let len = t.steps.len().to_string();
    let once =
        ["render", "--out", "r3", "--dataset", "o/dataset.jsonl", "--episode", &id, "--every", &len, "--truth-only"];
    ok(probe(d, &once));
    let frames = svgs(&d.join("r3/frames"));
    assert_eq!(frames.len(), 1);
    let svg = std::fs::read_to_string(&frames[0]).unwrap();
    assert!(!svg.contains("class=\"pred"));
    assert!(svg.contains(&format!("tick {}", t.steps.last().unwrap().tick)));
}

#[test]
fn selftest_exit_codes() {
    let ws = workspace();
    let r = ok(probe(ws.path(), &["selftest"]));
    assert!(r.stdout.contains("all 5 checks passed"));
    let r = probe(ws.path(), &["selftest", "--inject-fault"]);
    assert_eq!(r.code, 1);
    assert!(r.stdout.contains("FAIL gradient-check"));
}

#[test]
fn usage_and_config_errors_exit_with_two() {
    let ws = workspace();
    let d = ws.path();
    std::fs::write(d.join("bad.toml"), "seeed = 1\n").unwrap();
    assert_eq!(probe(d, &["gen", "--config", "bad.toml"]).code, 2);
    assert_eq!(probe(d, &["gen", "--config", "missing.toml"]).code, 2);
    assert_eq!(probe(d, &["gen", "--stride", "0"]).code, 2);
    assert_eq!(probe(d, &["ablate", "--subset", "AZ"]).code, 2);
    assert_eq!(probe(d, &["frobnicate"]).code, 2);
    assert_eq!(probe(d, &["eval", "--out", "nothing"]).code, 2);
}
