use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use aegis_cli::{run, Io, EXIT_DOMAIN, EXIT_OK, EXIT_USAGE};
use serde_json::Value;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn aegis_with_stdin(args: &[&str], stdin: &str) -> Outcome {
    let mut input = Cursor::new(stdin.as_bytes().to_vec());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["aegis"];
    argv.extend_from_slice(args);
    let code = run(
        argv,
        Io {
            stdin: &mut input,
            stdout: &mut out,
            stderr: &mut err,
        },
    );
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn aegis(args: &[&str]) -> Outcome {
    aegis_with_stdin(args, "")
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/walkthrough")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../schemas/{name}.schema.json"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap()
}

fn assert_valid(name: &str, value: &Value) {
    let v = schema(name);
    let errors: Vec<String> = v.iter_errors(value).map(|e| format!("{e} at {}", e.instance_path())).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

/// A repository built from the walk-through corpus in a fresh directory.
fn repo() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let repo = dir.path().join("r.bin").to_string_lossy().into_owned();
    let out = aegis(&["--repo", &repo, "ingest", "--schema", &data("schema.json"), "--input", &data("corpus.jsonl")]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    assert_valid("ingest-summary", &serde_json::from_str(&out.stdout).unwrap());
    (dir, repo)
}

#[test]
fn evaluate_reports_the_strong_link() {
    let (_dir, repo) = repo();
    let out = aegis(&["--repo", &repo, "--profile", &data("profile.json"), "evaluate", "--topics", "#gowarriors"]);
    assert_eq!(out.code, EXIT_OK);
    let report: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_valid("inference-report", &report);
    let delta = report["sensitive"][0]["delta"].as_f64().unwrap();
    assert!((delta - 0.43).abs() < 1e-9);
    assert_eq!(report["sensitive"][0]["verdict"], "AttackSucceeds");

    let csv = aegis(&["--repo", &repo, "--profile", &data("profile.json"), "--format", "csv", "evaluate", "--topics", "gowarriors"]);
    assert_eq!(csv.stdout, "attr,k,threshold,delta,verdict,inferred_value\ngender,2,0.100000,0.430000,AttackSucceeds,male\n");
}

#[test]
fn suggest_and_classify_outputs() {
    let (_dir, repo) = repo();
    let base = ["--repo", repo.as_str(), "--profile", &data("profile.json")];
    let out = aegis(&[&base[..], &["suggest", "--topics", "gowarriors"]].concat());
    let set: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_valid("suggestion-set", &set);
    let topics: Vec<&str> = set["entries"].as_array().unwrap().iter().map(|e| e["topic"].as_str().unwrap()).collect();
    assert_eq!(topics, ["womenintech", "organicfood", "bodybuilding"]);

    let tree: Value = serde_json::from_str(&aegis(&[&base[..], &["classify"]].concat()).stdout).unwrap();
    assert_valid("tree", &tree);
    let placed = aegis(&[&base[..], &["classify", "--topic", "dallasmoms", "--format", "text"]].concat());
    assert_eq!(placed.stdout, "#dallasmoms -> black / tx / female\n");
}

#[test]
fn exit_codes_and_error_objects() {
    let (_dir, repo) = repo();
    let out = aegis(&["--repo", &repo, "--profile", &data("profile.json"), "evaluate", "--topics", "nosuch"]);
    assert_eq!(out.code, EXIT_DOMAIN);
    assert!(out.stdout.is_empty());
    let err: Value = serde_json::from_str(out.stderr.trim()).unwrap();
    assert_valid("error", &err);
    assert_eq!(err["error"], "UnknownTopic");
    assert_eq!(out.stderr.trim().lines().count(), 1);

    assert_eq!(aegis(&["evaluate", "--topics", "x"]).code, EXIT_USAGE);
    assert_eq!(aegis(&["frobnicate"]).code, EXIT_USAGE);
    assert_eq!(aegis(&["--format", "yaml", "evaluate", "--topics", "x"]).code, EXIT_USAGE);
    assert_eq!(aegis(&["generate", "--out", "x.jsonl"]).code, EXIT_USAGE);
    assert_eq!(aegis(&["--repo", &repo, "--format", "csv", "ingest", "--input", &data("corpus.jsonl")]).code, EXIT_USAGE);
    let help = aegis(&["--help"]);
    assert_eq!(help.code, EXIT_OK);
    assert!(help.stdout.contains("queue-drain"));
}

#[test]
fn config_file_supplies_defaults() {
    let (dir, repo) = repo();
    let config = dir.path().join("aegis.toml");
    std::fs::write(
        &config,
        format!(
            "repo = {repo:?}\nprofile = {:?}\nformat = \"csv\"\n[suggest]\nmax_candidates = 1\n",
            data("profile.json")
        ),
    )
    .unwrap();
    let cfg = config.to_string_lossy().into_owned();
    let out = aegis(&["--config", &cfg, "suggest", "--topics", "gowarriors"]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    assert_eq!(out.stdout.lines().count(), 2, "header plus one capped candidate");
    let out = aegis(&["--config", &cfg, "--format", "json", "suggest", "--topics", "gowarriors"]);
    assert!(out.stdout.trim_start().starts_with('{'), "flag beats config");

    std::fs::write(&config, "colour = \"blue\"\n").unwrap();
    assert_eq!(aegis(&["--config", &cfg, "suggest", "--topics", "x"]).code, EXIT_USAGE);
}

#[test]
fn session_walks_through_and_persists() {
    let (dir, repo) = repo();
    let queue = dir.path().join("queue.json").to_string_lossy().into_owned();
    let timeline = dir.path().join("timeline.json").to_string_lossy().into_owned();
    let script = "open #gowarriors | game night\nsuggest\naccept womenintech\nsuggest\naccept organicfood\n\
                  suggest\naccept bodybuilding\nfinalize\nqueue\nadversary\nwhat\nquit\n";
    let args = [
        "--repo", &repo, "--profile", &data("profile.json"), "--seed", "3",
        "session", "--now", "1000", "--queue", &queue, "--timeline", &timeline,
    ];
    let out = aegis_with_stdin(&args, script);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let replies: Vec<Value> = out.stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(replies.len(), 11);
    let states: Vec<&Value> = [0, 2, 4, 6, 7].iter().map(|&i| &replies[i]["state"]).collect();
    assert_eq!(states, ["Draft", "Draft", "Draft", "Satisfied", "Queued"]);
    for i in [0, 2, 4, 6] {
        assert_valid("session", &replies[i]);
    }
    for i in [1, 3, 5] {
        assert_valid("suggestion-set", &replies[i]);
    }
    assert_valid("finalize", &replies[7]);
    assert_valid("queue", &replies[8]);
    assert_valid("inference-report", &replies[9]);
    assert_valid("error", &replies[10]);

    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&queue).unwrap()).unwrap();
    assert_valid("queue-state", &saved);
    assert_eq!(saved["entries"].as_array().unwrap().len(), 4);

    // A second run sees the first group on its timeline.
    let out = aegis_with_stdin(&args, "open coffee\nfinalize\n");
    let replies: Vec<Value> = out.stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(replies[0]["session_id"], "s2");
    assert_eq!(replies[0]["evaluation"]["timeline"]["topics_used"].as_array().unwrap().len(), 5);

    let drained = aegis(&["queue-drain", "--queue", &queue, "--now", "1000000000"]);
    let summary: Value = serde_json::from_str(&drained.stdout).unwrap();
    assert_eq!(summary["released"], 5);
    assert_eq!(summary["remaining"], 0);
    assert!(summary["published"].as_array().unwrap().iter().all(|p| p.get("kind").is_none()));
}

#[test]
fn queue_drain_respects_the_clock() {
    let (dir, repo) = repo();
    let queue = dir.path().join("q.json").to_string_lossy().into_owned();
    let sink = dir.path().join("published.jsonl");
    aegis_with_stdin(
        &["--repo", &repo, "--profile", &data("profile.json"), "session", "--now", "0", "--queue", &queue],
        "open coffee\nfinalize\n",
    );
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&queue).unwrap()).unwrap();
    let due = saved["entries"][0]["scheduled_at"].as_i64().unwrap();
    let early = aegis(&["queue-drain", "--queue", &queue, "--now", &(due - 1).to_string(), "--out", &sink.to_string_lossy()]);
    assert_eq!(serde_json::from_str::<Value>(&early.stdout).unwrap()["released"], 0);
    assert!(!sink.exists());
    aegis(&["queue-drain", "--queue", &queue, "--now", &due.to_string(), "--out", &sink.to_string_lossy()]);
    let lines = std::fs::read_to_string(&sink).unwrap();
    assert_eq!(lines.lines().count(), 1);
    assert!(!lines.contains("Original"));
}

fn small_spec(dir: &Path) -> PathBuf {
    let spec = serde_json::json!({
        "schema": {"attributes": [
            {"id": "gender", "domain": ["male", "female"]},
            {"id": "location", "domain": ["ca", "tx", "ny", "fl"]}
        ]},
        "persona_weights": {"gender": {"male": 0.6, "female": 0.4}},
        "categories": [
            {"category": "weak", "count": 4, "delta": [0.12, 0.18]},
            {"category": "strong", "count": 4, "delta": [0.35, 0.5]}
        ],
        "posts_per_topic": [150, 250],
        "plan": {
            "persona": {"gender": "male", "location": "ca"},
            "sensitive": "location",
            "topics_per_value": 2,
            "delta": [0.2, 0.3]
        },
        "seed": 5
    });
    let path = dir.join("spec.json");
    assert_valid("generator-spec", &spec);
    std::fs::write(&path, spec.to_string()).unwrap();
    path
}

#[test]
fn generate_then_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let corpus = dir.path().join("c.jsonl");
    let out = aegis(&["generate", "--spec", &spec.to_string_lossy(), "--out", &corpus.to_string_lossy()]);
    assert_eq!(out.code, EXIT_OK, "{}", out.stderr);
    let summary: Value = serde_json::from_str(&out.stdout).unwrap();
    assert_eq!(summary["seed"], 5, "spec seed kept without --seed");
    assert_eq!(summary["calibrated"], summary["topics"]);
    for line in std::fs::read_to_string(&corpus).unwrap().lines().take(20) {
        assert_valid("labeled-post", &serde_json::from_str(line).unwrap());
    }

    let c = corpus.to_string_lossy().into_owned();
    let csv = aegis(&["experiment", "--corpus", &c, "--attr", "location", "--k", "3", "--category", "strong"]);
    assert_eq!(csv.code, EXIT_OK, "{}", csv.stderr);
    assert!(csv.stdout.starts_with(aegis_core::simgen::CSV_HEADER));
    let json = aegis(&["--format", "json", "experiment", "--corpus", &c, "--attr", "location", "--k", "3", "--category", "strong"]);
    let result: Value = serde_json::from_str(&json.stdout).unwrap();
    assert_valid("experiment-result", &result);
    assert_eq!(result["rows"].as_array().unwrap().len(), csv.stdout.lines().count() - 1);

    let sweep = aegis(&["experiment", "--corpus", &c, "--attr", "location", "--ks", "2,3", "--category", "strong"]);
    assert_eq!(sweep.stdout.matches("topic,category").count(), 1);
    let bad = aegis(&["experiment", "--corpus", &c, "--attr", "location", "--k", "3", "--category", "huge"]);
    assert_eq!(bad.code, EXIT_DOMAIN);
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path()).to_string_lossy().into_owned();
    let run_bin = |env: Option<&str>, extra: &[&str]| {
        let out = dir.path().join("c.jsonl").to_string_lossy().into_owned();
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_aegis"));
        cmd.env_remove("AEGIS_SEED");
        if let Some(v) = env {
            cmd.env("AEGIS_SEED", v);
        }
        let output = cmd.args(extra).args(["generate", "--spec", &spec, "--out", &out]).output().unwrap();
        assert!(output.status.success());
        serde_json::from_slice::<Value>(&output.stdout).unwrap()["seed"].clone()
    };
    assert_eq!(run_bin(None, &[]), 5);
    assert_eq!(run_bin(Some("11"), &[]), 11);
    assert_eq!(run_bin(Some("11"), &["--seed", "12"]), 12);
}

#[test]
fn shipped_inputs_validate() {
    for (name, file) in [("attribute-schema", "schema.json"), ("profile", "profile.json")] {
        let doc: Value = serde_json::from_str(&std::fs::read_to_string(data(file)).unwrap()).unwrap();
        assert_valid(name, &doc);
    }
    let spec: Value = serde_json::from_str(&aegis_core::simgen::presets::location_spec(1).to_json()).unwrap();
    assert_valid("generator-spec", &spec);
}
