//! End-to-end exercises of the command-line surface: every flag documented,
//! the synth → train → evaluate chain, error codes and determinism.

use std::path::Path;

use clap::Parser;
use egosocial_cli::{run, try_run, Cli, CliError};

fn args(parts: &[&str]) -> Vec<String> {
    let mut full = vec!["egosocial".to_string()];
    full.extend(parts.iter().map(|s| s.to_string()));
    full
}

fn run_ok(parts: &[&str]) {
    let code = run(args(parts));
    assert_eq!(code, 0, "command failed: {parts:?}");
}

#[test]
fn help_documents_every_flag() {
    let expected: &[(&str, &[&str])] = &[
        ("validate", &["--manifest"]),
        ("fit-distance", &["--manifest", "--calibration", "--out"]),
        ("build-series", &["--manifest", "--setting", "--q", "--variance", "--out"]),
        ("augment", &["--series", "--delta", "--sigma", "--seed", "--out"]),
        (
            "train",
            &[
                "--series",
                "--preset",
                "--learning-rate",
                "--momentum",
                "--dropout",
                "--batch-size",
                "--epochs",
                "--cells",
                "--no-standardize",
                "--seed",
                "--out",
                "--report",
            ],
        ),
        ("grid-search", &["--series", "--folds", "--samples", "--seed", "--out"]),
        ("evaluate", &["--model", "--manifest", "--out"]),
        ("detect", &["--model", "--manifest", "--out"]),
        ("categorize", &["--model", "--manifest", "--detections", "--out"]),
        ("cluster", &["--manifest", "--cutoff", "--detections", "--out"]),
        (
            "profile",
            &[
                "--events",
                "--manifest",
                "--detections",
                "--categorizations",
                "--clusters",
                "--days",
                "--person",
                "--out",
                "--events-out",
            ],
        ),
        ("temporal-map", &["--events", "--week", "--out", "--svg"]),
        (
            "synth",
            &[
                "--out",
                "--sequences",
                "--crowd-fraction",
                "--adversarial",
                "--expressive",
                "--people",
                "--formal-fraction",
                "--days",
                "--pool",
                "--descriptor-dim",
                "--embedding-dim",
                "--seed",
            ],
        ),
    ];
    use clap::CommandFactory;
    let mut command = Cli::command();
    command.build(); // propagate global flags into subcommands
    for (name, flags) in expected {
        let sub = command
            .get_subcommands_mut()
            .find(|c| c.get_name() == *name)
            .unwrap_or_else(|| panic!("missing subcommand {name}"));
        let help = sub.render_long_help().to_string();
        for flag in *flags {
            assert!(help.contains(flag), "{name} --help does not document {flag}\n{help}");
        }
        // The global --threads flag must be documented too.
        assert!(help.contains("--threads"), "{name} help lacks --threads");
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(args(&["no-such-command"])), 2);
    assert_eq!(run(args(&["validate"])), 2); // missing --manifest
    assert_eq!(run(args(&["--help"])), 0);
}

fn synth_corpus(dir: &Path, sequences: usize, seed: u64) {
    run_ok(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--sequences",
        &sequences.to_string(),
        "--crowd-fraction",
        "0.5",
        "--adversarial",
        "--expressive",
        "--descriptor-dim",
        "48",
        "--days",
        "5",
        "--seed",
        &seed.to_string(),
    ]);
}

#[test]
fn smoke_chain_synth_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth_corpus(&data, 14, 3);
    let manifest = data.join("manifest.json");
    run_ok(&["validate", "--manifest", manifest.to_str().unwrap()]);

    let series = dir.path().join("sid4.json");
    run_ok(&[
        "build-series",
        "--manifest",
        manifest.to_str().unwrap(),
        "--setting",
        "SID4",
        "--out",
        series.to_str().unwrap(),
    ]);

    let augmented = dir.path().join("sid4_aug.json");
    run_ok(&[
        "augment",
        "--series",
        series.to_str().unwrap(),
        "--delta",
        "2",
        "--seed",
        "7",
        "--out",
        augmented.to_str().unwrap(),
    ]);

    let model = dir.path().join("model.json");
    let report = dir.path().join("report.json");
    run_ok(&[
        "train",
        "--series",
        augmented.to_str().unwrap(),
        "--preset",
        "sid4",
        "--epochs",
        "20",
        "--seed",
        "11",
        "--out",
        model.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
    ]);
    assert!(model.exists());
    assert!(report.exists());

    let metrics = dir.path().join("metrics.json");
    run_ok(&[
        "evaluate",
        "--model",
        model.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        metrics.to_str().unwrap(),
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!(parsed["accuracy"].as_f64().unwrap() >= 0.0);

    let detections = dir.path().join("detections.json");
    run_ok(&[
        "detect",
        "--model",
        model.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        detections.to_str().unwrap(),
    ]);
    assert!(detections.exists());

    let distance = dir.path().join("distance.json");
    run_ok(&[
        "fit-distance",
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        distance.to_str().unwrap(),
    ]);
    assert!(distance.exists());

    // Degenerate one-candidate search keeps the subcommand exercised fast.
    let search = dir.path().join("search.json");
    run_ok(&[
        "grid-search",
        "--series",
        series.to_str().unwrap(),
        "--samples",
        "1",
        "--seed",
        "3",
        "--out",
        search.to_str().unwrap(),
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&search).unwrap()).unwrap();
    assert_eq!(parsed["table"]["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn train_without_labels_exits_1_and_names_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    // Half the corpus is crowd scenes, which carry no category label, so
    // SIC3 training data is partially unlabeled.
    synth_corpus(&data, 8, 5);
    let manifest = data.join("manifest.json");
    let series = dir.path().join("sic3.json");
    run_ok(&[
        "build-series",
        "--manifest",
        manifest.to_str().unwrap(),
        "--setting",
        "SIC3",
        "--out",
        series.to_str().unwrap(),
    ]);
    let model = dir.path().join("model.json");
    let argv = args(&[
        "train",
        "--series",
        series.to_str().unwrap(),
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_eq!(run(argv.clone()), 1);
    let cli = Cli::try_parse_from(argv).unwrap();
    match try_run(cli) {
        Err(CliError::Data(msg)) => {
            assert!(msg.contains("unlabeled"), "message: {msg}");
            assert!(msg.contains("seq_"), "message should name the sequence: {msg}");
        }
        other => panic!("expected data error, got {:?}", other.err().map(|e| e.to_string())),
    }
}

#[test]
fn detect_refuses_categorization_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run_ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--sequences",
        "8",
        "--crowd-fraction",
        "0",
        "--descriptor-dim",
        "48",
        "--seed",
        "2",
    ]);
    let manifest = data.join("manifest.json");
    let series = dir.path().join("sic1.json");
    run_ok(&[
        "build-series",
        "--manifest",
        manifest.to_str().unwrap(),
        "--setting",
        "SIC1",
        "--out",
        series.to_str().unwrap(),
    ]);
    let model = dir.path().join("model.json");
    run_ok(&[
        "train",
        "--series",
        series.to_str().unwrap(),
        "--epochs",
        "2",
        "--cells",
        "4",
        "--out",
        model.to_str().unwrap(),
    ]);
    let out = dir.path().join("detections.json");
    let code = run(args(&[
        "detect",
        "--model",
        model.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_eq!(code, 1);

    // The same bundle is fine for its own task.
    let categorized = dir.path().join("categorized.json");
    run_ok(&[
        "categorize",
        "--model",
        model.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        categorized.to_str().unwrap(),
    ]);
    assert!(categorized.exists());
}

#[test]
fn profile_reproduces_reference_statistics() {
    let dir = tempfile::tempdir().unwrap();
    // 25 formal + 75 informal events over 30 days.
    let mut events = Vec::new();
    for k in 0..100 {
        let category = if k < 25 { "formal" } else { "informal" };
        events.push(serde_json::json!({
            "sequence_id": format!("s{k:03}"),
            "day_index": (k % 30) + 1,
            "start_frame": 0,
            "end_frame": 49,
            "category": category,
            "participants": ["c000"],
            "frame_interval_s": 30.0,
        }));
    }
    let events_path = dir.path().join("events.json");
    std::fs::write(&events_path, serde_json::to_string(&events).unwrap()).unwrap();
    let out = dir.path().join("profile.json");
    run_ok(&[
        "profile",
        "--events",
        events_path.to_str().unwrap(),
        "--days",
        "30",
        "--out",
        out.to_str().unwrap(),
    ]);
    let profile: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!((profile["f_formal"].as_f64().unwrap() - 0.8333).abs() < 1e-4);
    assert!((profile["f_informal"].as_f64().unwrap() - 2.5).abs() < 1e-4);
    assert!((profile["a_formal"].as_f64().unwrap() - 0.25).abs() < 1e-9);
    assert!((profile["a_informal"].as_f64().unwrap() - 0.75).abs() < 1e-9);
    assert!((profile["diversity"].as_f64().unwrap() - 0.8774).abs() < 5e-3);

    // Person-specific profile via the participants filter.
    let person_out = dir.path().join("person.json");
    run_ok(&[
        "profile",
        "--events",
        events_path.to_str().unwrap(),
        "--days",
        "30",
        "--person",
        "c000",
        "--out",
        person_out.to_str().unwrap(),
    ]);

    let map_out = dir.path().join("map.json");
    let svg_out = dir.path().join("map.svg");
    run_ok(&[
        "temporal-map",
        "--events",
        events_path.to_str().unwrap(),
        "--week",
        "1",
        "--out",
        map_out.to_str().unwrap(),
        "--svg",
        svg_out.to_str().unwrap(),
    ]);
    let svg = std::fs::read_to_string(&svg_out).unwrap();
    assert!(svg.starts_with("<svg"));
    let map: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&map_out).unwrap()).unwrap();
    assert_eq!(map["days"].as_array().unwrap().len(), 7);
}

#[test]
fn full_pipeline_assembles_profile_and_map() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run_ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--sequences",
        "16",
        "--crowd-fraction",
        "0.5",
        "--adversarial",
        "--expressive",
        "--descriptor-dim",
        "48",
        "--pool",
        "4",
        "--days",
        "6",
        "--seed",
        "31",
    ]);
    let manifest = data.join("manifest.json");

    // Detection model on the mixed corpus; small fast hyperparameters.
    let sid4 = dir.path().join("sid4.json");
    run_ok(&[
        "build-series",
        "--manifest",
        manifest.to_str().unwrap(),
        "--setting",
        "SID4",
        "--out",
        sid4.to_str().unwrap(),
    ]);
    let detect_model = dir.path().join("detect.model.json");
    run_ok(&[
        "train",
        "--series",
        sid4.to_str().unwrap(),
        "--learning-rate",
        "0.3",
        "--momentum",
        "0.5",
        "--batch-size",
        "4",
        "--epochs",
        "40",
        "--cells",
        "8",
        "--seed",
        "5",
        "--out",
        detect_model.to_str().unwrap(),
    ]);
    let detections = dir.path().join("detections.json");
    run_ok(&[
        "detect",
        "--model",
        detect_model.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--out",
        detections.to_str().unwrap(),
    ]);

    // Categorization model trains on a crowd-free corpus (crowd scenes
    // carry no category label) and runs on the detected sequences.
    let cat_data = dir.path().join("cat_data");
    run_ok(&[
        "synth",
        "--out",
        cat_data.to_str().unwrap(),
        "--sequences",
        "12",
        "--crowd-fraction",
        "0",
        "--descriptor-dim",
        "48",
        "--pool",
        "4",
        "--days",
        "6",
        "--seed",
        "33",
    ]);
    let sic3 = dir.path().join("sic3.json");
    run_ok(&[
        "build-series",
        "--manifest",
        cat_data.join("manifest.json").to_str().unwrap(),
        "--setting",
        "SIC3",
        "--out",
        sic3.to_str().unwrap(),
    ]);
    let cat_model = dir.path().join("cat.model.json");
    run_ok(&[
        "train",
        "--series",
        sic3.to_str().unwrap(),
        "--learning-rate",
        "0.2",
        "--momentum",
        "0.5",
        "--batch-size",
        "4",
        "--epochs",
        "40",
        "--cells",
        "8",
        "--seed",
        "6",
        "--out",
        cat_model.to_str().unwrap(),
    ]);
    let categorized = dir.path().join("categorized.json");
    run_ok(&[
        "categorize",
        "--model",
        cat_model.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--detections",
        detections.to_str().unwrap(),
        "--out",
        categorized.to_str().unwrap(),
    ]);

    let clusters = dir.path().join("clusters.json");
    run_ok(&[
        "cluster",
        "--manifest",
        manifest.to_str().unwrap(),
        "--detections",
        detections.to_str().unwrap(),
        "--out",
        clusters.to_str().unwrap(),
    ]);

    let profile = dir.path().join("profile.json");
    let events = dir.path().join("events.json");
    run_ok(&[
        "profile",
        "--manifest",
        manifest.to_str().unwrap(),
        "--detections",
        detections.to_str().unwrap(),
        "--categorizations",
        categorized.to_str().unwrap(),
        "--clusters",
        clusters.to_str().unwrap(),
        "--out",
        profile.to_str().unwrap(),
        "--events-out",
        events.to_str().unwrap(),
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&profile).unwrap()).unwrap();
    // The synth ground truth holds 8 interacting sequences (4 formal, 4
    // informal) and the tiny models separate this corpus exactly.
    assert_eq!(parsed["event_count"], 8);
    assert_eq!(parsed["observation_days"], 6);
    assert!((parsed["a_formal"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(parsed["diversity"].as_f64().unwrap(), 1.0);

    // Assembled events feed the temporal map.
    let map = dir.path().join("map.json");
    let svg = dir.path().join("map.svg");
    run_ok(&[
        "temporal-map",
        "--events",
        events.to_str().unwrap(),
        "--out",
        map.to_str().unwrap(),
        "--svg",
        svg.to_str().unwrap(),
    ]);
    let map_doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&map).unwrap()).unwrap();
    assert!(!map_doc["days"].as_array().unwrap().is_empty());
    assert!(std::fs::read_to_string(&svg).unwrap().contains("</svg>"));
}

#[test]
fn cluster_calibrates_from_identities() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    run_ok(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--sequences",
        "10",
        "--crowd-fraction",
        "0",
        "--pool",
        "3",
        "--days",
        "4",
        "--seed",
        "9",
    ]);
    let out = dir.path().join("clusters.json");
    run_ok(&[
        "cluster",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(parsed["calibrated"], true);
    // Same-corpus calibration over-segments by design (the cutoff is the
    // median same-person dissimilarity), so precision is the strong side.
    assert!(parsed["pairwise"]["precision"].as_f64().unwrap() > 0.9);
    assert!(parsed["pairwise"]["f1"].as_f64().unwrap() > 0.45);
}

#[test]
fn seeded_commands_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    synth_corpus(&a, 8, 17);
    synth_corpus(&b, 8, 17);
    let bytes_a = std::fs::read(a.join("manifest.json")).unwrap();
    let bytes_b = std::fs::read(b.join("manifest.json")).unwrap();
    assert_eq!(bytes_a, bytes_b);
    let seq_a = std::fs::read(a.join("sequences/seq_0000.jsonl")).unwrap();
    let seq_b = std::fs::read(b.join("sequences/seq_0000.jsonl")).unwrap();
    assert_eq!(seq_a, seq_b);

    for (out, threads) in [(dir.path().join("s1.json"), "1"), (dir.path().join("s8.json"), "8")] {
        run_ok(&[
            "--threads",
            threads,
            "build-series",
            "--manifest",
            a.join("manifest.json").to_str().unwrap(),
            "--setting",
            "SID4",
            "--out",
            out.to_str().unwrap(),
        ]);
    }
    let s1 = std::fs::read(dir.path().join("s1.json")).unwrap();
    let s8 = std::fs::read(dir.path().join("s8.json")).unwrap();
    assert_eq!(s1, s8);

    for (model, threads) in [(dir.path().join("m1.json"), "1"), (dir.path().join("m8.json"), "8")] {
        run_ok(&[
            "--threads",
            threads,
            "train",
            "--series",
            dir.path().join("s1.json").to_str().unwrap(),
            "--epochs",
            "4",
            "--cells",
            "6",
            "--seed",
            "23",
            "--out",
            model.to_str().unwrap(),
        ]);
    }
    let m1 = std::fs::read(dir.path().join("m1.json")).unwrap();
    let m8 = std::fs::read(dir.path().join("m8.json")).unwrap();
    assert_eq!(m1, m8);
}
