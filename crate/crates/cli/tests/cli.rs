use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use keypose::codec::{Codec, CodecConfig, Frame, TokenSequence, VOCAB_SIZE};
use keypose::decoder::{LogitDump, Mode, Scorer, SyntheticScorer};

fn keypose(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keypose"))
        .args(args)
        .current_dir(dir)
        .env_remove("KEYPOSE_SEED")
        .output()
        .expect("binary runs")
}

fn keypose_env(args: &[&str], dir: &Path, seed: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_keypose"))
        .args(args)
        .current_dir(dir)
        .env("KEYPOSE_SEED", seed)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn jsonl(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn gen(dir: &Path, name: &str, seed: &str) -> Value {
    let args = [
        "gen-dataset",
        "--out",
        name,
        "--num-scenes",
        "10",
        "--seed",
        seed,
        "--no-images",
    ];
    serde_json::from_str(ok(&keypose(&args, dir)).trim()).unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(keypose(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(
        keypose(&["gen-dataset", "--num-scenes", "x"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(keypose(&["gen-dataset"], dir.path()).status.code(), Some(1));
    assert_eq!(keypose(&["--help"], dir.path()).status.code(), Some(0));
    let bad = keypose_env(&["gen-dataset", "--out", "x"], dir.path(), "abc");
    assert_eq!(bad.status.code(), Some(1));
    assert!(stderr(&bad).contains("KEYPOSE_SEED"));
}

#[test]
fn gen_dataset_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = gen(dir.path(), "a", "4");
    let b = gen(dir.path(), "b", "4");
    assert_eq!(a["num_records"], 10);
    assert_eq!(a["records_sha256"], b["records_sha256"]);
    assert_eq!(
        fs::read(dir.path().join("a/records.jsonl")).unwrap(),
        fs::read(dir.path().join("b/records.jsonl")).unwrap()
    );
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 4);
    assert_eq!(manifest["config_sha256"], a["config_sha256"]);
    let c = gen(dir.path(), "c", "5");
    assert_ne!(a["records_sha256"], c["records_sha256"]);
}

#[test]
fn gen_dataset_unwritable_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("file"), "x").unwrap();
    let out = keypose(
        &["gen-dataset", "--out", "file/sub", "--num-scenes", "2", "--no-images"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("file/sub"), "{}", stderr(&out));
}

#[test]
fn config_precedence_and_seed_env() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        "num_scenes = 3\nwrite_images = false\n[scene]\nwidth = 200\n",
    )
    .unwrap();
    let run = |extra: &[&str], seed: Option<&str>| -> Value {
        let mut args = vec!["gen-dataset", "--config", "run.toml", "--out", "d"];
        args.extend_from_slice(extra);
        let out = match seed {
            Some(s) => keypose_env(&args, dir.path(), s),
            None => keypose(&args, dir.path()),
        };
        serde_json::from_str(ok(&out).trim()).unwrap()
    };
    let s = run(&[], None);
    assert_eq!(s["config"]["num_scenes"], 3);
    assert_eq!(s["config"]["scene"]["width"], 200);
    assert_eq!(s["config"]["scene"]["height"], 240);
    assert_eq!(s["config"]["seed"], 0);
    let s = run(&["--num-scenes", "2"], Some("9"));
    assert_eq!(s["config"]["num_scenes"], 2);
    assert_eq!(s["config"]["seed"], 9);
    let s = run(&["--seed", "1"], Some("9"));
    assert_eq!(s["config"]["seed"], 1);
    // A seed in the file beats the environment.
    fs::write(
        dir.path().join("run.toml"),
        "num_scenes = 2\nseed = 7\nwrite_images = false\n",
    )
    .unwrap();
    assert_eq!(run(&[], Some("9"))["config"]["seed"], 7);

    fs::write(dir.path().join("bad.toml"), "num_scene = 2\n").unwrap();
    let out = keypose(&["gen-dataset", "--config", "bad.toml", "--out", "d"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("num_scene"));
}

#[test]
fn encode_roundtrips_records_and_token_strings() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "ds", "4");
    let out = jsonl(&ok(&keypose(
        &["encode", "--input", "ds/records.jsonl", "--output", "enc.jsonl"],
        dir.path(),
    )));
    assert!(out.is_empty(), "output goes to the file");
    let enc = jsonl(&fs::read_to_string(dir.path().join("enc.jsonl")).unwrap());
    assert_eq!(enc[0]["config"]["codec"]["frame"], "image");
    assert_eq!(enc.len(), 11);

    // Tokens match the dataset's own image-frame tokens.
    let records = jsonl(&fs::read_to_string(dir.path().join("ds/records.jsonl")).unwrap());
    for (r, e) in records.iter().zip(&enc[1..]) {
        assert_eq!(r["tokens"]["image"], e["tokens"]);
        assert_eq!(r["scene_id"], e["id"]);
    }

    // Decoding the token strings (with cameras) reproduces the same lines.
    let lines: Vec<String> = records
        .iter()
        .zip(&enc[1..])
        .map(|(r, e)| serde_json::json!({"id": e["id"], "tokens": e["tokens"], "camera": r["camera"]}).to_string())
        .collect();
    fs::write(dir.path().join("tok.jsonl"), lines.join("\n")).unwrap();
    let dec = jsonl(&ok(&keypose(&["encode", "--input", "tok.jsonl"], dir.path())));
    assert_eq!(&dec[1..], &enc[1..]);

    // Robot frame: a bin-center trajectory encodes to itself.
    let codec = Codec::new(CodecConfig {
        frame: Frame::Robot,
        ..CodecConfig::default()
    })
    .unwrap();
    let toks: TokenSequence =
        "<loc0600><loc0500><loc0520> <seg064><seg064><seg032> <loc0650><loc0450><loc0560> <seg064><seg064><seg032>"
            .parse()
            .unwrap();
    let traj = codec.decode_trajectory(&toks.0, None).unwrap();
    fs::write(
        dir.path().join("r.jsonl"),
        serde_json::json!({"trajectory": traj}).to_string(),
    )
    .unwrap();
    let r = jsonl(&ok(&keypose(
        &["encode", "--input", "r.jsonl", "--frame", "robot"],
        dir.path(),
    )));
    assert_eq!(r[1]["tokens"], toks.to_string());

    // Out-of-range and malformed inputs are data errors naming the line.
    fs::write(dir.path().join("bad.jsonl"), "\n{\"tokens\": \"<loc0001>\"}\n").unwrap();
    let out = keypose(&["encode", "--input", "bad.jsonl", "--frame", "robot"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bad.jsonl:2"), "{}", stderr(&out));
}

fn write_dump(path: &Path, scorer: &SyntheticScorer, steps: usize) {
    let rows = (0..steps)
        .map(|k| {
            // Off-band tokens have zero probability; the format needs finite logits.
            scorer
                .score(&vec![0; k])
                .unwrap()
                .into_iter()
                .map(|v| v.max(-1e4) as f32)
                .collect()
        })
        .collect();
    LogitDump::new(VOCAB_SIZE, rows).unwrap().write_file(path).unwrap();
}

#[test]
fn decode_logits_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let codec = Codec::new(CodecConfig::default()).unwrap();
    let grammar = codec.trajectory_grammar();

    // Delta peaks: greedy returns the peak sequence.
    let peaks = [
        10u32,
        20,
        30,
        1024 + 5,
        1024 + 40,
        1024 + 7,
        900,
        800,
        700,
        1024 + 120,
        1024 + 90,
        1024,
    ];
    let rows: Vec<Vec<f32>> = peaks
        .iter()
        .map(|&p| {
            let mut r = vec![0.0f32; VOCAB_SIZE];
            r[p as usize] = 30.0;
            r
        })
        .collect();
    LogitDump::new(VOCAB_SIZE, rows.clone())
        .unwrap()
        .write_file(dir.path().join("delta.lgtd"))
        .unwrap();
    let out = jsonl(&ok(&keypose(
        &["decode-logits", "--dump", "delta.lgtd", "--strategy", "greedy"],
        dir.path(),
    )));
    assert_eq!(out.len(), 2);
    let want = TokenSequence::from_ids(&peaks).unwrap().to_string();
    assert_eq!(out[1]["tokens"], want);
    assert!(out[1].get("trajectory").is_none(), "image frame without a camera");
    assert_eq!(out[0]["config"]["strategy"], "greedy");

    // Bimodal first step: beam-NMS covers both modes.
    let scorer = SyntheticScorer::random_unimodal(&grammar, VOCAB_SIZE, 2)
        .with_modes(0, vec![Mode::new(200.0, 5.0, 0.6), Mode::new(600.0, 5.0, 0.4)]);
    write_dump(&dir.path().join("bi.lgtd"), &scorer, 12);
    let out = jsonl(&ok(&keypose(
        &[
            "decode-logits",
            "--dump",
            "bi.lgtd",
            "--strategy",
            "beam-nms",
            "--n",
            "3",
        ],
        dir.path(),
    )));
    let firsts: Vec<u32> = out[1..]
        .iter()
        .map(|b| b["tokens"].as_str().unwrap().parse::<TokenSequence>().unwrap().ids()[0])
        .collect();
    assert!(firsts.iter().any(|&t| t.abs_diff(200) <= 2), "{firsts:?}");
    assert!(firsts.iter().any(|&t| t.abs_diff(600) <= 2), "{firsts:?}");
    let plain = jsonl(&ok(&keypose(
        &["decode-logits", "--dump", "bi.lgtd", "--strategy", "beam", "--n", "3"],
        dir.path(),
    )));
    assert_eq!(plain.len(), 4);

    // Sampling is reproducible for a seed.
    let args = [
        "decode-logits",
        "--dump",
        "bi.lgtd",
        "--strategy",
        "sample",
        "--n",
        "4",
        "--seed",
        "3",
    ];
    assert_eq!(ok(&keypose(&args, dir.path())), ok(&keypose(&args, dir.path())));

    // Truncated dumps name the missing step.
    LogitDump::new(VOCAB_SIZE, rows[..7].to_vec())
        .unwrap()
        .write_file(dir.path().join("short.lgtd"))
        .unwrap();
    let out = keypose(&["decode-logits", "--dump", "short.lgtd"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("step 7"), "{}", stderr(&out));
    let mut bytes = fs::read(dir.path().join("delta.lgtd")).unwrap();
    bytes.truncate(bytes.len() - 10);
    fs::write(dir.path().join("cut.lgtd"), bytes).unwrap();
    let out = keypose(&["decode-logits", "--dump", "cut.lgtd"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("step 11"), "{}", stderr(&out));
}

fn traj_json(x: f64) -> Value {
    serde_json::json!([
        {"pose": {"position": [x, 0.0, 0.02], "orientation": [1.0, 0.0, 0.0, 0.0]}, "gripper": "grasp"},
        {"pose": {"position": [0.4, 0.1, 0.05], "orientation": [1.0, 0.0, 0.0, 0.0]}, "gripper": "release"}
    ])
}

fn write_lines(path: &Path, lines: &[Value]) {
    let text: Vec<String> = lines.iter().map(|v| v.to_string()).collect();
    fs::write(path, text.join("\n") + "\n").unwrap();
}

#[test]
fn eval_reports() {
    let dir = tempfile::tempdir().unwrap();
    let gt: Vec<Value> = (0..3)
        .map(|i| serde_json::json!({"episode_id": format!("e{i}"), "trajectory": traj_json(0.3)}))
        .collect();
    write_lines(&dir.path().join("gt.jsonl"), &gt);
    let exact: Vec<Value> = (0..3)
        .map(|i| serde_json::json!({"episode_id": format!("e{i}"), "trajectory": traj_json(0.3), "confidence": -1.0}))
        .collect();
    write_lines(&dir.path().join("exact.jsonl"), &exact);
    let doc: Value = serde_json::from_str(&ok(&keypose(
        &[
            "eval",
            "--predictions",
            "exact.jsonl",
            "--ground-truth",
            "gt.jsonl",
            "--out-dir",
            "r1",
        ],
        dir.path(),
    )))
    .unwrap();
    assert_eq!(doc["report"]["map"], 1.0);
    let csv = fs::read_to_string(dir.path().join("r1/pr.csv")).unwrap();
    assert!(csv.starts_with("threshold_cm,recall,precision,confidence_cut"));
    let saved: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("r1/report.json")).unwrap()).unwrap();
    assert_eq!(saved, doc);

    // A confident miss followed by a hit: AP 0.5 at 5 cm.
    write_lines(&dir.path().join("gt1.jsonl"), &gt[..1]);
    write_lines(
        &dir.path().join("half.jsonl"),
        &[
            serde_json::json!({"episode_id": "e0", "trajectory": traj_json(1.3), "confidence": -1.0}),
            serde_json::json!({"episode_id": "e0", "trajectory": traj_json(0.3), "confidence": -2.0}),
        ],
    );
    let doc: Value = serde_json::from_str(&ok(&keypose(
        &[
            "eval",
            "--predictions",
            "half.jsonl",
            "--ground-truth",
            "gt1.jsonl",
            "--out-dir",
            "r2",
            "--thresholds",
            "5",
        ],
        dir.path(),
    )))
    .unwrap();
    assert_eq!(doc["report"]["per_threshold"][0]["threshold_cm"], 5.0);
    assert_eq!(doc["report"]["per_threshold"][0]["ap"], 0.5);

    // Mismatched ids.
    write_lines(
        &dir.path().join("stray.jsonl"),
        &[serde_json::json!({"episode_id": "zzz", "trajectory": traj_json(0.3), "confidence": 0.0})],
    );
    let out = keypose(
        &[
            "eval",
            "--predictions",
            "stray.jsonl",
            "--ground-truth",
            "gt.jsonl",
            "--out-dir",
            "r3",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("UnmatchedEpisode") && stderr(&out).contains("zzz"),
        "{}",
        stderr(&out)
    );

    // Missing predictions are errors unless allowed.
    let args = [
        "eval",
        "--predictions",
        "half.jsonl",
        "--ground-truth",
        "gt.jsonl",
        "--out-dir",
        "r4",
    ];
    assert_eq!(keypose(&args, dir.path()).status.code(), Some(2));
    let mut allowed = args.to_vec();
    allowed.push("--allow-missing");
    ok(&keypose(&allowed, dir.path()));
}

#[test]
fn crop_maps_points() {
    let dir = tempfile::tempdir().unwrap();
    let img = image::RgbImage::from_fn(1280, 720, |x, y| image::Rgb([(x % 256) as u8, (y % 256) as u8, 0]));
    img.save(dir.path().join("in.png")).unwrap();
    let doc: Value = serde_json::from_str(&ok(&keypose(
        &[
            "crop", "--image", "in.png", "--out", "c.png", "--size", "700", "--point", "640,360", "--point", "300,100",
        ],
        dir.path(),
    )))
    .unwrap();
    assert_eq!(doc["points"][0]["crop_px"], serde_json::json!([112.0, 112.0]));
    let out = image::open(dir.path().join("c.png")).unwrap();
    assert_eq!((out.width(), out.height()), (224, 224));

    // Full-size identity crop of a square image keeps coordinates.
    image::RgbImage::new(224, 224).save(dir.path().join("sq.png")).unwrap();
    let doc: Value = serde_json::from_str(&ok(&keypose(
        &["crop", "--image", "sq.png", "--out", "s.png", "--point", "17.25,200.5"],
        dir.path(),
    )))
    .unwrap();
    assert_eq!(doc["points"][0]["crop_px"], serde_json::json!([17.25, 200.5]));

    // Midpoint mode without objects is a usage error; a window off the image
    // in valid mode is a data error.
    let out = keypose(
        &[
            "crop",
            "--image",
            "in.png",
            "--out",
            "x.png",
            "--center-mode",
            "midpoint",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = keypose(
        &[
            "crop",
            "--image",
            "in.png",
            "--out",
            "x.png",
            "--center-mode",
            "start-object",
            "--start=-900,10",
            "--size",
            "224",
            "--valid",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pair_sample_writes_prompts() {
    let dir = tempfile::tempdir().unwrap();
    let out = keypose(
        &[
            "gen-dataset",
            "--out",
            "ds",
            "--num-scenes",
            "300",
            "--seed",
            "1",
            "--no-images",
        ],
        dir.path(),
    );
    ok(&out);
    let run = |name: &str| {
        let doc: Value = serde_json::from_str(&ok(&keypose(
            &[
                "pair-sample",
                "--records",
                "ds/records.jsonl",
                "--out-dir",
                name,
                "--k",
                "3",
                "--seed",
                "2",
            ],
            dir.path(),
        )))
        .unwrap();
        doc
    };
    let doc = run("p1");
    assert_eq!(doc["num_prompts"], 3);
    run("p2");
    let a = fs::read(dir.path().join("p1/prompts.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("p2/prompts.jsonl")).unwrap());
    let records = jsonl(&String::from_utf8(a).unwrap());
    for (i, r) in records.iter().enumerate() {
        let text = fs::read_to_string(dir.path().join(format!("p1/prompts/{i:06}.txt"))).unwrap();
        assert_eq!(r["text"], text);
        assert!(text.starts_with("<demo_img:scene:"));
        assert_ne!(r["demo_scene_id"], r["query_scene_id"]);
    }
    let cfg: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("p1/config.json")).unwrap()).unwrap();
    assert_eq!(cfg["config"]["seed"], 2);

    let out = keypose(
        &[
            "pair-sample",
            "--records",
            "ds/records.jsonl",
            "--out-dir",
            "p3",
            "--k",
            "1000000",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("pairs"), "{}", stderr(&out));
}

#[test]
fn eval_matches_dataset_scene_ids() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "data", "3");
    let records = fs::read_to_string(dir.path().join("data/records.jsonl")).unwrap();
    let preds: Vec<Value> = jsonl(&records)
        .iter()
        .map(|r| serde_json::json!({"episode_id": r["scene_id"], "trajectory": r["trajectory"], "confidence": 0.5}))
        .collect();
    write_lines(&dir.path().join("preds.jsonl"), &preds);
    let args = [
        "eval",
        "--predictions",
        "preds.jsonl",
        "--ground-truth",
        "data/records.jsonl",
        "--out-dir",
        "report",
    ];
    let doc: Value = serde_json::from_str(&ok(&keypose(&args, dir.path()))).unwrap();
    assert_eq!(doc["report"]["map"], 1.0);
}

#[test]
fn closed_stdout_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_keypose"))
        .args(["gen-dataset", "--out", "data", "--num-scenes", "2", "--no-images"])
        .current_dir(dir.path())
        .env_remove("KEYPOSE_SEED")
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(!stderr(&out).contains("panicked"));
}
