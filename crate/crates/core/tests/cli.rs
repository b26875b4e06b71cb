use std::fs;
use std::path::Path;

use mmrs::cli::main_with;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["mmrs"];
    argv.extend_from_slice(args);
    main_with(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str) {
    let code = run(&[
        "simulate", "--out", s(dir), "--users", "5,4", "--items", "6,3", "--k", "3", "--stages", "2",
        "--observed", "150", "--seed", seed,
    ]);
    assert_eq!(code, 0);
}

#[test]
fn simulate_train_predict_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "3");
    for f in ["schema.toml", "users.csv", "items.csv", "interactions.csv", "truth.json", "sigma.txt"] {
        assert!(data.join(f).exists(), "{f} missing");
    }
    let model = tmp.path().join("model.json");
    assert_eq!(run(&["--threads", "1", "train", "--data", s(&data), "--out", s(&model), "--k", "3", "--max-iter", "10"]), 0);
    assert!(tmp.path().join("model.json.trace").exists());

    let report = tmp.path().join("report.json");
    assert_eq!(run(&["evaluate", "--data", s(&data), "--model", s(&model), "--out", s(&report)]), 0);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["inconsistency_rate"].as_f64(), Some(0.0));
    assert_eq!(json["pairs"].as_array().unwrap().len(), 3);
    assert!(tmp.path().join("report.json.csv").exists());

    let preds = tmp.path().join("preds.csv");
    assert_eq!(run(&["predict", "--data", s(&data), "--model", s(&model), "--pairs", "0:1,1:2", "--out", s(&preds)]), 0);
    let text = fs::read_to_string(&preds).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(&header[..2], &["i", "j"]);
    assert_eq!(header.len(), 2 + 3 * 2);
    assert_eq!(text.lines().count(), 151);
}

#[test]
fn tune_with_a_single_point_matches_train() {
    let tmp = tempfile::tempdir().unwrap();
    let (train, val) = (tmp.path().join("train"), tmp.path().join("val"));
    simulate(&train, "5");
    simulate(&val, "5");
    let fit = ["--k", "2", "--max-iter", "5", "--lambda1", "0.001", "--lambda2", "0.1", "--lambda3", "0.0001"];
    let trained = tmp.path().join("trained.json");
    let mut args = vec!["--threads", "1", "train", "--data", s(&train), "--out", s(&trained)];
    args.extend_from_slice(&fit);
    assert_eq!(run(&args), 0);
    let tuned = tmp.path().join("tuned.json");
    let mut args = vec![
        "--threads", "1", "tune", "--data", s(&train), "--val", s(&val), "--grid", "l1=0.001;l2=0.1;l3=0.0001", "--out",
        s(&tuned),
    ];
    args.extend_from_slice(&fit);
    assert_eq!(run(&args), 0);
    assert_eq!(fs::read(&trained).unwrap(), fs::read(&tuned).unwrap());
    assert!(tmp.path().join("tuned.json.scores.csv").exists());
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "1");
    let missing = tmp.path().join("nope.json");
    let out = tmp.path().join("r.json");
    assert_eq!(run(&["evaluate", "--data", s(&data), "--model", s(&missing), "--out", s(&out)]), 3);

    let corrupt = tmp.path().join("corrupt.json");
    fs::write(&corrupt, "{\"format\": \"mmrs-model\", \"version\": 1, \"model\": 7}").unwrap();
    assert_eq!(run(&["evaluate", "--data", s(&data), "--model", s(&corrupt), "--out", s(&out)]), 8);

    let bad_pairs = tmp.path().join("p.csv");
    let model = tmp.path().join("m.json");
    assert_eq!(run(&["train", "--data", s(&data), "--out", s(&model), "--method", "standard"]), 0);
    assert_ne!(run(&["predict", "--data", s(&data), "--model", s(&model), "--pairs", "2:1", "--out", s(&bad_pairs)]), 0);
    assert_ne!(run(&["train", "--bogus"]), 0);
}
