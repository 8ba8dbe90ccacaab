use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_valuekit"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "command failed: {}", stderr(&o));
    stdout(&o)
}

fn shipped_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_shape.toml")
}

/// Shipped config with fewer boosting rounds so the tests stay quick.
fn quick_config(dir: &Path) -> PathBuf {
    let text = fs::read_to_string(shipped_config())
        .unwrap()
        .replace("n_rounds = 300", "n_rounds = 25");
    let path = dir.join("quick.toml");
    fs::write(&path, text).unwrap();
    path
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    corpus: PathBuf,
    matrix: PathBuf,
    labels: PathBuf,
}

/// One small corpus and matrix shared by the tests that only read them.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let corpus = root.join("corpus");
        let out = ok(run(&[
            "gen-synthetic",
            "--out",
            corpus.to_str().unwrap(),
            "--companies",
            "300",
            "--seed",
            "5",
        ]));
        assert!(out.contains("companies: 300"), "{out}");
        let config = quick_config(&root);
        let matrix = root.join("matrix.csv");
        let out = ok(run(&[
            "features",
            "--config",
            config.to_str().unwrap(),
            "--corpus",
            corpus.to_str().unwrap(),
            "--out",
            matrix.to_str().unwrap(),
        ]));
        assert_eq!(out.trim(), "features: 436");
        Fixture {
            labels: corpus.join("labels.csv"),
            _dir: dir,
            root,
            config,
            corpus,
            matrix,
        }
    })
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn labelled(verb: &str, f: &Fixture, config: &Path, labels: &Path, out: &Path) -> Output {
    run(&[
        verb,
        "--config",
        s(config),
        "--matrix",
        s(&f.matrix),
        "--labels",
        s(labels),
        "--out",
        s(out),
    ])
}

#[test]
fn features_writes_the_full_matrix() {
    let f = fixture();
    let text = fs::read_to_string(&f.matrix).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 437);
    assert_eq!(text.lines().count(), 301);
}

#[test]
fn train_importance_predict_flow() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let out = ok(labelled("train", f, &f.config, &f.labels, &model));
    assert!(out.starts_with("training rmse: "), "{out}");

    let importance = dir.path().join("importance.csv");
    ok(run(&[
        "importance",
        "--model",
        s(&model),
        "--out",
        s(&importance),
    ]));
    let text = fs::read_to_string(&importance).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,feature,importance");
    assert_eq!(lines.len(), 11);
    let values: Vec<f64> = lines[1..]
        .iter()
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(values.windows(2).all(|w| w[0] >= w[1]));

    let predictions = dir.path().join("predictions.csv");
    let out = ok(run(&[
        "predict",
        "--model",
        s(&model),
        "--matrix",
        s(&f.matrix),
        "--out",
        s(&predictions),
    ]));
    assert_eq!(out.trim(), "predictions: 300");
    let text = fs::read_to_string(&predictions).unwrap();
    assert_eq!(text.lines().next(), Some("id,prediction"));
    assert_eq!(text.lines().count(), 301);
    assert!(text.lines().nth(1).unwrap().starts_with("C"));
}

#[test]
fn runs_are_byte_identical_across_worker_counts() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut models = Vec::new();
    for workers in ["1", "4", "1"] {
        let model = dir.path().join(format!("m{}.json", models.len()));
        let o = bin()
            .args([
                "--workers",
                workers,
                "train",
                "--config",
                s(&f.config),
                "--matrix",
                s(&f.matrix),
            ])
            .args(["--labels", s(&f.labels), "--out", s(&model)])
            .output()
            .unwrap();
        ok(o);
        models.push(fs::read(&model).unwrap());
    }
    assert_eq!(models[0], models[1]);
    assert_eq!(models[0], models[2]);

    // a different seed gives a different model
    let other = dir.path().join("other.json");
    ok(run(&[
        "train",
        "--config",
        s(&f.config),
        "--seed",
        "99",
        "--matrix",
        s(&f.matrix),
        "--labels",
        s(&f.labels),
        "--out",
        s(&other),
    ]));
    assert_ne!(fs::read(&other).unwrap(), models[0]);
}

#[test]
fn evaluate_prints_the_grid_and_writes_a_report() {
    let f = fixture();
    let report = f.root.join("report.json");
    let out = ok(labelled("evaluate", f, &f.config, &f.labels, &report));
    for row in ["depthwise", "leafwise", "stacking"] {
        assert!(out.lines().any(|l| l.starts_with(row)), "{out}");
    }
    assert!(
        out.contains("all features (436)") && out.contains("selected features (66)"),
        "{out}"
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["metric"], "rmse");
    assert_eq!(json["k"], 5);
    assert_eq!(json["rows"].as_array().unwrap().len(), 3);
    assert_eq!(json["selected_features"].as_array().unwrap().len(), 66);
}

#[test]
fn select_writes_ranked_list() {
    let f = fixture();
    let path = f.root.join("selection.tsv");
    let out = ok(labelled("select", f, &f.config, &f.labels, &path));
    assert_eq!(out.trim(), "kept: 66 of 436");
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next(), Some("rank\tfeature\timportance\tkept"));
    assert_eq!(text.lines().count(), 437);
    assert_eq!(text.lines().filter(|l| l.ends_with("\ttrue")).count(), 66);
}

#[test]
fn missing_corpus_file_fails() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(&f.corpus).unwrap() {
        let entry = entry.unwrap();
        if entry.file_name() != "patents.csv" {
            fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
    }
    let o = run(&[
        "features",
        "--config",
        s(&f.config),
        "--corpus",
        s(dir.path()),
        "--out",
        s(&dir.path().join("m.csv")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("patents.csv"), "{}", stderr(&o));
    assert!(!dir.path().join("m.csv").exists());
}

fn edited_config(find: &str, replace: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(shipped_config()).unwrap();
    assert!(text.contains(find));
    let path = dir.path().join("edited.toml");
    fs::write(&path, text.replacen(find, replace, 1)).unwrap();
    (dir, path)
}

#[test]
fn invalid_configs_are_rejected_before_work() {
    let f = fixture();
    let cases = [
        ("[cv]\nk = 5", "[cv]\nk = 1", "k ≥ 2"),
        (
            "[cv]\nk = 5",
            "[cv]\nk = 5\nshuffle = true",
            "unknown field",
        ),
        (
            "{ table = \"patents\", column = \"ROWS\"",
            "{ table = \"nope\", column = \"ROWS\"",
            "unknown table `nope`",
        ),
    ];
    for (find, replace, message) in cases {
        let (dir, config) = edited_config(find, replace);
        let out = dir.path().join("m.csv");
        let o = run(&[
            "features",
            "--config",
            s(&config),
            "--corpus",
            s(&f.corpus),
            "--out",
            s(&out),
        ]);
        assert!(!o.status.success());
        assert!(stderr(&o).contains(message), "{message}: {}", stderr(&o));
        assert!(!out.exists());
    }
}

#[test]
fn empty_plan_set_is_rejected() {
    let f = fixture();
    let text = fs::read_to_string(shipped_config()).unwrap();
    let start = text.find("plans = [").unwrap();
    let end = start + text[start..].find("\n]\n").unwrap() + 3;
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("empty.toml");
    fs::write(
        &config,
        format!("{}plans = []\n{}", &text[..start], &text[end..]),
    )
    .unwrap();
    let o = run(&[
        "features",
        "--config",
        s(&config),
        "--corpus",
        s(&f.corpus),
        "--out",
        s(&dir.path().join("m.csv")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("no plans configured"), "{}", stderr(&o));
}

#[test]
fn bad_labels_are_reported() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let original = fs::read_to_string(&f.labels).unwrap();
    let mut lines: Vec<String> = original.lines().map(str::to_string).collect();

    let mut broken = lines.clone();
    let id = broken[3].split(',').next().unwrap().to_string();
    broken[3] = format!("{id},abc");
    let path = dir.path().join("broken.csv");
    fs::write(&path, broken.join("\n")).unwrap();
    let o = labelled("train", f, &f.config, &path, &dir.path().join("m.json"));
    assert!(!o.status.success());
    assert!(
        stderr(&o).contains("row 3") && stderr(&o).contains("abc"),
        "{}",
        stderr(&o)
    );

    lines[5] = "X999,70".to_string();
    let path = dir.path().join("mismatch.csv");
    fs::write(&path, lines.join("\n")).unwrap();
    let o = labelled("train", f, &f.config, &path, &dir.path().join("m.json"));
    assert!(!o.status.success());
    assert!(stderr(&o).contains("X999"), "{}", stderr(&o));
}

#[test]
fn predict_handles_empty_and_foreign_matrices() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model.json");
    let mut config = fs::read_to_string(&f.config).unwrap();
    config = config.replace("train = \"stacking\"", "train = \"depthwise\"");
    let cfg = dir.path().join("depthwise.toml");
    fs::write(&cfg, config).unwrap();
    ok(labelled("train", f, &cfg, &f.labels, &model));

    let text = fs::read_to_string(&f.matrix).unwrap();
    let header = text.lines().next().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, format!("{header}\n")).unwrap();
    let out = dir.path().join("p.csv");
    let stdout = ok(run(&[
        "predict",
        "--model",
        s(&model),
        "--matrix",
        s(&empty),
        "--out",
        s(&out),
    ]));
    assert_eq!(stdout.trim(), "predictions: 0");
    assert_eq!(fs::read_to_string(&out).unwrap(), "id,prediction\n");

    let renamed = dir.path().join("renamed.csv");
    let mut cols: Vec<String> = header.split(',').map(str::to_string).collect();
    cols[1] = "mystery_col".into();
    let body: Vec<&str> = text.lines().skip(1).collect();
    fs::write(
        &renamed,
        format!("{}\n{}\n", cols.join(","), body.join("\n")),
    )
    .unwrap();
    let o = run(&[
        "predict",
        "--model",
        s(&model),
        "--matrix",
        s(&renamed),
        "--out",
        s(&dir.path().join("q.csv")),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("mystery_col"), "{}", stderr(&o));
}

#[test]
fn output_path_is_required() {
    let f = fixture();
    let (dir, config) = edited_config("matrix = \"out/matrix.csv\"\n", "");
    let o = run(&["features", "--config", s(&config), "--corpus", s(&f.corpus)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--out"), "{}", stderr(&o));
    drop(dir);
}
