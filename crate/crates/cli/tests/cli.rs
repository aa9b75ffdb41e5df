use std::path::Path;
use std::process::{Command, Output};

use icx_core::corpus::{Corpus, LabeledExample, Split};
use icx_core::scoring::oracle::{make_oracle, OracleConfig, OracleKind};
use icx_netbackend::testkit::{error_body, FakeServer};

fn icx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icx"))
        .args(args)
        .env_remove("ICX_SERVER_URL")
        .env_remove("ICX_API_KEY")
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_corpus(dir: &Path, language: &str) -> std::path::PathBuf {
    let mut examples = Vec::new();
    for (li, label) in ["alarm", "music", "weather"].iter().enumerate() {
        for i in 0..6 {
            for split in [Split::Train, Split::Test] {
                examples.push(LabeledExample {
                    id: format!("{language}-{split}-{label}-{i}"),
                    text: format!("{language} {split} utterance {li} {i}"),
                    label: label.to_string(),
                    language: language.into(),
                    split,
                });
            }
        }
    }
    let path = dir.join(format!("{language}.jsonl"));
    Corpus::new(language, examples).unwrap().write_jsonl(&path).unwrap();
    path
}

#[test]
fn convert_tsv_and_refuse_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let tsv = dir.path().join("train.tsv");
    std::fs::write(
        &tsv,
        "zeige mir meine wecker\tget_alarm\nentferne alle wecker\tdelete_alarm\n",
    )
    .unwrap();
    let out = dir.path().join("de.jsonl");
    let o = icx(&[
        "convert",
        "--tsv",
        s(&tsv),
        "--language",
        "de",
        "--split",
        "train",
        "-o",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains(r#""id":"train:1""#), "{text}");

    let again = icx(&["convert", "--tsv", s(&tsv), "--language", "de", "-o", s(&out)]);
    assert_eq!(again.status.code(), Some(2));
    let forced = icx(&["convert", "--jsonl", s(&out), "-o", s(&out), "--force"]);
    assert!(forced.status.success(), "{}", stderr(&forced));

    let missing_lang = icx(&["convert", "--tsv", s(&tsv), "-o", s(&dir.path().join("x.jsonl"))]);
    assert_eq!(missing_lang.status.code(), Some(2));
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "no tab here\n").unwrap();
    let o = icx(&[
        "convert",
        "--tsv",
        s(&bad),
        "--language",
        "de",
        "-o",
        s(&dir.path().join("y.jsonl")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.tsv"), "{}", stderr(&o));
}

#[test]
fn plan_prints_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "en");
    let o = icx(&["plan", "--source", s(&corpus), "--model", "oracle:uniform"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("k schedule: [0,5,10,20,30,40]"), "{}", stdout(&o));

    let o = icx(&["plan", "--source", s(&corpus), "--model", "oracle:uniform", "--k", "5"]);
    assert!(stdout(&o).contains("k schedule: [5]"), "{}", stdout(&o));

    let o = icx(&[
        "plan",
        "--source",
        s(&corpus),
        "--model",
        "oracle:uniform",
        "--oracle-max-tokens",
        "40",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("k schedule: [0]") && stdout(&o).contains("warning"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "en");
    assert_eq!(icx(&["plan", "--model", "oracle:uniform"]).status.code(), Some(2));
    assert_eq!(icx(&["plan", "--source", s(&corpus)]).status.code(), Some(2));
    assert_eq!(
        icx(&["plan", "--source", s(&corpus), "--model", "served-model"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        icx(&["plan", "--source", s(&corpus), "--model", "oracle:psychic"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(icx(&["run", "--bogus-flag"]).status.code(), Some(2));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"source": "x.jsonl", "unknown_key": 1}"#).unwrap();
    assert_eq!(icx(&["plan", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn unreachable_server_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "en");
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"source": "{}", "backend": {{"model": "m", "server_url": "{url}", "max_retries": 0}}}}"#,
            s(&corpus)
        ),
    )
    .unwrap();
    let o = icx(&["plan", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn run_against_http_server() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "en");
    let server = FakeServer::serving(vec![make_oracle(OracleKind::Hash, OracleConfig::default())]);
    let out = dir.path().join("out");
    let preds = dir.path().join("preds");
    let o = Command::new(env!("CARGO_BIN_EXE_icx"))
        .args([
            "run",
            "--source",
            s(&corpus),
            "--model",
            "oracle:hash",
            "--k",
            "0,5",
            "--seeds",
            "13",
        ])
        .args(["--out", s(&out), "--dump-predictions", s(&preds)])
        .env("ICX_SERVER_URL", server.url())
        .env("ICX_API_KEY", "sekrit")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean_accuracy"));
    assert!(stderr(&o).contains("k=5 seed=13"));
    assert!(server
        .log()
        .iter()
        .all(|r| r.authorization.as_deref() == Some("Bearer sekrit")));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(
        csv.starts_with("k,seed,accuracy,macro_f1,n_queries,truncated_queries\n0,13,"),
        "{csv}"
    );
    let records = std::fs::read_to_string(preds.join("k5_seed13.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 18);
    let json = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(!json.contains("sekrit"));
}

#[test]
fn failed_cells_exit_1_and_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "en");
    let server = FakeServer::start(|req| {
        if req.path == "/v1/score" {
            (500, error_body("internal", "boom"))
        } else if req.path == "/v1/models" {
            (
                200,
                r#"{"models":[{"name":"m","family":"causal","max_tokens":512}]}"#.to_string(),
            )
        } else {
            (200, r#"{"count":3}"#.to_string())
        }
    });
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"source": "{}", "k_values": [0], "seeds": [1], "backend": {{"model": "m", "server_url": "{}", "max_retries": 0}}}}"#,
            s(&corpus),
            server.url()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = icx(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let json = std::fs::read_to_string(out.join("report.json")).unwrap();
    assert!(json.contains("\"failures\""), "{json}");
}

#[test]
fn report_derives_plot_data_and_merges() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = write_corpus(dir.path(), "en");
    for (name, k) in [("a", "0"), ("b", "5,10")] {
        let out = dir.path().join(name);
        let o = icx(&[
            "run",
            "--source",
            s(&corpus),
            "--model",
            "oracle:hash",
            "--k",
            k,
            "--out",
            s(&out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (a, b) = (dir.path().join("a/report.json"), dir.path().join("b/report.json"));
    let plot = dir.path().join("plot.csv");
    let merged = dir.path().join("merged.json");
    let o = icx(&["report", s(&a), s(&b), "--plot-data", s(&plot), "--out", s(&merged)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plot = std::fs::read_to_string(&plot).unwrap();
    let ks: Vec<&str> = plot.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ks, ["0", "5", "10"]);
    assert!(plot.starts_with("k,mean_accuracy,std_accuracy,mean_f1,std_f1\n"));

    let o = icx(&["report", s(&a), s(&a)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("k=0"), "{}", stderr(&o));

    let table = icx(&["report", s(&merged)]);
    assert!(table.status.success());
    assert_eq!(stdout(&table).lines().count(), 4);

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"cells\": ").unwrap();
    assert_eq!(icx(&["report", s(&broken)]).status.code(), Some(2));
}
