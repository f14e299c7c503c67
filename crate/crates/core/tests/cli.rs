mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;

use common::{cli, small_run_config, snapshot};
use instructseq::instructions::{expand_paraphrases, Corpus, ExpansionConfig};
use instructseq::Error;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(cli(&["no-such-command"]), 1);
    assert_eq!(cli(&["gen-data", "--bogus"]), 1);
    assert_eq!(cli(&["--help"]), 0);
}

#[test]
fn invalid_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{ "seed": 1, "unknown_section": {} }"#).unwrap();
    let out = dir.path().join("out");
    assert_eq!(cli(&["--config", s(&cfg), "--out", s(&out), "gen-data"]), 1);
    assert!(!out.exists());

    std::fs::write(&cfg, r#"{ "vocab": { "visual": 64 } }"#).unwrap();
    assert_eq!(cli(&["--config", s(&cfg), "--out", s(&out), "gen-data"]), 1);
    assert!(!out.exists());
}

#[test]
fn pipeline_order_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path());
    // codecs need generated data, training needs codecs
    assert_eq!(cli(&["--quiet", "--config", s(&cfg), "fit-codecs"]), 1);
    assert_eq!(cli(&["--quiet", "--config", s(&cfg), "--out", s(&dir.path().join("run")), "train"]), 1);
    assert_eq!(cli(&["--quiet", "--config", s(&cfg), "--out", s(&dir.path().join("eval")), "evaluate"]), 1);
}

#[test]
fn full_pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_run_config(dir.path());
    let c = s(&cfg);
    let data = dir.path().join("data");
    assert_eq!(cli(&["--quiet", "--config", c, "--out", s(&data), "gen-data"]), 0);
    let first = snapshot(&data);
    assert_eq!(cli(&["--quiet", "--config", c, "--out", s(&data), "gen-data"]), 0);
    assert_eq!(first, snapshot(&data));
    assert!(first.contains_key("train/manifest.jsonl") && first.contains_key("eval/manifest.jsonl"));

    assert_eq!(cli(&["--quiet", "--config", c, "fit-codecs"]), 0);
    assert!(data.join("codecs.json").exists());

    let run = dir.path().join("run");
    assert_eq!(cli(&["--quiet", "--config", c, "--out", s(&run), "train"]), 0);
    let trained = snapshot(&run);
    assert!(trained.contains_key("final.ckpt") && trained.contains_key("metrics.csv"));
    assert_eq!(cli(&["--quiet", "--config", c, "--out", s(&run), "train"]), 0);
    assert_eq!(trained, snapshot(&run));

    let eval = dir.path().join("eval");
    assert_eq!(cli(&["--quiet", "--config", c, "--out", s(&eval), "evaluate"]), 0);
    let report = snapshot(&eval);
    assert!(report.contains_key("report.json") && report.contains_key("report.csv"));
    assert_eq!(cli(&["--quiet", "--config", c, "--out", s(&eval), "evaluate"]), 0);
    assert_eq!(report, snapshot(&eval));

    // single-image inference on a generated scene image
    let image = dir.path().join("scene.ppm");
    common::random_image(3).save(&image).unwrap();
    let infer = dir.path().join("infer");
    let code = cli(&[
        "--quiet",
        "--config",
        c,
        "--out",
        s(&infer),
        "infer",
        "--image",
        s(&image),
        "--instruction",
        "fill green into the shape of red circle",
        "--task",
        "res",
    ]);
    assert_eq!(code, 0);
    assert!(infer.join("output.mask.pgm").exists() && infer.join("confidence.pgm").exists());
    assert_eq!(cli(&["--quiet", "--config", c, "--out", s(&infer), "infer", "--image", s(&image), "--instruction", "x", "--task", "res", "--color", "mauve"]), 1);

    let sweep = dir.path().join("sweep");
    assert_eq!(cli(&["--quiet", "--config", c, "--out", s(&sweep), "ablate", "n-sweep", "--n", "1,2"]), 0);
    let csv = std::fs::read_to_string(sweep.join("n_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "{csv}");

    let ckpt = run.join("final.ckpt");
    assert_eq!(cli(&["--quiet", "inspect-checkpoint", s(&ckpt)]), 0);
    std::fs::write(&ckpt, b"garbage").unwrap();
    assert_eq!(cli(&["--quiet", "inspect-checkpoint", s(&ckpt)]), 2);
}

/// Serves one canned JSON response and returns the request body it received.
fn serve_once(body: &'static str) -> (String, std::thread::JoinHandle<(String, String)>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/paraphrase", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut headers = String::new();
        let mut len = 0;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            if line == "\r\n" {
                break;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap();
            }
            headers.push_str(&line);
        }
        let mut req = vec![0; len];
        reader.read_exact(&mut req).unwrap();
        let mut stream = stream;
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}", body.len(), body).unwrap();
        (headers, String::from_utf8(req).unwrap())
    });
    (url, handle)
}

#[test]
fn expansion_keeps_only_valid_paraphrases() {
    let (url, server) = serve_once(
        r#"["Paint {object} with {color}.", "Paint {object} with {color}.", "Colour the {object}.", "  ", "Use {color} on the {object} and {shape}."]"#,
    );
    std::env::set_var("INSTRUCTSEQ_TEST_KEY", "secret");
    let cfg = ExpansionConfig { url: Some(url), api_key_env: "INSTRUCTSEQ_TEST_KEY".into(), ..Default::default() };
    let mut corpus = Corpus::bundled();
    let before = corpus.variants.len();
    let added = expand_paraphrases(&cfg, &mut corpus, "res", 5).unwrap();
    assert_eq!(added, vec!["Paint {object} with {color}.".to_string()]);
    assert_eq!(corpus.variants.len(), before + 1);
    corpus.validate().unwrap();

    let (headers, body) = server.join().unwrap();
    assert!(headers.contains("Bearer secret"), "{headers}");
    let req: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(req["n"], 5);
    assert_eq!(req["placeholders"], serde_json::json!(["color", "object"]));
}

#[test]
fn expansion_failures_leave_corpus_untouched() {
    let mut corpus = Corpus::bundled();
    let before = corpus.clone();
    let offline = ExpansionConfig { offline: true, url: Some("http://127.0.0.1:9".into()), ..Default::default() };
    assert!(matches!(expand_paraphrases(&offline, &mut corpus, "res", 3), Err(Error::Config(_))));
    let dead = ExpansionConfig { url: Some("http://127.0.0.1:9/x".into()), timeout_secs: 2, ..Default::default() };
    assert!(matches!(expand_paraphrases(&dead, &mut corpus, "res", 3), Err(Error::Network(_))));
    assert!(matches!(expand_paraphrases(&dead, &mut corpus, "nope", 3), Err(Error::Invalid(_))));
    assert_eq!(corpus, before);

    let (url, server) = serve_once(r#"{"not": "a list"}"#);
    let cfg = ExpansionConfig { url: Some(url), ..Default::default() };
    assert!(matches!(expand_paraphrases(&cfg, &mut corpus, "res", 3), Err(Error::Network(_))));
    server.join().unwrap();
    assert_eq!(corpus, before);
}
