use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use cascade_core::corpus::save_corpus;
use cascade_core::fixtures::synthetic_corpus;
use cascade_core::model::{SentenceRecord, Talk};
use cascade_core::pipeline::*;

fn cascade() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cascade"))
}

fn run(args: &[&str]) -> Output {
    cascade().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let p = dir.join("corpus.in.jsonl");
    save_corpus(&synthetic_corpus(n, seed), &p).unwrap();
    p
}

#[test]
fn plan_chunks_prints_spans() {
    let out = run(&["plan-chunks", "--duration", "60", "--chunk", "30", "--overlap", "10"]);
    assert_eq!(code(&out), 0);
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "0\t30\n20\t50\n40\t60\n");
    assert_eq!(code(&run(&["plan-chunks", "--duration", "60", "--chunk", "30", "--overlap", "30"])), 2);
}

#[test]
fn usage_exit_codes() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["eval", "--hyp"])), 1);
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "chunk_s = 30.0\noverlap_s = 30.0\n").unwrap();
    let c = corpus(dir.path(), 1, 1);
    let out = run(&["--config", s(&cfg), "run", "--oracle", s(&c), "--corpus", s(&c), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn eval_without_references_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Talk::new("t");
    let mut sent = SentenceRecord::new(0, "Hello.");
    sent.mt = Some("Hallo.".into());
    t.sentences.push(sent);
    let hyp = dir.path().join("h.jsonl");
    save_corpus(&[t], &hyp).unwrap();
    let out = run(&["eval", "--hyp", s(&hyp), "--ref", s(&hyp)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no reference translation"));
}

/// Running the stages one by one reproduces the monolithic run's files.
#[test]
fn stage_composition_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 3, 11);
    let full = dir.path().join("full");
    let out = run(&["--oracle", s(&c), "run", "--corpus", s(&c), "--out", s(&full)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let st = dir.path().join("stages");
    fs::create_dir_all(&st).unwrap();
    let p = |n: &str| st.join(n);
    let steps: Vec<Vec<String>> = vec![
        vec!["transcribe", "--corpus", s(&full.join(CORPUS_FILE)), "--out", s(&p(ASR_FILE)), "--trace", s(&p(STITCH_FILE))],
        vec!["refine-asr", "--nbest", s(&p(ASR_FILE)), "--out", s(&p(REFINED_FILE))],
        vec!["segment", "--corpus", s(&c), "--nbest", s(&p(ASR_FILE)), "--refined", s(&p(REFINED_FILE)), "--out", s(&p(SEGMENTED_FILE))],
        vec!["translate", "--in", s(&p(SEGMENTED_FILE)), "--out", s(&p(TRANSLATED_FILE))],
        vec!["doc-ape", "--in", s(&p(TRANSLATED_FILE)), "--out", s(&p(APE_FILE)), "--report", s(&p(APE_REPORT_FILE))],
        vec!["eval", "--hyp", s(&p(APE_FILE)), "--ref", s(&c), "--report", s(&p(EVAL_FILE))],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in steps {
        let mut args = vec!["--oracle".to_string(), s(&c).to_string()];
        args.extend(step);
        let out = cascade().args(&args).output().unwrap();
        assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    for name in [ASR_FILE, STITCH_FILE, REFINED_FILE, SEGMENTED_FILE, TRANSLATED_FILE, APE_FILE, APE_REPORT_FILE, EVAL_FILE] {
        assert_eq!(fs::read(full.join(name)).unwrap(), fs::read(p(name)).unwrap(), "{name}");
    }
    let report = fs::read_to_string(full.join(EVAL_FILE)).unwrap();
    assert!(report.contains("\"wer\": 0.0") && report.contains("\"bleu\": 100.0"), "{report}");
}

#[test]
fn repeated_runs_are_identical_and_verifiable() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 2, 3);
    let mut ids = Vec::new();
    for name in ["a", "b"] {
        let out = run(&["--oracle", s(&c), "run", "--corpus", s(&c), "--out", s(&dir.path().join(name)), "--long-form"]);
        assert_eq!(code(&out), 0);
        ids.push(out.stdout);
    }
    assert_eq!(ids[0], ids[1]);
    assert_eq!(
        fs::read(dir.path().join("a").join(MANIFEST_FILE)).unwrap(),
        fs::read(dir.path().join("b").join(MANIFEST_FILE)).unwrap()
    );
    assert_eq!(code(&run(&["verify", "--out", s(&dir.path().join("a"))])), 0);
    fs::write(dir.path().join("a").join(ASR_FILE), "").unwrap();
    assert_eq!(code(&run(&["verify", "--out", s(&dir.path().join("a"))])), 2);
}

#[test]
fn timings_only_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 1, 3);
    let o = dir.path().join("o");
    assert_eq!(code(&run(&["--oracle", s(&c), "run", "--corpus", s(&c), "--out", s(&o)])), 0);
    assert!(!fs::read_to_string(o.join(MANIFEST_FILE)).unwrap().contains("seconds"));
    assert_eq!(code(&run(&["--oracle", s(&c), "run", "--corpus", s(&c), "--out", s(&o), "--timings"])), 0);
    assert!(fs::read_to_string(o.join(MANIFEST_FILE)).unwrap().contains("seconds"));
}

#[test]
fn no_llm_refine_route() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 2, 5);
    let o = dir.path().join("o");
    assert_eq!(code(&run(&["--oracle", s(&c), "run", "--corpus", s(&c), "--out", s(&o), "--no-llm-refine"])), 0);
    let refined = fs::read_to_string(o.join(REFINED_FILE)).unwrap();
    assert!(refined.lines().all(|l| l.contains("\"skipped\"")));
    let ape = fs::read_to_string(o.join(APE_FILE)).unwrap();
    assert!(!ape.contains("\"ape\""));
}

struct Served(Child, String);

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn serve(kind: &str, corpus: &Path) -> Served {
    let mut child = cascade()
        .args(["serve-mock", kind, "--corpus", s(corpus)])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    Served(child, line.trim().to_string())
}

#[test]
fn http_backends_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 2, 7);
    let servers: Vec<Served> = ["asr", "mt", "llm", "scorer"].iter().map(|k| serve(k, &c)).collect();
    let cfg = dir.path().join("cfg.toml");
    fs::write(
        &cfg,
        format!(
            "asr_url = \"{}\"\nmt_url = \"{}\"\nllm_url = \"{}\"\ncomet_url = \"{}\"\n",
            servers[0].1, servers[1].1, servers[2].1, servers[3].1
        ),
    )
    .unwrap();
    let o = dir.path().join("o");
    let out = run(&["--config", s(&cfg), "run", "--corpus", s(&c), "--out", s(&o)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(o.join(EVAL_FILE)).unwrap();
    assert!(report.contains("\"bleu\": 100.0") && report.contains("\"comet\": 1.0"), "{report}");
}

#[test]
fn unreachable_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 1, 7);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, format!("asr_url = \"http://127.0.0.1:{port}/\"\nmax_retries = 0\ntimeout_s = 2.0\n")).unwrap();
    let out = run(&["--config", s(&cfg), "transcribe", "--corpus", s(&c), "--out", s(&dir.path().join("a.jsonl"))]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_data_commands() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), 6, 2);
    let ape = dir.path().join("ape_sft.jsonl");
    let out = run(&["--oracle", s(&c), "synth-data", "ape", "--in", s(&c), "--out", s(&ape), "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&ape).unwrap();
    assert!(!text.is_empty() && text.lines().all(|l| l.contains("\"doc_ape\"")));

    let nb = dir.path().join("nb.jsonl");
    fs::write(&nb, "{\"utterance_id\":\"u1\",\"hypotheses\":[{\"text\":\"a b\",\"score\":-1.0}],\"ref\":\"A b.\"}\n").unwrap();
    let asr = dir.path().join("asr_sft.jsonl");
    assert_eq!(code(&run(&["synth-data", "asr", "--in", s(&nb), "--out", s(&asr), "--held-out"])), 0);
    assert!(fs::read_to_string(&asr).unwrap().contains("Post-edited Hypothesis:"));

    // without --oracle and without half URLs the configuration is incomplete
    assert_eq!(code(&run(&["synth-data", "ape", "--in", s(&c), "--out", s(&ape)])), 1);
}
