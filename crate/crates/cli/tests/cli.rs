use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn labelcheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelcheck"))
        .args(args)
        .env_remove("LABELCHECK_CORPUS")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.schema.json"));
    let value: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&value).unwrap()
}

fn assert_valid(schema_name: &str, doc: &Value) {
    let v = schema(schema_name);
    let errors: Vec<String> = v
        .iter_errors(doc)
        .map(|e| format!("{e} at {}", e.instance_path()))
        .collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:?}");
}

fn json(out: &Output) -> Value {
    serde_json::from_str(&stdout(out)).unwrap_or_else(|e| panic!("{e}: {}", stdout(out)))
}

#[test]
fn check_finds_the_label_counterexample() {
    let out = labelcheck(&[
        "check",
        "--protocol",
        "corpus:example41",
        "--formula",
        "corpus:phi1",
        "--sessions",
        "1",
    ]);
    assert_eq!(code(&out), 1);
    let v = json(&out);
    assert_valid("verdict", &v);
    assert_eq!(v["verdict"], "violated");
    let t = v["assignments"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["role"] == 2)
        .unwrap();
    assert_ne!(t["bindings"]["C1@A2"], t["bindings"]["C2@A2"]);
}

#[test]
fn check_unlabeled_holds() {
    let args = [
        "check",
        "--protocol",
        "corpus:example41",
        "--formula",
        "corpus:phi1",
        "--sessions",
        "1",
        "--unlabeled",
    ];
    let out = labelcheck(&args);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let v = json(&out);
    assert_valid("verdict", &v);
    assert_eq!(v["verdict"], "holds-within-bounds");
}

#[test]
fn check_text_format() {
    let args = [
        "check",
        "--protocol",
        "corpus:example41",
        "--formula",
        "corpus:phi2",
        "--format",
        "text",
    ];
    let out = labelcheck(&args);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("holds within bounds"));
    let out = labelcheck(&[&args[..], &["--unlabeled"]].concat());
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("violated"));
}

#[test]
fn erase_protocol_drops_labels() {
    let out = labelcheck(&["erase", "--protocol", "corpus:nsl"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.starts_with("protocol nsl unlabeled;"));
    assert!(!text.contains('^'), "{text}");
}

#[test]
fn erase_formula_and_trace() {
    let out = labelcheck(&["erase", "--formula", "corpus:phi2"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("t(C1@A2) != t(C2@A2)"));

    let out = labelcheck(&["erase", "--trace", "corpus:trace-ex22"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("send(1, enc(<n(a3,1,1), a1>, ek(a2)));"));

    let out = labelcheck(&["erase", "--trace", "corpus:trace-ex22", "--format", "json"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_valid("trace", &v);
    assert_eq!(v["events"].as_array().unwrap().len(), 3);
}

#[test]
fn erase_needs_exactly_one_target() {
    assert_eq!(code(&labelcheck(&["erase"])), 2);
    assert_eq!(
        code(&labelcheck(&[
            "erase",
            "--protocol",
            "corpus:nsl",
            "--formula",
            "corpus:phi1"
        ])),
        2
    );
}

#[test]
fn traces_stream_json_lines() {
    let out = labelcheck(&[
        "traces",
        "--protocol",
        "corpus:nsl",
        "--limit",
        "25",
        "--corrupt",
        "a3",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 25);
    for line in lines {
        assert_valid("trace", &serde_json::from_str(line).unwrap());
    }
}

#[test]
fn trace_count_is_stable() {
    let out = labelcheck(&["traces", "--protocol", "corpus:example41", "--count"]);
    assert_eq!(code(&out), 0);
    let labeled: usize = stdout(&out).trim().parse().unwrap();
    let out = labelcheck(&[
        "traces",
        "--protocol",
        "corpus:example41",
        "--count",
        "--unlabeled",
    ]);
    let unlabeled: usize = stdout(&out).trim().parse().unwrap();
    assert!(labeled > 1 && unlabeled > 1);
}

#[test]
fn derive_reports_proofs() {
    let dir = tempfile::tempdir().unwrap();
    let k = dir.path().join("k.dsl");
    fs::write(
        &k,
        "agents a1, a2;\ncorrupted a2;\nenc(<n(a1,1,1), a1>, ek(a2))^ag(1);\n",
    )
    .unwrap();
    let k = k.to_str().unwrap();

    let out = labelcheck(&[
        "derive",
        "--knowledge",
        k,
        "--goal",
        "enc(n(a1,1,1), ek(a1))^adv(1)",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_valid("derivation", &v);
    assert_eq!(v["derivation"]["rule"], "enc");

    let out = labelcheck(&[
        "derive",
        "--knowledge",
        k,
        "--goal",
        "enc(n(a1,1,1), ek(a1))^ag(1)",
    ]);
    assert_eq!(code(&out), 1);
    let v = json(&out);
    assert_valid("derivation", &v);
    assert_eq!(v["deducible"], false);

    let out = labelcheck(&[
        "derive",
        "--knowledge",
        k,
        "--goal",
        "enc(n(a1,1,1), ek(a1))^ag(1)",
        "--unlabeled",
    ]);
    assert_eq!(code(&out), 0);
    assert_valid("derivation", &json(&out));

    let out = labelcheck(&["derive", "--knowledge", k, "--goal", "X1@A1"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn selfcheck_reports_every_suite() {
    let out = labelcheck(&[
        "selfcheck",
        "--seed",
        "7",
        "--cases",
        "4",
        "--sessions",
        "1",
    ]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_valid("selfcheck", &v);
    assert_eq!(v["suites"].as_array().unwrap().len(), 4);

    let out = labelcheck(&[
        "selfcheck",
        "--suite",
        "transfer",
        "--cases",
        "2",
        "--format",
        "text",
    ]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("transfer"));
    assert_eq!(code(&labelcheck(&["selfcheck", "--suite", "bogus"])), 2);
}

#[test]
fn examples_list_print_export() {
    let out = labelcheck(&["examples", "--format", "json"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_valid("corpus", &v);
    assert_eq!(v.as_array().unwrap().len(), 9);

    let out = labelcheck(&["examples", "nsl"]);
    assert!(stdout(&out).contains("protocol nsl labeled;"));

    let dir = tempfile::tempdir().unwrap();
    let out = labelcheck(&["examples", "--export", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("phi-a.formula.dsl").exists());
    assert_eq!(code(&labelcheck(&["examples", "nope"])), 2);
}

#[test]
fn corpus_directory_overrides_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let phi = "forall LS(2, 2) as t . t(C1@A2) = t(C1@A2)\n";
    fs::write(dir.path().join("phi1.formula.dsl"), phi).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_labelcheck"))
        .args([
            "check",
            "--protocol",
            "corpus:example41",
            "--formula",
            "corpus:phi1",
        ])
        .env("LABELCHECK_CORPUS", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "{}", stdout(&out));
}

#[test]
fn input_errors_exit_2() {
    let missing = labelcheck(&[
        "check",
        "--protocol",
        "/nonexistent.proto.dsl",
        "--formula",
        "corpus:phi1",
    ]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error:"));
    assert_eq!(
        code(&labelcheck(&[
            "check",
            "--protocol",
            "corpus:phi1",
            "--formula",
            "corpus:phi1"
        ])),
        2
    );
    assert_eq!(code(&labelcheck(&["frobnicate"])), 2);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.proto.dsl");
    fs::write(
        &bad,
        "protocol bad labeled;\nrole 1 { init -> enc(A1, sk(A1))^ag(1); }\n",
    )
    .unwrap();
    let out = labelcheck(&[
        "check",
        "--protocol",
        bad.to_str().unwrap(),
        "--formula",
        "corpus:phi1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("2:"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn verdict_schema_embeds_the_trace_schema() {
    let read = |n: &str| -> Value {
        let p = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("schemas")
            .join(n);
        serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
    };
    let trace = read("trace.schema.json");
    let verdict = read("verdict.schema.json");
    for (k, def) in trace["$defs"].as_object().unwrap() {
        assert_eq!(&verdict["$defs"][k], def, "definition `{k}` differs");
    }
}
