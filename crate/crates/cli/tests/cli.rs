use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn tom_sim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tom-sim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("TOMSIM_API_KEY")
        .output()
        .unwrap()
}

fn summary(out: &Output) -> Value {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let line =
        stdout.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&out.stderr)));
    serde_json::from_str(line).unwrap()
}

fn simulate(dir: &Path, out: &str) -> Output {
    let script = fixture("cr_demo.jsonl");
    tom_sim(
        &[
            "simulate",
            "--variant",
            "cr",
            "--scenario",
            "empathetic",
            "--backend",
            "scripted",
            "--script",
            script.to_str().unwrap(),
            "--seed",
            "7",
            "--out",
            out,
        ],
        dir,
    )
}

#[test]
fn golden_simulate_matches_checked_in_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = simulate(dir.path(), "run.jsonl");
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&out);
    assert_eq!(s["status"], "ok");
    assert_eq!(s["result"]["success"], true);
    assert_eq!(s["result"]["rounds_used"], 2);
    let written = std::fs::read(dir.path().join("run.jsonl")).unwrap();
    assert_eq!(written, std::fs::read(fixture("cr_demo.trace.jsonl")).unwrap());
    assert!(dir.path().join("manifest.json").exists());

    let check = tom_sim(&["validate-trace", "--trace", "run.jsonl"], dir.path());
    assert_eq!(check.status.code(), Some(0));
    assert_eq!(summary(&check)["result"]["turns"], 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), "a/run.jsonl");
    simulate(dir.path(), "b/run.jsonl");
    for name in ["run.jsonl", "manifest.json"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(name)).unwrap(),
            std::fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn bad_variant_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tom_sim(&["simulate", "--variant", "bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage: tom-sim simulate"), "{stderr}");
    assert!(stderr.contains("--variant"));
}

#[test]
fn batch_echoes_config_and_writes_every_episode() {
    let dir = tempfile::tempdir().unwrap();
    let script = fixture("cr_demo.jsonl");
    let out = tom_sim(
        &[
            "batch",
            "--n",
            "100",
            "--t",
            "10",
            "--k",
            "3",
            "--jobs",
            "4",
            "--seed",
            "3",
            "--script",
            script.to_str().unwrap(),
            "--out",
            "batch/traces.jsonl",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("t=10 k=3"), "{stderr}");
    let s = summary(&out);
    assert_eq!(s["result"]["config"]["t"], 10);
    assert_eq!(s["result"]["config"]["k"], 3);
    assert_eq!(s["result"]["summary"]["episodes"], 100);
    assert_eq!(s["result"]["summary"]["success_rate"], 1.0);

    let check = tom_sim(&["validate-trace", "--trace", "batch/traces.jsonl"], dir.path());
    assert_eq!(summary(&check)["result"]["episodes"], 100);
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("batch/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "batch");
    assert_eq!(manifest["template_checksums"].as_object().unwrap().len(), 12);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "k = 5\nt = 4\nvariant = \"reflection\"\n").unwrap();
    let script = fixture("cr_demo.jsonl");
    let out = tom_sim(
        &[
            "batch",
            "--config",
            "run.toml",
            "--k",
            "3",
            "--n",
            "1",
            "--script",
            script.to_str().unwrap(),
            "--out",
            "t.jsonl",
        ],
        dir.path(),
    );
    let s = summary(&out);
    assert_eq!(s["result"]["config"]["k"], 3);
    assert_eq!(s["result"]["config"]["t"], 4);
    assert_eq!(s["result"]["config"]["variant"], "reflection");
}

#[test]
fn domain_errors_exit_one_with_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = tom_sim(&["simulate", "--out", "x.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[E_CONFIG]"));
    assert_eq!(summary(&out)["code"], "E_CONFIG");

    std::fs::write(dir.path().join("bad.jsonl"), "{\"kind\":\"turn\"}\n").unwrap();
    let out = tom_sim(&["validate-trace", "--trace", "bad.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(&out)["code"], "E_TRACE_INVALID");

    let out = tom_sim(&["simulate", "--backend", "remote", "--out", "x.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("TOMSIM_API_KEY"));
}

#[test]
fn data_eval_and_curve_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("ed.csv"),
        "conv_id,utterance_idx,context,prompt,speaker_idx,utterance\n\
         a,1,sad,x,1,My plant died_comma_ sadly.\na,2,sad,x,2,Sorry to hear.\n\
         b,1,proud,y,3,I passed!\nb,2,proud,y,4,Well done.\n\
         c,1,angry,z,5,My bus was late.\nc,2,angry,z,6,That's annoying.\n",
    )
    .unwrap();
    let out = tom_sim(&["ingest", "--input", "ed.csv", "--source", "empathetic-dialogues"], p);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&out)["result"]["report"]["episodes"], 3);
    assert!(p.join("data/episodes.jsonl").exists());

    let out = tom_sim(
        &["sample-seeds", "--episodes", "data/episodes.jsonl", "--n", "2", "--seed", "5", "--out", "seeds.jsonl"],
        p,
    );
    assert_eq!(summary(&out)["result"]["n"], 2);

    let script = fixture("cr_demo.jsonl");
    let script = script.to_str().unwrap();
    let out = tom_sim(&["init-bdi", "--episodes", "seeds.jsonl", "--script", script, "--seed", "1"], p);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(summary(&out)["result"]["candidates"].as_array().unwrap().len(), 3);

    let out = tom_sim(
        &[
            "batch",
            "--n",
            "2",
            "--episodes",
            "seeds.jsonl",
            "--script",
            script,
            "--truth-similarity",
            "--out",
            "b.jsonl",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let ids: Vec<String> = std::fs::read_to_string(p.join("b.jsonl"))
        .unwrap()
        .lines()
        .filter_map(|l| serde_json::from_str::<Value>(l).ok())
        .filter(|v| v["kind"] == "summary")
        .map(|v| v["episode_id"].as_str().unwrap().to_string())
        .collect();
    let mut ann = String::from("episode_id,facet,order,score_1,score_2\n");
    for id in &ids {
        ann.push_str(&format!("{id},belief,first,4,3\n{id},belief,second,1,1\n"));
    }
    std::fs::write(p.join("ann.csv"), ann).unwrap();
    let out = tom_sim(
        &["eval", "--traces", "b.jsonl", "--annotations", "ann.csv", "--out", "report.json", "--table", "report.csv"],
        p,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let row = &summary(&out)["result"]["rows"][0];
    assert_eq!(row["average_turn"], 2.0);
    assert_eq!(row["success_rate"], 1.0);
    assert_eq!(row["first_order"]["belief"]["recall"], 1.0);
    assert!(std::fs::read_to_string(p.join("report.csv")).unwrap().starts_with("scenario,variant"));

    let out = tom_sim(&["export-curves", "--traces", "b.jsonl", "--facet", "belief", "--out", "curves.csv"], p);
    assert_eq!(summary(&out)["result"]["points"], 4);
    let csv = std::fs::read_to_string(p.join("curves.csv")).unwrap();
    assert!(csv.starts_with("episode_id,facet,round,similarity"));
}
