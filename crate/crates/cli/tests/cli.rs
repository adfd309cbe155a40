use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn varkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_varkit"))
        .args(args)
        .current_dir(dir)
        .env("VARKIT_MANIFEST", dir.join("corpus/manifest.json"))
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = varkit(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = varkit(dir.path(), &["stats", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(varkit(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(varkit(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(varkit(dir.path(), &["--help"]).status.code(), Some(0));
    let out = varkit(dir.path(), &["contour", "--midi", "missing.mid"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    // The manifest flag falls back to the environment.
    assert_eq!(varkit(dir.path(), &["stats", "--group", "originals"]).status.code(), Some(1));
    ok(dir.path(), &["init"]);
    assert!(dir.path().join("corpus/manifest.json").exists());
    assert_eq!(varkit(dir.path(), &["init"]).status.code(), Some(1));
}

#[test]
fn pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "syn"]);
    ok(d, &["init"]);
    let titles = [("blue-harbour", "Blue Harbour"), ("late-tram", "Late Tram"), ("pale-moonrise", "Pale Moonrise")];
    for (id, title) in titles {
        let sheet = format!("syn/standards/{id}.mid");
        let sections = format!("syn/standards/{id}.sections.json");
        let listed = ok(d, &["segment", "--leadsheet", &sheet, "--sections", &sections, "--out", "segs", "--title", title]);
        assert_eq!(listed.lines().count(), 4);
        assert!(d.join(format!("segs/{id}-s00.mid")).exists());
    }
    let infos: serde_json::Value = serde_json::from_slice(&fs::read(d.join("syn/performances.json")).unwrap()).unwrap();
    let mut planted = Vec::new();
    for p in infos.as_array().unwrap() {
        let (id, standard, performer) = (p["id"].as_str().unwrap(), p["standard_id"].as_str().unwrap(), p["performer"].as_str().unwrap());
        let midi = format!("syn/{}", p["midi"].as_str().unwrap());
        ok(d, &["add-performance", "--midi", &midi, "--id", id, "--standard", standard, "--performer", performer]);
        let passage = p["passages"].as_array().unwrap().iter().find(|x| x["planted"] == true).unwrap();
        planted.push((id.to_string(), passage["segment_id"].as_str().unwrap().to_string(), passage["start_s"].as_f64().unwrap(), passage["end_s"].as_f64().unwrap()));
    }

    for (perf, seg, start, end) in &planted {
        let ranked = ok(d, &["score", "--original", seg, "--performance", perf, "--top-k", "3"]);
        let top: Vec<&str> = ranked.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(top[..4], ["1", &start.to_string(), &end.to_string(), "1.000000"]);
        ok(d, &["save-pair", "--original", seg, "--performance", perf, "--start", &start.to_string(), "--end", &end.to_string()]);
    }
    let (perf, seg, start, end) = &planted[0];
    let dup = varkit(d, &["save-pair", "--original", seg, "--performance", perf, "--start", &start.to_string(), "--end", &end.to_string()]);
    assert_eq!(dup.status.code(), Some(1));

    let summary = ok(d, &["stats", "--group", "originals", "--csv", "reports/originals.csv"]);
    assert_eq!(
        summary.lines().map(|l| l.split(',').next().unwrap()).collect::<Vec<_>>(),
        ["feature", "pitch_class_entropy", "pitch_range", "polyphony", "n_pitches", "pitch_in_scale"]
    );
    let per_segment = fs::read_to_string(d.join("reports/originals.csv")).unwrap();
    assert_eq!(per_segment.lines().next().unwrap(), "segment_id,entropy,range,polyphony,n_pitches,in_scale");
    assert_eq!(per_segment.lines().count(), 5);
    ok(d, &["stats", "--group", "variations", "--summary", "reports/variations.csv"]);
    assert!(d.join("reports/variations.csv").exists());

    let aligned = ok(d, &["align", "--pair", "p0001"]);
    assert!(aligned.starts_with("a_index,b_index,a_pitch,b_pitch,pc_dev,dur_dev\n"));

    let train = ["train", "--steps", "10", "--batch-size", "2", "--layers", "2", "--heads", "2", "--d-model", "16", "--d-ff", "32", "--rel-window", "128", "--seed", "5", "--sequential"];
    let progress = ok(d, &[&train[..], &["--out", "a.bin"]].concat());
    assert_eq!(progress.lines().count(), 10);
    ok(d, &[&train[..], &["--out", "b.bin", "--progress", "b.jsonl"]].concat());
    assert_eq!(fs::read(d.join("a.bin")).unwrap(), fs::read(d.join("b.bin")).unwrap());
    assert_eq!(fs::read_to_string(d.join("b.jsonl")).unwrap(), progress);

    let primer = format!("corpus/segments/{}.mid", planted[1].1);
    for out in ["g1.mid", "g2.mid"] {
        ok(d, &["generate", "--ckpt", "a.bin", "--primer", &primer, "--greedy", "--seed", "7", "--max-new", "64", "--out", out]);
    }
    assert_eq!(fs::read(d.join("g1.mid")).unwrap(), fs::read(d.join("g2.mid")).unwrap());
    ok(d, &["generate", "--ckpt", "a.bin", "--primer", &primer, "--temperature", "0.9", "--top-k", "8", "--seed", "7", "--max-new", "64", "--out", "g3.mid"]);

    let table = ok(d, &["evaluate", "--original", &primer, "--generated", &primer]);
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["feature", "original", "generated"]);
    assert_eq!(rows[1..].iter().map(|r| r[0]).collect::<Vec<_>>(), ["entropy", "range", "polyphony", "n_pitches", "scale_consistency"]);
    assert!(rows[1..].iter().all(|r| r[1] == r[2]));

    let tokens: Vec<u16> = serde_json::from_str(&ok(d, &["tokenize", "--midi", &primer])).unwrap();
    assert!(!tokens.is_empty() && tokens.iter().all(|&t| t < 392));
    assert!(ok(d, &["contour", "--midi", &primer, "--svg", "c.svg"]).starts_with("onset_beats,pitch\n"));
    assert!(ok(d, &["rhythm", "--midi", &primer, "--svg", "r.svg"]).starts_with("bar,changes\n"));
    assert!(fs::read_to_string(d.join("c.svg")).unwrap().starts_with("<svg"));
}
