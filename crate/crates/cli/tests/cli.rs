//! End-to-end tests running the built `petool` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use petool_core::codec;
use petool_core::shuffle::{self, ModuleMapping, ThunkPermutation};

fn petool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_petool"))
        .args(args)
        .output()
        .expect("spawn petool")
}

fn stdout_json(output: &Output) -> serde_json::Value {
    serde_json::from_slice(&output.stdout).unwrap_or_else(|err| {
        panic!(
            "stdout is not JSON ({err}): {}",
            String::from_utf8_lossy(&output.stdout)
        )
    })
}

fn write_spec(dir: &Path, name: &str, spec: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(spec).unwrap()).unwrap();
    path
}

fn gen_fixture(dir: &Path, name: &str, spec: &serde_json::Value) -> PathBuf {
    let spec_path = write_spec(dir, &format!("{name}.json"), spec);
    let out = dir.join(name);
    let result = petool(&["gen", "--spec", spec_path.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert!(
        result.status.success(),
        "gen failed: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    out
}

fn demo_spec() -> serde_json::Value {
    serde_json::json!({
        "machine_class": "Pe32",
        "image_base": 0x0040_0000u32,
        "modules": [
            {"name": "demo.dll", "symbols": [
                {"Name": "alpha"}, {"Name": "beta"}, {"Name": "gamma"}
            ]},
            {"name": "util.dll", "symbols": [{"Name": "delta"}]}
        ],
        "call_sites_per_symbol": 1,
        "emit_relocs": true,
        "seed": 9
    })
}

#[test]
fn transform_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen_fixture(dir.path(), "a.exe", &demo_spec());
    let out1 = dir.path().join("b1.exe");
    let out2 = dir.path().join("b2.exe");
    for out in [&out1, &out2] {
        let run = petool(&[
            "transform",
            input.to_str().unwrap(),
            "-o",
            out.to_str().unwrap(),
            "--seed",
            "7",
        ]);
        assert_eq!(run.status.code(), Some(0));
        let report = stdout_json(&run);
        assert_eq!(report["seed"], 7);
        assert_eq!(report["strategy_used"], "RelocPatch");
    }
    assert_eq!(fs::read(&out1).unwrap(), fs::read(&out2).unwrap());
    // The input was not modified in place.
    let original = gen_fixture(dir.path(), "a2.exe", &demo_spec());
    assert_eq!(fs::read(&input).unwrap(), fs::read(original).unwrap());
    assert_ne!(fs::read(&input).unwrap(), fs::read(&out1).unwrap());
}

#[test]
fn imphash_of_importless_file_is_the_empty_digest() {
    let dir = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "machine_class": "Pe32",
        "image_base": 0x0040_0000u32,
        "modules": [],
        "seed": 1
    });
    let fixture = gen_fixture(dir.path(), "nothing.exe", &spec);
    let run = petool(&["imphash", fixture.to_str().unwrap(), "--show-string"]);
    assert_eq!(run.status.code(), Some(0));
    let report = stdout_json(&run);
    assert_eq!(report["digest"], "d41d8cd98f00b204e9800998ecf8427e");
    assert_eq!(report["canonical_string"], "");
    assert_eq!(report["mode"], "CompatMode");

    // Without --show-string the canonical string is omitted.
    let quiet = petool(&["imphash", fixture.to_str().unwrap()]);
    assert!(stdout_json(&quiet).get("canonical_string").is_none());

    let paper = petool(&["imphash", fixture.to_str().unwrap(), "--mode", "paper"]);
    assert_eq!(stdout_json(&paper)["mode"], "PaperMode");
    assert_eq!(stdout_json(&paper)["digest"], "d41d8cd98f00b204e9800998ecf8427e");
}

#[test]
fn verify_accepts_a_genuine_transform() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen_fixture(dir.path(), "a.exe", &demo_spec());
    let output = dir.path().join("b.exe");
    let transform = petool(&[
        "transform",
        input.to_str().unwrap(),
        "-o",
        output.to_str().unwrap(),
        "--seed",
        "3",
    ]);
    assert_eq!(transform.status.code(), Some(0));
    let run = petool(&[
        "verify",
        input.to_str().unwrap(),
        output.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0));
    let report = stdout_json(&run);
    assert_eq!(report["equivalent"], true);
    assert_eq!(report["divergent_sites"].as_array().unwrap().len(), 0);
}

#[test]
fn verify_flags_a_shuffle_without_patches() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen_fixture(dir.path(), "a.exe", &demo_spec());
    // Apply a permutation without any reference patching.
    let image = codec::parse_pe(fs::read(&input).unwrap()).unwrap();
    let groups = shuffle::collect_thunk_pairs(&image, false).unwrap();
    let s = |i: usize| groups[0].pairs[i].ft_slot_rva;
    let mut mapping: std::collections::BTreeMap<u32, u32> =
        groups[0].pairs.iter().map(|p| (p.ft_slot_rva, p.ft_slot_rva)).collect();
    mapping.insert(s(0), s(1));
    mapping.insert(s(1), s(0));
    let perm = ThunkPermutation {
        seed: 0,
        per_module: groups
            .iter()
            .enumerate()
            .map(|(i, g)| ModuleMapping {
                module_name: g.module_name.clone(),
                mapping: if i == 0 {
                    mapping.clone()
                } else {
                    g.pairs.iter().map(|p| (p.ft_slot_rva, p.ft_slot_rva)).collect()
                },
            })
            .collect(),
    };
    let edits = shuffle::apply_permutation(&image, &perm).unwrap();
    let tampered = dir.path().join("tampered.exe");
    fs::write(&tampered, codec::serialize(&image, &edits).unwrap()).unwrap();

    let run = petool(&[
        "verify",
        input.to_str().unwrap(),
        tampered.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(4));
    let report = stdout_json(&run);
    assert_eq!(report["equivalent"], false);
    assert!(!report["divergent_sites"].as_array().unwrap().is_empty());
}

#[test]
fn transform_refusals_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "machine_class": "Pe32",
        "image_base": 0x0040_0000u32,
        "modules": [{"name": "one.dll", "symbols": [{"Name": "only"}]}],
        "seed": 2
    });
    let fixture = gen_fixture(dir.path(), "single.exe", &spec);
    let run = petool(&[
        "transform",
        fixture.to_str().unwrap(),
        "-o",
        dir.path().join("out.exe").to_str().unwrap(),
        "--seed",
        "1",
    ]);
    assert_eq!(run.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&run.stderr).contains("nothing to shuffle"));
    assert!(!dir.path().join("out.exe").exists());
}

#[test]
fn unparseable_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let garbage = dir.path().join("garbage.bin");
    fs::write(&garbage, b"this is not a PE file at all").unwrap();
    for subcommand in ["imphash", "inspect"] {
        let run = petool(&[subcommand, garbage.to_str().unwrap()]);
        assert_eq!(run.status.code(), Some(2), "{subcommand}");
        assert!(!run.stderr.is_empty());
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(petool(&[]).status.code(), Some(1));
    assert_eq!(petool(&["imphash"]).status.code(), Some(1));
    assert_eq!(petool(&["no-such-command"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.exe");
    assert_eq!(
        petool(&["imphash", missing.to_str().unwrap()]).status.code(),
        Some(1)
    );
    // --help is not an error.
    assert_eq!(petool(&["--help"]).status.code(), Some(0));
}

#[test]
fn omitted_seed_is_drawn_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen_fixture(dir.path(), "a.exe", &demo_spec());
    let output = dir.path().join("b.exe");
    let run = petool(&[
        "transform",
        input.to_str().unwrap(),
        "-o",
        output.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0));
    let report = stdout_json(&run);
    let seed = report["seed"].as_u64().expect("seed reported");
    assert!(output.exists());

    // Replaying the reported seed reproduces the output byte for byte.
    let replay_path = dir.path().join("replay.exe");
    let replay = petool(&[
        "transform",
        input.to_str().unwrap(),
        "-o",
        replay_path.to_str().unwrap(),
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(replay.status.code(), Some(0));
    assert_eq!(fs::read(&output).unwrap(), fs::read(&replay_path).unwrap());
}

#[test]
fn in_place_transform_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let input = gen_fixture(dir.path(), "a.exe", &demo_spec());
    let before = fs::read(&input).unwrap();
    let run = petool(&[
        "transform",
        input.to_str().unwrap(),
        "-o",
        input.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert_eq!(fs::read(&input).unwrap(), before, "input untouched");
}

#[test]
fn gen_rejects_bad_specs() {
    let dir = tempfile::tempdir().unwrap();
    let not_json = dir.path().join("broken.json");
    fs::write(&not_json, "{not json").unwrap();
    let out = dir.path().join("x.exe");
    let run = petool(&["gen", "--spec", not_json.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));

    let invalid = write_spec(
        dir.path(),
        "invalid.json",
        &serde_json::json!({
            "machine_class": "Pe32",
            "image_base": 0x0040_0000u32,
            "modules": [{"name": "demo.dll", "symbols": []}],
            "seed": 1
        }),
    );
    let run = petool(&["gen", "--spec", invalid.to_str().unwrap(), "-o", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn inspect_reports_structure() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = gen_fixture(dir.path(), "a.exe", &demo_spec());
    let run = petool(&["inspect", fixture.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0));
    let report = stdout_json(&run);
    assert_eq!(report["machine_class"], "Pe32");
    assert_eq!(report["relocs_stripped"], false);
    let imports = report["imports"].as_array().unwrap();
    assert_eq!(imports.len(), 2);
    assert_eq!(imports[0]["module_name"], "demo.dll");
    assert_eq!(imports[0]["thunks"].as_array().unwrap().len(), 3);
    assert!(report["relocations"]["highlow"].as_u64().unwrap() >= 4);
    assert_eq!(report["imphash"].as_array().unwrap().len(), 2);
    let sections = report["sections"].as_array().unwrap();
    assert!(sections.iter().any(|s| s["name"] == ".text" && s["executable"] == true));
}
