// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use latent_lens::report::plot::{plot, PlotKind};
use latent_lens::report::{exit_code, run, RunConfig, Stage, RESULTS_FILE};
use latent_lens::synth::{write_bundle, SynthConfig};

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                if p.file_name().unwrap() != ".done" {
                    stack.push(p);
                }
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn config(bundle: &Path, out: &Path, workers: usize) -> RunConfig {
    RunConfig {
        bundle: bundle.to_path_buf(),
        out_dir: out.to_path_buf(),
        workers: Some(workers),
        block_rows: 16,
        ..Default::default()
    }
}

#[test]
fn full_run_is_deterministic_and_resumable() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    write_bundle(&SynthConfig::tiny(3), &bundle).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    let start = std::time::Instant::now();
    let first = run(&config(&bundle, &a, 1), false).unwrap();
    assert!(start.elapsed().as_secs() < 60);
    assert_eq!(first.executed, Stage::ALL.to_vec());
    run(&config(&bundle, &b, 4), false).unwrap();
    assert_eq!(snapshot(&a), snapshot(&b));

    let results = std::fs::read(a.join(RESULTS_FILE)).unwrap();
    let before = std::fs::metadata(a.join("qk/layer_000.json"))
        .unwrap()
        .modified()
        .unwrap();
    let again = run(&config(&bundle, &a, 2), false).unwrap();
    assert!(again.executed.is_empty());
    assert_eq!(again.skipped, Stage::ALL.to_vec());
    assert_eq!(std::fs::read(a.join(RESULTS_FILE)).unwrap(), results);
    let after = std::fs::metadata(a.join("qk/layer_000.json"))
        .unwrap()
        .modified()
        .unwrap();
    assert_eq!(before, after);

    let forced = run(&config(&bundle, &a, 2), true).unwrap();
    assert_eq!(forced.executed, Stage::ALL.to_vec());
    assert_eq!(std::fs::read(a.join(RESULTS_FILE)).unwrap(), results);

    let v: serde_json::Value = serde_json::from_slice(&results).unwrap();
    let joint = v["semantics"]["dec"]["joint_pass_rate"].as_array().unwrap();
    assert_eq!(joint.len(), 4);
    assert_eq!(v["qk_post"]["layers"].as_array().unwrap().len(), 3);
    assert!(v["population"]["query"]["p75"][0].is_number());
}

#[test]
fn dependencies_are_scheduled_and_changes_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    write_bundle(&SynthConfig::tiny(4), &bundle).unwrap();
    let out = tmp.path().join("out");
    let mut cfg = config(&bundle, &out, 2);
    cfg.experiments = vec![Stage::QkPost];
    let o = run(&cfg, false).unwrap();
    assert_eq!(o.executed, vec![Stage::QkPre, Stage::QkPost]);

    cfg.tau_q = 0.5;
    let o = run(&cfg, false).unwrap();
    assert_eq!(o.executed, vec![Stage::QkPre, Stage::QkPost]);

    cfg.experiments = vec![Stage::Semantics];
    let o = run(&cfg, false).unwrap();
    assert_eq!(o.executed, vec![Stage::Attr, Stage::Metrics, Stage::Semantics]);
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    write_bundle(&SynthConfig::tiny(5), &bundle).unwrap();
    let out = tmp.path().join("out");

    let mut cfg = config(&bundle, &out, 1);
    cfg.percentile = 0.0;
    assert_eq!(exit_code(&run(&cfg, false).unwrap_err()), 2);

    let cfg = config(&tmp.path().join("missing"), &out, 1);
    assert_eq!(exit_code(&run(&cfg, false).unwrap_err()), 3);

    let mut cfg = config(&bundle, &out, 1);
    cfg.experiments = vec![Stage::Semantics];
    run(&cfg, false).unwrap();
    std::fs::remove_file(out.join("metrics/dec_layer_002.csv")).unwrap();
    std::fs::remove_file(out.join(".done/semantics.json")).unwrap();
    let err = run(&cfg, false).unwrap_err();
    assert_eq!(exit_code(&err), 4);
    assert!(err.to_string().contains("semantics"), "{err}");

    let mut manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(bundle.join("manifest.json")).unwrap()).unwrap();
    manifest["tensor_names"]["W_U"] = "nope".into();
    std::fs::write(bundle.join("manifest.json"), manifest.to_string()).unwrap();
    let mut cfg = config(&bundle, &tmp.path().join("fresh"), 1);
    cfg.experiments = vec![Stage::Attr];
    assert_eq!(exit_code(&run(&cfg, false).unwrap_err()), 3);
}

#[test]
fn untied_bundle_uses_phase_boundary() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    let mut s = SynthConfig::tiny(6);
    s.arch.tied_embeddings = false;
    write_bundle(&s, &bundle).unwrap();
    let out = tmp.path().join("out");
    let mut cfg = config(&bundle, &out, 2);
    cfg.phase_boundary = Some(2);
    run(&cfg, false).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join(RESULTS_FILE)).unwrap()).unwrap();
    assert_eq!(v["population"]["phase_boundary"], 2);
    assert_eq!(v["population"]["query"]["p75"].as_array().unwrap().len(), 2);
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn figures_match_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = tmp.path().join("bundle");
    write_bundle(&SynthConfig::planted(7), &bundle).unwrap();
    let out = tmp.path().join("out");
    run(&config(&bundle, &out, 2), false).unwrap();
    let figs = tmp.path().join("figs");
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for kind in PlotKind::ALL {
        for path in plot(&out, kind, &figs).unwrap() {
            let name = path.file_name().unwrap();
            let got = std::fs::read_to_string(&path).unwrap();
            let golden = golden_dir().join(name);
            if update {
                std::fs::create_dir_all(golden_dir()).unwrap();
                std::fs::write(&golden, &got).unwrap();
            }
            let want =
                std::fs::read_to_string(&golden).unwrap_or_else(|_| panic!("missing golden file {}", golden.display()));
            assert_eq!(got, want, "{} differs from its golden file", name.to_string_lossy());
        }
    }
}
