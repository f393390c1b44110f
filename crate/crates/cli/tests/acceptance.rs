//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use mmfuse::autodiff::{Graph, Tensor};
use mmfuse::data::features::{decode_features, encode_features};
use mmfuse::data::{augment, FeatureSequence, Modality};
use mmfuse::encoders::{encode_sequence, GruParams};
use mmfuse::fusion::{cross_attention_matrix, AttentionParams};
use mmfuse::loss::focal_loss;
use mmfuse::metrics::ccc;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

const PROPERTY_CASES: u32 = 1000;

fn mmfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmfuse"))
        .args(args)
        .output()
        .expect("mmfuse binary runs")
}

fn run_ok(args: &[&str]) -> Result<Output, String> {
    let o = mmfuse(args);
    if o.status.success() {
        Ok(o)
    } else {
        Err(format!(
            "`mmfuse {}` exited with {:?}: {}",
            args.join(" "),
            o.status.code(),
            String::from_utf8_lossy(&o.stderr).trim()
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn read_json(p: &Path) -> Result<Value, String> {
    let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_audit(tmp: &Path) -> Outcome {
    let out = tmp.join("audit.json");
    let start = Instant::now();
    run_ok(&["gradcheck", "--seed", "0", "--out", s(&out)])?;
    let secs = start.elapsed().as_secs_f64();
    let entries = read_json(&out)?;
    let entries = entries.as_array().ok_or("audit output is not a list")?;
    let mut worst = 0.0f64;
    let mut names = Vec::new();
    for e in entries {
        let err = e["max_rel_error"].as_f64().ok_or("missing max_rel_error")?;
        let name = e["name"].as_str().unwrap_or("?").to_string();
        check(err < 1e-4, || {
            format!("{name}: relative error {err:e} >= 1e-4")
        })?;
        worst = worst.max(err);
        names.push(name);
    }
    for required in [
        "op/matmul",
        "op/softmax_rows",
        "gru_forward",
        "cross_attention",
        "fuse",
        "head+focal",
        "head+mse",
        "recon",
        "pipeline/classification",
        "pipeline/regression",
    ] {
        check(names.iter().any(|n| n == required), || {
            format!("audit is missing {required}")
        })?;
    }
    check(secs < 30.0, || {
        format!("audit took {secs:.1}s (limit 30 s)")
    })?;
    Ok(format!(
        "{} checks, max relative error {worst:.2e} < 1e-4, {secs:.1}s < 30 s",
        names.len()
    ))
}

fn closed_form_oracles() -> Outcome {
    let mut g = Graph::new();
    let z = g.constant(Tensor::scalar(0.0).unwrap());
    let l = focal_loss(&mut g, z, &Tensor::scalar(1.0).unwrap(), 0.25, 2.0)
        .map_err(|e| e.to_string())?;
    let focal = g.value(l).item().unwrap();
    check((focal - 0.043322).abs() <= 1e-6, || {
        format!("focal {focal} != 0.043322 ± 1e-6")
    })?;

    let c1 = ccc(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).map_err(|e| e.to_string())?;
    let c2 = ccc(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).map_err(|e| e.to_string())?;
    check((c1 + 1.0).abs() <= 1e-9, || {
        format!("ccc reversed {c1} != -1")
    })?;
    check((c2 - 4.0 / 7.0).abs() <= 1e-9, || {
        format!("ccc shifted {c2} != 4/7")
    })?;

    let mut g = Graph::new();
    let p = AttentionParams::identity(2).bind(&mut g);
    let q = g.constant(Tensor::row(vec![1.0, 0.0]).unwrap());
    let kv = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let a = cross_attention_matrix(&mut g, q, kv, &p).map_err(|e| e.to_string())?;
    let w = g.value(a.weights).data().to_vec();
    let o = g.value(a.output).data().to_vec();
    for (got, want) in w.iter().chain(&o).zip([0.6698, 0.3302, 0.6698, 0.3302]) {
        check((got - want).abs() <= 1e-4, || {
            format!("attention hand example {got} != {want}")
        })?;
    }
    Ok(format!(
        "focal {focal:.6}, ccc {c1:.9} / {c2:.9}, attention weights [{:.4}, {:.4}]",
        w[0], w[1]
    ))
}

fn fusion_beats_unimodal(tmp: &Path) -> Outcome {
    let start = Instant::now();
    let data = tmp.join("cls");
    run_ok(&[
        "synth",
        "--out",
        s(&data),
        "--n",
        "2000",
        "--seed",
        "0",
        "--task",
        "classification",
    ])?;
    let out = tmp.join("ablate");
    run_ok(&[
        "ablate",
        "--manifest",
        s(&data.join("manifest.jsonl")),
        "--out",
        s(&out),
        "--seeds",
        "0,1,2",
        "--epochs",
        "50",
    ])?;
    let secs = start.elapsed().as_secs_f64();
    let report = read_json(&out.join("ablation.json"))?;
    let variants = report["variants"]
        .as_array()
        .ok_or("ablation.json has no variants")?;
    let mean = |name: &str| -> Result<f64, String> {
        variants
            .iter()
            .find(|v| v["variant"] == name)
            .and_then(|v| v["mean"].as_f64())
            .ok_or(format!("variant {name} missing"))
    };
    for v in variants {
        let epochs = v["best_epochs"].as_array().ok_or("missing best_epochs")?;
        check(epochs.len() == 3, || "expected 3 seeds per variant".into())?;
        check(
            epochs
                .iter()
                .all(|e| e.as_u64().is_some_and(|e| (1..=50).contains(&e))),
            || "best epoch outside 1..=50".into(),
        )?;
    }
    let full = mean("full")?;
    let concat = mean("concat")?;
    let singles = [mean("video-only")?, mean("image-only")?, mean("text-only")?];
    let best_single = singles.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let summary = format!(
        "full F1 {full:.4}, concat {concat:.4}, video/image/text {:.4}/{:.4}/{:.4}, {secs:.0}s",
        singles[0], singles[1], singles[2]
    );
    check(full >= 0.95, || {
        format!("full F1 {full:.4} < 0.95 ({summary})")
    })?;
    check(full - best_single >= 0.05, || {
        format!(
            "margin over best single {:.4} < 0.05 ({summary})",
            full - best_single
        )
    })?;
    check(full > concat, || {
        format!("full does not beat concat ({summary})")
    })?;
    check(secs < 600.0, || {
        format!("took {secs:.0}s, limit 600 s ({summary})")
    })?;
    Ok(summary)
}

fn synthetic_regression(tmp: &Path) -> Outcome {
    let data = tmp.join("reg");
    run_ok(&[
        "synth",
        "--out",
        s(&data),
        "--n",
        "2000",
        "--seed",
        "0",
        "--task",
        "regression",
    ])?;
    let run = tmp.join("reg-run");
    run_ok(&[
        "train",
        "--manifest",
        s(&data.join("manifest.jsonl")),
        "--out",
        s(&run),
        "--seed",
        "0",
        "--task",
        "regression",
        "--epochs",
        "50",
    ])?;
    let index = read_json(&run.join("checkpoint").join("index.json"))?;
    let best = index["best_score"]
        .as_f64()
        .ok_or("checkpoint has no best_score")?;
    let epoch = index["epoch"].as_u64().unwrap_or(0);
    check(best >= 0.80, || format!("validation CCC {best:.4} < 0.80"))?;
    Ok(format!(
        "validation CCC {best:.4} >= 0.80 (best epoch {epoch} of <= 50)"
    ))
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

fn determinism(tmp: &Path) -> Outcome {
    let data = tmp.join("det");
    run_ok(&["synth", "--out", s(&data), "--n", "200", "--seed", "4"])?;
    let manifest = data.join("manifest.jsonl");
    let run = |name: &str| -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
        let out = tmp.join(name);
        run_ok(&[
            "train",
            "--manifest",
            s(&manifest),
            "--out",
            s(&out),
            "--seed",
            "13",
            "--epochs",
            "4",
            "--recon",
        ])?;
        Ok(files_under(&out))
    };
    let a = run("det-a")?;
    let b = run("det-b")?;
    check(a.len() >= 3, || {
        format!("expected log + checkpoint files, found {}", a.len())
    })?;
    for ((pa, ba), (pb, bb)) in a.iter().zip(&b) {
        check(pa == pb && ba == bb, || {
            format!("{} differs between runs", pa.display())
        })?;
    }
    check(a.len() == b.len(), || {
        "runs wrote different file sets".into()
    })?;
    let bytes: usize = a.iter().map(|(_, b)| b.len()).sum();
    Ok(format!(
        "{} files ({bytes} bytes) bit-identical across two runs",
        a.len()
    ))
}

fn reporting(tmp: &Path) -> Outcome {
    let mut lines = Vec::new();
    for (label, metric, scores, want) in [
        (
            "DVD",
            "f1",
            [0.9450, 0.9442, 0.9404, 0.9380, 0.9400],
            "0.94152",
        ),
        (
            "Aff-Wild2",
            "ccc",
            [0.8869, 0.8915, 0.8948, 0.8880, 0.8890],
            "0.89004",
        ),
    ] {
        let mut paths = Vec::new();
        for (i, score) in scores.iter().enumerate() {
            let p = tmp.join(format!("{label}-{i}.json"));
            let body = serde_json::json!({"metric": metric, "score": score, "fold": i + 1, "n": 1});
            fs::write(&p, body.to_string()).map_err(|e| e.to_string())?;
            paths.push(p);
        }
        let mut args = vec!["report", "--label", label];
        args.extend(paths.iter().map(|p| s(p)));
        let o = run_ok(&args)?;
        let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
        let json: Value =
            serde_json::from_str(stdout.lines().last().unwrap_or("")).map_err(|e| e.to_string())?;
        let mean = json["mean"].as_f64().ok_or("report JSON has no mean")?;
        let shown = format!("{mean:.5}");
        check(shown == want, || format!("{label} mean {shown} != {want}"))?;
        let row = stdout.lines().find(|l| l.starts_with(label)).unwrap_or("");
        check(row.contains(want), || {
            format!("{label} table row lacks {want}: {row:?}")
        })?;
        lines.push(format!("{label} {shown}"));
    }
    Ok(lines.join(", "))
}

fn property<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: PROPERTY_CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, test)
        .map_err(|e| format!("{name}: {e}"))
}

fn invariant_suites() -> Outcome {
    let matrix = (1usize..6, 1usize..9).prop_flat_map(|(r, c)| {
        (
            Just(r),
            Just(c),
            prop::collection::vec(-50.0f64..50.0, r * c),
        )
    });
    property("softmax normalization", matrix, |(r, c, d)| {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(r, c, d).unwrap());
        let sm = g.softmax_rows(x).unwrap();
        for i in 0..r {
            let row = g.value(sm).row_slice(i);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        Ok(())
    })?;

    let attention = (1usize..7, 1usize..17).prop_flat_map(|(d, t)| {
        (
            Just(d),
            Just(t),
            prop::collection::vec(-3.0f64..3.0, d),
            prop::collection::vec(-3.0f64..3.0, t * d),
            any::<u64>(),
        )
    });
    let attend = |d: usize, q: &[f64], kv: Tensor, p: &AttentionParams| {
        let mut g = Graph::new();
        let pv = p.bind(&mut g);
        let qv = g.constant(Tensor::row(q.to_vec()).unwrap());
        let kvv = g.constant(kv.clone());
        let a = cross_attention_matrix(&mut g, qv, kvv, &pv).unwrap();
        let wv = g.constant(p.w_v.clone());
        let values = g.matmul(kvv, wv).unwrap();
        assert_eq!(g.shape(a.output), (1, d));
        (g.value(a.output).clone(), g.value(values).clone())
    };
    property(
        "attention convex hull",
        attention.clone(),
        |(d, t, q, kv, seed)| {
            let p = AttentionParams::init(d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let (out, values) = attend(d, &q, Tensor::matrix(t, d, kv).unwrap(), &p);
            for c in 0..d {
                let lo = (0..t)
                    .map(|r| values.get(r, c))
                    .fold(f64::INFINITY, f64::min);
                let hi = (0..t)
                    .map(|r| values.get(r, c))
                    .fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(out.get(0, c) >= lo - 1e-12 && out.get(0, c) <= hi + 1e-12);
            }
            Ok(())
        },
    )?;
    property(
        "attention permutation invariance",
        attention,
        |(d, t, q, kv, seed)| {
            let p = AttentionParams::init(d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let rev: Vec<f64> = (0..t)
                .rev()
                .flat_map(|i| kv[i * d..(i + 1) * d].to_vec())
                .collect();
            let (a, _) = attend(d, &q, Tensor::matrix(t, d, kv).unwrap(), &p);
            let (b, _) = attend(d, &q, Tensor::matrix(t, d, rev).unwrap(), &p);
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            Ok(())
        },
    )?;

    let gru = (1usize..9, 1usize..9, 1usize..17, any::<u64>());
    property("GRU |h| < 1", gru, |(d_in, d_h, t, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = GruParams::init(d_in, d_h, &mut rng).unwrap();
        let data: Vec<f32> = (0..t * d_in)
            .map(|_| rand::Rng::gen_range(&mut rng, -3.0f32..3.0))
            .collect();
        let h = encode_sequence(
            &p,
            &FeatureSequence::new(Modality::Video, t, d_in, data).unwrap(),
        )
        .unwrap();
        prop_assert!(h.data().iter().all(|v| v.abs() < 1.0));
        Ok(())
    })?;

    let seq = |max_t: usize, max_d: usize| {
        (1..=max_t, 1..=max_d).prop_flat_map(|(t, d)| {
            (
                Just(t),
                Just(d),
                prop::collection::vec(prop::num::f32::NORMAL | prop::num::f32::ZERO, t * d),
            )
        })
    };
    property(
        "augment identity at (0, 0)",
        (seq(32, 16), any::<u64>()),
        |((t, d, data), seed)| {
            let x = FeatureSequence::new(Modality::Text, t, d, data).unwrap();
            let y = augment(&x, 0.0, 0.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert!(x
                .data()
                .iter()
                .zip(y.data())
                .all(|(a, b)| a.to_bits() == b.to_bits()));
            Ok(())
        },
    )?;
    property("feature-file roundtrip", seq(64, 512), |(t, d, data)| {
        let x = FeatureSequence::new(Modality::Image, t, d, data).unwrap();
        let y = decode_features(&encode_features(&x).unwrap(), Modality::Image).unwrap();
        prop_assert_eq!((y.steps(), y.dim()), (t, d));
        prop_assert!(x
            .data()
            .iter()
            .zip(y.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        Ok(())
    })?;
    Ok(format!("6 properties x {PROPERTY_CASES} cases"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<Criterion> = vec![
        ("gradient audit", Box::new(|| gradient_audit(tmp.path()))),
        ("closed-form oracles", Box::new(closed_form_oracles)),
        (
            "fusion beats unimodal",
            Box::new(|| fusion_beats_unimodal(tmp.path())),
        ),
        (
            "synthetic regression",
            Box::new(|| synthetic_regression(tmp.path())),
        ),
        ("determinism", Box::new(|| determinism(tmp.path()))),
        ("reporting fidelity", Box::new(|| reporting(tmp.path()))),
        ("invariant suites", Box::new(invariant_suites)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(msg) => println!("PASS [{}] {name}: {msg}", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL [{}] {name}: {msg}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
