//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL ...` line.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use wiae::forecast::{gpf_sample, interval, quantile_sorted, write_ensemble_csv, ForecastEnsemble};
use wiae::metrics::{crps_empirical, dfa, hurst_rs, mase, smape};
use wiae::net::{encode_sequence, ParamSet, Role};
use wiae::oracle::{gaussian_crps, gen_ar, persistence_forecast, ArProcess, DEFAULT_BURN_IN};
use wiae::{train, NetConfig, TrainConfig};

fn report(n: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {n} ({name}): {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn criterion_1_metric_identities() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_mase = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(5..200);
        let x = normals(&mut rng, n);
        let t = rng.random_range(1..4);
        let v = mase(&x, &persistence_forecast(&x, t), t).unwrap();
        worst_mase = worst_mase.max((v - 1.0).abs());
    }
    let mut worst_crps = 0.0f64;
    for _ in 0..1000 {
        let (f, y): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        worst_crps = worst_crps.max((crps_empirical(&[f], y).unwrap() - (f - y).abs()).abs());
    }
    let mut smape_ok = true;
    for _ in 0..10_000 {
        let a: f64 = rng.sample::<f64, _>(StandardNormal) * 10f64.powi(rng.random_range(-3..4));
        let b: f64 = rng.sample::<f64, _>(StandardNormal) * 10f64.powi(rng.random_range(-3..4));
        let (v, _) = smape(&[a], &[b]).unwrap();
        smape_ok &= (0.0..=2.0).contains(&v);
    }
    let secs = clock.elapsed().as_secs_f64();
    report(
        1,
        "metric identities",
        worst_mase <= 1e-12 && worst_crps <= 1e-12 && smape_ok && secs < 5.0,
        format!("max|MASE-1|={worst_mase:.1e} max|CRPS-|f-y||={worst_crps:.1e} smape_in_range={smape_ok} {secs:.2}s"),
    );
}

/// `∫ (F(z) - 1{z >= y})² dz` for the empirical CDF, summed exactly over the
/// intervals between breakpoints where the integrand is constant.
fn crps_integral(samples: &[f64], y: f64) -> f64 {
    let mut pts: Vec<f64> = samples.to_vec();
    pts.push(y);
    pts.sort_by(f64::total_cmp);
    let k = samples.len() as f64;
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let f = samples.iter().filter(|&&s| s <= mid).count() as f64 / k;
        let h = if mid >= y { 1.0 } else { 0.0 };
        total += (f - h).powi(2) * (b - a);
    }
    total
}

#[test]
fn criterion_2_crps_matches_integral() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let k = rng.random_range(1..=64);
        let mut s = normals(&mut rng, k);
        if rng.random_bool(0.3) {
            // ties
            let j = rng.random_range(0..k);
            s.push(s[j]);
        }
        let y: f64 = rng.sample::<f64, _>(StandardNormal) * 2.0;
        worst = worst.max((crps_empirical(&s, y).unwrap() - crps_integral(&s, y)).abs());
    }
    let secs = clock.elapsed().as_secs_f64();
    report(2, "CRPS vs integral", worst <= 1e-6 && secs < 10.0, format!("max diff {worst:.2e} {secs:.2}s"));
}

#[test]
fn criterion_3_encoder_causality() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut outside_changed, mut inside_unchanged) = (0usize, 0usize);
    for _ in 0..100 {
        let m = rng.random_range(2..=16);
        let d = rng.random_range(1..=3);
        let cfg = NetConfig::new(m, d, rng.random_range(1..m));
        let params = ParamSet::init(&cfg, Role::Encoder, &mut rng);
        let len = 3 * m;
        let x: Vec<f32> = (0..len * d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        let base = encode_sequence(&cfg, &params, &x).unwrap();
        // row i of the output is V at position i + m - 1
        let t = rng.random_range(2 * m - 1..len - 1);
        let row = t + 1 - m;
        let v_t = base.row(row).to_vec();
        for p in 0..len {
            let mut y = x.clone();
            let c = rng.random_range(0..d);
            y[p * d + c] += 0.5 + rng.random::<f32>();
            let out = encode_sequence(&cfg, &params, &y).unwrap();
            let same = out.row(row) == v_t.as_slice();
            let inside = p + m > t && p <= t;
            if inside && same {
                inside_unchanged += 1;
            }
            if !inside && !same {
                outside_changed += 1;
            }
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    report(
        3,
        "causality",
        outside_changed == 0 && inside_unchanged == 0 && secs < 10.0,
        format!("outside-window changes={outside_changed} in-window no-ops={inside_unchanged} {secs:.2}s"),
    );
}

#[test]
fn criterion_4_determinism() {
    let p = ArProcess::ar1(0.8, 1.0).unwrap();
    let series = gen_ar(&p, 512, 11, DEFAULT_BURN_IN).unwrap();
    let net = NetConfig::new(8, 1, 1);
    let cfg = TrainConfig { epochs: 2, batch_size: 32, seed: 7, ..TrainConfig::default() };
    let a = train(&series, &net, &cfg).unwrap().checkpoint;
    let b = train(&series, &net, &cfg).unwrap().checkpoint;
    let same_ckpt = a.to_bytes().unwrap() == b.to_bytes().unwrap();
    let csv = |seed| {
        let e: ForecastEnsemble = gpf_sample(&a, &series, 1, 200, seed).unwrap();
        let mut out = Vec::new();
        write_ensemble_csv(&mut out, &[e]).unwrap();
        out
    };
    let same_csv = csv(5) == csv(5);
    let differs = csv(5) != csv(6);
    report(
        4,
        "determinism",
        same_ckpt && same_csv && differs,
        format!("checkpoints identical={same_ckpt} ensemble csv identical={same_csv} other seed differs={differs}"),
    );
}

#[test]
fn criterion_7_quantile_contracts() {
    let clock = Instant::now();
    let mut runner = TestRunner::new(Config { cases: 10_000, failure_persistence: None, ..Config::default() });
    let ensembles = prop::collection::vec(-1e3f64..1e3, 1..80);
    let levels = (0.001f64..0.999, 0.001f64..0.999);
    let result = runner.run(&(ensembles, levels), |(mut s, (a, b))| {
        s.sort_by(f64::total_cmp);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantile_sorted(&s, lo) <= quantile_sorted(&s, hi));
        let e = ForecastEnsemble::from_values(s.clone()).unwrap();
        let narrow = interval(&e, lo).unwrap();
        let wide = interval(&e, hi).unwrap();
        prop_assert!(wide.lower[0] <= narrow.lower[0] && narrow.upper[0] <= wide.upper[0]);
        prop_assert!(narrow.lower[0] <= narrow.upper[0]);
        Ok(())
    });
    let secs = clock.elapsed().as_secs_f64();
    let detail = match &result {
        Ok(()) => format!("10000 ensembles {secs:.2}s"),
        Err(e) => format!("{e}"),
    };
    report(7, "quantile/interval contracts", result.is_ok() && secs < 10.0, detail);
}

#[test]
fn criterion_8_long_range_diagnostics() {
    let clock = Instant::now();
    let n = 1 << 14;
    let (mut h, mut f) = (0.0, 0.0);
    for seed in 0..10 {
        let x = normals(&mut ChaCha8Rng::seed_from_u64(100 + seed), n);
        h += hurst_rs(&x).unwrap().exponent / 10.0;
        f += dfa(&x, 1).unwrap().exponent / 10.0;
    }
    let mut rw = 0.0;
    for seed in 0..10 {
        let steps = normals(&mut ChaCha8Rng::seed_from_u64(200 + seed), n);
        let walk: Vec<f64> = steps.iter().scan(0.0, |acc, e| { *acc += e; Some(*acc) }).collect();
        rw += dfa(&walk, 1).unwrap().exponent / 10.0;
    }
    let secs = clock.elapsed().as_secs_f64();
    report(
        8,
        "diagnostics sanity",
        (h - 0.5).abs() <= 0.05 && (f - 0.5).abs() <= 0.05 && (rw - 1.5).abs() <= 0.1 && secs < 30.0,
        format!("noise hurst={h:.3} dfa={f:.3}; walk dfa={rw:.3} {secs:.2}s"),
    );
}

// Criteria 5, 6 and 9 share one end-to-end run through the command line.

const PHI: f64 = 0.8;
const TRAIN: usize = 20_000;
const TEST: usize = 2_000;

struct Pipeline {
    seconds: f64,
    report: Value,
    oracle_crps: f64,
}

fn wiae(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_wiae")).args(args).output().expect("run wiae");
    assert!(out.status.success(), "wiae {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline() -> &'static Pipeline {
    static RUN: OnceLock<Pipeline> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-ar1");
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/ar1.toml");
        let data = dir.join("ar1.csv");
        let p = |x: &Path| x.to_str().unwrap().to_string();
        let sets = [format!("data={:?}", p(&data)), format!("out_dir={:?}", p(&dir))];

        let clock = Instant::now();
        wiae(&["synth", "--phi", "0.8", "--n", &(TRAIN + TEST).to_string(), "--seed", "1", "--out", &p(&data)]);
        let mut args = vec!["train".to_string(), "--config".into(), p(&config)];
        for s in &sets {
            args.extend(["--set".into(), s.clone()]);
        }
        wiae(&args.iter().map(String::as_str).collect::<Vec<_>>());
        args[0] = "forecast".into();
        args.extend(["--checkpoint".into(), p(&dir.join("model.wiae"))]);
        wiae(&args.iter().map(String::as_str).collect::<Vec<_>>());
        let report_path = dir.join("report.json");
        wiae(&[
            "evaluate",
            "--forecast",
            &p(&dir.join("ensemble.csv")),
            "--truth",
            &p(&data),
            "--checkpoint",
            &p(&dir.join("model.wiae")),
            "--innovations",
            "train",
            "--out",
            &p(&report_path),
        ]);
        let seconds = clock.elapsed().as_secs_f64();
        let report: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();

        // closed-form one-step conditional: N(φ x_t, 1)
        let text = std::fs::read_to_string(&data).unwrap();
        let x: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
        let origins = TRAIN - 1..TRAIN + TEST - 1;
        let oracle_crps =
            origins.clone().map(|t| gaussian_crps(PHI * x[t], 1.0, x[t + 1]).unwrap()).sum::<f64>() / origins.len() as f64;
        Pipeline { seconds, report, oracle_crps }
    })
}

#[test]
fn criterion_5_innovation_quality() {
    let r = &pipeline().report;
    let ks = r["innovation_ks"].as_f64().unwrap();
    let ac: Vec<f64> = r["innovation_autocorr"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let worst = ac.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    report(
        5,
        "innovation quality",
        ks < 0.05 && ac.len() == 10 && worst < 0.05,
        format!("KS={ks:.4} (<0.05) max|acf(1..10)|={worst:.4} (<0.05)"),
    );
}

#[test]
fn criterion_6_validity() {
    let run = pipeline();
    let r = &run.report;
    let optimum = 1.0 - PHI * PHI;
    let nmse = r["nmse"].as_f64().unwrap();
    let crps = r["crps"].as_f64().unwrap();
    let cpe50 = r["cpe50"].as_f64().unwrap();
    let cpe90 = r["cpe90"].as_f64().unwrap();
    let evaluated = r["meta"]["evaluated"].as_u64().unwrap();
    let a = (nmse - optimum).abs() <= 0.1 * optimum;
    let b = (crps - run.oracle_crps).abs() <= 0.2 * run.oracle_crps;
    let c = cpe50.abs() <= 0.10 && cpe90.abs() <= 0.10 && evaluated >= 2000;
    report(
        6,
        "validity on AR(1)",
        a && b && c,
        format!(
            "NMSE={nmse:.4} vs {optimum:.2}±10% [{}]; CRPS={crps:.4} vs oracle {:.4}±20% [{}]; CPE50={cpe50:+.3} CPE90={cpe90:+.3} over {evaluated} [{}]",
            ok(a),
            run.oracle_crps,
            ok(b),
            ok(c)
        ),
    );
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "miss"
    }
}

#[test]
fn criterion_9_end_to_end() {
    let run = pipeline();
    let r = &run.report;
    let ks = r["innovation_ks"].as_f64().unwrap();
    let worst = r["innovation_autocorr"].as_array().unwrap().iter().fold(0.0f64, |a, v| a.max(v.as_f64().unwrap().abs()));
    let optimum = 1.0 - PHI * PHI;
    let nmse = r["nmse"].as_f64().unwrap();
    let crps = r["crps"].as_f64().unwrap();
    let fields = ks < 0.05
        && worst < 0.05
        && (nmse - optimum).abs() <= 0.1 * optimum
        && (crps - run.oracle_crps).abs() <= 0.2 * run.oracle_crps
        && r["cpe50"].as_f64().unwrap().abs() <= 0.10
        && r["cpe90"].as_f64().unwrap().abs() <= 0.10;
    let fast = run.seconds <= 900.0;
    report(
        9,
        "end-to-end CLI run",
        fast && fields,
        format!("synth+train+forecast+evaluate {:.0}s (<=900) [{}]; report meets 5-6 [{}]", run.seconds, ok(fast), ok(fields)),
    );
}
