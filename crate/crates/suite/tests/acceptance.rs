//! Acceptance checks, one verdict line per criterion. Exits non-zero when any
//! criterion fails.

#[path = "../../cli/tests/support/mod.rs"]
mod support;

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sccor::flo::{read_flo, write_flo, write_flo_file};
use sccor::image_io::write_mask;
use sccor::loss::sc_cor_loss;
use sccor::synth::{train_toy, BenchmarkConfig, ClipVariation, SynthConfig, ToyConfig, TrainHyper};
use sccor::{BinaryMask, FeatureMap, FlowField};

use support::{field, square_video};

fn sccor<I, S>(args: I) -> support::Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    support::run(env!("CARGO_BIN_EXE_sccor-suite"), args)
}

const SEEDS: u64 = 10;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let out = sccor(["gradcheck", "--trials", "100", "--seed", "0"]);
    let took = start.elapsed();
    let errors: Vec<&str> = out
        .stdout
        .lines()
        .filter(|l| l.contains("max_rel_error"))
        .filter_map(|l| l.split_whitespace().take(2).last())
        .collect();
    verdict(
        out.code == 0 && took < Duration::from_secs(60),
        format!("exit {} in {:.1}s, {}", out.code, took.as_secs_f64(), errors.join(" ")),
    )
}

fn oracles() -> Verdict {
    let start = Instant::now();
    let res = oracle::run(2024, 1000);
    let took = start.elapsed();
    match res {
        Ok(()) => verdict(
            took < Duration::from_secs(30),
            format!("1000 instances agree in {:.2}s", took.as_secs_f64()),
        ),
        Err(e) => verdict(false, e),
    }
}

fn small_config() -> ToyConfig {
    ToyConfig {
        bench: BenchmarkConfig {
            train_clips: 2,
            eval_clips: 1,
            clip: SynthConfig {
                image_size: 34,
                grid: 17,
                illumination_drift: 0.05,
                ..SynthConfig::default()
            },
            variation: ClipVariation {
                max_speed: 1,
                radius: (0.15, 0.2),
            },
        },
        hyper: TrainHyper {
            iters: 40,
            ..TrainHyper::default()
        },
        use_sc_cor: true,
        use_bs: false,
    }
}

fn loss_identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut identical_ok = true;
    for _ in 0..200 {
        let (h, w, d) = (rng.gen_range(1..=5), rng.gen_range(1..=5), rng.gen_range(1..=4));
        let f = FeatureMap::new(h, w, d, (0..h * w * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let y = BinaryMask::new(h, w, (0..h * w).map(|_| u8::from(rng.gen_bool(0.5))).collect()).unwrap();
        let l = sc_cor_loss(&f, &f, &y, &y, 0.5).unwrap();
        identical_ok &= l.shadow_fwd == 0.0 && l.shadow_bwd == 0.0;
    }

    let mut base = small_config();
    base.use_sc_cor = false;
    let mut zero = small_config();
    zero.hyper.lambda = 0.0;
    let bits = |c: &ToyConfig| -> Vec<(u64, u64)> {
        train_toy(c)
            .unwrap()
            .losses
            .iter()
            .map(|l| (l.l_seg.to_bits(), l.total.to_bits()))
            .collect()
    };
    let baseline_ok = bits(&base) == bits(&zero);

    // Shadow and non-shadow cells are orthogonal, so every non-shadow match
    // sits a full unit below the best one.
    let cells = [[1.0, 0.0], [0.0, 1.0], [0.0, 2.0], [3.0, 0.0]];
    let f = FeatureMap::new(2, 2, 2, cells.concat()).unwrap();
    let g = FeatureMap::new(2, 2, 2, cells.iter().rev().flatten().copied().collect()).unwrap();
    let y = BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
    let l = sc_cor_loss(&f, &g, &y, &y, 0.5).unwrap();
    let margin_ok = l.nshadow_fwd == 0.0 && l.nshadow_bwd == 0.0;

    verdict(
        identical_ok && baseline_ok && margin_ok,
        format!("identical pairs {identical_ok}, lambda=0 series bit-identical {baseline_ok}, margin {margin_ok}"),
    )
}

fn eval_ts(pred: &Path, gt: &Path, flows: &Path) -> Option<f64> {
    let out = sccor([
        "eval".as_ref(),
        "--pred".as_ref(),
        pred.as_os_str(),
        "--gt".as_ref(),
        gt.as_os_str(),
        "--flows".as_ref(),
        flows.as_os_str(),
    ]);
    (out.code == 0).then(|| field(&out.stdout, "ts")).flatten()
}

fn ts_sanity() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("still");
    let (pred, gt, flows) = (root.join("pred/v"), root.join("gt/v"), root.join("flows/v"));
    for d in [&pred, &gt, &flows] {
        fs::create_dir_all(d).unwrap();
    }
    let mask = BinaryMask::from_fn(16, 16, |h, w| (h + w) % 5 < 2).unwrap();
    for t in 0..5 {
        write_mask(pred.join(format!("{t}.png")), &mask).unwrap();
        write_mask(gt.join(format!("{t}.png")), &mask).unwrap();
        if t < 4 {
            write_flo_file(
                flows.join(format!("{t}_to_{}.flo", t + 1)),
                &FlowField::zeros(16, 16).unwrap(),
            )
            .unwrap();
        }
    }
    let still = eval_ts(&root.join("pred"), &root.join("gt"), &root.join("flows"));

    let (pred, gt, flows) = square_video(&dir.path().join("square"));
    let moving = eval_ts(&pred, &gt, &flows);

    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut identical = 0;
    for _ in 0..50 {
        let (h, w) = (rng.gen_range(1..24), rng.gen_range(1..24));
        let data = (0..h * w)
            .map(|_| [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)])
            .collect();
        let bytes = write_flo(&FlowField::new(h, w, data).unwrap()).unwrap();
        identical += usize::from(write_flo(&read_flo(&bytes).unwrap()).unwrap() == bytes);
    }
    verdict(
        still == Some(100.0) && moving.is_some_and(|t| t >= 95.0) && identical == 50,
        format!("still TS={still:?}, translating square TS={moving:?}, .flo byte-identical {identical}/50"),
    )
}

struct RunResult {
    ratio: f64,
    ts: f64,
    iou: f64,
    avg: f64,
}

fn train_run(dir: &Path, seed: u64, sc: bool, bs: bool) -> RunResult {
    let out_dir = dir.join(format!("s{seed}-{sc}-{bs}"));
    let out = sccor([
        "train-toy".to_string(),
        "--out".into(),
        out_dir.display().to_string(),
        "--override".into(),
        format!("seed={seed}"),
        "--override".into(),
        format!("use_sc_cor={sc}"),
        "--override".into(),
        format!("use_bs={bs}"),
    ]);
    assert_eq!(out.code, 0, "train-toy failed: {}", out.stderr);
    let report = fs::read_to_string(out_dir.join("report.txt")).unwrap();
    let get = |k: &str| field(&report, k).unwrap_or_else(|| panic!("{k} missing from report"));
    RunResult {
        ratio: get("final_ratio_pct"),
        ts: get("final_ts_pct"),
        iou: get("final_iou_pct"),
        avg: get("final_avg_pct"),
    }
}

fn trends() -> (Verdict, Verdict) {
    let dir = tempfile::tempdir().unwrap();
    let (mut trend_wins, mut ablation_wins) = (0, 0);
    let mut slowest = Duration::ZERO;
    for seed in 0..SEEDS {
        let start = Instant::now();
        let base = train_run(dir.path(), seed, false, false);
        let sc = train_run(dir.path(), seed, true, false);
        slowest = slowest.max(start.elapsed());
        let both = train_run(dir.path(), seed, true, true);
        let trend = sc.ratio >= base.ratio + 10.0 && sc.ts >= base.ts;
        let ablation = both.avg >= sc.avg;
        trend_wins += u32::from(trend);
        ablation_wins += u32::from(ablation);
        println!(
            "  seed {seed}: baseline ratio {:.2} ts {:.2} iou {:.2} | sc ratio {:.2} ts {:.2} iou {:.2} avg {:.2} | sc+bs ts {:.2} iou {:.2} avg {:.2}",
            base.ratio, base.ts, base.iou, sc.ratio, sc.ts, sc.iou, sc.avg, both.ts, both.iou, both.avg
        );
    }
    (
        verdict(
            trend_wins >= 8 && slowest < Duration::from_secs(300),
            format!(
                "{trend_wins}/{SEEDS} seeds gain >=10pp ratio without losing TS (need 8); slowest paired run {:.1}s",
                slowest.as_secs_f64()
            ),
        ),
        verdict(
            ablation_wins >= 7,
            format!("{ablation_wins}/{SEEDS} seeds where SC+BS AVG >= SC AVG (need 7)"),
        ),
    )
}

fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt, flows) = square_video(&dir.path().join("fixture"));
    let [fa, fb, ya, yb] = support::corr_fixture(dir.path(), &[[0.5, 1.0], [1.0, 0.2], [0.3, 0.3], [1.0, -1.0]]);
    let mut same = Vec::new();
    for round in 0..2 {
        let mut outputs = Vec::new();
        let run_dir = dir.path().join(format!("run{round}"));
        let train = sccor([
            "train-toy".to_string(),
            "--out".into(),
            run_dir.display().to_string(),
            "--override".into(),
            "iters=30".into(),
        ]);
        outputs.push(train.stdout);
        outputs.push(fs::read_to_string(run_dir.join("report.txt")).unwrap_or_default());
        outputs.push(fs::read_to_string(run_dir.join("losses.csv")).unwrap_or_default());
        outputs.push(sccor(["gradcheck", "--trials", "3", "--seed", "9"]).stdout);
        outputs.push(
            sccor([
                "eval".as_ref(),
                "--pred".as_ref(),
                pred.as_os_str(),
                "--gt".as_ref(),
                gt.as_os_str(),
                "--flows".as_ref(),
                flows.as_os_str(),
            ])
            .stdout,
        );
        outputs.push(
            sccor([
                "eval".as_ref(),
                "--pred".as_ref(),
                pred.as_os_str(),
                "--gt".as_ref(),
                gt.as_os_str(),
            ])
            .stdout,
        );
        outputs.push(
            sccor([
                "corr-ratio".as_ref(),
                fa.as_os_str(),
                fb.as_os_str(),
                ya.as_os_str(),
                yb.as_os_str(),
            ])
            .stdout,
        );
        let data_dir = dir.path().join(format!("data{round}"));
        sccor([
            "gen-data".to_string(),
            "--out".into(),
            data_dir.display().to_string(),
            "--override".into(),
            "train_clips=1".into(),
            "--override".into(),
            "eval_clips=1".into(),
        ]);
        let mut files = Vec::new();
        let mut stack = vec![data_dir.clone()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push((p.strip_prefix(&data_dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        outputs.push(format!("{files:?}"));
        same.push(outputs);
    }
    let nonempty = same[0].iter().all(|o| !o.is_empty());
    let diffs = same[0].iter().zip(&same[1]).filter(|(a, b)| a != b).count();
    verdict(
        diffs == 0 && nonempty,
        format!("{} outputs compared across two rounds, {diffs} differ", same[0].len()),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: usize, name: &str, v: Verdict| {
        all &= v.pass;
        println!(
            "criterion {n} {name}: {} ({})",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    };
    report(1, "gradient correctness", gradients());
    report(2, "oracle equivalence", oracles());
    report(3, "loss identities", loss_identities());
    report(4, "temporal stability sanity", ts_sanity());
    let (trend, ablation) = trends();
    report(5, "trend reproduction", trend);
    report(6, "ablation direction", ablation);
    report(7, "determinism", determinism());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
