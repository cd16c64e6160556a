use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use sccor::config::KeyValues;
use sccor::correspondence::{correspondence_ratio, find_correspondences};
use sccor::featbin::read_feature_map;
use sccor::flo::{read_flo_file, write_flo_file};
use sccor::gradcheck::{check_gradient, random_bce_case, BceObjective, GradCheckReport, ScCorCase};
use sccor::image_io::{read_mask, read_prob_mask, write_frame, write_mask};
use sccor::loss::{DEFAULT_BETA, DEFAULT_LAMBDA};
use sccor::metrics::{block_matching_flow, dataset_report_parallel, EvalOptions, VideoEval};
use sccor::synth::{chain_check_fixture, run_data, train_toy as run_training, ChainObjective, ToyConfig};
use sccor::{Error, FlowField};

const DEFAULT_CONFIG: &str = include_str!("../config/toy_default.conf");

/// Tile size and search radius of the block-matching fallback.
const MATCH_BLOCK: usize = 8;
const MATCH_RADIUS: usize = 8;

const SC_THRESHOLD: f64 = 1e-4;
const BCE_THRESHOLD: f64 = 1e-6;
const CHAIN_THRESHOLD: f64 = 1e-3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn check(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged { .. } => Self::check(e.to_string()),
            _ => Self::input(e.to_string()),
        }
    }
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| Failure {
        message: format!("{}: {e}", path.display()),
        ..Failure::from(e)
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::input(format!("{}: {e}", path.display()))
}

fn is_mask_file(p: &Path) -> bool {
    matches!(
        p.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "pgm")
    )
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<BTreeSet<String>, Failure> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let entry = entry.map_err(io_at(dir))?;
        let path = entry.path();
        let keep = if want_dirs {
            path.is_dir()
        } else {
            path.is_file() && is_mask_file(&path)
        };
        if keep {
            names.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

/// First name present in one set but not the other, with the path where it
/// was expected.
fn first_mismatch(a: &BTreeSet<String>, a_root: &Path, b: &BTreeSet<String>, b_root: &Path) -> Option<PathBuf> {
    a.symmetric_difference(b).next().map(|name| {
        if a.contains(name) {
            b_root.join(name)
        } else {
            a_root.join(name)
        }
    })
}

fn stem(name: &str) -> &str {
    name.rsplit_once('.').map_or(name, |(s, _)| s)
}

fn thread_budget() -> Result<usize, Failure> {
    match std::env::var("SCCOR_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Failure::input(format!("SCCOR_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

pub fn eval(
    pred: &Path,
    gt: &Path,
    flows: Option<&Path>,
    out: Option<&Path>,
    beta2: f64,
    threshold: f64,
) -> Result<(), Failure> {
    let gt_videos = sorted_entries(gt, true)?;
    let pred_videos = sorted_entries(pred, true)?;
    if let Some(p) = first_mismatch(&pred_videos, pred, &gt_videos, gt) {
        return Err(Failure::input(format!("missing video directory {}", p.display())));
    }
    if gt_videos.is_empty() {
        return Err(Failure::input(format!("no video directories under {}", gt.display())));
    }
    if flows.is_none() {
        eprintln!(
            "note: no --flows given; estimating flow by block matching on the ground truth \
             (block {MATCH_BLOCK}, radius {MATCH_RADIUS})"
        );
    }

    let mut videos = Vec::with_capacity(gt_videos.len());
    for name in &gt_videos {
        let (pdir, gdir) = (pred.join(name), gt.join(name));
        let gt_frames = sorted_entries(&gdir, false)?;
        let pred_frames = sorted_entries(&pdir, false)?;
        if let Some(p) = first_mismatch(&pred_frames, &pdir, &gt_frames, &gdir) {
            return Err(Failure::input(format!("missing frame {}", p.display())));
        }
        let mut preds = Vec::with_capacity(gt_frames.len());
        let mut gts = Vec::with_capacity(gt_frames.len());
        for f in &gt_frames {
            let (pp, gp) = (pdir.join(f), gdir.join(f));
            preds.push(read_prob_mask(&pp).map_err(with_path(&pp))?);
            gts.push(read_mask(&gp).map_err(with_path(&gp))?);
        }
        let names: Vec<&String> = gt_frames.iter().collect();
        let flow_fields = names
            .windows(2)
            .zip(gts.windows(2))
            .map(|(pair, masks)| match flows {
                Some(root) => {
                    let path = root
                        .join(name)
                        .join(format!("{}_to_{}.flo", stem(pair[0]), stem(pair[1])));
                    if !path.is_file() {
                        return Err(Failure::input(format!("missing flow file {}", path.display())));
                    }
                    read_flo_file(&path).map_err(with_path(&path))
                }
                None => block_matching_flow(&masks[0], &masks[1], MATCH_BLOCK, MATCH_RADIUS).map_err(Failure::from),
            })
            .collect::<Result<Vec<FlowField>, Failure>>()?;
        videos.push(VideoEval {
            name: name.clone(),
            preds,
            gts,
            flows: flow_fields,
        });
    }

    let opts = EvalOptions { threshold, beta2 };
    let report = dataset_report_parallel(&videos, &opts, thread_budget()?)?;
    let text = format!("{}\n{}", report.to_kv_line(), report.to_table());
    print!("{text}");
    if let Some(path) = out {
        fs::write(path, &text).map_err(io_at(path))?;
    }
    Ok(())
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ToyConfig, Failure> {
    let text = match path {
        Some(p) => fs::read_to_string(p).map_err(io_at(p))?,
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut kv = KeyValues::parse(&text)?;
    for o in overrides {
        kv.set_assignment(o)?;
    }
    Ok(ToyConfig::from_kv(&kv)?)
}

pub fn train_toy(config: Option<&Path>, overrides: &[String], out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config, overrides)?;
    let report = run_training(&cfg)?;
    fs::create_dir_all(out).map_err(io_at(out))?;
    let report_path = out.join("report.txt");
    fs::write(&report_path, report.to_kv_text()).map_err(io_at(&report_path))?;
    let csv_path = out.join("losses.csv");
    fs::write(&csv_path, report.loss_csv()).map_err(io_at(&csv_path))?;
    let mode = if report.is_baseline() { "baseline" } else { "sc_cor" };
    println!("{mode} {}", report.summary_line());
    eprintln!(
        "trained {} iterations in {:.2?}",
        report.losses.len(),
        report.wall_clock
    );
    Ok(())
}

fn verdict(name: &str, r: &GradCheckReport, threshold: f64) -> bool {
    let pass = r.max_rel_error < threshold;
    println!(
        "{name:<12} max_rel_error={:.3e} threshold={threshold:.0e} checked={} skipped={} {}",
        r.max_rel_error,
        r.checked,
        r.skipped.len(),
        if pass { "pass" } else { "FAIL" }
    );
    pass
}

pub fn gradcheck(seed: u64, trials: usize) -> Result<(), Failure> {
    if trials == 0 {
        return Err(Failure::input("--trials must be at least 1"));
    }
    let (mut sc, mut bce, mut chain) = (
        GradCheckReport::empty(),
        GradCheckReport::empty(),
        GradCheckReport::empty(),
    );
    for i in 0..trials as u64 {
        let s = seed.wrapping_add(i);
        sc = sc.merge(&ScCorCase::random(s, 3, 2)?.check(DEFAULT_BETA, 1e-5)?);

        let (preds, gts) = random_bce_case(s, 2, 3)?;
        bce = bce.merge(&check_gradient(&BceObjective { gts: &gts }, &preds, 1e-6)?);

        let (groups, params) = chain_check_fixture(s)?;
        let obj = ChainObjective {
            hidden: params.hidden,
            dim: params.dim,
            grid: params.grid,
            groups: &groups,
            lambda: DEFAULT_LAMBDA,
            beta: DEFAULT_BETA,
        };
        chain = chain.merge(&check_gradient(&obj, &params.values, 1e-5)?);
    }
    let tie = ScCorCase::exact_tie().check(DEFAULT_BETA, 1e-5)?;

    println!("trials={trials} seed={seed}");
    let mut ok = verdict("sc_cor_loss", &sc, SC_THRESHOLD);
    ok &= verdict("bce", &bce, BCE_THRESHOLD);
    ok &= verdict("toy_chain", &chain, CHAIN_THRESHOLD);
    ok &= verdict("tie_case", &tie, SC_THRESHOLD);
    println!("tie_case skipped coordinates: {:?}", tie.skipped);
    if ok {
        Ok(())
    } else {
        Err(Failure::check("gradient check failed"))
    }
}

pub fn corr_ratio(feat_a: &Path, feat_b: &Path, mask_a: &Path, mask_b: &Path) -> Result<(), Failure> {
    let fa = read_feature_map(feat_a).map_err(with_path(feat_a))?;
    let fb = read_feature_map(feat_b).map_err(with_path(feat_b))?;
    let (ha, hb) = ((fa.height(), fa.width(), fa.dim()), (fb.height(), fb.width(), fb.dim()));
    if ha != hb {
        return Err(Failure::input(format!(
            "feature headers differ: {}x{}x{} vs {}x{}x{}",
            ha.0, ha.1, ha.2, hb.0, hb.1, hb.2
        )));
    }
    let ya = read_mask(mask_a).map_err(with_path(mask_a))?;
    let yb = read_mask(mask_b).map_err(with_path(mask_b))?;
    let corr = find_correspondences(&fa, &fb, &ya, &yb)?;
    println!("{:.2}", 100.0 * correspondence_ratio(&corr, &yb));
    Ok(())
}

pub fn gen_data(config: Option<&Path>, overrides: &[String], out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config, overrides)?;
    let (train, eval) = run_data(&cfg)?;
    let mut written = 0;
    for (split, data) in [("train", &train), ("eval", &eval)] {
        for (i, clip) in data.clips.iter().enumerate() {
            let video = format!("{split}{i:03}");
            for (t, (frame, mask)) in clip.frames().iter().zip(clip.gt_masks()).enumerate() {
                let fpath = out.join("frames").join(&video).join(format!("{t:03}.png"));
                let gpath = out.join("gt").join(&video).join(format!("{t:03}.png"));
                for p in [&fpath, &gpath] {
                    let dir = p.parent().expect("joined path has a parent");
                    fs::create_dir_all(dir).map_err(io_at(dir))?;
                }
                write_frame(&fpath, frame).map_err(with_path(&fpath))?;
                write_mask(&gpath, mask).map_err(with_path(&gpath))?;
            }
            for (t, flow) in clip.flows().unwrap_or_default().iter().enumerate() {
                let path = out
                    .join("flows")
                    .join(&video)
                    .join(format!("{t:03}_to_{:03}.flo", t + 1));
                let dir = path.parent().expect("joined path has a parent");
                fs::create_dir_all(dir).map_err(io_at(dir))?;
                write_flo_file(&path, flow).map_err(with_path(&path))?;
            }
            written += 1;
        }
    }
    println!("wrote {written} clips to {}", out.display());
    Ok(())
}
