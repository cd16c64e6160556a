#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use sccor::featbin::write_feature_map;
use sccor::flo::write_flo_file;
use sccor::image_io::write_mask;
use sccor::{BinaryMask, FeatureMap, FlowField};

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the tool at `bin`. Each test target passes its own package's binary.
pub fn run<I, S>(bin: &str, args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = Command::new(bin)
        .args(args)
        .env("SCCOR_THREADS", "2")
        .output()
        .expect("binary runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn square(t: usize) -> BinaryMask {
    let x0 = 4 + 2 * t;
    BinaryMask::from_fn(32, 32, |h, w| (10..18).contains(&h) && (x0..x0 + 8).contains(&w)).unwrap()
}

/// Ten frames of an 8x8 square moving 2 px right per frame, as `pred`, `gt`
/// and `flows` roots holding one video. Predictions equal the ground truth.
pub fn square_video(root: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let (pred, gt, flows) = (root.join("pred"), root.join("gt"), root.join("flows"));
    for dir in [&pred, &gt, &flows] {
        std::fs::create_dir_all(dir.join("square")).unwrap();
    }
    for t in 0..10 {
        let name = format!("{t:03}.png");
        write_mask(pred.join("square").join(&name), &square(t)).unwrap();
        write_mask(gt.join("square").join(&name), &square(t)).unwrap();
        if t < 9 {
            let flow = FlowField::uniform(32, 32, 2.0, 0.0).unwrap();
            write_flo_file(flows.join("square").join(format!("{t:03}_to_{:03}.flo", t + 1)), &flow).unwrap();
        }
    }
    (pred, gt, flows)
}

/// Feature maps and masks for `corr-ratio`: a 2x2 grid with the shadow in the
/// left column.
pub fn corr_fixture(root: &Path, target: &[[f64; 2]; 4]) -> [PathBuf; 4] {
    let src = [[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
    let paths = ["a.bin", "b.bin", "a.pgm", "b.pgm"].map(|n| root.join(n));
    write_feature_map(&paths[0], &FeatureMap::new(2, 2, 2, src.concat()).unwrap()).unwrap();
    write_feature_map(&paths[1], &FeatureMap::new(2, 2, 2, target.concat()).unwrap()).unwrap();
    let mask = BinaryMask::new(2, 2, vec![1, 0, 1, 0]).unwrap();
    write_mask(&paths[2], &mask).unwrap();
    write_mask(&paths[3], &mask).unwrap();
    paths
}

/// `key=value` fields of a report line.
pub fn field(text: &str, key: &str) -> Option<f64> {
    text.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
        .and_then(|v| v.parse().ok())
}
