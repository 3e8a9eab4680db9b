#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pixelnn::resample::box_downsample;
use pixelnn::{save_png, ImageRGB};

pub const SIZE: usize = 16;

/// Deterministic smooth image, already on the 8-bit grid.
pub fn pattern(seed: usize, size: usize) -> ImageRGB {
    let s = seed as f64;
    ImageRGB::from_fn(size, size, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let v = [
            0.5 + 0.3 * (0.37 * x + 0.11 * y * (1.0 + s * 0.1) + s).sin(),
            0.5 + 0.3 * (0.19 * x * (1.0 + s * 0.05) - 0.29 * y + 2.0 * s).cos(),
            0.5 + 0.2 * (0.5 * (x + y) + 0.7 * s).sin() * (0.13 * x).cos(),
        ];
        v.map(|c| ((c * 255.0).round() / 255.0) as f32)
    })
    .unwrap()
}

/// Writes `n` exemplars: even ids get `.input.png` (8x8), odd ids `.regressed.png`.
/// Exemplar `k` is tagged `group{k % 3}`.
pub fn write_dataset(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for k in 0..n {
        let name = format!("ex{k:02}");
        let target = pattern(k, SIZE);
        save_png(&target, dir.join(format!("{name}.target.png"))).unwrap();
        let small = box_downsample(&target, 2).unwrap();
        if k % 2 == 0 {
            save_png(&small, dir.join(format!("{name}.input.png"))).unwrap();
        } else {
            let up = pixelnn::resample::bicubic_resample(&small, SIZE, SIZE).unwrap();
            save_png(&up, dir.join(format!("{name}.regressed.png"))).unwrap();
        }
        std::fs::write(
            dir.join(format!("{name}.tags")),
            format!("group{}\nall\n", k % 3),
        )
        .unwrap();
    }
}

pub fn pixelnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pixelnn"))
        .args(args)
        .env("PIXELNN_THREADS", "0")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

pub fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Builds `n` exemplars into `<root>/data` and `<root>/db.pxnn`.
pub fn built_db(root: &Path, n: usize) -> PathBuf {
    let data = root.join("data");
    write_dataset(&data, n);
    let db = root.join("db.pxnn");
    ok(pixelnn(&[
        "build",
        data.to_str().unwrap(),
        "-o",
        db.to_str().unwrap(),
    ]));
    db
}

/// A low-resolution query image.
pub fn query(root: &Path) -> PathBuf {
    let p = root.join("query.png");
    let img = box_downsample(&pattern(40, SIZE), 2).unwrap();
    save_png(&img, &p).unwrap();
    p
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
