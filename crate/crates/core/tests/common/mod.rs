#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use nnfn::io::load_image;
use nnfn::ColorImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const CROPS: [&str; 3] = ["astronaut_128.png", "coffee_128.png", "chelsea_128.png"];

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("data")
        .join(name)
}

pub fn load_crop(name: &str) -> ColorImage {
    load_image(&data_path(name)).expect("test image")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    })
}

pub fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> ColorImage {
    ColorImage::from_fn(h, w, |_, _, _| rng.random_range(0.0..255.0))
}

pub fn report(id: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {id} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
}
