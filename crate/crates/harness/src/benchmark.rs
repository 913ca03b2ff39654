//! Desk-scale victim/target pairs cut from a directory of PPM images.

use std::path::{Path, PathBuf};

use gsm_forge_core::attack::GsmPair;
use gsm_forge_core::codec::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HarnessError, Result};
use crate::ppm::{load_image, raster_to_image, read_raster};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Crop {
    pub path: PathBuf,
    pub top: usize,
    pub left: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub pair_id: usize,
    pub source: Crop,
    pub target: Crop,
}

#[derive(Clone, Debug)]
pub struct Benchmark {
    pub pairs: Vec<GsmPair>,
    pub records: Vec<PairRecord>,
}

/// Sorted `*.ppm` files directly inside `dir`.
pub fn list_ppm(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(HarnessError::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")))
        .collect();
    out.sort();
    Ok(out)
}

fn random_crop(img: &Image, crop: usize, rng: &mut ChaCha8Rng) -> Result<(usize, usize, Image)> {
    let top = rng.gen_range(0..=img.height() - crop);
    let left = rng.gen_range(0..=img.width() - crop);
    Ok((top, left, img.crop(top, left, crop, crop)?))
}

fn load_full(path: &Path) -> Result<Image> {
    let r = read_raster(path)?;
    // Full images may have any size; pad nothing, crop later.
    let (h, w) = (r.height - r.height % 4, r.width - r.width % 4);
    let img = raster_to_image(&crate::ppm::Raster {
        width: w,
        height: h,
        pixels: (0..h).flat_map(|i| r.pixels[i * r.width * 3..(i * r.width + w) * 3].to_vec()).collect(),
    })?;
    Ok(img)
}

/// The first `min(2, n - 1)` images (by file name) serve as targets, one
/// seeded crop each; `pairs` source crops are drawn from the rest and
/// assigned to targets round-robin.
pub fn make_benchmark(source_dir: &Path, crop: usize, pairs: usize, seed: u64) -> Result<Benchmark> {
    if crop == 0 || !crop.is_multiple_of(8) {
        return Err(HarnessError::config(format!("crop {crop} must be a positive multiple of 8")));
    }
    let files = list_ppm(source_dir)?;
    if files.len() < 2 {
        return Err(HarnessError::config(format!(
            "{} holds {} PPM images; need at least 2",
            source_dir.display(),
            files.len()
        )));
    }
    let images: Vec<Image> = files.iter().map(|p| load_full(p)).collect::<Result<_>>()?;
    if let Some((p, im)) = files.iter().zip(&images).find(|(_, im)| im.height() < crop || im.width() < crop) {
        return Err(HarnessError::config(format!(
            "{} is {}x{}, smaller than crop {crop}",
            p.display(),
            im.width(),
            im.height()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_targets = 2.min(files.len() - 1);
    let mut targets = Vec::with_capacity(n_targets);
    for i in 0..n_targets {
        let (top, left, img) = random_crop(&images[i], crop, &mut rng)?;
        targets.push((Crop { path: files[i].clone(), top, left }, img));
    }
    let mut out = Benchmark { pairs: Vec::with_capacity(pairs), records: Vec::with_capacity(pairs) };
    for pair_id in 0..pairs {
        let src_idx = rng.gen_range(n_targets..files.len());
        let (top, left, img) = random_crop(&images[src_idx], crop, &mut rng)?;
        let (tcrop, timg) = &targets[pair_id % n_targets];
        out.pairs.push(GsmPair::new(img, timg.clone())?);
        out.records.push(PairRecord {
            pair_id,
            source: Crop { path: files[src_idx].clone(), top, left },
            target: tcrop.clone(),
        });
    }
    Ok(out)
}

/// Explicit pairs from the config; whole images, which must already satisfy
/// the codec's shape constraints.
pub fn load_pairs(paths: &[(PathBuf, PathBuf)]) -> Result<Benchmark> {
    let mut out = Benchmark { pairs: Vec::new(), records: Vec::new() };
    for (pair_id, (s, t)) in paths.iter().enumerate() {
        let (src, tgt) = (load_image(s)?, load_image(t)?);
        if src.height() % 8 != 0 || src.width() % 8 != 0 {
            return Err(HarnessError::config(format!("{}: dims must be divisible by 8", s.display())));
        }
        out.pairs.push(GsmPair::new(src, tgt)?);
        out.records.push(PairRecord {
            pair_id,
            source: Crop { path: s.clone(), top: 0, left: 0 },
            target: Crop { path: t.clone(), top: 0, left: 0 },
        });
    }
    Ok(out)
}

/// `count` seeded training crops per image in `dir`.
pub fn training_crops(dir: &Path, crop: usize, per_image: usize, seed: u64) -> Result<Vec<Image>> {
    let files = list_ppm(dir)?;
    if files.is_empty() {
        return Err(HarnessError::config(format!("{} holds no PPM images", dir.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(files.len() * per_image);
    for p in &files {
        let img = load_full(p)?;
        if img.height() < crop || img.width() < crop {
            return Err(HarnessError::config(format!("{} is smaller than crop {crop}", p.display())));
        }
        for _ in 0..per_image {
            out.push(random_crop(&img, crop, &mut rng)?.2);
        }
    }
    Ok(out)
}
