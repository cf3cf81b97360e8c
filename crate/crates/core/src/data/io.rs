//! Dataset directory layout:
//!
//! ```text
//! manifest.json
//! images/<id>.f32                         H·W little-endian f32, row-major
//! shapes/<id>/{expert1,…,consensus}.csv   J rows of `x,y`
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Image, Record, SceneParams, Split};
use crate::error::{Error, Result};
use crate::matching::ExpertSet;
use crate::shape::Shape;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub image: String,
    pub experts: Vec<String>,
    pub consensus: String,
    pub split: Split,
    pub ambiguity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub j: usize,
    pub height: usize,
    pub width: usize,
    pub params: SceneParams,
    pub records: Vec<ManifestRecord>,
}

/// `x,y` per line with shortest round-trip formatting.
pub fn write_shape_csv(path: &Path, s: &Shape<f64>) -> Result<()> {
    let mut text = String::with_capacity(s.len() * 40);
    for p in s.points() {
        let _ = writeln!(text, "{},{}", p[0], p[1]);
    }
    fs::write(path, text).map_err(Error::io(path))
}

pub fn read_shape_csv(path: &Path) -> Result<Shape<f64>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    let bad = |line: usize| Error::Dataset(format!("{}:{}: expected `x,y`", path.display(), line + 1));
    let points = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (x, y) = l.split_once(',').ok_or_else(|| bad(i))?;
            let x: f64 = x.trim().parse().map_err(|_| bad(i))?;
            let y: f64 = y.trim().parse().map_err(|_| bad(i))?;
            Ok([x, y])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Shape::new(points))
}

/// Raw little-endian `f32` pixels, row-major.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img.pixels.iter().flat_map(|p| p.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(Error::io(path))
}

pub fn read_image(path: &Path, height: usize, width: usize) -> Result<Image> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    if bytes.len() != height * width * 4 {
        return Err(Error::Dataset(format!(
            "{}: {} bytes, expected {} for {height}×{width} f32",
            path.display(),
            bytes.len(),
            height * width * 4
        )));
    }
    let pixels = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Image::new(height, width, pixels)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(Error::io(path))
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<Manifest> {
    create_dir(&dir.join("images"))?;
    let mut records = Vec::with_capacity(data.records.len());
    for r in &data.records {
        let image = format!("images/{}.f32", r.id);
        write_image(&dir.join(&image), &r.image)?;
        let shape_dir = format!("shapes/{}", r.id);
        create_dir(&dir.join(&shape_dir))?;
        let mut experts = Vec::new();
        for (i, s) in r.experts.experts().iter().enumerate() {
            let path = format!("{shape_dir}/expert{}.csv", i + 1);
            write_shape_csv(&dir.join(&path), s)?;
            experts.push(path);
        }
        let consensus = format!("{shape_dir}/consensus.csv");
        write_shape_csv(&dir.join(&consensus), r.experts.consensus())?;
        records.push(ManifestRecord { id: r.id.clone(), image, experts, consensus, split: r.split, ambiguity: r.ambiguity });
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        j: data.j,
        height: data.height,
        width: data.width,
        params: data.params.clone(),
        records,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(Error::io(&path))?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Dataset(format!("unsupported manifest version {}", manifest.version)));
    }
    let records = manifest
        .records
        .iter()
        .map(|m| {
            let image = read_image(&dir.join(&m.image), manifest.height, manifest.width)?;
            let experts = m.experts.iter().map(|p| read_shape_csv(&dir.join(p))).collect::<Result<Vec<_>>>()?;
            let consensus = read_shape_csv(&dir.join(&m.consensus))?;
            if consensus.len() != manifest.j {
                return Err(Error::Dataset(format!("{}: {} points, manifest says {}", m.consensus, consensus.len(), manifest.j)));
            }
            let experts = ExpertSet::new(experts, consensus).map_err(|e| Error::Dataset(format!("{}: {e}", m.id)))?;
            Ok(Record { id: m.id.clone(), image, experts, ambiguity: m.ambiguity, split: m.split })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { records, j: manifest.j, height: manifest.height, width: manifest.width, params: manifest.params })
}
