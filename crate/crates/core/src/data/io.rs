//! Dataset directories:
//!
//! ```text
//! manifest.toml    dataset manifest
//! images.bin       every image, f32 little-endian, planar, in example order
//! keypoints.csv    example_id,keypoint,x,y,annotated
//! examples.csv     example_id,seed,person_height
//! given.csv        example_id,keypoint,x,y
//! checksums.txt    sha256 of each file above
//! ```
//!
//! Floats in the CSV files use the shortest representation that parses back
//! to the same value, so a save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{Dataset, DatasetManifest, Example};
use crate::error::{Error, Result};
use crate::pose::{Point, Pose};
use crate::render::ImageGrid;

pub const DATASET_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.toml";
const IMAGES: &str = "images.bin";
const KEYPOINTS: &str = "keypoints.csv";
const EXAMPLES: &str = "examples.csv";
const GIVEN: &str = "given.csv";
const CHECKSUMS: &str = "checksums.txt";
const CHECKED_FILES: [&str; 5] = [MANIFEST, IMAGES, KEYPOINTS, EXAMPLES, GIVEN];

fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let m = &dataset.manifest;
    for ex in &dataset.examples {
        let img = &ex.image;
        if img.width != m.width || img.height != m.height || img.channels != m.channels {
            return Err(Error::InvalidArgument(format!("example {} does not match the manifest image shape", ex.id)));
        }
        if ex.pose.len() != m.keypoints {
            return Err(Error::mismatch("example keypoints", m.keypoints, ex.pose.len()));
        }
    }
    let mut manifest = m.clone();
    manifest.count = dataset.examples.len();
    let manifest_text = toml::to_string(&manifest).map_err(|e| Error::format(dir.join(MANIFEST), e.to_string()))?;

    let mut images = Vec::with_capacity(dataset.examples.len() * m.width * m.height * m.channels * 4);
    let mut keypoints = String::from("example_id,keypoint,x,y,annotated\n");
    let mut examples = String::from("example_id,seed,person_height\n");
    let mut given = String::from("example_id,keypoint,x,y\n");
    for ex in &dataset.examples {
        for v in &ex.image.data {
            images.extend_from_slice(&v.to_le_bytes());
        }
        for (k, (p, &a)) in ex.pose.points().iter().zip(ex.pose.mask()).enumerate() {
            let _ = writeln!(keypoints, "{},{},{},{},{}", ex.id, k, p.x, p.y, a as u8);
        }
        let _ = writeln!(examples, "{},{},{}", ex.id, ex.seed, ex.person_height);
        for &(k, p) in &ex.given {
            let _ = writeln!(given, "{},{},{},{}", ex.id, k, p.x, p.y);
        }
    }

    fs::create_dir_all(dir)?;
    let files: [(&str, &[u8]); 5] = [
        (MANIFEST, manifest_text.as_bytes()),
        (IMAGES, &images),
        (KEYPOINTS, keypoints.as_bytes()),
        (EXAMPLES, examples.as_bytes()),
        (GIVEN, given.as_bytes()),
    ];
    let mut sums = String::new();
    for (name, bytes) in files {
        fs::write(dir.join(name), bytes)?;
        let _ = writeln!(sums, "{}  {}", sha256(bytes), name);
    }
    fs::write(dir.join(CHECKSUMS), sums)?;
    Ok(())
}

struct Csv<'a> {
    path: &'a Path,
    rows: Vec<Vec<&'a str>>,
}

impl<'a> Csv<'a> {
    fn parse(path: &'a Path, text: &'a str, columns: usize) -> Result<Self> {
        let mut lines = text.lines();
        lines.next().ok_or_else(|| Error::format(path, "missing header"))?;
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let row: Vec<&str> = l.split(',').collect();
                if row.len() == columns {
                    Ok(row)
                } else {
                    Err(Error::format(path, format!("expected {columns} columns in `{l}`")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Csv { path, rows })
    }

    fn num<T: std::str::FromStr>(&self, field: &str) -> Result<T> {
        field.parse().map_err(|_| Error::format(self.path, format!("bad number `{field}`")))
    }
}

/// Loads a dataset saved by [`save_dataset`]. Every file is verified against
/// its checksum before anything is parsed, so corruption never yields a
/// partial dataset.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path_of = |name: &str| -> PathBuf { dir.join(name) };
    let manifest_path = path_of(MANIFEST);
    let manifest_text = fs::read_to_string(&manifest_path)?;
    let manifest: DatasetManifest = toml::from_str(&manifest_text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if manifest.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::VersionMismatch { path: manifest_path, expected: DATASET_FORMAT_VERSION, found: manifest.format_version });
    }

    let sums_path = path_of(CHECKSUMS);
    let sums_text = fs::read_to_string(&sums_path)?;
    let mut sums = BTreeMap::new();
    for line in sums_text.lines().filter(|l| !l.is_empty()) {
        let (sum, name) = line.split_once("  ").ok_or_else(|| Error::format(&sums_path, format!("bad line `{line}`")))?;
        sums.insert(name.to_string(), sum.to_string());
    }

    let image_len = manifest.width * manifest.height * manifest.channels;
    let mut contents = BTreeMap::new();
    for name in CHECKED_FILES {
        let path = path_of(name);
        let bytes = fs::read(&path)?;
        if name == IMAGES {
            let expected = (manifest.count * image_len * 4) as u64;
            if (bytes.len() as u64) < expected {
                return Err(Error::Truncated { path, expected, found: bytes.len() as u64 });
            }
        }
        let want = sums.get(name).ok_or_else(|| Error::format(&sums_path, format!("no checksum for {name}")))?;
        if sha256(&bytes) != *want {
            return Err(Error::Checksum { path });
        }
        contents.insert(name, bytes);
    }

    let text =
        |name: &str| -> Result<String> { String::from_utf8(contents[name].clone()).map_err(|_| Error::format(path_of(name), "not utf-8")) };
    let images = &contents[IMAGES];
    if images.len() as u64 != (manifest.count * image_len * 4) as u64 {
        return Err(Error::format(path_of(IMAGES), "image blob length disagrees with the manifest"));
    }

    let examples_path = path_of(EXAMPLES);
    let examples_text = text(EXAMPLES)?;
    let examples_csv = Csv::parse(&examples_path, &examples_text, 3)?;
    if examples_csv.rows.len() != manifest.count {
        return Err(Error::mismatch("examples table rows", manifest.count, examples_csv.rows.len()));
    }
    let mut order = Vec::with_capacity(manifest.count);
    let mut meta = BTreeMap::new();
    for row in &examples_csv.rows {
        let id: u64 = examples_csv.num(row[0])?;
        order.push(id);
        meta.insert(id, (examples_csv.num::<u64>(row[1])?, examples_csv.num::<f64>(row[2])?));
    }

    let kp_path = path_of(KEYPOINTS);
    let kp_text = text(KEYPOINTS)?;
    let kp_csv = Csv::parse(&kp_path, &kp_text, 5)?;
    let mut points: BTreeMap<u64, Vec<(usize, Point, bool)>> = BTreeMap::new();
    for row in &kp_csv.rows {
        let id: u64 = kp_csv.num(row[0])?;
        let k: usize = kp_csv.num(row[1])?;
        let p = Point::new(kp_csv.num(row[2])?, kp_csv.num(row[3])?);
        let annotated = kp_csv.num::<u8>(row[4])? != 0;
        points.entry(id).or_default().push((k, p, annotated));
    }

    let given_path = path_of(GIVEN);
    let given_text = text(GIVEN)?;
    let given_csv = Csv::parse(&given_path, &given_text, 4)?;
    let mut given: BTreeMap<u64, Vec<(usize, Point)>> = BTreeMap::new();
    for row in &given_csv.rows {
        let id: u64 = given_csv.num(row[0])?;
        let k: usize = given_csv.num(row[1])?;
        given.entry(id).or_default().push((k, Point::new(given_csv.num(row[2])?, given_csv.num(row[3])?)));
    }

    let mut examples = Vec::with_capacity(manifest.count);
    for (i, id) in order.into_iter().enumerate() {
        let rows = points.remove(&id).unwrap_or_default();
        if rows.len() != manifest.keypoints {
            return Err(Error::mismatch("keypoints per example", manifest.keypoints, rows.len()));
        }
        let mut pts = vec![Point::ZERO; manifest.keypoints];
        let mut mask = vec![false; manifest.keypoints];
        for (k, p, a) in rows {
            if k >= manifest.keypoints {
                return Err(Error::mismatch("keypoint index bound", manifest.keypoints, k + 1));
            }
            pts[k] = p;
            mask[k] = a;
        }
        let data = images[i * image_len * 4..(i + 1) * image_len * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let (seed, person_height) = meta[&id];
        examples.push(Example {
            id,
            seed,
            image: ImageGrid::new(manifest.width, manifest.height, manifest.channels, data)?,
            pose: Pose::new(pts, mask)?,
            given: given.remove(&id).unwrap_or_default(),
            person_height,
        });
    }
    Ok(Dataset { manifest, examples })
}
