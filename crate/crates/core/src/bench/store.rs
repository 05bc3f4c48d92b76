//! On-disk datasets (binary PPM images, PGM label grids, JSON manifest) and
//! report emission.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::protocol::ContinualProtocol;
use super::render::{LabeledImage, SessionData};
use super::runner::ComparisonReport;
use crate::error::{Error, Result};
use crate::seed::sha256_hex;

pub const FORMAT_VERSION: &str = "jascl-bench/1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub protocol: ContinualProtocol,
    pub seed: u64,
    pub image_size: (usize, usize),
    pub files: Vec<FileEntry>,
}

pub fn encode_ppm(rgb: &Array3<u8>) -> Vec<u8> {
    let (h, w, _) = rgb.dim();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(rgb.iter());
    out
}

pub fn encode_pgm(labels: &Array2<u8>) -> Vec<u8> {
    let (h, w) = labels.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(labels.iter());
    out
}

/// Parses a binary Netpbm header, returning (magic, width, height, body offset).
fn parse_header(bytes: &[u8]) -> Result<(String, usize, usize, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Protocol("truncated netpbm header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    i += 1;
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Protocol(format!("bad netpbm header field `{s}`")))
    };
    if num(&fields[3])? != 255 {
        return Err(Error::Protocol("only 8-bit netpbm files are supported".into()));
    }
    Ok((fields[0].clone(), num(&fields[1])?, num(&fields[2])?, i))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Array3<u8>> {
    let (magic, w, h, off) = parse_header(bytes)?;
    if magic != "P6" {
        return Err(Error::Protocol(format!("expected P6, found {magic}")));
    }
    let body = bytes.get(off..off + w * h * 3).ok_or_else(|| Error::Protocol("short P6 raster".into()))?;
    Ok(Array3::from_shape_vec((h, w, 3), body.to_vec()).expect("sized raster"))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Array2<u8>> {
    let (magic, w, h, off) = parse_header(bytes)?;
    if magic != "P5" {
        return Err(Error::Protocol(format!("expected P5, found {magic}")));
    }
    let body = bytes.get(off..off + w * h).ok_or_else(|| Error::Protocol("short P5 raster".into()))?;
    Ok(Array2::from_shape_vec((h, w), body.to_vec()).expect("sized raster"))
}

const SPLITS: [&str; 3] = ["labeled", "unlabeled", "test"];

fn split<'a>(s: &'a SessionData, name: &str) -> &'a [LabeledImage] {
    match name {
        "labeled" => &s.labeled,
        "unlabeled" => &s.unlabeled,
        _ => &s.test,
    }
}

/// Writes the dataset under `dir` and returns the manifest (also written as manifest.json).
pub fn write_dataset(
    dir: &Path,
    protocol: &ContinualProtocol,
    data: &[SessionData],
    seed: u64,
    image_size: (usize, usize),
) -> Result<Manifest> {
    let mut files = Vec::new();
    for s in data {
        for name in SPLITS {
            let sub = PathBuf::from(format!("session{}", s.index)).join(name);
            fs::create_dir_all(dir.join(&sub))?;
            for (i, img) in split(s, name).iter().enumerate() {
                for (ext, bytes) in [("ppm", encode_ppm(&img.rgb)), ("pgm", encode_pgm(&img.labels))] {
                    let rel = sub.join(format!("{i:04}.{ext}"));
                    fs::write(dir.join(&rel), &bytes)?;
                    files.push(FileEntry {
                        path: rel.to_string_lossy().replace('\\', "/"),
                        sha256: sha256_hex(&bytes),
                    });
                }
            }
        }
    }
    let manifest = Manifest {
        format: FORMAT_VERSION.into(),
        protocol: protocol.clone(),
        seed,
        image_size,
        files,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Reads a dataset back, verifying the format tag and every file hash.
pub fn read_dataset(dir: &Path) -> Result<(Manifest, Vec<SessionData>)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    if manifest.format != FORMAT_VERSION {
        return Err(Error::Protocol(format!(
            "unsupported dataset format `{}`",
            manifest.format
        )));
    }
    for f in &manifest.files {
        let bytes = fs::read(dir.join(&f.path))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Error::Protocol(format!("hash mismatch for {}", f.path)));
        }
    }
    let mut sessions = Vec::new();
    for spec in manifest.protocol.sessions() {
        let load = |name: &str, count: usize| -> Result<Vec<LabeledImage>> {
            (0..count)
                .map(|i| {
                    let base = dir.join(format!("session{}", spec.index)).join(name);
                    let rgb = decode_ppm(&fs::read(base.join(format!("{i:04}.ppm")))?)?;
                    let labels = decode_pgm(&fs::read(base.join(format!("{i:04}.pgm")))?)?;
                    Ok(LabeledImage { rgb, labels })
                })
                .collect()
        };
        sessions.push(SessionData {
            index: spec.index,
            labeled: load("labeled", spec.labeled_count)?,
            unlabeled: load("unlabeled", spec.unlabeled_count)?,
            test: load("test", spec.test_count)?,
        });
    }
    Ok((manifest, sessions))
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    config: &'a str,
    seed: u64,
    session: usize,
    class: usize,
    dice: f64,
    iou: f64,
}

/// Flat per-class rows (config, seed, session, class, dice, iou); background is class 0.
pub fn report_csv(report: &ComparisonReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for cell in &report.cells {
        for s in &cell.metrics.sessions {
            for c in s.background.iter().chain(&s.classes) {
                w.serialize(CsvRow {
                    config: cell.config.name(),
                    seed: cell.seed,
                    session: s.session,
                    class: c.class,
                    dice: c.dice,
                    iou: c.iou,
                })?;
            }
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes `report.json` and `report.csv` into `dir`.
pub fn write_report(dir: &Path, report: &ComparisonReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_vec_pretty(report)?)?;
    fs::write(dir.join("report.csv"), report_csv(report)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::render::generate_protocol_data;

    #[test]
    fn netpbm_round_trip() {
        let rgb = Array3::from_shape_fn((3, 5, 3), |(y, x, c)| (y * 50 + x * 7 + c) as u8);
        assert_eq!(decode_ppm(&encode_ppm(&rgb)).unwrap(), rgb);
        let labels = Array2::from_shape_fn((4, 2), |(y, x)| (y + 10 * x) as u8);
        assert_eq!(decode_pgm(&encode_pgm(&labels)).unwrap(), labels);
        assert!(decode_pgm(&encode_ppm(&rgb)).is_err());
    }

    #[test]
    fn header_comments_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([3u8, 9]);
        assert_eq!(decode_pgm(&bytes).unwrap(), ndarray::array![[3u8, 9]]);
    }

    #[test]
    fn dataset_round_trip_and_tamper_detection() {
        let p = ContinualProtocol::joint_shift_3(1, 2).unwrap();
        let mut data = generate_protocol_data(&p, (16, 16), 4).unwrap();
        // Keep the fixture small: only the first base session image files are trimmed in the protocol copy.
        let p = p.truncated(2).unwrap();
        data.truncate(2);
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &p, &data, 4, (16, 16)).unwrap();
        assert_eq!(m.format, FORMAT_VERSION);
        let (m2, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back, data);
        let again = tempfile::tempdir().unwrap();
        write_dataset(again.path(), &p, &data, 4, (16, 16)).unwrap();
        assert_eq!(
            fs::read(dir.path().join("manifest.json")).unwrap(),
            fs::read(again.path().join("manifest.json")).unwrap()
        );
        fs::write(dir.path().join(&m.files[0].path), b"P5\n1 1\n255\n\0").unwrap();
        assert!(read_dataset(dir.path()).is_err());
    }
}
