//! Dataset directory format.
//!
//! ```text
//! <dir>/manifest.json
//! <dir>/images/<id>.pgm   binary PGM (P5), maxval 255
//! <dir>/masks/<id>.pgm    binary PGM (P5), values {0, 255}; optional for negatives
//! <dir>/boxes.csv         sample_id,x,y,w,h
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{BoundingBox, Dataset, DatasetManifest, Sample, Split, DATASET_FORMAT};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(|e| Error::data(path, format!("cannot read: {e}")))?;
    parse_pgm(&bytes).map_err(|reason| Error::data(path, reason))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Pgm, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(format!("expected binary PGM (P5), found `{}`", fields[0]));
    }
    let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad PGM {what} `{s}`"));
    let width = parse(&fields[1], "width")?;
    let height = parse(&fields[2], "height")?;
    let maxval = parse(&fields[3], "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported PGM maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(format!("PGM raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(pos)));
    }
    let mut pixels = bytes[pos..pos + need].to_vec();
    if maxval != 255 {
        for p in pixels.iter_mut() {
            *p = ((*p as usize * 255 + maxval / 2) / maxval) as u8;
        }
    }
    Ok(Pgm { width, height, pixels })
}

pub(crate) fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn export_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let mut csv = String::from("sample_id,x,y,w,h\n");
    for s in &dataset.samples {
        let img: Vec<u8> = s.image.iter().map(|&v| to_u8(v)).collect();
        write_pgm(&dir.join("images").join(format!("{}.pgm", s.id)), s.width, s.height, &img)?;
        let mask: Vec<u8> = s.mask.iter().map(|&m| if m != 0 { 255 } else { 0 }).collect();
        write_pgm(&dir.join("masks").join(format!("{}.pgm", s.id)), s.width, s.height, &mask)?;
        for b in &s.boxes {
            csv.push_str(&format!("{},{},{},{},{}\n", s.id, b.x, b.y, b.w, b.h));
        }
    }
    fs::write(dir.join("boxes.csv"), csv)?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&dataset.manifest)? + "\n")?;
    Ok(())
}

fn parse_boxes(path: &Path) -> Result<BTreeMap<String, Vec<BoundingBox>>> {
    let mut boxes: BTreeMap<String, Vec<BoundingBox>> = BTreeMap::new();
    if !path.exists() {
        return Ok(boxes);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::data(path, format!("cannot read: {e}")))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (lineno == 0 && line.starts_with("sample_id")) {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 5 {
            return Err(Error::data(path, format!("line {}: expected 5 columns", lineno + 1)));
        }
        let num = |i: usize| {
            cols[i]
                .parse::<usize>()
                .map_err(|_| Error::data(path, format!("line {}: bad number `{}`", lineno + 1, cols[i])))
        };
        boxes.entry(cols[0].to_string()).or_default().push(BoundingBox {
            x: num(1)?,
            y: num(2)?,
            w: num(3)?,
            h: num(4)?,
        });
    }
    Ok(boxes)
}

/// Reads and validates a dataset directory. Every sample listed in the
/// manifest splits must have an image; masks may be omitted for negatives.
pub fn import_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::data(&manifest_path, format!("cannot read: {e}")))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::data(&manifest_path, format!("invalid manifest: {e}")))?;
    if manifest.format != DATASET_FORMAT {
        return Err(Error::data(
            &manifest_path,
            format!("unsupported format `{}` (expected `{DATASET_FORMAT}`)", manifest.format),
        ));
    }
    let boxes_path = dir.join("boxes.csv");
    let mut boxes = parse_boxes(&boxes_path)?;

    let mut ids: Vec<(usize, &String)> = Vec::new();
    for split in Split::ALL {
        for id in manifest.splits.get(&split).into_iter().flatten() {
            let idx = id.trim_start_matches(|c: char| !c.is_ascii_digit()).parse().unwrap_or(usize::MAX);
            ids.push((idx, id));
        }
    }
    ids.sort();
    let (h, w) = (manifest.height, manifest.width);
    let mut samples = Vec::with_capacity(ids.len());
    for (_, id) in ids {
        let img_path = dir.join("images").join(format!("{id}.pgm"));
        let img = read_pgm(&img_path)?;
        if (img.height, img.width) != (h, w) {
            return Err(Error::data(
                &img_path,
                format!("image is {}x{}, manifest declares {h}x{w}", img.height, img.width),
            ));
        }
        let mask_path = dir.join("masks").join(format!("{id}.pgm"));
        let mask = if mask_path.exists() {
            let m = read_pgm(&mask_path)?;
            if (m.height, m.width) != (img.height, img.width) {
                return Err(Error::data(
                    &mask_path,
                    format!(
                        "mask is {}x{} but image {} is {}x{}",
                        m.height,
                        m.width,
                        img_path.display(),
                        img.height,
                        img.width
                    ),
                ));
            }
            if let Some(v) = m.pixels.iter().find(|&&v| v != 0 && v != 255) {
                return Err(Error::data(&mask_path, format!("mask value {v} is not 0 or 255")));
            }
            m.pixels.iter().map(|&v| (v == 255) as u8).collect()
        } else {
            vec![0u8; h * w]
        };
        let label = mask.iter().any(|&m| m != 0) as u8;
        let sample_boxes = boxes.remove(id.as_str()).unwrap_or_default();
        for b in &sample_boxes {
            if b.w == 0 || b.h == 0 || b.x + b.w > w || b.y + b.h > h {
                return Err(Error::data(&boxes_path, format!("box {b:?} for {id} lies outside the image")));
            }
        }
        samples.push(Sample {
            id: id.clone(),
            height: h,
            width: w,
            image: img.pixels.iter().map(|&v| v as f32 / 255.0).collect(),
            label,
            mask,
            boxes: sample_boxes,
        });
    }
    if let Some(id) = boxes.keys().next() {
        return Err(Error::data(&boxes_path, format!("boxes reference unknown sample `{id}`")));
    }
    let dataset = Dataset { manifest, samples };
    dataset.validate().map_err(|e| Error::data(dir, e.to_string()))?;
    Ok(dataset)
}
