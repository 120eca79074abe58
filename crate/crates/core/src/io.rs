//! Sequence directories, result files, config files and atomic writes.
//!
//! A sequence directory holds `groundtruth_rect.txt` (one `x,y,w,h` line per
//! frame, 1-based pixel coordinates, comma or tab separated) and an `img/`
//! directory of frames in lexicographic order.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::tracker::{Rect, TrackerConfig};

pub const GROUNDTRUTH_FILE: &str = "groundtruth_rect.txt";
pub const FRAME_DIR: &str = "img";

/// Frames with one ground-truth box each, boxes in 0-based pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<GrayImage>,
    pub rects: Vec<Rect>,
}

impl Sequence {
    pub fn new(frames: Vec<GrayImage>, rects: Vec<Rect>) -> Result<Self> {
        if frames.len() != rects.len() {
            return Err(Error::FrameCountMismatch {
                frames: frames.len(),
                rects: rects.len(),
            });
        }
        if frames.len() < 2 {
            return Err(Error::EmptyInput("sequence needs at least two frames"));
        }
        Ok(Self { frames, rects })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Converts a box from file coordinates (first pixel is 1) to pixel indices.
pub fn from_file_coords(r: Rect) -> Rect {
    Rect::new(r.x - 1.0, r.y - 1.0, r.w, r.h)
}

pub fn to_file_coords(r: Rect) -> Rect {
    Rect::new(r.x + 1.0, r.y + 1.0, r.w, r.h)
}

fn parse_f64(field: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what} value {field:?}")))
}

/// Parses ground-truth text; values are returned exactly as written.
pub fn parse_groundtruth(text: &str) -> Result<Vec<Rect>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line
                .split([',', '\t'])
                .map(str::trim)
                .filter(|f| !f.is_empty())
                .collect();
            if fields.len() != 4 {
                return Err(Error::Parse(format!(
                    "line {}: expected 4 fields, got {}",
                    i + 1,
                    fields.len()
                )));
            }
            let v = fields
                .iter()
                .map(|f| parse_f64(f, "rect"))
                .collect::<Result<Vec<_>>>()?;
            let r = Rect::new(v[0], v[1], v[2], v[3]);
            r.validate()?;
            Ok(r)
        })
        .collect()
}

/// Decodes a binary PGM (`P5`), 8 or 16 bits per sample, to `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let bad = |msg: &str| Error::UnsupportedFormat(format!("PGM: {msg}"));
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(bad("not a binary greymap"));
    }
    let mut num = || -> Result<usize> { token()?.parse().map_err(|_| bad("bad header number")) };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval == 0 || maxval > 65535 {
        return Err(bad("maxval out of range"));
    }
    let data_start = pos + 1;
    let bytes_per = if maxval > 255 { 2 } else { 1 };
    let need = w * h * bytes_per;
    let body = bytes
        .get(data_start..data_start + need)
        .ok_or_else(|| bad("truncated pixel data"))?;
    let scale = 1.0 / maxval as f64;
    let data = if bytes_per == 1 {
        body.iter().map(|&b| b as f64 * scale).collect()
    } else {
        body.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 * scale)
            .collect()
    };
    GrayImage::new(w, h, data)
}

/// Encodes as 8-bit binary PGM, rounding and clamping to `[0, 255]`.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(
        img.as_slice()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    out
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::UnsupportedFormat(format!("PNG: {e}")))?
        .to_luma16();
    let (w, h) = img.dimensions();
    GrayImage::new(
        w as usize,
        h as usize,
        img.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect(),
    )
}

#[cfg(not(feature = "png"))]
fn decode_png(_: &[u8]) -> Result<GrayImage> {
    Err(Error::UnsupportedFormat("PNG support not compiled in".into()))
}

/// Loads a frame by extension (`.pgm` or `.png`).
pub fn load_frame(path: &Path) -> Result<GrayImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = fs::read(path)?;
    match ext.as_str() {
        "pgm" => decode_pgm(&bytes),
        "png" => decode_png(&bytes),
        _ => Err(Error::UnsupportedFormat(path.display().to_string())),
    }
}

/// Frame paths in `dir/img`, sorted lexicographically.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join(FRAME_DIR))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file());
    paths.sort();
    Ok(paths)
}

/// Loads a sequence directory. Boxes are converted to 0-based pixel coordinates.
pub fn load_sequence(dir: &Path) -> Result<Sequence> {
    let gt = dir.join(GROUNDTRUTH_FILE);
    if !gt.is_file() {
        return Err(Error::MissingGroundTruth(gt));
    }
    let rects = parse_groundtruth(&fs::read_to_string(&gt)?)?;
    let paths = frame_paths(dir)?;
    if paths.len() != rects.len() {
        return Err(Error::FrameCountMismatch {
            frames: paths.len(),
            rects: rects.len(),
        });
    }
    let frames = paths
        .iter()
        .map(|p| load_frame(p))
        .collect::<Result<Vec<_>>>()?;
    Sequence::new(frames, rects.into_iter().map(from_file_coords).collect())
}

/// Writes PGM frames `img/0001.pgm, ...` and the ground-truth file.
pub fn write_sequence(dir: &Path, frames: &[GrayImage], rects: &[Rect]) -> Result<()> {
    if frames.len() != rects.len() {
        return Err(Error::FrameCountMismatch {
            frames: frames.len(),
            rects: rects.len(),
        });
    }
    fs::create_dir_all(dir.join(FRAME_DIR))?;
    for (i, f) in frames.iter().enumerate() {
        write_atomic(&dir.join(FRAME_DIR).join(format!("{:04}.pgm", i + 1)), &encode_pgm(f))?;
    }
    let mut gt = String::new();
    for r in rects {
        let r = to_file_coords(*r);
        writeln!(gt, "{},{},{},{}", r.x, r.y, r.w, r.h).expect("string write");
    }
    write_atomic(&dir.join(GROUNDTRUTH_FILE), gt.as_bytes())
}

/// `frame,x,y,w,h` rows, frame numbers and boxes in 1-based file coordinates.
pub fn results_to_csv(rects: &[Rect]) -> String {
    let mut s = String::from("frame,x,y,w,h\n");
    for (i, r) in rects.iter().enumerate() {
        let r = to_file_coords(*r);
        writeln!(s, "{},{},{},{},{}", i + 1, r.x, r.y, r.w, r.h).expect("string write");
    }
    s
}

/// Inverse of [`results_to_csv`]; rows must be numbered 1, 2, ...
pub fn results_from_csv(text: &str) -> Result<Vec<Rect>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == "frame,x,y,w,h" => {}
        other => return Err(Error::Parse(format!("unexpected results header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("results row {}: expected 5 fields", i + 1)));
            }
            let frame: usize = f[0]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad frame number {:?}", f[0])))?;
            if frame != i + 1 {
                return Err(Error::Parse(format!("frame {frame} out of order (expected {})", i + 1)));
            }
            let v = f[1..]
                .iter()
                .map(|s| parse_f64(s, "results"))
                .collect::<Result<Vec<_>>>()?;
            Ok(from_file_coords(Rect::new(v[0], v[1], v[2], v[3])))
        })
        .collect()
}

/// Applies `key = value` lines to `base`. Blank lines and `#` comments are ignored.
pub fn parse_tracker_config(text: &str, base: TrackerConfig) -> Result<TrackerConfig> {
    let mut cfg = base;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: missing '='", i + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "scale_step" => cfg.scale_step = parse_f64(value, key)?,
            "scale_penalty" => cfg.scale_penalty = parse_f64(value, key)?,
            "scale_lr" => cfg.scale_lr = parse_f64(value, key)?,
            "win_weight" => cfg.win_weight = parse_f64(value, key)?,
            "template_lr" => cfg.template_lr = parse_f64(value, key)?,
            "search_area_factor" => cfg.search_area_factor = parse_f64(value, key)?,
            "num_scales" => {
                cfg.num_scales = value
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad num_scales value {value:?}")))?
            }
            _ => return Err(Error::Parse(format!("config line {}: unknown key {key:?}", i + 1))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes to a temporary file beside `path`, then renames it into place.
/// Missing parent directories are created.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
