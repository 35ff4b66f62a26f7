//! Dataset ingestion: image buffers, PNG IO and the two supported
//! directory layouts.
//!
//! The `rgbt234` layout is
//!
//! ```text
//! <sequence>/
//!   visible/     *.png (RGB frames, sorted by filename)
//!   infrared/    *.png (thermal frames, grayscale or RGB)
//!   visible.txt  one `x,y,w,h` line per frame
//!   infrared.txt one `x,y,w,h` line per frame
//!   attributes.txt  optional, one challenge tag per line
//! ```
//!
//! The `gtot` layout uses `v/` and `i/` image folders with
//! `groundTruth_v.txt` / `groundTruth_i.txt` files holding corner pairs
//! `x1 y1 x2 y2` per line. Both ground-truth parsers accept commas, tabs
//! or spaces as delimiters. Thermal frames are replicated to three
//! channels at load so both network streams see the same input shape.

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, ImageBounds};
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuf {
    pub width: usize,
    pub height: usize,
    /// `width * height * 3` bytes, row-major, RGB interleaved.
    pub data: Vec<u8>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuf {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn bounds(&self) -> ImageBounds {
        ImageBounds::new(self.width, self.height)
    }

    /// Luma plane in `[0, 1]` (Rec. 601 weights), for optical flow.
    pub fn to_gray(&self) -> GrayImage {
        let mut data = Vec::with_capacity(self.width * self.height);
        for p in self.data.chunks_exact(3) {
            data.push(
                (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0,
            );
        }
        GrayImage {
            width: self.width,
            height: self.height,
            data,
        }
    }
}

/// Single-channel float image in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// One registered time step: RGB frame, thermal frame, optional ground truth.
#[derive(Debug, Clone)]
pub struct FramePair {
    pub rgb: ImageBuf,
    pub thermal: ImageBuf,
    pub gt: Option<BoundingBox>,
}

impl FramePair {
    pub fn bounds(&self) -> ImageBounds {
        self.rgb.bounds()
    }
}

/// The 12 challenge attribute tags.
pub const ATTRIBUTE_TAGS: [&str; 12] = [
    "NO", "PO", "HO", "LI", "LR", "TC", "DEF", "FM", "SV", "MB", "CM", "BC",
];

#[derive(Debug, Clone)]
pub struct RgbtSequence {
    pub name: String,
    pub frames: Vec<FramePair>,
    pub attributes: BTreeSet<String>,
}

impl RgbtSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn gt_boxes(&self) -> Vec<BoundingBox> {
        self.frames.iter().filter_map(|f| f.gt).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetLayout {
    Rgbt234,
    Gtot,
}

impl fmt::Display for DatasetLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetLayout::Rgbt234 => write!(f, "rgbt234"),
            DatasetLayout::Gtot => write!(f, "gtot"),
        }
    }
}

impl DatasetLayout {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgbt234" => Some(DatasetLayout::Rgbt234),
            "gtot" => Some(DatasetLayout::Gtot),
            _ => None,
        }
    }
}

/// Which modality's ground-truth file drives labels and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GtModality {
    #[default]
    Visible,
    Infrared,
}

pub fn load_png(path: &Path) -> Result<ImageBuf> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let mut img = ImageBuf::new(w, h);
    match info.color_type {
        png::ColorType::Rgb => {
            img.data.copy_from_slice(&buf[..w * h * 3]);
        }
        png::ColorType::Grayscale => {
            for (i, &v) in buf[..w * h].iter().enumerate() {
                img.data[i * 3] = v;
                img.data[i * 3 + 1] = v;
                img.data[i * 3 + 2] = v;
            }
        }
        png::ColorType::Rgba => {
            for i in 0..w * h {
                img.data[i * 3] = buf[i * 4];
                img.data[i * 3 + 1] = buf[i * 4 + 1];
                img.data[i * 3 + 2] = buf[i * 4 + 2];
            }
        }
        other => {
            return Err(Error::Load(format!(
                "{}: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    }
    Ok(img)
}

pub fn save_png_rgb(path: &Path, img: &ImageBuf) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(&img.data)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn save_png_gray(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    writer
        .write_image_data(data)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Parse one ground-truth line into four numbers; accepts comma, tab,
/// space or semicolon delimiters, in any mix.
fn parse_gt_line(line: &str, path: &Path, lineno: usize) -> Result<[f64; 4]> {
    let fields: Vec<&str> = line
        .split(|c: char| c == ',' || c == '\t' || c == ' ' || c == ';')
        .filter(|s| !s.is_empty())
        .collect();
    if fields.len() != 4 {
        return Err(Error::Load(format!(
            "{}:{}: expected 4 fields, got {} in {line:?}",
            path.display(),
            lineno,
            fields.len()
        )));
    }
    let mut vals = [0.0f64; 4];
    for (i, f) in fields.iter().enumerate() {
        vals[i] = f.trim().parse::<f64>().map_err(|e| {
            Error::Load(format!(
                "{}:{}: bad number {f:?}: {e}",
                path.display(),
                lineno
            ))
        })?;
    }
    Ok(vals)
}

fn read_gt_file(path: &Path, corners: bool) -> Result<Vec<BoundingBox>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v = parse_gt_line(line, path, i + 1)?;
        let b = if corners {
            BoundingBox::new(v[0], v[1], v[2] - v[0], v[3] - v[1])
        } else {
            BoundingBox::new(v[0], v[1], v[2], v[3])
        };
        if !b.is_valid() {
            return Err(Error::Load(format!(
                "{}:{}: degenerate box {b:?}",
                path.display(),
                i + 1
            )));
        }
        boxes.push(b);
    }
    Ok(boxes)
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Load(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

fn read_attributes(path: &Path) -> Result<BTreeSet<String>> {
    let mut tags = BTreeSet::new();
    if !path.exists() {
        return Ok(tags);
    }
    let text = fs::read_to_string(path)?;
    for (i, line) in text.lines().enumerate() {
        let tag = line.trim();
        if tag.is_empty() {
            continue;
        }
        if !ATTRIBUTE_TAGS.contains(&tag) {
            return Err(Error::Load(format!(
                "{}:{}: unknown attribute tag {tag:?}",
                path.display(),
                i + 1
            )));
        }
        tags.insert(tag.to_string());
    }
    Ok(tags)
}

/// Load one sequence directory in the given layout.
pub fn load_sequence(
    dir: &Path,
    layout: DatasetLayout,
    gt_modality: GtModality,
) -> Result<RgbtSequence> {
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let (vis_dir, ir_dir, vis_gt, ir_gt, corners) = match layout {
        DatasetLayout::Rgbt234 => (
            dir.join("visible"),
            dir.join("infrared"),
            dir.join("visible.txt"),
            dir.join("infrared.txt"),
            false,
        ),
        DatasetLayout::Gtot => (
            dir.join("v"),
            dir.join("i"),
            dir.join("groundTruth_v.txt"),
            dir.join("groundTruth_i.txt"),
            true,
        ),
    };
    let vis_files = sorted_images(&vis_dir)?;
    let ir_files = sorted_images(&ir_dir)?;
    if vis_files.len() != ir_files.len() {
        return Err(Error::Load(format!(
            "sequence {name}: {} visible frames but {} infrared frames",
            vis_files.len(),
            ir_files.len()
        )));
    }
    if vis_files.is_empty() {
        return Err(Error::Load(format!("sequence {name}: no frames")));
    }
    let gt_path = match gt_modality {
        GtModality::Visible => &vis_gt,
        GtModality::Infrared => &ir_gt,
    };
    let boxes = read_gt_file(gt_path, corners)?;
    if boxes.len() != vis_files.len() {
        return Err(Error::Load(format!(
            "sequence {name}: {} ground-truth lines for {} frames in {}",
            boxes.len(),
            vis_files.len(),
            gt_path.display()
        )));
    }
    let attributes = read_attributes(&dir.join("attributes.txt"))?;
    let mut frames = Vec::with_capacity(vis_files.len());
    for ((v, t), gt) in vis_files.iter().zip(ir_files.iter()).zip(boxes.iter()) {
        let rgb = load_png(v)?;
        let thermal = load_png(t)?;
        if rgb.width != thermal.width || rgb.height != thermal.height {
            return Err(Error::Load(format!(
                "sequence {name}: frame size mismatch between {} and {}",
                v.display(),
                t.display()
            )));
        }
        frames.push(FramePair {
            rgb,
            thermal,
            gt: Some(*gt),
        });
    }
    Ok(RgbtSequence {
        name,
        frames,
        attributes,
    })
}

/// Load every sequence directory under `root`, sorted by name.
pub fn load_dataset(
    root: &Path,
    layout: DatasetLayout,
    gt_modality: GtModality,
) -> Result<Vec<RgbtSequence>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::Load(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Load(format!(
            "no sequence directories under {}",
            root.display()
        )));
    }
    dirs.iter()
        .map(|d| load_sequence(d, layout, gt_modality))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_fixture(dir: &Path, delim: &str) {
        fs::create_dir_all(dir.join("visible")).unwrap();
        fs::create_dir_all(dir.join("infrared")).unwrap();
        for i in 0..3 {
            let mut img = ImageBuf::new(16, 12);
            img.set(i, i, 0, 200);
            save_png_rgb(&dir.join(format!("visible/{i:05}.png")), &img).unwrap();
            let gray: Vec<u8> = vec![i as u8 * 10; 16 * 12];
            save_png_gray(&dir.join(format!("infrared/{i:05}.png")), 16, 12, &gray).unwrap();
        }
        let gt: String = (0..3)
            .map(|i| format!("{}{d}{}{d}4{d}4\n", 2 + i, 3 + i, d = delim))
            .collect();
        fs::write(dir.join("visible.txt"), &gt).unwrap();
        fs::write(dir.join("infrared.txt"), &gt).unwrap();
        fs::write(dir.join("attributes.txt"), "CM\nLI\n").unwrap();
    }

    #[test]
    fn well_formed_fixture_round_trips() {
        let dir = std::env::temp_dir().join("dmcnet_data_fixture_a");
        let _ = fs::remove_dir_all(&dir);
        write_fixture(&dir, ",");
        let seq = load_sequence(&dir, DatasetLayout::Rgbt234, GtModality::Visible).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.frames[1].gt.unwrap(), BoundingBox::new(3.0, 4.0, 4.0, 4.0));
        assert!(seq.attributes.contains("CM"));
        // Thermal replicated to 3 channels.
        let t = &seq.frames[2].thermal;
        assert_eq!(t.get(0, 0, 0), 20);
        assert_eq!(t.get(0, 0, 1), 20);
        assert_eq!(t.get(0, 0, 2), 20);
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn delimiter_variants_parse_identically() {
        let dir_a = std::env::temp_dir().join("dmcnet_data_fixture_commas");
        let dir_b = std::env::temp_dir().join("dmcnet_data_fixture_tabs");
        let _ = fs::remove_dir_all(&dir_a);
        let _ = fs::remove_dir_all(&dir_b);
        write_fixture(&dir_a, ",");
        write_fixture(&dir_b, "\t");
        let a = load_sequence(&dir_a, DatasetLayout::Rgbt234, GtModality::Visible).unwrap();
        let b = load_sequence(&dir_b, DatasetLayout::Rgbt234, GtModality::Visible).unwrap();
        let boxes_a = a.gt_boxes();
        let boxes_b = b.gt_boxes();
        assert_eq!(boxes_a, boxes_b);
        fs::remove_dir_all(&dir_a).unwrap();
        fs::remove_dir_all(&dir_b).unwrap();
    }

    #[test]
    fn missing_gt_line_reports_count_mismatch() {
        let dir = std::env::temp_dir().join("dmcnet_data_fixture_short");
        let _ = fs::remove_dir_all(&dir);
        write_fixture(&dir, ",");
        fs::write(dir.join("visible.txt"), "1,1,4,4\n2,2,4,4\n").unwrap();
        let err = load_sequence(&dir, DatasetLayout::Rgbt234, GtModality::Visible)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2 ground-truth lines for 3 frames"), "{msg}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bad_gt_number_reports_line() {
        let dir = std::env::temp_dir().join("dmcnet_data_fixture_badnum");
        let _ = fs::remove_dir_all(&dir);
        write_fixture(&dir, ",");
        fs::write(dir.join("visible.txt"), "1,1,4,4\n2,zz,4,4\n3,3,4,4\n").unwrap();
        let err = load_sequence(&dir, DatasetLayout::Rgbt234, GtModality::Visible)
            .unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn frame_count_mismatch_names_sequence() {
        let dir = std::env::temp_dir().join("dmcnet_data_fixture_mismatch");
        let _ = fs::remove_dir_all(&dir);
        write_fixture(&dir, ",");
        fs::remove_file(dir.join("infrared/00002.png")).unwrap();
        let err = load_sequence(&dir, DatasetLayout::Rgbt234, GtModality::Visible)
            .unwrap_err();
        assert!(err.to_string().contains("dmcnet_data_fixture_mismatch"), "{err}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn gtot_corner_format_converts_to_xywh() {
        let dir = std::env::temp_dir().join("dmcnet_data_fixture_gtot");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(dir.join("v")).unwrap();
        fs::create_dir_all(dir.join("i")).unwrap();
        let img = ImageBuf::new(8, 8);
        save_png_rgb(&dir.join("v/0.png"), &img).unwrap();
        save_png_rgb(&dir.join("i/0.png"), &img).unwrap();
        fs::write(dir.join("groundTruth_v.txt"), "2 3 6 8\n").unwrap();
        fs::write(dir.join("groundTruth_i.txt"), "2 3 6 8\n").unwrap();
        let seq = load_sequence(&dir, DatasetLayout::Gtot, GtModality::Visible).unwrap();
        assert_eq!(seq.frames[0].gt.unwrap(), BoundingBox::new(2.0, 3.0, 4.0, 5.0));
        fs::remove_dir_all(&dir).unwrap();
    }
}
