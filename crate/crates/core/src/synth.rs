//! Synthetic RGBT sequence generation with exact ground truth.
//!
//! A textured target moves over a textured world canvas; the camera is a
//! viewport into that world. Camera-motion events translate the viewport,
//! so the whole image content (and the ground-truth box) jumps by the
//! negated camera displacement while the background stays world-anchored —
//! exactly the situation the re-sampling module handles. Illumination
//! intervals darken and add noise to the RGB stream only; thermal-crossover
//! intervals collapse the target/background contrast in the thermal stream
//! only.
//!
//! All textures are hash-anchored to world coordinates, so frame-to-frame
//! translations are coherent and block-matching flow sees the true camera
//! motion. Everything is integer-positioned: the written ground truth is
//! exact by construction.

use crate::data::{save_png_gray, save_png_rgb, FramePair, ImageBuf, RgbtSequence};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

/// Camera translation (in world pixels) applied at `frame`, i.e. between
/// `frame - 1` and `frame`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraEvent {
    pub frame: usize,
    pub dx: i32,
    pub dy: i32,
}

/// Half-open frame interval `[start, end)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start && frame < self.end
    }
}

/// RGB degradation over an interval: gain multiplies intensities, noise is
/// the per-pixel Gaussian sigma in 8-bit units.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Degradation {
    pub interval: Interval,
    pub gain: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub length: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Target size in pixels.
    pub target_w: usize,
    pub target_h: usize,
    /// Target world start position (top-left) and per-frame velocity.
    pub start_x: f64,
    pub start_y: f64,
    pub vel_x: f64,
    pub vel_y: f64,
    /// Sinusoidal sway added to the trajectory.
    pub sway_amp: f64,
    pub sway_period: f64,
    /// Relative size oscillation amplitude (0 = constant size).
    pub size_amplitude: f64,
    pub camera_events: Vec<CameraEvent>,
    pub illumination: Vec<Degradation>,
    pub crossover: Vec<Interval>,
    /// Render a decoy in the degraded modality during degradation
    /// intervals: a hot target-sized blob in the thermal stream while the
    /// real target is in crossover, a target-colored blob in the RGB
    /// stream during illumination degradation. The decoy drifts away from
    /// the target, so a tracker that trusts the degraded modality is
    /// pulled off the real object.
    #[serde(default)]
    pub decoys: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            name: "synth".into(),
            length: 30,
            width: 320,
            height: 240,
            seed: 0,
            target_w: 28,
            target_h: 28,
            start_x: 140.0,
            start_y: 100.0,
            vel_x: 1.0,
            vel_y: 0.5,
            sway_amp: 3.0,
            sway_period: 17.0,
            size_amplitude: 0.0,
            camera_events: Vec::new(),
            illumination: Vec::new(),
            crossover: Vec::new(),
            decoys: false,
        }
    }
}

/// Deterministic per-coordinate hash noise in `[0, 1)`.
fn hash_noise(x: i64, y: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    h ^= (x as u64).wrapping_mul(0xff51_afd7_ed55_8ccd);
    h = h.rotate_left(31);
    h ^= (y as u64).wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 29;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth world-anchored value noise plus fine detail, in `[0, 1]`.
fn world_texture(x: i64, y: i64, seed: u64, cell: i64) -> f64 {
    let cx = x.div_euclid(cell);
    let cy = y.div_euclid(cell);
    let fx = x.rem_euclid(cell) as f64 / cell as f64;
    let fy = y.rem_euclid(cell) as f64 / cell as f64;
    let v00 = hash_noise(cx, cy, seed);
    let v01 = hash_noise(cx + 1, cy, seed);
    let v10 = hash_noise(cx, cy + 1, seed);
    let v11 = hash_noise(cx + 1, cy + 1, seed);
    let smooth = v00 * (1.0 - fx) * (1.0 - fy)
        + v01 * fx * (1.0 - fy)
        + v10 * (1.0 - fx) * fy
        + v11 * fx * fy;
    let fine = hash_noise(x, y, seed ^ 0xabcd);
    (0.8 * smooth + 0.2 * fine).clamp(0.0, 1.0)
}

struct FrameGeometry {
    cam_x: i64,
    cam_y: i64,
    gt: BoundingBox,
    /// Target top-left in world coordinates.
    tx: i64,
    ty: i64,
    tw: usize,
    th: usize,
}

fn plan_geometry(spec: &SynthSpec) -> Result<Vec<FrameGeometry>> {
    for e in &spec.camera_events {
        if e.frame == 0 || e.frame >= spec.length {
            return Err(Error::InvalidArgument(format!(
                "{}: camera event at frame {} outside 1..{}",
                spec.name, e.frame, spec.length
            )));
        }
    }
    for d in &spec.illumination {
        if d.gain < 0.0 || d.noise_sigma < 0.0 || d.interval.end > spec.length {
            return Err(Error::InvalidArgument(format!(
                "{}: invalid illumination degradation {d:?}",
                spec.name
            )));
        }
    }
    for c in &spec.crossover {
        if c.end > spec.length {
            return Err(Error::InvalidArgument(format!(
                "{}: crossover interval {c:?} outside sequence",
                spec.name
            )));
        }
    }
    let mut out = Vec::with_capacity(spec.length);
    let mut cam_x = 0i64;
    let mut cam_y = 0i64;
    for f in 0..spec.length {
        for e in &spec.camera_events {
            if e.frame == f {
                cam_x += e.dx as i64;
                cam_y += e.dy as i64;
            }
        }
        let sway = if spec.sway_period > 0.0 {
            (f as f64 / spec.sway_period * std::f64::consts::TAU).sin() * spec.sway_amp
        } else {
            0.0
        };
        let wx = (spec.start_x + spec.vel_x * f as f64 + sway).round() as i64;
        let wy = (spec.start_y + spec.vel_y * f as f64 + 0.6 * sway).round() as i64;
        let scale = 1.0
            + spec.size_amplitude * (f as f64 / spec.length.max(1) as f64 * std::f64::consts::TAU).sin();
        let tw = ((spec.target_w as f64 * scale).round() as usize).max(4);
        let th = ((spec.target_h as f64 * scale).round() as usize).max(4);
        let ix = wx - cam_x;
        let iy = wy - cam_y;
        if ix < 0
            || iy < 0
            || ix + tw as i64 > spec.width as i64
            || iy + th as i64 > spec.height as i64
        {
            return Err(Error::InvalidArgument(format!(
                "{}: target leaves the frame at t={f} (image position {ix},{iy}, size {tw}x{th})",
                spec.name
            )));
        }
        out.push(FrameGeometry {
            cam_x,
            cam_y,
            gt: BoundingBox::new(ix as f64, iy as f64, tw as f64, th as f64),
            tx: wx,
            ty: wy,
            tw,
            th,
        });
    }
    Ok(out)
}

/// Render the sequence described by `spec`.
pub fn synth_generate(spec: &SynthSpec) -> Result<RgbtSequence> {
    let geo = plan_geometry(spec)?;
    let mut frames = Vec::with_capacity(spec.length);
    // Target palette from the seed: two contrasting RGB tones.
    let mut palette_rng = Rng::new(spec.seed ^ 0x7461_7267);
    let tone_a = [
        120 + palette_rng.below(136) as u8,
        40 + palette_rng.below(80) as u8,
        30 + palette_rng.below(60) as u8,
    ];
    let tone_b = [
        20 + palette_rng.below(50) as u8,
        110 + palette_rng.below(146) as u8,
        140 + palette_rng.below(116) as u8,
    ];
    for (f, g) in geo.iter().enumerate() {
        let mut rgb = ImageBuf::new(spec.width, spec.height);
        let mut thermal = ImageBuf::new(spec.width, spec.height);
        let li = spec
            .illumination
            .iter()
            .find(|d| d.interval.contains(f))
            .copied();
        let tc = spec.crossover.iter().copied().find(|c| c.contains(f));
        // Decoy placement: offset from the target, drifting further away
        // each frame of the active interval.
        // The decoy starts just beside the target (inside the tracker's
        // search envelope, so candidate crops see it) and drifts outward.
        let decoy_at = |iv: Interval| -> (i64, i64) {
            let dt = (f - iv.start) as i64;
            (g.tx + 4 * g.tw as i64 / 5 + 3 * dt / 2, g.ty - 4 - dt / 2)
        };
        let rgb_decoy = if spec.decoys {
            li.filter(|d| d.interval.contains(f)).map(|d| decoy_at(d.interval))
        } else {
            None
        };
        let th_decoy = if spec.decoys { tc.map(decoy_at) } else { None };
        let tc = tc.is_some();
        let mut noise_rng = Rng::derive(spec.seed ^ 0x6e6f_6973, &format!("{}:{f}", spec.name));
        for y in 0..spec.height {
            for x in 0..spec.width {
                let wx = x as i64 + g.cam_x;
                let wy = y as i64 + g.cam_y;
                // Background.
                let bg = world_texture(wx, wy, spec.seed, 16);
                let mut r = 40.0 + 90.0 * bg;
                let mut gch = 50.0 + 80.0 * world_texture(wx, wy, spec.seed ^ 1, 16);
                let mut b = 35.0 + 70.0 * bg;
                let mut th_v = 55.0 + 50.0 * world_texture(wx, wy, spec.seed ^ 2, 12);
                // Target overwrite (world-anchored local texture).
                let on_target = wx >= g.tx
                    && wx < g.tx + g.tw as i64
                    && wy >= g.ty
                    && wy < g.ty + g.th as i64;
                if on_target {
                    let lx = (wx - g.tx) as usize;
                    let ly = (wy - g.ty) as usize;
                    let checker = (lx / 5 + ly / 5) % 2 == 0;
                    let tone = if checker { tone_a } else { tone_b };
                    let shade =
                        0.75 + 0.25 * hash_noise(lx as i64, ly as i64, spec.seed ^ 0xfeed);
                    r = tone[0] as f64 * shade;
                    gch = tone[1] as f64 * shade;
                    b = tone[2] as f64 * shade;
                    th_v = if tc {
                        // Thermal crossover: target intensity collapses to
                        // the local background value.
                        55.0 + 50.0 * world_texture(wx, wy, spec.seed ^ 2, 12)
                    } else {
                        205.0 + 40.0 * hash_noise(lx as i64, ly as i64, spec.seed ^ 0x5454)
                    };
                }
                // Illumination degradation on RGB only.
                if let Some(d) = li {
                    r = r * d.gain + noise_rng.normal() * d.noise_sigma;
                    gch = gch * d.gain + noise_rng.normal() * d.noise_sigma;
                    b = b * d.gain + noise_rng.normal() * d.noise_sigma;
                }
                // Decoy overlays in the degraded modality (drawn after the
                // degradation, like a glare source: bright and target-like
                // while the真 target is barely visible there).
                if let Some((dx0, dy0)) = rgb_decoy {
                    if wx >= dx0
                        && wx < dx0 + g.tw as i64
                        && wy >= dy0
                        && wy < dy0 + g.th as i64
                    {
                        let lx = (wx - dx0) as usize;
                        let ly = (wy - dy0) as usize;
                        let checker = (lx / 5 + ly / 5) % 2 == 0;
                        let tone = if checker { tone_a } else { tone_b };
                        let shade =
                            0.68 + 0.22 * hash_noise(lx as i64, ly as i64, spec.seed ^ 0xdead);
                        r = tone[0] as f64 * shade;
                        gch = tone[1] as f64 * shade;
                        b = tone[2] as f64 * shade;
                    }
                }
                if let Some((dx0, dy0)) = th_decoy {
                    if wx >= dx0
                        && wx < dx0 + g.tw as i64
                        && wy >= dy0
                        && wy < dy0 + g.th as i64
                    {
                        let lx = (wx - dx0) as usize;
                        let ly = (wy - dy0) as usize;
                        th_v = 195.0 + 40.0 * hash_noise(lx as i64, ly as i64, spec.seed ^ 0xbeef);
                    }
                }
                rgb.set(x, y, 0, r.clamp(0.0, 255.0) as u8);
                rgb.set(x, y, 1, gch.clamp(0.0, 255.0) as u8);
                rgb.set(x, y, 2, b.clamp(0.0, 255.0) as u8);
                let tv = th_v.clamp(0.0, 255.0) as u8;
                thermal.set(x, y, 0, tv);
                thermal.set(x, y, 1, tv);
                thermal.set(x, y, 2, tv);
            }
        }
        frames.push(FramePair {
            rgb,
            thermal,
            gt: Some(geo[f].gt),
        });
    }
    let mut attributes = BTreeSet::new();
    if !spec.camera_events.is_empty() {
        attributes.insert("CM".to_string());
    }
    if !spec.illumination.is_empty() {
        attributes.insert("LI".to_string());
    }
    if !spec.crossover.is_empty() {
        attributes.insert("TC".to_string());
    }
    if spec.size_amplitude > 0.05 {
        attributes.insert("SV".to_string());
    }
    Ok(RgbtSequence {
        name: spec.name.clone(),
        frames,
        attributes,
    })
}

/// Write a sequence to disk in the rgbt234 layout (`visible/`, `infrared/`,
/// `visible.txt`, `infrared.txt`, `attributes.txt`).
pub fn write_sequence(dir: &Path, seq: &RgbtSequence) -> Result<()> {
    std::fs::create_dir_all(dir.join("visible"))?;
    std::fs::create_dir_all(dir.join("infrared"))?;
    let mut gt_text = String::new();
    for (i, frame) in seq.frames.iter().enumerate() {
        save_png_rgb(&dir.join(format!("visible/{i:05}.png")), &frame.rgb)?;
        // Thermal frames are single-channel by construction.
        let gray: Vec<u8> = frame
            .thermal
            .data
            .chunks_exact(3)
            .map(|p| p[0])
            .collect();
        save_png_gray(
            &dir.join(format!("infrared/{i:05}.png")),
            frame.thermal.width,
            frame.thermal.height,
            &gray,
        )?;
        let gt = frame.gt.expect("synthetic frames always annotated");
        gt_text.push_str(&format!("{},{},{},{}\n", gt.x, gt.y, gt.w, gt.h));
    }
    std::fs::write(dir.join("visible.txt"), &gt_text)?;
    std::fs::write(dir.join("infrared.txt"), &gt_text)?;
    if !seq.attributes.is_empty() {
        let tags: Vec<&str> = seq.attributes.iter().map(|s| s.as_str()).collect();
        std::fs::write(dir.join("attributes.txt"), tags.join("\n") + "\n")?;
    }
    Ok(())
}

/// Generate and write every spec under `root/<spec.name>/`.
pub fn materialize(root: &Path, specs: &[SynthSpec]) -> Result<()> {
    for spec in specs {
        let seq = synth_generate(spec)?;
        write_sequence(&root.join(&spec.name), &seq)?;
    }
    Ok(())
}

/// Benchmark presets: a camera-motion subset, a degradation subset and a
/// training set, all desk-scale.
pub struct BenchmarkSpecs {
    pub camera_motion: Vec<SynthSpec>,
    pub degradation: Vec<SynthSpec>,
    pub training: Vec<SynthSpec>,
}

pub fn benchmark_specs(seed: u64) -> BenchmarkSpecs {
    let mut camera_motion = Vec::new();
    for i in 0..10 {
        let sign = if i % 2 == 0 { 1 } else { -1 };
        let magnitude = 30 + (i as i32 % 4) * 3;
        // Both events shift the viewport the same way, so a tracker that
        // loses the target does not get it handed back by a reverse jump.
        let (e1, e2) = if i % 3 == 0 {
            // Vertical motion for a third of the subset.
            (
                CameraEvent { frame: 8, dx: 0, dy: sign * magnitude },
                CameraEvent { frame: 17, dx: 0, dy: sign * (magnitude - 6) },
            )
        } else {
            (
                CameraEvent { frame: 8, dx: sign * magnitude, dy: 0 },
                CameraEvent { frame: 17, dx: sign * (magnitude - 6), dy: 0 },
            )
        };
        camera_motion.push(SynthSpec {
            name: format!("cm_{i:02}"),
            length: 26,
            seed: seed ^ (0x100 + i as u64),
            // Start opposite the accumulated viewport shift so the target
            // stays inside the frame over both events.
            start_x: if i % 3 == 0 { 146.0 } else if sign > 0 { 68.0 } else { 190.0 },
            start_y: if i % 3 != 0 { 104.0 } else if sign > 0 { 150.0 } else { 36.0 },
            vel_x: 0.8,
            vel_y: 0.4,
            sway_amp: 2.0,
            camera_events: vec![e1, e2],
            // A mild illumination dip creates some non-camera failures so
            // the u-sweep has spurious activations to punish at u = 0.
            illumination: vec![Degradation {
                interval: Interval { start: 21, end: 25 },
                gain: 0.35,
                noise_sigma: 18.0,
            }],
            ..SynthSpec::default()
        });
    }
    let mut degradation = Vec::new();
    for i in 0..10 {
        degradation.push(SynthSpec {
            name: format!("dg_{i:02}"),
            length: 30,
            seed: seed ^ (0x200 + i as u64),
            start_x: 110.0 + 10.0 * (i % 5) as f64,
            start_y: 80.0 + 8.0 * (i % 4) as f64,
            vel_x: 1.2,
            vel_y: 0.6,
            sway_amp: 2.5,
            illumination: vec![Degradation {
                interval: Interval { start: 4, end: 12 },
                gain: 0.08,
                noise_sigma: 40.0,
            }],
            crossover: vec![Interval { start: 16, end: 26 }],
            decoys: true,
            ..SynthSpec::default()
        });
    }
    let mut training = Vec::new();
    for i in 0..8 {
        let mut spec = SynthSpec {
            name: format!("tr_{i:02}"),
            length: 40,
            seed: seed ^ (0x300 + i as u64),
            target_w: 24 + 2 * (i % 3),
            target_h: 24 + 2 * ((i + 1) % 3),
            start_x: 100.0 + 12.0 * (i % 4) as f64,
            start_y: 70.0 + 10.0 * (i % 3) as f64,
            vel_x: 1.0 + 0.2 * (i % 3) as f64,
            vel_y: 0.5,
            sway_amp: 3.0,
            size_amplitude: 0.08,
            ..SynthSpec::default()
        };
        // Mix of degradations so training sees unreliable modalities of
        // both kinds.
        if i % 2 == 0 {
            spec.illumination = vec![Degradation {
                interval: Interval { start: 10, end: 20 },
                gain: 0.12,
                noise_sigma: 30.0,
            }];
        }
        if i % 2 == 1 || i % 3 == 0 {
            spec.crossover = vec![Interval { start: 25, end: 35 }];
        }
        training.push(spec);
    }
    BenchmarkSpecs {
        camera_motion,
        degradation,
        training,
    }
}
