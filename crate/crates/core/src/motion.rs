//! Camera-motion detection and directional re-sampling.
//!
//! When the tracker's score drops below zero it estimates the mean pixel
//! displacement over a local region (3x the target box) between the
//! previous and current frames. If the magnitude on an axis exceeds the
//! threshold `u`, the camera is considered to have moved along that axis
//! and 16 candidate boxes are re-sampled along the opposite direction,
//! stepped by a quarter of the target's width/height.
//!
//! Sign convention: [`mean_displacement`] reports the translation of the
//! *second* image relative to the first (content flow). The tracker feeds
//! frames in `(current, previous)` order, so a positive `dx` here means
//! the scene content moved left between the frames — i.e. the camera moved
//! right — and the detector's "opposite direction" rule (`-sign(dx)`)
//! sends the re-samples exactly along the content's (and target's) actual
//! image motion.
//!
//! The flow backend is pluggable ([`FlowEstimator`]); the default is a
//! coarse-to-fine block matcher (3-level pyramid, 8x8 blocks, +-8 px
//! search per level, parabolic sub-pixel refinement) that only ever reads
//! the expanded local region, so its cost is independent of frame size.

use crate::data::GrayImage;
use crate::geometry::{BoundingBox, ImageBounds};

/// Mean displacement over the local region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
    /// Set when the region is too textureless for a reliable estimate; the
    /// displacement is then (0, 0).
    pub low_confidence: bool,
}

/// Per-axis trigger decision; `Some(d)` holds the signed unit step
/// direction for the re-sampler (opposite to the detected camera motion).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotionDecision {
    pub horizontal: Option<i8>,
    pub vertical: Option<i8>,
}

impl MotionDecision {
    pub fn triggered(&self) -> bool {
        self.horizontal.is_some() || self.vertical.is_some()
    }
}

/// Region the flow is computed on: centered on the previous box, three
/// times its size, clamped to the image.
pub fn local_region(prev_box: &BoundingBox, bounds: ImageBounds) -> BoundingBox {
    let (cx, cy) = prev_box.center();
    BoundingBox::from_center(cx, cy, 3.0 * prev_box.w, 3.0 * prev_box.h).clamp_into(bounds)
}

/// Threshold rule: an axis triggers iff its magnitude strictly exceeds
/// `u`; the step direction is the negated sign. A low-confidence
/// displacement never triggers.
pub fn detect(disp: &Displacement, u: f64) -> MotionDecision {
    let axis = |d: f64| -> Option<i8> {
        if d.abs() > u {
            Some(if d > 0.0 { -1 } else { 1 })
        } else {
            None
        }
    };
    if disp.low_confidence {
        return MotionDecision {
            horizontal: None,
            vertical: None,
        };
    }
    MotionDecision {
        horizontal: axis(disp.dx),
        vertical: axis(disp.dy),
    }
}

pub const RESAMPLE_COUNT: usize = 16;

/// 16 boxes stepped along the triggered direction(s): box `k` is offset by
/// `k * w/4` horizontally and/or `k * h/4` vertically, size unchanged,
/// clamped to the image (late boxes saturate at the border).
pub fn resample(
    prev_box: &BoundingBox,
    decision: &MotionDecision,
    bounds: ImageBounds,
) -> Vec<BoundingBox> {
    assert!(decision.triggered(), "resample requires a triggered decision");
    let step_x = decision.horizontal.map(|d| d as f64 * prev_box.w / 4.0);
    let step_y = decision.vertical.map(|d| d as f64 * prev_box.h / 4.0);
    (1..=RESAMPLE_COUNT)
        .map(|k| {
            let dx = step_x.map_or(0.0, |s| s * k as f64);
            let dy = step_y.map_or(0.0, |s| s * k as f64);
            BoundingBox::new(prev_box.x + dx, prev_box.y + dy, prev_box.w, prev_box.h)
                .clamp_into(bounds)
        })
        .collect()
}

/// Dense displacement field over a region.
#[derive(Debug, Clone)]
pub struct FlowField {
    /// Region origin in full-image coordinates.
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
    pub dx: Vec<f32>,
    pub dy: Vec<f32>,
    pub valid: Vec<bool>,
}

/// Pluggable dense-flow backend contract:
/// `(prev_gray, cur_gray, region) -> per-pixel (dx, dy) over the region`.
pub trait FlowEstimator: Send + Sync {
    fn flow(&self, prev: &GrayImage, cur: &GrayImage, region: &BoundingBox) -> FlowField;
}

/// Mean `(dx, dy)` over the region as estimated by the backend. Returns a
/// low-confidence zero displacement when fewer than a quarter of the
/// region's pixels carry a valid estimate.
pub fn mean_displacement(
    prev: &GrayImage,
    cur: &GrayImage,
    region: &BoundingBox,
    estimator: &dyn FlowEstimator,
) -> Displacement {
    assert_eq!(prev.width, cur.width, "frame sizes differ");
    assert_eq!(prev.height, cur.height, "frame sizes differ");
    let field = estimator.flow(prev, cur, region);
    let mut n = 0usize;
    let mut sx = 0.0f64;
    let mut sy = 0.0f64;
    for i in 0..field.valid.len() {
        if field.valid[i] {
            n += 1;
            sx += field.dx[i] as f64;
            sy += field.dy[i] as f64;
        }
    }
    if n * 4 < field.valid.len() || n == 0 {
        return Displacement {
            dx: 0.0,
            dy: 0.0,
            low_confidence: true,
        };
    }
    Displacement {
        dx: sx / n as f64,
        dy: sy / n as f64,
        low_confidence: false,
    }
}

/// Coarse-to-fine block-matching flow.
#[derive(Debug, Clone, Copy)]
pub struct BlockMatchingFlow {
    pub levels: usize,
    pub block: usize,
    pub search: usize,
    /// Minimum intensity variance for a block to count as textured.
    pub texture_floor: f32,
}

impl Default for BlockMatchingFlow {
    fn default() -> Self {
        BlockMatchingFlow {
            levels: 3,
            block: 8,
            search: 8,
            texture_floor: 1e-4,
        }
    }
}

struct Window {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Window {
    fn downsample(&self) -> Window {
        let w = (self.width / 2).max(1);
        let h = (self.height / 2).max(1);
        let mut data = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let x0 = (2 * x).min(self.width - 1);
                let x1 = (2 * x + 1).min(self.width - 1);
                let y0 = (2 * y).min(self.height - 1);
                let y1 = (2 * y + 1).min(self.height - 1);
                data[y * w + x] = 0.25
                    * (self.data[y0 * self.width + x0]
                        + self.data[y0 * self.width + x1]
                        + self.data[y1 * self.width + x0]
                        + self.data[y1 * self.width + x1]);
            }
        }
        Window {
            width: w,
            height: h,
            data,
        }
    }
}

fn crop_window(img: &GrayImage, x0: isize, y0: isize, w: usize, h: usize) -> Window {
    let mut data = vec![0.0f32; w * h];
    for y in 0..h {
        let sy = (y0 + y as isize).clamp(0, img.height as isize - 1) as usize;
        for x in 0..w {
            let sx = (x0 + x as isize).clamp(0, img.width as isize - 1) as usize;
            data[y * w + x] = img.get(sx, sy);
        }
    }
    Window {
        width: w,
        height: h,
        data,
    }
}

/// Sum of absolute differences between a block in `a` at `(ax, ay)` and a
/// block in `b` at `(bx, by)`; `None` when the `b` block leaves the window.
fn sad(a: &Window, ax: usize, ay: usize, b: &Window, bx: isize, by: isize, k: usize) -> Option<f32> {
    if bx < 0 || by < 0 || bx as usize + k > b.width || by as usize + k > b.height {
        return None;
    }
    let (bx, by) = (bx as usize, by as usize);
    let mut s = 0.0f32;
    for y in 0..k {
        let ra = &a.data[(ay + y) * a.width + ax..(ay + y) * a.width + ax + k];
        let rb = &b.data[(by + y) * b.width + bx..(by + y) * b.width + bx + k];
        for i in 0..k {
            s += (ra[i] - rb[i]).abs();
        }
    }
    Some(s)
}

impl FlowEstimator for BlockMatchingFlow {
    fn flow(&self, prev: &GrayImage, cur: &GrayImage, region: &BoundingBox) -> FlowField {
        let bounds = ImageBounds::new(prev.width, prev.height);
        let region = region.clamp_into(bounds);
        let rx = region.x.round() as usize;
        let ry = region.y.round() as usize;
        let rw = (region.w.round() as usize).max(1).min(prev.width - rx);
        let rh = (region.h.round() as usize).max(1).min(prev.height - ry);

        // Working windows: the region plus enough margin for the total
        // search range at every pyramid level.
        let mut reach = 0usize;
        for l in 0..self.levels {
            reach += self.search << (self.levels - 1 - l);
        }
        let margin = reach + self.block;
        let wx0 = rx as isize - margin as isize;
        let wy0 = ry as isize - margin as isize;
        let ww = rw + 2 * margin;
        let wh = rh + 2 * margin;
        let mut prev_pyr = vec![crop_window(prev, wx0, wy0, ww, wh)];
        let mut cur_pyr = vec![crop_window(cur, wx0, wy0, ww, wh)];
        for _ in 1..self.levels {
            prev_pyr.push(prev_pyr.last().unwrap().downsample());
            cur_pyr.push(cur_pyr.last().unwrap().downsample());
        }

        // Block grid over the region (block-size tiles, full-resolution).
        let k = self.block.min(rw).min(rh).max(2);
        let nbx = (rw / k).max(1);
        let nby = (rh / k).max(1);

        let mut field = FlowField {
            x0: rx,
            y0: ry,
            width: rw,
            height: rh,
            dx: vec![0.0; rw * rh],
            dy: vec![0.0; rw * rh],
            valid: vec![false; rw * rh],
        };

        for by in 0..nby {
            for bx in 0..nbx {
                // Block top-left in window coordinates at full resolution.
                let fx = margin + bx * k;
                let fy = margin + by * k;
                // Texture check on the source block.
                let tex = {
                    let win = &prev_pyr[0];
                    let mut sum = 0.0f32;
                    let mut sum2 = 0.0f32;
                    for y in 0..k {
                        for x in 0..k {
                            let v = win.data[(fy + y) * win.width + fx + x];
                            sum += v;
                            sum2 += v * v;
                        }
                    }
                    let m = sum / (k * k) as f32;
                    sum2 / (k * k) as f32 - m * m
                };
                let textured = tex >= self.texture_floor;

                let mut off_x = 0isize;
                let mut off_y = 0isize;
                if textured {
                    for l in (0..self.levels).rev() {
                        let scale = 1usize << l;
                        let a = &prev_pyr[l];
                        let b = &cur_pyr[l];
                        let ax = fx / scale;
                        let ay = fy / scale;
                        let kl = k.min(a.width.saturating_sub(ax)).min(a.height.saturating_sub(ay));
                        if kl < 2 {
                            continue;
                        }
                        let mut best = f32::INFINITY;
                        let (mut bx_best, mut by_best) = (off_x, off_y);
                        let s = self.search as isize;
                        for sy in -s..=s {
                            for sx in -s..=s {
                                let cand_x = ax as isize + off_x + sx;
                                let cand_y = ay as isize + off_y + sy;
                                if let Some(v) = sad(a, ax, ay, b, cand_x, cand_y, kl) {
                                    if v < best {
                                        best = v;
                                        bx_best = off_x + sx;
                                        by_best = off_y + sy;
                                    }
                                }
                            }
                        }
                        off_x = bx_best;
                        off_y = by_best;
                        if l > 0 {
                            off_x *= 2;
                            off_y *= 2;
                        }
                    }
                }

                // Parabolic sub-pixel refinement at the finest level.
                let (mut sub_x, mut sub_y) = (off_x as f32, off_y as f32);
                if textured {
                    let a = &prev_pyr[0];
                    let b = &cur_pyr[0];
                    let refine = |c: Option<f32>, l: Option<f32>, r: Option<f32>| -> f32 {
                        match (l, c, r) {
                            // An exact match is already the vertex; the
                            // parabola fit would drift toward the smaller
                            // neighbour.
                            (_, Some(c), _) if c == 0.0 => 0.0,
                            (Some(l), Some(c), Some(r)) => {
                                let denom = l - 2.0 * c + r;
                                if denom.abs() > 1e-12 {
                                    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
                                } else {
                                    0.0
                                }
                            }
                            _ => 0.0,
                        }
                    };
                    let cx = fx as isize + off_x;
                    let cy = fy as isize + off_y;
                    let c = sad(a, fx, fy, b, cx, cy, k);
                    sub_x += refine(c, sad(a, fx, fy, b, cx - 1, cy, k), sad(a, fx, fy, b, cx + 1, cy, k));
                    sub_y += refine(c, sad(a, fx, fy, b, cx, cy - 1, k), sad(a, fx, fy, b, cx, cy + 1, k));
                }

                // Fill the block's pixels in the field.
                let px0 = bx * k;
                let py0 = by * k;
                let px1 = if bx == nbx - 1 { rw } else { px0 + k };
                let py1 = if by == nby - 1 { rh } else { py0 + k };
                for y in py0..py1 {
                    for x in px0..px1 {
                        let i = y * rw + x;
                        field.dx[i] = sub_x;
                        field.dy[i] = sub_y;
                        field.valid[i] = textured;
                    }
                }
            }
        }
        field
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn textured_image(w: usize, h: usize, seed: u64) -> GrayImage {
        // Smooth value noise plus fine detail so block matching has
        // structure at every level.
        let mut rng = Rng::new(seed);
        let cell = 9;
        let gw = w / cell + 2;
        let gh = h / cell + 2;
        let grid: Vec<f32> = (0..gw * gh).map(|_| rng.uniform() as f32).collect();
        let mut data = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let gx = x / cell;
                let gy = y / cell;
                let fx = (x % cell) as f32 / cell as f32;
                let fy = (y % cell) as f32 / cell as f32;
                let v00 = grid[gy * gw + gx];
                let v01 = grid[gy * gw + gx + 1];
                let v10 = grid[(gy + 1) * gw + gx];
                let v11 = grid[(gy + 1) * gw + gx + 1];
                let v = v00 * (1.0 - fx) * (1.0 - fy)
                    + v01 * fx * (1.0 - fy)
                    + v10 * (1.0 - fx) * fy
                    + v11 * fx * fy;
                let fine = ((x * 7 + y * 13) % 5) as f32 * 0.02;
                data[y * w + x] = (v * 0.8 + fine).clamp(0.0, 1.0);
            }
        }
        GrayImage {
            width: w,
            height: h,
            data,
        }
    }

    fn translate(img: &GrayImage, dx: i32, dy: i32) -> GrayImage {
        let mut out = img.clone();
        for y in 0..img.height {
            for x in 0..img.width {
                let sx = (x as i32 - dx).clamp(0, img.width as i32 - 1) as usize;
                let sy = (y as i32 - dy).clamp(0, img.height as i32 - 1) as usize;
                out.data[y * img.width + x] = img.get(sx, sy);
            }
        }
        out
    }

    #[test]
    fn local_region_is_three_times_the_box() {
        let b = BoundingBox::new(50.0, 50.0, 10.0, 10.0);
        let r = local_region(&b, ImageBounds::new(1000, 1000));
        assert_eq!(r, BoundingBox::new(40.0, 40.0, 30.0, 30.0));
    }

    #[test]
    fn local_region_clamps_at_corners() {
        let b = BoundingBox::new(0.0, 0.0, 20.0, 20.0);
        let r = local_region(&b, ImageBounds::new(100, 100));
        assert!(r.x >= 0.0 && r.y >= 0.0);
        assert!(r.x + r.w <= 100.0 && r.y + r.h <= 100.0);
        assert_eq!(r.w, 60.0);
    }

    #[test]
    fn degenerate_box_gets_tripled() {
        let b = BoundingBox::new(10.0, 10.0, 1.0, 1.0);
        let r = local_region(&b, ImageBounds::new(100, 100));
        assert_eq!((r.w, r.h), (3.0, 3.0));
    }

    #[test]
    fn detect_truth_table_is_exhaustive() {
        let u = 5.0;
        // Magnitudes below/above threshold crossed with both signs: the
        // full 16-case table over (sign(dx), |dx| vs u, sign(dy), |dy| vs u).
        for &(dx_mag, dx_trig) in &[(2.0, false), (8.0, true)] {
            for &dx_sign in &[-1.0, 1.0] {
                for &(dy_mag, dy_trig) in &[(3.0, false), (9.0, true)] {
                    for &dy_sign in &[-1.0, 1.0] {
                        let d = Displacement {
                            dx: dx_sign * dx_mag,
                            dy: dy_sign * dy_mag,
                            low_confidence: false,
                        };
                        let m = detect(&d, u);
                        assert_eq!(m.horizontal.is_some(), dx_trig, "{d:?}");
                        assert_eq!(m.vertical.is_some(), dy_trig, "{d:?}");
                        if let Some(dir) = m.horizontal {
                            assert_eq!(dir as f64, -dx_sign, "{d:?}");
                        }
                        if let Some(dir) = m.vertical {
                            assert_eq!(dir as f64, -dy_sign, "{d:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn detect_example_and_boundary_cases() {
        let m = detect(
            &Displacement {
                dx: -8.0,
                dy: 1.0,
                low_confidence: false,
            },
            5.0,
        );
        assert_eq!(m.horizontal, Some(1)); // target direction +x
        assert_eq!(m.vertical, None);

        let m = detect(
            &Displacement {
                dx: 2.0,
                dy: 3.0,
                low_confidence: false,
            },
            5.0,
        );
        assert!(!m.triggered());

        // Strict inequality at |d| == u.
        let m = detect(
            &Displacement {
                dx: 5.0,
                dy: -5.0,
                low_confidence: false,
            },
            5.0,
        );
        assert!(!m.triggered());
    }

    #[test]
    fn resample_steps_by_quarter_width() {
        let b = BoundingBox::from_center(100.0, 100.0, 40.0, 20.0);
        let m = MotionDecision {
            horizontal: Some(1),
            vertical: None,
        };
        let boxes = resample(&b, &m, ImageBounds::new(4000, 4000));
        assert_eq!(boxes.len(), 16);
        for (k, bx) in boxes.iter().enumerate() {
            let (cx, cy) = bx.center();
            assert!((cx - (110.0 + 10.0 * k as f64)).abs() < 1e-9);
            assert_eq!(cy, 100.0);
            assert_eq!((bx.w, bx.h), (40.0, 20.0));
        }
    }

    #[test]
    fn resample_diagonal_when_both_axes_trigger() {
        let b = BoundingBox::from_center(200.0, 200.0, 40.0, 20.0);
        let m = MotionDecision {
            horizontal: Some(-1),
            vertical: Some(1),
        };
        let boxes = resample(&b, &m, ImageBounds::new(4000, 4000));
        for (k, bx) in boxes.iter().enumerate() {
            let (cx, cy) = bx.center();
            assert!((cx - (200.0 - 10.0 * (k + 1) as f64)).abs() < 1e-9);
            assert!((cy - (200.0 + 5.0 * (k + 1) as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_saturates_at_border() {
        let b = BoundingBox::from_center(580.0, 100.0, 40.0, 40.0);
        let m = MotionDecision {
            horizontal: Some(1),
            vertical: None,
        };
        let boxes = resample(&b, &m, ImageBounds::new(640, 480));
        assert_eq!(boxes.len(), 16);
        for bx in &boxes {
            assert!(bx.x >= 0.0 && bx.x + bx.w <= 640.0);
            assert_eq!((bx.w, bx.h), (40.0, 40.0));
        }
        assert_eq!(boxes.last().unwrap().x, 600.0);
    }

    #[test]
    fn identical_frames_give_zero_displacement() {
        let img = textured_image(160, 120, 3);
        let est = BlockMatchingFlow::default();
        let region = BoundingBox::new(40.0, 30.0, 60.0, 60.0);
        let d = mean_displacement(&img, &img, &region, &est);
        assert!(!d.low_confidence);
        assert!(d.dx.abs() < 1e-6 && d.dy.abs() < 1e-6, "{d:?}");
    }

    #[test]
    fn translation_recovery_within_one_pixel() {
        let img = textured_image(200, 160, 7);
        let est = BlockMatchingFlow::default();
        let region = BoundingBox::new(60.0, 50.0, 66.0, 60.0);
        for &(dx, dy) in &[(6i32, 0i32), (-3, 8), (10, -10), (0, -7)] {
            let moved = translate(&img, dx, dy);
            let d = mean_displacement(&img, &moved, &region, &est);
            assert!(!d.low_confidence);
            assert!(
                (d.dx - dx as f64).abs() <= 1.0,
                "dx: want {dx}, got {}",
                d.dx
            );
            assert!(
                (d.dy - dy as f64).abs() <= 1.0,
                "dy: want {dy}, got {}",
                d.dy
            );
        }
    }

    #[test]
    fn flow_is_antisymmetric_on_translations() {
        let img = textured_image(200, 160, 11);
        let est = BlockMatchingFlow::default();
        let region = BoundingBox::new(70.0, 50.0, 60.0, 60.0);
        let moved = translate(&img, 5, -4);
        let fwd = mean_displacement(&img, &moved, &region, &est);
        let bwd = mean_displacement(&moved, &img, &region, &est);
        assert!((fwd.dx + bwd.dx).abs() <= 1.0, "{fwd:?} {bwd:?}");
        assert!((fwd.dy + bwd.dy).abs() <= 1.0, "{fwd:?} {bwd:?}");
    }

    #[test]
    fn textureless_region_is_low_confidence_zero() {
        let flat = GrayImage {
            width: 100,
            height: 100,
            data: vec![0.5; 100 * 100],
        };
        let est = BlockMatchingFlow::default();
        let region = BoundingBox::new(30.0, 30.0, 40.0, 40.0);
        let d = mean_displacement(&flat, &flat, &region, &est);
        assert!(d.low_confidence);
        assert_eq!((d.dx, d.dy), (0.0, 0.0));
    }
}
