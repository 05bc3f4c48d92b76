//! Synthetic shape scenes rendered through a session's domain transform.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::protocol::{ContinualProtocol, DomainTransform, SessionSpec};
use crate::error::{domain, Error, Result};
use crate::seed::child_seed;

/// One RGB image with its pixel-exact label grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledImage {
    /// H x W x 3, quantized to bytes so in-memory and on-disk data agree exactly.
    pub rgb: Array3<u8>,
    pub labels: Array2<u8>,
}

impl LabeledImage {
    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionData {
    pub index: usize,
    pub labeled: Vec<LabeledImage>,
    /// Ground truth here is hidden from training and only used to measure (f, rho).
    pub unlabeled: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disk,
    Rectangle,
    Ring,
    Cross,
    Stripe,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Disk, Shape::Rectangle, Shape::Ring, Shape::Cross, Shape::Stripe];

    pub fn for_class(class: usize) -> Shape {
        Self::ALL[(class - 1) % 5]
    }
}

/// Scene appearance knobs shared by every session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderStyle {
    pub saturation: f64,
    pub value: f64,
    /// Per-shape multiplicative brightness jitter half-width.
    pub brightness_jitter: f64,
    /// Per-image random color cast of the background, per channel.
    pub background_tint: f64,
    pub texture_amplitude: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            saturation: 0.3,
            value: 0.8,
            brightness_jitter: 0.4,
            background_tint: 0.12,
            texture_amplitude: 0.15,
        }
    }
}

/// Fixed appearance of a class before the domain transform.
#[derive(Debug, Clone, Copy)]
struct Appearance {
    rgb: [f64; 3],
    texture: u8,
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn appearance(class: usize, style: &RenderStyle) -> Appearance {
    let hue = class as f64 * 137.5;
    Appearance {
        rgb: hsv_to_rgb(hue, style.saturation, style.value),
        texture: (class % 3) as u8,
    }
}

fn texture_gain(kind: u8, y: usize, x: usize, amp: f64) -> f64 {
    let on = match kind {
        1 => (y / 2) % 2 == 0,
        2 => (y + x) % 2 == 0,
        _ => return 1.0,
    };
    if on {
        1.0 + amp
    } else {
        1.0 - amp
    }
}

/// Rotation matrix about the unit gray axis (Rodrigues).
fn gray_rotation(deg: f64) -> [[f64; 3]; 3] {
    let t = deg.to_radians();
    let (s, c) = t.sin_cos();
    let k = 1.0 / 3f64.sqrt();
    let kk = k * k;
    let a = c + kk * (1.0 - c);
    let b = kk * (1.0 - c) - k * s;
    let d = kk * (1.0 - c) + k * s;
    [[a, b, d], [d, a, b], [b, d, a]]
}

fn apply_domain(rgb: [f64; 3], rot: &[[f64; 3]; 3], gamma: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (i, row) in rot.iter().enumerate() {
        let v: f64 = row.iter().zip(&rgb).map(|(a, b)| a * b).sum();
        out[i] = v.clamp(0.0, 1.0).powf(gamma);
    }
    out
}

fn inside(shape: Shape, dy: f64, dx: f64, r: f64, aspect: f64, vertical: bool) -> bool {
    match shape {
        Shape::Disk => dy * dy + dx * dx <= r * r,
        Shape::Rectangle => dy.abs() <= r * aspect && dx.abs() <= r,
        Shape::Ring => {
            let d2 = dy * dy + dx * dx;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
        Shape::Cross => {
            let arm = 0.3 * r;
            (dy.abs() <= arm && dx.abs() <= r) || (dx.abs() <= arm && dy.abs() <= r)
        }
        Shape::Stripe => {
            if vertical {
                dx.abs() <= 0.3 * r && dy.abs() <= 1.6 * r
            } else {
                dy.abs() <= 0.3 * r && dx.abs() <= 1.6 * r
            }
        }
    }
}

/// Renders one scene with the given foreground classes placed in order.
fn render_scene(
    rng: &mut ChaCha8Rng,
    classes: &[usize],
    domain: &DomainTransform,
    style: &RenderStyle,
    height: usize,
    width: usize,
) -> Result<LabeledImage> {
    let mut labels = Array2::<u8>::zeros((height, width));
    let mut gain = Array2::<f64>::ones((height, width));
    let min_side = height.min(width) as f64;
    for &class in classes {
        let shape = Shape::for_class(class);
        let r = rng.random_range(0.14..0.26) * min_side;
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let aspect = rng.random_range(0.5..1.0);
        let vertical = rng.random_bool(0.5);
        let j = style.brightness_jitter;
        let brightness = if j > 0.0 { rng.random_range(1.0 - j..1.0 + j) } else { 1.0 };
        for y in 0..height {
            for x in 0..width {
                let dy = y as f64 + 0.5 - cy;
                let dx = x as f64 + 0.5 - cx;
                if inside(shape, dy, dx, r, aspect, vertical) {
                    labels[[y, x]] = class as u8;
                    gain[[y, x]] = brightness;
                }
            }
        }
    }
    // Low-frequency background shading.
    let base = rng.random_range(0.35..0.55);
    let gy = rng.random_range(-0.1..0.1);
    let gx = rng.random_range(-0.1..0.1);
    let tint: [f64; 3] = std::array::from_fn(|_| {
        if style.background_tint > 0.0 {
            rng.random_range(-style.background_tint..style.background_tint)
        } else {
            0.0
        }
    });
    let rot = gray_rotation(domain.palette_rotation_deg);
    let noise = Normal::new(0.0, domain.noise_sigma.max(0.0))
        .map_err(|e| Error::Protocol(format!("noise distribution: {e}")))?;
    let mut rgb = Array3::<u8>::zeros((height, width, 3));
    for y in 0..height {
        for x in 0..width {
            let class = labels[[y, x]] as usize;
            let clean = if class == 0 {
                let v = base + gy * (y as f64 / height as f64 - 0.5) + gx * (x as f64 / width as f64 - 0.5);
                [v + tint[0], v + tint[1], v + tint[2]]
            } else {
                let a = appearance(class, style);
                let g = gain[[y, x]] * texture_gain(a.texture, y, x, style.texture_amplitude);
                [a.rgb[0] * g, a.rgb[1] * g, a.rgb[2] * g]
            };
            let shown = apply_domain(clean, &rot, domain.intensity_gamma);
            for c in 0..3 {
                let v = shown[c] + noise.sample(rng);
                rgb[[y, x, c]] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    Ok(LabeledImage { rgb, labels })
}

fn render_split(
    spec: &SessionSpec,
    count: usize,
    stream_root: u64,
    style: &RenderStyle,
    height: usize,
    width: usize,
    balanced: bool,
) -> Result<Vec<LabeledImage>> {
    let k = spec.class_ids.len();
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(stream_root, &i.to_string()));
            let n_shapes = rng.random_range(1..=3usize).min(k);
            let mut classes = Vec::with_capacity(n_shapes);
            let first = if balanced {
                spec.class_ids[i % k]
            } else {
                spec.class_ids[rng.random_range(0..k)]
            };
            classes.push(first);
            while classes.len() < n_shapes {
                let c = spec.class_ids[rng.random_range(0..k)];
                if !classes.contains(&c) {
                    classes.push(c);
                }
            }
            // Draw the first class last so it is always visible.
            classes.reverse();
            render_scene(&mut rng, &classes, &spec.domain, style, height, width)
        })
        .collect()
}

/// Renders every session's labeled, unlabeled and test splits.
///
/// Each split draws from its own named stream, so changing one budget leaves
/// the other splits untouched.
pub fn generate_protocol_data(
    protocol: &ContinualProtocol,
    image_size: (usize, usize),
    seed: u64,
) -> Result<Vec<SessionData>> {
    generate_protocol_data_styled(protocol, image_size, seed, &RenderStyle::default())
}

pub fn generate_protocol_data_styled(
    protocol: &ContinualProtocol,
    image_size: (usize, usize),
    seed: u64,
    style: &RenderStyle,
) -> Result<Vec<SessionData>> {
    let (h, w) = image_size;
    if h < 16 || w < 16 {
        return Err(domain(format!("image size must be at least 16x16, got {h}x{w}")));
    }
    protocol
        .sessions()
        .iter()
        .map(|spec| {
            let t = spec.index;
            let stream = |split: &str| child_seed(seed, &format!("bench/session{t}/{split}"));
            Ok(SessionData {
                index: t,
                labeled: render_split(spec, spec.labeled_count, stream("labeled"), style, h, w, true)?,
                unlabeled: render_split(spec, spec.unlabeled_count, stream("unlabeled"), style, h, w, false)?,
                test: render_split(spec, spec.test_count, stream("test"), style, h, w, false)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn protocol() -> ContinualProtocol {
        ContinualProtocol::joint_shift_3(5, 8).unwrap()
    }

    #[test]
    fn deterministic_and_sized() {
        let p = protocol();
        let a = generate_protocol_data(&p, (32, 32), 7).unwrap();
        let b = generate_protocol_data(&p, (32, 32), 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1].labeled.len(), 15);
        assert_eq!(a[1].unlabeled.len(), 8);
        let c = generate_protocol_data(&p, (32, 32), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn labels_come_from_session_classes() {
        let p = protocol();
        let data = generate_protocol_data(&p, (24, 20), 1).unwrap();
        for (spec, s) in p.sessions().iter().zip(&data) {
            for img in s.labeled.iter().chain(&s.unlabeled).chain(&s.test) {
                assert_eq!(img.rgb.dim(), (24, 20, 3));
                let mut fg = 0;
                for &l in img.labels.iter() {
                    assert!(l == 0 || spec.class_ids.contains(&(l as usize)));
                    fg += (l != 0) as usize;
                }
                assert!(fg > 0);
                assert!(fg < 24 * 20);
            }
        }
    }

    #[test]
    fn balanced_labeled_split_covers_all_classes() {
        let p = protocol();
        let data = generate_protocol_data(&p, (32, 32), 3).unwrap();
        for (spec, s) in p.sessions().iter().zip(&data) {
            for &c in &spec.class_ids {
                assert!(s.labeled.iter().any(|im| im.labels.iter().any(|&l| l as usize == c)));
            }
        }
    }

    #[test]
    fn rejects_small_images() {
        assert!(generate_protocol_data(&protocol(), (15, 32), 0).is_err());
    }

    #[test]
    fn zero_rotation_is_identity() {
        let r = gray_rotation(0.0);
        let v = apply_domain([0.2, 0.5, 0.9], &r, 1.0);
        for (a, b) in v.iter().zip([0.2, 0.5, 0.9]) {
            assert!((a - b).abs() < 1e-12);
        }
        // Gray is the rotation axis.
        let g = apply_domain([0.4; 3], &gray_rotation(77.0), 1.0);
        for a in g {
            assert!((a - 0.4).abs() < 1e-12);
        }
    }
}
