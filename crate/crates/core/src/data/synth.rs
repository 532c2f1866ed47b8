//! Procedural multi-view "pedestrians": three colored bands (head, torso,
//! legs) rendered under camera-dependent nuisances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::error::{Error, Result};

/// Hues available to each body part; adjacent entries are 45° apart.
const PALETTE: usize = 8;
/// Largest share of the figure an occluder may hide.
pub const MAX_OCCLUSION: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Plain,
    HorizontalStripes,
    VerticalStripes,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityPrototype {
    pub id: usize,
    /// Palette hue index per part (head, torso, legs).
    pub hues: [usize; 3],
    /// RGB per part.
    pub colors: [[f64; 3]; 3],
    pub torso_texture: Texture,
    pub stripe_color: [f64; 3],
    /// Figure width relative to the canonical body.
    pub build: f64,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6 % 2.0 - 1.0).abs());
    let (r, g, b) = match h6 as usize {
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

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a combined key
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic in `(seed, id)`. Ids below `PALETTE³` get distinct
/// `(head, torso, legs)` hue triples, so any two differ in at least one part
/// by a 45° hue step.
pub fn generate_identity(seed: u64, id: usize) -> IdentityPrototype {
    let combos = (PALETTE * PALETTE * PALETTE) as u64;
    // Odd multiplier and offset: a bijection on 0..combos.
    let mult = (mix(seed, 1, 0) % combos) | 1;
    let offset = mix(seed, 2, 0) % combos;
    let code = ((id as u64 % combos) * mult + offset) % combos;
    let code = code as usize;
    let hues = [code % PALETTE, (code / PALETTE) % PALETTE, code / (PALETTE * PALETTE)];

    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 3, id as u64));
    let mut colors = [[0.0; 3]; 3];
    for (part, &h) in hues.iter().enumerate() {
        let hue = h as f64 / PALETTE as f64 + rng.gen_range(-0.02..0.02);
        colors[part] = hsv(hue, rng.gen_range(0.55..0.85), rng.gen_range(0.55..0.8));
    }
    let torso_texture = match rng.gen_range(0..3) {
        0 => Texture::Plain,
        1 => Texture::HorizontalStripes,
        _ => Texture::VerticalStripes,
    };
    let stripe_color = hsv(rng.gen(), 0.2, rng.gen_range(0.15..0.35));
    IdentityPrototype {
        id,
        hues,
        colors,
        torso_texture,
        stripe_color,
        build: rng.gen_range(0.85..1.15),
    }
}

/// Axis-aligned occluder in pixels of a 56-pixel canvas (scaled with side).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Occluder {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub shade: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewParams {
    pub camera: usize,
    /// Added to every channel of the figure and background.
    pub brightness: f64,
    /// Per-channel multiplicative color cast, `1 ± hue_jitter`.
    pub hue_jitter: [f64; 3],
    /// Translation in canvas pixels (56-pixel canvas units).
    pub dx: f64,
    pub dy: f64,
    pub occluder: Option<Occluder>,
    /// Standard deviation of per-pixel noise.
    pub noise: f64,
    pub noise_seed: u64,
    pub background: f64,
}

impl ViewParams {
    pub fn canonical() -> Self {
        ViewParams {
            camera: 0,
            brightness: 0.0,
            hue_jitter: [0.0; 3],
            dx: 0.0,
            dy: 0.0,
            occluder: None,
            noise: 0.0,
            noise_seed: 0,
            background: 0.5,
        }
    }

    /// Random nuisances for `camera`; each camera has its own lighting bias.
    pub fn sample(camera: usize, rng: &mut impl Rng) -> Self {
        let cam_light = [-0.06, 0.05, -0.02, 0.08][camera % 4];
        let occluder = rng.gen_bool(0.25).then(|| Occluder {
            x: rng.gen_range(8.0..40.0),
            y: rng.gen_range(30.0..46.0),
            w: rng.gen_range(8.0..16.0),
            h: rng.gen_range(6.0..12.0),
            shade: rng.gen_range(0.1..0.9),
        });
        ViewParams {
            camera,
            brightness: cam_light + rng.gen_range(-0.05..0.05),
            hue_jitter: [rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06)],
            dx: rng.gen_range(-4.0..4.0),
            dy: rng.gen_range(-3.0..3.0),
            occluder,
            noise: rng.gen_range(0.0..0.03),
            noise_seed: rng.gen(),
            background: rng.gen_range(0.3..0.7),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Part {
    Background,
    Head,
    Torso,
    Legs,
}

/// Body part at canvas coordinates (56-pixel units), before translation.
fn part_at(proto: &IdentityPrototype, x: f64, y: f64) -> Part {
    let cx = 28.0;
    let w = proto.build;
    let dx = (x - cx).abs();
    if (4.0..14.0).contains(&y) && dx < 5.0 * w {
        Part::Head
    } else if (14.0..32.0).contains(&y) && dx < 10.0 * w {
        Part::Torso
    } else if (32.0..52.0).contains(&y) && dx < 8.0 * w && dx > 1.0 {
        Part::Legs
    } else {
        Part::Background
    }
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Share of the figure hidden by the view's occluder.
pub fn occluded_fraction(proto: &IdentityPrototype, view: &ViewParams) -> f64 {
    let Some(o) = view.occluder else { return 0.0 };
    let (mut figure, mut hidden) = (0usize, 0usize);
    for y in 0..56 {
        for x in 0..56 {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            if part_at(proto, fx - view.dx, fy - view.dy) != Part::Background {
                figure += 1;
                if fx >= o.x && fx < o.x + o.w && fy >= o.y && fy < o.y + o.h {
                    hidden += 1;
                }
            }
        }
    }
    hidden as f64 / figure.max(1) as f64
}

/// Render a `side×side` view. Values are quantized to multiples of 1/255 so
/// images survive 8-bit storage exactly.
pub fn render_view(proto: &IdentityPrototype, view: &ViewParams, side: usize) -> Result<Image> {
    let frac = occluded_fraction(proto, view);
    if frac > MAX_OCCLUSION {
        return Err(Error::Data(format!(
            "occluder hides {:.0}% of identity {}'s figure (limit {:.0}%); resample the view",
            frac * 100.0,
            proto.id,
            MAX_OCCLUSION * 100.0
        )));
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(view.noise_seed);
    let scale = 56.0 / side as f64;
    let mut data = Vec::with_capacity(side * side * 3);
    for py in 0..side {
        for px in 0..side {
            let (x, y) = ((px as f64 + 0.5) * scale, (py as f64 + 0.5) * scale);
            let (bx, by) = (x - view.dx, y - view.dy);
            let part = part_at(proto, bx, by);
            let mut rgb = match part {
                Part::Background => {
                    let v = view.background + 0.04 * ((x / 7.0).floor() % 2.0);
                    [v, v, v]
                }
                Part::Head => proto.colors[0],
                Part::Torso => {
                    let stripe = match proto.torso_texture {
                        Texture::Plain => false,
                        Texture::HorizontalStripes => (by / 3.0).floor() as i64 % 2 == 0,
                        Texture::VerticalStripes => ((bx - 28.0) / 3.0).floor() as i64 % 2 == 0,
                    };
                    if stripe {
                        proto.stripe_color
                    } else {
                        proto.colors[1]
                    }
                }
                Part::Legs => proto.colors[2],
            };
            if let Some(o) = view.occluder {
                if x >= o.x && x < o.x + o.w && y >= o.y && y < o.y + o.h {
                    rgb = [o.shade, o.shade * 0.9, o.shade * 0.8];
                }
            }
            for (c, v) in rgb.iter().enumerate() {
                let mut v = v * (1.0 + view.hue_jitter[c]) + view.brightness;
                if view.noise > 0.0 {
                    // Irwin–Hall approximation to a unit normal.
                    let n: f64 = (0..4).map(|_| noise_rng.gen::<f64>()).sum::<f64>() - 2.0;
                    v += view.noise * n * 3f64.sqrt();
                }
                data.push(quantize(v));
            }
        }
    }
    Image::new(side, side, data)
}

/// Mask of pixels covered by the (unoccluded) figure.
pub fn figure_mask(proto: &IdentityPrototype, view: &ViewParams, side: usize) -> Vec<bool> {
    let scale = 56.0 / side as f64;
    let mut mask = Vec::with_capacity(side * side);
    for py in 0..side {
        for px in 0..side {
            let (x, y) = ((px as f64 + 0.5) * scale, (py as f64 + 0.5) * scale);
            let covered = view.occluder.is_some_and(|o| x >= o.x && x < o.x + o.w && y >= o.y && y < o.y + o.h);
            mask.push(!covered && part_at(proto, x - view.dx, y - view.dy) != Part::Background);
        }
    }
    mask
}
