//! Procedural single-image scenes: textured background plus one object
//! sprite placed inside the groundtruth box.
//!
//! Textures are continuous functions of image-plane coordinates so the
//! workspace renderer can sample them from any camera pose.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{relight, Frame, Light};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundKind {
    Noise,
    Checker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundSpec {
    pub kind: BackgroundKind,
    pub seed: u64,
    /// Feature size in pixels (noise lattice spacing or checker cell).
    pub scale: f64,
    pub color_a: [f32; 3],
    pub color_b: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectShape {
    Disc,
    Square,
    Diamond,
    Ring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: ObjectShape,
    pub color: [f32; 3],
    pub texture_seed: u64,
    /// Sprite side as a fraction of the groundtruth box side.
    pub fill: f64,
}

/// World-space placement used by the camera workspace. Units are abstract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    /// Object center; the canonical camera sits at the origin looking
    /// along +z.
    pub object_position: [f64; 3],
    pub goal_min: [f64; 3],
    pub goal_max: [f64; 3],
    #[serde(default = "default_focal")]
    pub focal_length: f64,
    /// Distance of the backdrop plane behind the object.
    #[serde(default = "default_backdrop_offset")]
    pub backdrop_offset: f64,
}

fn default_focal() -> f64 {
    360.0
}

fn default_backdrop_offset() -> f64 {
    0.6
}

fn default_image_size() -> usize {
    360
}

fn default_light_strength() -> f64 {
    0.4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    pub light: Light,
    #[serde(default = "default_light_strength")]
    pub light_strength: f64,
    pub groundtruth_box: BoundingBox,
    pub background: BackgroundSpec,
    pub object: ObjectSpec,
    #[serde(default)]
    pub world: Option<WorldSpec>,
}

impl Default for SceneManifest {
    fn default() -> Self {
        SceneManifest::preset(0)
    }
}

impl WorldSpec {
    /// World layout consistent with `gt` as seen from the canonical camera:
    /// the object sits at depth `depth`, and the goal region holds the
    /// camera positions whose view width at the object is within
    /// `[0.8, 1.25]` of the groundtruth width, centered to a ninth of it.
    pub fn canonical(gt: &BoundingBox, image_size: usize, depth: f64) -> WorldSpec {
        let f = default_focal();
        let c = image_size as f64 / 2.0;
        let (gcx, gcy) = gt.center();
        let ox = (gcx - c) * depth / f;
        let oy = (c - gcy) * depth / f;
        let goal_dist = depth * gt.w / image_size as f64;
        let lateral = goal_dist * image_size as f64 / f / 9.0;
        WorldSpec {
            object_position: [ox, oy, depth],
            goal_min: [ox - lateral, oy - lateral, depth - goal_dist / 0.8],
            goal_max: [ox + lateral, oy + lateral, depth - goal_dist * 0.8],
            focal_length: f,
            backdrop_offset: default_backdrop_offset(),
        }
    }
}

impl SceneManifest {
    /// A handful of distinct built-in scenes; index 0 is the default.
    pub fn preset(index: usize) -> SceneManifest {
        let noise_bg = |seed| BackgroundSpec {
            kind: BackgroundKind::Noise,
            seed,
            scale: 40.0,
            color_a: [0.30, 0.40, 0.32],
            color_b: [0.62, 0.64, 0.52],
        };
        let checker_bg = |seed| BackgroundSpec {
            kind: BackgroundKind::Checker,
            seed,
            scale: 30.0,
            color_a: [0.35, 0.33, 0.40],
            color_b: [0.55, 0.52, 0.58],
        };
        let (gt, background, shape, color) = match index % 5 {
            0 => (
                BoundingBox::new(120.0, 120.0, 120.0),
                noise_bg(11),
                ObjectShape::Disc,
                [0.90, 0.15, 0.10],
            ),
            1 => (
                BoundingBox::new(60.0, 190.0, 90.0),
                noise_bg(23),
                ObjectShape::Square,
                [0.10, 0.25, 0.90],
            ),
            2 => (
                BoundingBox::new(200.0, 40.0, 100.0),
                checker_bg(5),
                ObjectShape::Diamond,
                [0.95, 0.85, 0.10],
            ),
            3 => (
                BoundingBox::new(30.0, 40.0, 150.0),
                checker_bg(8),
                ObjectShape::Ring,
                [0.95, 0.45, 0.05],
            ),
            _ => (
                BoundingBox::new(240.0, 230.0, 80.0),
                noise_bg(31),
                ObjectShape::Disc,
                [0.85, 0.10, 0.80],
            ),
        };
        SceneManifest {
            image_size: 360,
            light: Light::Left,
            light_strength: default_light_strength(),
            groundtruth_box: gt,
            background,
            object: ObjectSpec {
                shape,
                color,
                texture_seed: 3 + index as u64,
                fill: 0.75,
            },
            world: Some(WorldSpec::canonical(&gt, 360, 0.9)),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<SceneManifest> {
        let m: SceneManifest =
            toml::from_str(s).map_err(|e| Error::Config(format!("scene manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SceneManifest> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SceneManifest::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Error::InvalidManifest {
            field: field.to_string(),
            reason,
        };
        if self.image_size < 21 {
            return Err(bad("image_size", format!("{} is below 21", self.image_size)));
        }
        let gt = &self.groundtruth_box;
        gt.validate()
            .map_err(|e| bad("groundtruth_box", e.to_string()))?;
        if !gt.inside_image(self.image_size as f64) {
            return Err(bad(
                "groundtruth_box",
                format!("{gt:?} is not inside the {0}x{0} image", self.image_size),
            ));
        }
        if gt.w < 20.0 {
            return Err(bad("groundtruth_box.w", format!("{} is below 20", gt.w)));
        }
        if !(0.0..1.0).contains(&self.light_strength) || self.light_strength > 0.6 {
            return Err(bad("light_strength", format!("{} outside [0, 0.6]", self.light_strength)));
        }
        let unit = |c: &[f32; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !unit(&self.background.color_a) {
            return Err(bad("background.color_a", "channels must be in [0, 1]".into()));
        }
        if !unit(&self.background.color_b) {
            return Err(bad("background.color_b", "channels must be in [0, 1]".into()));
        }
        if !unit(&self.object.color) {
            return Err(bad("object.color", "channels must be in [0, 1]".into()));
        }
        if !(self.background.scale >= 2.0) {
            return Err(bad("background.scale", format!("{} is below 2", self.background.scale)));
        }
        if !(self.object.fill > 0.2 && self.object.fill <= 1.0) {
            return Err(bad("object.fill", format!("{} outside (0.2, 1]", self.object.fill)));
        }
        let contrast = (0..3)
            .map(|k| {
                let bg = 0.5 * (self.background.color_a[k] + self.background.color_b[k]);
                (self.object.color[k] - bg).abs()
            })
            .fold(0.0f32, f32::max);
        if contrast < 0.3 {
            return Err(bad(
                "object.color",
                format!("contrast {contrast:.3} against the background is below 0.3"),
            ));
        }
        if let Some(world) = &self.world {
            self.validate_world(world)?;
        }
        Ok(())
    }

    fn validate_world(&self, world: &WorldSpec) -> Result<()> {
        let bad = |field: &str, reason: String| Error::InvalidManifest {
            field: field.to_string(),
            reason,
        };
        let [ox, oy, oz] = world.object_position;
        if !(oz > 0.0) {
            return Err(bad("world.object_position", "object must be in front of the camera".into()));
        }
        if !(world.focal_length > 0.0) {
            return Err(bad("world.focal_length", "must be positive".into()));
        }
        if !(world.backdrop_offset > 0.0) {
            return Err(bad("world.backdrop_offset", "must be positive".into()));
        }
        if (0..3).any(|k| !(world.goal_min[k] < world.goal_max[k])) {
            return Err(bad("world.goal_min", "goal_min must be below goal_max on every axis".into()));
        }
        if world.goal_max[2] >= oz {
            return Err(bad("world.goal_max", "goal region intersects the object".into()));
        }
        let c = self.image_size as f64 / 2.0;
        let u = world.focal_length * ox / oz + c;
        let v = c - world.focal_length * oy / oz;
        let (gcx, gcy) = self.groundtruth_box.center();
        if (u - gcx).abs() > 1.0 || (v - gcy).abs() > 1.0 {
            return Err(bad(
                "world.object_position",
                format!("projects to ({u:.1}, {v:.1}), groundtruth center is ({gcx:.1}, {gcy:.1})"),
            ));
        }
        Ok(())
    }

    /// Side of the object sprite in image pixels.
    pub fn sprite_size(&self) -> f64 {
        self.object.fill * self.groundtruth_box.w
    }
}

fn hash2(ix: i64, iy: i64, seed: u64) -> f32 {
    let h = derive_seed(seed, (ix as u64).wrapping_mul(0x1F1F_1F1F) ^ (iy as u64).rotate_left(32));
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn value_noise(u: f64, v: f64, scale: f64, seed: u64) -> f32 {
    let (x, y) = (u / scale, v / scale);
    let (x0, y0) = (x.floor(), y.floor());
    let (tx, ty) = ((x - x0) as f32, (y - y0) as f32);
    let s = |t: f32| t * t * (3.0 - 2.0 * t);
    let (sx, sy) = (s(tx), s(ty));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash2(ix, iy, seed);
    let b = hash2(ix + 1, iy, seed);
    let c = hash2(ix, iy + 1, seed);
    let d = hash2(ix + 1, iy + 1, seed);
    let top = a + (b - a) * sx;
    let bot = c + (d - c) * sx;
    top + (bot - top) * sy
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Texture sampler for one manifest and seed.
#[derive(Debug, Clone)]
pub struct SceneTextures {
    background: BackgroundSpec,
    object: ObjectSpec,
    bg_seed: u64,
    obj_seed: u64,
}

impl SceneTextures {
    pub fn new(manifest: &SceneManifest, seed: u64) -> SceneTextures {
        SceneTextures {
            background: manifest.background.clone(),
            object: manifest.object.clone(),
            bg_seed: derive_seed(seed, manifest.background.seed),
            obj_seed: derive_seed(seed, manifest.object.texture_seed ^ 0xA5A5),
        }
    }

    /// Background color at image-plane coordinates `(u, v)` (pixels, any
    /// real value).
    pub fn background_at(&self, u: f64, v: f64) -> [f32; 3] {
        let bg = &self.background;
        match bg.kind {
            BackgroundKind::Noise => {
                let n = 0.65 * value_noise(u, v, bg.scale, self.bg_seed)
                    + 0.35 * value_noise(u, v, bg.scale / 2.5, self.bg_seed ^ 0x55);
                mix(bg.color_a, bg.color_b, n)
            }
            BackgroundKind::Checker => {
                let parity = ((u / bg.scale).floor() as i64 + (v / bg.scale).floor() as i64).rem_euclid(2);
                let base = if parity == 0 { bg.color_a } else { bg.color_b };
                let n = value_noise(u, v, bg.scale / 3.0, self.bg_seed) - 0.5;
                [
                    (base[0] + 0.12 * n).clamp(0.0, 1.0),
                    (base[1] + 0.12 * n).clamp(0.0, 1.0),
                    (base[2] + 0.12 * n).clamp(0.0, 1.0),
                ]
            }
        }
    }

    /// Object color at sprite-local coordinates in `[-1, 1]²`, or `None`
    /// outside the shape.
    pub fn object_at(&self, lu: f64, lv: f64) -> Option<[f32; 3]> {
        let r2 = lu * lu + lv * lv;
        let inside = match self.object.shape {
            ObjectShape::Disc => r2 <= 1.0,
            ObjectShape::Square => lu.abs() <= 1.0 && lv.abs() <= 1.0,
            ObjectShape::Diamond => lu.abs() + lv.abs() <= 1.0,
            ObjectShape::Ring => (0.16..=1.0).contains(&r2),
        };
        if !inside {
            return None;
        }
        let shade = 0.78 + 0.22 * (1.0 - r2.min(1.0)) as f32;
        let grain = 0.9 + 0.2 * value_noise(lu * 60.0, lv * 60.0, 12.0, self.obj_seed);
        let f = shade * grain;
        let c = self.object.color;
        Some([
            (c[0] * f).clamp(0.0, 1.0),
            (c[1] * f).clamp(0.0, 1.0),
            (c[2] * f).clamp(0.0, 1.0),
        ])
    }
}

/// Renders the scene seen from the canonical viewpoint, then applies the
/// manifest's lighting.
pub fn generate_scene(manifest: &SceneManifest, seed: u64) -> Result<Frame> {
    manifest.validate()?;
    let tex = SceneTextures::new(manifest, seed);
    let n = manifest.image_size;
    let (gcx, gcy) = manifest.groundtruth_box.center();
    let half = manifest.sprite_size() / 2.0;
    let frame = Frame::from_fn(n, n, |r, c| {
        let (u, v) = (c as f64 + 0.5, r as f64 + 0.5);
        tex.object_at((u - gcx) / half, (v - gcy) / half)
            .unwrap_or_else(|| tex.background_at(u, v))
    });
    relight(&frame, manifest.light, manifest.light_strength)
}
