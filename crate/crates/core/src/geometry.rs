//! Square region-of-interest algebra: overlap, discrete transitions and
//! legality.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when deciding whether a box edge lies inside the image.
const EDGE_EPS: f64 = 1e-9;

/// Square box with top-left corner `(x, y)` and side `w`, in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

impl BoundingBox {
    pub const fn new(x: f64, y: f64, w: f64) -> Self {
        BoundingBox { x, y, w }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64) -> Self {
        BoundingBox::new(cx - w / 2.0, cy - w / 2.0, w)
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.w / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.w
    }

    pub fn area(&self) -> f64 {
        self.w * self.w
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 {
            return Err(Error::InvalidBox(format!("non-positive width {}", self.w)));
        }
        Ok(())
    }

    /// True when `other` lies inside `self` (closed containment).
    pub fn contains(&self, other: &BoundingBox) -> bool {
        other.x >= self.x - EDGE_EPS
            && other.y >= self.y - EDGE_EPS
            && other.right() <= self.right() + EDGE_EPS
            && other.bottom() <= self.bottom() + EDGE_EPS
    }

    pub fn inside_image(&self, image_size: f64) -> bool {
        self.x >= -EDGE_EPS
            && self.y >= -EDGE_EPS
            && self.right() <= image_size + EDGE_EPS
            && self.bottom() <= image_size + EDGE_EPS
    }

    pub fn is_legal(&self, cfg: &TransitionConfig) -> bool {
        self.w >= cfg.w_min - EDGE_EPS
            && self.w <= cfg.w_max + EDGE_EPS
            && self.inside_image(cfg.image_size)
    }

    /// Intersection-over-union without width validation.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        if self == other {
            return 1.0;
        }
        let ix = (self.right().min(other.right()) - self.x.max(other.x)).max(0.0);
        let iy = (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0);
        let inter = ix * iy;
        if inter <= 0.0 {
            return 0.0;
        }
        let union = self.area() + other.area() - inter;
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Jaccard overlap of two boxes in continuous coordinates.
pub fn jaccard(a: &BoundingBox, b: &BoundingBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(a.iou(b))
}

/// The seven discrete actions shared by the image environment and the
/// camera workspace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Action {
    ShiftLeft = 0,
    ShiftRight = 1,
    ShiftUp = 2,
    ShiftDown = 3,
    ZoomIn = 4,
    ZoomOut = 5,
    NoOp = 6,
}

pub const N_ACTIONS: usize = 7;

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::ShiftLeft,
        Action::ShiftRight,
        Action::ShiftUp,
        Action::ShiftDown,
        Action::ZoomIn,
        Action::ZoomOut,
        Action::NoOp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::ShiftLeft => "shift_left",
            Action::ShiftRight => "shift_right",
            Action::ShiftUp => "shift_up",
            Action::ShiftDown => "shift_down",
            Action::ZoomIn => "zoom_in",
            Action::ZoomOut => "zoom_out",
            Action::NoOp => "no_op",
        }
    }

    /// Name of the equivalent camera motion.
    pub fn robot_name(self) -> &'static str {
        match self {
            Action::ShiftLeft => "move_left",
            Action::ShiftRight => "move_right",
            Action::ShiftUp => "move_up",
            Action::ShiftDown => "move_down",
            Action::ZoomIn => "move_forward",
            Action::ZoomOut => "move_backward",
            Action::NoOp => "stop",
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub image_size: f64,
    pub w_min: f64,
    pub w_max: f64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        TransitionConfig {
            sigma_min: 0.05,
            sigma_max: 0.15,
            image_size: 360.0,
            w_min: 20.0,
            w_max: 360.0,
        }
    }
}

impl TransitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max < 1.0) {
            return Err(Error::Config(format!(
                "transition: need 0 < sigma_min <= sigma_max < 1, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.w_min > 0.0 && self.w_min <= self.w_max && self.w_max <= self.image_size) {
            return Err(Error::Config(format!(
                "transition: need 0 < w_min <= w_max <= image_size, got w_min={} w_max={} image_size={}",
                self.w_min, self.w_max, self.image_size
            )));
        }
        Ok(())
    }
}

/// Candidate box for `action` with step magnitude `sigma * w`, before any
/// legality check.
pub fn propose(bbox: &BoundingBox, action: Action, sigma: f64) -> BoundingBox {
    let d = sigma * bbox.w;
    let BoundingBox { x, y, w } = *bbox;
    match action {
        Action::ShiftLeft => BoundingBox::new(x - d, y, w),
        Action::ShiftRight => BoundingBox::new(x + d, y, w),
        Action::ShiftUp => BoundingBox::new(x, y - d, w),
        Action::ShiftDown => BoundingBox::new(x, y + d, w),
        Action::ZoomIn => BoundingBox::new(x + d / 2.0, y + d / 2.0, w - d),
        Action::ZoomOut => BoundingBox::new(x - d / 2.0, y - d / 2.0, w + d),
        Action::NoOp => *bbox,
    }
}

/// Applies `action` to a legal box. Illegal candidates void the whole move
/// and the input box is returned unchanged.
pub fn transition(
    bbox: &BoundingBox,
    action: Action,
    sigma: f64,
    cfg: &TransitionConfig,
) -> Result<BoundingBox> {
    if !(sigma >= cfg.sigma_min && sigma <= cfg.sigma_max) {
        return Err(Error::SigmaOutOfRange {
            sigma,
            min: cfg.sigma_min,
            max: cfg.sigma_max,
        });
    }
    bbox.validate()?;
    if !bbox.is_legal(cfg) {
        return Err(Error::Contract(format!("transition from illegal box {bbox:?}")));
    }
    let candidate = propose(bbox, action, sigma);
    if candidate.is_legal(cfg) {
        Ok(candidate)
    } else {
        Ok(*bbox)
    }
}

/// Uniform draw from `[sigma_min, sigma_max]`.
pub fn sample_sigma<R: Rng + ?Sized>(cfg: &TransitionConfig, rng: &mut R) -> f64 {
    if cfg.sigma_min >= cfg.sigma_max {
        return cfg.sigma_min;
    }
    rng.random_range(cfg.sigma_min..=cfg.sigma_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn cfg() -> TransitionConfig {
        TransitionConfig::default()
    }

    #[test]
    fn jaccard_identity_disjoint_and_half_overlap() {
        let a = BoundingBox::new(0.0, 0.0, 100.0);
        assert_eq!(jaccard(&a, &a).unwrap(), 1.0);
        let far = BoundingBox::new(200.0, 200.0, 50.0);
        assert_eq!(jaccard(&a, &far).unwrap(), 0.0);
        let b = BoundingBox::new(50.0, 0.0, 100.0);
        assert!((jaccard(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn jaccard_rejects_non_positive_width() {
        let a = BoundingBox::new(0.0, 0.0, 0.0);
        let b = BoundingBox::new(0.0, 0.0, 10.0);
        assert!(matches!(jaccard(&a, &b), Err(Error::InvalidBox(_))));
        assert!(jaccard(&b, &BoundingBox::new(0.0, 0.0, -3.0)).is_err());
    }

    #[test]
    fn shift_left_moves_by_sigma_w() {
        let b = BoundingBox::new(100.0, 100.0, 200.0);
        let out = transition(&b, Action::ShiftLeft, 0.1, &cfg()).unwrap();
        assert_eq!(out, BoundingBox::new(80.0, 100.0, 200.0));
    }

    #[test]
    fn noop_is_identity() {
        let b = BoundingBox::new(100.0, 100.0, 200.0);
        for s in [0.05, 0.1, 0.15] {
            assert_eq!(transition(&b, Action::NoOp, s, &cfg()).unwrap(), b);
        }
    }

    #[test]
    fn zoom_below_min_width_is_voided() {
        let b = BoundingBox::new(10.0, 10.0, 22.0);
        assert_eq!(transition(&b, Action::ZoomIn, 0.15, &cfg()).unwrap(), b);
    }

    #[test]
    fn zoom_in_preserves_center() {
        let b = BoundingBox::new(100.0, 100.0, 200.0);
        let out = transition(&b, Action::ZoomIn, 0.1, &cfg()).unwrap();
        assert!((out.x - 110.0).abs() < 1e-12);
        assert!((out.y - 110.0).abs() < 1e-12);
        assert!((out.w - 180.0).abs() < 1e-12);
        let (cx, cy) = out.center();
        assert!((cx - 200.0).abs() < 1e-9 && (cy - 200.0).abs() < 1e-9);
    }

    #[test]
    fn move_outside_image_is_voided() {
        let b = BoundingBox::new(0.0, 0.0, 100.0);
        assert_eq!(transition(&b, Action::ShiftLeft, 0.1, &cfg()).unwrap(), b);
        assert_eq!(transition(&b, Action::ZoomOut, 0.1, &cfg()).unwrap(), b);
        let full = BoundingBox::new(0.0, 0.0, 360.0);
        assert_eq!(transition(&full, Action::ZoomOut, 0.05, &cfg()).unwrap(), full);
    }

    #[test]
    fn sigma_out_of_range_is_an_error() {
        let b = BoundingBox::new(100.0, 100.0, 100.0);
        assert!(matches!(
            transition(&b, Action::ShiftUp, 0.2, &cfg()),
            Err(Error::SigmaOutOfRange { .. })
        ));
    }

    #[test]
    fn sample_sigma_support_and_mean() {
        let c = cfg();
        let mut rng = seeded(7);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let s = sample_sigma(&c, &mut rng);
            assert!((0.05..=0.15).contains(&s));
            sum += s;
        }
        // std of the mean is 0.1/sqrt(12 n) ~ 9e-5
        assert!((sum / n as f64 - 0.10).abs() < 0.001);
    }

    #[test]
    fn sample_sigma_degenerate_interval() {
        let c = TransitionConfig {
            sigma_min: 0.1,
            sigma_max: 0.1,
            ..cfg()
        };
        let mut rng = seeded(1);
        for _ in 0..100 {
            assert_eq!(sample_sigma(&c, &mut rng), 0.1);
        }
    }

    #[test]
    fn action_indices_round_trip() {
        assert_eq!(Action::ALL.len(), N_ACTIONS);
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
        }
        assert_eq!(Action::from_index(7), None);
    }
}
