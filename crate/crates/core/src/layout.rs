//! Editable scene layout: a global prompt plus axis-aligned boxes, each with
//! its own object prompt. Layouts are plain values; every edit returns a new
//! layout and leaves the input untouched.

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::Vec3;

/// Slack allowed when checking that a box stays inside the unit frame cube.
const FRAME_TOLERANCE: f64 = 1e-9;

/// Boxes smaller than this fraction of the frame volume get an info diagnostic.
const SMALL_VOLUME_RATIO: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub id: String,
    pub center: Vec3,
    pub half_extents: Vec3,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_ref: Option<PathBuf>,
}

impl Box3 {
    pub fn new(id: impl Into<String>, center: Vec3, half_extents: Vec3, prompt: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            center,
            half_extents,
            prompt: prompt.into(),
            cache_ref: None,
        }
    }

    pub fn min(&self) -> Vec3 {
        self.center - self.half_extents
    }

    pub fn max(&self) -> Vec3 {
        self.center + self.half_extents
    }

    /// Fraction of the `[-1,1]^3` frame volume covered by this box.
    pub fn volume_ratio(&self) -> f64 {
        let h = self.half_extents;
        (8.0 * h.x * h.y * h.z) / 8.0
    }

    /// Whether the two boxes share a region of positive volume.
    pub fn overlaps(&self, other: &Box3) -> bool {
        let (a0, a1, b0, b1) = (self.min(), self.max(), other.min(), other.max());
        (0..3).all(|i| a0[i] < b1[i] && b0[i] < a1[i])
    }

    fn check(&self) -> Result<(), LayoutError> {
        let invalid = |field: &str, reason: String| LayoutError::Validation {
            id: self.id.clone(),
            field: field.to_string(),
            reason,
        };
        if self.id.is_empty() {
            return Err(invalid("id", "must be non-empty".into()));
        }
        let h = self.half_extents.to_array();
        if h.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(invalid("half_extents", format!("all components must be > 0, got {h:?}")));
        }
        if self.center.to_array().iter().any(|v| !v.is_finite()) {
            return Err(invalid("center", "must be finite".into()));
        }
        let (lo, hi) = (self.min(), self.max());
        if (0..3).any(|i| lo[i] < -1.0 - FRAME_TOLERANCE || hi[i] > 1.0 + FRAME_TOLERANCE) {
            return Err(invalid(
                "center",
                format!("box spans {:?}..{:?}, outside the [-1,1]^3 frame", lo.to_array(), hi.to_array()),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub global_prompt: String,
    #[serde(default)]
    pub seed: u64,
    pub boxes: Vec<Box3>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LayoutError {
    #[error("layout syntax error: {0}")]
    Syntax(String),
    #[error("invalid layout: box `{id}` field `{field}`: {reason}")]
    Validation { id: String, field: String, reason: String },
    #[error("unknown box `{0}`")]
    UnknownTarget(String),
    #[error("edit rejected: {0}")]
    InvariantViolation(Box<LayoutError>),
}

impl Layout {
    pub fn find(&self, id: &str) -> Option<&Box3> {
        self.boxes.iter().find(|b| b.id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.boxes.iter().position(|b| b.id == id)
    }

    /// Check every structural invariant. Diagnostics (soft issues) are
    /// reported separately by [`validate_layout`].
    pub fn check(&self) -> Result<(), LayoutError> {
        if self.global_prompt.trim().is_empty() {
            return Err(LayoutError::Validation {
                id: String::new(),
                field: "global_prompt".into(),
                reason: "must be non-empty".into(),
            });
        }
        if self.boxes.is_empty() {
            return Err(LayoutError::Validation {
                id: String::new(),
                field: "boxes".into(),
                reason: "at least one box is required".into(),
            });
        }
        let mut seen = HashSet::new();
        for b in &self.boxes {
            if !seen.insert(b.id.as_str()) {
                return Err(LayoutError::Validation {
                    id: b.id.clone(),
                    field: "id".into(),
                    reason: format!("duplicate id `{}`", b.id),
                });
            }
            b.check()?;
        }
        Ok(())
    }
}

pub fn parse_layout(text: &str) -> Result<Layout, LayoutError> {
    let layout: Layout = serde_json::from_str(text).map_err(|e| LayoutError::Syntax(e.to_string()))?;
    layout.check()?;
    Ok(layout)
}

pub fn serialize_layout(layout: &Layout) -> String {
    serde_json::to_string_pretty(layout).expect("layout serializes")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Severity {
    Info,
    Warning,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub boxes: Vec<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Info => "info",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: [{}] {}", self.boxes.join(", "), self.message)
    }
}

/// Soft checks on a valid layout: boxes that never touch their neighbours
/// tend to float apart during training, and very small boxes see few rays.
pub fn validate_layout(layout: &Layout) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let boxes = &layout.boxes;
    if boxes.len() >= 2 {
        for (i, a) in boxes.iter().enumerate() {
            for b in &boxes[i + 1..] {
                if !a.overlaps(b) {
                    out.push(Diagnostic {
                        severity: Severity::Warning,
                        boxes: vec![a.id.clone(), b.id.clone()],
                        message: format!("boxes `{}` and `{}` do not overlap", a.id, b.id),
                    });
                }
            }
        }
    }
    for b in boxes {
        let ratio = b.volume_ratio();
        if ratio < SMALL_VOLUME_RATIO {
            out.push(Diagnostic {
                severity: Severity::Info,
                boxes: vec![b.id.clone()],
                message: format!(
                    "box `{}` covers {ratio:.3e} of the frame volume (< 1%); it may receive little guidance",
                    b.id
                ),
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayoutEdit {
    Move { id: String, delta: Vec3 },
    /// Multiplies the half-extents per axis; the center stays fixed.
    Scale { id: String, factors: Vec3 },
    Remove { id: String },
    SetPrompt { id: String, prompt: String },
    Add { node: Box3 },
}

pub fn apply_edit(layout: &Layout, edit: &LayoutEdit) -> Result<Layout, LayoutError> {
    let mut next = layout.clone();
    let target = |id: &str| next_index(layout, id);
    match edit {
        LayoutEdit::Move { id, delta } => {
            let i = target(id)?;
            next.boxes[i].center = next.boxes[i].center + *delta;
        }
        LayoutEdit::Scale { id, factors } => {
            let i = target(id)?;
            next.boxes[i].half_extents = next.boxes[i].half_extents.mul_elem(*factors);
        }
        LayoutEdit::Remove { id } => {
            let i = target(id)?;
            next.boxes.remove(i);
        }
        LayoutEdit::SetPrompt { id, prompt } => {
            let i = target(id)?;
            next.boxes[i].prompt = prompt.clone();
        }
        LayoutEdit::Add { node } => {
            if layout.find(&node.id).is_some() {
                return Err(LayoutError::InvariantViolation(Box::new(LayoutError::Validation {
                    id: node.id.clone(),
                    field: "id".into(),
                    reason: "a box with this id already exists".into(),
                })));
            }
            next.boxes.push(node.clone());
        }
    }
    next.check().map_err(|e| LayoutError::InvariantViolation(Box::new(e)))?;
    Ok(next)
}

fn next_index(layout: &Layout, id: &str) -> Result<usize, LayoutError> {
    layout.index_of(id).ok_or_else(|| LayoutError::UnknownTarget(id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fruit() -> Layout {
        Layout {
            global_prompt: "a red apple and a yellow banana".into(),
            seed: 0,
            boxes: vec![
                Box3::new("apple", Vec3::new(-0.3, 0.0, 0.0), Vec3::splat(0.3), "a red apple"),
                Box3::new("banana", Vec3::new(0.3, 0.0, 0.0), Vec3::splat(0.3), "a yellow banana"),
            ],
        }
    }

    #[test]
    fn parses_single_box_with_default_seed() {
        let text = r#"{
            "global_prompt": "a red apple and a yellow banana",
            "boxes": [{"id": "apple", "center": [0,0,0], "half_extents": [0.3,0.3,0.3], "prompt": "a red apple"}]
        }"#;
        let layout = parse_layout(text).unwrap();
        assert_eq!(layout.boxes.len(), 1);
        assert_eq!(layout.seed, 0);
        assert_eq!(layout.boxes[0].half_extents, Vec3::splat(0.3));
        assert_eq!(layout.boxes[0].cache_ref, None);
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = r#"{"global_prompt": "g", "boxes": [
            {"id": "apple", "center": [0,0,0], "half_extents": [0.3,0.3,0.3], "prompt": "a"},
            {"id": "apple", "center": [0,0,0], "half_extents": [0.3,0.3,0.3], "prompt": "b"}]}"#;
        match parse_layout(text) {
            Err(LayoutError::Validation { id, field, .. }) => {
                assert_eq!(id, "apple");
                assert_eq!(field, "id");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn negative_extent_is_rejected() {
        let text = r#"{"global_prompt": "g", "boxes": [
            {"id": "apple", "center": [0,0,0], "half_extents": [0.3,-0.1,0.3], "prompt": "a"}]}"#;
        match parse_layout(text) {
            Err(LayoutError::Validation { field, .. }) => assert_eq!(field, "half_extents"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_and_empty_layouts() {
        assert!(matches!(parse_layout("{ not json"), Err(LayoutError::Syntax(_))));
        assert!(matches!(
            parse_layout(r#"{"global_prompt": "g", "boxes": []}"#),
            Err(LayoutError::Validation { .. })
        ));
        assert!(matches!(
            parse_layout(r#"{"global_prompt": " ", "boxes": [{"id": "a", "center": [0,0,0], "half_extents": [0.1,0.1,0.1], "prompt": "a"}]}"#),
            Err(LayoutError::Validation { .. })
        ));
    }

    #[test]
    fn box_outside_frame_is_rejected() {
        let mut l = fruit();
        l.boxes[0].center = Vec3::new(0.8, 0.0, 0.0);
        assert!(l.check().is_err());
    }

    #[test]
    fn overlap_diagnostics() {
        let mut l = fruit();
        l.boxes[0].center = Vec3::new(-0.5, 0.0, 0.0);
        l.boxes[1].center = Vec3::new(0.5, 0.0, 0.0);
        l.boxes[0].half_extents = Vec3::splat(0.2);
        l.boxes[1].half_extents = Vec3::splat(0.2);
        let d = validate_layout(&l);
        assert_eq!(d.iter().filter(|d| d.severity == Severity::Warning).count(), 1);

        l.boxes[0].center = Vec3::new(-0.15, 0.0, 0.0);
        l.boxes[1].center = Vec3::new(0.15, 0.0, 0.0);
        assert!(validate_layout(&l).iter().all(|d| d.severity != Severity::Warning));
    }

    #[test]
    fn small_box_gets_info() {
        let l = Layout {
            global_prompt: "a cherry".into(),
            seed: 1,
            boxes: vec![Box3::new("cherry", Vec3::ZERO, Vec3::splat(0.05), "a cherry")],
        };
        let d = validate_layout(&l);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].severity, Severity::Info);
        assert!((l.boxes[0].volume_ratio() - 1.25e-4).abs() < 1e-15);
    }

    #[test]
    fn edits() {
        let l = fruit();
        let moved = apply_edit(&l, &LayoutEdit::Move { id: "apple".into(), delta: Vec3::new(0.1, 0.0, 0.0) }).unwrap();
        assert!((moved.boxes[0].center.x - (-0.2)).abs() < 1e-15);

        let removed = apply_edit(&l, &LayoutEdit::Remove { id: "banana".into() }).unwrap();
        assert_eq!(removed.boxes.len(), 1);

        let juice = apply_edit(
            &l,
            &LayoutEdit::SetPrompt { id: "apple".into(), prompt: "a glass of orange juice".into() },
        )
        .unwrap();
        assert_eq!(juice.boxes[0].prompt, "a glass of orange juice");
        assert_eq!(juice.boxes[0].center, l.boxes[0].center);

        let err = apply_edit(&l, &LayoutEdit::Scale { id: "apple".into(), factors: Vec3::splat(4.0) });
        assert!(matches!(err, Err(LayoutError::InvariantViolation(_))));
        assert!(matches!(
            apply_edit(&l, &LayoutEdit::Remove { id: "kiwi".into() }),
            Err(LayoutError::UnknownTarget(_))
        ));
        assert!(apply_edit(&l, &LayoutEdit::Add { node: l.boxes[0].clone() }).is_err());
        assert_eq!(l, fruit());
    }

    #[test]
    fn removing_last_box_is_an_invariant_violation() {
        let l = apply_edit(&fruit(), &LayoutEdit::Remove { id: "banana".into() }).unwrap();
        assert!(matches!(
            apply_edit(&l, &LayoutEdit::Remove { id: "apple".into() }),
            Err(LayoutError::InvariantViolation(_))
        ));
    }
}
