//! Part layout shared by poses, meshes and metrics: one or two hands
//! followed by the object.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::graph::{BOX_CORNERS, HAND_JOINTS};
use crate::mesh::TOY_HAND_VERTICES;

pub const OBJECT_VERTICES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartKind {
    LeftHand,
    RightHand,
    Object,
}

impl PartKind {
    pub fn name(self) -> &'static str {
        match self {
            PartKind::LeftHand => "left_hand",
            PartKind::RightHand => "right_hand",
            PartKind::Object => "object",
        }
    }

    pub fn is_hand(self) -> bool {
        self != PartKind::Object
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Part {
    pub kind: PartKind,
    /// Rows of the pose graph.
    pub joints: Range<usize>,
    /// Rows of the stacked mesh vertices.
    pub vertices: Range<usize>,
}

/// Single-hand scenes hold a right hand; two-hand scenes list the left hand
/// first. The object always comes last.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartLayout {
    pub hands: usize,
    pub parts: Vec<Part>,
}

impl PartLayout {
    pub fn new(hands: usize) -> Self {
        assert!(hands == 1 || hands == 2, "1 or 2 hands");
        Self::with_sizes(hands, TOY_HAND_VERTICES, OBJECT_VERTICES)
    }

    /// Layout with custom mesh sizes (used by miniature networks).
    pub fn with_sizes(hands: usize, hand_vertices: usize, object_vertices: usize) -> Self {
        let kinds: &[PartKind] = if hands == 1 {
            &[PartKind::RightHand]
        } else {
            &[PartKind::LeftHand, PartKind::RightHand]
        };
        let mut parts = Vec::with_capacity(hands + 1);
        let (mut j, mut v) = (0, 0);
        for &kind in kinds {
            parts.push(Part {
                kind,
                joints: j..j + HAND_JOINTS,
                vertices: v..v + hand_vertices,
            });
            j += HAND_JOINTS;
            v += hand_vertices;
        }
        parts.push(Part {
            kind: PartKind::Object,
            joints: j..j + BOX_CORNERS,
            vertices: v..v + object_vertices,
        });
        Self { hands, parts }
    }

    pub fn num_joints(&self) -> usize {
        self.parts.last().map_or(0, |p| p.joints.end)
    }

    pub fn num_vertices(&self) -> usize {
        self.parts.last().map_or(0, |p| p.vertices.end)
    }

    pub fn part(&self, kind: PartKind) -> Option<&Part> {
        self.parts.iter().find(|p| p.kind == kind)
    }
}
