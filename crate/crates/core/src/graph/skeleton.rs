use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::graph::GraphTopology;

pub const HAND_JOINTS: usize = 21;
pub const BOX_CORNERS: usize = 8;

/// Joint ordering of one hand: wrist (0), then thumb, index, middle, ring and
/// pinky chains of four joints each, proximal to distal.
pub const FINGER_CHAINS: [[usize; 4]; 5] = [
    [1, 2, 3, 4],
    [5, 6, 7, 8],
    [9, 10, 11, 12],
    [13, 14, 15, 16],
    [17, 18, 19, 20],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkeletonLayout {
    Hand21,
    Box8,
    /// One or two hands followed by the object box.
    Composite,
}

/// A pose graph and the node ranges of its parts.
#[derive(Debug, Clone)]
pub struct SkeletonTemplate {
    pub layout: SkeletonLayout,
    pub topology: GraphTopology,
    /// Node range of each hand, in order.
    pub hands: Vec<Range<usize>>,
    /// Node range of the object corners, if present.
    pub object: Option<Range<usize>>,
}

fn hand_graph() -> GraphTopology {
    let mut edges = Vec::with_capacity(20);
    for chain in FINGER_CHAINS {
        edges.push((0, chain[0]));
        for w in chain.windows(2) {
            edges.push((w[0], w[1]));
        }
    }
    GraphTopology::new(HAND_JOINTS, edges).expect("static hand skeleton")
}

/// Corner `i` sits at `(i & 1, (i >> 1) & 1, (i >> 2) & 1)`; edges join corners
/// differing in one coordinate.
fn box_graph() -> GraphTopology {
    let mut edges = Vec::with_capacity(12);
    for i in 0..BOX_CORNERS {
        for bit in [1, 2, 4] {
            let j = i ^ bit;
            if i < j {
                edges.push((i, j));
            }
        }
    }
    GraphTopology::new(BOX_CORNERS, edges).expect("static box wireframe")
}

impl SkeletonTemplate {
    /// Builds a skeleton. `hands` is ignored for [`SkeletonLayout::Box8`].
    ///
    /// Parts are combined block-diagonally with no edges between them.
    pub fn build(layout: SkeletonLayout, hands: usize) -> Self {
        let hand = hand_graph();
        let cube = box_graph();
        let n_hands = match layout {
            SkeletonLayout::Box8 => 0,
            _ => hands,
        };
        let mut parts: Vec<&GraphTopology> = vec![&hand; n_hands];
        if layout != SkeletonLayout::Hand21 {
            parts.push(&cube);
        }
        let topology = GraphTopology::block_diagonal(&parts).expect("disjoint parts");
        let hand_ranges = (0..n_hands)
            .map(|h| h * HAND_JOINTS..(h + 1) * HAND_JOINTS)
            .collect();
        let object = (layout != SkeletonLayout::Hand21)
            .then(|| n_hands * HAND_JOINTS..n_hands * HAND_JOINTS + BOX_CORNERS);
        Self {
            layout,
            topology,
            hands: hand_ranges,
            object,
        }
    }

    /// Hands plus object box, the pose graph of the reconstruction network.
    pub fn composite(hands: usize) -> Self {
        Self::build(SkeletonLayout::Composite, hands)
    }

    pub fn num_nodes(&self) -> usize {
        self.topology.num_nodes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_counts() {
        assert_eq!(SkeletonTemplate::composite(1).num_nodes(), 29);
        assert_eq!(SkeletonTemplate::composite(2).num_nodes(), 50);
        let b = SkeletonTemplate::build(SkeletonLayout::Box8, 1);
        assert_eq!((b.num_nodes(), b.topology.num_edges()), (8, 12));
    }

    #[test]
    fn hand_is_a_tree_of_five_chains() {
        let h = SkeletonTemplate::build(SkeletonLayout::Hand21, 1);
        assert_eq!(h.topology.num_edges(), 20);
        assert_eq!(h.topology.degree(0), 5);
        for chain in FINGER_CHAINS {
            assert_eq!(h.topology.degree(chain[3]), 1);
        }
    }

    #[test]
    fn composite_has_no_cross_edges() {
        let s = SkeletonTemplate::composite(2);
        let parts: Vec<Range<usize>> = s.hands.iter().cloned().chain(s.object.clone()).collect();
        let part_of = |n: usize| parts.iter().position(|r| r.contains(&n)).unwrap();
        assert!(s
            .topology
            .edges()
            .iter()
            .all(|&(a, b)| part_of(a) == part_of(b)));
        assert_eq!(s.topology.num_edges(), 20 * 2 + 12);
    }
}
