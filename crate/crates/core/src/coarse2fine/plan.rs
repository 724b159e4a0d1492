use serde::{Deserialize, Serialize};

use crate::coarse2fine::Coarse2FineError;
use crate::graformer::GraFormerConfig;
use crate::graph::{GraphTopology, SkeletonTemplate, BOX_CORNERS, HAND_JOINTS};
use crate::layout::{PartLayout, OBJECT_VERTICES};
use crate::mesh::{icosphere, qecd_simplify, toy_hand_mesh, Mesh, MeshError, TOY_HAND_VERTICES};

/// Hand node counts from the skeleton up to the full mesh.
pub const HAND_LEVELS: [usize; 4] = [HAND_JOINTS, 49, 194, TOY_HAND_VERTICES];
/// Object node counts from the box corners up to the full mesh.
pub const OBJECT_LEVELS: [usize; 4] = [BOX_CORNERS, 64, 256, OBJECT_VERTICES];

/// Triangle list of one mesh level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelFaces {
    pub vertices: usize,
    pub faces: Vec<[usize; 3]>,
}

impl LevelFaces {
    pub fn of<T: crate::scalar::Scalar>(mesh: &Mesh<T>) -> Self {
        Self {
            vertices: mesh.num_vertices(),
            faces: mesh.faces.clone(),
        }
    }

    pub fn topology(&self) -> Result<GraphTopology, Coarse2FineError> {
        Ok(GraphTopology::from_faces(&self.faces, self.vertices)?)
    }
}

/// Intermediate and final hand and object meshes, coarse to fine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshLevels {
    pub hand: Vec<LevelFaces>,
    pub object: Vec<LevelFaces>,
}

impl MeshLevels {
    /// Decimates `hand` and `object` (the finest levels) to the remaining
    /// counts of the ladders.
    pub fn decimate<T: crate::scalar::Scalar>(
        hand: &Mesh<T>,
        object: &Mesh<T>,
        hand_counts: &[usize],
        object_counts: &[usize],
    ) -> Result<Self, MeshError> {
        let level = |m: &Mesh<T>, counts: &[usize]| -> Result<Vec<LevelFaces>, MeshError> {
            let (last, coarse) = counts.split_last().expect("non-empty ladder");
            if m.num_vertices() != *last {
                return Err(MeshError::Invalid(format!(
                    "finest level has {} vertices, expected {last}",
                    m.num_vertices()
                )));
            }
            let mut out = coarse
                .iter()
                .map(|&n| qecd_simplify(m, n).map(|s| LevelFaces::of(&s)))
                .collect::<Result<Vec<_>, _>>()?;
            out.push(LevelFaces::of(m));
            Ok(out)
        };
        Ok(Self {
            hand: level(hand, hand_counts)?,
            object: level(object, object_counts)?,
        })
    }

    /// The toy hand decimated to 194 and 49 vertices, and the icosphere
    /// simplified to 1000 then 256 and 64 vertices.
    pub fn canonical() -> Result<Self, MeshError> {
        let hand = toy_hand_mesh::<f64>(0)?;
        let sphere = qecd_simplify(&icosphere::<f64>(4), OBJECT_VERTICES)?;
        Self::decimate(&hand, &sphere, &HAND_LEVELS[1..], &OBJECT_LEVELS[1..])
    }
}

/// Node ladder, topologies and feature widths of the shape network.
///
/// Level 0 is the pose graph; every later level stacks one hand mesh per
/// hand followed by the object mesh, block-diagonally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub hands: usize,
    pub textured: bool,
    /// Per level: nodes of one hand and of the object.
    pub hand_counts: Vec<usize>,
    pub object_counts: Vec<usize>,
    pub topologies: Vec<GraphTopology>,
    /// Output width of each GraFormer stage.
    pub widths: Vec<usize>,
    /// Node feature width of the input graph.
    pub input_dim: usize,
    /// Heads, blocks, Chebyshev order and attention switch shared by all
    /// stages. Its widths are ignored.
    pub graformer: GraFormerConfig,
}

impl StagePlan {
    /// Checks the generic invariants; see [`build_stage_plan`] for the
    /// full-size ladder.
    pub fn new(
        hands: usize,
        textured: bool,
        hand_counts: Vec<usize>,
        object_counts: Vec<usize>,
        topologies: Vec<GraphTopology>,
        widths: Vec<usize>,
        input_dim: usize,
        graformer: GraFormerConfig,
    ) -> Result<Self, Coarse2FineError> {
        let plan = Self {
            hands,
            textured,
            hand_counts,
            object_counts,
            topologies,
            widths,
            input_dim,
            graformer,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<(), Coarse2FineError> {
        let bad = |m: String| Err(Coarse2FineError::Ladder(m));
        if self.hands != 1 && self.hands != 2 {
            return bad(format!("{} hands; expected 1 or 2", self.hands));
        }
        let levels = self.topologies.len();
        if levels < 2 || self.hand_counts.len() != levels || self.object_counts.len() != levels {
            return bad(format!(
                "{levels} topologies for {} hand and {} object levels",
                self.hand_counts.len(),
                self.object_counts.len()
            ));
        }
        if self.widths.len() != levels - 1 {
            return bad(format!("{} widths for {} stages", self.widths.len(), levels - 1));
        }
        let counts = self.node_counts();
        for (l, (topo, &n)) in self.topologies.iter().zip(&counts).enumerate() {
            if topo.num_nodes() != n {
                return bad(format!("level {l} topology has {} nodes, expected {n}", topo.num_nodes()));
            }
        }
        if counts.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("node counts {counts:?} must strictly increase"));
        }
        let out = self.output_dim();
        if self.widths.windows(2).any(|w| w[1] >= w[0]) || self.widths.last().is_some_and(|&w| w < out) {
            return Err(Coarse2FineError::Config(format!(
                "widths {:?} must strictly decrease and end at least at {out}",
                self.widths
            )));
        }
        if self.input_dim == 0 {
            return Err(Coarse2FineError::Config("input_dim must be positive".into()));
        }
        for (s, cfg) in (0..self.num_stages()).map(|s| (s, self.stage_config(s))) {
            cfg.validate()
                .map_err(|e| Coarse2FineError::Config(format!("stage {s}: {e}")))?;
        }
        Ok(())
    }

    pub fn num_stages(&self) -> usize {
        self.widths.len()
    }

    /// Total nodes per level.
    pub fn node_counts(&self) -> Vec<usize> {
        self.hand_counts
            .iter()
            .zip(&self.object_counts)
            .map(|(h, o)| self.hands * h + o)
            .collect()
    }

    /// 3 coordinates, plus 3 colors when textured.
    pub fn output_dim(&self) -> usize {
        if self.textured {
            6
        } else {
            3
        }
    }

    /// GraFormer configuration of stage `s`.
    pub fn stage_config(&self, s: usize) -> GraFormerConfig {
        GraFormerConfig {
            d_model: self.widths[s],
            output_dim: self.widths[s],
            input_dim: if s == 0 { self.input_dim } else { self.widths[s - 1] },
            ..self.graformer.clone()
        }
    }

    /// Part layout of the output mesh.
    pub fn layout(&self) -> PartLayout {
        PartLayout::with_sizes(
            self.hands,
            *self.hand_counts.last().expect("validated"),
            *self.object_counts.last().expect("validated"),
        )
    }

    pub fn to_json(&self) -> Result<String, Coarse2FineError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, Coarse2FineError> {
        let plan: Self = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Full-size plan. `stages` (1 to 3) picks the levels visited: all four for
/// three stages, skeleton/194/778 for two and skeleton/778 for one. `widths`
/// needs at least `stages` entries; the first ones are used.
pub fn build_stage_plan(
    hands: usize,
    textured: bool,
    levels: &MeshLevels,
    stages: usize,
    widths: &[usize],
    input_dim: usize,
    graformer: GraFormerConfig,
) -> Result<StagePlan, Coarse2FineError> {
    let hand: Vec<usize> = levels.hand.iter().map(|l| l.vertices).collect();
    if hand != HAND_LEVELS[1..] {
        return Err(Coarse2FineError::Ladder(format!(
            "hand levels {hand:?}, expected {:?}",
            &HAND_LEVELS[1..]
        )));
    }
    let object: Vec<usize> = levels.object.iter().map(|l| l.vertices).collect();
    if object.len() != 3 || object[2] != OBJECT_VERTICES || !(object[0] < object[1] && object[1] < object[2]) {
        return Err(Coarse2FineError::Ladder(format!(
            "object levels {object:?}, expected o1 < o2 < {OBJECT_VERTICES}"
        )));
    }
    let visit: &[usize] = match stages {
        1 => &[0, 3],
        2 => &[0, 2, 3],
        3 => &[0, 1, 2, 3],
        s => return Err(Coarse2FineError::Config(format!("{s} stages; expected 1 to 3"))),
    };
    if widths.len() < stages {
        return Err(Coarse2FineError::Config(format!("{} widths for {stages} stages", widths.len())));
    }
    let mut topologies = Vec::with_capacity(visit.len());
    let (mut hand_counts, mut object_counts) = (Vec::new(), Vec::new());
    for &l in visit {
        if l == 0 {
            topologies.push(SkeletonTemplate::composite(hands).topology);
            hand_counts.push(HAND_JOINTS);
            object_counts.push(BOX_CORNERS);
            continue;
        }
        let h = levels.hand[l - 1].topology()?;
        let o = levels.object[l - 1].topology()?;
        let mut parts = vec![&h; hands];
        parts.push(&o);
        topologies.push(GraphTopology::block_diagonal(&parts)?);
        hand_counts.push(h.num_nodes());
        object_counts.push(o.num_nodes());
    }
    StagePlan::new(
        hands,
        textured,
        hand_counts,
        object_counts,
        topologies,
        widths[..stages].to_vec(),
        input_dim,
        graformer,
    )
}
