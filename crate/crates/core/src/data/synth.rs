use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::coarse2fine::{MeshLevels, HAND_LEVELS, OBJECT_LEVELS};
use crate::data::geometry::{
    add, apply, axis_angle, compose, cross, dot, normalize, scale, segment_distance, sub, Rigid, Rot,
};
use crate::data::heatmap::{bbox_from_pose2d, BBox, BBOX_PADDING};
use crate::data::normalize::PALM_INDEX;
use crate::data::DataError;
use crate::graph::{BOX_CORNERS, FINGER_CHAINS, HAND_JOINTS};
use crate::layout::{PartKind, PartLayout, OBJECT_VERTICES};
use crate::mesh::{icosphere, qecd_simplify, toy_hand_model, Mesh};
use crate::metrics::{CameraIntrinsics, Image};
use crate::rng::SplitMix64;

/// Environment variable naming the template cache directory.
pub const CACHE_ENV: &str = "THOR_CACHE";
const CACHE_FILE: &str = "templates-v1.json";
// skinning falloff in mm
const SKIN_FALLOFF: f64 = 4.0;
// bones: palm, then three segments per finger
const BONES: usize = 16;

/// Rest-pose hand and object meshes with their coarse levels.
#[derive(Debug, Clone)]
pub struct Templates {
    /// Right hand in mm, wrist at the origin, fingers along +y.
    pub hand: Mesh<f64>,
    pub hand_joints: Vec<[f64; 3]>,
    /// Unit sphere simplified to 1000 vertices.
    pub object: Mesh<f64>,
    pub levels: MeshLevels,
    skin: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    hand_vertices: Vec<[f64; 3]>,
    hand_faces: Vec<[usize; 3]>,
    hand_joints: Vec<[f64; 3]>,
    object_vertices: Vec<[f64; 3]>,
    object_faces: Vec<[usize; 3]>,
    levels: MeshLevels,
}

fn bone_segments(joints: &[[f64; 3]]) -> Vec<Vec<([f64; 3], [f64; 3])>> {
    let mut bones = vec![FINGER_CHAINS.iter().map(|c| (joints[0], joints[c[0]])).collect::<Vec<_>>()];
    for chain in FINGER_CHAINS {
        for k in 0..3 {
            bones.push(vec![(joints[chain[k]], joints[chain[k + 1]])]);
        }
    }
    bones
}

// soft-min of bone distances, keeping weights above 1e-3
fn skin_weights(mesh: &Mesh<f64>, joints: &[[f64; 3]]) -> Vec<Vec<(usize, f64)>> {
    let bones = bone_segments(joints);
    mesh.vertices
        .iter()
        .map(|&v| {
            let d: Vec<f64> = bones
                .iter()
                .map(|segs| segs.iter().map(|&(a, b)| segment_distance(v, a, b)).fold(f64::INFINITY, f64::min))
                .collect();
            let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut w: Vec<(usize, f64)> = d
                .iter()
                .enumerate()
                .map(|(b, &x)| (b, (-(x - dmin) / SKIN_FALLOFF).exp()))
                .filter(|&(_, x)| x > 1e-3)
                .collect();
            let total: f64 = w.iter().map(|x| x.1).sum();
            w.iter_mut().for_each(|x| x.1 /= total);
            w
        })
        .collect()
}

impl Templates {
    pub fn build() -> Result<Self, DataError> {
        let hand = toy_hand_model::<f64>(0)?;
        let object = qecd_simplify(&icosphere::<f64>(4), OBJECT_VERTICES)?;
        let levels = MeshLevels::decimate(&hand.mesh, &object, &HAND_LEVELS[1..], &OBJECT_LEVELS[1..])?;
        Ok(Self::assemble(hand.mesh, hand.joints, object, levels))
    }

    fn assemble(hand: Mesh<f64>, hand_joints: Vec<[f64; 3]>, object: Mesh<f64>, levels: MeshLevels) -> Self {
        let skin = skin_weights(&hand, &hand_joints);
        Self {
            hand,
            hand_joints,
            object,
            levels,
            skin,
        }
    }

    /// Reads `templates-v1.json` from `dir`, building and writing it when absent.
    pub fn load_or_build(dir: &Path) -> Result<Self, DataError> {
        let path = dir.join(CACHE_FILE);
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| DataError::io(&path, e))?;
            let f: TemplateFile = serde_json::from_str(&text)?;
            let hand = Mesh::new(f.hand_vertices, f.hand_faces)?;
            let object = Mesh::new(f.object_vertices, f.object_faces)?;
            return Ok(Self::assemble(hand, f.hand_joints, object, f.levels));
        }
        let t = Self::build()?;
        fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        let f = TemplateFile {
            hand_vertices: t.hand.vertices.clone(),
            hand_faces: t.hand.faces.clone(),
            hand_joints: t.hand_joints.clone(),
            object_vertices: t.object.vertices.clone(),
            object_faces: t.object.faces.clone(),
            levels: t.levels.clone(),
        };
        // write then rename so concurrent readers never see a partial file
        let tmp = dir.join(format!("{CACHE_FILE}.{}.tmp", std::process::id()));
        fs::write(&tmp, serde_json::to_string(&f)?).map_err(|e| DataError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| DataError::io(&path, e))?;
        Ok(t)
    }

    /// Uses the `THOR_CACHE` directory when set.
    pub fn from_env() -> Result<Self, DataError> {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => Self::load_or_build(&PathBuf::from(dir)),
            _ => Self::build(),
        }
    }

    /// Faces of each part of the output mesh.
    pub fn part_faces(&self, layout: &PartLayout) -> Vec<Vec<[usize; 3]>> {
        layout
            .parts
            .iter()
            .map(|p| match p.kind {
                PartKind::LeftHand => mirrored_faces(&self.hand.faces),
                PartKind::RightHand => self.hand.faces.clone(),
                PartKind::Object => self.object.faces.clone(),
            })
            .collect()
    }
}

// mirroring flips orientation, so swap two corners to keep normals outward
fn mirrored_faces(faces: &[[usize; 3]]) -> Vec<[usize; 3]> {
    faces.iter().map(|f| [f[0], f[2], f[1]]).collect()
}

/// Background of the synthetic images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageKind {
    /// Three random low-frequency sinusoids per channel.
    #[default]
    Sinusoids,
    /// `(u / W, v / H, 0.5)`.
    Ramp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub hands: usize,
    pub image: ImageKind,
    pub intrinsics: CameraIntrinsics,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            hands: 1,
            image: ImageKind::Sinusoids,
            intrinsics: CameraIntrinsics {
                fx: 240.0,
                fy: 240.0,
                cx: 128.0,
                cy: 128.0,
                width: 256,
                height: 256,
            },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.hands != 1 && self.hands != 2 {
            return Err(DataError::Invalid(format!("{} hands; expected 1 or 2", self.hands)));
        }
        self.intrinsics
            .validate()
            .map_err(|e| DataError::Invalid(e.to_string()))
    }
}

/// One synthetic scene. 3D quantities are in palm-origin millimeters.
#[derive(Debug, Clone)]
pub struct Sample {
    pub index: u64,
    pub layout: PartLayout,
    pub image: Image<f64>,
    pub intrinsics: CameraIntrinsics,
    /// `K x 3`.
    pub pose3d: Tensor<f64>,
    /// `K x 2` pixels.
    pub pose2d: Tensor<f64>,
    /// One mesh per part, in layout order.
    pub meshes: Vec<Mesh<f64>>,
    /// Camera-space position of the palm.
    pub palm_camera: [f64; 3],
    /// Box of each part, in layout order. Single-hand scenes use one box
    /// around hand and object for both parts.
    pub boxes: Vec<BBox>,
}

impl Sample {
    /// All mesh vertices stacked in layout order.
    pub fn vertices(&self) -> Tensor<f64> {
        let rows: Vec<f64> = self.meshes.iter().flat_map(|m| m.vertices.iter().flatten().copied()).collect();
        Tensor::new(&[rows.len() / 3, 3], rows).expect("n x 3")
    }

    pub fn vertices_camera(&self) -> Tensor<f64> {
        let o = self.palm_camera;
        let mut v = self.vertices();
        for r in v.data_mut().chunks_mut(3) {
            for k in 0..3 {
                r[k] += o[k];
            }
        }
        v
    }

    /// Box of each keypoint.
    pub fn keypoint_boxes(&self) -> Vec<BBox> {
        let mut out = Vec::with_capacity(self.layout.num_joints());
        for (part, b) in self.layout.parts.iter().zip(&self.boxes) {
            out.extend(std::iter::repeat_n(*b, part.joints.len()));
        }
        out
    }

    pub fn pose2d_points(&self) -> Vec<[f64; 2]> {
        self.pose2d.data().chunks(2).map(|c| [c[0], c[1]]).collect()
    }

    /// Checks layout sizes and that the 2D pose is the projection of the 3D
    /// pose within 1e-6 px.
    pub fn validate(&self) -> Result<(), DataError> {
        let k = self.layout.num_joints();
        if self.pose3d.shape() != [k, 3] || self.pose2d.shape() != [k, 2] {
            return Err(DataError::Invalid(format!(
                "pose shapes {:?} / {:?} for {k} keypoints",
                self.pose3d.shape(),
                self.pose2d.shape()
            )));
        }
        if self.vertices().rows() != self.layout.num_vertices() {
            return Err(DataError::Invalid("vertex count does not match the layout".into()));
        }
        for j in 0..k {
            let p = self.pose3d.row(j);
            let cam = add([p[0], p[1], p[2]], self.palm_camera);
            let uv = self
                .intrinsics
                .project(cam)
                .ok_or_else(|| DataError::Invalid(format!("keypoint {j} behind the camera")))?;
            let q = self.pose2d.row(j);
            if (uv[0] - q[0]).abs() > 1e-6 || (uv[1] - q[1]).abs() > 1e-6 {
                return Err(DataError::Invalid(format!("keypoint {j}: 2D pose {q:?} vs projection {uv:?}")));
            }
        }
        Ok(())
    }
}

fn random_unit(rng: &mut SplitMix64) -> [f64; 3] {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n = dot(v, v).sqrt();
        if n > 1e-9 {
            return scale(v, 1.0 / n);
        }
    }
}

/// Joint positions and bone transforms of a randomly curled hand.
fn articulate(t: &Templates, rng: &mut SplitMix64) -> (Vec<[f64; 3]>, Vec<Rigid>) {
    let j = &t.hand_joints;
    // palm faces -z
    let palm_normal = [0.0, 0.0, -1.0];
    let mut bones = vec![Rigid::IDENTITY; BONES];
    let mut joints = j.clone();
    for (f, chain) in FINGER_CHAINS.iter().enumerate() {
        let curl = rng.uniform(0.0, 1.0);
        let spread = rng.uniform(-0.15, 0.15);
        let max = if f == 0 { [0.5, 0.6, 0.6] } else { [1.0, 1.3, 0.8] };
        let dir = normalize(sub(j[chain[1]], j[chain[0]]));
        let n = normalize(sub(palm_normal, scale(dir, dot(palm_normal, dir))));
        let flex_axis = normalize(cross(dir, n));
        let mut acc = Rigid::about(axis_angle(n, spread), j[chain[0]]);
        for k in 0..3 {
            let angle = curl * max[k] * rng.uniform(0.8, 1.2);
            let local = Rigid::about(axis_angle(flex_axis, angle), j[chain[k]]);
            acc = acc.then_after(&local);
            bones[1 + 3 * f + k] = acc;
            joints[chain[k + 1]] = acc.apply(j[chain[k + 1]]);
        }
    }
    (joints, bones)
}

fn skinned(t: &Templates, bones: &[Rigid]) -> Vec<[f64; 3]> {
    t.hand
        .vertices
        .iter()
        .zip(&t.skin)
        .map(|(&v, w)| w.iter().fold([0.0; 3], |acc, &(b, x)| add(acc, scale(bones[b].apply(v), x))))
        .collect()
}

fn random_rotation(rng: &mut SplitMix64, max_angle: f64) -> Rot {
    let axis = random_unit(rng);
    axis_angle(axis, rng.uniform(-max_angle, max_angle))
}

struct Part {
    kind: PartKind,
    joints: Vec<[f64; 3]>,
    vertices: Vec<[f64; 3]>,
}

fn hand_part(t: &Templates, rng: &mut SplitMix64, kind: PartKind, place: &Rigid) -> Part {
    let (joints, bones) = articulate(t, rng);
    let verts = skinned(t, &bones);
    let mirror = |p: [f64; 3]| if kind == PartKind::LeftHand { [-p[0], p[1], p[2]] } else { p };
    Part {
        kind,
        joints: joints.iter().map(|&p| place.apply(mirror(p))).collect(),
        vertices: verts.iter().map(|&p| place.apply(mirror(p))).collect(),
    }
}

/// Sphere with a smooth radial bump field; corners are its local
/// axis-aligned box, corner `i` taking the max along axis `b` when bit `b`
/// of `i` is set.
fn object_part(t: &Templates, rng: &mut SplitMix64, place: &Rigid) -> Part {
    let radius = rng.uniform(30.0, 45.0);
    let waves: Vec<([f64; 3], f64, f64)> = (0..3)
        .map(|_| (scale(random_unit(rng), rng.uniform(1.0, 3.0)), rng.uniform(-0.08, 0.08), rng.uniform(0.0, 6.283)))
        .collect();
    let local: Vec<[f64; 3]> = t
        .object
        .vertices
        .iter()
        .map(|&u| {
            let r = radius * (1.0 + waves.iter().map(|(w, a, ph)| a * (dot(*w, u) + ph).sin()).sum::<f64>());
            scale(u, r)
        })
        .collect();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in &local {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let corners = (0..BOX_CORNERS)
        .map(|i| [0, 1, 2].map(|b| if (i >> b) & 1 == 1 { hi[b] } else { lo[b] }))
        .collect::<Vec<_>>();
    Part {
        kind: PartKind::Object,
        joints: corners.iter().map(|&p| place.apply(p)).collect(),
        vertices: local.iter().map(|&p| place.apply(p)).collect(),
    }
}

fn render_image(kind: ImageKind, k: &CameraIntrinsics, rng: &mut SplitMix64) -> Image<f64> {
    let (w, h) = (k.width, k.height);
    match kind {
        ImageKind::Ramp => Image::from_fn(w, h, |u, v| [u as f64 / w as f64, v as f64 / h as f64, 0.5]),
        ImageKind::Sinusoids => {
            let waves: Vec<[(f64, f64, f64, f64); 3]> = (0..3)
                .map(|_| {
                    [0; 3].map(|_| {
                        (
                            rng.uniform(0.05, 0.15),
                            rng.uniform(-2.0, 2.0) / w as f64,
                            rng.uniform(-2.0, 2.0) / h as f64,
                            rng.uniform(0.0, 6.283),
                        )
                    })
                })
                .collect();
            let tau = std::f64::consts::TAU;
            Image::from_fn(w, h, |u, v| {
                [0, 1, 2].map(|c| {
                    0.5 + waves[c]
                        .iter()
                        .map(|&(a, fu, fv, ph)| a * (tau * (fu * u as f64 + fv * v as f64) + ph).sin())
                        .sum::<f64>()
                })
            })
        }
    }
}

// every vertex and keypoint at least 4 px inside the image
fn visible(parts: &[Part], k: &CameraIntrinsics) -> bool {
    let margin = 4.0;
    parts.iter().all(|p| {
        p.joints.iter().chain(&p.vertices).all(|&q| match k.project(q) {
            Some(uv) => {
                uv[0] >= margin
                    && uv[1] >= margin
                    && uv[0] <= k.width as f64 - 1.0 - margin
                    && uv[1] <= k.height as f64 - 1.0 - margin
            }
            None => false,
        })
    })
}

fn place_scene(t: &Templates, hands: usize, rng: &mut SplitMix64) -> Vec<Part> {
    // wrist in camera space, then fingers roughly upward in the image
    let base = compose(&axis_angle([0.0, 0.0, 1.0], std::f64::consts::PI), &random_rotation(rng, 0.6));
    let wrist = [rng.uniform(-40.0, 40.0), rng.uniform(40.0, 90.0), rng.uniform(480.0, 620.0)];
    let right = Rigid { r: base, t: wrist };
    let mut parts = Vec::with_capacity(hands + 1);
    if hands == 2 {
        let r = compose(&axis_angle([0.0, 0.0, 1.0], std::f64::consts::PI), &random_rotation(rng, 0.6));
        let left_wrist = add(wrist, [-rng.uniform(130.0, 170.0), rng.uniform(-20.0, 20.0), rng.uniform(-30.0, 30.0)]);
        let left = Rigid { r, t: left_wrist };
        parts.push(hand_part(t, rng, PartKind::LeftHand, &left));
    }
    let right_hand = hand_part(t, rng, PartKind::RightHand, &right);
    // object in front of the palm center
    let palm_center = right.apply([0.0, 46.0, 0.0]);
    let toward_camera = apply(&base, [0.0, 0.0, -1.0]);
    let center = add(
        palm_center,
        add(scale(toward_camera, 55.0), [rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0)]),
    );
    let object_pose = Rigid {
        r: random_rotation(rng, std::f64::consts::PI),
        t: center,
    };
    parts.push(right_hand);
    parts.push(object_part(t, rng, &object_pose));
    parts
}

/// Sample `index` of the stream seeded by `seed`. Scenes with any point
/// outside the image are redrawn from the same per-sample stream.
pub fn synth_generate(t: &Templates, config: &SynthConfig, seed: u64, index: u64) -> Result<Sample, DataError> {
    config.validate()?;
    let mut rng = SplitMix64::derive(seed, index);
    let k = config.intrinsics;
    let mut parts = place_scene(t, config.hands, &mut rng);
    let mut tries = 1;
    while !visible(&parts, &k) {
        if tries == 1000 {
            return Err(DataError::Invalid("no visible scene in 1000 draws".into()));
        }
        parts = place_scene(t, config.hands, &mut rng);
        tries += 1;
    }
    let image = render_image(config.image, &k, &mut rng);
    let layout = PartLayout::new(config.hands);
    let palm_camera = parts[0].joints[PALM_INDEX];
    let mut pose3d = Vec::with_capacity(3 * layout.num_joints());
    let mut pose2d = Vec::with_capacity(2 * layout.num_joints());
    let mut boxes = Vec::with_capacity(parts.len());
    let mut meshes = Vec::with_capacity(parts.len());
    let faces = t.part_faces(&layout);
    for (p, f) in parts.iter().zip(faces) {
        debug_assert_eq!(p.joints.len(), if p.kind.is_hand() { HAND_JOINTS } else { BOX_CORNERS });
        let mut uv = Vec::with_capacity(p.joints.len());
        for &q in &p.joints {
            let px = k.project(q).expect("visible");
            pose3d.extend(sub(q, palm_camera));
            pose2d.extend(px);
            uv.push(px);
        }
        boxes.push(bbox_from_pose2d(&uv, BBOX_PADDING)?);
        meshes.push(Mesh::new(p.vertices.iter().map(|&q| sub(q, palm_camera)).collect(), f)?);
    }
    if config.hands == 1 {
        let shared = boxes[0].union(&boxes[1]);
        boxes = vec![shared; 2];
    }
    let n = layout.num_joints();
    let sample = Sample {
        index,
        layout,
        image,
        intrinsics: k,
        pose3d: Tensor::new(&[n, 3], pose3d)?,
        pose2d: Tensor::new(&[n, 2], pose2d)?,
        meshes,
        palm_camera,
        boxes,
    };
    sample.validate()?;
    Ok(sample)
}

/// Samples `start..start + count` of a seeded stream.
pub fn synth_stream<'a>(
    t: &'a Templates,
    config: &'a SynthConfig,
    seed: u64,
    start: u64,
    count: usize,
) -> impl Iterator<Item = Result<Sample, DataError>> + 'a {
    (start..start + count as u64).map(move |i| synth_generate(t, config, seed, i))
}
