//! Synthetic capture sequences: a cylindrical sleeve over a three-joint arm
//! with pose-driven wrinkles.
//!
//! The sleeve runs along `+x` from `SLEEVE_START` to `SLEEVE_END` with radius
//! `SLEEVE_RADIUS`. Joints are shoulder (root, origin), elbow (`x = 0.3`)
//! and wrist (`x = 0.6`).
//!
//! A scan is produced by skinning the template, subdividing the posed mesh
//! linearly, and displacing every scan vertex along its normal by
//!
//! ```text
//! d = A g(θ) w(x) r(x) s(φ),   g(θ) = |sin θ|^gain
//! ```
//!
//! where `θ` is the elbow angle, `w` a smooth window around the elbow, `r`
//! a train of `ridge_count` ridges inside the window and `s` a mild
//! variation around the circumference. The template vertices are the first
//! vertices of every subdivided scan, so their displaced positions (before
//! noise) are the exact ground-truth registration.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::f64::consts::{PI, TAU};
use std::path::Path;

use nalgebra::{Point3, UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_index_list;
use crate::mesh::{compute_vertex_normals, save_obj, Mesh, UvLayout};
use crate::pipeline::{FrameEntry, Manifest};
use crate::skinning::{skin, Joint, Pose, PoseSequence, Skeleton, SkinWeights};

pub const SLEEVE_START: f64 = 0.02;
pub const SLEEVE_END: f64 = 0.55;
pub const SLEEVE_RADIUS: f64 = 0.06;
pub const ELBOW_X: f64 = 0.3;
pub const JOINT_NAMES: [&str; 3] = ["shoulder", "elbow", "wrist"];
const SEGMENTS: usize = 32;
/// Width of the nearest-bone weight falloff (metres).
const WEIGHT_FALLOFF: f64 = 0.03;
/// Rest-space regions (along x, around) that may each receive a hole.
const HOLE_REGIONS: (usize, usize) = (8, 4);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WrinkleConfig {
    pub ridge_count: usize,
    /// Peak displacement (metres).
    pub amplitude: f64,
    /// Exponent of `|sin θ|` gating the amplitude by the elbow angle.
    pub angular_gain: f64,
    /// Extent of the wrinkled band centred on the elbow (metres).
    pub band_width: f64,
}

impl Default for WrinkleConfig {
    fn default() -> Self {
        WrinkleConfig {
            ridge_count: 5,
            amplitude: 0.008,
            angular_gain: 2.0,
            band_width: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub elbow_max_degrees: f64,
    pub shoulder_swing_degrees: f64,
    pub wrist_twist_degrees: f64,
    /// Frames per elbow flexion cycle.
    pub period_frames: f64,
    /// Amplitude of the root sway (metres).
    pub root_sway: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            elbow_max_degrees: 100.0,
            shoulder_swing_degrees: 20.0,
            wrist_twist_degrees: 15.0,
            period_frames: 50.0,
            root_sway: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub frames: usize,
    pub frame_rate: f64,
    /// Approximate template vertex count.
    pub template_vertices: usize,
    /// Scan vertex density relative to the template; a power of 4.
    pub scan_multiplier: usize,
    pub wrinkles: WrinkleConfig,
    pub motion: MotionConfig,
    /// Standard deviation of Gaussian scan noise per coordinate (metres).
    pub noise: f64,
    pub hole_probability: f64,
    /// Geodesic radius of punched holes (metres).
    pub hole_radius: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 100,
            frame_rate: 60.0,
            template_vertices: 2048,
            scan_multiplier: 4,
            wrinkles: WrinkleConfig::default(),
            motion: MotionConfig::default(),
            noise: 0.0,
            hole_probability: 0.0,
            hole_radius: 0.02,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.frames == 0 {
            return bad("synth: frames must be positive".into());
        }
        if !(self.frame_rate > 0.0) {
            return bad("synth: frame_rate must be positive".into());
        }
        if self.template_vertices < 4 * SEGMENTS {
            return bad(format!("synth: template_vertices must be at least {}", 4 * SEGMENTS));
        }
        if self.subdivision_levels().is_none() {
            return bad(format!(
                "synth: scan_multiplier must be a power of 4 and at least 4, got {}",
                self.scan_multiplier
            ));
        }
        let w = &self.wrinkles;
        if !(w.amplitude >= 0.0) || !(w.angular_gain >= 0.0) || !(w.band_width > 0.0) {
            return bad("synth: wrinkle amplitude and gain must be non-negative, band width positive".into());
        }
        if !(self.noise >= 0.0) || !(self.hole_radius >= 0.0) {
            return bad("synth: noise and hole radius must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.hole_probability) {
            return bad("synth: hole_probability must lie in [0, 1]".into());
        }
        if !(self.motion.period_frames > 0.0) {
            return bad("synth: motion period must be positive".into());
        }
        Ok(())
    }

    fn subdivision_levels(&self) -> Option<usize> {
        let mut m = self.scan_multiplier;
        let mut levels = 0;
        while m > 1 && m % 4 == 0 {
            m /= 4;
            levels += 1;
        }
        (m == 1 && levels >= 1).then_some(levels)
    }

    fn rings(&self) -> usize {
        (self.template_vertices / SEGMENTS).max(4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub scan: Mesh,
    pub scan_boundary: Vec<Point3<f64>>,
    /// Posed template with wrinkles, vertex-for-vertex.
    pub ground_truth: Mesh,
    pub elbow_angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub template: Mesh,
    pub weights: SkinWeights,
    pub poses: PoseSequence,
    pub template_boundary: Vec<usize>,
    pub frames: Vec<SynthFrame>,
}

pub fn skeleton() -> Skeleton {
    Skeleton::new(vec![
        Joint {
            name: JOINT_NAMES[0].into(),
            parent: None,
            offset: [0.0, 0.0, 0.0],
        },
        Joint {
            name: JOINT_NAMES[1].into(),
            parent: Some(0),
            offset: [ELBOW_X, 0.0, 0.0],
        },
        Joint {
            name: JOINT_NAMES[2].into(),
            parent: Some(1),
            offset: [0.3, 0.0, 0.0],
        },
    ])
    .expect("static skeleton is valid")
}

/// Open cylinder with `rings` vertex rings of `SEGMENTS` vertices and an
/// unwrapped UV layout (`u` around, `v` along the sleeve).
pub fn sleeve_template(rings: usize) -> Mesh {
    let mut vertices = Vec::with_capacity(rings * SEGMENTS);
    for i in 0..rings {
        let x = SLEEVE_START + (SLEEVE_END - SLEEVE_START) * i as f64 / (rings - 1) as f64;
        for j in 0..SEGMENTS {
            let phi = TAU * j as f64 / SEGMENTS as f64;
            vertices.push(Point3::new(x, SLEEVE_RADIUS * phi.cos(), SLEEVE_RADIUS * phi.sin()));
        }
    }
    let mut coords = Vec::with_capacity(rings * (SEGMENTS + 1));
    for i in 0..rings {
        for j in 0..=SEGMENTS {
            coords.push(Vector2::new(j as f64 / SEGMENTS as f64, i as f64 / (rings - 1) as f64));
        }
    }
    let mut faces = Vec::new();
    let mut uv_faces = Vec::new();
    for i in 0..rings - 1 {
        for j in 0..SEGMENTS {
            let v = |r: usize, s: usize| r * SEGMENTS + s % SEGMENTS;
            let t = |r: usize, s: usize| r * (SEGMENTS + 1) + s;
            // Counter-clockwise in UV and outward-facing in 3D.
            faces.push([v(i, j), v(i + 1, j + 1), v(i + 1, j)]);
            uv_faces.push([t(i, j), t(i + 1, j + 1), t(i + 1, j)]);
            faces.push([v(i, j), v(i, j + 1), v(i + 1, j + 1)]);
            uv_faces.push([t(i, j), t(i, j + 1), t(i + 1, j + 1)]);
        }
    }
    let uv = UvLayout {
        coords,
        faces: uv_faces,
    };
    Mesh::new(vertices, faces, Some(uv), None).expect("sleeve is valid")
}

/// Indices of the first and last vertex rings.
pub fn sleeve_boundary(template: &Mesh) -> Vec<usize> {
    let n = template.vertex_count();
    (0..SEGMENTS).chain(n - SEGMENTS..n).collect()
}

fn segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Nearest-bone weights: joint `j` owns the bone from its rest position to
/// its child (the wrist owns a short stub), and weights fall off as
/// `exp(-(d_j² - d_min²) / falloff²)`.
pub fn sleeve_weights(template: &Mesh, skeleton: &Skeleton) -> Result<SkinWeights> {
    let rest = skeleton.rest_positions();
    let bones = [
        (rest[0], rest[1]),
        (rest[1], rest[2]),
        (rest[2], rest[2] + Vector3::new(0.1, 0.0, 0.0)),
    ];
    let influences = template
        .vertices()
        .iter()
        .map(|p| {
            let d: Vec<f64> = bones.iter().map(|(a, b)| segment_distance(p, a, b)).collect();
            let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
            let raw: Vec<f64> = d
                .iter()
                .map(|&x| (-(x * x - dmin * dmin) / (WEIGHT_FALLOFF * WEIGHT_FALLOFF)).exp())
                .collect();
            let kept: Vec<(usize, f64)> = raw.iter().copied().enumerate().filter(|&(_, w)| w > 1e-6).collect();
            let total: f64 = kept.iter().map(|&(_, w)| w).sum();
            kept.into_iter().map(|(j, w)| (j, w / total)).collect()
        })
        .collect();
    SkinWeights::new(influences)
}

/// Arm motion: periodic elbow flexion, shoulder swing, wrist twist and root
/// sway, with seed-dependent phases.
pub fn arm_motion(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let m = &config.motion;
    let phase_shoulder = rng.random_range(0.0..TAU);
    let phase_wrist = rng.random_range(0.0..TAU);
    let phase_sway = rng.random_range(0.0..TAU);
    let sway_dir = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )
    .try_normalize(1e-9)
    .unwrap_or(Vector3::y());
    let omega = TAU / m.period_frames;
    (0..config.frames)
        .map(|t| {
            let t = t as f64;
            let elbow = m.elbow_max_degrees.to_radians() * 0.5 * (1.0 - (omega * t).cos());
            let swing = m.shoulder_swing_degrees.to_radians() * (0.61 * omega * t + phase_shoulder).sin();
            let twist = m.wrist_twist_degrees.to_radians() * (1.37 * omega * t + phase_wrist).sin();
            Pose {
                rotations: vec![
                    UnitQuaternion::from_euler_angles(0.0, 0.5 * swing, swing),
                    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), elbow),
                    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), twist),
                ],
                root_translation: sway_dir * m.root_sway * (0.37 * omega * t + phase_sway).sin(),
                bone_scales: None,
            }
        })
        .collect()
}

/// Elbow flexion angle of a pose, in radians.
pub fn elbow_angle(pose: &Pose) -> f64 {
    pose.rotations[1].angle()
}

/// Wrinkle displacement at a rest-space point for a given elbow angle.
pub fn wrinkle_displacement(w: &WrinkleConfig, rest: &Point3<f64>, elbow: f64) -> f64 {
    let s = (rest.x - ELBOW_X) / w.band_width;
    if s.abs() >= 0.5 || w.amplitude == 0.0 {
        return 0.0;
    }
    let gate = elbow.sin().abs().powf(w.angular_gain);
    let window = (PI * s).cos().powi(2);
    let ridges = 0.5 * (1.0 - (TAU * w.ridge_count as f64 * (s + 0.5)).cos());
    // Folds are deeper on the inner side of the bend (+y).
    let phi = rest.z.atan2(rest.y);
    let around = 0.75 + 0.25 * phi.cos();
    w.amplitude * gate * window * ridges * around
}

/// Linear subdivision: every triangle becomes four. Original vertices keep
/// their indices; edge midpoints follow in order of first appearance.
pub fn subdivide(vertices: &[Point3<f64>], faces: &[[usize; 3]]) -> (Vec<Point3<f64>>, Vec<[usize; 3]>) {
    let mut out = vertices.to_vec();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut new_faces = Vec::with_capacity(4 * faces.len());
    for &[a, b, c] in faces {
        let mut mid = |i: usize, j: usize| {
            *midpoints.entry((i.min(j), i.max(j))).or_insert_with(|| {
                out.push(Point3::from((vertices[i].coords + vertices[j].coords) / 2.0));
                out.len() - 1
            })
        };
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        new_faces.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    (out, new_faces)
}

#[derive(PartialEq)]
struct Visit(f64, usize);

impl Eq for Visit {}

impl Ord for Visit {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Visit {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Vertices within edge-path distance `radius` of `center`.
fn geodesic_disk(vertices: &[Point3<f64>], adjacency: &[Vec<usize>], center: usize, radius: f64) -> Vec<bool> {
    let mut dist = vec![f64::INFINITY; vertices.len()];
    let mut heap = BinaryHeap::new();
    dist[center] = 0.0;
    heap.push(Visit(0.0, center));
    while let Some(Visit(d, v)) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &u in &adjacency[v] {
            let nd = d + (vertices[u] - vertices[v]).norm();
            if nd <= radius && nd < dist[u] {
                dist[u] = nd;
                heap.push(Visit(nd, u));
            }
        }
    }
    dist.iter().map(|d| d.is_finite()).collect()
}

fn adjacency(count: usize, faces: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); count];
    for &[a, b, c] in faces {
        for (i, j) in [(a, b), (b, c), (c, a)] {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Generates a full sequence. The same configuration always produces the
/// same output.
pub fn generate(config: &SynthConfig) -> Result<SynthSequence> {
    config.validate()?;
    let levels = config.subdivision_levels().expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let skeleton = skeleton();
    let template = sleeve_template(config.rings());
    let weights = sleeve_weights(&template, &skeleton)?;
    let template_boundary = sleeve_boundary(&template);
    let poses = arm_motion(config, &mut rng);

    // Rest-space subdivision, shared by all frames; it carries the wrinkle
    // parameterization of every scan vertex.
    let mut rest = template.vertices().to_vec();
    let mut faces = template.faces().to_vec();
    for _ in 0..levels {
        (rest, faces) = subdivide(&rest, &faces);
    }
    let adj = adjacency(rest.len(), &faces);
    // Scan boundary points are reported at the template's boundary sampling:
    // with a denser scan boundary the farthest-point pairing would pin every
    // template boundary vertex half an edge away from the rim.
    let boundary_rest = template_boundary.clone();
    let noise = Normal::new(0.0, config.noise).map_err(|e| Error::Config(format!("synth: noise: {e}")))?;
    let v = template.vertex_count();

    let mut frames = Vec::with_capacity(config.frames);
    for pose in &poses {
        let posed = skin(&template, &weights, &skeleton, pose)?;
        let mut scan_points = posed.vertices().to_vec();
        let mut scan_faces = posed.faces().to_vec();
        for _ in 0..levels {
            (scan_points, scan_faces) = subdivide(&scan_points, &scan_faces);
        }
        let normals = compute_vertex_normals(&Mesh::new(scan_points.clone(), scan_faces.clone(), None, None)?);
        let elbow = elbow_angle(pose);
        for (i, p) in scan_points.iter_mut().enumerate() {
            let d = wrinkle_displacement(&config.wrinkles, &rest[i], elbow);
            if d != 0.0 {
                *p += normals[i].unwrap_or_else(Vector3::zeros) * d;
            }
        }
        let ground_truth = template.with_positions(scan_points[..v].to_vec())?;
        if config.noise > 0.0 {
            for p in scan_points.iter_mut() {
                *p += Vector3::from_fn(|_, _| noise.sample(&mut rng));
            }
        }
        let mut removed = vec![false; scan_points.len()];
        if config.hole_probability > 0.0 && config.hole_radius > 0.0 {
            let (nx, na) = HOLE_REGIONS;
            for rx in 0..nx {
                for ra in 0..na {
                    if !rng.random_bool(config.hole_probability) {
                        continue;
                    }
                    let x = SLEEVE_START
                        + (SLEEVE_END - SLEEVE_START) * (rx as f64 + rng.random_range(0.0..1.0)) / nx as f64;
                    let phi = TAU * (ra as f64 + rng.random_range(0.0..1.0)) / na as f64;
                    let target = Point3::new(x, SLEEVE_RADIUS * phi.cos(), SLEEVE_RADIUS * phi.sin());
                    let center = (0..rest.len())
                        .min_by(|&a, &b| {
                            (rest[a] - target)
                                .norm_squared()
                                .total_cmp(&(rest[b] - target).norm_squared())
                        })
                        .expect("scan has vertices");
                    for (r, inside) in
                        removed
                            .iter_mut()
                            .zip(geodesic_disk(&scan_points, &adj, center, config.hole_radius))
                    {
                        *r |= inside;
                    }
                }
            }
        }
        let keep: Vec<bool> = scan_faces.iter().map(|f| f.iter().all(|&i| !removed[i])).collect();
        let full = Mesh::new(scan_points, scan_faces, None, None)?;
        let (scan, remap) = full.retain_faces(&keep)?;
        let scan_boundary = boundary_rest
            .iter()
            .filter_map(|&i| remap[i].map(|j| scan.vertices()[j]))
            .collect();
        frames.push(SynthFrame {
            scan,
            scan_boundary,
            ground_truth,
            elbow_angle: elbow,
        });
    }

    Ok(SynthSequence {
        template,
        weights,
        poses: PoseSequence {
            frame_rate: config.frame_rate,
            skeleton,
            frames: poses,
        },
        template_boundary,
        frames,
    })
}

impl SynthSequence {
    /// Writes every artifact under `dir` and returns the manifest (also
    /// written as `dir/manifest.json`).
    pub fn write(&self, dir: &Path) -> Result<Manifest> {
        save_obj(&self.template, dir.join("template.obj"))?;
        self.weights.save(&dir.join("skin_weights.json"))?;
        self.poses.save(&dir.join("poses.json"))?;
        write_index_list(&dir.join("template_boundary.txt"), &self.template_boundary)?;
        let mut entries = Vec::with_capacity(self.frames.len());
        for (t, frame) in self.frames.iter().enumerate() {
            let entry = FrameEntry {
                scan: format!("scans/scan_{t:04}.obj").into(),
                scan_boundary: Some(format!("scans/boundary_{t:04}.obj").into()),
                ground_truth: Some(format!("ground_truth/frame_{t:04}.obj").into()),
            };
            save_obj(&frame.scan, dir.join(&entry.scan))?;
            save_obj(
                &Mesh::point_cloud(frame.scan_boundary.clone()),
                dir.join(entry.scan_boundary.as_ref().expect("set above")),
            )?;
            save_obj(
                &frame.ground_truth,
                dir.join(entry.ground_truth.as_ref().expect("set above")),
            )?;
            entries.push(entry);
        }
        let manifest = Manifest {
            template: "template.obj".into(),
            skin_weights: "skin_weights.json".into(),
            poses: "poses.json".into(),
            template_boundary: Some("template_boundary.txt".into()),
            frames: entries,
        };
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}
