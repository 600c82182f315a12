//! Acceptance suite: one line per criterion, `PASS` or `FAIL`, with the
//! measured value. Exits non-zero if any criterion fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use foldkit::mesh::{compute_vertex_normals, Mesh, UvLayout};
use foldkit::normalmaps::{
    angle_degrees, bake_hr, bake_lr, encode_rgb, temporal_loss, to_global, to_tangent, Frame, NormalMap, NO_DATA_RGB,
};
use foldkit::pipeline::{
    run_bake, run_eval_temporal, run_fit_subspace, run_register, run_regress, run_synth, PipelineConfig, RegressModes,
    Sequence, BAKE_DIR, REGISTERED_DIR, SUBSPACE_DIR,
};
use foldkit::registration::{
    energy_gradients, evaluate_energy, match_boundary, register, BoundaryMatch, BoundaryPair, BoundarySets,
    Correspondence, DeformationGraph, RegistrationConfig,
};
use foldkit::regression::{build_control_sequence, fit_linear, ControlLayout, ControlSequence, LinearShapeRegressor};
use foldkit::skinning::{skin, unskin, Pose, SkinWeights};
use foldkit::subspace::{restrict_offsets, SubspaceModel};
use foldkit::synth::{generate, skeleton, sleeve_boundary, sleeve_template, sleeve_weights, SynthConfig};
use nalgebra::{DMatrix, DVector, Point3, Rotation3, SymmetricEigen, UnitQuaternion, Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rms(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    (a.iter().zip(b).map(|(p, q)| (p - q).norm_squared()).sum::<f64>() / a.len() as f64).sqrt()
}

fn random_point(rng: &mut ChaCha8Rng, scale: f64) -> Point3<f64> {
    Point3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

fn non_increasing(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0])
}

/// Grid of `n x n` quads over `[0,1]^2` with `uv = (x, y)`; `z = h(x, y)`.
fn height_field(n: usize, h: impl Fn(f64, f64) -> f64) -> Mesh {
    let mut v = Vec::new();
    let mut uv = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let (x, y) = (i as f64 / n as f64, j as f64 / n as f64);
            v.push(Point3::new(x, y, h(x, y)));
            uv.push(Vector2::new(x, y));
        }
    }
    let mut f = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let a = j * (n + 1) + i;
            f.push([a, a + 1, a + n + 2]);
            f.push([a, a + n + 2, a + n + 1]);
        }
    }
    Mesh::new(v, f.clone(), Some(UvLayout { coords: uv, faces: f }), None).unwrap()
}

fn byte_distance(a: [u8; 3], b: [u8; 3]) -> u8 {
    (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap()
}

// ------------------------------------------------------------ boundary

fn boundary_oracle(template: &[Point3<f64>], scan: &[Point3<f64>]) -> Vec<BoundaryMatch> {
    let mut out = Vec::new();
    for t in 0..template.len() {
        let mut best: Option<(usize, f64)> = None;
        for (s, sp) in scan.iter().enumerate() {
            let mut nearest = 0;
            for t2 in 1..template.len() {
                if (sp - template[t2]).norm() < (sp - template[nearest]).norm() {
                    nearest = t2;
                }
            }
            if nearest == t {
                let d = (sp - template[t]).norm();
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((s, d));
                }
            }
        }
        if let Some((s, _)) = best {
            out.push(BoundaryMatch { template: t, scan: s });
        }
    }
    out
}

fn boundary_matcher() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut elapsed = 0.0;
    let mut pairs = 0;
    for instance in 0..100 {
        let (nt, ns) = (rng.random_range(1..=200), rng.random_range(1..=200));
        // Every fourth instance lives on a coarse lattice, which forces
        // distance ties.
        let lattice = instance % 4 == 0;
        let point = |rng: &mut ChaCha8Rng| {
            if lattice {
                Point3::new(
                    rng.random_range(0..4) as f64,
                    rng.random_range(0..4) as f64,
                    rng.random_range(0..2) as f64,
                )
            } else {
                random_point(rng, 1.0)
            }
        };
        let template: Vec<_> = (0..nt).map(|_| point(&mut rng)).collect();
        let scan: Vec<_> = (0..ns).map(|_| point(&mut rng)).collect();
        let start = Instant::now();
        let got = match_boundary(&template, &scan);
        elapsed += start.elapsed().as_secs_f64();
        let want = boundary_oracle(&template, &scan);
        ensure!(
            got == want,
            "instance {instance} ({nt} x {ns}) differs from the brute-force pairing"
        );
        pairs += got.len();
    }
    ensure!(elapsed < 1.0, "matcher took {elapsed:.3} s");
    Ok(format!(
        "100 instances identical ({pairs} pairs), matcher time {elapsed:.4} s"
    ))
}

// -------------------------------------------------------- registration

fn registration_self_test() -> Outcome {
    let template = sleeve_template(64);
    let boundary = sleeve_boundary(&template);
    let config = RegistrationConfig::default();
    let sets = |points: &[Point3<f64>]| BoundarySets {
        template: boundary.clone(),
        scan: boundary.iter().map(|&i| points[i]).collect(),
    };

    let identity =
        register(&template, &template, &sets(template.vertices()), None, &config).map_err(|e| e.to_string())?;
    let identity_rms = rms(identity.mesh.vertices(), template.vertices());
    ensure!(
        identity.iterations <= 2,
        "identity target took {} iterations",
        identity.iterations
    );
    ensure!(identity_rms < 1e-6, "identity target rms {identity_rms:e} m");
    ensure!(non_increasing(&identity.energy_history), "identity energy increased");

    // Half a sine period along the sleeve, 2 cm sideways at the middle.
    let (x0, x1) = (foldkit::synth::SLEEVE_START, foldkit::synth::SLEEVE_END);
    let warped: Vec<Point3<f64>> = template
        .vertices()
        .iter()
        .map(|p| p + Vector3::y() * 0.02 * (std::f64::consts::PI * (p.x - x0) / (x1 - x0)).sin())
        .collect();
    let scan = template.with_positions(warped.clone()).map_err(|e| e.to_string())?;
    let warp = register(&template, &scan, &sets(&warped), None, &config).map_err(|e| e.to_string())?;
    let warp_rms = rms(warp.mesh.vertices(), &warped);
    ensure!(warp.iterations <= 30, "warp took {} iterations", warp.iterations);
    ensure!(warp_rms < 2e-3, "warp rms {:.3} mm", warp_rms * 1e3);
    ensure!(non_increasing(&warp.energy_history), "warp energy increased");
    ensure!(
        warp.energy.total <= warp.initial_energy.total,
        "final energy above initial"
    );
    Ok(format!(
        "identity: {} iterations, rms {identity_rms:.2e} m; 2 cm warp: {} iterations, rms {:.3} mm; energies non-increasing",
        identity.iterations,
        warp.iterations,
        warp_rms * 1e3
    ))
}

fn energy_jacobians() -> Outcome {
    let template = sleeve_template(12);
    let boundary = sleeve_boundary(&template);
    let config = RegistrationConfig::default();
    let h = 1e-6;
    let mut worst = [0.0f64; 4];
    for state in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + state);
        let mut graph = DeformationGraph::build(&template, 0.1).map_err(|e| e.to_string())?;
        let params: Vec<f64> = graph
            .params()
            .iter()
            .map(|p| p + rng.random_range(-0.05..0.05))
            .collect();
        graph.set_params(&params).map_err(|e| e.to_string())?;
        let correspondences: Vec<Correspondence> = (0..template.vertex_count())
            .map(|v| Correspondence {
                vertex: v,
                target: template.vertices()[v] + random_point(&mut rng, 0.01).coords,
                normal: (v % 3 != 0).then(|| random_point(&mut rng, 1.0).coords.normalize()),
            })
            .collect();
        let pairs: Vec<BoundaryPair> = boundary
            .iter()
            .map(|&v| BoundaryPair {
                vertex: v,
                target: template.vertices()[v] + random_point(&mut rng, 0.01).coords,
            })
            .collect();
        let analytic =
            energy_gradients(&graph, &template, &correspondences, &pairs, &config).map_err(|e| e.to_string())?;
        let analytic = [analytic.data, analytic.rigid, analytic.smooth, analytic.bound];
        let mut numeric = vec![vec![0.0; params.len()]; 4];
        let mut probe = graph.clone();
        let mut terms_at = |p: &[f64]| {
            probe.set_params(p).unwrap();
            let e = evaluate_energy(&probe, &template, &correspondences, &pairs, &config).unwrap();
            [e.data, e.rigid, e.smooth, e.bound]
        };
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] = params[i] + h;
            let plus = terms_at(&p);
            p[i] = params[i] - h;
            let minus = terms_at(&p);
            for term in 0..4 {
                numeric[term][i] = (plus[term] - minus[term]) / (2.0 * h);
            }
        }
        for term in 0..4 {
            let diff: f64 = analytic[term]
                .iter()
                .zip(&numeric[term])
                .map(|(a, n)| (a - n).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = numeric[term].iter().map(|n| n * n).sum::<f64>().sqrt();
            ensure!(norm > 0.0, "term {term} has zero gradient in state {state}");
            worst[term] = worst[term].max(diff / norm);
        }
    }
    let limit = 1e-4;
    ensure!(
        worst.iter().all(|w| *w < limit),
        "relative errors (data, rigid, smooth, bound) {worst:?}"
    );
    Ok(format!(
        "20 states; worst relative error data {:.1e}, rigid {:.1e}, smooth {:.1e}, bound {:.1e}",
        worst[0], worst[1], worst[2], worst[3]
    ))
}

// ------------------------------------------------------------ subspace

fn random_frames(rng: &mut ChaCha8Rng, v: usize, n: usize) -> Vec<Mesh> {
    let base: Vec<Point3<f64>> = (0..v).map(|_| random_point(rng, 0.3)).collect();
    let modes: Vec<Vec<Vector3<f64>>> = (0..5)
        .map(|_| (0..v).map(|_| random_point(rng, 0.02).coords).collect())
        .collect();
    (0..n)
        .map(|_| {
            let weights: Vec<f64> = (0..5).map(|m| rng.random_range(-1.0..1.0) / (m + 1) as f64).collect();
            let points = (0..v)
                .map(|i| {
                    let mut p = base[i] + random_point(rng, 1e-3).coords;
                    for (m, w) in weights.iter().enumerate() {
                        p += modes[m][i] * *w;
                    }
                    p
                })
                .collect();
            Mesh::point_cloud(points)
        })
        .collect()
}

fn subspace_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let frames = random_frames(&mut rng, 500, 50);
    let model = SubspaceModel::fit(&frames, 50).map_err(|e| e.to_string())?;
    let mut max_error = 0.0f64;
    for f in &frames {
        max_error = max_error.max(model.reconstruction_error(f).map_err(|e| e.to_string())?.max);
    }
    ensure!(max_error <= 1e-5, "k = n reconstruction error {max_error:e} m");

    let mut previous = f64::INFINITY;
    for k in 1..=50 {
        let m = model.truncated(k).map_err(|e| e.to_string())?;
        let mut total = 0.0;
        for f in &frames {
            total += m.reconstruction_error(f).map_err(|e| e.to_string())?.rms.powi(2);
        }
        ensure!(total <= previous, "error grows from k = {} to k = {k}", k - 1);
        previous = total;
    }

    let v = model.basis();
    let gram = v.transpose() * v - DMatrix::identity(v.ncols(), v.ncols());
    let ortho = gram.amax();
    ensure!(ortho < 1e-8, "orthonormality residual {ortho:e}");

    // Dense eigensolver oracle on the centered scatter matrix.
    let small = random_frames(&mut rng, 50, 20);
    let k = 5;
    let m = SubspaceModel::fit(&small, k).map_err(|e| e.to_string())?;
    let mut data = DMatrix::<f64>::zeros(150, 20);
    for (j, f) in small.iter().enumerate() {
        data.set_column(j, &DVector::from_vec(f.flat_positions()));
    }
    let mean = data.column_mean();
    for mut c in data.column_iter_mut() {
        c -= &mean;
    }
    let eig = SymmetricEigen::new(&data * data.transpose());
    let mut order: Vec<usize> = (0..150).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let u = eig.eigenvectors.select_columns(&order[..k]);
    let projector_gap = (&u * u.transpose() - m.basis() * m.basis().transpose()).amax();
    let sigma_gap = (0..k)
        .map(|i| (m.singular_values()[i].powi(2) - eig.eigenvalues[order[i]]).abs() / eig.eigenvalues[order[0]])
        .fold(0.0, f64::max);
    ensure!(
        projector_gap < 1e-8 && sigma_gap < 1e-10,
        "eigen oracle: projector gap {projector_gap:e}, spectrum gap {sigma_gap:e}"
    );
    Ok(format!(
        "k = n max error {max_error:.1e} m; monotone in k; orthonormality {ortho:.1e}; eigen oracle projector gap {projector_gap:.1e}"
    ))
}

fn skinning_round_trip() -> Outcome {
    let s = skeleton();
    let template = sleeve_template(40);
    let weights = sleeve_weights(&template, &s).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let rotations = (0..s.joint_count())
            .map(|_| {
                let axis = nalgebra::Unit::new_normalize(random_point(&mut rng, 1.0).coords);
                UnitQuaternion::from_axis_angle(&axis, rng.random_range(-2.0..2.0))
            })
            .collect();
        let pose = Pose {
            rotations,
            root_translation: random_point(&mut rng, 0.5).coords,
            bone_scales: (i % 2 == 1).then(|| (0..s.joint_count()).map(|_| rng.random_range(0.8..1.2)).collect()),
        };
        let posed = skin(&template, &weights, &s, &pose).map_err(|e| e.to_string())?;
        let back = unskin(&posed, &weights, &s, &pose).map_err(|e| e.to_string())?;
        for (a, b) in back.vertices().iter().zip(template.vertices()) {
            worst = worst.max((a - b).norm());
        }
    }
    ensure!(worst <= 1e-6, "round trip error {worst:e} m");
    Ok(format!("100 random poses, max vertex error {worst:.1e} m"))
}

// ---------------------------------------------------------- regression

fn regression_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (d, m, k) = (12, 60, 7);
    let theta = DMatrix::from_fn(d, m, |_, _| rng.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(k, d, |_, _| rng.random_range(-2.0..2.0));
    let fit = fit_linear(&theta, &(&g * &theta)).map_err(|e| e.to_string())?;
    let planted = (&fit.f - &g).amax() / g.amax();
    ensure!(planted < 1e-8, "planted model error {planted:e}");

    let lambda = DMatrix::from_fn(k, m, |_, _| rng.random_range(-1.0..1.0));
    let fit = fit_linear(&theta, &lambda).map_err(|e| e.to_string())?;
    let residual = &lambda - &fit.f * &theta;
    let orthogonality = (&residual * theta.transpose()).amax() / (lambda.amax() * theta.amax() * m as f64);
    ensure!(orthogonality < 1e-8, "residual not orthogonal: {orthogonality:e}");

    // Pose-driven wrinkles: ground-truth shapes of a synthetic sequence,
    // every fifth frame held out.
    let config = SynthConfig {
        frames: 300,
        template_vertices: 1024,
        seed: 5,
        ..SynthConfig::default()
    };
    let seq = generate(&config).map_err(|e| e.to_string())?;
    let poses = &seq.poses.frames;
    let s = &seq.poses.skeleton;
    let normalized = seq
        .frames
        .iter()
        .zip(poses)
        .map(|(f, p)| unskin(&f.ground_truth, &seq.weights, s, p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let holdout = |t: usize| (t + 1) % 5 == 0;
    let training: Vec<Mesh> = normalized
        .iter()
        .enumerate()
        .filter(|(t, _)| !holdout(*t))
        .map(|(_, m)| m.clone())
        .collect();
    let model = SubspaceModel::fit(&training, 40).map_err(|e| e.to_string())?;
    let coefficients = normalized
        .iter()
        .map(|m| model.project(m))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let layout = ControlLayout::new((0..s.joint_count()).collect(), 0, model.k()).map_err(|e| e.to_string())?;
    let controls = build_control_sequence(poses, &layout, None).map_err(|e| e.to_string())?;
    let train_cols: Vec<usize> = (0..controls.frames.len())
        .filter(|&c| !holdout(controls.frames[c]))
        .collect();
    let train = ControlSequence {
        layout: layout.clone(),
        frames: train_cols.iter().map(|&c| controls.frames[c]).collect(),
        vectors: controls.vectors.select_columns(&train_cols),
    };
    let mut targets = DMatrix::zeros(model.k(), train.frames.len());
    for (c, &t) in train.frames.iter().enumerate() {
        targets.set_column(c, &coefficients[t]);
    }
    let (regressor, _) = LinearShapeRegressor::fit(&train, &targets).map_err(|e| e.to_string())?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (c, &t) in controls.frames.iter().enumerate() {
        if !holdout(t) {
            continue;
        }
        let predicted = regressor
            .predict(&controls.vectors.column(c).into_owned())
            .map_err(|e| e.to_string())?;
        let mesh = model
            .reconstruct(&predicted, &poses[t], &seq.weights, s)
            .map_err(|e| e.to_string())?;
        for (a, b) in mesh.vertices().iter().zip(seq.frames[t].ground_truth.vertices()) {
            sum += (a - b).norm_squared();
            count += 1;
        }
    }
    let holdout_rms = (sum / count as f64).sqrt();
    ensure!(holdout_rms < 3e-3, "held-out vertex rms {:.3} mm", holdout_rms * 1e3);
    Ok(format!(
        "planted error {planted:.1e}; residual orthogonality {orthogonality:.1e}; 300-frame synth held-out rms {:.3} mm",
        holdout_rms * 1e3
    ))
}

// ------------------------------------------------------------- baking

fn lr_bake() -> Outcome {
    let quad = Mesh::new(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
            Point3::new(2.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
        Some(UvLayout {
            coords: vec![
                Vector2::new(0.0, 0.0),
                Vector2::new(1.0, 0.0),
                Vector2::new(1.0, 1.0),
                Vector2::new(0.0, 1.0),
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
        }),
        None,
    )
    .map_err(|e| e.to_string())?;
    let map = bake_lr(&quad, 64, 64).map_err(|e| e.to_string())?;
    ensure!(
        map.defined_count() == 64 * 64,
        "quad covers {} texels",
        map.defined_count()
    );
    let flat = map
        .texels()
        .iter()
        .flatten()
        .map(|n| (n - Vector3::z()).amax())
        .fold(0.0, f64::max);
    ensure!(flat < 1e-12, "planar quad deviates by {flat:e}");

    // Vertices placed exactly on texel centres.
    let w = 48;
    let h = |x: f64, y: f64| 0.2 * (3.0 * x).sin() * (2.0 * y).cos();
    let mut v = Vec::new();
    let mut uv = Vec::new();
    for j in 0..w {
        for i in 0..w {
            let (u, t) = ((i as f64 + 0.5) / w as f64, (j as f64 + 0.5) / w as f64);
            v.push(Point3::new(u, t, h(u, t)));
            uv.push(Vector2::new(u, t));
        }
    }
    let mut f = Vec::new();
    for j in 0..w - 1 {
        for i in 0..w - 1 {
            let a = j * w + i;
            f.push([a, a + 1, a + w + 1]);
            f.push([a, a + w + 1, a + w]);
        }
    }
    let mesh = Mesh::new(v, f.clone(), Some(UvLayout { coords: uv, faces: f }), None).map_err(|e| e.to_string())?;
    let map = bake_lr(&mesh, w, w).map_err(|e| e.to_string())?.quantized();
    let normals = compute_vertex_normals(&mesh);
    let mut worst = 0u8;
    for j in 0..w {
        for i in 0..w {
            let texel = map
                .get(i, w - 1 - j)
                .ok_or(format!("vertex texel ({i}, {j}) has no data"))?;
            worst = worst.max(byte_distance(
                encode_rgb(&texel),
                encode_rgb(&normals[j * w + i].unwrap()),
            ));
        }
    }
    ensure!(worst <= 1, "vertex texels differ from vertex normals by {worst} levels");

    let curved = height_field(24, |x, y| 0.15 * (4.0 * x).sin() + 0.1 * y * y);
    let rotation = Rotation3::from_euler_angles(0.4, -0.9, 1.3);
    let rotated = curved
        .with_positions(curved.vertices().iter().map(|p| rotation * p).collect())
        .map_err(|e| e.to_string())?;
    let a = bake_lr(&curved, 64, 64).map_err(|e| e.to_string())?;
    let b = bake_lr(&rotated, 64, 64).map_err(|e| e.to_string())?;
    let mut equivariance = 0.0f64;
    for (x, y) in a.texels().iter().zip(b.texels()) {
        match (x, y) {
            (Some(x), Some(y)) => equivariance = equivariance.max((rotation * x - y).amax()),
            (None, None) => {}
            _ => return Err("rotation changed texel coverage".into()),
        }
    }
    ensure!(equivariance < 1e-2, "rotation equivariance error {equivariance:e}");
    Ok(format!(
        "planar quad exact (dev {flat:.0e}); vertex texels within {worst} level; rotation equivariance {equivariance:.1e}"
    ))
}

fn hr_bake() -> Outcome {
    let curved = height_field(24, |x, y| 0.15 * (4.0 * x).sin() + 0.1 * y * y);
    let lr = bake_lr(&curved, 64, 64).map_err(|e| e.to_string())?;
    let hr = bake_hr(&curved, &curved, 64, 64, 0.02).map_err(|e| e.to_string())?;
    let mut self_worst = 0u8;
    for (a, b) in lr.texels().iter().zip(hr.texels()) {
        match (a, b) {
            (Some(a), Some(b)) => self_worst = self_worst.max(byte_distance(encode_rgb(a), encode_rgb(b))),
            (None, None) => {}
            _ => return Err("self-projection changed texel coverage".into()),
        }
    }
    ensure!(self_worst <= 1, "self-projection differs by {self_worst} levels");

    let (amplitude, wavelength) = (0.01, 0.25);
    let k = 2.0 * std::f64::consts::PI / wavelength;
    let analytic = |x: f64| Vector3::new(-amplitude * k * (k * x).cos(), 0.0, 1.0).normalize();
    let dense = height_field(256, |x, _| amplitude * (k * x).sin());
    let normals = dense.vertices().iter().map(|p| analytic(p.x)).collect();
    let scan = dense.with_normals(Some(normals)).map_err(|e| e.to_string())?;
    let plane = height_field(16, |_, _| 0.0);
    let map = bake_hr(&scan, &plane, 64, 64, 0.05).map_err(|e| e.to_string())?;
    let mut angle = 0.0f64;
    for y in 0..64 {
        for x in 0..64 {
            let n = map.get(x, y).ok_or("sinusoid texel without data")?;
            angle = angle.max(angle_degrees(&n, &analytic(map.texel_uv(x, y).x)));
        }
    }
    ensure!(angle < 5.0, "sinusoid normals off by {angle:.2} degrees");

    let flat = height_field(128, |_, _| 0.0);
    let centre = Point3::new(0.5, 0.5, 0.0);
    let keep: Vec<bool> = (0..flat.face_count())
        .map(|f| flat.triangle(f).iter().all(|p| (p - centre).norm() > 0.15))
        .collect();
    let (holed, _) = flat.retain_faces(&keep).map_err(|e| e.to_string())?;
    let map = bake_hr(&holed, &plane, 64, 64, 0.02).map_err(|e| e.to_string())?;
    let (rgb, mask) = map.encode(false);
    let (mut inside, mut outside) = (0, 0);
    for y in 0..64 {
        for x in 0..64 {
            let uv = map.texel_uv(x, y);
            let r = (Vector2::new(uv.x, uv.y) - Vector2::new(0.5, 0.5)).norm();
            let i = y * 64 + x;
            if r < 0.12 {
                ensure!(
                    map.get(x, y).is_none() && !mask[i],
                    "texel ({x}, {y}) inside the hole has data"
                );
                ensure!(
                    rgb[3 * i..3 * i + 3] == NO_DATA_RGB,
                    "hole texel not encoded as NO_DATA"
                );
                inside += 1;
            } else if r > 0.16 {
                ensure!(map.get(x, y).is_some(), "texel ({x}, {y}) outside the hole lacks data");
                outside += 1;
            }
        }
    }
    Ok(format!(
        "self-projection within {self_worst} level; sinusoid max angle {angle:.2} deg; {inside} hole texels NO_DATA, {outside} outside defined"
    ))
}

fn tangent_conversion() -> Outcome {
    let template = sleeve_template(32);
    let lr = bake_lr(&template, 128, 128).map_err(|e| e.to_string())?;
    let tangent = to_tangent(&lr, &template).map_err(|e| e.to_string())?;
    ensure!(
        tangent.defined_count() == lr.defined_count(),
        "tangent conversion dropped texels"
    );
    let up = encode_rgb(&Vector3::z());
    let worst = tangent
        .texels()
        .iter()
        .flatten()
        .map(|n| byte_distance(encode_rgb(n), up))
        .max()
        .unwrap_or(0);
    ensure!(worst <= 1, "self-bake differs from (0,0,1) by {worst} levels");

    let config = SynthConfig {
        frames: 2,
        template_vertices: 1024,
        ..SynthConfig::default()
    };
    let seq = generate(&config).map_err(|e| e.to_string())?;
    let frame = &seq.frames[1];
    let hr = bake_hr(&frame.scan, &frame.ground_truth, 128, 128, 0.02).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("tangent.png");
    to_tangent(&hr, &frame.ground_truth)
        .and_then(|t| t.save_png(&path, false))
        .map_err(|e| e.to_string())?;
    let loaded = NormalMap::load_png(&path, Frame::Tangent).map_err(|e| e.to_string())?;
    let back = to_global(&loaded, &frame.ground_truth).map_err(|e| e.to_string())?;
    let mut round_trip = 0.0f64;
    for (a, b) in hr.texels().iter().zip(back.texels()) {
        match (a, b) {
            (Some(a), Some(b)) => round_trip = round_trip.max((a - b).amax()),
            (None, None) => {}
            _ => return Err("round trip changed texel coverage".into()),
        }
    }
    ensure!(round_trip < 2e-2, "global -> tangent -> global error {round_trip:e}");
    Ok(format!(
        "self-bake within {worst} level of (0,0,1); 8-bit round trip max component error {round_trip:.1e}"
    ))
}

// --------------------------------------------------------- temporal loss

fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> NormalMap {
    let texels = (0..w * h)
        .map(|_| {
            (!rng.random_bool(0.15)).then(|| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(0.1..1.0),
                )
            })
        })
        .collect();
    NormalMap::from_texels(w, h, Frame::Global, texels).unwrap()
}

fn temporal_metric() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (gen, gt, prev) = (
            random_map(&mut rng, 16, 12),
            random_map(&mut rng, 16, 12),
            random_map(&mut rng, 16, 12),
        );
        let loss = temporal_loss(&gen, &gt, &prev).map_err(|e| e.to_string())?;
        let (mut data, mut defined) = (0.0, 0);
        let mut sums = [0.0; 3];
        for i in 0..gen.texels().len() {
            let (g, t, p) = (gen.texels()[i], gt.texels()[i], prev.texels()[i]);
            if let (Some(g), Some(t)) = (g, t) {
                data += (g.x - t.x).abs() + (g.y - t.y).abs() + (g.z - t.z).abs();
                defined += 1;
            }
            let (g, p) = (g.unwrap_or_default(), p.unwrap_or_default());
            sums[0] += g.x - p.x;
            sums[1] += g.y - p.y;
            sums[2] += g.z - p.z;
        }
        let l_temp = sums[0].abs() + sums[1].abs() + sums[2].abs();
        worst = worst
            .max((loss.l_data - data / defined as f64).abs())
            .max((loss.l_temp - l_temp).abs());
    }
    ensure!(worst <= 1e-12, "differs from scalar oracle by {worst:e}");

    let tilt = |s: f64| Some(Vector3::new(0.6 * s, 0.0, 0.8));
    let mut prev = NormalMap::from_texels(4, 4, Frame::Global, vec![Some(Vector3::z()); 16]).unwrap();
    prev.set(0, 0, tilt(-1.0));
    prev.set(3, 2, tilt(1.0));
    let mut gen = prev.clone();
    gen.set(0, 0, tilt(1.0));
    gen.set(3, 2, tilt(-1.0));
    let cancel = temporal_loss(&gen, &prev, &prev).map_err(|e| e.to_string())?;
    ensure!(
        cancel.l_temp == 0.0 && cancel.l_data > 0.0,
        "cancellation example gives l_temp {}",
        cancel.l_temp
    );

    for _ in 0..20 {
        let (gen, prev) = (random_map(&mut rng, 9, 7), random_map(&mut rng, 9, 7));
        let mut order: Vec<usize> = (0..63).collect();
        order.shuffle(&mut rng);
        let permute = |m: &NormalMap| {
            NormalMap::from_texels(9, 7, Frame::Global, order.iter().map(|&i| m.texels()[i]).collect()).unwrap()
        };
        let a = temporal_loss(&gen, &gen, &prev).map_err(|e| e.to_string())?;
        let b = temporal_loss(&permute(&gen), &permute(&gen), &permute(&prev)).map_err(|e| e.to_string())?;
        ensure!(
            a.l_temp == b.l_temp,
            "permutation changed l_temp: {} vs {}",
            a.l_temp,
            b.l_temp
        );
    }
    Ok(format!(
        "scalar oracle within {worst:.1e}; cancellation gives 0; permutation invariance exact on 20 pairs"
    ))
}

// ---------------------------------------------------------- retargeting

fn retargeting() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let frames = random_frames(&mut rng, 120, 12);
    let model = SubspaceModel::fit(&frames, 6).map_err(|e| e.to_string())?;
    let body: Vec<Vector3<f64>> = (0..300).map(|_| random_point(&mut rng, 0.05).coords).collect();
    let mapping: Vec<usize> = (0..120).map(|_| rng.random_range(0..300)).collect();
    let restricted = restrict_offsets(&body, &mapping).map_err(|e| e.to_string())?;
    let retargeted = model.retarget_mean(&restricted).map_err(|e| e.to_string())?;
    let s = skeleton();
    let weights = SkinWeights::new(vec![vec![(0, 1.0)]; 120]).map_err(|e| e.to_string())?;
    let pose = Pose::identity(s.joint_count());
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let lambda = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let a = retargeted
            .reconstruct(&lambda, &pose, &weights, &s)
            .map_err(|e| e.to_string())?;
        let b = model
            .reconstruct(&lambda, &pose, &weights, &s)
            .map_err(|e| e.to_string())?;
        for (i, (p, q)) in a.vertices().iter().zip(b.vertices()).enumerate() {
            worst = worst.max(((p - q) - body[mapping[i]]).amax());
        }
    }
    ensure!(worst <= 1e-12, "retargeted difference off by {worst:e}");
    Ok(format!("10 coefficient draws, max deviation from o'|_M {worst:.1e} m"))
}

// ----------------------------------------------------------- end to end

fn run_pipeline(root: &Path) -> Result<f64, String> {
    let start = Instant::now();
    let config = PipelineConfig::default();
    let data = root.join("data");
    let work = root.join("work");
    let e = |e: foldkit::Error| e.to_string();
    run_synth(&config.synth, &data).map_err(e)?;
    let seq = Sequence::open(&data.join("manifest.json")).map_err(e)?;
    let register = run_register(&seq, &config, 1, &work).map_err(e)?;
    if let Some(f) = register.frames.iter().find(|f| !f.monotone) {
        return Err(format!("frame {} energy increased", f.frame));
    }
    run_fit_subspace(&seq, &config, &work.join(REGISTERED_DIR), &work).map_err(e)?;
    run_regress(&seq, &config, RegressModes::ALL, None, &work).map_err(e)?;
    run_bake(&seq, &config, 1, &work.join(SUBSPACE_DIR).join("reconstructed"), &work).map_err(e)?;
    run_eval_temporal(
        &work.join(BAKE_DIR).join("lr"),
        &work.join(BAKE_DIR).join("hr"),
        Frame::Global,
        &work,
    )
    .map_err(e)?;
    Ok(start.elapsed().as_secs_f64())
}

fn files_below(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn end_to_end() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_pipeline(a.path())?;
    let second = run_pipeline(b.path())?;
    let files = files_below(a.path());
    ensure!(files == files_below(b.path()), "runs produced different file sets");
    for f in &files {
        let same = std::fs::read(a.path().join(f)).unwrap() == std::fs::read(b.path().join(f)).unwrap();
        ensure!(same, "{} differs between runs", f.display());
    }
    let limit = 600.0;
    ensure!(
        first < limit && second < limit,
        "runtimes {first:.0} s and {second:.0} s"
    );
    Ok(format!(
        "{} artifacts bit-identical across two runs; 100 frames, runtimes {first:.0} s and {second:.0} s",
        files.len()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("boundary matcher vs brute-force pairing", boundary_matcher),
        ("registration self-test and 2 cm warp", registration_self_test),
        ("energy gradients vs central differences", energy_jacobians),
        (
            "subspace round trip, monotonicity, orthonormality, eigen oracle",
            subspace_round_trip,
        ),
        ("skinning round trip", skinning_round_trip),
        (
            "regression planted model, orthogonality, held-out synth",
            regression_recovery,
        ),
        ("LR bake", lr_bake),
        ("HR bake", hr_bake),
        ("tangent-space conversion", tangent_conversion),
        ("temporal loss metric", temporal_metric),
        ("retargeting", retargeting),
        ("end-to-end determinism and runtime", end_to_end),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
