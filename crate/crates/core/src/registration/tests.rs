use super::*;
use nalgebra::{Rotation3, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lumpy closed surface: a UV sphere with an asymmetric radial bump, so no
/// rigid motion maps it onto itself.
fn lumpy_sphere(rings: usize, segments: usize) -> Mesh {
    let radius =
        |theta: f64, phi: f64| 0.1 * (1.0 + 0.25 * theta.cos().powi(3) + 0.1 * (2.0 * phi).sin() * theta.sin());
    let mut v = vec![Point3::new(0.0, 0.0, radius(0.0, 0.0))];
    for i in 1..rings {
        let theta = std::f64::consts::PI * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / segments as f64;
            let r = radius(theta, phi);
            v.push(Point3::new(
                r * theta.sin() * phi.cos(),
                r * theta.sin() * phi.sin(),
                r * theta.cos(),
            ));
        }
    }
    v.push(Point3::new(0.0, 0.0, -radius(std::f64::consts::PI, 0.0)));
    let south = v.len() - 1;
    let ring = |i: usize, j: usize| 1 + (i - 1) * segments + j % segments;
    let mut f = Vec::new();
    for j in 0..segments {
        f.push([0, ring(1, j), ring(1, j + 1)]);
        f.push([south, ring(rings - 1, j + 1), ring(rings - 1, j)]);
    }
    for i in 1..rings - 1 {
        for j in 0..segments {
            let (a, b, c, d) = (ring(i, j), ring(i, j + 1), ring(i + 1, j), ring(i + 1, j + 1));
            f.push([a, c, b]);
            f.push([b, c, d]);
        }
    }
    Mesh::new(v, f, None, None).unwrap()
}

fn transformed(mesh: &Mesh, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Mesh {
    mesh.with_positions(mesh.vertices().iter().map(f).collect()).unwrap()
}

fn random_problem(seed: u64) -> (Mesh, DeformationGraph, Vec<Correspondence>, Vec<BoundaryPair>) {
    let mesh = lumpy_sphere(8, 12);
    let mut graph = DeformationGraph::build(&mesh, 0.06).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: Vec<f64> = graph
        .params()
        .iter()
        .map(|p| p + rng.random_range(-0.05..0.05) * if *p == 1.0 { 1.0 } else { 0.2 })
        .collect();
    graph.set_params(&params).unwrap();
    let mut correspondences = Vec::new();
    for v in 0..mesh.vertex_count() {
        let offset = Vector3::new(
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
            rng.random_range(-0.01..0.01),
        );
        let normal = if v % 3 == 0 {
            None
        } else {
            Some(Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0).normalize())
        };
        correspondences.push(Correspondence {
            vertex: v,
            target: mesh.vertices()[v] + offset,
            normal,
        });
    }
    let boundary = (0..mesh.vertex_count())
        .step_by(7)
        .map(|v| BoundaryPair {
            vertex: v,
            target: mesh.vertices()[v] + Vector3::new(0.003, -0.002, 0.001),
        })
        .collect();
    (mesh, graph, correspondences, boundary)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let config = RegistrationConfig::default();
    let (mesh, graph, corr, bound) = random_problem(11);
    let grads = energy_gradients(&graph, &mesh, &corr, &bound, &config).unwrap();
    let params = graph.params();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..40 {
        let i = rng.random_range(0..params.len());
        let eval = |delta: f64| {
            let mut p = params.clone();
            p[i] += delta;
            let mut g = graph.clone();
            g.set_params(&p).unwrap();
            evaluate_energy(&g, &mesh, &corr, &bound, &config).unwrap()
        };
        let (plus, minus) = (eval(h), eval(-h));
        let checks = [
            ("data", (plus.data - minus.data) / (2.0 * h), grads.data[i]),
            ("rigid", (plus.rigid - minus.rigid) / (2.0 * h), grads.rigid[i]),
            ("smooth", (plus.smooth - minus.smooth) / (2.0 * h), grads.smooth[i]),
            ("bound", (plus.bound - minus.bound) / (2.0 * h), grads.bound[i]),
        ];
        for (name, fd, analytic) in checks {
            let rel = (fd - analytic).abs() / analytic.abs().max(1.0);
            assert!(rel < 1e-4, "{name} param {i}: fd {fd} analytic {analytic}");
        }
    }
}

#[test]
fn rigid_motion_has_zero_regularizer_energy() {
    let config = RegistrationConfig::default();
    let mesh = lumpy_sphere(8, 12);
    let mut graph = DeformationGraph::build_default(&mesh).unwrap();
    let rot = Rotation3::from_euler_angles(0.3, -0.2, 0.7);
    let shift = Vector3::new(0.1, -0.05, 0.02);
    let positions = graph.node_positions().to_vec();
    for (t, g) in graph.transforms_mut().iter_mut().zip(&positions) {
        t.affine = *rot.matrix();
        t.translation = rot * g.coords + shift - g.coords;
    }
    let e = evaluate_energy(&graph, &mesh, &[], &[], &config).unwrap();
    assert!(e.rigid < 1e-24 && e.smooth < 1e-20, "{e:?}");
    for (a, b) in mesh.vertices().iter().zip(graph.deform(mesh.vertices())) {
        assert!(((rot * a + shift) - b).norm() < 1e-12);
    }
}

#[test]
fn identical_scan_converges_immediately() {
    let mesh = lumpy_sphere(10, 16);
    let result = register(
        &mesh,
        &mesh,
        &BoundarySets::default(),
        None,
        &RegistrationConfig::default(),
    )
    .unwrap();
    assert!(result.iterations <= 2);
    assert!(result.energy.total < 1e-12);
    for (a, b) in mesh.vertices().iter().zip(result.mesh.vertices()) {
        assert!((a - b).norm() < 1e-9);
    }
}

#[test]
fn single_node_recovers_rigid_translation() {
    let template = lumpy_sphere(12, 20);
    let shift = Vector3::new(0.004, -0.003, 0.002);
    let scan = transformed(&template, |p| p + shift);
    let graph = DeformationGraph::single_node(&template, Point3::origin());
    let result = register(
        &template,
        &scan,
        &BoundarySets::default(),
        Some(graph),
        &RegistrationConfig::default(),
    )
    .unwrap();
    let t = result.graph.transforms()[0];
    assert!((t.translation - shift).norm() < 1e-6, "{:?}", t.translation);
    assert!((t.affine - nalgebra::Matrix3::identity()).norm() < 1e-4);
}

#[test]
fn energy_history_is_monotone_and_fit_improves() {
    let template = lumpy_sphere(32, 48);
    let q = UnitQuaternion::from_euler_angles(0.05, 0.0, 0.08);
    let scan = transformed(&template, |p| {
        let warped = Point3::new(p.x, p.y, p.z + 0.01 * (10.0 * p.x).sin());
        q * warped + Vector3::new(0.003, 0.0, -0.002)
    });
    let result = register(
        &template,
        &scan,
        &BoundarySets::default(),
        None,
        &RegistrationConfig::default(),
    )
    .unwrap();
    assert!(result.iterations >= 1);
    for w in result.energy_history.windows(2) {
        assert!(w[1] < w[0]);
    }
    let target = ScanTarget::new(&scan).unwrap();
    let rms = |m: &Mesh| {
        let s: f64 = m
            .vertices()
            .iter()
            .map(|p| (target.closest(p).0 - p).norm_squared())
            .sum();
        (s / m.vertex_count() as f64).sqrt()
    };
    assert!(
        rms(&result.mesh) < 0.4 * rms(&template),
        "{} vs {}",
        rms(&result.mesh),
        rms(&template)
    );
}

#[test]
fn boundary_term_pulls_boundary_vertices() {
    let template = lumpy_sphere(8, 12);
    let target_shift = Vector3::new(0.0, 0.0, 0.002);
    let boundaries = BoundarySets {
        template: vec![0],
        scan: vec![template.vertices()[0] + target_shift],
    };
    let graph = DeformationGraph::single_node(&template, Point3::origin());
    let config = RegistrationConfig {
        boundary_weight: 1e6,
        ..RegistrationConfig::default()
    };
    let result = register(&template, &template, &boundaries, Some(graph), &config).unwrap();
    assert!(result.initial_energy.bound > 0.0);
    assert!(result.energy.bound < result.initial_energy.bound);
}

#[test]
fn point_cloud_scans_use_point_to_point() {
    let template = lumpy_sphere(8, 12);
    let shift = Vector3::new(0.002, 0.0, 0.0);
    let scan = Mesh::point_cloud(template.vertices().iter().map(|p| p + shift).collect());
    let graph = DeformationGraph::single_node(&template, Point3::origin());
    let result = register(
        &template,
        &scan,
        &BoundarySets::default(),
        Some(graph),
        &RegistrationConfig::default(),
    )
    .unwrap();
    assert!((result.graph.transforms()[0].translation - shift).norm() < 1e-6);
}

#[test]
fn invalid_configuration_is_rejected() {
    let mesh = lumpy_sphere(6, 8);
    let config = RegistrationConfig {
        rigid_weight: -1.0,
        ..RegistrationConfig::default()
    };
    let err = register(&mesh, &mesh, &BoundarySets::default(), None, &config).unwrap_err();
    assert_eq!(err.category(), crate::ErrorCategory::Config);
}
