//! The registration energy
//!
//! ```text
//! E = E_data + w_rigid * E_rigid + w_smooth * E_smooth + w_bound * E_bound
//! ```
//!
//! * `E_data`: squared point-to-plane distance of each deformed template
//!   vertex to its scan correspondence (point-to-point without a normal).
//! * `E_rigid`: per node, `||A^T A - I||_F^2 + (det A - 1)^2`.
//! * `E_smooth`: per grid edge, in both directions,
//!   `||A_k (g_l - g_k) + g_k + t_k - (g_l + t_l)||^2`.
//! * `E_bound`: squared distance of each matched template boundary vertex to
//!   its scan boundary point.
//!
//! Lengths inside the data, smooth and boundary terms are expressed in
//! `length_unit` (millimetres by default) so the default term weights are
//! meaningful for metre-scale meshes.
//!
//! All terms are sums of squared residuals. Each term streams its residual
//! rows (value plus sparse Jacobian row) into a [`RowSink`], which either
//! sums squares, accumulates a gradient, or builds normal equations.

use nalgebra::{Point3, Vector3};

use super::graph::{DeformationGraph, PARAMS_PER_NODE};
use super::RegistrationConfig;

/// Fixed target for one template vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub vertex: usize,
    pub target: Point3<f64>,
    /// Target surface normal; `None` selects the point-to-point residual.
    pub normal: Option<Vector3<f64>>,
}

/// Template boundary vertex paired with a scan boundary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPair {
    pub vertex: usize,
    pub target: Point3<f64>,
}

/// Unweighted term values and the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyTerms {
    pub data: f64,
    pub rigid: f64,
    pub smooth: f64,
    pub bound: f64,
    pub total: f64,
}

impl EnergyTerms {
    pub(crate) fn from_terms(data: f64, rigid: f64, smooth: f64, bound: f64, config: &RegistrationConfig) -> Self {
        EnergyTerms {
            data,
            rigid,
            smooth,
            bound,
            total: data + config.rigid_weight * rigid + config.smooth_weight * smooth + config.boundary_weight * bound,
        }
    }

    /// First non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("data", self.data),
            ("rigid", self.rigid),
            ("smooth", self.smooth),
            ("bound", self.bound),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Per-term gradients with respect to [`DeformationGraph::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct TermGradients {
    pub data: Vec<f64>,
    pub rigid: Vec<f64>,
    pub smooth: Vec<f64>,
    pub bound: Vec<f64>,
}

impl TermGradients {
    pub fn total(&self, config: &RegistrationConfig) -> Vec<f64> {
        (0..self.data.len())
            .map(|i| {
                self.data[i]
                    + config.rigid_weight * self.rigid[i]
                    + config.smooth_weight * self.smooth[i]
                    + config.boundary_weight * self.bound[i]
            })
            .collect()
    }
}

pub(crate) trait RowSink {
    /// One residual `r` with Jacobian row entries `(param index, dr/dp)`.
    fn row(&mut self, r: f64, jac: &[(usize, f64)]);
}

#[derive(Default)]
pub(crate) struct SumSquares(pub f64);

impl RowSink for SumSquares {
    fn row(&mut self, r: f64, _jac: &[(usize, f64)]) {
        self.0 += r * r;
    }
}

pub(crate) struct Gradient(pub Vec<f64>);

impl RowSink for Gradient {
    fn row(&mut self, r: f64, jac: &[(usize, f64)]) {
        for &(i, d) in jac {
            self.0[i] += 2.0 * r * d;
        }
    }
}

/// Everything the residual generators need.
pub(crate) struct Problem<'a> {
    pub graph: &'a DeformationGraph,
    pub rest: &'a [Point3<f64>],
    pub correspondences: &'a [Correspondence],
    pub boundary: &'a [BoundaryPair],
    pub length_unit: f64,
}

impl Problem<'_> {
    /// Residual rows of the point constraint `v'_vertex ≈ target`, projected
    /// on `normal` when given. `scale` multiplies residual and Jacobian.
    fn point_rows(
        &self,
        vertex: usize,
        target: &Point3<f64>,
        normal: Option<&Vector3<f64>>,
        scale: f64,
        buf: &mut Vec<(usize, f64)>,
        sink: &mut impl RowSink,
    ) {
        let v = &self.rest[vertex];
        let binding = &self.graph.bindings()[vertex];
        let deformed = self.graph.deform_point(v, binding);
        let diff = deformed - target;
        let positions = self.graph.node_positions();
        match normal {
            Some(n) => {
                buf.clear();
                for &(k, w) in binding {
                    let local = v - positions[k];
                    let base = k * PARAMS_PER_NODE;
                    for a in 0..3 {
                        let wn = scale * w * n[a];
                        for b in 0..3 {
                            buf.push((base + 3 * a + b, wn * local[b]));
                        }
                    }
                    for a in 0..3 {
                        buf.push((base + 9 + a, scale * w * n[a]));
                    }
                }
                sink.row(scale * n.dot(&diff), buf);
            }
            None => {
                for a in 0..3 {
                    buf.clear();
                    for &(k, w) in binding {
                        let local = v - positions[k];
                        let base = k * PARAMS_PER_NODE;
                        for b in 0..3 {
                            buf.push((base + 3 * a + b, scale * w * local[b]));
                        }
                        buf.push((base + 9 + a, scale * w));
                    }
                    sink.row(scale * diff[a], buf);
                }
            }
        }
    }

    pub fn data_rows(&self, scale: f64, sink: &mut impl RowSink) {
        let s = scale / self.length_unit;
        let mut buf = Vec::with_capacity(8 * PARAMS_PER_NODE);
        for c in self.correspondences {
            self.point_rows(c.vertex, &c.target, c.normal.as_ref(), s, &mut buf, sink);
        }
    }

    pub fn bound_rows(&self, scale: f64, sink: &mut impl RowSink) {
        let s = scale / self.length_unit;
        let mut buf = Vec::with_capacity(8 * PARAMS_PER_NODE);
        for p in self.boundary {
            self.point_rows(p.vertex, &p.target, None, s, &mut buf, sink);
        }
    }

    pub fn rigid_rows(&self, scale: f64, sink: &mut impl RowSink) {
        let mut buf = Vec::with_capacity(9);
        for (k, t) in self.graph.transforms().iter().enumerate() {
            let a = &t.affine;
            let base = k * PARAMS_PER_NODE;
            let ata = a.transpose() * a;
            // d(A^T A)_ij / dA_pq = [q == i] A_pj + [q == j] A_pi
            for i in 0..3 {
                for j in 0..3 {
                    buf.clear();
                    for p in 0..3 {
                        if i == j {
                            buf.push((base + 3 * p + i, scale * 2.0 * a[(p, i)]));
                        } else {
                            buf.push((base + 3 * p + i, scale * a[(p, j)]));
                            buf.push((base + 3 * p + j, scale * a[(p, i)]));
                        }
                    }
                    let target = if i == j { 1.0 } else { 0.0 };
                    sink.row(scale * (ata[(i, j)] - target), &buf);
                }
            }
            // d det(A) / dA_pq is the (p, q) cofactor.
            buf.clear();
            for p in 0..3 {
                let cof = a.row((p + 1) % 3).cross(&a.row((p + 2) % 3));
                for q in 0..3 {
                    buf.push((base + 3 * p + q, scale * cof[q]));
                }
            }
            sink.row(scale * (a.determinant() - 1.0), &buf);
        }
    }

    pub fn smooth_rows(&self, scale: f64, sink: &mut impl RowSink) {
        let s = scale / self.length_unit;
        let positions = self.graph.node_positions();
        let transforms = self.graph.transforms();
        let mut buf = Vec::with_capacity(5);
        for &(k0, l0) in self.graph.edges() {
            for (k, l) in [(k0, l0), (l0, k0)] {
                let d = positions[l] - positions[k];
                let tk = &transforms[k];
                let tl = &transforms[l];
                let r = tk.affine * d + positions[k].coords + tk.translation - positions[l].coords - tl.translation;
                let bk = k * PARAMS_PER_NODE;
                let bl = l * PARAMS_PER_NODE;
                for a in 0..3 {
                    buf.clear();
                    for b in 0..3 {
                        buf.push((bk + 3 * a + b, s * d[b]));
                    }
                    buf.push((bk + 9 + a, s));
                    buf.push((bl + 9 + a, -s));
                    sink.row(s * r[a], &buf);
                }
            }
        }
    }

    pub fn terms(&self, config: &RegistrationConfig) -> EnergyTerms {
        let mut data = SumSquares::default();
        let mut rigid = SumSquares::default();
        let mut smooth = SumSquares::default();
        let mut bound = SumSquares::default();
        self.data_rows(1.0, &mut data);
        self.rigid_rows(1.0, &mut rigid);
        self.smooth_rows(1.0, &mut smooth);
        self.bound_rows(1.0, &mut bound);
        EnergyTerms::from_terms(data.0, rigid.0, smooth.0, bound.0, config)
    }

    pub fn gradients(&self) -> TermGradients {
        let n = self.graph.param_count();
        let mut data = Gradient(vec![0.0; n]);
        let mut rigid = Gradient(vec![0.0; n]);
        let mut smooth = Gradient(vec![0.0; n]);
        let mut bound = Gradient(vec![0.0; n]);
        self.data_rows(1.0, &mut data);
        self.rigid_rows(1.0, &mut rigid);
        self.smooth_rows(1.0, &mut smooth);
        self.bound_rows(1.0, &mut bound);
        TermGradients {
            data: data.0,
            rigid: rigid.0,
            smooth: smooth.0,
            bound: bound.0,
        }
    }

    /// Streams every residual of the weighted total energy.
    pub fn all_rows(&self, config: &RegistrationConfig, sink: &mut impl RowSink) {
        self.data_rows(1.0, sink);
        if config.rigid_weight > 0.0 {
            self.rigid_rows(config.rigid_weight.sqrt(), sink);
        }
        if config.smooth_weight > 0.0 {
            self.smooth_rows(config.smooth_weight.sqrt(), sink);
        }
        if config.boundary_weight > 0.0 {
            self.bound_rows(config.boundary_weight.sqrt(), sink);
        }
    }
}
