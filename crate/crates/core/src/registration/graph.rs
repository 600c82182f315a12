use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::{bounding_box, Mesh};

/// Unknowns per node: a row-major 3x3 affine block followed by a translation.
pub const PARAMS_PER_NODE: usize = 12;

/// Node spacing used when none is configured: bounding-box diagonal / 20.
pub const DEFAULT_SPACING_DIVISOR: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeTransform {
    pub affine: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl NodeTransform {
    pub fn identity() -> Self {
        NodeTransform {
            affine: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }
}

impl Default for NodeTransform {
    fn default() -> Self {
        Self::identity()
    }
}

/// Regular grid of deformation nodes embedding a template mesh.
///
/// Only grid nodes that influence at least one vertex are kept ("active"
/// nodes). Each vertex is bound to the corners of its grid cell with
/// trilinear weights. A vertex `v` bound to nodes `k` with weights `w_k`
/// deforms to `sum_k w_k (A_k (v - g_k) + g_k + t_k)`.
#[derive(Debug, Clone)]
pub struct DeformationGraph {
    spacing: f64,
    positions: Vec<Point3<f64>>,
    grid_coords: Vec<[usize; 3]>,
    transforms: Vec<NodeTransform>,
    bindings: Vec<Vec<(usize, f64)>>,
    edges: Vec<(usize, usize)>,
}

impl DeformationGraph {
    /// Grid with the default spacing (bounding-box diagonal / 20).
    pub fn build_default(template: &Mesh) -> Result<Self> {
        let (lo, hi) = template
            .bounding_box()
            .ok_or_else(|| Error::InvalidMesh("template has no vertices".into()))?;
        let diag = (hi - lo).norm();
        if !(diag > 0.0) {
            return Err(Error::InvalidMesh("template bounding box is degenerate".into()));
        }
        Self::build(template, diag / DEFAULT_SPACING_DIVISOR)
    }

    /// Grid of the given node spacing covering the template's bounding box
    /// plus half a cell of margin on every side.
    pub fn build(template: &Mesh, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) || !spacing.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        let (lo, hi) =
            bounding_box(template.vertices()).ok_or_else(|| Error::InvalidMesh("template has no vertices".into()))?;
        let margin = 0.5 * spacing;
        let origin = lo - Vector3::repeat(margin);
        let extent = hi - lo + Vector3::repeat(2.0 * margin);
        let dims = [0, 1, 2].map(|a| (extent[a] / spacing).floor() as usize + 2);

        let flat = |c: [usize; 3]| (c[0] * dims[1] + c[1]) * dims[2] + c[2];
        let mut active: Vec<Option<usize>> = vec![None; dims[0] * dims[1] * dims[2]];
        let mut grid_coords = Vec::new();
        let mut bindings = Vec::with_capacity(template.vertex_count());

        for p in template.vertices() {
            let rel = (p - origin) / spacing;
            let cell = [0, 1, 2].map(|a| (rel[a].floor().max(0.0) as usize).min(dims[a] - 2));
            let frac = [0, 1, 2].map(|a| (rel[a] - cell[a] as f64).clamp(0.0, 1.0));
            let mut binding = Vec::with_capacity(8);
            for corner in 0..8 {
                let bits = [corner >> 2 & 1, corner >> 1 & 1, corner & 1];
                let w: f64 = (0..3)
                    .map(|a| if bits[a] == 1 { frac[a] } else { 1.0 - frac[a] })
                    .product();
                if w <= 0.0 {
                    continue;
                }
                let c = [cell[0] + bits[0], cell[1] + bits[1], cell[2] + bits[2]];
                let slot = &mut active[flat(c)];
                let node = *slot.get_or_insert_with(|| {
                    grid_coords.push(c);
                    grid_coords.len() - 1
                });
                binding.push((node, w));
            }
            bindings.push(binding);
        }

        // Renumber nodes in grid order, slowest axis = longest grid axis, so
        // the normal equations come out narrow-banded.
        let mut axes = [0usize, 1, 2];
        axes.sort_by_key(|&a| std::cmp::Reverse(dims[a]));
        let key = |c: &[usize; 3]| (c[axes[0]], c[axes[1]], c[axes[2]]);
        let mut order: Vec<usize> = (0..grid_coords.len()).collect();
        order.sort_by_key(|&i| key(&grid_coords[i]));
        let mut renumber = vec![0; order.len()];
        for (new, &old) in order.iter().enumerate() {
            renumber[old] = new;
        }
        let grid_coords: Vec<[usize; 3]> = order.iter().map(|&i| grid_coords[i]).collect();
        for b in &mut bindings {
            for (node, _) in b.iter_mut() {
                *node = renumber[*node];
            }
            b.sort_by_key(|&(n, _)| n);
        }
        let mut lookup: Vec<Option<usize>> = vec![None; active.len()];
        for (i, c) in grid_coords.iter().enumerate() {
            lookup[flat(*c)] = Some(i);
        }

        let mut edges = Vec::new();
        for (k, c) in grid_coords.iter().enumerate() {
            for a in 0..3 {
                let mut n = *c;
                n[a] += 1;
                if n[a] < dims[a] {
                    if let Some(l) = lookup[flat(n)] {
                        edges.push((k, l));
                    }
                }
            }
        }

        let positions = grid_coords
            .iter()
            .map(|c| origin + Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) * spacing)
            .collect();
        Ok(DeformationGraph {
            spacing,
            transforms: vec![NodeTransform::identity(); grid_coords.len()],
            positions,
            grid_coords,
            bindings,
            edges,
        })
    }

    /// One node at `position` driving every vertex with weight 1.
    pub fn single_node(template: &Mesh, position: Point3<f64>) -> Self {
        DeformationGraph {
            spacing: 0.0,
            positions: vec![position],
            grid_coords: vec![[0, 0, 0]],
            transforms: vec![NodeTransform::identity()],
            bindings: vec![vec![(0, 1.0)]; template.vertex_count()],
            edges: Vec::new(),
        }
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn node_positions(&self) -> &[Point3<f64>] {
        &self.positions
    }

    pub fn grid_coords(&self) -> &[[usize; 3]] {
        &self.grid_coords
    }

    pub fn bindings(&self) -> &[Vec<(usize, f64)>] {
        &self.bindings
    }

    /// Grid-neighbour node pairs `(k, l)` with `k < l`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn transforms(&self) -> &[NodeTransform] {
        &self.transforms
    }

    pub fn transforms_mut(&mut self) -> &mut [NodeTransform] {
        &mut self.transforms
    }

    pub fn reset(&mut self) {
        self.transforms.fill(NodeTransform::identity());
    }

    pub fn param_count(&self) -> usize {
        PARAMS_PER_NODE * self.node_count()
    }

    /// Flattened unknowns: per node, `A` row-major then `t`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for t in &self.transforms {
            for r in 0..3 {
                for c in 0..3 {
                    out.push(t.affine[(r, c)]);
                }
            }
            out.extend_from_slice(t.translation.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                context: "graph parameters",
                expected: self.param_count(),
                actual: params.len(),
            });
        }
        for (t, p) in self.transforms.iter_mut().zip(params.chunks_exact(PARAMS_PER_NODE)) {
            t.affine = Matrix3::from_row_slice(&p[..9]);
            t.translation = Vector3::new(p[9], p[10], p[11]);
        }
        Ok(())
    }

    /// Deformed positions of the bound rest points.
    pub fn deform(&self, rest: &[Point3<f64>]) -> Vec<Point3<f64>> {
        rest.iter()
            .zip(&self.bindings)
            .map(|(v, binding)| self.deform_point(v, binding))
            .collect()
    }

    pub(crate) fn deform_point(&self, v: &Point3<f64>, binding: &[(usize, f64)]) -> Point3<f64> {
        let mut out = Vector3::zeros();
        for &(k, w) in binding {
            let g = &self.positions[k];
            let t = &self.transforms[k];
            out += w * (t.affine * (v - g) + g.coords + t.translation);
        }
        Point3::from(out)
    }

    pub(crate) fn check_template(&self, template: &Mesh) -> Result<()> {
        if self.bindings.len() != template.vertex_count() {
            return Err(Error::DimensionMismatch {
                context: "deformation graph bindings",
                expected: template.vertex_count(),
                actual: self.bindings.len(),
            });
        }
        Ok(())
    }
}
