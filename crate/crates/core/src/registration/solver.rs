//! Sparse normal equations and their Cholesky factorization.
//!
//! The sparsity pattern of `J^T J` only depends on the graph (vertex
//! bindings and grid edges), so it is built once together with a symbolic
//! factorization under an AMD ordering, and reused for every iteration and
//! damping retry. Everything runs sequentially so results are
//! bit-reproducible.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky, SymmetricOrdering};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};

use super::energy::RowSink;
use super::graph::{DeformationGraph, PARAMS_PER_NODE};
use crate::error::{Error, Result};

const P: usize = PARAMS_PER_NODE;

/// Lower-triangular CSC pattern of the Gauss-Newton matrix in dense
/// `12 x 12` node blocks.
pub(crate) struct SparsePattern {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    /// Per node `l`, the coupled nodes `k >= l` in increasing order; the
    /// first entry is `l` itself.
    neighbours: Vec<Vec<usize>>,
    diagonal: Vec<usize>,
    symbolic: SymbolicCholesky<usize>,
}

impl SparsePattern {
    pub fn new(graph: &DeformationGraph) -> Result<Self> {
        let nodes = graph.node_count();
        let mut neighbours: Vec<Vec<usize>> = (0..nodes).map(|l| vec![l]).collect();
        let mut couple = |a: usize, b: usize| {
            let (k, l) = if a >= b { (a, b) } else { (b, a) };
            neighbours[l].push(k);
        };
        for b in graph.bindings() {
            for (x, &(k, _)) in b.iter().enumerate() {
                for &(l, _) in &b[..x] {
                    couple(k, l);
                }
            }
        }
        for &(k, l) in graph.edges() {
            couple(k, l);
        }
        for list in &mut neighbours {
            list.sort_unstable();
            list.dedup();
        }

        let n = P * nodes;
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut diagonal = Vec::with_capacity(n);
        col_ptr.push(0);
        for (l, list) in neighbours.iter().enumerate() {
            for c in 0..P {
                diagonal.push(row_idx.len());
                row_idx.extend(P * l + c..P * l + P);
                for &k in &list[1..] {
                    row_idx.extend(P * k..P * k + P);
                }
                col_ptr.push(row_idx.len());
            }
        }
        let pattern = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
        let symbolic = factorize_symbolic_cholesky(pattern, Side::Lower, SymmetricOrdering::Amd, Default::default())
            .map_err(|e| Error::SolverFailure(format!("symbolic factorization failed: {e:?}")))?;
        Ok(SparsePattern {
            n,
            col_ptr,
            row_idx,
            neighbours,
            diagonal,
            symbolic,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }
}

/// Accumulates `J^T J` (lower triangle) and `-J^T r`.
pub(crate) struct NormalEquations<'a> {
    pattern: &'a SparsePattern,
    values: Vec<f64>,
    pub rhs: Vec<f64>,
    groups: Vec<(usize, usize, usize)>,
}

impl<'a> NormalEquations<'a> {
    pub fn new(pattern: &'a SparsePattern) -> Self {
        NormalEquations {
            pattern,
            values: vec![0.0; pattern.row_idx.len()],
            rhs: vec![0.0; pattern.n],
            groups: Vec::new(),
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.values[self.pattern.diagonal[i]]
    }

    /// Solves `(J^T J + mu I) x = -J^T r`. Returns `None` when the damped
    /// matrix is not numerically positive definite.
    pub fn solve_damped(&self, mu: f64) -> Option<Vec<f64>> {
        let p = self.pattern;
        let mut values = self.values.clone();
        for &d in &p.diagonal {
            values[d] += mu;
        }
        let matrix = SparseColMatRef::new(
            SymbolicSparseColMatRef::new_checked(p.n, p.n, &p.col_ptr, None, &p.row_idx),
            &values,
        );
        let mut factor = vec![0.0; p.symbolic.len_val()];
        let scratch = p
            .symbolic
            .factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default())
            .or(p.symbolic.solve_in_place_scratch::<f64>(1, Par::Seq));
        let mut buffer = MemBuffer::new(scratch);
        let stack = MemStack::new(&mut buffer);
        let llt: LltRef<'_, usize, f64> = p
            .symbolic
            .factorize_numeric_llt(
                &mut factor,
                matrix,
                Side::Lower,
                Default::default(),
                Par::Seq,
                stack,
                Default::default(),
            )
            .ok()?;
        let mut x = self.rhs.clone();
        llt.solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(&mut x, p.n, 1),
            Par::Seq,
            stack,
        );
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

impl RowSink for NormalEquations<'_> {
    fn row(&mut self, r: f64, jac: &[(usize, f64)]) {
        // Split the row into runs of entries that belong to the same node.
        self.groups.clear();
        let mut start = 0;
        for e in 1..=jac.len() {
            if e == jac.len() || jac[e].0 / P != jac[start].0 / P {
                self.groups.push((jac[start].0 / P, start, e));
                start = e;
            }
        }
        for &(i, vi) in jac {
            self.rhs[i] -= r * vi;
        }
        let p = self.pattern;
        for (ga, &(ka, sa, ea)) in self.groups.iter().enumerate() {
            for &(kb, sb, eb) in &self.groups[..=ga] {
                if ka == kb {
                    for &(i, vi) in &jac[sa..ea] {
                        for &(j, vj) in &jac[sb..eb] {
                            // Within one run every unordered pair is
                            // visited twice; keep one.
                            if sa == sb && j > i {
                                continue;
                            }
                            let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
                            self.values[p.col_ptr[P * ka + lo % P] - lo % P + hi % P] += vi * vj;
                        }
                    }
                    continue;
                }
                let (high, low, kh, kl) = if ka > kb {
                    (&jac[sa..ea], &jac[sb..eb], ka, kb)
                } else {
                    (&jac[sb..eb], &jac[sa..ea], kb, ka)
                };
                let pos = p.neighbours[kl].binary_search(&kh).expect("node pair in pattern");
                for &(j, vj) in low {
                    let c = j % P;
                    let base = p.col_ptr[P * kl + c] + (P - c) + P * (pos - 1);
                    for &(i, vi) in high {
                        self.values[base + i % P] += vi * vj;
                    }
                }
            }
        }
    }
}
