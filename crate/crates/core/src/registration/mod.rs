//! Non-rigid ICP: fits a clothing template to a scan by optimizing the
//! affine transforms of an embedded deformation grid.
//!
//! Each outer iteration fixes correspondences (closest scan surface points,
//! pruned by distance and normal compatibility) and boundary pairs, builds
//! the Gauss-Newton system of the energy in [`energy`], and solves it with
//! Levenberg damping. A trial step is accepted only if the energy of the new
//! state, with correspondences recomputed at that state, is strictly lower.
//! The accepted energy sequence is therefore monotonically decreasing.

mod boundary;
pub mod energy;
mod graph;
mod solver;

pub use boundary::{match_boundary, BoundaryMatch, BoundarySets};
pub use energy::{BoundaryPair, Correspondence, EnergyTerms, TermGradients};
pub use graph::{DeformationGraph, NodeTransform, DEFAULT_SPACING_DIVISOR, PARAMS_PER_NODE};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{vertex_normals_for, Mesh};
use crate::spatial::{PointIndex, SurfaceIndex};
use energy::Problem;
use solver::{NormalEquations, SparsePattern};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    pub rigid_weight: f64,
    pub smooth_weight: f64,
    pub boundary_weight: f64,
    pub max_iterations: usize,
    /// Correspondences farther than this (metres) are dropped.
    pub correspondence_cutoff: f64,
    /// Correspondences whose normals differ by more than this are dropped.
    pub normal_cutoff_degrees: f64,
    /// Stop once an accepted step lowers the energy by less than this
    /// fraction.
    pub convergence_tolerance: f64,
    /// Metres per energy length unit.
    pub length_unit: f64,
    /// Grid node spacing in metres; bounding-box diagonal / 20 when unset.
    pub grid_spacing: Option<f64>,
    /// Rejected trial steps allowed per iteration before giving up.
    pub max_damping_retries: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            rigid_weight: 500.0,
            smooth_weight: 500.0,
            boundary_weight: 10.0,
            max_iterations: 30,
            correspondence_cutoff: 0.05,
            normal_cutoff_degrees: 60.0,
            convergence_tolerance: 1e-5,
            length_unit: 1e-3,
            grid_spacing: None,
            max_damping_retries: 12,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.rigid_weight, self.smooth_weight, self.boundary_weight];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(
                "registration weights must be finite and non-negative".into(),
            ));
        }
        if !(self.correspondence_cutoff > 0.0) || !(self.normal_cutoff_degrees > 0.0) {
            return Err(Error::Config("registration cutoffs must be positive".into()));
        }
        if !(self.length_unit > 0.0) || !(self.convergence_tolerance >= 0.0) {
            return Err(Error::Config(
                "length unit must be positive, tolerance non-negative".into(),
            ));
        }
        if self.grid_spacing.is_some_and(|s| !(s > 0.0)) {
            return Err(Error::Config("grid spacing must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationResult {
    pub mesh: Mesh,
    pub graph: DeformationGraph,
    pub energy: EnergyTerms,
    pub initial_energy: EnergyTerms,
    /// Total energy after initialization and after every accepted step.
    pub energy_history: Vec<f64>,
    pub iterations: usize,
    pub correspondences: usize,
}

/// Energy of a graph state for fixed correspondences and boundary pairs.
pub fn evaluate_energy(
    graph: &DeformationGraph,
    template: &Mesh,
    correspondences: &[Correspondence],
    boundary: &[BoundaryPair],
    config: &RegistrationConfig,
) -> Result<EnergyTerms> {
    graph.check_template(template)?;
    let problem = Problem {
        graph,
        rest: template.vertices(),
        correspondences,
        boundary,
        length_unit: config.length_unit,
    };
    Ok(problem.terms(config))
}

/// Analytic gradients of the four unweighted terms.
pub fn energy_gradients(
    graph: &DeformationGraph,
    template: &Mesh,
    correspondences: &[Correspondence],
    boundary: &[BoundaryPair],
    config: &RegistrationConfig,
) -> Result<TermGradients> {
    graph.check_template(template)?;
    let problem = Problem {
        graph,
        rest: template.vertices(),
        correspondences,
        boundary,
        length_unit: config.length_unit,
    };
    Ok(problem.gradients())
}

/// The scan as a correspondence target.
pub struct ScanTarget {
    surface: Option<(
        SurfaceIndex,
        Vec<Vector3<f64>>,
        Vec<Option<Vector3<f64>>>,
        Vec<[usize; 3]>,
    )>,
    points: Option<PointIndex>,
}

impl ScanTarget {
    pub fn new(scan: &Mesh) -> Result<Self> {
        if scan.vertex_count() == 0 {
            return Err(Error::InvalidMesh("scan is empty".into()));
        }
        match SurfaceIndex::new(scan) {
            Some(index) => {
                let vertex_normals = match scan.normals() {
                    Some(n) => n.iter().map(|v| Some(*v)).collect(),
                    None => vertex_normals_for(scan.vertices(), scan.faces()),
                };
                let face_normals = (0..scan.face_count())
                    .map(|f| scan.face_area_normal(f).try_normalize(0.0).unwrap_or_else(Vector3::z))
                    .collect();
                Ok(ScanTarget {
                    surface: Some((index, face_normals, vertex_normals, scan.faces().to_vec())),
                    points: None,
                })
            }
            None => Ok(ScanTarget {
                surface: None,
                points: Some(PointIndex::new(scan.vertices())),
            }),
        }
    }

    /// Closest target point with its normal when the scan is a surface.
    pub fn closest(&self, q: &Point3<f64>) -> (Point3<f64>, Option<Vector3<f64>>) {
        if let Some((index, face_normals, vertex_normals, faces)) = &self.surface {
            let hit = index.closest_point(q);
            let face = faces[hit.face];
            let mut n = Vector3::zeros();
            for (k, &v) in face.iter().enumerate() {
                n += hit.barycentric[k] * vertex_normals[v].unwrap_or(face_normals[hit.face]);
            }
            let n = n.try_normalize(1e-12).unwrap_or(face_normals[hit.face]);
            (hit.point, Some(n))
        } else {
            let index = self.points.as_ref().expect("point target");
            let (i, _) = index.nearest(q).expect("non-empty scan");
            (index.points()[i], None)
        }
    }
}

/// Current state of the optimization with its own correspondences.
struct Evaluation {
    energy: EnergyTerms,
    correspondences: Vec<Correspondence>,
    boundary: Vec<BoundaryPair>,
}

struct Registrar<'a> {
    template: &'a Mesh,
    target: ScanTarget,
    boundaries: &'a BoundarySets,
    config: &'a RegistrationConfig,
    cos_cutoff: f64,
}

impl Registrar<'_> {
    fn evaluate(&self, graph: &DeformationGraph) -> Result<Evaluation> {
        let rest = self.template.vertices();
        let deformed = graph.deform(rest);
        let normals = vertex_normals_for(&deformed, self.template.faces());
        let cutoff2 = self.config.correspondence_cutoff.powi(2);
        let mut correspondences = Vec::with_capacity(deformed.len());
        for (v, p) in deformed.iter().enumerate() {
            let (target, normal) = self.target.closest(p);
            if (target - p).norm_squared() > cutoff2 {
                continue;
            }
            if let (Some(n_scan), Some(n_tpl)) = (normal, normals[v]) {
                if n_scan.dot(&n_tpl) < self.cos_cutoff {
                    continue;
                }
            }
            correspondences.push(Correspondence {
                vertex: v,
                target,
                normal,
            });
        }

        let boundary = if self.config.boundary_weight > 0.0 && !self.boundaries.is_empty() {
            let tpl: Vec<Point3<f64>> = self.boundaries.template.iter().map(|&i| deformed[i]).collect();
            match_boundary(&tpl, &self.boundaries.scan)
                .into_iter()
                .map(|m| BoundaryPair {
                    vertex: self.boundaries.template[m.template],
                    target: self.boundaries.scan[m.scan],
                })
                .collect()
        } else {
            Vec::new()
        };

        let energy = evaluate_energy(graph, self.template, &correspondences, &boundary, self.config)?;
        if let Some(term) = energy.non_finite_term() {
            return Err(Error::NonFiniteEnergy { term });
        }
        Ok(Evaluation {
            energy,
            correspondences,
            boundary,
        })
    }
}

/// Energy below which the fit is considered exact.
const ZERO_ENERGY: f64 = 1e-18;

/// Registers `template` to `scan`. `init` supplies a graph built over
/// `template` (its transforms are the starting point); otherwise a grid with
/// the configured spacing and identity transforms is used.
pub fn register(
    template: &Mesh,
    scan: &Mesh,
    boundaries: &BoundarySets,
    init: Option<DeformationGraph>,
    config: &RegistrationConfig,
) -> Result<RegistrationResult> {
    config.validate()?;
    if template.vertex_count() == 0 {
        return Err(Error::InvalidMesh("template is empty".into()));
    }
    if let Some(&bad) = boundaries.template.iter().find(|&&i| i >= template.vertex_count()) {
        return Err(Error::InvalidArgument(format!(
            "template boundary index {bad} out of range"
        )));
    }
    let mut graph = match init {
        Some(g) => {
            g.check_template(template)?;
            g
        }
        None => match config.grid_spacing {
            Some(s) => DeformationGraph::build(template, s)?,
            None => DeformationGraph::build_default(template)?,
        },
    };
    let registrar = Registrar {
        template,
        target: ScanTarget::new(scan)?,
        boundaries,
        config,
        cos_cutoff: config.normal_cutoff_degrees.to_radians().cos(),
    };

    let pattern = SparsePattern::new(&graph)?;
    let n = pattern.dim();
    let mut current = registrar.evaluate(&graph)?;
    let initial_energy = current.energy;
    let mut history = vec![current.energy.total];
    let mut iterations = 0;
    let mut damping: Option<f64> = None;

    while iterations < config.max_iterations && current.energy.total > ZERO_ENERGY {
        let mut system = NormalEquations::new(&pattern);
        let problem = Problem {
            graph: &graph,
            rest: template.vertices(),
            correspondences: &current.correspondences,
            boundary: &current.boundary,
            length_unit: config.length_unit,
        };
        problem.all_rows(config, &mut system);
        let mu = *damping.get_or_insert_with(|| {
            let max_diag = (0..n).map(|i| system.diagonal(i)).fold(0.0, f64::max);
            1e-4 * max_diag.max(1e-12)
        });

        let params = graph.params();
        let mut mu = mu;
        let mut accepted = None;
        let mut factorized_once = false;
        for _ in 0..=config.max_damping_retries {
            let Some(step) = system.solve_damped(mu) else {
                mu *= 10.0;
                continue;
            };
            factorized_once = true;
            // First-order decrease predicted by the linearization; once it is
            // below the tolerance no damping can produce a useful step.
            let predicted: f64 = step.iter().zip(&system.rhs).map(|(d, g)| d * g).sum();
            if predicted < config.convergence_tolerance * current.energy.total {
                break;
            }
            let trial_params: Vec<f64> = params.iter().zip(&step).map(|(p, d)| p + d).collect();
            let mut trial = graph.clone();
            trial.set_params(&trial_params)?;
            match registrar.evaluate(&trial) {
                Ok(eval) if eval.energy.total < current.energy.total => {
                    accepted = Some((trial, eval));
                    break;
                }
                Ok(_) | Err(Error::NonFiniteEnergy { .. }) => mu *= 10.0,
                Err(e) => return Err(e),
            }
        }
        if !factorized_once {
            return Err(Error::SolverFailure(format!(
                "normal equations not positive definite after {} damping increases",
                config.max_damping_retries + 1
            )));
        }
        let Some((trial, eval)) = accepted else {
            break;
        };
        let previous = current.energy.total;
        graph = trial;
        current = eval;
        damping = Some((mu / 2.0).max(1e-15));
        iterations += 1;
        history.push(current.energy.total);
        if (previous - current.energy.total) < config.convergence_tolerance * previous {
            break;
        }
    }

    let mesh = template.with_positions(graph.deform(template.vertices()))?;
    Ok(RegistrationResult {
        mesh,
        energy: current.energy,
        initial_energy,
        energy_history: history,
        iterations,
        correspondences: current.correspondences.len(),
        graph,
    })
}

#[cfg(test)]
mod tests;
