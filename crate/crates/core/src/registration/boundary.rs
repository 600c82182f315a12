use nalgebra::Point3;

use crate::spatial::PointIndex;

/// Boundary vertex indices on the template and boundary points on the scan.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundarySets {
    pub template: Vec<usize>,
    pub scan: Vec<Point3<f64>>,
}

impl BoundarySets {
    pub fn is_empty(&self) -> bool {
        self.template.is_empty() || self.scan.is_empty()
    }
}

/// A template boundary point paired with a scan boundary point, as indices
/// into the two input lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoundaryMatch {
    pub template: usize,
    pub scan: usize,
}

/// Pairs template and scan boundary points.
///
/// Every scan point is assigned to its nearest template point. Each
/// template point that received at least one scan point is then paired with
/// the *farthest* of them; template points with no assigned scan point stay
/// unpaired. Nearest-point ties go to the lowest template index,
/// farthest-point ties to the lowest scan index. Output is sorted by
/// template index.
pub fn match_boundary(template: &[Point3<f64>], scan: &[Point3<f64>]) -> Vec<BoundaryMatch> {
    if template.is_empty() || scan.is_empty() {
        return Vec::new();
    }
    let index = PointIndex::new(template);
    // (scan index, squared distance) of the farthest assigned point so far.
    let mut farthest: Vec<Option<(usize, f64)>> = vec![None; template.len()];
    for (s, p) in scan.iter().enumerate() {
        let (t, d2) = index.nearest(p).expect("non-empty index");
        let slot = &mut farthest[t];
        let better = match slot {
            None => true,
            Some((bs, bd2)) => d2 > *bd2 || (d2 == *bd2 && s < *bs),
        };
        if better {
            *slot = Some((s, d2));
        }
    }
    farthest
        .into_iter()
        .enumerate()
        .filter_map(|(t, best)| best.map(|(s, _)| BoundaryMatch { template: t, scan: s }))
        .collect()
}
