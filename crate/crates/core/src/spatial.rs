//! Nearest-neighbour acceleration: a bounding-volume hierarchy over points
//! or triangles.
//!
//! Queries return exactly what a brute-force scan would: pruning only skips
//! boxes strictly farther than the current best, and equal distances are
//! resolved towards the lowest primitive index.

use nalgebra::{Point3, Vector3};

use crate::mesh::Mesh;

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Point3<f64>,
    hi: Point3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Point3::from(Vector3::repeat(f64::INFINITY)),
            hi: Point3::from(Vector3::repeat(f64::NEG_INFINITY)),
        }
    }

    fn grow(&mut self, other: &Aabb) {
        self.lo = self.lo.inf(&other.lo);
        self.hi = self.hi.sup(&other.hi);
    }

    fn distance_squared(&self, q: &Point3<f64>) -> f64 {
        (0..3)
            .map(|i| {
                let d = (self.lo[i] - q[i]).max(q[i] - self.hi[i]).max(0.0);
                d * d
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Inner { left: usize, right: usize },
}

#[derive(Debug, Clone)]
struct Node {
    bounds: Aabb,
    kind: NodeKind,
}

#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

impl Bvh {
    fn build(boxes: &[Aabb]) -> Self {
        let centroids: Vec<Point3<f64>> = boxes.iter().map(|b| nalgebra::center(&b.lo, &b.hi)).collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * boxes.len() / LEAF_SIZE + 1),
            order: (0..boxes.len()).collect(),
        };
        if !boxes.is_empty() {
            bvh.build_node(boxes, &centroids, 0, boxes.len());
        }
        bvh
    }

    fn build_node(&mut self, boxes: &[Aabb], centroids: &[Point3<f64>], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbox = Aabb::empty();
        for &i in &self.order[start..end] {
            bounds.grow(&boxes[i]);
            cbox.grow(&Aabb {
                lo: centroids[i],
                hi: centroids[i],
            });
        }
        let id = self.nodes.len();
        self.nodes.push(Node {
            bounds,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        let extent = cbox.hi - cbox.lo;
        let axis = extent.imax();
        if extent[axis] <= 0.0 {
            return id;
        }
        let mid = (start + end) / 2;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b))
        });
        let left = self.build_node(boxes, centroids, start, mid);
        let right = self.build_node(boxes, centroids, mid, end);
        self.nodes[id].kind = NodeKind::Inner { left, right };
        id
    }

    /// Generic nearest search. `dist` returns the squared distance from the
    /// query to primitive `i` along with a payload.
    fn nearest<T>(&self, q: &Point3<f64>, mut dist: impl FnMut(usize) -> (f64, T)) -> Option<(usize, f64, T)> {
        let mut best: Option<(usize, f64, T)> = None;
        if self.nodes.is_empty() {
            return None;
        }
        let mut stack = vec![(0usize, self.nodes[0].bounds.distance_squared(q))];
        while let Some((id, box_d2)) = stack.pop() {
            if let Some((_, best_d2, _)) = &best {
                if box_d2 > *best_d2 {
                    continue;
                }
            }
            match self.nodes[id].kind {
                NodeKind::Leaf { start, end } => {
                    for &i in &self.order[start..end] {
                        let (d2, payload) = dist(i);
                        let better = match &best {
                            None => true,
                            Some((bi, bd2, _)) => d2 < *bd2 || (d2 == *bd2 && i < *bi),
                        };
                        if better {
                            best = Some((i, d2, payload));
                        }
                    }
                }
                NodeKind::Inner { left, right } => {
                    let dl = self.nodes[left].bounds.distance_squared(q);
                    let dr = self.nodes[right].bounds.distance_squared(q);
                    if dl <= dr {
                        stack.push((right, dr));
                        stack.push((left, dl));
                    } else {
                        stack.push((left, dl));
                        stack.push((right, dr));
                    }
                }
            }
        }
        best
    }
}

/// Nearest-point queries over a fixed point set.
#[derive(Debug, Clone)]
pub struct PointIndex {
    points: Vec<Point3<f64>>,
    bvh: Bvh,
}

impl PointIndex {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let boxes: Vec<Aabb> = points.iter().map(|&p| Aabb { lo: p, hi: p }).collect();
        PointIndex {
            points: points.to_vec(),
            bvh: Bvh::build(&boxes),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    /// Index and squared distance of the nearest point (lowest index on ties).
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        self.bvh
            .nearest(q, |i| ((self.points[i] - q).norm_squared(), ()))
            .map(|(i, d2, _)| (i, d2))
    }
}

/// Closest point on a triangle surface, in barycentric form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarycentricHit {
    pub face: usize,
    pub barycentric: [f64; 3],
    pub point: Point3<f64>,
    /// Distance to the query, positive on the side the face normal points to.
    pub signed_distance: f64,
}

impl BarycentricHit {
    pub fn distance(&self) -> f64 {
        self.signed_distance.abs()
    }
}

/// Closest-point queries over the faces of a mesh.
#[derive(Debug, Clone)]
pub struct SurfaceIndex {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    bvh: Bvh,
}

impl SurfaceIndex {
    /// Returns `None` when the mesh has no faces.
    pub fn new(mesh: &Mesh) -> Option<Self> {
        Self::from_parts(mesh.vertices(), mesh.faces())
    }

    pub fn from_parts(vertices: &[Point3<f64>], faces: &[[usize; 3]]) -> Option<Self> {
        if faces.is_empty() {
            return None;
        }
        let boxes: Vec<Aabb> = faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| vertices[i]);
                Aabb {
                    lo: a.inf(&b).inf(&c),
                    hi: a.sup(&b).sup(&c),
                }
            })
            .collect();
        Some(SurfaceIndex {
            vertices: vertices.to_vec(),
            faces: faces.to_vec(),
            bvh: Bvh::build(&boxes),
        })
    }

    pub fn closest_point(&self, q: &Point3<f64>) -> BarycentricHit {
        let (face, d2, (bary, point)) = self
            .bvh
            .nearest(q, |f| {
                let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
                let (bary, p) = closest_point_on_triangle(q, &a, &b, &c);
                ((p - q).norm_squared(), (bary, p))
            })
            .expect("index holds at least one face");
        make_hit(&self.vertices, &self.faces, q, face, d2, bary, point)
    }

    /// Reference implementation: scans every face.
    pub fn closest_point_brute_force(&self, q: &Point3<f64>) -> BarycentricHit {
        brute_force_closest(&self.vertices, &self.faces, q)
    }
}

pub(crate) fn brute_force_closest(vertices: &[Point3<f64>], faces: &[[usize; 3]], q: &Point3<f64>) -> BarycentricHit {
    let mut best: Option<(usize, f64, [f64; 3], Point3<f64>)> = None;
    for (f, face) in faces.iter().enumerate() {
        let [a, b, c] = face.map(|i| vertices[i]);
        let (bary, p) = closest_point_on_triangle(q, &a, &b, &c);
        let d2 = (p - q).norm_squared();
        if best.as_ref().is_none_or(|(_, bd2, _, _)| d2 < *bd2) {
            best = Some((f, d2, bary, p));
        }
    }
    let (face, d2, bary, point) = best.expect("at least one face");
    make_hit(vertices, faces, q, face, d2, bary, point)
}

fn make_hit(
    vertices: &[Point3<f64>],
    faces: &[[usize; 3]],
    q: &Point3<f64>,
    face: usize,
    d2: f64,
    barycentric: [f64; 3],
    point: Point3<f64>,
) -> BarycentricHit {
    let [a, b, c] = faces[face].map(|i| vertices[i]);
    let n = (b - a).cross(&(c - a));
    let sign = if (q - point).dot(&n) < 0.0 { -1.0 } else { 1.0 };
    BarycentricHit {
        face,
        barycentric,
        point,
        signed_distance: sign * d2.sqrt(),
    }
}

/// Closest point to `p` on triangle `abc` (Voronoi-region walk). Returns the
/// barycentric weights of `(a, b, c)` and the point itself.
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> ([f64; 3], Point3<f64>) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ([1.0, 0.0, 0.0], *a);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ([0.0, 1.0, 0.0], *b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return ([1.0 - v, v, 0.0], a + ab * v);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ([0.0, 0.0, 1.0], *c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return ([1.0 - w, 0.0, w], a + ac * w);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return ([0.0, 1.0 - w, w], b + (c - b) * w);
    }
    let denom = va + vb + vc;
    if !(denom > 0.0) || !denom.is_finite() {
        return degenerate_closest(p, a, b, c);
    }
    let v = vb / denom;
    let w = vc / denom;
    ([1.0 - v - w, v, w], a + ab * v + ac * w)
}

/// Collinear or coincident corners: best of the three edge segments.
fn degenerate_closest(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> ([f64; 3], Point3<f64>) {
    let seg = |x: &Point3<f64>, y: &Point3<f64>| {
        let d = y - x;
        let len2 = d.norm_squared();
        let t = if len2 > 0.0 {
            ((p - x).dot(&d) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (t, x + d * t)
    };
    let (t0, p0) = seg(a, b);
    let (t1, p1) = seg(b, c);
    let (t2, p2) = seg(c, a);
    let cands = [
        ([1.0 - t0, t0, 0.0], p0),
        ([0.0, 1.0 - t1, t1], p1),
        ([t2, 0.0, 1.0 - t2], p2),
    ];
    cands
        .into_iter()
        .min_by(|x, y| (x.1 - p).norm_squared().total_cmp(&(y.1 - p).norm_squared()))
        .expect("three candidates")
}
