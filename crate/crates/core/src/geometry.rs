//! Continuous domains, their lattice discretization and epsilon-balls.
//!
//! A [`DomainSpec`] is a shape plus an ordered list of boundary rules.
//! [`discretize`] lays a uniform lattice over the shape's bounding box
//! (inflated by one spacing) and classifies every node by the signed
//! distance of the shape: nodes within `h/2` of the boundary are boundary
//! nodes, and the first rule whose predicate exceeds `0.5` at the closest
//! boundary point decides whether they are Dirichlet or Neumann.

use thiserror::Error;

use crate::expr::{EvalError, Expr};

/// Points are stored in two coordinates; one-dimensional grids keep `y = 0`.
pub type Point = [f64; 2];

pub fn dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn unit(a: Point) -> Option<Point> {
    let n = norm(a);
    (n > 0.0).then(|| [a[0] / n, a[1] / n])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// Axis-aligned box; `lo.len()` (1 or 2) fixes the dimension.
    Rectangle { lo: Vec<f64>, hi: Vec<f64> },
    Disk { center: Vec<f64>, radius: f64 },
    /// Simple polygon with counterclockwise vertices.
    Polygon { vertices: Vec<Point> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRule {
    /// Matches where the predicate evaluates to more than `0.5`.
    pub region: Expr,
    pub kind: BoundaryKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    pub shape: Shape,
    /// First match wins; the last rule must be a constant catch-all.
    pub boundary_rules: Vec<BoundaryRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeClass {
    Interior,
    Dirichlet,
    Neumann,
    Exterior,
}

impl NodeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeClass::Interior => "interior",
            NodeClass::Dirichlet => "dirichlet",
            NodeClass::Neumann => "neumann",
            NodeClass::Exterior => "exterior",
        }
    }

    pub fn is_active(self) -> bool {
        self != NodeClass::Exterior
    }

    pub fn is_boundary(self) -> bool {
        matches!(self, NodeClass::Dirichlet | NodeClass::Neumann)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("degenerate shape: {0}")]
    DegenerateShape(String),
    #[error("invalid grid spacing {h}: {reason}")]
    InvalidSpacing { h: f64, reason: String },
    #[error("boundary rules: {0}")]
    InvalidRules(String),
    #[error("evaluating boundary rule {rule}: {source}")]
    Rule { rule: usize, source: EvalError },
    #[error("no node was classified dirichlet; the game could never end")]
    EmptyDirichlet,
    #[error("epsilon {eps} is below twice the grid spacing {h}")]
    EpsTooSmall { eps: f64, h: f64 },
    #[error("node {0} is exterior or out of range")]
    InactiveNode(usize),
    #[error("the grid has no neumann nodes")]
    NoNeumannNodes,
}

/// Result of probing a shape at a point.
#[derive(Debug, Clone, Copy)]
struct Probe {
    signed_distance: f64,
    closest: Point,
    normal: Point,
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::Rectangle { lo, .. } => lo.len(),
            Shape::Disk { center, .. } => center.len(),
            Shape::Polygon { .. } => 2,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bad = |m: String| Err(GeometryError::DegenerateShape(m));
        match self {
            Shape::Rectangle { lo, hi } => {
                if lo.len() != hi.len() || !(1..=2).contains(&lo.len()) {
                    return bad("rectangle corners must both have 1 or 2 coordinates".into());
                }
                if lo.iter().chain(hi).any(|v| !v.is_finite()) {
                    return bad("rectangle corners must be finite".into());
                }
                if lo.iter().zip(hi).any(|(l, h)| l >= h) {
                    return bad(format!("rectangle needs lo < hi componentwise, got {lo:?} / {hi:?}"));
                }
            }
            Shape::Disk { center, radius } => {
                if !(1..=2).contains(&center.len()) || center.iter().any(|v| !v.is_finite()) {
                    return bad("disk center must have 1 or 2 finite coordinates".into());
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad(format!("disk radius must be positive, got {radius}"));
                }
            }
            Shape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return bad("polygon needs at least 3 vertices".into());
                }
                if vertices.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("polygon vertices must be finite".into());
                }
                let n = vertices.len();
                for i in 0..n {
                    if dist(vertices[i], vertices[(i + 1) % n]) == 0.0 {
                        return bad(format!("polygon has a repeated vertex at index {i}"));
                    }
                }
                if polygon_area(vertices) <= 0.0 {
                    return bad("polygon vertices must be in counterclockwise order".into());
                }
                if polygon_self_intersects(vertices) {
                    return bad("polygon edges intersect".into());
                }
            }
        }
        Ok(())
    }

    /// `(lo, hi)` corners of the bounding box; the unused `y` axis is `[0, 0]`.
    pub fn bounding_box(&self) -> (Point, Point) {
        match self {
            Shape::Rectangle { lo, hi } => (pad(lo), pad(hi)),
            Shape::Disk { center, radius } => {
                let c = pad(center);
                if center.len() == 1 {
                    ([c[0] - radius, 0.0], [c[0] + radius, 0.0])
                } else {
                    ([c[0] - radius, c[1] - radius], [c[0] + radius, c[1] + radius])
                }
            }
            Shape::Polygon { vertices } => {
                let mut lo = [f64::INFINITY; 2];
                let mut hi = [f64::NEG_INFINITY; 2];
                for v in vertices {
                    for k in 0..2 {
                        lo[k] = lo[k].min(v[k]);
                        hi[k] = hi[k].max(v[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Signed distance to the boundary (negative inside).
    pub fn signed_distance(&self, p: Point) -> f64 {
        self.probe(p).signed_distance
    }

    /// Closest point on the boundary.
    pub fn closest_boundary_point(&self, p: Point) -> Point {
        self.probe(p).closest
    }

    /// Unit outward normal, taken as the normalized gradient of the signed
    /// distance. Where the gradient is undefined (corners, the centre of a
    /// disk) the average of the active face normals is used.
    pub fn outward_normal(&self, p: Point) -> Point {
        self.probe(p).normal
    }

    /// True if the polygon (or any other shape) is convex.
    pub fn is_convex(&self) -> bool {
        match self {
            Shape::Polygon { vertices } => {
                let n = vertices.len();
                (0..n).all(|i| {
                    let a = vertices[i];
                    let b = vertices[(i + 1) % n];
                    let c = vertices[(i + 2) % n];
                    cross(sub(b, a), sub(c, b)) >= 0.0
                })
            }
            _ => true,
        }
    }

    fn probe(&self, p: Point) -> Probe {
        match self {
            Shape::Rectangle { lo, hi } => probe_box(pad(lo), pad(hi), lo.len(), p),
            Shape::Disk { center, radius } => {
                let c = pad(center);
                let d = sub(p, c);
                let r = norm(d);
                let normal = if center.len() == 1 {
                    [if d[0] < 0.0 { -1.0 } else { 1.0 }, 0.0]
                } else {
                    unit(d).unwrap_or([1.0, 0.0])
                };
                Probe {
                    signed_distance: r - radius,
                    closest: [c[0] + radius * normal[0], c[1] + radius * normal[1]],
                    normal,
                }
            }
            Shape::Polygon { vertices } => probe_polygon(vertices, p),
        }
    }
}

fn pad(v: &[f64]) -> Point {
    [v[0], v.get(1).copied().unwrap_or(0.0)]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn polygon_area(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| cross(v[i], v[(i + 1) % n])).sum::<f64>()
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = cross(sub(b, a), sub(c, a));
    let d2 = cross(sub(b, a), sub(d, a));
    let d3 = cross(sub(d, c), sub(a, c));
    let d4 = cross(sub(d, c), sub(b, c));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn polygon_self_intersects(v: &[Point]) -> bool {
    let n = v.len();
    for i in 0..n {
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

fn probe_box(lo: Point, hi: Point, dim: usize, p: Point) -> Probe {
    // per-axis signed offsets to the nearer face, and that face's side
    let mut off = [f64::NEG_INFINITY; 2];
    let mut side = [0.0; 2];
    for k in 0..dim {
        let to_lo = lo[k] - p[k];
        let to_hi = p[k] - hi[k];
        if to_lo >= to_hi {
            off[k] = to_lo;
            side[k] = -1.0;
        } else {
            off[k] = to_hi;
            side[k] = 1.0;
        }
    }
    let outside = (0..dim).any(|k| off[k] > 0.0);
    if outside {
        let mut closest = p;
        let mut q = [0.0; 2];
        for k in 0..dim {
            closest[k] = p[k].clamp(lo[k], hi[k]);
            q[k] = p[k] - closest[k];
        }
        let d = norm(q);
        return Probe { signed_distance: d, closest, normal: [q[0] / d, q[1] / d] };
    }
    let sd = (0..dim).map(|k| off[k]).fold(f64::NEG_INFINITY, f64::max);
    let mut n = [0.0; 2];
    let mut first = None;
    for k in 0..dim {
        if off[k] == sd {
            n[k] = side[k];
            first.get_or_insert(k);
        }
    }
    let k = first.expect("at least one axis attains the max");
    let mut closest = p;
    closest[k] = if side[k] < 0.0 { lo[k] } else { hi[k] };
    Probe { signed_distance: sd, closest, normal: unit(n).expect("nonzero face normal") }
}

fn closest_on_segment(a: Point, b: Point, p: Point) -> Point {
    let ab = sub(b, a);
    let t = (dot(sub(p, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
    [a[0] + t * ab[0], a[1] + t * ab[1]]
}

fn point_in_polygon(v: &[Point], p: Point) -> bool {
    let n = v.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (v[i], v[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn probe_polygon(v: &[Point], p: Point) -> Probe {
    let n = v.len();
    let mut best = f64::INFINITY;
    let mut closest = p;
    let dists: Vec<(f64, Point)> = (0..n)
        .map(|i| {
            let c = closest_on_segment(v[i], v[(i + 1) % n], p);
            (dist(c, p), c)
        })
        .collect();
    for &(d, c) in &dists {
        if d < best {
            best = d;
            closest = c;
        }
    }
    let scale = dists.iter().map(|x| x.0).fold(1.0, f64::max);
    if best <= 1e-12 * scale {
        let mut acc = [0.0; 2];
        for (i, &(d, _)) in dists.iter().enumerate() {
            if d <= 1e-12 * scale {
                let e = sub(v[(i + 1) % n], v[i]);
                let out = unit([e[1], -e[0]]).expect("nonzero edge");
                acc = [acc[0] + out[0], acc[1] + out[1]];
            }
        }
        let normal = unit(acc).unwrap_or([1.0, 0.0]);
        return Probe { signed_distance: 0.0, closest, normal };
    }
    let inside = point_in_polygon(v, p);
    let dir = unit(sub(p, closest)).expect("positive distance");
    if inside {
        Probe { signed_distance: -best, closest, normal: [-dir[0], -dir[1]] }
    } else {
        Probe { signed_distance: best, closest, normal: dir }
    }
}

/// Uniform lattice over the inflated bounding box with per-node classes.
///
/// Node ids are row-major with `x` fastest: `id = j * nx + i`.
#[derive(Debug, Clone)]
pub struct GridDomain {
    dim: usize,
    h: f64,
    origin: Point,
    nx: usize,
    ny: usize,
    classes: Vec<NodeClass>,
    signed_distance: Vec<f64>,
    normals: Vec<Point>,
    anchors: Vec<Point>,
}

/// One epsilon-ball: every active node within Euclidean distance `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center: usize,
    pub members: Vec<usize>,
    pub epsilon: f64,
}

/// Precomputed epsilon-balls for every active node of a grid.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    epsilon: f64,
    members: Vec<Vec<u32>>,
}

impl NeighborTable {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Members of the ball around `id` in ascending id order (empty for
    /// exterior nodes).
    pub fn of(&self, id: usize) -> &[u32] {
        &self.members[id]
    }
}

/// Tolerance used when comparing lattice distances in index units.
const LATTICE_TOL: f64 = 1e-9;

fn check_eps(eps: f64, h: f64) -> Result<(), GeometryError> {
    if !(eps >= 2.0 * h * (1.0 - 1e-12)) {
        return Err(GeometryError::EpsTooSmall { eps, h });
    }
    Ok(())
}

impl GridDomain {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> Point {
        self.origin
    }

    /// Lattice extent `(nx, ny)`; `ny == 1` in one dimension.
    pub fn extent(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn ij(&self, id: usize) -> (usize, usize) {
        (id % self.nx, id / self.nx)
    }

    pub fn id(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn point(&self, id: usize) -> Point {
        let (i, j) = self.ij(id);
        [self.origin[0] + i as f64 * self.h, self.origin[1] + j as f64 * self.h]
    }

    pub fn class(&self, id: usize) -> NodeClass {
        self.classes[id]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.classes
    }

    /// Signed distance of the node to the continuous boundary.
    pub fn signed_distance(&self, id: usize) -> f64 {
        self.signed_distance[id]
    }

    /// Unit outward normal at a Neumann node.
    pub fn normal(&self, id: usize) -> Option<Point> {
        (self.classes[id] == NodeClass::Neumann).then(|| self.normals[id])
    }

    /// The node itself for interior nodes, its closest point on the
    /// continuous boundary for boundary nodes.
    pub fn anchor(&self, id: usize) -> Point {
        self.anchors[id]
    }

    pub fn ids_with(&self, class: NodeClass) -> impl Iterator<Item = usize> + '_ {
        self.classes.iter().enumerate().filter(move |(_, c)| **c == class).map(|(i, _)| i)
    }

    pub fn active_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.iter().enumerate().filter(|(_, c)| c.is_active()).map(|(i, _)| i)
    }

    /// Nearest lattice node to `p` regardless of class.
    pub fn nearest_node(&self, p: Point) -> Option<usize> {
        let fi = ((p[0] - self.origin[0]) / self.h).round();
        let fj = if self.dim == 1 { 0.0 } else { ((p[1] - self.origin[1]) / self.h).round() };
        if fi < 0.0 || fj < 0.0 || fi >= self.nx as f64 || fj >= self.ny as f64 {
            return None;
        }
        Some(self.id(fi as usize, fj as usize))
    }

    /// Axis-aligned lattice neighbours (2 per dimension, fewer at the lattice edge).
    pub fn axis_neighbors(&self, id: usize) -> impl Iterator<Item = usize> + '_ {
        let (i, j) = self.ij(id);
        let mut out = [None; 4];
        if i > 0 {
            out[0] = Some(self.id(i - 1, j));
        }
        if i + 1 < self.nx {
            out[1] = Some(self.id(i + 1, j));
        }
        if self.dim == 2 {
            if j > 0 {
                out[2] = Some(self.id(i, j - 1));
            }
            if j + 1 < self.ny {
                out[3] = Some(self.id(i, j + 1));
            }
        }
        out.into_iter().flatten()
    }

    fn ball_offsets(&self, eps: f64) -> Vec<(isize, isize)> {
        let r = eps / self.h;
        let r2 = r * r + LATTICE_TOL;
        let ri = r.floor() as isize + 1;
        let rj = if self.dim == 1 { 0 } else { ri };
        let mut out = Vec::new();
        for dj in -rj..=rj {
            for di in -ri..=ri {
                if (di * di + dj * dj) as f64 <= r2 {
                    out.push((di, dj));
                }
            }
        }
        out
    }

    fn members_with(&self, id: usize, offsets: &[(isize, isize)]) -> Vec<u32> {
        let (i, j) = self.ij(id);
        let mut out = Vec::with_capacity(offsets.len());
        for &(di, dj) in offsets {
            let (ni, nj) = (i as isize + di, j as isize + dj);
            if ni < 0 || nj < 0 || ni >= self.nx as isize || nj >= self.ny as isize {
                continue;
            }
            let n = self.id(ni as usize, nj as usize);
            if self.classes[n].is_active() {
                out.push(n as u32);
            }
        }
        out
    }

    /// Active nodes within Euclidean distance `eps` of `node`, ascending id.
    pub fn neighborhood(&self, node: usize, eps: f64) -> Result<Neighborhood, GeometryError> {
        check_eps(eps, self.h)?;
        if node >= self.len() || !self.classes[node].is_active() {
            return Err(GeometryError::InactiveNode(node));
        }
        let offsets = self.ball_offsets(eps);
        let members = self.members_with(node, &offsets).into_iter().map(|m| m as usize).collect();
        Ok(Neighborhood { center: node, members, epsilon: eps })
    }

    /// Epsilon-balls for every active node.
    pub fn neighbor_table(&self, eps: f64) -> Result<NeighborTable, GeometryError> {
        check_eps(eps, self.h)?;
        let offsets = self.ball_offsets(eps);
        let members = (0..self.len())
            .map(|id| if self.classes[id].is_active() { self.members_with(id, &offsets) } else { Vec::new() })
            .collect();
        Ok(NeighborTable { epsilon: eps, members })
    }

    /// Bilinear interpolation of a nodal field at `p`. Returns `None` when a
    /// node carrying positive weight is exterior or off the lattice.
    pub fn interpolate(&self, values: &[f64], p: Point) -> Option<f64> {
        let axis = |x: f64, o: f64, n: usize| -> Option<(usize, f64)> {
            let f = (x - o) / self.h;
            let r = f.round();
            let (i, t) = if (f - r).abs() < 1e-9 { (r, 0.0) } else { (f.floor(), f - f.floor()) };
            if i < 0.0 || i >= n as f64 || (t > 0.0 && i + 1.0 >= n as f64) {
                return None;
            }
            Some((i as usize, t))
        };
        let (i, t) = axis(p[0], self.origin[0], self.nx)?;
        let (j, s) = if self.dim == 1 { (0, 0.0) } else { axis(p[1], self.origin[1], self.ny)? };
        let mut acc = 0.0;
        for (dj, wy) in [(0, 1.0 - s), (1, s)] {
            if wy == 0.0 {
                continue;
            }
            for (di, wx) in [(0, 1.0 - t), (1, t)] {
                if wx == 0.0 {
                    continue;
                }
                let id = self.id(i + di, j + dj);
                if !self.classes[id].is_active() {
                    return None;
                }
                acc += wx * wy * values[id];
            }
        }
        Some(acc)
    }
}

/// Builds the lattice discretization of `spec` with spacing `h`.
pub fn discretize(spec: &DomainSpec, h: f64) -> Result<GridDomain, GeometryError> {
    spec.shape.validate()?;
    if !(h > 0.0 && h.is_finite()) {
        return Err(GeometryError::InvalidSpacing { h, reason: "must be positive".into() });
    }
    let dim = spec.shape.dim();
    let (lo, hi) = spec.shape.bounding_box();
    for k in 0..dim {
        if hi[k] - lo[k] < 2.0 * h * (1.0 - 1e-12) {
            return Err(GeometryError::InvalidSpacing { h, reason: format!("bounding box extent along axis {k} is below 2h") });
        }
    }
    validate_rules(&spec.boundary_rules)?;

    let origin = [lo[0] - h, if dim == 1 { 0.0 } else { lo[1] - h }];
    let count = |k: usize| ((hi[k] - lo[k] + 2.0 * h) / h + LATTICE_TOL).floor() as usize + 1;
    let nx = count(0);
    let ny = if dim == 1 { 1 } else { count(1) };
    let n = nx * ny;

    let mut grid = GridDomain {
        dim,
        h,
        origin,
        nx,
        ny,
        classes: vec![NodeClass::Exterior; n],
        signed_distance: vec![0.0; n],
        normals: vec![[0.0; 2]; n],
        anchors: vec![[0.0; 2]; n],
    };
    for id in 0..n {
        let p = grid.point(id);
        let probe = spec.shape.probe(p);
        grid.signed_distance[id] = probe.signed_distance;
        grid.anchors[id] = p;
        let class = if probe.signed_distance > 0.5 * h {
            NodeClass::Exterior
        } else if probe.signed_distance < -0.5 * h {
            NodeClass::Interior
        } else {
            grid.anchors[id] = probe.closest;
            grid.normals[id] = probe.normal;
            match match_rule(&spec.boundary_rules, probe.closest)? {
                BoundaryKind::Dirichlet => NodeClass::Dirichlet,
                BoundaryKind::Neumann => NodeClass::Neumann,
            }
        };
        grid.classes[id] = class;
    }
    if grid.ids_with(NodeClass::Dirichlet).next().is_none() {
        return Err(GeometryError::EmptyDirichlet);
    }
    Ok(grid)
}

fn validate_rules(rules: &[BoundaryRule]) -> Result<(), GeometryError> {
    let last = rules.last().ok_or_else(|| GeometryError::InvalidRules("at least one rule is required".into()))?;
    if !last.region.is_constant() {
        return Err(GeometryError::InvalidRules("the last rule must be a constant catch-all".into()));
    }
    let v = last.region.eval([0.0, 0.0]).map_err(|source| GeometryError::Rule { rule: rules.len() - 1, source })?;
    if !(v > 0.5) {
        return Err(GeometryError::InvalidRules(format!("the catch-all rule evaluates to {v}, which never matches")));
    }
    Ok(())
}

fn match_rule(rules: &[BoundaryRule], p: Point) -> Result<BoundaryKind, GeometryError> {
    for (k, rule) in rules.iter().enumerate() {
        let v = rule.region.eval(p).map_err(|source| GeometryError::Rule { rule: k, source })?;
        if v > 0.5 {
            return Ok(rule.kind);
        }
    }
    unreachable!("catch-all rule validated")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypothesisMode {
    Strict,
    FlatOk,
}

/// Outcome of the boundary-convexity check used by the comparison lemmas.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct HypothesisReport {
    pub mode: HypothesisMode,
    pub holds: bool,
    /// `(z, x*)` node ids attaining the smallest inner product.
    pub worst_pair: Option<(usize, usize)>,
    pub worst_pair_points: Option<(Point, Point)>,
    pub worst_inner_product: f64,
    /// Pairs whose inner product is zero within tolerance.
    pub equality_pairs: usize,
    /// Direction found for the first `z` with equality pairs (flat-ok only).
    pub direction: Option<Point>,
    /// First `z` for which no admissible direction was found (flat-ok only).
    pub failing_z: Option<usize>,
}

const HYPOTHESIS_TOL: f64 = 1e-12;

/// Evaluates `<(x* - z)/|x* - z|, n(x*)>` over all pairs of an active node
/// `z` and a Neumann node `x*`, using boundary nodes' closest boundary
/// points as their positions.
pub fn check_domain_hypothesis(g: &GridDomain, mode: HypothesisMode) -> Result<HypothesisReport, GeometryError> {
    let neumann: Vec<usize> = g.ids_with(NodeClass::Neumann).collect();
    if neumann.is_empty() {
        return Err(GeometryError::NoNeumannNodes);
    }
    let mut worst = f64::INFINITY;
    let mut worst_pair = None;
    let mut equality_pairs = 0;
    let mut direction = None;
    let mut failing_z = None;
    let mut equal_normals: Vec<Point> = Vec::new();
    for z in g.active_ids() {
        let pz = g.anchor(z);
        equal_normals.clear();
        for &xs in &neumann {
            if xs == z {
                continue;
            }
            let px = g.anchor(xs);
            let Some(dir) = unit(sub(px, pz)) else { continue };
            if dist(px, pz) <= HYPOTHESIS_TOL {
                continue;
            }
            let n = g.normals[xs];
            let ip = dot(dir, n);
            if ip < worst {
                worst = ip;
                worst_pair = Some((z, xs));
            }
            if ip.abs() <= HYPOTHESIS_TOL {
                equality_pairs += 1;
                equal_normals.push(n);
            }
        }
        if mode == HypothesisMode::FlatOk && !equal_normals.is_empty() {
            match find_direction(&equal_normals) {
                Some(p) => {
                    direction.get_or_insert(p);
                }
                None => {
                    failing_z.get_or_insert(z);
                }
            }
        }
    }
    let holds = match mode {
        HypothesisMode::Strict => worst > HYPOTHESIS_TOL,
        HypothesisMode::FlatOk => worst >= -HYPOTHESIS_TOL && failing_z.is_none(),
    };
    Ok(HypothesisReport {
        mode,
        holds,
        worst_pair,
        worst_pair_points: worst_pair.map(|(z, x)| (g.anchor(z), g.anchor(x))),
        worst_inner_product: worst,
        equality_pairs,
        direction: if mode == HypothesisMode::FlatOk { direction } else { None },
        failing_z,
    })
}

/// Searches the mean normal and the coordinate directions for a unit `p`
/// with `<p, n> > 0` for all given normals.
fn find_direction(normals: &[Point]) -> Option<Point> {
    let mean = normals.iter().fold([0.0; 2], |a, n| [a[0] + n[0], a[1] + n[1]]);
    let mut candidates = Vec::with_capacity(5);
    if let Some(m) = unit(mean) {
        candidates.push(m);
    }
    candidates.extend([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]);
    candidates.into_iter().find(|p| normals.iter().all(|n| dot(*p, *n) > HYPOTHESIS_TOL))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use proptest::prelude::*;

    fn rule(src: &str, kind: BoundaryKind) -> BoundaryRule {
        BoundaryRule { region: parse(src).unwrap(), kind }
    }

    fn unit_square(rules: Vec<BoundaryRule>) -> DomainSpec {
        DomainSpec { shape: Shape::Rectangle { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] }, boundary_rules: rules }
    }

    fn left_right_dirichlet() -> Vec<BoundaryRule> {
        vec![
            rule("1 - 1000*abs(x)", BoundaryKind::Dirichlet),
            rule("1 - 1000*abs(x - 1)", BoundaryKind::Dirichlet),
            rule("1", BoundaryKind::Neumann),
        ]
    }

    #[test]
    fn coarse_square_counts() {
        let g = discretize(&unit_square(vec![rule("1", BoundaryKind::Dirichlet)]), 0.5).unwrap();
        assert_eq!(g.active_ids().count(), 9);
        assert_eq!(g.ids_with(NodeClass::Interior).count(), 1);
        assert_eq!(g.active_ids().filter(|&i| g.class(i).is_boundary()).count(), 8);
        let c = g.ids_with(NodeClass::Interior).next().unwrap();
        assert_eq!(g.point(c), [0.5, 0.5]);
    }

    #[test]
    fn disk_centre_and_rim() {
        let spec = DomainSpec {
            shape: Shape::Disk { center: vec![0.0, 0.0], radius: 1.0 },
            boundary_rules: vec![rule("x", BoundaryKind::Dirichlet), rule("1", BoundaryKind::Neumann)],
        };
        let g = discretize(&spec, 0.5).unwrap();
        let c = g.nearest_node([0.0, 0.0]).unwrap();
        assert_eq!(g.class(c), NodeClass::Interior);
        let r = g.nearest_node([1.0, 0.0]).unwrap();
        assert_eq!(g.class(r), NodeClass::Dirichlet);
        let l = g.nearest_node([-1.0, 0.0]).unwrap();
        assert_eq!(g.class(l), NodeClass::Neumann);
        assert_eq!(g.normal(l).unwrap(), [-1.0, 0.0]);
        assert_eq!(spec.shape.outward_normal([1.0, 0.0]), [1.0, 0.0]);
    }

    #[test]
    fn square_with_side_dirichlet_columns() {
        // 5x5 lattice by hand: columns x=0 and x=1 dirichlet (corners included,
        // rule order), y=0 and y=1 rows at x in {0.25, 0.5, 0.75} neumann.
        let g = discretize(&unit_square(left_right_dirichlet()), 0.25).unwrap();
        let mut dir = 0;
        let mut neu = 0;
        for id in g.active_ids() {
            let [x, y] = g.point(id);
            match g.class(id) {
                NodeClass::Dirichlet => {
                    dir += 1;
                    assert!(x == 0.0 || x == 1.0);
                }
                NodeClass::Neumann => {
                    neu += 1;
                    assert!(y == 0.0 || y == 1.0);
                    assert!(x > 0.0 && x < 1.0);
                    let want = if y == 0.0 { [0.0, -1.0] } else { [0.0, 1.0] };
                    assert_eq!(g.normal(id).unwrap(), want);
                }
                NodeClass::Interior => assert!(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0),
                NodeClass::Exterior => unreachable!(),
            }
        }
        assert_eq!((dir, neu), (10, 6));
        assert_eq!(g.ids_with(NodeClass::Interior).count(), 9);
    }

    #[test]
    fn empty_dirichlet_and_bad_shapes() {
        let spec = unit_square(vec![rule("1", BoundaryKind::Neumann)]);
        assert_eq!(discretize(&spec, 0.25).unwrap_err(), GeometryError::EmptyDirichlet);
        let bad = DomainSpec {
            shape: Shape::Rectangle { lo: vec![0.0, 1.0], hi: vec![1.0, 1.0] },
            boundary_rules: vec![rule("1", BoundaryKind::Dirichlet)],
        };
        assert!(matches!(discretize(&bad, 0.25), Err(GeometryError::DegenerateShape(_))));
        let cw = DomainSpec {
            shape: Shape::Polygon { vertices: vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]] },
            boundary_rules: vec![rule("1", BoundaryKind::Dirichlet)],
        };
        assert!(matches!(discretize(&cw, 0.1), Err(GeometryError::DegenerateShape(_))));
        let no_catch_all = unit_square(vec![rule("x", BoundaryKind::Dirichlet)]);
        assert!(matches!(discretize(&no_catch_all, 0.25), Err(GeometryError::InvalidRules(_))));
        let coarse = unit_square(vec![rule("1", BoundaryKind::Dirichlet)]);
        assert!(matches!(discretize(&coarse, 0.6), Err(GeometryError::InvalidSpacing { .. })));
    }

    fn line(h: f64) -> GridDomain {
        let spec = DomainSpec {
            shape: Shape::Rectangle { lo: vec![0.0], hi: vec![1.0] },
            boundary_rules: vec![rule("x", BoundaryKind::Dirichlet), rule("1", BoundaryKind::Neumann)],
        };
        discretize(&spec, h).unwrap()
    }

    #[test]
    fn one_dimensional_balls() {
        let g = line(0.5);
        let mid = g.nearest_node([0.5, 0.0]).unwrap();
        let left = g.nearest_node([0.0, 0.0]).unwrap();
        let right = g.nearest_node([1.0, 0.0]).unwrap();
        assert_eq!(g.neighborhood(mid, 1.0).unwrap().members, vec![left, mid, right]);
        assert_eq!(g.class(left), NodeClass::Neumann);
        assert_eq!(g.class(right), NodeClass::Dirichlet);
        assert!(matches!(g.neighborhood(mid, 0.5), Err(GeometryError::EpsTooSmall { .. })));
        // clamped at the neumann end: nothing below x = 0
        let g = line(0.25);
        let at = |x: f64| g.nearest_node([x, 0.0]).unwrap();
        assert_eq!(g.neighborhood(at(0.0), 0.5).unwrap().members, vec![at(0.0), at(0.25), at(0.5)]);
    }

    #[test]
    fn discrete_disk_has_13_members() {
        // lattice points with i^2 + j^2 <= 4: 1 + 4 + 4 + 4 = 13
        let brute = (-2i32..=2).flat_map(|i| (-2i32..=2).map(move |j| i * i + j * j)).filter(|&r| r <= 4).count();
        assert_eq!(brute, 13);
        let g = discretize(&unit_square(left_right_dirichlet()), 0.25).unwrap();
        let c = g.nearest_node([0.5, 0.5]).unwrap();
        let nb = g.neighborhood(c, 0.5).unwrap();
        assert_eq!(nb.members.len(), 13);
        assert!(nb.members.windows(2).all(|w| w[0] < w[1]));
        assert!(nb.members.contains(&c));
    }

    #[test]
    fn disk_normals_are_radial() {
        let spec = DomainSpec {
            shape: Shape::Disk { center: vec![0.0, 0.0], radius: 1.0 },
            boundary_rules: vec![rule("x", BoundaryKind::Dirichlet), rule("1", BoundaryKind::Neumann)],
        };
        let g = discretize(&spec, 1.0 / 32.0).unwrap();
        let mut seen = 0;
        for id in g.ids_with(NodeClass::Neumann) {
            let p = g.point(id);
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let n = g.normal(id).unwrap();
            assert!((n[0] - p[0] / r).abs() <= 1e-9 && (n[1] - p[1] / r).abs() <= 1e-9);
            assert!((norm(n) - 1.0).abs() <= 1e-12);
            seen += 1;
        }
        assert!(seen > 100);
        for id in g.active_ids() {
            assert!(g.signed_distance(id) <= 0.5 * g.h());
        }
    }

    #[test]
    fn interpolation_of_affine_field_is_exact() {
        let g = discretize(&unit_square(left_right_dirichlet()), 0.125).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|i| 2.0 * g.point(i)[0] - g.point(i)[1]).collect();
        let v = g.interpolate(&vals, [0.31, 0.77]).unwrap();
        assert!((v - (0.62 - 0.77)).abs() < 1e-14);
        assert_eq!(g.interpolate(&vals, [0.5, 0.5]), Some(0.5));
        // exactly on the boundary node line next to exterior nodes
        assert!(g.interpolate(&vals, [1.0, 0.3]).is_some());
        assert!(g.interpolate(&vals, [1.05, 0.3]).is_none());
    }

    fn l_shape() -> DomainSpec {
        DomainSpec {
            shape: Shape::Polygon {
                vertices: vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [1.0, 2.0], [0.0, 2.0]],
            },
            boundary_rules: vec![rule("1 - 1000*abs(x)", BoundaryKind::Dirichlet), rule("1", BoundaryKind::Neumann)],
        }
    }

    #[test]
    fn l_shape_classification_and_reentrant_normal() {
        let spec = l_shape();
        assert!(!spec.shape.is_convex());
        assert_eq!(spec.shape.signed_distance([1.5, 1.5]), 0.5);
        let n = spec.shape.outward_normal([0.5, 0.5]);
        assert!(n[0] < 0.0 || n[1] < 0.0);
        let g = discretize(&spec, 0.25).unwrap();
        assert_eq!(g.class(g.nearest_node([1.5, 1.5]).unwrap()), NodeClass::Exterior);
        assert_eq!(g.class(g.nearest_node([1.0, 1.0]).unwrap()), NodeClass::Neumann);
        assert_eq!(g.class(g.nearest_node([0.0, 1.0]).unwrap()), NodeClass::Dirichlet);
        assert_eq!(g.class(g.nearest_node([0.5, 0.5]).unwrap()), NodeClass::Interior);
    }

    #[test]
    fn hypothesis_on_disk_holds_strictly() {
        let spec = DomainSpec {
            shape: Shape::Disk { center: vec![0.0, 0.0], radius: 1.0 },
            boundary_rules: vec![rule("x", BoundaryKind::Dirichlet), rule("1", BoundaryKind::Neumann)],
        };
        let g = discretize(&spec, 0.125).unwrap();
        let r = check_domain_hypothesis(&g, HypothesisMode::Strict).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(r.worst_inner_product > 0.0);
    }

    #[test]
    fn hypothesis_on_square_needs_flat_mode() {
        let spec = unit_square(vec![rule("1 - 1000*abs(y - 1)", BoundaryKind::Neumann), rule("1", BoundaryKind::Dirichlet)]);
        let g = discretize(&spec, 0.25).unwrap();
        let strict = check_domain_hypothesis(&g, HypothesisMode::Strict).unwrap();
        assert!(!strict.holds);
        assert_eq!(strict.worst_inner_product, 0.0);
        let flat = check_domain_hypothesis(&g, HypothesisMode::FlatOk).unwrap();
        assert!(flat.holds, "{flat:?}");
        assert_eq!(flat.direction, Some([0.0, 1.0]));
    }

    #[test]
    fn hypothesis_fails_on_l_shape() {
        // x* = (1.5, 1) on the top of the lower arm has n = (0, 1); z = (0.5, 1.5)
        // in the upper arm gives <(1, -0.5)/|.|, (0, 1)> < 0.
        let d: [f64; 2] = [1.5 - 0.5, 1.0 - 1.5];
        assert!(d[1] / d[0].hypot(d[1]) < 0.0);
        let g = discretize(&l_shape(), 0.25).unwrap();
        for mode in [HypothesisMode::Strict, HypothesisMode::FlatOk] {
            let r = check_domain_hypothesis(&g, mode).unwrap();
            assert!(!r.holds);
            assert!(r.worst_inner_product < 0.0);
        }
    }

    #[test]
    fn hypothesis_requires_neumann_nodes() {
        let g = discretize(&unit_square(vec![rule("1", BoundaryKind::Dirichlet)]), 0.25).unwrap();
        assert_eq!(check_domain_hypothesis(&g, HypothesisMode::Strict), Err(GeometryError::NoNeumannNodes));
    }

    proptest! {
        #[test]
        fn balls_are_symmetric(h_inv in 4usize..9, ratio in 2.0f64..3.5, r in 0.6f64..1.2) {
            let h = 1.0 / h_inv as f64;
            let spec = DomainSpec {
                shape: Shape::Disk { center: vec![0.1, -0.2], radius: r },
                boundary_rules: vec![rule("x", BoundaryKind::Dirichlet), rule("1", BoundaryKind::Neumann)],
            };
            let Ok(g) = discretize(&spec, h) else { return Ok(()) };
            let eps = ratio * h;
            let t = g.neighbor_table(eps).unwrap();
            for a in g.active_ids() {
                prop_assert!(t.of(a).contains(&(a as u32)));
                for &b in t.of(a) {
                    prop_assert!(g.class(b as usize).is_active());
                    prop_assert!(dist(g.point(a), g.point(b as usize)) <= eps * (1.0 + 1e-9));
                    prop_assert!(t.of(b as usize).contains(&(a as u32)));
                }
                prop_assert!(t.of(a).len() >= 2);
            }
        }

        #[test]
        fn refinement_keeps_members(cx in 2usize..6, cy in 2usize..6) {
            let spec = unit_square(left_right_dirichlet());
            let coarse = discretize(&spec, 0.125).unwrap();
            let fine = discretize(&spec, 0.0625).unwrap();
            let eps = 0.25;
            let center = [cx as f64 * 0.125, cy as f64 * 0.125];
            let c = coarse.nearest_node(center).unwrap();
            let f = fine.nearest_node(center).unwrap();
            let fine_pts: Vec<Point> = fine.neighborhood(f, eps).unwrap().members.iter().map(|&m| fine.point(m)).collect();
            for m in coarse.neighborhood(c, eps).unwrap().members {
                let p = coarse.point(m);
                prop_assert!(fine_pts.iter().any(|q| dist(*q, p) < 1e-12));
            }
        }
    }
}
