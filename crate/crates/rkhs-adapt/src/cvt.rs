//! Bounded-polygon computational geometry and the CVT center-selection
//! algorithm: region construction around limit-set samples, Voronoi
//! partitions by perpendicular-bisector clipping, Lloyd iteration with
//! quantization energy, the cell-adjacency topology check, and Hausdorff
//! diagnostics.

use thiserror::Error;

pub type P2 = nalgebra::Vector2<f64>;

#[derive(Debug, Error)]
pub enum CvtError {
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("polyline is self-intersecting")]
    NotSimple,
    #[error("scale factors must satisfy scale_in < 1 < scale_out")]
    BadScales,
    #[error("generator {0} lies outside the hull")]
    GeneratorOutsideHull(usize),
    #[error("generators {0} and {1} coincide")]
    DuplicateGenerators(usize, usize),
    #[error("cell {0} does not meet the region")]
    EmptyIntersection(usize),
    #[error("point set is empty")]
    EmptySet,
    #[error("no width in the schedule produced an admissible tessellation")]
    ScheduleExhausted,
}

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn signed_area(verts: &[P2]) -> f64 {
    let n = verts.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = verts[i];
        let b = verts[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

/// Area centroid of a simple polygon with positive area.
fn polygon_centroid(verts: &[P2]) -> Option<P2> {
    let a = signed_area(verts);
    if a.abs() < f64::MIN_POSITIVE {
        return None;
    }
    let n = verts.len();
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let p = verts[i];
        let q = verts[(i + 1) % n];
        let w = p.x * q.y - q.x * p.y;
        cx += (p.x + q.x) * w;
        cy += (p.y + q.y) * w;
    }
    Some(P2::new(cx / (6.0 * a), cy / (6.0 * a)))
}

/// Signed integral of ||x - p||^2 over a polygon, by fan triangulation from
/// the first vertex with exact per-triangle second moments.
fn polygon_second_moment(verts: &[P2], p: P2) -> f64 {
    if verts.len() < 3 {
        return 0.0;
    }
    let mut total = 0.0;
    let v0 = verts[0] - p;
    for i in 1..verts.len() - 1 {
        let v1 = verts[i] - p;
        let v2 = verts[i + 1] - p;
        let area = 0.5 * (v1.x - v0.x) * (v2.y - v0.y) - 0.5 * (v1.y - v0.y) * (v2.x - v0.x);
        let s = v0.dot(&v0)
            + v1.dot(&v1)
            + v2.dot(&v2)
            + v0.dot(&v1)
            + v1.dot(&v2)
            + v0.dot(&v2);
        total += area * s / 6.0;
    }
    total
}

fn dedupe_loop(points: &[P2], eps: f64) -> Vec<P2> {
    let mut out: Vec<P2> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last().map_or(true, |q| (p - q).norm() > eps) {
            out.push(p);
        }
    }
    while out.len() >= 2 && (out[0] - out[out.len() - 1]).norm() <= eps {
        out.pop();
    }
    out
}

fn segments_cross(a: P2, b: P2, c: P2, d: P2) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

/// Simple polygon, counterclockwise, with positive signed area.
#[derive(Debug, Clone)]
pub struct Polygon {
    verts: Vec<P2>,
}

impl Polygon {
    pub fn new(verts: Vec<P2>) -> Result<Self, CvtError> {
        if verts.len() < 3 {
            return Err(CvtError::Degenerate("polygon needs at least 3 vertices".into()));
        }
        if verts.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(CvtError::Degenerate("non-finite vertex".into()));
        }
        if signed_area(&verts) <= 0.0 {
            return Err(CvtError::Degenerate("vertices must be counterclockwise".into()));
        }
        let poly = Self { verts };
        if !poly.is_simple() {
            return Err(CvtError::NotSimple);
        }
        Ok(poly)
    }

    /// Build from an ordered loop: consecutive duplicates and a duplicated
    /// closing point are dropped, and clockwise input is reversed.
    pub fn from_loop(points: &[P2]) -> Result<Self, CvtError> {
        let diam = loop_diameter(points);
        let mut verts = dedupe_loop(points, 1e-12 * diam.max(1e-300));
        if verts.len() < 3 {
            return Err(CvtError::Degenerate("fewer than 3 distinct vertices".into()));
        }
        if signed_area(&verts) < 0.0 {
            verts.reverse();
        }
        Self::new(verts)
    }

    /// O(m^2) proper-intersection test between non-adjacent edges.
    fn is_simple(&self) -> bool {
        let n = self.verts.len();
        for i in 0..n {
            let (a, b) = (self.verts[i], self.verts[(i + 1) % n]);
            for j in (i + 1)..n {
                // Skip edges sharing an endpoint.
                if j == i || (j + 1) % n == i || j == (i + 1) % n {
                    continue;
                }
                let (c, d) = (self.verts[j], self.verts[(j + 1) % n]);
                if segments_cross(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    pub fn verts(&self) -> &[P2] {
        &self.verts
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.verts)
    }

    pub fn centroid(&self) -> P2 {
        polygon_centroid(&self.verts).expect("positive area enforced at construction")
    }

    /// Even-odd ray-casting containment; boundary points count as inside.
    pub fn contains(&self, p: P2) -> bool {
        let n = self.verts.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            // On-segment check.
            if cross(a, b, p).abs() <= 1e-12 * self.diameter()
                && p.x >= a.x.min(b.x) - 1e-12
                && p.x <= a.x.max(b.x) + 1e-12
                && p.y >= a.y.min(b.y) - 1e-12
                && p.y <= a.y.max(b.y) + 1e-12
            {
                return true;
            }
            if (a.y > p.y) != (b.y > p.y) {
                let xint = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < xint {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn diameter(&self) -> f64 {
        loop_diameter(&self.verts)
    }

    /// Similarity scaling about `center` by factor `s` (> 0).
    pub fn scale_about(&self, center: P2, s: f64) -> Polygon {
        let verts = self.verts.iter().map(|v| center + (v - center) * s).collect();
        Polygon { verts }
    }

    /// Boundary resampled with `per_edge` points per edge, for Hausdorff
    /// comparisons between curves.
    pub fn boundary_samples(&self, per_edge: usize) -> Vec<P2> {
        let n = self.verts.len();
        let mut out = Vec::with_capacity(n * per_edge);
        for i in 0..n {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            for k in 0..per_edge {
                out.push(a + (b - a) * (k as f64 / per_edge as f64));
            }
        }
        out
    }
}

fn loop_diameter(points: &[P2]) -> f64 {
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    ((xmax - xmin).powi(2) + (ymax - ymin).powi(2)).sqrt()
}

/// Counterclockwise convex hull by monotone chain.
pub fn convex_hull(points: &[P2]) -> Result<Polygon, CvtError> {
    if points.len() < 3 {
        return Err(CvtError::Degenerate("need at least 3 points".into()));
    }
    let mut pts: Vec<P2> = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup_by(|a, b| (*a - *b).norm() == 0.0);
    let mut lower: Vec<P2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<P2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(CvtError::Degenerate("collinear input".into()));
    }
    Polygon::new(lower)
}

/// Convex Voronoi cell: vertices plus, per edge, the index of the neighboring
/// generator whose bisector created it (`None` for hull edges).
#[derive(Debug, Clone)]
pub struct ConvexCell {
    verts: Vec<P2>,
    /// labels[k] labels the edge verts[k] -> verts[k+1 mod n].
    labels: Vec<Option<usize>>,
}

impl ConvexCell {
    fn from_polygon(poly: &Polygon) -> Self {
        Self { verts: poly.verts().to_vec(), labels: vec![None; poly.verts().len()] }
    }

    pub fn verts(&self) -> &[P2] {
        &self.verts
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.verts)
    }

    pub fn is_empty(&self) -> bool {
        self.verts.len() < 3
    }

    pub fn contains(&self, p: P2, eps: f64) -> bool {
        let n = self.verts.len();
        (0..n).all(|i| cross(self.verts[i], self.verts[(i + 1) % n], p) >= -eps)
    }

    /// Keep the half-plane { x : normal . (x - anchor) <= 0 }.
    fn clip_halfplane(&mut self, anchor: P2, normal: P2, label: Option<usize>) {
        let side = |p: P2| normal.dot(&(p - anchor));
        let n = self.verts.len();
        let mut verts = Vec::with_capacity(n + 1);
        let mut labels = Vec::with_capacity(n + 1);
        for i in 0..n {
            let a = self.verts[i];
            let b = self.verts[(i + 1) % n];
            let la = self.labels[i];
            let sa = side(a);
            let sb = side(b);
            let a_in = sa <= 0.0;
            let b_in = sb <= 0.0;
            if a_in {
                verts.push(a);
                labels.push(la);
            }
            if a_in != b_in {
                let t = sa / (sa - sb);
                let x = a + (b - a) * t;
                verts.push(x);
                // Leaving the half-plane: the boundary continues along the
                // cut line. Entering: it continues along the original edge.
                labels.push(if a_in { label } else { la });
            }
        }
        // Drop zero-length edges: a vertex repeated to machine precision
        // gives the edge an arbitrary direction, which poisons downstream
        // clipping against this cell.
        let n = verts.len();
        if n > 0 {
            let scale = verts.iter().map(|v| v.norm()).fold(1.0_f64, f64::max);
            let tol = 1e-13 * scale;
            let mut vv = Vec::with_capacity(n);
            let mut ll = Vec::with_capacity(n);
            for i in 0..n {
                if (verts[(i + 1) % n] - verts[i]).norm() > tol {
                    vv.push(verts[i]);
                    ll.push(labels[i]);
                }
            }
            verts = vv;
            labels = ll;
        }
        self.verts = verts;
        self.labels = labels;
    }

    /// Edges attributed to the bisector with generator `j`, as segments.
    pub fn edges_with_label(&self, j: usize) -> Vec<(P2, P2)> {
        let n = self.verts.len();
        (0..n)
            .filter(|&k| self.labels[k] == Some(j))
            .map(|k| (self.verts[k], self.verts[(k + 1) % n]))
            .collect()
    }
}

/// Voronoi cells of the generators clipped to a convex hull polygon, with the
/// adjacency computed from shared bisector edges of positive length.
#[derive(Debug, Clone)]
pub struct VoronoiDiagram {
    pub generators: Vec<P2>,
    pub cells: Vec<ConvexCell>,
    pub adjacency: Vec<Vec<usize>>,
}

pub fn voronoi_cells(generators: &[P2], hull: &Polygon) -> Result<VoronoiDiagram, CvtError> {
    let n = generators.len();
    if n == 0 {
        return Err(CvtError::EmptySet);
    }
    let diam = hull.diameter();
    for i in 0..n {
        for j in (i + 1)..n {
            if (generators[i] - generators[j]).norm() <= 1e-12 * diam {
                return Err(CvtError::DuplicateGenerators(i, j));
            }
        }
    }
    for (i, g) in generators.iter().enumerate() {
        if !hull.contains(*g) {
            return Err(CvtError::GeneratorOutsideHull(i));
        }
    }
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        let mut cell = ConvexCell::from_polygon(hull);
        for j in 0..n {
            if j == i || cell.is_empty() {
                continue;
            }
            let anchor = (generators[i] + generators[j]) * 0.5;
            let normal = generators[j] - generators[i];
            cell.clip_halfplane(anchor, normal, Some(j));
        }
        cells.push(cell);
    }
    let eps_len = 1e-9 * diam;
    let mut adjacency = vec![Vec::new(); n];
    for i in 0..n {
        for k in 0..cells[i].verts.len() {
            if let Some(j) = cells[i].labels[k] {
                let a = cells[i].verts[k];
                let b = cells[i].verts[(k + 1) % cells[i].verts.len()];
                if (a - b).norm() > eps_len && !adjacency[i].contains(&j) {
                    adjacency[i].push(j);
                }
            }
        }
    }
    // Symmetrize: clipping order can leave one side with a sliver edge.
    for i in 0..n {
        let neigh = adjacency[i].clone();
        for j in neigh {
            if !adjacency[j].contains(&i) {
                adjacency[j].push(i);
            }
        }
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }
    Ok(VoronoiDiagram { generators: generators.to_vec(), cells, adjacency })
}

/// Simple polygon with an optional hole strictly inside it. `width` is the
/// Hausdorff distance between the two boundaries (the region's maximum
/// width), used by the topology check's length threshold.
#[derive(Debug, Clone)]
pub struct Region {
    pub outer: Polygon,
    pub hole: Option<Polygon>,
    width: f64,
}

impl Region {
    pub fn new(outer: Polygon, hole: Option<Polygon>) -> Result<Self, CvtError> {
        if let Some(h) = &hole {
            for &v in h.verts() {
                if !outer.contains(v) {
                    return Err(CvtError::Degenerate("hole vertex outside the outer polygon".into()));
                }
            }
            let no = outer.verts().len();
            let nh = h.verts().len();
            for i in 0..no {
                let (a, b) = (outer.verts()[i], outer.verts()[(i + 1) % no]);
                for j in 0..nh {
                    let (c, d) = (h.verts()[j], h.verts()[(j + 1) % nh]);
                    if segments_cross(a, b, c, d) {
                        return Err(CvtError::Degenerate("hole boundary crosses the outer boundary".into()));
                    }
                }
            }
        }
        let width = match &hole {
            Some(h) => boundary_hausdorff(&outer, h),
            None => outer.diameter(),
        };
        Ok(Self { outer, hole, width })
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn area(&self) -> f64 {
        self.outer.area() - self.hole.as_ref().map_or(0.0, |h| h.area())
    }

    pub fn contains(&self, p: P2) -> bool {
        self.outer.contains(p) && self.hole.as_ref().map_or(true, |h| !h.contains(p))
    }
}

fn boundary_hausdorff(a: &Polygon, b: &Polygon) -> f64 {
    let sa = a.boundary_samples(8);
    let sb = b.boundary_samples(8);
    hausdorff_distance(&sa, &sb).expect("nonempty boundaries")
}

/// Connect ordered closed-curve samples into a polygon, scale it about its
/// area centroid by `scale_out` and `scale_in`, and return the annular region
/// between the two copies.
pub fn build_region(samples: &[P2], scale_out: f64, scale_in: f64) -> Result<Region, CvtError> {
    if !(scale_in < 1.0 && 1.0 < scale_out) {
        return Err(CvtError::BadScales);
    }
    let base = Polygon::from_loop(samples)?;
    let c = base.centroid();
    let outer = base.scale_about(c, scale_out);
    let hole = base.scale_about(c, scale_in);
    Region::new(outer, Some(hole))
}

/// Axis-aligned rectangle band around open-curve samples, expanded by
/// `margin` on every side.
pub fn band_region(samples: &[P2], margin: f64) -> Result<Region, CvtError> {
    if samples.is_empty() {
        return Err(CvtError::EmptySet);
    }
    if !(margin > 0.0) {
        return Err(CvtError::BadScales);
    }
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in samples {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let outer = Polygon::new(vec![
        P2::new(xmin - margin, ymin - margin),
        P2::new(xmax + margin, ymin - margin),
        P2::new(xmax + margin, ymax + margin),
        P2::new(xmin - margin, ymax + margin),
    ])?;
    Region::new(outer, None)
}

/// Sutherland-Hodgman clip of a simple subject polygon against a convex
/// counterclockwise clip polygon.
fn clip_by_convex(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut poly = subject.to_vec();
    let m = clip.len();
    for e in 0..m {
        if poly.len() < 3 {
            return Vec::new();
        }
        let a = clip[e];
        let b = clip[(e + 1) % m];
        if (b - a).norm() <= 1e-13 * (a.norm().max(b.norm()).max(1.0)) {
            continue; // degenerate edge carries no half-plane
        }
        // Inside = left of the directed edge a -> b.
        let inside = |p: P2| cross(a, b, p) >= 0.0;
        let mut out = Vec::with_capacity(poly.len() + 2);
        for i in 0..poly.len() {
            let p = poly[i];
            let q = poly[(i + 1) % poly.len()];
            let pin = inside(p);
            let qin = inside(q);
            if pin {
                out.push(p);
            }
            if pin != qin {
                let dp = cross(a, b, p);
                let dq = cross(a, b, q);
                let t = dp / (dp - dq);
                out.push(p + (q - p) * t);
            }
        }
        poly = out;
    }
    poly
}

/// Area and signed-area-weighted centroid of cell ∩ region.
fn region_cell_measure(cell: &ConvexCell, region: &Region) -> (f64, P2) {
    let outer = clip_by_convex(region.outer.verts(), &cell.verts);
    let a_outer = if outer.len() >= 3 { signed_area(&outer) } else { 0.0 };
    let mut area = a_outer;
    let mut moment = if a_outer.abs() > 0.0 {
        polygon_centroid(&outer).map_or_else(|| P2::new(0.0, 0.0), |c| c * a_outer)
    } else {
        P2::new(0.0, 0.0)
    };
    if let Some(h) = &region.hole {
        let hole = clip_by_convex(h.verts(), &cell.verts);
        if hole.len() >= 3 {
            let a_hole = signed_area(&hole);
            area -= a_hole;
            if let Some(c) = polygon_centroid(&hole) {
                moment -= c * a_hole;
            }
        }
    }
    (area, moment)
}

/// Centroid of cell ∩ region under the indicator density of the region.
pub fn region_centroid(cell: &ConvexCell, region: &Region) -> Result<P2, CvtError> {
    let (area, moment) = region_cell_measure(cell, region);
    if area <= 1e-12 * region.area() {
        return Err(CvtError::EmptyIntersection(usize::MAX));
    }
    Ok(moment / area)
}

/// Integral of ||x - p||^2 over cell ∩ region.
fn region_cell_second_moment(cell: &ConvexCell, region: &Region, p: P2) -> f64 {
    let outer = clip_by_convex(region.outer.verts(), &cell.verts);
    let mut j = polygon_second_moment(&outer, p);
    if let Some(h) = &region.hole {
        let hole = clip_by_convex(h.verts(), &cell.verts);
        j -= polygon_second_moment(&hole, p);
    }
    j
}

#[derive(Debug, Clone)]
pub struct LloydResult {
    pub generators: Vec<P2>,
    /// Generator positions per iteration, starting with the initial set.
    pub trace: Vec<Vec<P2>>,
    /// Quantization energy per iteration, evaluated at the positions in
    /// `trace` before the centroid move.
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Lloyd iteration over the convex hull of the region's outer polygon, with
/// centroids taken under the region's indicator density. A cell that misses
/// the region keeps its previous generator for that index.
pub fn lloyd_run(
    generators0: &[P2],
    region: &Region,
    max_iters: usize,
    tol: f64,
) -> Result<LloydResult, CvtError> {
    let hull = convex_hull(region.outer.verts())?;
    let mut gens = generators0.to_vec();
    let mut trace = vec![gens.clone()];
    let mut energies = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..max_iters {
        let diagram = voronoi_cells(&gens, &hull)?;
        let mut energy = 0.0;
        let mut next = gens.clone();
        for (i, cell) in diagram.cells.iter().enumerate() {
            energy += region_cell_second_moment(cell, region, gens[i]);
            match region_centroid(cell, region) {
                Ok(c) => next[i] = c,
                Err(CvtError::EmptyIntersection(_)) => {}
                Err(e) => return Err(e),
            }
        }
        energies.push(energy);
        iterations += 1;
        let disp = gens
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0_f64, f64::max);
        gens = next;
        trace.push(gens.clone());
        if disp < tol {
            converged = true;
            break;
        }
    }
    Ok(LloydResult { generators: gens, trace, energies, iterations, converged })
}

/// Practical proxy for the admissible-tessellation condition: the adjacency
/// graph of cells meeting the region, with edges only where the shared
/// bisector has positive length inside the region, must be a single simple
/// cycle (annular region) or a simple path (band region).
pub fn topology_check(diagram: &VoronoiDiagram, region: &Region) -> bool {
    let n = diagram.cells.len();
    let area_floor = 1e-9 * region.area();
    let nodes: Vec<usize> = (0..n)
        .filter(|&i| region_cell_measure(&diagram.cells[i], region).0 > area_floor)
        .collect();
    if nodes.len() <= 1 {
        return true;
    }
    let idx_of: std::collections::HashMap<usize, usize> =
        nodes.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let len_floor = 1e-3 * region.width();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for (k, &i) in nodes.iter().enumerate() {
        for &j in &diagram.adjacency[i] {
            let Some(&kj) = idx_of.get(&j) else { continue };
            if kj <= k {
                continue;
            }
            let mut inside_len = 0.0;
            for (a, b) in diagram.cells[i].edges_with_label(j) {
                inside_len += segment_length_inside(region, a, b);
            }
            for (a, b) in diagram.cells[j].edges_with_label(i) {
                inside_len = inside_len.max(segment_length_inside(region, a, b));
            }
            if inside_len > len_floor {
                edges.push((k, kj));
            }
        }
    }
    let m = nodes.len();
    let mut degree = vec![0usize; m];
    let mut adj = vec![Vec::new(); m];
    for &(a, b) in &edges {
        degree[a] += 1;
        degree[b] += 1;
        adj[a].push(b);
        adj[b].push(a);
    }
    // Connectivity.
    let mut seen = vec![false; m];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                stack.push(w);
            }
        }
    }
    if count != m {
        return false;
    }
    let deg1 = degree.iter().filter(|&&d| d == 1).count();
    let deg2 = degree.iter().filter(|&&d| d == 2).count();
    let cycle = deg2 == m && edges.len() == m;
    let path = deg1 == 2 && deg2 == m - 2 && edges.len() == m - 1;
    cycle || path
}

/// Length of the portion of segment [a, b] inside the region, exact up to
/// the intersection parameters with the region boundaries.
fn segment_length_inside(region: &Region, a: P2, b: P2) -> f64 {
    let dir = b - a;
    let len = dir.norm();
    if len == 0.0 {
        return 0.0;
    }
    let mut ts = vec![0.0, 1.0];
    let mut collect = |poly: &Polygon| {
        let n = poly.verts().len();
        for i in 0..n {
            let c = poly.verts()[i];
            let d = poly.verts()[(i + 1) % n];
            let denom = cross(P2::new(0.0, 0.0), dir, d - c);
            if denom.abs() < f64::MIN_POSITIVE {
                continue;
            }
            let t = ((c - a).x * (d - c).y - (c - a).y * (d - c).x) / denom;
            let u = ((c - a).x * dir.y - (c - a).y * dir.x) / denom;
            if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
                ts.push(t);
            }
        }
    };
    collect(&region.outer);
    if let Some(h) = &region.hole {
        collect(h);
    }
    ts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut total = 0.0;
    for w in ts.windows(2) {
        let mid = a + dir * (0.5 * (w[0] + w[1]));
        if region.contains(mid) {
            total += (w[1] - w[0]) * len;
        }
    }
    total
}

/// Hausdorff distance between finite nonempty point sets.
pub fn hausdorff_distance(a: &[P2], b: &[P2]) -> Result<f64, CvtError> {
    if a.is_empty() || b.is_empty() {
        return Err(CvtError::EmptySet);
    }
    let directed = |from: &[P2], to: &[P2]| {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0_f64, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

#[derive(Debug, Clone)]
pub struct Algorithm1Attempt {
    pub scale_out: f64,
    pub scale_in: f64,
    pub width: f64,
    pub lloyd_iterations: usize,
    pub admissible: bool,
}

#[derive(Debug, Clone)]
pub struct Algorithm1Output {
    pub centers: Vec<P2>,
    pub region: Region,
    pub lloyd: LloydResult,
    pub attempts: Vec<Algorithm1Attempt>,
}

#[derive(Debug, Clone, Copy)]
pub struct Algorithm1Options {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for Algorithm1Options {
    fn default() -> Self {
        Self { max_iters: 2000, tol: 1e-7, seed: 0 }
    }
}

/// Deterministic initial generators: equal-arc-length points on the sample
/// loop itself, so the seeds are ring-ordered along the mid-line of the
/// region; seeded-random fallback inside the hull if any seed escapes it.
fn seed_generators(
    samples: &[P2],
    hull: &Polygon,
    n: usize,
    seed: u64,
) -> Vec<P2> {
    use rand::{Rng, SeedableRng};
    let m = samples.len();
    let mut cum = vec![0.0];
    for i in 0..m {
        cum.push(cum[i] + (samples[(i + 1) % m] - samples[i]).norm());
    }
    let total = *cum.last().unwrap();
    let mut ring = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let target = total * k as f64 / n as f64;
        while seg + 1 < m && cum[seg + 1] < target {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let frac = if len > 0.0 { (target - cum[seg]) / len } else { 0.0 };
        ring.push(samples[seg] + (samples[(seg + 1) % m] - samples[seg]) * frac);
    }
    if total > 0.0 && ring.iter().all(|p| hull.contains(*p)) {
        return ring;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in hull.verts() {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = P2::new(rng.gen_range(xmin..xmax), rng.gen_range(ymin..ymax));
        if hull.contains(p) {
            out.push(p);
        }
    }
    out
}

/// CVT-based kernel center selection: build the region at the current width,
/// seed generators, run Lloyd, check the tessellation type; on failure shrink
/// the width (next schedule entry) and retry.
pub fn algorithm1(
    samples: &[P2],
    n_m: usize,
    width_schedule: &[(f64, f64)],
    opts: Algorithm1Options,
) -> Result<Algorithm1Output, CvtError> {
    if n_m == 0 || width_schedule.is_empty() {
        return Err(CvtError::Degenerate("need n_m >= 1 and a nonempty schedule".into()));
    }
    let mut attempts = Vec::new();
    for &(scale_out, scale_in) in width_schedule {
        let region = build_region(samples, scale_out, scale_in)?;
        let hull = convex_hull(region.outer.verts())?;
        let gens0 = seed_generators(samples, &hull, n_m, opts.seed);
        let lloyd = lloyd_run(&gens0, &region, opts.max_iters, opts.tol)?;
        let diagram = voronoi_cells(&lloyd.generators, &hull)?;
        let admissible = topology_check(&diagram, &region);
        attempts.push(Algorithm1Attempt {
            scale_out,
            scale_in,
            width: region.width(),
            lloyd_iterations: lloyd.iterations,
            admissible,
        });
        if admissible {
            return Ok(Algorithm1Output { centers: lloyd.generators.clone(), region, lloyd, attempts });
        }
    }
    Err(CvtError::ScheduleExhausted)
}
