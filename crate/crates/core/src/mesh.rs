//! Quadtree-refined quadrilateral meshes over a parametric root grid.
//!
//! Cells live on an integer lattice: a root cell spans `2^MAX_LEVEL` lattice units
//! per side and a cell of level `l` spans `2^(MAX_LEVEL - l)`. Local element
//! coordinates `(s, t)` run over `[-1, 1]²` with corners numbered counter-clockwise
//! from `(-1, -1)`; edge `k` joins corner `k` to corner `k + 1`.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::sync::Arc;

use nalgebra::{Matrix2, Point2, Vector2};
use rayon::prelude::*;

use crate::elasticity::UnitNormal;
use crate::error::{Error, Result};
use crate::geometry::GeometryMap;
use crate::quadrature::{gauss_legendre, tensor_rule};

pub const MAX_LEVEL: u8 = 20;
const ROOT: i64 = 1 << MAX_LEVEL;

const CORNERS: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub level: u8,
    pub i: i64,
    pub j: i64,
}

impl CellKey {
    fn size(&self) -> i64 {
        ROOT >> self.level
    }

    fn children(&self) -> [CellKey; 4] {
        let h = self.size() / 2;
        let l = self.level + 1;
        [
            CellKey { level: l, i: self.i, j: self.j },
            CellKey { level: l, i: self.i + h, j: self.j },
            CellKey { level: l, i: self.i + h, j: self.j + h },
            CellKey { level: l, i: self.i, j: self.j + h },
        ]
    }

    fn corner_lattice(&self) -> [(i64, i64); 4] {
        let s = self.size();
        [
            (self.i, self.j),
            (self.i + s, self.j),
            (self.i + s, self.j + s),
            (self.i, self.j + s),
        ]
    }

    /// Lattice cell just across edge `side`, next to the edge midpoint.
    fn across(&self, side: usize) -> (i64, i64) {
        let s = self.size();
        let h = s / 2;
        match side {
            0 => (self.i + h, self.j - 1),
            1 => (self.i + s, self.j + h),
            2 => (self.i + h, self.j + s),
            _ => (self.i - 1, self.j + h),
        }
    }

    fn edge_midpoint(&self, side: usize) -> (i64, i64) {
        let c = self.corner_lattice();
        let (a, b) = (c[side], c[(side + 1) % 4]);
        ((a.0 + b.0) / 2, (a.1 + b.1) / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub key: CellKey,
    /// Index of the root cell the element descends from.
    pub root: usize,
    pub nodes: [usize; 4],
}

impl Element {
    pub fn level(&self) -> u8 {
        self.key.level
    }
}

/// Hanging node tied to the endpoints of the coarse edge it sits on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HangingConstraint {
    pub slave: usize,
    pub masters: [usize; 2],
    pub weights: [f64; 2],
}

/// An element edge on the domain boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub element: usize,
    pub side: usize,
    pub tag: String,
}

/// Shape functions and geometry of an element at one local point.
#[derive(Debug, Clone, Copy)]
pub struct ShapeEval {
    pub n: [f64; 4],
    pub dn_dx: [Vector2<f64>; 4],
    pub x: Point2<f64>,
    pub det_j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub s: f64,
    pub t: f64,
    pub x: Point2<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePoint {
    pub s: f64,
    pub t: f64,
    pub x: Point2<f64>,
    /// Arc-length weight.
    pub weight: f64,
    pub normal: UnitNormal,
}

/// Vertex patch: the support of the constrained shape function of a vertex node.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub vertex: usize,
    pub elements: Vec<usize>,
    /// Indices into [`QuadtreeMesh::boundary`].
    pub boundary_edges: Vec<usize>,
    pub center: Point2<f64>,
    pub half_size: f64,
}

#[derive(Debug, Clone)]
pub struct QuadtreeMesh {
    geometry: Arc<GeometryMap>,
    nx: usize,
    ny: usize,
    active_roots: Vec<bool>,
    elements: Vec<Element>,
    nodes: Vec<Point2<f64>>,
    lattice: Vec<(i64, i64)>,
    hanging: Vec<HangingConstraint>,
    hanging_of: Vec<Option<usize>>,
    boundary: Vec<BoundaryEdge>,
}

/// Union of root cells; refinement preserves membership.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Region {
    roots: BTreeSet<usize>,
}

impl Region {
    pub fn from_roots(roots: impl IntoIterator<Item = usize>) -> Self {
        Self { roots: roots.into_iter().collect() }
    }

    pub fn roots(&self) -> impl Iterator<Item = usize> + '_ {
        self.roots.iter().copied()
    }

    pub fn contains_root(&self, root: usize) -> bool {
        self.roots.contains(&root)
    }

    pub fn contains_element(&self, mesh: &QuadtreeMesh, e: usize) -> bool {
        self.roots.contains(&mesh.elements[e].root)
    }

    pub fn elements(&self, mesh: &QuadtreeMesh) -> Vec<usize> {
        (0..mesh.num_elements()).filter(|&e| self.contains_element(mesh, e)).collect()
    }

    pub fn area(&self, mesh: &QuadtreeMesh) -> f64 {
        self.elements(mesh).into_iter().map(|e| mesh.element_area(e)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

/// Structured `nx × ny` mesh of root cells at level 0.
pub fn build_initial_mesh(geometry: GeometryMap, nx: usize, ny: usize) -> Result<QuadtreeMesh> {
    QuadtreeMesh::new(Arc::new(geometry), nx, ny)
}

impl QuadtreeMesh {
    pub fn new(geometry: Arc<GeometryMap>, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidInput(format!("root grid {nx}×{ny} is empty")));
        }
        geometry.check_grid(nx, ny)?;
        let mut active_roots = vec![false; nx * ny];
        let mut leaves = HashSet::new();
        for rj in 0..ny {
            for ri in 0..nx {
                let xi = (ri as f64 + 0.5) / nx as f64;
                let eta = (rj as f64 + 0.5) / ny as f64;
                if geometry.contains_param(xi, eta) {
                    active_roots[ri + nx * rj] = true;
                    leaves.insert(CellKey { level: 0, i: ri as i64 * ROOT, j: rj as i64 * ROOT });
                }
            }
        }
        if leaves.is_empty() {
            return Err(Error::InvalidGeometry("no root cell lies inside the domain".into()));
        }
        Self::from_leaves(geometry, nx, ny, active_roots, leaves)
    }

    pub fn geometry(&self) -> &GeometryMap {
        &self.geometry
    }

    pub fn root_grid(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Root index of root cell `(ri, rj)`.
    pub fn root_index(&self, ri: usize, rj: usize) -> usize {
        ri + self.nx * rj
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, e: usize) -> &Element {
        &self.elements[e]
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn nodes(&self) -> &[Point2<f64>] {
        &self.nodes
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn hanging_constraints(&self) -> &[HangingConstraint] {
        &self.hanging
    }

    pub fn is_hanging(&self, node: usize) -> bool {
        self.hanging_of[node].is_some()
    }

    pub fn boundary(&self) -> &[BoundaryEdge] {
        &self.boundary
    }

    /// Boundary edges carrying `tag`.
    pub fn boundary_with_tag<'a>(&'a self, tag: &'a str) -> impl Iterator<Item = &'a BoundaryEdge> {
        self.boundary.iter().filter(move |b| b.tag == tag)
    }

    /// Distinct boundary tags in sorted order.
    pub fn boundary_tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self.boundary.iter().map(|b| b.tag.clone()).collect();
        tags.sort();
        tags.dedup();
        tags
    }

    /// Nodes lying on boundary edges with `tag`, sorted.
    pub fn nodes_on_tag(&self, tag: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for b in self.boundary_with_tag(tag) {
            let el = &self.elements[b.element];
            out.push(el.nodes[b.side]);
            out.push(el.nodes[(b.side + 1) % 4]);
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Outward unit normal at each node of the `tag` boundary, averaged over the
    /// edges meeting there.
    pub fn node_normals(&self, tag: &str) -> BTreeMap<usize, UnitNormal> {
        let mut acc: BTreeMap<usize, Vector2<f64>> = BTreeMap::new();
        for b in self.boundary_with_tag(tag) {
            let el = &self.elements[b.element];
            let ends = Self::edge_corners(b.side);
            for (k, &(s, t)) in ends.iter().enumerate() {
                let n = self.edge_normal(b.element, b.side, s, t);
                *acc.entry(el.nodes[(b.side + k) % 4]).or_insert_with(Vector2::zeros) += n.as_vector();
            }
        }
        acc.into_iter()
            .map(|(node, v)| (node, UnitNormal::new(v.x, v.y).expect("boundary normal")))
            .collect()
    }

    /// Outward normal of edge `side` at local point `(s, t)` on that edge.
    pub fn edge_normal(&self, e: usize, side: usize, s: f64, t: f64) -> UnitNormal {
        let (col, sign) = match side {
            0 => (0, 1.0),
            1 => (1, 1.0),
            2 => (0, -1.0),
            _ => (1, -1.0),
        };
        let tangent = self.element_jacobian(e, s, t).column(col) * sign;
        UnitNormal::new(tangent.y, -tangent.x).expect("non-degenerate edge")
    }

    /// Closest node to `p`, if within `tol`.
    pub fn find_node(&self, p: &Point2<f64>, tol: f64) -> Option<usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(k, x)| (k, (x - p).norm()))
            .filter(|&(_, d)| d <= tol)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    }

    /// Expands a node into free (non-hanging) nodes with interpolation weights.
    pub fn constraint_expansion(&self, node: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::with_capacity(2);
        let mut stack = vec![(node, 1.0)];
        while let Some((n, w)) = stack.pop() {
            match self.hanging_of[n] {
                None => match out.iter_mut().find(|(m, _)| *m == n) {
                    Some(entry) => entry.1 += w,
                    None => out.push((n, w)),
                },
                Some(c) => {
                    let h = &self.hanging[c];
                    stack.push((h.masters[0], w * h.weights[0]));
                    stack.push((h.masters[1], w * h.weights[1]));
                }
            }
        }
        out.sort_by_key(|p| p.0);
        out
    }

    /// Parametric coordinates of local point `(s, t)` of element `e`.
    pub fn element_param(&self, e: usize, s: f64, t: f64) -> (f64, f64) {
        let k = &self.elements[e].key;
        let scale_x = 1.0 / (self.nx as f64 * ROOT as f64);
        let scale_y = 1.0 / (self.ny as f64 * ROOT as f64);
        let size = k.size() as f64;
        (
            (k.i as f64 + 0.5 * (s + 1.0) * size) * scale_x,
            (k.j as f64 + 0.5 * (t + 1.0) * size) * scale_y,
        )
    }

    pub fn element_point(&self, e: usize, s: f64, t: f64) -> Point2<f64> {
        let (xi, eta) = self.element_param(e, s, t);
        self.geometry.map(xi, eta)
    }

    /// `∂x/∂(s, t)` as columns.
    pub fn element_jacobian(&self, e: usize, s: f64, t: f64) -> Matrix2<f64> {
        let (xi, eta) = self.element_param(e, s, t);
        let size = self.elements[e].key.size() as f64;
        let dxi = 0.5 * size / (self.nx as f64 * ROOT as f64);
        let deta = 0.5 * size / (self.ny as f64 * ROOT as f64);
        let g = self.geometry.jacobian(xi, eta);
        Matrix2::from_columns(&[g.column(0) * dxi, g.column(1) * deta])
    }

    /// Shape functions at `(s, t)`; Jacobians are positive on every constructed mesh.
    pub fn shape_eval(&self, e: usize, s: f64, t: f64) -> ShapeEval {
        let (n, dn_ds) = bilinear(s, t);
        let jac = self.element_jacobian(e, s, t);
        let det_j = jac.determinant();
        debug_assert!(det_j > 0.0);
        let inv_t = jac.try_inverse().expect("positive Jacobian").transpose();
        let dn_dx = dn_ds.map(|g| inv_t * g);
        ShapeEval { n, dn_dx, x: self.element_point(e, s, t), det_j }
    }

    /// Tensor Gauss rule with `order` points per direction mapped onto element `e`.
    pub fn element_quadrature(&self, e: usize, order: usize) -> Result<Vec<QuadPoint>> {
        if order == 0 {
            return Err(Error::InvalidInput("quadrature order must be at least 1".into()));
        }
        tensor_rule(order)
            .map(|((s, t), w)| {
                let det = self.element_jacobian(e, s, t).determinant();
                if !(det > 0.0) {
                    return Err(Error::NonPositiveJacobian { element: e, det });
                }
                Ok(QuadPoint { s, t, x: self.element_point(e, s, t), weight: w * det })
            })
            .collect()
    }

    /// Gauss rule along edge `side` of element `e` with outward normals.
    pub fn edge_quadrature(&self, e: usize, side: usize, order: usize) -> Vec<EdgePoint> {
        gauss_legendre(order)
            .iter()
            .map(|&(l, w)| {
                let (s, t, col) = match side {
                    0 => (l, -1.0, 0),
                    1 => (1.0, l, 1),
                    2 => (-l, 1.0, 0),
                    _ => (-1.0, -l, 1),
                };
                let len = self.element_jacobian(e, s, t).column(col).norm();
                EdgePoint {
                    s,
                    t,
                    x: self.element_point(e, s, t),
                    weight: w * len,
                    normal: self.edge_normal(e, side, s, t),
                }
            })
            .collect()
    }

    /// Local coordinates of the corner nodes of edge `side`, start then end.
    pub fn edge_corners(side: usize) -> [(f64, f64); 2] {
        [CORNERS[side], CORNERS[(side + 1) % 4]]
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let order = if self.geometry.is_affine() { 2 } else { 6 };
        self.element_quadrature(e, order)
            .map(|q| q.iter().map(|p| p.weight).sum())
            .unwrap_or(0.0)
    }

    /// Characteristic element size `sqrt(area)`.
    pub fn element_size(&self, e: usize) -> f64 {
        self.element_area(e).sqrt()
    }

    pub fn element_centroid(&self, e: usize) -> Point2<f64> {
        self.element_point(e, 0.0, 0.0)
    }

    /// Elements edge-adjacent across `side` of `e`.
    pub fn neighbors(&self, e: usize, side: usize) -> Vec<usize> {
        let index: HashMap<CellKey, usize> =
            self.elements.iter().enumerate().map(|(k, el)| (el.key, k)).collect();
        self.neighbors_with(&index, e, side)
    }

    /// `neighbors` for every element and side at once.
    pub fn neighbor_table(&self) -> Vec<[Vec<usize>; 4]> {
        let index: HashMap<CellKey, usize> =
            self.elements.iter().enumerate().map(|(k, el)| (el.key, k)).collect();
        (0..self.elements.len())
            .into_par_iter()
            .map(|e| std::array::from_fn(|side| self.neighbors_with(&index, e, side)))
            .collect()
    }

    fn neighbors_with(&self, index: &HashMap<CellKey, usize>, e: usize, side: usize) -> Vec<usize> {
        let key = self.elements[e].key;
        let (ci, cj) = key.across(side);
        if !self.cell_in_domain(ci, cj) {
            return Vec::new();
        }
        let Some(n) = find_leaf(|k| index.contains_key(k), ci, cj) else {
            return Vec::new();
        };
        if n.level <= key.level {
            return vec![index[&n]];
        }
        // Neighbour is finer: collect the leaves along the shared edge.
        let mut out = Vec::new();
        let s = key.size();
        let mut offset = 0;
        while offset < s {
            let (pi, pj) = match side {
                0 => (key.i + offset, key.j - 1),
                1 => (key.i + s, key.j + offset),
                2 => (key.i + offset, key.j + s),
                _ => (key.i - 1, key.j + offset),
            };
            let leaf = find_leaf(|k| index.contains_key(k), pi, pj).unwrap();
            out.push(index[&leaf]);
            offset += leaf.size();
        }
        out
    }

    /// Whether edge-adjacent elements everywhere differ by at most one level.
    pub fn satisfies_one_level_rule(&self) -> bool {
        let index: HashMap<CellKey, usize> =
            self.elements.iter().enumerate().map(|(k, el)| (el.key, k)).collect();
        (0..self.elements.len()).all(|e| {
            (0..4).all(|side| {
                self.neighbors_with(&index, e, side).iter().all(|&n| {
                    (self.elements[n].level() as i32 - self.elements[e].level() as i32).abs() <= 1
                })
            })
        })
    }

    pub fn uniformly_refined(&self) -> QuadtreeMesh {
        self.refine_by_depth(&vec![1; self.elements.len()])
    }

    /// Splits every marked element once and restores the one-level rule.
    pub fn refine(&self, marked: &[usize]) -> QuadtreeMesh {
        let mut depth = vec![0u8; self.elements.len()];
        for &e in marked {
            depth[e] = 1;
        }
        self.refine_by_depth(&depth)
    }

    /// Splits element `e` recursively `depth[e]` times (capped at [`MAX_LEVEL`]),
    /// then restores the one-level rule.
    pub fn refine_by_depth(&self, depth: &[u8]) -> QuadtreeMesh {
        let mut leaves: HashSet<CellKey> = self.elements.iter().map(|e| e.key).collect();
        let mut queue: Vec<(CellKey, u8)> = self
            .elements
            .iter()
            .zip(depth)
            .filter(|(_, &d)| d > 0)
            .map(|(e, &d)| (e.key, (e.key.level + d).min(MAX_LEVEL)))
            .collect();
        while let Some((key, target)) = queue.pop() {
            if key.level < target && leaves.remove(&key) {
                for c in key.children() {
                    leaves.insert(c);
                    queue.push((c, target));
                }
            }
        }
        self.balance(&mut leaves);
        Self::from_leaves(
            self.geometry.clone(),
            self.nx,
            self.ny,
            self.active_roots.clone(),
            leaves,
        )
        .expect("refinement of a valid mesh stays valid")
    }

    fn balance(&self, leaves: &mut HashSet<CellKey>) {
        loop {
            let mut split = HashSet::new();
            for key in leaves.iter() {
                if key.level < 2 {
                    continue;
                }
                for side in 0..4 {
                    let (ci, cj) = key.across(side);
                    if !self.cell_in_domain(ci, cj) {
                        continue;
                    }
                    if let Some(n) = find_leaf(|k| leaves.contains(k), ci, cj) {
                        if n.level + 1 < key.level {
                            split.insert(n);
                        }
                    }
                }
            }
            if split.is_empty() {
                return;
            }
            for key in split {
                leaves.remove(&key);
                leaves.extend(key.children());
            }
        }
    }

    fn cell_in_domain(&self, ci: i64, cj: i64) -> bool {
        if ci < 0 || cj < 0 || ci >= self.nx as i64 * ROOT || cj >= self.ny as i64 * ROOT {
            return false;
        }
        self.active_roots[(ci / ROOT) as usize + self.nx * (cj / ROOT) as usize]
    }

    fn from_leaves(
        geometry: Arc<GeometryMap>,
        nx: usize,
        ny: usize,
        active_roots: Vec<bool>,
        leaves: HashSet<CellKey>,
    ) -> Result<Self> {
        let mut keys: Vec<(usize, u64, CellKey)> = leaves
            .into_iter()
            .map(|k| {
                let root = (k.i / ROOT) as usize + nx * (k.j / ROOT) as usize;
                (root, morton(k.i % ROOT, k.j % ROOT), k)
            })
            .collect();
        keys.sort_unstable_by_key(|&(r, m, k)| (r, m, k.level));

        let mut mesh = QuadtreeMesh {
            geometry,
            nx,
            ny,
            active_roots,
            elements: Vec::with_capacity(keys.len()),
            nodes: Vec::new(),
            lattice: Vec::new(),
            hanging: Vec::new(),
            hanging_of: Vec::new(),
            boundary: Vec::new(),
        };
        let mut node_index: HashMap<(i64, i64), usize> = HashMap::new();
        for &(root, _, key) in &keys {
            let mut nodes = [0; 4];
            for (c, lat) in key.corner_lattice().into_iter().enumerate() {
                nodes[c] = *node_index.entry(lat).or_insert_with(|| {
                    mesh.lattice.push(lat);
                    mesh.lattice.len() - 1
                });
            }
            mesh.elements.push(Element { key, root, nodes });
        }
        mesh.nodes = mesh.lattice.iter().map(|&l| mesh.lattice_point(l)).collect();
        mesh.hanging_of = vec![None; mesh.nodes.len()];

        for e in 0..mesh.elements.len() {
            let el = mesh.elements[e].clone();
            for side in 0..4 {
                let (ci, cj) = el.key.across(side);
                if !mesh.cell_in_domain(ci, cj) {
                    let (s, t) = [(0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)][side];
                    let (xi, eta) = mesh.element_param(e, s, t);
                    let tag = mesh.geometry.boundary_tag(xi, eta);
                    mesh.boundary.push(BoundaryEdge { element: e, side, tag });
                    continue;
                }
                if let Some(&mid) = node_index.get(&el.key.edge_midpoint(side)) {
                    if mesh.hanging_of[mid].is_none() {
                        mesh.hanging_of[mid] = Some(mesh.hanging.len());
                        mesh.hanging.push(HangingConstraint {
                            slave: mid,
                            masters: [el.nodes[side], el.nodes[(side + 1) % 4]],
                            weights: [0.5, 0.5],
                        });
                    }
                }
            }
        }
        for e in 0..mesh.elements.len() {
            for &(s, t) in &CORNERS {
                let det = mesh.element_jacobian(e, s * 0.999, t * 0.999).determinant();
                if !(det > 0.0) {
                    return Err(Error::NonPositiveJacobian { element: e, det });
                }
            }
        }
        Ok(mesh)
    }

    fn lattice_point(&self, (i, j): (i64, i64)) -> Point2<f64> {
        let xi = i as f64 / (self.nx as f64 * ROOT as f64);
        let eta = j as f64 / (self.ny as f64 * ROOT as f64);
        self.geometry.map(xi, eta)
    }

    /// One patch per non-hanging node.
    pub fn build_patches(&self) -> Vec<Patch> {
        let mut support: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for (e, el) in self.elements.iter().enumerate() {
            for &n in &el.nodes {
                for (m, _) in self.constraint_expansion(n) {
                    if support[m].last() != Some(&e) {
                        support[m].push(e);
                    }
                }
            }
        }
        let mut edges_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (k, b) in self.boundary.iter().enumerate() {
            edges_of.entry(b.element).or_default().push(k);
        }
        support
            .into_iter()
            .enumerate()
            .filter(|(n, _)| !self.is_hanging(*n))
            .map(|(vertex, mut elements)| {
                elements.sort_unstable();
                elements.dedup();
                let center = self.nodes[vertex];
                let mut half_size: f64 = 0.0;
                let mut boundary_edges = Vec::new();
                for &e in &elements {
                    for &n in &self.elements[e].nodes {
                        let d = self.nodes[n] - center;
                        half_size = half_size.max(d.x.abs()).max(d.y.abs());
                    }
                    if let Some(list) = edges_of.get(&e) {
                        boundary_edges.extend_from_slice(list);
                    }
                }
                Patch { vertex, elements, boundary_edges, center, half_size }
            })
            .collect()
    }

    /// Writes node, element and constraint tables, one record per line.
    pub fn write_tables<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# nodes: id x y")?;
        for (k, p) in self.nodes.iter().enumerate() {
            writeln!(out, "{k} {:.16e} {:.16e}", p.x, p.y)?;
        }
        writeln!(out, "# elements: id level root n0 n1 n2 n3")?;
        for (k, e) in self.elements.iter().enumerate() {
            let [a, b, c, d] = e.nodes;
            writeln!(out, "{k} {} {} {a} {b} {c} {d}", e.level(), e.root)?;
        }
        writeln!(out, "# constraints: id slave master0 master1 w0 w1")?;
        for (k, h) in self.hanging.iter().enumerate() {
            writeln!(
                out,
                "{k} {} {} {} {:.16e} {:.16e}",
                h.slave, h.masters[0], h.masters[1], h.weights[0], h.weights[1]
            )?;
        }
        writeln!(out, "# boundary: element side tag")?;
        for b in &self.boundary {
            writeln!(out, "{} {} {}", b.element, b.side, b.tag)?;
        }
        Ok(())
    }
}

/// Bilinear shape functions and their `(s, t)` derivatives.
pub fn bilinear(s: f64, t: f64) -> ([f64; 4], [Vector2<f64>; 4]) {
    let mut n = [0.0; 4];
    let mut d = [Vector2::zeros(); 4];
    for (k, &(sk, tk)) in CORNERS.iter().enumerate() {
        n[k] = 0.25 * (1.0 + sk * s) * (1.0 + tk * t);
        d[k] = Vector2::new(0.25 * sk * (1.0 + tk * t), 0.25 * tk * (1.0 + sk * s));
    }
    (n, d)
}

fn find_leaf(contains: impl Fn(&CellKey) -> bool, ci: i64, cj: i64) -> Option<CellKey> {
    (0..=MAX_LEVEL).find_map(|level| {
        let size = ROOT >> level;
        let key = CellKey { level, i: ci - ci.rem_euclid(size), j: cj - cj.rem_euclid(size) };
        contains(&key).then_some(key)
    })
}

fn morton(i: i64, j: i64) -> u64 {
    let spread = |v: i64| {
        let mut x = v as u64 & 0xffff_ffff;
        x = (x | (x << 16)) & 0x0000_ffff_0000_ffff;
        x = (x | (x << 8)) & 0x00ff_00ff_00ff_00ff;
        x = (x | (x << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
        x = (x | (x << 2)) & 0x3333_3333_3333_3333;
        (x | (x << 1)) & 0x5555_5555_5555_5555
    };
    spread(i) | (spread(j) << 1)
}
