//! Dyadic Cartesian meshes of the unit square.
//!
//! Cells are addressed by `ElementId { i, j }` with `i` the column (x) and `j`
//! the row (y). Linear cell and node indices are row-major: `j * n + i` for
//! cells and `j * (n + 1) + i` for nodes, where `n = 2^level`.

use std::collections::BTreeSet;

use crate::error::{LodError, Result};

/// Largest level accepted by [`CartesianMesh::new`].
pub const MAX_LEVEL: u32 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElementId {
    pub i: usize,
    pub j: usize,
}

impl ElementId {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    pub fn chebyshev_distance(&self, other: &ElementId) -> usize {
        self.i.abs_diff(other.i).max(self.j.abs_diff(other.j))
    }
}

/// Uniform `2^level x 2^level` grid of the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CartesianMesh {
    level: u32,
}

impl CartesianMesh {
    pub fn new(level: u32) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(LodError::Resource(format!(
                "mesh level {level} exceeds the supported maximum {MAX_LEVEL}"
            )));
        }
        Ok(Self { level })
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    /// Cells per side.
    pub fn n(&self) -> usize {
        1 << self.level
    }

    /// Element side length.
    pub fn h(&self) -> f64 {
        (-(self.level as f64)).exp2()
    }

    pub fn cell_count(&self) -> usize {
        self.n() * self.n()
    }

    pub fn nodes_per_side(&self) -> usize {
        self.n() + 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes_per_side() * self.nodes_per_side()
    }

    pub fn cell_index(&self, e: ElementId) -> usize {
        e.j * self.n() + e.i
    }

    pub fn element(&self, index: usize) -> ElementId {
        ElementId::new(index % self.n(), index / self.n())
    }

    pub fn elements(&self) -> impl Iterator<Item = ElementId> + '_ {
        (0..self.cell_count()).map(move |k| self.element(k))
    }

    pub fn contains(&self, e: ElementId) -> bool {
        e.i < self.n() && e.j < self.n()
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * self.nodes_per_side() + i
    }

    pub fn node_coords(&self, index: usize) -> (usize, usize) {
        (index % self.nodes_per_side(), index / self.nodes_per_side())
    }

    pub fn node_point(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.h(), j as f64 * self.h())
    }

    pub fn is_boundary_node(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.n() || j == self.n()
    }

    /// Global node indices of the four corners of a cell, ordered
    /// `(0,0), (1,0), (0,1), (1,1)`.
    pub fn cell_nodes(&self, e: ElementId) -> [usize; 4] {
        let base = self.node_index(e.i, e.j);
        let s = self.nodes_per_side();
        [base, base + 1, base + s, base + s + 1]
    }

    /// Lower-left corner of a cell.
    pub fn cell_origin(&self, e: ElementId) -> (f64, f64) {
        (e.i as f64 * self.h(), e.j as f64 * self.h())
    }

    /// Refinement ratio `2^(fine.level - self.level)` per side.
    pub fn ratio_to(&self, fine: &CartesianMesh) -> Result<usize> {
        if fine.level < self.level {
            return Err(LodError::arg(format!(
                "fine level {} is coarser than level {}",
                fine.level, self.level
            )));
        }
        Ok(1 << (fine.level - self.level))
    }

    pub fn check_element(&self, e: ElementId) -> Result<()> {
        if self.contains(e) {
            Ok(())
        } else {
            Err(LodError::arg(format!(
                "element ({}, {}) outside a {}x{} mesh",
                e.i,
                e.j,
                self.n(),
                self.n()
            )))
        }
    }
}

pub fn build_mesh(level: u32) -> Result<CartesianMesh> {
    CartesianMesh::new(level)
}

/// Half-open rectangle of cells `[i0, i1) x [j0, j1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellRect {
    pub i0: usize,
    pub j0: usize,
    pub i1: usize,
    pub j1: usize,
}

impl CellRect {
    pub fn of_element(e: ElementId) -> Self {
        Self {
            i0: e.i,
            j0: e.j,
            i1: e.i + 1,
            j1: e.j + 1,
        }
    }

    pub fn width(&self) -> usize {
        self.i1 - self.i0
    }

    pub fn height(&self) -> usize {
        self.j1 - self.j0
    }

    pub fn contains(&self, e: ElementId) -> bool {
        (self.i0..self.i1).contains(&e.i) && (self.j0..self.j1).contains(&e.j)
    }

    pub fn cells(&self) -> impl Iterator<Item = ElementId> + '_ {
        (self.j0..self.j1).flat_map(move |j| (self.i0..self.i1).map(move |i| ElementId::new(i, j)))
    }

    /// Grows the rectangle by `layers` cells on every side, clipped to the mesh.
    pub fn grow(&self, layers: usize, mesh: &CartesianMesh) -> Self {
        Self {
            i0: self.i0.saturating_sub(layers),
            j0: self.j0.saturating_sub(layers),
            i1: (self.i1 + layers).min(mesh.n()),
            j1: (self.j1 + layers).min(mesh.n()),
        }
    }

    /// The same region expressed in cells of a finer mesh.
    pub fn refine(&self, ratio: usize) -> Self {
        Self {
            i0: self.i0 * ratio,
            j0: self.j0 * ratio,
            i1: self.i1 * ratio,
            j1: self.j1 * ratio,
        }
    }

    /// All nodes of the closed rectangle.
    pub fn node_rect(&self) -> NodeRect {
        NodeRect {
            i0: self.i0,
            j0: self.j0,
            nx: self.width() + 1,
            ny: self.height() + 1,
        }
    }

    pub fn intersect(&self, other: &CellRect) -> Option<CellRect> {
        let r = CellRect {
            i0: self.i0.max(other.i0),
            j0: self.j0.max(other.j0),
            i1: self.i1.min(other.i1),
            j1: self.j1.min(other.j1),
        };
        (r.i0 < r.i1 && r.j0 < r.j1).then_some(r)
    }
}

/// Rectangle of mesh nodes with origin `(i0, j0)` and `nx x ny` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeRect {
    pub i0: usize,
    pub j0: usize,
    pub nx: usize,
    pub ny: usize,
}

impl NodeRect {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && j >= self.j0 && i < self.i0 + self.nx && j < self.j0 + self.ny
    }

    /// Local row-major offset of a global node coordinate.
    pub fn offset(&self, i: usize, j: usize) -> usize {
        (j - self.j0) * self.nx + (i - self.i0)
    }

    pub fn intersect(&self, other: &NodeRect) -> Option<NodeRect> {
        let i0 = self.i0.max(other.i0);
        let j0 = self.j0.max(other.j0);
        let i1 = (self.i0 + self.nx).min(other.i0 + other.nx);
        let j1 = (self.j0 + self.ny).min(other.j0 + other.ny);
        (i0 < i1 && j0 < j1).then(|| NodeRect {
            i0,
            j0,
            nx: i1 - i0,
            ny: j1 - j0,
        })
    }
}

/// Element patch `N^order(center)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub center: ElementId,
    pub order: usize,
    /// Bounding rectangle; on a Cartesian grid the patch is exactly this rectangle.
    pub rect: CellRect,
    /// Cells in row-major order.
    pub cells: Vec<ElementId>,
}

impl Patch {
    pub fn contains(&self, e: ElementId) -> bool {
        self.rect.contains(e)
    }

    /// Fine nodes strictly inside the patch, row-major, as global indices of `fine`.
    pub fn interior_fine_nodes(&self, coarse: &CartesianMesh, fine: &CartesianMesh) -> Result<Vec<usize>> {
        let r = self.rect.refine(coarse.ratio_to(fine)?);
        Ok(((r.j0 + 1)..r.j1)
            .flat_map(|j| ((r.i0 + 1)..r.i1).map(move |i| fine.node_index(i, j)))
            .collect())
    }

    /// Fine nodes on the patch boundary (including parts on the domain boundary).
    pub fn boundary_fine_nodes(&self, coarse: &CartesianMesh, fine: &CartesianMesh) -> Result<Vec<usize>> {
        let r = self.rect.refine(coarse.ratio_to(fine)?);
        Ok((r.j0..=r.j1)
            .flat_map(|j| (r.i0..=r.i1).map(move |i| (i, j)))
            .filter(|&(i, j)| i == r.i0 || i == r.i1 || j == r.j0 || j == r.j1)
            .map(|(i, j)| fine.node_index(i, j))
            .collect())
    }
}

/// Element patch of order `order`: all cells within Chebyshev distance `order`
/// of `center`, clipped to the mesh.
pub fn patch(mesh: &CartesianMesh, center: ElementId, order: usize) -> Result<Patch> {
    mesh.check_element(center)?;
    if order == 0 {
        return Err(LodError::arg("patch order must be positive"));
    }
    let rect = CellRect::of_element(center).grow(order, mesh);
    let cells = rect.cells().collect();
    Ok(Patch {
        center,
        order,
        rect,
        cells,
    })
}

/// Fine cells tiling coarse cell `t`, row-major.
pub fn children(coarse: &CartesianMesh, t: ElementId, fine: &CartesianMesh) -> Result<Vec<ElementId>> {
    coarse.check_element(t)?;
    let r = coarse.ratio_to(fine)?;
    Ok(CellRect::of_element(t).refine(r).cells().collect())
}

/// Nodes strictly inside the union of `region`: every node whose four
/// surrounding cells all belong to the region. Nodes on the domain boundary
/// never qualify.
pub fn interior_nodes(mesh: &CartesianMesh, region: &[ElementId]) -> Result<Vec<usize>> {
    if region.is_empty() {
        return Err(LodError::arg("region must contain at least one cell"));
    }
    for &e in region {
        mesh.check_element(e)?;
    }
    let set: BTreeSet<ElementId> = region.iter().copied().collect();
    let n = mesh.n();
    let mut nodes = Vec::new();
    for j in 1..n {
        for i in 1..n {
            let around = [
                ElementId::new(i - 1, j - 1),
                ElementId::new(i, j - 1),
                ElementId::new(i - 1, j),
                ElementId::new(i, j),
            ];
            if around.iter().all(|c| set.contains(c)) {
                nodes.push(mesh.node_index(i, j));
            }
        }
    }
    Ok(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Recursive closure: cells whose closure meets the closure of the set.
    fn recursive_patch(mesh: &CartesianMesh, center: ElementId, order: usize) -> BTreeSet<ElementId> {
        let mut set = BTreeSet::from([center]);
        for _ in 0..order {
            let mut next = BTreeSet::new();
            for t in mesh.elements() {
                // closures of two cells meet iff they share at least a corner
                if set.iter().any(|s| s.chebyshev_distance(&t) <= 1) {
                    next.insert(t);
                }
            }
            set = next;
        }
        set
    }

    #[test]
    fn mesh_counts() {
        let m = build_mesh(0).unwrap();
        assert_eq!((m.cell_count(), m.node_count()), (1, 4));
        let m = build_mesh(3).unwrap();
        assert_eq!((m.cell_count(), m.node_count()), (64, 81));
        let m = build_mesh(7).unwrap();
        assert_eq!(m.cell_count(), 16384);
        assert_eq!(m.h(), 1.0 / 128.0);
    }

    #[test]
    fn level_guard() {
        assert!(matches!(build_mesh(15), Err(LodError::Resource(_))));
    }

    #[test]
    fn patch_sizes() {
        let m = build_mesh(3).unwrap();
        assert_eq!(patch(&m, ElementId::new(3, 4), 1).unwrap().cells.len(), 9);
        assert_eq!(patch(&m, ElementId::new(0, 0), 1).unwrap().cells.len(), 4);
        let p2 = patch(&m, ElementId::new(3, 4), 2).unwrap();
        assert_eq!(p2.cells.len(), 25);
        let oracle = recursive_patch(&m, ElementId::new(3, 4), 2);
        assert_eq!(p2.cells.iter().copied().collect::<BTreeSet<_>>(), oracle);
        assert!(patch(&m, ElementId::new(8, 0), 1).is_err());
        assert!(patch(&m, ElementId::new(0, 0), 0).is_err());
    }

    #[test]
    fn patch_matches_recursive_definition_exhaustively() {
        let m = build_mesh(4).unwrap();
        for t in m.elements() {
            for order in 1..=4 {
                let p = patch(&m, t, order).unwrap();
                let got: BTreeSet<_> = p.cells.iter().copied().collect();
                assert_eq!(got, recursive_patch(&m, t, order), "t={t:?} order={order}");
                let bigger: BTreeSet<_> = patch(&m, t, order + 1).unwrap().cells.into_iter().collect();
                assert!(got.is_subset(&bigger));
            }
        }
    }

    #[test]
    fn interior_patch_is_centered_block() {
        let m = build_mesh(4).unwrap();
        let p = patch(&m, ElementId::new(7, 8), 3).unwrap();
        assert_eq!((p.rect.width(), p.rect.height()), (7, 7));
        assert_eq!(p.rect.i0, 4);
        assert_eq!(p.rect.j0, 5);
    }

    #[test]
    fn children_cases() {
        let c = build_mesh(2).unwrap();
        let t = ElementId::new(1, 2);
        assert_eq!(children(&c, t, &c).unwrap(), vec![t]);
        assert_eq!(children(&c, t, &build_mesh(3).unwrap()).unwrap().len(), 4);
        let fine = build_mesh(5).unwrap();
        let kids = children(&c, t, &fine).unwrap();
        assert_eq!(kids.len(), 64);
        let area: f64 = kids.iter().map(|_| fine.h() * fine.h()).sum();
        assert!((area - c.h() * c.h()).abs() < 1e-15);
        assert!(children(&fine, ElementId::new(0, 0), &c).is_err());
    }

    #[test]
    fn children_partition_fine_cells() {
        let c = build_mesh(2).unwrap();
        let f = build_mesh(4).unwrap();
        let mut seen = vec![0u32; f.cell_count()];
        for t in c.elements() {
            for k in children(&c, t, &f).unwrap() {
                seen[f.cell_index(k)] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn interior_node_counts() {
        let m = build_mesh(2).unwrap();
        let all: Vec<_> = m.elements().collect();
        assert_eq!(interior_nodes(&m, &all).unwrap().len(), 9);
        assert_eq!(interior_nodes(&m, &[ElementId::new(1, 1)]).unwrap().len(), 0);
        let m3 = build_mesh(3).unwrap();
        let p = patch(&m3, ElementId::new(3, 3), 1).unwrap();
        assert_eq!(interior_nodes(&m3, &p.cells).unwrap().len(), 4);
        assert!(interior_nodes(&m3, &[]).is_err());
    }

    #[test]
    fn patch_fine_node_sets() {
        let c = build_mesh(2).unwrap();
        let f = build_mesh(4).unwrap();
        let p = patch(&c, ElementId::new(0, 0), 1).unwrap();
        // 2x2 coarse cells = 8x8 fine cells
        assert_eq!(p.interior_fine_nodes(&c, &f).unwrap().len(), 49);
        assert_eq!(p.boundary_fine_nodes(&c, &f).unwrap().len(), 32);
        let fine_cells: Vec<_> = p.rect.refine(4).cells().collect();
        assert_eq!(
            p.interior_fine_nodes(&c, &f).unwrap(),
            interior_nodes(&f, &fine_cells).unwrap()
        );
    }
}
