//! Boundary map to filled mask: thinning, minimum spanning tree over the
//! remaining boundary pixels, the tree's longest path, and polygon fill.

use std::collections::VecDeque;

use crate::distance_map::{decode_boundary, DistanceMap, Pixel};
use crate::error::{Error, Result};
use crate::raster::BinaryMask;

#[derive(Debug, Clone, PartialEq)]
pub struct SpanningTree {
    pub nodes: Vec<Pixel>,
    /// `(a, b, weight)` with `a < b` indexing into `nodes`.
    pub edges: Vec<(usize, usize, f64)>,
}

impl SpanningTree {
    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.2).sum()
    }

    fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b, w) in &self.edges {
            adj[a].push((b, w));
            adj[b].push((a, w));
        }
        adj
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelPath {
    pub points: Vec<Pixel>,
}

impl PixelPath {
    /// Sum of Euclidean lengths between consecutive points (open path).
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

#[inline]
fn dist(a: Pixel, b: Pixel) -> f64 {
    (dist2(a, b) as f64).sqrt()
}

#[inline]
fn dist2(a: Pixel, b: Pixel) -> i64 {
    let (dx, dy) = (a.0 - b.0, a.1 - b.1);
    dx * dx + dy * dy
}

// ---------------------------------------------------------------------------
// Disjoint sets

#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    /// Merge the sets holding `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

// ---------------------------------------------------------------------------
// Spanning tree and longest path

/// Minimum spanning tree of the complete Euclidean graph on `points`.
///
/// Nodes are stored in lexicographic `(x, y)` order and equal-weight edges
/// are taken in lexicographic `(a, b)` order, so the result does not depend
/// on the input order.
pub fn mst_kruskal(points: &[Pixel]) -> Result<SpanningTree> {
    if points.is_empty() {
        return Err(Error::domain("spanning tree needs at least one point"));
    }
    let mut nodes = points.to_vec();
    nodes.sort_unstable();
    if nodes.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::domain("spanning tree points must be distinct"));
    }
    let n = nodes.len();
    let mut candidates: Vec<(i64, u32, u32)> = Vec::with_capacity(n * (n - 1) / 2);
    for a in 0..n {
        for b in a + 1..n {
            candidates.push((dist2(nodes[a], nodes[b]), a as u32, b as u32));
        }
    }
    candidates.sort_unstable();

    let mut sets = DisjointSets::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for (d2, a, b) in candidates {
        if sets.union(a as usize, b as usize) {
            edges.push((a as usize, b as usize, (d2 as f64).sqrt()));
            if edges.len() + 1 == n {
                break;
            }
        }
    }
    Ok(SpanningTree { nodes, edges })
}

/// Farthest node from `start` by weighted distance, with parent links.
fn farthest(adj: &[Vec<(usize, f64)>], start: usize) -> (usize, Vec<usize>) {
    let n = adj.len();
    let mut dist = vec![f64::NAN; n];
    let mut parent = vec![usize::MAX; n];
    dist[start] = 0.0;
    let mut stack = vec![start];
    while let Some(u) = stack.pop() {
        for &(v, w) in &adj[u] {
            if dist[v].is_nan() {
                dist[v] = dist[u] + w;
                parent[v] = u;
                stack.push(v);
            }
        }
    }
    let mut best = start;
    for i in 0..n {
        if dist[i] > dist[best] {
            best = i;
        }
    }
    (best, parent)
}

/// The maximum-weight simple path in the tree (its weighted diameter).
pub fn tree_max_path(tree: &SpanningTree) -> Result<PixelPath> {
    if tree.nodes.is_empty() {
        return Err(Error::domain("empty tree"));
    }
    let adj = tree.adjacency();
    let (a, _) = farthest(&adj, 0);
    let (b, parent) = farthest(&adj, a);
    let mut points = vec![tree.nodes[b]];
    let mut cur = b;
    while cur != a {
        cur = parent[cur];
        points.push(tree.nodes[cur]);
    }
    Ok(PixelPath { points })
}

// ---------------------------------------------------------------------------
// Rasterization and fill

/// Integer Bresenham segment, both endpoints included.
pub fn bresenham(a: Pixel, b: Pixel) -> Vec<Pixel> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if x == b.0 && y == b.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Draw the closed polygon through `path` and fill everything the image
/// border cannot reach through 4-connected steps.
pub fn close_and_fill(path: &PixelPath, w: usize, h: usize) -> Result<BinaryMask> {
    let pts = &path.points;
    if pts.len() < 3 {
        return Err(Error::domain(format!(
            "need at least 3 path points to enclose an area, got {}",
            pts.len()
        )));
    }
    let mut curve = BinaryMask::empty(w, h);
    let n = pts.len();
    for i in 0..n {
        for (x, y) in bresenham(pts[i], pts[(i + 1) % n]) {
            if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                curve.set(x as usize, y as usize, true);
            }
        }
    }
    let outside = reach_from_border(&curve);
    let data = outside.iter().map(|&o| !o).collect();
    Ok(BinaryMask {
        width: w,
        height: h,
        data,
    })
}

/// Background pixels 4-reachable from the image border.
fn reach_from_border(walls: &BinaryMask) -> Vec<bool> {
    let (w, h) = (walls.width, walls.height);
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    let push = |i: usize, seen: &mut Vec<bool>, q: &mut VecDeque<usize>| {
        if !walls.data[i] && !seen[i] {
            seen[i] = true;
            q.push_back(i);
        }
    };
    for x in 0..w {
        push(x, &mut seen, &mut queue);
        push((h - 1) * w + x, &mut seen, &mut queue);
    }
    for y in 0..h {
        push(y * w, &mut seen, &mut queue);
        push(y * w + w - 1, &mut seen, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        if x > 0 {
            push(i - 1, &mut seen, &mut queue);
        }
        if x + 1 < w {
            push(i + 1, &mut seen, &mut queue);
        }
        if y > 0 {
            push(i - w, &mut seen, &mut queue);
        }
        if y + 1 < h {
            push(i + w, &mut seen, &mut queue);
        }
    }
    seen
}

// ---------------------------------------------------------------------------
// Morphology

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Connected foreground components in raster order of their first pixel.
pub fn components(mask: &BinaryMask, conn: Connectivity) -> Vec<Vec<Pixel>> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut label = vec![false; mask.data.len()];
    let offsets: &[(i64, i64)] = match conn {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ],
    };
    let mut out = Vec::new();
    for start in 0..mask.data.len() {
        if !mask.data[start] || label[start] {
            continue;
        }
        label[start] = true;
        let mut comp = Vec::new();
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            comp.push((x, y));
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let j = (ny * w + nx) as usize;
                if mask.data[j] && !label[j] {
                    label[j] = true;
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable_by_key(|&(x, y)| (y, x));
        out.push(comp);
    }
    out
}

/// Background regions not 4-connected to the border.
pub fn count_holes(mask: &BinaryMask) -> usize {
    let outside = reach_from_border(mask);
    let holes = BinaryMask {
        width: mask.width,
        height: mask.height,
        data: mask
            .data
            .iter()
            .zip(&outside)
            .map(|(&m, &o)| !m && !o)
            .collect(),
    };
    components(&holes, Connectivity::Four).len()
}

fn dilate3(mask: &BinaryMask) -> BinaryMask {
    morph3(mask, false, |any, _all| any)
}

fn erode3(mask: &BinaryMask) -> BinaryMask {
    morph3(mask, true, |_any, all| all)
}

// `outside` is the value assumed beyond the image edge.
fn morph3(mask: &BinaryMask, outside: bool, pick: impl Fn(bool, bool) -> bool) -> BinaryMask {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let mut out = BinaryMask::empty(mask.width, mask.height);
    for y in 0..h {
        for x in 0..w {
            let (mut any, mut all) = (false, true);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    let v = if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        outside
                    } else {
                        mask.get(nx as usize, ny as usize)
                    };
                    any |= v;
                    all &= v;
                }
            }
            out.set(x as usize, y as usize, pick(any, all));
        }
    }
    out
}

/// 3x3 morphological closing. Pixels beyond the edge count as foreground for
/// the erosion, so the result always contains the input.
pub fn close3(mask: &BinaryMask) -> BinaryMask {
    erode3(&dilate3(mask))
}

/// Zhang-Suen thinning to one-pixel-wide curves.
///
/// A component that a sub-iteration would delete entirely keeps its first
/// pixel in raster order, so the component count never drops.
pub fn skeletonize(bin: &BinaryMask) -> BinaryMask {
    let (w, h) = (bin.width, bin.height);
    let mut img = bin.clone();
    let at = |img: &BinaryMask, x: i64, y: i64| -> u8 {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0
        } else {
            img.get(x as usize, y as usize) as u8
        }
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..h as i64 {
                for x in 0..w as i64 {
                    if at(&img, x, y) == 0 {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let p = [
                        at(&img, x, y - 1),
                        at(&img, x + 1, y - 1),
                        at(&img, x + 1, y),
                        at(&img, x + 1, y + 1),
                        at(&img, x, y + 1),
                        at(&img, x - 1, y + 1),
                        at(&img, x - 1, y),
                        at(&img, x - 1, y - 1),
                    ];
                    let b: u8 = p.iter().sum();
                    let a = (0..8).filter(|&i| p[i] == 0 && p[(i + 1) % 8] == 1).count();
                    if !(2..=6).contains(&b) || a != 1 {
                        continue;
                    }
                    let (n, e, s, wst) = (p[0], p[2], p[4], p[6]);
                    let ok = if pass == 0 {
                        n * e * s == 0 && e * s * wst == 0
                    } else {
                        n * e * wst == 0 && n * s * wst == 0
                    };
                    if ok {
                        remove.push((x as usize, y as usize));
                    }
                }
            }
            if remove.is_empty() {
                continue;
            }
            let before = img.clone();
            for &(x, y) in &remove {
                img.set(x, y, false);
            }
            for comp in components(&before, Connectivity::Eight) {
                if comp.iter().all(|&(x, y)| !img.get(x as usize, y as usize)) {
                    let (x, y) = comp[0];
                    img.set(x as usize, y as usize, true);
                }
            }
            changed |= img != before;
        }
        if !changed {
            return img;
        }
    }
}

/// Predicted distance map to filled object mask.
pub fn reconstruct_mask(pred: &DistanceMap) -> Result<BinaryMask> {
    let boundary = decode_boundary(pred);
    if boundary.is_empty() {
        return Err(Error::NoBoundary);
    }
    let skeleton = skeletonize(&close3(&boundary));
    let largest = components(&skeleton, Connectivity::Eight)
        .into_iter()
        .fold(Vec::new(), |best, c| if c.len() > best.len() { c } else { best });
    if largest.is_empty() {
        return Err(Error::NoBoundary);
    }
    let tree = mst_kruskal(&largest)?;
    let path = tree_max_path(&tree)?;
    close_and_fill(&path, pred.width, pred.height)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_of(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> BinaryMask {
        let mut m = BinaryMask::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                m.set(x, y, f(x, y));
            }
        }
        m
    }

    #[test]
    fn mst_collinear_chain() {
        let t = mst_kruskal(&[(0, 0), (0, 1), (0, 2)]).unwrap();
        assert_eq!(t.edges, vec![(0, 1, 1.0), (1, 2, 1.0)]);
        assert_eq!(t.total_weight(), 2.0);
    }

    #[test]
    fn mst_unit_square_has_no_diagonal() {
        let t = mst_kruskal(&[(0, 0), (1, 0), (0, 1), (1, 1)]).unwrap();
        assert_eq!(t.edges.len(), 3);
        assert_eq!(t.total_weight(), 3.0);
    }

    #[test]
    fn mst_degenerate_inputs() {
        let t = mst_kruskal(&[(4, 2)]).unwrap();
        assert_eq!((t.nodes.len(), t.edges.len()), (1, 0));
        assert!(matches!(mst_kruskal(&[]), Err(Error::Domain(_))));
        assert!(matches!(mst_kruskal(&[(1, 1), (1, 1)]), Err(Error::Domain(_))));
    }

    #[test]
    fn max_path_examples() {
        let chain = mst_kruskal(&[(0, 0), (1, 0), (2, 0)]).unwrap();
        assert_eq!(tree_max_path(&chain).unwrap().points.len(), 3);

        let star = mst_kruskal(&[(0, 0), (0, 3), (0, -3), (1, 0)]).unwrap();
        let p = tree_max_path(&star).unwrap();
        assert_eq!(p.length(), 6.0);
        let mut ends = [p.points[0], *p.points.last().unwrap()];
        ends.sort();
        assert_eq!(ends, [(0, -3), (0, 3)]);
        assert_eq!(p.points.len(), 3);

        let single = mst_kruskal(&[(7, 7)]).unwrap();
        assert_eq!(tree_max_path(&single).unwrap().points, vec![(7, 7)]);
    }

    #[test]
    fn fill_square() {
        let path = PixelPath {
            points: vec![(1, 1), (1, 4), (4, 4), (4, 1)],
        };
        let m = close_and_fill(&path, 6, 6).unwrap();
        assert_eq!(m.count(), 16);
        assert_eq!(m, mask_of(6, 6, |x, y| (1..=4).contains(&x) && (1..=4).contains(&y)));
    }

    #[test]
    fn fill_collinear_is_the_line() {
        let path = PixelPath {
            points: vec![(0, 2), (2, 2), (4, 2)],
        };
        let m = close_and_fill(&path, 5, 5).unwrap();
        assert_eq!(m, mask_of(5, 5, |_, y| y == 2));
    }

    #[test]
    fn fill_triangle() {
        let path = PixelPath {
            points: vec![(0, 0), (4, 0), (0, 4)],
        };
        let m = close_and_fill(&path, 6, 6).unwrap();
        assert_eq!(m, mask_of(6, 6, |x, y| x + y <= 4));
    }

    #[test]
    fn fill_needs_three_points() {
        let path = PixelPath {
            points: vec![(0, 0), (3, 3)],
        };
        assert!(matches!(close_and_fill(&path, 5, 5), Err(Error::Domain(_))));
    }

    #[test]
    fn skeleton_of_empty_and_thin_ring() {
        let empty = BinaryMask::empty(5, 5);
        assert_eq!(skeletonize(&empty), empty);
        let ring = mask_of(8, 8, |x, y| {
            let edge = x == 1 || x == 6 || y == 1 || y == 6;
            (1..=6).contains(&x) && (1..=6).contains(&y) && edge
        });
        assert_eq!(skeletonize(&ring), ring);
    }

    #[test]
    fn skeleton_keeps_small_blobs() {
        let block = mask_of(4, 4, |x, y| (1..=2).contains(&x) && (1..=2).contains(&y));
        let s = skeletonize(&block);
        assert_eq!(components(&s, Connectivity::Eight).len(), 1);
        assert!(s.data.iter().zip(&block.data).all(|(&a, &b)| !a || b));
    }

    #[test]
    fn closing_contains_input() {
        let m = mask_of(5, 5, |x, y| (x + y) % 2 == 0);
        let c = close3(&m);
        assert!(m.data.iter().zip(&c.data).all(|(&a, &b)| !a || b));
    }

    #[test]
    fn no_boundary_from_zero_map() {
        let pred = DistanceMap::new(8, 8, vec![0.0; 64], 1.0).unwrap();
        assert!(matches!(reconstruct_mask(&pred), Err(Error::NoBoundary)));
    }

    #[test]
    fn holes_counted() {
        let ring = mask_of(5, 5, |x, y| (1..=3).contains(&x) && (1..=3).contains(&y) && !(x == 2 && y == 2));
        assert_eq!(count_holes(&ring), 1);
        assert_eq!(count_holes(&mask_of(5, 5, |x, _| x < 2)), 0);
    }
}
