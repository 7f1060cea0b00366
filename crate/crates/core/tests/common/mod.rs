//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use bdseg_core::raster::BinaryMask;

/// Foreground pixels touching background or the image edge through a
/// 4-neighbour, found by direct inspection.
pub fn boundary_pixels(mask: &BinaryMask) -> Vec<(i64, i64)> {
    let (w, h) = (mask.width as i64, mask.height as i64);
    let fg = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && mask.data[(y * w + x) as usize];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if fg(x, y) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| !fg(x + dx, y + dy)) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Minimum Euclidean distance from every pixel to `boundary`, by checking
/// every pair.
pub fn exhaustive_distance(boundary: &[(i64, i64)], w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let best = boundary
                .iter()
                .map(|&(bx, by)| (((bx - x) * (bx - x) + (by - y) * (by - y)) as f64).sqrt())
                .fold(f64::INFINITY, f64::min);
            out.push(best);
        }
    }
    out
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for &(a, b) in edges {
            for (p, q) in [(a, b), (b, a)] {
                if p == v && !seen[q] {
                    seen[q] = true;
                    stack.push(q);
                }
            }
        }
    }
    seen.iter().all(|&s| s)
}

/// Minimum total Euclidean weight over every spanning tree, by enumerating
/// all `(n-1)`-edge subsets of the complete graph.
pub fn brute_force_mst_weight(points: &[(i64, i64)]) -> f64 {
    let n = points.len();
    if n < 2 {
        return 0.0;
    }
    let all: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let weight = |&(a, b): &(usize, usize)| {
        let (dx, dy) = ((points[a].0 - points[b].0) as f64, (points[a].1 - points[b].1) as f64);
        (dx * dx + dy * dy).sqrt()
    };
    let mut best = f64::INFINITY;
    for bits in 0u32..(1 << all.len()) {
        if bits.count_ones() as usize != n - 1 {
            continue;
        }
        let chosen: Vec<(usize, usize)> = (0..all.len()).filter(|i| bits >> i & 1 == 1).map(|i| all[i]).collect();
        if connected(n, &chosen) {
            best = best.min(chosen.iter().map(weight).sum());
        }
    }
    best
}

/// Heaviest simple path in a weighted graph, by depth-first search from
/// every start node.
pub fn brute_force_max_path(n: usize, edges: &[(usize, usize, f64)]) -> f64 {
    fn dfs(v: usize, edges: &[(usize, usize, f64)], seen: &mut Vec<bool>, acc: f64, best: &mut f64) {
        *best = best.max(acc);
        for &(a, b, w) in edges {
            for (p, q) in [(a, b), (b, a)] {
                if p == v && !seen[q] {
                    seen[q] = true;
                    dfs(q, edges, seen, acc + w, best);
                    seen[q] = false;
                }
            }
        }
    }
    let mut best = 0.0;
    for s in 0..n {
        let mut seen = vec![false; n];
        seen[s] = true;
        dfs(s, edges, &mut seen, 0.0, &mut best);
    }
    best
}

/// Even-odd rule for the point `(px, py)` against a closed polygon.
pub fn point_in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (x1, y1) = poly[i];
        let (x2, y2) = poly[(i + 1) % n];
        if (y1 > py) != (y2 > py) && px < x1 + (py - y1) * (x2 - x1) / (y2 - y1) {
            inside = !inside;
        }
    }
    inside
}

/// Two-sided signed-rank p-value by listing all `2^n` sign patterns of the
/// non-zero differences with plain (undoubled) average ranks.
pub fn wilcoxon_enumerated_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    let ranks: Vec<f64> = d
        .iter()
        .map(|v| {
            let less = d.iter().filter(|u| u.abs() < v.abs()).count() as f64;
            let equal = d.iter().filter(|u| u.abs() == v.abs()).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let w = plus.min(total - plus);
    let mut hits = 0u64;
    for signs in 0u64..(1 << n) {
        let t: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
        if t <= w + 1e-9 || t >= total - w - 1e-9 {
            hits += 1;
        }
    }
    (hits as f64 / (1u64 << n) as f64).min(1.0)
}
