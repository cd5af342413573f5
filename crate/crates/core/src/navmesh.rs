//! Path planning over the traversable raster.
//!
//! The walkable space is an 8-connected grid graph: straight moves cost
//! one cell, diagonal moves cost √2 cells, and a diagonal move is allowed
//! only when both adjacent orthogonal cells are walkable (no corner
//! cutting). Paths come from A* with an octile heuristic, followed by a
//! greedy line-of-sight smoothing pass that may only shortcut across
//! walkable cells.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::grid::GridRaster;

/// How far (in cells, Chebyshev) an endpoint may be moved onto walkable
/// ground before we refuse to plan.
const SNAP_RADIUS_CELLS: i64 = 2;

#[derive(Debug, Clone)]
pub struct NavGraph {
    traversable: GridRaster,
}

impl NavGraph {
    pub fn build(traversable: GridRaster) -> Result<NavGraph> {
        if !traversable.is_binary() {
            return Err(Error::Invalid("traversable raster must be binary".into()));
        }
        Ok(NavGraph { traversable })
    }

    pub fn raster(&self) -> &GridRaster {
        &self.traversable
    }

    pub fn cell_size(&self) -> f64 {
        self.traversable.cell_size()
    }

    fn width(&self) -> i64 {
        self.traversable.width_cells() as i64
    }

    fn height(&self) -> i64 {
        self.traversable.height_cells() as i64
    }

    pub fn walkable(&self, cx: i64, cy: i64) -> bool {
        cx >= 0
            && cy >= 0
            && cx < self.width()
            && cy < self.height()
            && self.traversable.get(cx as usize, cy as usize) == 1.0
    }

    pub fn walkable_at(&self, p: Vec2) -> bool {
        match self.traversable.cell_of(p) {
            Some((cx, cy)) => self.traversable.get(cx, cy) == 1.0,
            None => false,
        }
    }

    /// Nearest walkable cell within the snap radius, preferring smaller
    /// Euclidean offsets with a fixed tie order so snapping is
    /// deterministic.
    pub fn snap_cell(&self, p: Vec2) -> Option<(usize, usize)> {
        let fx = ((p.x - self.traversable.origin().x) / self.cell_size()).floor();
        let fy = ((p.y - self.traversable.origin().y) / self.cell_size()).floor();
        // Nothing within snap range of a non-finite or absurdly distant
        // point; bail before the index math.
        if !(fx.abs() < 1e12 && fy.abs() < 1e12) {
            return None;
        }
        let (fx, fy) = (fx as i64, fy as i64);
        let mut best: Option<((i64, i64, i64), (i64, i64))> = None;
        for dy in -SNAP_RADIUS_CELLS..=SNAP_RADIUS_CELLS {
            for dx in -SNAP_RADIUS_CELLS..=SNAP_RADIUS_CELLS {
                let (cx, cy) = (fx + dx, fy + dy);
                if !self.walkable(cx, cy) {
                    continue;
                }
                let key = (dx * dx + dy * dy, dy, dx);
                if best.map_or(true, |(k, _)| key < k) {
                    best = Some((key, (cx, cy)));
                }
            }
        }
        best.map(|(_, (cx, cy))| (cx as usize, cy as usize))
    }

    /// All walkable cells, for samplers that pick uniform ground.
    pub fn walkable_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for cy in 0..self.traversable.height_cells() {
            for cx in 0..self.traversable.width_cells() {
                if self.traversable.get(cx, cy) == 1.0 {
                    out.push((cx, cy));
                }
            }
        }
        out
    }

    fn neighbors(&self, cx: i64, cy: i64) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        const DIRS: [(i64, i64); 8] = [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ];
        DIRS.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (cx + dx, cy + dy);
            if !self.walkable(nx, ny) {
                return None;
            }
            if dx != 0 && dy != 0 {
                // no cutting corners around blocked cells
                if !self.walkable(cx + dx, cy) || !self.walkable(cx, cy + dy) {
                    return None;
                }
                Some((nx, ny, std::f64::consts::SQRT_2))
            } else {
                Some((nx, ny, 1.0))
            }
        })
    }

    /// Shortest smoothed path between two world points.
    ///
    /// Endpoints may sit up to [`SNAP_RADIUS_CELLS`] off walkable ground;
    /// the returned polyline still starts and ends at the exact query
    /// points.
    pub fn shortest_path(&self, from: Vec2, to: Vec2) -> Result<Vec<Vec2>> {
        if from.dist(to) < 1e-12 {
            return Ok(vec![from]);
        }
        let no_path = || Error::NoPath(from.x, from.y, to.x, to.y);
        let start = self.snap_cell(from).ok_or_else(no_path)?;
        let goal = self.snap_cell(to).ok_or_else(no_path)?;
        let cells = self.astar(start, goal).ok_or_else(no_path)?;
        let mut path = Vec::with_capacity(cells.len() + 2);
        path.push(from);
        for &(cx, cy) in &cells {
            path.push(self.traversable.cell_center(cx, cy));
        }
        path.push(to);
        // drop degenerate duplicates at the seams (query point inside the
        // first/last cell center's cell)
        path.dedup_by(|a, b| a.dist(*b) < 1e-9);
        Ok(self.smooth(&path))
    }

    fn astar(&self, start: (usize, usize), goal: (usize, usize)) -> Option<Vec<(usize, usize)>> {
        let w = self.width() as usize;
        let n = w * self.height() as usize;
        let idx = |c: (usize, usize)| c.1 * w + c.0;
        let octile = |c: (usize, usize)| -> f64 {
            let dx = (c.0 as f64 - goal.0 as f64).abs();
            let dy = (c.1 as f64 - goal.1 as f64).abs();
            dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
        };
        let mut g = vec![f64::INFINITY; n];
        let mut came: Vec<u32> = vec![u32::MAX; n];
        let mut closed = vec![false; n];
        let mut open: BinaryHeap<Reverse<(TotalF64, u32)>> = BinaryHeap::new();
        g[idx(start)] = 0.0;
        open.push(Reverse((TotalF64(octile(start)), idx(start) as u32)));
        while let Some(Reverse((_, i))) = open.pop() {
            let i = i as usize;
            if closed[i] {
                continue;
            }
            closed[i] = true;
            let cell = (i % w, i / w);
            if cell == goal {
                let mut out = vec![cell];
                let mut cur = i;
                while came[cur] != u32::MAX {
                    cur = came[cur] as usize;
                    out.push((cur % w, cur / w));
                }
                out.reverse();
                return Some(out);
            }
            for (nx, ny, step) in self.neighbors(cell.0 as i64, cell.1 as i64) {
                let j = ny as usize * w + nx as usize;
                let cand = g[i] + step;
                if cand < g[j] - 1e-12 {
                    g[j] = cand;
                    came[j] = i as u32;
                    open.push(Reverse((
                        TotalF64(cand + octile((nx as usize, ny as usize))),
                        j as u32,
                    )));
                }
            }
        }
        None
    }

    /// Greedy shortcutting: from each kept vertex, jump to the farthest
    /// later vertex reachable through walkable cells only.
    fn smooth(&self, path: &[Vec2]) -> Vec<Vec2> {
        if path.len() <= 2 {
            return path.to_vec();
        }
        let mut out = vec![path[0]];
        let mut i = 0;
        while i + 1 < path.len() {
            let mut j = i + 1;
            for k in (i + 2..path.len()).rev() {
                if self.segment_walkable(path[i], path[k]) {
                    j = k;
                    break;
                }
            }
            out.push(path[j]);
            i = j;
        }
        out
    }

    /// Whether the closed segment stays inside walkable cells. Uses a
    /// supercover grid walk; crossing exactly through a cell corner
    /// requires both adjacent cells to be walkable.
    pub fn segment_walkable(&self, a: Vec2, b: Vec2) -> bool {
        let cs = self.cell_size();
        let o = self.traversable.origin();
        let ax = (a.x - o.x) / cs;
        let ay = (a.y - o.y) / cs;
        let bx = (b.x - o.x) / cs;
        let by = (b.y - o.y) / cs;
        let mut x = ax.floor() as i64;
        let mut y = ay.floor() as i64;
        let xe = bx.floor() as i64;
        let ye = by.floor() as i64;
        if !self.walkable(x, y) {
            return false;
        }
        let dx = bx - ax;
        let dy = by - ay;
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let mut t_max_x = if dx != 0.0 {
            let next = if dx > 0.0 { x as f64 + 1.0 } else { x as f64 };
            (next - ax) / dx
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dy != 0.0 {
            let next = if dy > 0.0 { y as f64 + 1.0 } else { y as f64 };
            (next - ay) / dy
        } else {
            f64::INFINITY
        };
        let t_delta_x = if dx != 0.0 { (1.0 / dx).abs() } else { f64::INFINITY };
        let t_delta_y = if dy != 0.0 { (1.0 / dy).abs() } else { f64::INFINITY };
        let max_steps = ((xe - x).abs() + (ye - y).abs() + 4) * 2;
        for _ in 0..max_steps {
            if x == xe && y == ye {
                return true;
            }
            if (t_max_x - t_max_y).abs() < 1e-12 {
                // exact corner crossing: both flanking cells are touched
                if !self.walkable(x + step_x, y) || !self.walkable(x, y + step_y) {
                    return false;
                }
                x += step_x;
                y += step_y;
                t_max_x += t_delta_x;
                t_max_y += t_delta_y;
            } else if t_max_x < t_max_y {
                if t_max_x > 1.0 {
                    return true;
                }
                x += step_x;
                t_max_x += t_delta_x;
            } else {
                if t_max_y > 1.0 {
                    return true;
                }
                y += step_y;
                t_max_y += t_delta_y;
            }
            if !self.walkable(x, y) {
                return false;
            }
        }
        x == xe && y == ye
    }
}

/// f64 wrapper with a total order for the A* priority queue.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TotalF64(f64);

impl Eq for TotalF64 {}

impl PartialOrd for TotalF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TotalF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub fn polyline_length(path: &[Vec2]) -> f64 {
    path.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// The point at arc length `pace * horizon` beyond the path position
/// nearest to `current`, clamped to the path's final vertex.
pub fn control_point(path: &[Vec2], current: Vec2, pace: f64, horizon: f64) -> Result<Vec2> {
    let s0 = project_arc_length(path, current)?;
    Ok(point_at_arc_length(path, s0 + pace.max(0.0) * horizon))
}

/// Arc-length coordinate of the path point nearest to `p`.
pub fn project_arc_length(path: &[Vec2], p: Vec2) -> Result<f64> {
    if path.is_empty() {
        return Err(Error::Invalid("cannot project onto an empty path".into()));
    }
    let mut best = (f64::INFINITY, 0.0);
    let mut acc = 0.0;
    if path.len() == 1 {
        return Ok(0.0);
    }
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ab = b - a;
        let len_sq = ab.norm_sq();
        let t = if len_sq > 0.0 {
            ((p - a).dot(ab) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let q = a.lerp(b, t);
        let d = p.dist(q);
        if d < best.0 - 1e-12 {
            best = (d, acc + t * ab.norm());
        }
        acc += ab.norm();
    }
    Ok(best.1)
}

/// Point at arc length `s` along the polyline, clamped to its ends.
pub fn point_at_arc_length(path: &[Vec2], s: f64) -> Vec2 {
    debug_assert!(!path.is_empty());
    if s <= 0.0 || path.len() == 1 {
        if s <= 0.0 {
            return path[0];
        }
    }
    let mut remaining = s.max(0.0);
    for w in path.windows(2) {
        let seg = w[0].dist(w[1]);
        if remaining <= seg {
            if seg == 0.0 {
                continue;
            }
            return w[0].lerp(w[1], remaining / seg);
        }
        remaining -= seg;
    }
    *path.last().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open_map(cells: usize) -> NavGraph {
        NavGraph::build(GridRaster::filled(cells, cells, 0.5, Vec2::ZERO, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn open_map_path_is_straight() {
        let g = open_map(40); // 20x20 m
        let from = Vec2::new(1.0, 1.0);
        let to = Vec2::new(18.0, 1.0);
        let path = g.shortest_path(from, to).unwrap();
        assert_eq!(path.len(), 2);
        assert_eq!(path[0], from);
        assert_eq!(path[1], to);
        assert!((polyline_length(&path) - 17.0).abs() < 1e-12);
    }

    #[test]
    fn identical_endpoints_give_single_vertex() {
        let g = open_map(10);
        let p = Vec2::new(2.0, 2.0);
        let path = g.shortest_path(p, p).unwrap();
        assert_eq!(path, vec![p]);
        assert_eq!(polyline_length(&path), 0.0);
    }

    fn walled_map() -> NavGraph {
        // vertical wall at cx=10, door missing: forces a detour around
        // the top (cy=0 is open)
        let mut r = GridRaster::filled(20, 20, 0.5, Vec2::ZERO, 1.0).unwrap();
        for cy in 1..20 {
            r.set(10, cy, 0.0);
        }
        NavGraph::build(r).unwrap()
    }

    #[test]
    fn wall_forces_detour_and_segments_stay_walkable() {
        let g = walled_map();
        let from = Vec2::new(2.25, 9.25);
        let to = Vec2::new(8.25, 9.25);
        let path = g.shortest_path(from, to).unwrap();
        assert!(polyline_length(&path) > from.dist(to) + 1.0);
        for w in path.windows(2) {
            assert!(g.segment_walkable(w[0], w[1]));
        }
    }

    #[test]
    fn disconnected_components_error() {
        let mut r = GridRaster::filled(10, 10, 0.5, Vec2::ZERO, 1.0).unwrap();
        for cy in 0..10 {
            r.set(5, cy, 0.0);
        }
        let g = NavGraph::build(r).unwrap();
        let err = g
            .shortest_path(Vec2::new(1.0, 1.0), Vec2::new(4.0, 1.0))
            .unwrap_err();
        assert!(matches!(err, Error::NoPath(..)));
    }

    #[test]
    fn endpoint_snapping_within_two_cells() {
        let mut r = GridRaster::filled(10, 10, 0.5, Vec2::ZERO, 1.0).unwrap();
        r.set(0, 0, 0.0);
        let g = NavGraph::build(r).unwrap();
        // start inside the blocked corner cell: snaps to a neighbor
        let path = g
            .shortest_path(Vec2::new(0.1, 0.1), Vec2::new(4.0, 4.0))
            .unwrap();
        assert_eq!(path[0], Vec2::new(0.1, 0.1));
        // far outside the raster: no snap target within 2 cells
        assert!(g
            .shortest_path(Vec2::new(-5.0, -5.0), Vec2::new(4.0, 4.0))
            .is_err());
    }

    #[test]
    fn diagonal_corner_cutting_is_blocked() {
        let mut r = GridRaster::filled(3, 3, 1.0, Vec2::ZERO, 1.0).unwrap();
        r.set(1, 0, 0.0);
        r.set(0, 1, 0.0);
        let g = NavGraph::build(r).unwrap();
        // (0,0) and (1,1) touch only at a corner; both flanks blocked
        assert!(g
            .shortest_path(Vec2::new(0.5, 0.5), Vec2::new(1.5, 1.5))
            .is_err());
    }

    #[test]
    fn control_point_basics() {
        let path = vec![Vec2::ZERO, Vec2::new(10.0, 0.0)];
        let c = control_point(&path, Vec2::ZERO, 1.0, 4.0).unwrap();
        assert!(c.dist(Vec2::new(4.0, 0.0)) < 1e-12);
        // only 2 m of path remain: clamp to the destination
        let c = control_point(&path, Vec2::new(8.0, 0.0), 1.0, 4.0).unwrap();
        assert!(c.dist(Vec2::new(10.0, 0.0)) < 1e-12);
        assert!(control_point(&[], Vec2::ZERO, 1.0, 4.0).is_err());
    }

    #[test]
    fn control_point_is_monotone_in_distance() {
        let path = vec![
            Vec2::ZERO,
            Vec2::new(3.0, 0.0),
            Vec2::new(3.0, 4.0),
            Vec2::new(6.0, 4.0),
        ];
        let mut last_s = -1.0;
        for d in [0.0, 1.0, 2.5, 3.5, 5.0, 8.0, 20.0] {
            let p = control_point(&path, Vec2::new(0.5, 0.0), d, 1.0).unwrap();
            let s = project_arc_length(&path, p).unwrap();
            assert!(s >= last_s - 1e-9);
            last_s = s;
        }
    }
}
