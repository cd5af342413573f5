//! Independent reference implementations for the grid-world pieces:
//! shortest paths re-solved with a from-scratch Dijkstra, control
//! points re-derived by cumulative arc length, layout rasters and
//! population histograms re-counted directly, and resampling re-done
//! by pointwise interpolation. Each oracle shares no code with the
//! implementation it checks.

use std::collections::HashSet;

use crowdes_core::geom::Vec2;
use crowdes_core::grid::GridRaster;
use crowdes_core::layout::{
    derive_appearance_map, derive_population_prob, SegClass,
};
use crowdes_core::navmesh::{control_point, polyline_length, NavGraph};
use crowdes_core::trajectory::{resample_fps, Agent, AgentKind, Scenario};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Dijkstra over the walkable cells with the same connectivity rules as
/// the nav graph: 8 neighbors, diagonals blocked when either adjacent
/// orthogonal cell is blocked.
fn grid_dijkstra(
    walkable: &[Vec<bool>],
    from: (usize, usize),
    to: (usize, usize),
) -> Option<f64> {
    let h = walkable.len();
    let w = walkable[0].len();
    let idx = |x: usize, y: usize| y * w + x;
    let mut dist = vec![f64::INFINITY; w * h];
    dist[idx(from.0, from.1)] = 0.0;
    let mut heap = std::collections::BinaryHeap::new();
    heap.push((std::cmp::Reverse(ordered_float(0.0)), from));
    while let Some((std::cmp::Reverse(d), (cx, cy))) = heap.pop() {
        let d = f64::from_bits(d.0);
        if d > dist[idx(cx, cy)] {
            continue;
        }
        if (cx, cy) == to {
            return Some(d);
        }
        for (dx, dy) in [
            (1i64, 0i64),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ] {
            let nx = cx as i64 + dx;
            let ny = cy as i64 + dy;
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if !walkable[ny][nx] {
                continue;
            }
            if dx != 0 && dy != 0 {
                let side_a = walkable[cy][(cx as i64 + dx) as usize];
                let side_b = walkable[(cy as i64 + dy) as usize][cx];
                if !side_a || !side_b {
                    continue;
                }
            }
            let step = if dx != 0 && dy != 0 {
                std::f64::consts::SQRT_2
            } else {
                1.0
            };
            let nd = d + step;
            if nd < dist[idx(nx, ny)] {
                dist[idx(nx, ny)] = nd;
                heap.push((std::cmp::Reverse(ordered_float(nd)), (nx, ny)));
            }
        }
    }
    None
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Bits(u64);

fn ordered_float(v: f64) -> Bits {
    // Nonnegative finite floats order identically to their bit patterns.
    Bits(v.to_bits())
}

fn random_map(rng: &mut ChaCha12Rng, w: usize, h: usize) -> (GridRaster, Vec<Vec<bool>>) {
    let mut seg = GridRaster::filled(w, h, 1.0, Vec2::ZERO, SegClass::Sidewalk as usize as f64)
        .unwrap();
    let mut walk = vec![vec![true; w]; h];
    for cy in 0..h {
        for cx in 0..w {
            if rng.gen::<f64>() < 0.25 {
                seg.set(cx, cy, SegClass::Building as usize as f64);
                walk[cy][cx] = false;
            }
        }
    }
    (seg, walk)
}

fn traversable_from(seg: &GridRaster) -> GridRaster {
    let mut t = seg.zeros_like();
    for cy in 0..seg.height_cells() {
        for cx in 0..seg.width_cells() {
            let walkable = matches!(
                SegClass::from_index(seg.get(cx, cy) as usize),
                Some(SegClass::Sidewalk | SegClass::Road | SegClass::Grass)
            );
            t.set(cx, cy, if walkable { 1.0 } else { 0.0 });
        }
    }
    t
}

#[test]
fn nav_paths_match_an_independent_grid_dijkstra() {
    let mut rng = ChaCha12Rng::seed_from_u64(400);
    let mut checked = 0;
    while checked < 25 {
        let (seg, walk) = random_map(&mut rng, 20, 20);
        let nav = match NavGraph::build(traversable_from(&seg)) {
            Ok(n) => n,
            Err(_) => continue,
        };
        let from_c = (rng.gen_range(0..20), rng.gen_range(0..20));
        let to_c = (rng.gen_range(0..20), rng.gen_range(0..20));
        if !walk[from_c.1][from_c.0] || !walk[to_c.1][to_c.0] {
            continue;
        }
        let from = Vec2::new(from_c.0 as f64 + 0.5, from_c.1 as f64 + 0.5);
        let to = Vec2::new(to_c.0 as f64 + 0.5, to_c.1 as f64 + 0.5);
        let oracle = grid_dijkstra(&walk, from_c, to_c);
        match (nav.shortest_path(from, to), oracle) {
            (Ok(path), Some(expect)) => {
                // The planner shortcuts line-of-sight runs, so its
                // length sits between straight-line distance and the
                // grid-optimal route the oracle computes.
                let got = polyline_length(&path);
                let euclid = from.dist(to);
                assert!(
                    got <= expect + 1e-9,
                    "path length {got} exceeds grid oracle {expect}"
                );
                assert!(
                    got >= euclid - 1e-9,
                    "path length {got} beats straight line {euclid}"
                );
                checked += 1;
            }
            (Err(_), None) => {
                checked += 1;
            }
            (Ok(_), None) => panic!("nav found a path the oracle says cannot exist"),
            (Err(e), Some(d)) => panic!("nav failed ({e}) but oracle reaches in {d}"),
        }
    }
}

#[test]
fn control_point_matches_cumulative_arc_length() {
    let path = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(4.0, 0.0),
        Vec2::new(4.0, 4.0),
        Vec2::new(1.0, 4.0),
    ];
    let lengths = [4.0, 4.0, 3.0];
    let total: f64 = lengths.iter().sum();
    let oracle = |s: f64| -> Vec2 {
        let mut remaining = s.min(total);
        for (i, &l) in lengths.iter().enumerate() {
            if remaining <= l {
                let dir = (path[i + 1] - path[i]) * (1.0 / l);
                return path[i] + dir * remaining;
            }
            remaining -= l;
        }
        path[path.len() - 1]
    };
    for s in [0.0, 0.5, 2.0, 3.999, 4.001, 6.0, 7.9, 8.5, 10.9, 11.0, 50.0] {
        let got = control_point(&path, path[0], 1.0, s).unwrap();
        let want = oracle(s);
        assert!(
            (got - want).norm() < 1e-9,
            "arc length {s}: got ({}, {}), oracle ({}, {})",
            got.x,
            got.y,
            want.x,
            want.y
        );
    }
}

#[test]
fn appearance_matches_an_endpoint_marking_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(27);
    for _ in 0..20 {
        let template = GridRaster::filled(12, 12, 1.0, Vec2::ZERO, 0.0).unwrap();
        let n = rng.gen_range(1..=6);
        let agents: Vec<Agent> = (0..n)
            .map(|id| {
                let len = rng.gen_range(2..10);
                Agent {
                    id,
                    kind: AgentKind::Pedestrian,
                    spawn_frame: 0,
                    positions: (0..len)
                        .map(|_| Vec2::new(rng.gen_range(0.0..12.0), rng.gen_range(0.0..12.0)))
                        .collect(),
                }
            })
            .collect();
        let got = derive_appearance_map(&agents, &template).unwrap();
        let mut marked = HashSet::new();
        for a in &agents {
            for p in [a.positions[0], *a.positions.last().unwrap()] {
                marked.insert((p.x.floor() as usize, p.y.floor() as usize));
            }
        }
        for cy in 0..12 {
            for cx in 0..12 {
                let want = if marked.contains(&(cx, cy)) { 1.0 } else { 0.0 };
                assert_eq!(got.get(cx, cy), want, "cell ({cx}, {cy})");
            }
        }
    }
}

#[test]
fn population_histogram_matches_frame_counting() {
    let mut rng = ChaCha12Rng::seed_from_u64(91);
    for _ in 0..10 {
        let total_frames = rng.gen_range(20..60);
        let agents: Vec<Agent> = (0..rng.gen_range(1..8))
            .map(|id| {
                let spawn = rng.gen_range(0..total_frames - 1);
                let len = rng.gen_range(1..=total_frames - spawn);
                Agent {
                    id,
                    kind: AgentKind::Pedestrian,
                    spawn_frame: spawn,
                    positions: vec![Vec2::new(1.0, 1.0); len],
                }
            })
            .collect();
        let mut s = Scenario {
            fps: 5.0,
            total_frames,
            scene_id: "pop".into(),
            agents,
        };
        s.normalize();
        let k = 12;
        let got = derive_population_prob(&s, k).unwrap();
        let mut counts = vec![0usize; k];
        for f in 0..total_frames {
            let alive = s
                .agents
                .iter()
                .filter(|a| f >= a.spawn_frame && f < a.spawn_frame + a.positions.len())
                .count();
            counts[alive] += 1;
        }
        for (i, &c) in counts.iter().enumerate() {
            let want = c as f64 / total_frames as f64;
            assert!(
                (got[i] - want).abs() < 1e-12,
                "bin {i}: got {}, oracle {want}",
                got[i]
            );
        }
    }
}

#[test]
fn resampling_matches_pointwise_interpolation() {
    let mut rng = ChaCha12Rng::seed_from_u64(314);
    // Curved path at 10 fps, taken down to 4 fps (non-integer stride).
    let src_fps = 10.0;
    let dst_fps = 4.0;
    let spawn = 3;
    let positions: Vec<Vec2> = (0..40)
        .map(|i| {
            let t = i as f64 / src_fps;
            Vec2::new(
                t + 0.3 * (1.7 * t).sin() + rng.gen_range(-0.02..0.02),
                (0.9 * t).cos() * 2.0,
            )
        })
        .collect();
    let s = Scenario {
        fps: src_fps,
        total_frames: 60,
        scene_id: "curve".into(),
        agents: vec![Agent {
            id: 0,
            kind: AgentKind::Bicyclist,
            spawn_frame: spawn,
            positions: positions.clone(),
        }],
    };
    let out = resample_fps(&s, dst_fps).unwrap();
    let a = &out.agents[0];
    let t_start = spawn as f64 / src_fps;
    let t_end = (spawn + positions.len() - 1) as f64 / src_fps;
    for (k, &p) in a.positions.iter().enumerate() {
        let t = (t_start + k as f64 / dst_fps).min(t_end);
        let off = t * src_fps - spawn as f64;
        let i = (off.floor() as usize).min(positions.len() - 1);
        let want = if i + 1 < positions.len() {
            let frac = off - i as f64;
            positions[i] + (positions[i + 1] - positions[i]) * frac
        } else {
            positions[i]
        };
        assert!(
            (p - want).norm() < 1e-9,
            "sample {k}: got ({}, {}), oracle ({}, {})",
            p.x,
            p.y,
            want.x,
            want.y
        );
    }
}
