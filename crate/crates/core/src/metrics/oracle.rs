//! Slow reference implementations for cross-checking the metrics on
//! small inputs. Each is written from the defining formulation rather
//! than sharing code with the fast path: the transport distance as a
//! literal min-cost flow, alignment as exhaustive path enumeration,
//! quadrat counts as per-cell membership scans, collisions as a pair
//! sweep. Used by tests and the CLI's `--oracle` mode.

use std::collections::HashSet;

use crate::geom::Vec2;
use crate::trajectory::Scenario;

use super::COLLISION_DIST_M;

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Empirical 1-Wasserstein distance solved as an explicit min-cost
/// flow: masses are scaled by lcm(n, m) to integer units, every source
/// sample ships to sink samples over |a_i - b_j| unit costs, and
/// successive shortest paths drain the supply. Exact for small inputs;
/// cost grows quickly, so keep sample counts at most ~16.
pub fn emd_flow(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    assert!(n > 0 && m > 0, "transport needs nonempty sample sets");
    let units = n / gcd(n, m) * m; // lcm
    let supply = (units / n) as i64;
    let capacity = (units / m) as i64;

    // nodes: 0 = source, 1..=n samples of a, n+1..=n+m samples of b,
    // n+m+1 = sink
    let n_nodes = n + m + 2;
    let sink = n + m + 1;
    // edge arrays with paired residuals at index ^ 1
    let mut to: Vec<usize> = Vec::new();
    let mut cap: Vec<i64> = Vec::new();
    let mut cost: Vec<f64> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
    let push_edge = |from: usize,
                         t: usize,
                         c: i64,
                         w: f64,
                         to: &mut Vec<usize>,
                         cap: &mut Vec<i64>,
                         cost: &mut Vec<f64>,
                         adj: &mut Vec<Vec<usize>>| {
        adj[from].push(to.len());
        to.push(t);
        cap.push(c);
        cost.push(w);
        adj[t].push(to.len());
        to.push(from);
        cap.push(0);
        cost.push(-w);
    };
    for i in 0..n {
        push_edge(0, 1 + i, supply, 0.0, &mut to, &mut cap, &mut cost, &mut adj);
    }
    for (i, &va) in a.iter().enumerate() {
        for (j, &vb) in b.iter().enumerate() {
            push_edge(
                1 + i,
                1 + n + j,
                i64::MAX / 4,
                (va - vb).abs(),
                &mut to,
                &mut cap,
                &mut cost,
                &mut adj,
            );
        }
    }
    for j in 0..m {
        push_edge(
            1 + n + j,
            sink,
            capacity,
            0.0,
            &mut to,
            &mut cap,
            &mut cost,
            &mut adj,
        );
    }

    // successive shortest paths with Johnson potentials: Dijkstra on
    // reduced costs (clamped at zero against rounding) finalizes each
    // node once, so the parent pointers always form a tree
    let mut potential = vec![0.0f64; n_nodes];
    let mut shipped = 0i64;
    let mut total_cost = 0.0;
    while shipped < units as i64 {
        let mut dist = vec![f64::INFINITY; n_nodes];
        let mut parent_edge = vec![usize::MAX; n_nodes];
        let mut done = vec![false; n_nodes];
        dist[0] = 0.0;
        loop {
            let mut v = usize::MAX;
            let mut best = f64::INFINITY;
            for u in 0..n_nodes {
                if !done[u] && dist[u] < best {
                    best = dist[u];
                    v = u;
                }
            }
            if v == usize::MAX {
                break;
            }
            done[v] = true;
            for &e in &adj[v] {
                if cap[e] > 0 && !done[to[e]] {
                    let reduced = (cost[e] + potential[v] - potential[to[e]]).max(0.0);
                    if dist[v] + reduced < dist[to[e]] {
                        dist[to[e]] = dist[v] + reduced;
                        parent_edge[to[e]] = e;
                    }
                }
            }
        }
        assert!(dist[sink].is_finite(), "flow network must stay feasible");
        for v in 0..n_nodes {
            if dist[v].is_finite() {
                potential[v] += dist[v];
            }
        }
        // walk back, find the bottleneck, apply
        let mut bottleneck = units as i64 - shipped;
        let mut v = sink;
        while v != 0 {
            let e = parent_edge[v];
            bottleneck = bottleneck.min(cap[e]);
            v = to[e ^ 1];
        }
        let mut v = sink;
        while v != 0 {
            let e = parent_edge[v];
            cap[e] -= bottleneck;
            cap[e ^ 1] += bottleneck;
            total_cost += bottleneck as f64 * cost[e];
            v = to[e ^ 1];
        }
        shipped += bottleneck;
    }
    total_cost / units as f64
}

/// Alignment distance by enumerating every monotone warp path from
/// (0,0) to (n-1,m-1) and keeping the cheapest. Exponential; only for
/// short trajectories.
pub fn dtw_enumerate(a: &[Vec2], b: &[Vec2], fps: f64) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    fn walk(a: &[Vec2], b: &[Vec2], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + (a[i] - b[j]).norm();
        if acc >= *best {
            return; // cannot improve: costs never decrease
        }
        if i == a.len() - 1 && j == b.len() - 1 {
            *best = acc;
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best / fps
}

/// Bidirectional alignment score and target coverage recomputed from
/// the enumerating distance.
pub fn dtw_div_enumerate(gen: &Scenario, gt: &Scenario, fps: f64) -> (f64, f64) {
    let one_way = |src: &Scenario, dst: &Scenario| -> (f64, f64) {
        let mut sum = 0.0;
        let mut hit: HashSet<usize> = HashSet::new();
        for s in &src.agents {
            let mut best = f64::INFINITY;
            let mut arg = 0usize;
            for (j, d) in dst.agents.iter().enumerate() {
                let c = dtw_enumerate(&s.positions, &d.positions, fps);
                if c < best {
                    best = c;
                    arg = j;
                }
            }
            sum += best;
            hit.insert(arg);
        }
        (
            sum / src.agents.len() as f64,
            hit.len() as f64 / dst.agents.len() as f64,
        )
    };
    let (d_fwd, c_fwd) = one_way(gen, gt);
    let (d_bwd, c_bwd) = one_way(gt, gen);
    (0.5 * (d_fwd + d_bwd), 0.5 * (c_fwd + c_bwd))
}

/// Per-second (dens, freq, cov, pop) series computed by scanning every
/// cell and testing membership directly; border cells extend to
/// infinity so each position belongs to exactly one cell.
pub fn quadrat_series_direct(
    s: &Scenario,
    lo: Vec2,
    hi: Vec2,
    q: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let cell = Vec2::new(
        ((hi.x - lo.x) / q as f64).max(1e-12),
        ((hi.y - lo.y) / q as f64).max(1e-12),
    );
    let in_cell = |p: Vec2, cx: usize, cy: usize| -> bool {
        let x0 = lo.x + cx as f64 * cell.x;
        let x1 = lo.x + (cx + 1) as f64 * cell.x;
        let y0 = lo.y + cy as f64 * cell.y;
        let y1 = lo.y + (cy + 1) as f64 * cell.y;
        let in_x = (p.x >= x0 || cx == 0) && (p.x < x1 || cx == q - 1);
        let in_y = (p.y >= y0 || cy == 0) && (p.y < y1 || cy == q - 1);
        in_x && in_y
    };
    let mut dens = Vec::new();
    let mut freq = Vec::new();
    let mut cov = Vec::new();
    let mut pop = Vec::new();
    let mut second = 0usize;
    loop {
        let f = (second as f64 * s.fps).round() as usize;
        if f >= s.total_frames {
            break;
        }
        let alive: Vec<(Vec2, usize)> = s
            .alive_at(f)
            .map(|a| (a.position_at(f).unwrap(), a.kind.index()))
            .collect();
        let mut count_sum = 0usize;
        let mut kind_sum = 0usize;
        let mut occupied = 0usize;
        for cy in 0..q {
            for cx in 0..q {
                let members: Vec<usize> = alive
                    .iter()
                    .filter(|(p, _)| in_cell(*p, cx, cy))
                    .map(|(_, k)| *k)
                    .collect();
                count_sum += members.len();
                let mut kinds: Vec<usize> = members.clone();
                kinds.sort_unstable();
                kinds.dedup();
                kind_sum += kinds.len();
                if !members.is_empty() {
                    occupied += 1;
                }
            }
        }
        let q2 = (q * q) as f64;
        dens.push(count_sum as f64 / q2);
        freq.push(kind_sum as f64 / q2);
        cov.push(occupied as f64 / q2);
        pop.push(alive.len() as f64);
        second += 1;
    }
    (dens, freq, cov, pop)
}

/// Collision percentage recomputed from unordered agent pairs: every
/// frame where a pair stands closer than the threshold flags both
/// (frame, agent) slots.
pub fn col_pairwise(s: &Scenario) -> f64 {
    let n = s.agents.len();
    if n == 0 || s.total_frames == 0 {
        return 0.0;
    }
    let mut flagged: HashSet<(usize, usize)> = HashSet::new();
    for i in 0..n {
        for j in i + 1..n {
            let a = &s.agents[i];
            let b = &s.agents[j];
            let lo = a.spawn_frame.max(b.spawn_frame);
            let hi = a.end_frame().min(b.end_frame());
            for t in lo..=hi.min(s.total_frames.saturating_sub(1)) {
                let pa = a.position_at(t).unwrap();
                let pb = b.position_at(t).unwrap();
                if (pa - pb).norm() < COLLISION_DIST_M {
                    flagged.insert((t, i));
                    flagged.insert((t, j));
                }
            }
        }
    }
    100.0 * flagged.len() as f64 / (s.total_frames * n) as f64
}
