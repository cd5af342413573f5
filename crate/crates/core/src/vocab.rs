//! Discrete behavior states: segmentation, canonicalization, clustering.
//!
//! Agent trajectories are cut into non-overlapping segments of `T_f`
//! frames. Each segment is expressed in a canonical frame anchored at the
//! agent's position when the segment starts: translated to the origin,
//! rotated so the navigation control point lies on +x, and divided by the
//! distance to that control point. K-means over the canonical segments
//! yields the vocabulary of switching states used by the simulator.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::geom::{Similarity, Vec2};
use crate::navmesh::{self, NavGraph};
use crate::trajectory::Scenario;

/// What divides out a segment's spatial extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScaleMode {
    /// Distance from the anchor to the control point.
    #[default]
    ControlDistance,
    /// Distance the agent covers in one planning horizon (pace · horizon).
    Pace,
}

#[derive(Debug, Clone)]
pub struct SegmentOptions {
    /// Segment length in frames.
    pub t_f: usize,
    /// Planning horizon in seconds; the control point sits `pace·horizon`
    /// meters down the agent's path.
    pub horizon: f64,
    pub scale_mode: ScaleMode,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            t_f: 20,
            horizon: 4.0,
            scale_mode: ScaleMode::ControlDistance,
        }
    }
}

/// One canonicalized trajectory slice plus enough provenance to rebuild
/// its conditioning context.
#[derive(Debug, Clone)]
pub struct MotionSegment {
    /// `t_f` points in the canonical frame.
    pub coords: Vec<Vec2>,
    /// Index of the source agent within its scenario.
    pub agent_index: usize,
    /// Frame holding the anchor position; the segment spans the following
    /// `t_f` frames.
    pub anchor_frame: usize,
    /// World -> canonical mapping used to normalize this segment.
    pub transform: Similarity,
}

impl MotionSegment {
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.coords)
    }
}

pub fn flatten(coords: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(coords.len() * 2);
    for p in coords {
        out.push(p.x);
        out.push(p.y);
    }
    out
}

pub fn unflatten(values: &[f64]) -> Vec<Vec2> {
    values
        .chunks_exact(2)
        .map(|c| Vec2::new(c[0], c[1]))
        .collect()
}

/// Canonical frame anchored at `origin`, +x toward `control`, unit length
/// equal to the control distance. A control point on top of the anchor
/// (agent effectively arrived) degenerates to rotation-only using the
/// last nonzero heading.
pub fn canonical_frame(
    origin: Vec2,
    control: Vec2,
    fallback_heading: Vec2,
    scale_mode: ScaleMode,
    pace: f64,
    horizon: f64,
) -> Similarity {
    const MIN_DIST: f64 = 1e-6;
    let d = control - origin;
    let dist = d.norm();
    if dist < MIN_DIST {
        let h = if fallback_heading.norm() > 1e-12 {
            fallback_heading
        } else {
            Vec2::new(1.0, 0.0)
        };
        return Similarity { origin, angle: h.y.atan2(h.x), scale: 1.0 };
    }
    let scale = match scale_mode {
        ScaleMode::ControlDistance => dist,
        ScaleMode::Pace => {
            let s = pace * horizon;
            if s > MIN_DIST {
                s
            } else {
                dist
            }
        }
    };
    Similarity { origin, angle: d.y.atan2(d.x), scale }
}

/// Control point for an agent at `from` heading to `dest`: the point
/// `pace·horizon` meters along the planned path. Falls back to the
/// straight line when no nav graph is given or planning fails.
pub fn nav_control_point(
    nav: Option<&NavGraph>,
    from: Vec2,
    dest: Vec2,
    pace: f64,
    horizon: f64,
) -> Vec2 {
    let want = (pace * horizon).max(0.0);
    if let Some(nav) = nav {
        if let Ok(path) = nav.shortest_path(from, dest) {
            return navmesh::point_at_arc_length(&path, want);
        }
    }
    let d = dest - from;
    let dist = d.norm();
    if dist < 1e-12 {
        dest
    } else {
        from + d * (want.min(dist) / dist)
    }
}

/// Last nonzero movement direction at or before `upto`, used when the
/// control direction degenerates.
pub fn last_heading(positions: &[Vec2], upto: usize) -> Vec2 {
    for i in (1..=upto.min(positions.len() - 1)).rev() {
        let d = positions[i] - positions[i - 1];
        if d.norm() > 1e-12 {
            return d;
        }
    }
    Vec2::new(1.0, 0.0)
}

/// Cuts every agent into non-overlapping canonical segments. Tails
/// shorter than `t_f` frames are dropped.
pub fn segment_and_normalize(
    scenario: &Scenario,
    nav: Option<&NavGraph>,
    options: &SegmentOptions,
) -> Result<Vec<MotionSegment>> {
    if options.t_f == 0 {
        return Err(Error::Invalid("segment length must be >= 1".into()));
    }
    let mut out = Vec::new();
    for (agent_index, agent) in scenario.agents.iter().enumerate() {
        let pace = agent.mean_speed(scenario.fps);
        let dest = agent.end();
        let n = agent.positions.len();
        let mut local = 0usize; // anchor offset within the track
        while local + options.t_f < n {
            let origin = agent.positions[local];
            let control = nav_control_point(nav, origin, dest, pace, options.horizon);
            let heading = last_heading(&agent.positions, local);
            let frame = canonical_frame(
                origin,
                control,
                heading,
                options.scale_mode,
                pace,
                options.horizon,
            );
            let coords = agent.positions[local + 1..=local + options.t_f]
                .iter()
                .map(|&p| frame.to_canonical(p))
                .collect();
            out.push(MotionSegment {
                coords,
                agent_index,
                anchor_frame: agent.spawn_frame + local,
                transform: frame,
            });
            local += options.t_f;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorVocab {
    pub t_f: usize,
    /// Cluster centers as flattened canonical segments (2·t_f values).
    pub centers: Vec<Vec<f64>>,
}

impl BehaviorVocab {
    pub fn b(&self) -> usize {
        self.centers.len()
    }

    pub fn center_coords(&self, state: usize) -> Vec<Vec2> {
        unflatten(&self.centers[state])
    }

    /// Sum of squared distances from each segment to its nearest center.
    pub fn sse(&self, segments: &[Vec<f64>]) -> f64 {
        segments
            .iter()
            .map(|s| {
                self.centers
                    .iter()
                    .map(|c| dist_sq(s, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("{} {}\n", self.b(), self.t_f);
        for c in &self.centers {
            let line: Vec<String> = c.iter().map(|v| format!("{v}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<BehaviorVocab> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty vocabulary file"))?;
        let mut it = header.split_whitespace();
        let b: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "bad state count"))?;
        let t_f: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::parse(path, 1, "bad segment length"))?;
        let mut centers = Vec::with_capacity(b);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, i + 2, "bad center value"))?;
            if vals.len() != 2 * t_f {
                return Err(Error::parse(
                    path,
                    i + 2,
                    format!("center has {} values, expected {}", vals.len(), 2 * t_f),
                ));
            }
            centers.push(vals);
        }
        if centers.len() != b {
            return Err(Error::parse(
                path,
                1,
                format!("header promises {b} centers, file has {}", centers.len()),
            ));
        }
        Ok(BehaviorVocab { t_f, centers })
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm with k-means++ seeding. Deterministic given the
/// seed; converges when assignments stop changing.
pub fn kmeans_fit(
    segments: &[MotionSegment],
    b: usize,
    max_iters: usize,
    seed: u64,
) -> Result<BehaviorVocab> {
    let data: Vec<Vec<f64>> = segments.iter().map(|s| s.flat()).collect();
    let t_f = segments.first().map_or(0, |s| s.coords.len());
    kmeans_fit_flat(&data, t_f, b, max_iters, seed)
}

pub fn kmeans_fit_flat(
    data: &[Vec<f64>],
    t_f: usize,
    b: usize,
    max_iters: usize,
    seed: u64,
) -> Result<BehaviorVocab> {
    if b == 0 {
        return Err(Error::Invalid("need at least one cluster".into()));
    }
    if data.len() < b {
        return Err(Error::Invalid(format!(
            "{} segments cannot seed {b} clusters",
            data.len()
        )));
    }
    let dim = data[0].len();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(data, b, &mut rng);
    let mut assignment = vec![usize::MAX; data.len()];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, x) in data.iter().enumerate() {
            let a = nearest_center(x, &centers);
            if a != assignment[i] {
                assignment[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; b];
        let mut counts = vec![0usize; b];
        for (x, &a) in data.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..b {
            if counts[c] == 0 {
                // empty cluster: adopt the point farthest from its center
                let far = (0..data.len())
                    .max_by(|&i, &j| {
                        dist_sq(&data[i], &centers[assignment[i]])
                            .total_cmp(&dist_sq(&data[j], &centers[assignment[j]]))
                    })
                    .unwrap();
                centers[c] = data[far].clone();
            } else {
                for (s, v) in centers[c].iter_mut().zip(&sums[c]) {
                    *s = v / counts[c] as f64;
                }
            }
        }
    }
    Ok(BehaviorVocab { t_f, centers })
}

fn seed_plus_plus(data: &[Vec<f64>], b: usize, rng: &mut ChaCha12Rng) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(b);
    centers.push(data[rng.gen_range(0..data.len())].clone());
    let mut d2: Vec<f64> = data.iter().map(|x| dist_sq(x, &centers[0])).collect();
    while centers.len() < b {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // all-duplicate data: any point works
            rng.gen_range(0..data.len())
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = data.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(data[next].clone());
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(dist_sq(x, centers.last().unwrap()));
        }
    }
    centers
}

fn nearest_center(x: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in centers.iter().enumerate() {
        let d = dist_sq(x, c);
        // strict `<` keeps the lowest index on exact ties
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Nearest-center assignment: squared Euclidean distance, ties to the
/// lowest state index.
pub fn assign_state(canonical: &[f64], vocab: &BehaviorVocab) -> usize {
    nearest_center(canonical, &vocab.centers)
}
