//! Benchmark metrics between a generated and a ground-truth scenario:
//! four scene-level distribution distances over 1-second samples
//! (density, type frequency, quadrat coverage, population), a pooled
//! four-component kinematics distance, bidirectional trajectory
//! alignment (DTW) and coverage (diversity) scores, and a collision
//! percentage. Every distribution distance is the exact empirical
//! 1-Wasserstein via quantile-function integration.

pub mod oracle;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::trajectory::Scenario;

/// Quadrat grid resolution per axis (the scene is split Q x Q).
pub const DEFAULT_Q: usize = 10;
/// Two agents closer than this are counted as colliding, meters.
pub const COLLISION_DIST_M: f64 = 0.2;

// ---------------------------------------------------------------------------
// 1-D earth mover's distance

/// Exact 1-Wasserstein distance between two empirical distributions,
/// each sample weighted 1/n on its own side. Sample counts may differ:
/// the distance is the integral |F_a^{-1}(u) - F_b^{-1}(u)| du over the
/// merged quantile breakpoints.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid(
            "earth mover's distance needs nonempty sample sets".into(),
        ));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let mut total = 0.0;
    let mut u = 0.0;
    let (mut ia, mut ib) = (0usize, 0usize);
    while ia < n && ib < m {
        // next breakpoint: compare (ia+1)/n vs (ib+1)/m exactly
        let lhs = (ia + 1) * m;
        let rhs = (ib + 1) * n;
        let next = if lhs <= rhs {
            (ia + 1) as f64 / n as f64
        } else {
            (ib + 1) as f64 / m as f64
        };
        total += (a[ia] - b[ib]).abs() * (next - u);
        u = next;
        if lhs <= rhs {
            ia += 1;
        }
        if rhs <= lhs {
            ib += 1;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// quadrat-sampled scene-level metrics

/// The Q x Q binning shared by both scenarios, anchored to the
/// ground-truth bounding box. Positions are clamped into the outermost
/// cells so every alive agent lands in exactly one quadrat.
#[derive(Debug, Clone, Copy)]
pub struct QuadratGrid {
    lo: Vec2,
    cell: Vec2,
    q: usize,
}

impl QuadratGrid {
    pub fn new(lo: Vec2, hi: Vec2, q: usize) -> QuadratGrid {
        QuadratGrid {
            lo,
            cell: Vec2::new(
                ((hi.x - lo.x) / q as f64).max(1e-12),
                ((hi.y - lo.y) / q as f64).max(1e-12),
            ),
            q,
        }
    }

    pub fn index(&self, p: Vec2) -> usize {
        let cx = (((p.x - self.lo.x) / self.cell.x).floor() as isize)
            .clamp(0, self.q as isize - 1) as usize;
        let cy = (((p.y - self.lo.y) / self.cell.y).floor() as isize)
            .clamp(0, self.q as isize - 1) as usize;
        cy * self.q + cx
    }
}

/// Frames hit by 1-second downsampling: 0 s, 1 s, ... while inside the
/// scenario.
pub fn sampled_frames(total_frames: usize, fps: f64) -> Vec<usize> {
    let mut frames = Vec::new();
    let mut t = 0usize;
    loop {
        let f = (t as f64 * fps).round() as usize;
        if f >= total_frames {
            break;
        }
        frames.push(f);
        t += 1;
    }
    frames
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratMetrics {
    pub dens: f64,
    pub freq: f64,
    pub cov: f64,
    pub pop: f64,
}

/// Per-second (dens, freq, cov, pop) series of one scenario on `grid`.
pub fn quadrat_series(
    s: &Scenario,
    grid: &QuadratGrid,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let q2 = grid.q * grid.q;
    let mut dens = Vec::new();
    let mut freq = Vec::new();
    let mut cov = Vec::new();
    let mut pop = Vec::new();
    for f in sampled_frames(s.total_frames, s.fps) {
        let mut counts = vec![0usize; q2];
        let mut kind_masks = vec![0u8; q2];
        let mut n_t = 0usize;
        for a in s.alive_at(f) {
            let p = a.position_at(f).unwrap();
            let cell = grid.index(p);
            counts[cell] += 1;
            kind_masks[cell] |= 1 << a.kind.index();
            n_t += 1;
        }
        let total: usize = counts.iter().sum();
        debug_assert_eq!(total, n_t, "every alive agent falls in one quadrat");
        dens.push(total as f64 / q2 as f64);
        freq.push(
            kind_masks.iter().map(|m| m.count_ones()).sum::<u32>() as f64 / q2 as f64,
        );
        cov.push(counts.iter().filter(|&&c| c > 0).count() as f64 / q2 as f64);
        pop.push(n_t as f64);
    }
    (dens, freq, cov, pop)
}

/// The four scene-level metrics: each is the 1-Wasserstein distance
/// between the generated and ground-truth per-second series, on a
/// Q x Q grid over the ground-truth bounding box.
pub fn quadrat_metrics(gen: &Scenario, gt: &Scenario, q: usize) -> Result<QuadratMetrics> {
    if gen.scene_id != gt.scene_id {
        return Err(Error::Invalid(format!(
            "scene mismatch: generated '{}' vs ground truth '{}'",
            gen.scene_id, gt.scene_id
        )));
    }
    if q == 0 {
        return Err(Error::Invalid("quadrat resolution must be >= 1".into()));
    }
    let (lo, hi) = gt
        .bbox()
        .ok_or_else(|| Error::Invalid("ground truth has no positions".into()))?;
    let grid = QuadratGrid::new(lo, hi, q);
    let (gd, gf, gc, gp) = quadrat_series(gen, &grid);
    let (td, tf, tc, tp) = quadrat_series(gt, &grid);
    Ok(QuadratMetrics {
        dens: emd_1d(&gd, &td)?,
        freq: emd_1d(&gf, &tf)?,
        cov: emd_1d(&gc, &tc)?,
        pop: emd_1d(&gp, &tp)?,
    })
}

// ---------------------------------------------------------------------------
// kinematics

/// Per-agent travel distances, pooled per-step speeds, pooled per-step
/// acceleration magnitudes (forward differences at the scenario fps),
/// and per-agent durations in seconds.
fn kinem_samples(s: &Scenario) -> [Vec<f64>; 4] {
    let fps = s.fps;
    let mut dist = Vec::new();
    let mut vel = Vec::new();
    let mut acc = Vec::new();
    let mut time = Vec::new();
    for a in &s.agents {
        dist.push(a.path_length());
        time.push(a.positions.len() as f64 / fps);
        let speeds: Vec<Vec2> = a
            .positions
            .windows(2)
            .map(|w| (w[1] - w[0]) * fps)
            .collect();
        for v in &speeds {
            vel.push(v.norm());
        }
        for w in speeds.windows(2) {
            acc.push(((w[1] - w[0]) * fps).norm());
        }
    }
    [dist, vel, acc, time]
}

/// Mean of up to four 1-Wasserstein distances over kinematic
/// quantities, each sample divided by the ground-truth mean of that
/// quantity first. Components whose ground-truth mean is zero (or that
/// have no samples on either side) are skipped with a warning.
pub fn metric_kinem(gen: &Scenario, gt: &Scenario) -> Result<f64> {
    if gen.agents.is_empty() || gt.agents.is_empty() {
        return Err(Error::Invalid(
            "kinematics metric needs agents on both sides".into(),
        ));
    }
    let gen_sets = kinem_samples(gen);
    let gt_sets = kinem_samples(gt);
    let names = ["distance", "velocity", "acceleration", "time"];
    let mut sum = 0.0;
    let mut used = 0usize;
    for ((g, t), name) in gen_sets.iter().zip(&gt_sets).zip(names) {
        if g.is_empty() || t.is_empty() {
            eprintln!("warning: kinematics {name} component has no samples; skipped");
            continue;
        }
        let mean = t.iter().sum::<f64>() / t.len() as f64;
        if mean <= 0.0 {
            eprintln!("warning: kinematics {name} ground-truth mean is zero; skipped");
            continue;
        }
        let gn: Vec<f64> = g.iter().map(|v| v / mean).collect();
        let tn: Vec<f64> = t.iter().map(|v| v / mean).collect();
        sum += emd_1d(&gn, &tn)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Invalid(
            "kinematics metric: every component was skipped".into(),
        ));
    }
    Ok(sum / used as f64)
}

// ---------------------------------------------------------------------------
// trajectory alignment

/// Dynamic-time-warping distance between two point sequences: the
/// minimum total Euclidean cost over all monotone full alignments,
/// divided by the frame rate.
pub fn dtw(a: &[Vec2], b: &[Vec2], fps: f64) -> f64 {
    assert!(
        !a.is_empty() && !b.is_empty(),
        "alignment needs nonempty trajectories"
    );
    let m = b.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut curr = vec![f64::INFINITY; m];
    for (i, pa) in a.iter().enumerate() {
        for (j, pb) in b.iter().enumerate() {
            let cost = (*pa - *pb).norm();
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 {
                    best = best.min(prev[j]);
                }
                if j > 0 {
                    best = best.min(curr[j - 1]);
                }
                if i > 0 && j > 0 {
                    best = best.min(prev[j - 1]);
                }
                best
            };
            curr[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m - 1] / fps
}

/// Bidirectional alignment score and coverage. `dtw_score` averages,
/// over both directions, the mean distance from each source trajectory
/// to its closest target trajectory. `diversity` averages the fraction
/// of target trajectories that are someone's closest match; identical
/// sets score exactly 1.
pub fn metric_dtw_div(gen: &Scenario, gt: &Scenario, fps: f64) -> Result<(f64, f64)> {
    if gen.agents.is_empty() || gt.agents.is_empty() {
        return Err(Error::Invalid(
            "alignment metrics need agents on both sides".into(),
        ));
    }
    let n = gen.agents.len();
    let m = gt.agents.len();
    // pairwise matrix, rows = generated, cols = ground truth
    let cost: Vec<Vec<f64>> = gen
        .agents
        .par_iter()
        .map(|a| {
            gt.agents
                .iter()
                .map(|b| dtw(&a.positions, &b.positions, fps))
                .collect()
        })
        .collect();

    let mut gen_to_gt = 0.0;
    let mut gen_hits = vec![false; m];
    for row in &cost {
        let (mut arg, mut best) = (0usize, f64::INFINITY);
        for (j, &c) in row.iter().enumerate() {
            if c < best {
                best = c;
                arg = j;
            }
        }
        gen_to_gt += best;
        gen_hits[arg] = true;
    }
    let mut gt_to_gen = 0.0;
    let mut gt_hits = vec![false; n];
    for j in 0..m {
        let (mut arg, mut best) = (0usize, f64::INFINITY);
        for (i, row) in cost.iter().enumerate() {
            if row[j] < best {
                best = row[j];
                arg = i;
            }
        }
        gt_to_gen += best;
        gt_hits[arg] = true;
    }
    let dtw_score = 0.5 * (gen_to_gt / n as f64 + gt_to_gen / m as f64);
    let coverage_gt = gen_hits.iter().filter(|&&h| h).count() as f64 / m as f64;
    let coverage_gen = gt_hits.iter().filter(|&&h| h).count() as f64 / n as f64;
    Ok((dtw_score, 0.5 * (coverage_gt + coverage_gen)))
}

// ---------------------------------------------------------------------------
// collisions

/// Percentage of (frame, agent) slots where the agent stands closer
/// than 0.2 m to some other alive agent, normalized by total frames
/// times total agents. An empty scenario scores 0.
pub fn metric_col(s: &Scenario) -> f64 {
    let n = s.agents.len();
    if n == 0 || s.total_frames == 0 {
        return 0.0;
    }
    let mut flagged = 0usize;
    for t in 0..s.total_frames {
        let positions: Vec<Vec2> = s.alive_at(t).map(|a| a.position_at(t).unwrap()).collect();
        for (i, p) in positions.iter().enumerate() {
            let hit = positions
                .iter()
                .enumerate()
                .any(|(j, other)| j != i && (*p - *other).norm() < COLLISION_DIST_M);
            if hit {
                flagged += 1;
            }
        }
    }
    100.0 * flagged as f64 / (s.total_frames * n) as f64
}

// ---------------------------------------------------------------------------
// whole-benchmark evaluation

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub dens: f64,
    pub freq: f64,
    pub cov: f64,
    pub pop: f64,
    pub kinem: f64,
    pub dtw: f64,
    pub div: f64,
    pub col: f64,
    pub reps: usize,
    pub scene_id: String,
}

impl MetricsReport {
    pub fn csv_header() -> &'static str {
        "dens,freq,cov,pop,kinem,dtw,div,col"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.dens, self.freq, self.cov, self.pop, self.kinem, self.dtw, self.div, self.col
        )
    }

    pub fn table(&self) -> String {
        format!(
            "metric        value\n\
             dens     {:>10.4}\n\
             freq     {:>10.4}\n\
             cov      {:>10.4}\n\
             pop      {:>10.4}\n\
             kinem    {:>10.4}\n\
             dtw      {:>10.4}\n\
             div      {:>10.4}\n\
             col      {:>10.4}\n\
             ({} repetition{}, scene '{}')",
            self.dens,
            self.freq,
            self.cov,
            self.pop,
            self.kinem,
            self.dtw,
            self.div,
            self.col,
            self.reps,
            if self.reps == 1 { "" } else { "s" },
            self.scene_id
        )
    }
}

/// All eight metrics for each repetition (truncated to the ground-truth
/// duration first), averaged across repetitions.
pub fn evaluate(gens: &[Scenario], gt: &Scenario, q: usize) -> Result<MetricsReport> {
    if gens.is_empty() {
        return Err(Error::Invalid("evaluation needs at least one repetition".into()));
    }
    let per_rep: Vec<Result<[f64; 8]>> = gens
        .par_iter()
        .map(|gen| {
            let gen = gen.truncated(gt.total_frames);
            let quad = quadrat_metrics(&gen, gt, q)?;
            let kinem = metric_kinem(&gen, gt)?;
            let (dtw_score, div) = metric_dtw_div(&gen, gt, gt.fps)?;
            let col = metric_col(&gen);
            Ok([
                quad.dens, quad.freq, quad.cov, quad.pop, kinem, dtw_score, div, col,
            ])
        })
        .collect();
    let mut sums = [0.0f64; 8];
    for rep in per_rep {
        let vals = rep?;
        for (s, v) in sums.iter_mut().zip(vals) {
            *s += v;
        }
    }
    let k = gens.len() as f64;
    Ok(MetricsReport {
        dens: sums[0] / k,
        freq: sums[1] / k,
        cov: sums[2] / k,
        pop: sums[3] / k,
        kinem: sums[4] / k,
        dtw: sums[5] / k,
        div: sums[6] / k,
        col: sums[7] / k,
        reps: gens.len(),
        scene_id: gt.scene_id.clone(),
    })
}
