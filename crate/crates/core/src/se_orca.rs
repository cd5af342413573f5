//! Non-learned baseline generator: agents are drawn straight from the
//! appearance histogram and walk toward navigation control points under
//! reciprocal collision avoidance. Population dynamics (per-window count
//! sampling) and departure rules match the learned simulator so the two
//! engines differ only in where agents come from and how they move.

use rand_chacha::ChaCha12Rng;

use crate::emitter::{histogram_emit, sample_population_count, EmittedAgent, EmpiricalStats};
use crate::error::Result;
use crate::geom::Vec2;
use crate::layout::SceneLayout;
use crate::navmesh::{self, NavGraph};
use crate::orca::{orca_velocity, OrcaAgent, ORCA_RADIUS_M, ORCA_TAU_S};
use crate::simulator::ARRIVAL_RADIUS_M;
use crate::trajectory::{Agent, Scenario};
use crate::vocab::nav_control_point;

/// Neighbors beyond this range impose no active constraint at walking
/// speeds; skipping them keeps the per-frame solve small.
const NEIGHBOR_CUTOFF_M: f64 = 16.0;
/// Clockwise steering bias (radians) applied to every preferred
/// velocity. Perfectly symmetric approaches otherwise reach a fixed
/// point where all deflections cancel and nobody passes; a shared
/// "keep right" convention breaks the tie without visibly bending paths.
const RIGHT_BIAS_RAD: f64 = 0.015;
const LIFETIME_FACTOR: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct SeOrcaOptions {
    /// Window length in frames for population resampling.
    pub t_w: usize,
    /// Control-point look-ahead in seconds.
    pub horizon: f64,
    /// Emit only half the sampled count in window 0 (warm-up rule).
    pub halve_first_window: bool,
}

impl Default for SeOrcaOptions {
    fn default() -> SeOrcaOptions {
        SeOrcaOptions {
            t_w: 50,
            horizon: 4.0,
            halve_first_window: false,
        }
    }
}

struct Walker {
    id: u64,
    agent: EmittedAgent,
    trail: Vec<Vec2>,
    vel: Vec2,
    lifetime_cap: usize,
}

fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Generate a scenario by per-window histogram emission plus ORCA
/// locomotion toward navmesh control points. Departure rules (1 m
/// arrival radius, 4x-travel-time lifetime cap) match the simulator.
pub fn se_orca_generate(
    layout: &SceneLayout,
    nav: Option<&NavGraph>,
    stats: &EmpiricalStats,
    p: &[f64],
    duration_frames: usize,
    options: &SeOrcaOptions,
    rng: &mut ChaCha12Rng,
) -> Result<Scenario> {
    let fps = layout.fps;
    let dt = 1.0 / fps;
    let t_w = options.t_w.max(1);

    let mut live: Vec<Walker> = Vec::new();
    let mut pending: Vec<(u64, EmittedAgent)> = Vec::new();
    let mut finished: Vec<Agent> = Vec::new();
    let mut next_id: u64 = 0;

    let mut frame = 0usize;
    while frame < duration_frames {
        // window boundary: top the population back up
        if frame % t_w == 0 {
            let window = frame / t_w;
            let mut count = sample_population_count(p, live.len() + pending.len(), rng)?;
            if window == 0 && options.halve_first_window {
                count = count.div_ceil(2);
            }
            let span = t_w.min(duration_frames - frame);
            for e in histogram_emit(layout, stats, count, frame, span, rng)? {
                pending.push((next_id, e));
                next_id += 1;
            }
        }

        // activations
        let mut activating: Vec<(u64, EmittedAgent)> = Vec::new();
        pending.retain(|(id, e)| {
            if e.spawn_frame == frame {
                activating.push((*id, e.clone()));
                false
            } else {
                true
            }
        });
        activating.sort_by_key(|(id, _)| *id);
        for (id, e) in activating {
            let path_len = match nav.map(|n| n.shortest_path(e.start, e.dest)) {
                Some(Ok(path)) => navmesh::polyline_length(&path),
                _ => (e.dest - e.start).norm(),
            };
            let pace = e.pace.max(0.05);
            let lifetime_cap =
                ((LIFETIME_FACTOR * path_len / pace) * fps).ceil().max(1.0) as usize;
            live.push(Walker {
                id,
                trail: vec![e.start],
                vel: Vec2::ZERO,
                lifetime_cap,
                agent: EmittedAgent { pace, ..e },
            });
        }

        // departures
        let mut keep = Vec::with_capacity(live.len());
        for w in live.drain(..) {
            let pos = *w.trail.last().unwrap();
            let age = frame - w.agent.spawn_frame;
            if (pos - w.agent.dest).norm() <= ARRIVAL_RADIUS_M || age >= w.lifetime_cap {
                finished.push(Agent {
                    id: w.id,
                    kind: w.agent.kind,
                    spawn_frame: w.agent.spawn_frame,
                    positions: w.trail,
                });
            } else {
                keep.push(w);
            }
        }
        live = keep;
        live.sort_by_key(|w| w.id);

        // one reciprocal-avoidance step against the frozen frame
        let frozen: Vec<OrcaAgent> = live
            .iter()
            .map(|w| {
                let pos = *w.trail.last().unwrap();
                let control =
                    nav_control_point(nav, pos, w.agent.dest, w.agent.pace, options.horizon);
                let to = control - pos;
                let pref = if to.norm() > 1e-9 {
                    rotate(to.normalized() * w.agent.pace, -RIGHT_BIAS_RAD)
                } else {
                    Vec2::ZERO
                };
                OrcaAgent {
                    pos,
                    vel: w.vel,
                    pref_vel: pref,
                    radius: ORCA_RADIUS_M,
                    max_speed: 1.5 * w.agent.pace,
                }
            })
            .collect();
        for (i, w) in live.iter_mut().enumerate() {
            let me = frozen[i];
            let neighbors: Vec<OrcaAgent> = frozen
                .iter()
                .enumerate()
                .filter(|&(j, n)| j != i && (n.pos - me.pos).norm() <= NEIGHBOR_CUTOFF_M)
                .map(|(_, n)| *n)
                .collect();
            w.vel = orca_velocity(&me, &neighbors, ORCA_TAU_S, dt);
            let pos = *w.trail.last().unwrap();
            w.trail.push(pos + w.vel * dt);
        }

        frame += 1;
    }

    for w in live.drain(..) {
        finished.push(Agent {
            id: w.id,
            kind: w.agent.kind,
            spawn_frame: w.agent.spawn_frame,
            positions: w.trail,
        });
    }
    let mut s = Scenario {
        fps,
        total_frames: duration_frames,
        scene_id: layout.scene_id.clone(),
        agents: finished,
    };
    s.normalize();
    Ok(s)
}
