//! Procedurally generated scenes with known structure. These stand in
//! for recorded data when exercising the full train/generate path:
//! the corridor has bidirectional edge-to-edge commuters, the crossing
//! has two orthogonal streams that weave through each other.

use crate::geom::Vec2;
use crate::grid::GridRaster;
use crate::layout::{SceneLayout, SegClass};
use crate::orca::{orca_velocity, OrcaAgent, ORCA_RADIUS_M, ORCA_TAU_S};
use crate::trajectory::{Agent, AgentKind, Scenario};
use crate::Result;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub const SYNTH_FPS: f64 = 5.0;

fn open_segmentation(width_m: f64, height_m: f64) -> GridRaster {
    let w = width_m.round() as usize;
    let h = height_m.round() as usize;
    GridRaster::filled(w, h, 1.0, Vec2::ZERO, SegClass::Sidewalk as usize as f64)
        .expect("fixture grid dimensions are positive")
}

/// Corridor commuters: agents enter at one short edge, walk straight to
/// the other at a steady personal pace. Entrances alternate sides, one
/// agent every `spawn_every` frames.
pub fn corridor_fixture(seed: u64, duration_frames: usize) -> Result<(SceneLayout, Scenario)> {
    const LENGTH_M: f64 = 40.0;
    const WIDTH_M: f64 = 8.0;
    const SPAWN_EVERY: usize = 25;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut agents = Vec::new();
    let mut id = 0u64;
    let mut spawn_frame = 0usize;
    // Worst-case crossing takes ~213 frames; entries stop early enough
    // that nobody is cut off mid-corridor, keeping endpoint statistics
    // clean.
    let last_entry = duration_frames.saturating_sub(220);
    while spawn_frame <= last_entry {
        let eastbound = id % 2 == 0;
        let y0 = rng.gen_range(1.5..WIDTH_M - 1.5);
        let y1 = rng.gen_range(1.5..WIDTH_M - 1.5);
        let (start, dest) = if eastbound {
            (Vec2::new(1.0, y0), Vec2::new(LENGTH_M - 1.0, y1))
        } else {
            (Vec2::new(LENGTH_M - 1.0, y0), Vec2::new(1.0, y1))
        };
        let pace = rng.gen_range(0.9..1.25);
        let step = (dest - start).normalized() * (pace / SYNTH_FPS);
        let n_steps = ((dest - start).norm() * SYNTH_FPS / pace).ceil() as usize;
        let mut positions = Vec::with_capacity(n_steps + 1);
        let mut p = start;
        for _ in 0..=n_steps {
            positions.push(p);
            p = p + step;
        }
        let keep = positions.len().min(duration_frames - spawn_frame);
        positions.truncate(keep.max(1));
        agents.push(Agent {
            id,
            kind: AgentKind::Pedestrian,
            spawn_frame,
            positions,
        });
        id += 1;
        spawn_frame += SPAWN_EVERY;
    }

    let mut scenario = Scenario {
        fps: SYNTH_FPS,
        total_frames: duration_frames,
        scene_id: "corridor".into(),
        agents,
    };
    scenario.normalize();
    scenario.validate()?;
    let layout = SceneLayout::derive(
        "corridor",
        open_segmentation(LENGTH_M, WIDTH_M),
        &scenario,
        None,
    )?;
    Ok((layout, scenario))
}

/// Two orthogonal streams through an open square. Ground-truth motion is
/// synthesized with reciprocal collision avoidance so the recorded
/// trajectories carry real neighbor-dependent structure: agents bend
/// around each other in the central intersection.
pub fn crossing_fixture(seed: u64, duration_frames: usize) -> Result<(SceneLayout, Scenario)> {
    const SIDE_M: f64 = 24.0;
    const SPAWN_EVERY: usize = 15;
    // Small clockwise steering bias; exactly symmetric encounters are
    // fixed points of the avoidance rule and would stall forever.
    const BIAS_RAD: f64 = 0.015;

    struct Walker {
        id: u64,
        spawn_frame: usize,
        dest: Vec2,
        pace: f64,
        trail: Vec<Vec2>,
        vel: Vec2,
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dt = 1.0 / SYNTH_FPS;
    let mut live: Vec<Walker> = Vec::new();
    let mut done: Vec<Agent> = Vec::new();
    let mut next_id = 0u64;

    for frame in 0..duration_frames {
        if frame % SPAWN_EVERY == 0 {
            // One eastbound and one northbound entrant per spawn tick.
            for stream in 0..2 {
                let lane = rng.gen_range(SIDE_M / 2.0 - 2.0..SIDE_M / 2.0 + 2.0);
                let lane_out = rng.gen_range(SIDE_M / 2.0 - 2.0..SIDE_M / 2.0 + 2.0);
                let (start, dest) = if stream == 0 {
                    (Vec2::new(1.0, lane), Vec2::new(SIDE_M - 1.0, lane_out))
                } else {
                    (Vec2::new(lane, 1.0), Vec2::new(lane_out, SIDE_M - 1.0))
                };
                live.push(Walker {
                    id: next_id,
                    spawn_frame: frame,
                    dest,
                    pace: rng.gen_range(0.95..1.25),
                    trail: vec![start],
                    vel: Vec2::ZERO,
                });
                next_id += 1;
            }
        }

        // Frozen snapshot so every agent reacts to the same crowd state.
        let snapshot: Vec<OrcaAgent> = live
            .iter()
            .map(|w| {
                let pos = *w.trail.last().expect("trail is never empty");
                let to_dest = w.dest - pos;
                let pref = if to_dest.norm() > 1e-9 {
                    let v = to_dest.normalized() * w.pace;
                    Vec2::new(
                        v.x * BIAS_RAD.cos() + v.y * BIAS_RAD.sin(),
                        -v.x * BIAS_RAD.sin() + v.y * BIAS_RAD.cos(),
                    )
                } else {
                    Vec2::ZERO
                };
                OrcaAgent {
                    pos,
                    vel: w.vel,
                    pref_vel: pref,
                    radius: ORCA_RADIUS_M,
                    max_speed: 1.5 * w.pace,
                }
            })
            .collect();
        for (i, w) in live.iter_mut().enumerate() {
            let me = snapshot[i];
            let neighbors: Vec<OrcaAgent> = snapshot
                .iter()
                .enumerate()
                .filter(|&(j, o)| j != i && (o.pos - me.pos).norm() < 16.0)
                .map(|(_, o)| *o)
                .collect();
            w.vel = orca_velocity(&me, &neighbors, ORCA_TAU_S, dt);
            let next = me.pos + w.vel * dt;
            w.trail.push(next);
        }

        let mut still_live = Vec::new();
        for w in live {
            let pos = *w.trail.last().unwrap();
            if (pos - w.dest).norm() <= 0.5 {
                done.push(Agent {
                    id: w.id,
                    kind: AgentKind::Pedestrian,
                    spawn_frame: w.spawn_frame,
                    positions: w.trail,
                });
            } else {
                still_live.push(w);
            }
        }
        live = still_live;
    }
    for w in live {
        done.push(Agent {
            id: w.id,
            kind: AgentKind::Pedestrian,
            spawn_frame: w.spawn_frame,
            positions: w.trail,
        });
    }

    let mut scenario = Scenario {
        fps: SYNTH_FPS,
        total_frames: duration_frames,
        scene_id: "crossing".into(),
        agents: done,
    }
    .truncated(duration_frames);
    scenario.normalize();
    scenario.validate()?;
    let layout = SceneLayout::derive(
        "crossing",
        open_segmentation(SIDE_M, SIDE_M),
        &scenario,
        None,
    )?;
    Ok((layout, scenario))
}
