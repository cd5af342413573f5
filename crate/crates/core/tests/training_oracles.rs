//! Learning-dynamics fixtures with known answers: a repeated window the
//! emitter must overfit and then reproduce tightly, a repeated segment
//! the decoder must drive to near-zero error, an unpredictable
//! next-state stream whose cross-entropy floor is ln B, and a corridor
//! walk the trained simulator must complete efficiently.

use crowdes_core::emitter::{emit_agents, train_emitter, EmittedAgent, EmitterTrainOptions};
use crowdes_core::geom::Vec2;
use crowdes_core::grid::GridRaster;
use crowdes_core::layout::{SceneLayout, SegClass};
use crowdes_core::navmesh::NavGraph;
use crowdes_core::rng::SeedStreams;
use crowdes_core::simulator::{
    step_window, train_simulator, AblationFlags, RolloutState, SimTrainOptions, ARRIVAL_RADIUS_M,
};
use crowdes_core::synthetic::corridor_fixture;
use crowdes_core::trajectory::{Agent, AgentKind, Scenario};
use crowdes_core::vocab::{segment_and_normalize, BehaviorVocab, SegmentOptions};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn open_layout(scene: &str, w: usize, h: usize, scenario: &Scenario) -> SceneLayout {
    let seg = GridRaster::filled(w, h, 1.0, Vec2::ZERO, SegClass::Sidewalk as usize as f64)
        .unwrap();
    SceneLayout::derive(scene, seg, scenario, None).unwrap()
}

#[test]
fn emitter_overfits_and_reproduces_a_repeated_window() {
    // 40 identical windows: one pedestrian spawning at in-window offset
    // 8, walking (2,4) -> (10,4) at exactly 1 m/s.
    let t_w = 50usize;
    let fps = 5.0;
    let windows = 40usize;
    let mut agents = Vec::new();
    for wi in 0..windows {
        let spawn = wi * t_w + 8;
        let positions: Vec<Vec2> = (0..=40)
            .map(|i| Vec2::new(2.0 + i as f64 * 0.2, 4.0))
            .collect();
        agents.push(Agent {
            id: wi as u64,
            kind: AgentKind::Pedestrian,
            spawn_frame: spawn,
            positions,
        });
    }
    let mut scenario = Scenario {
        fps,
        total_frames: windows * t_w,
        scene_id: "repeat".into(),
        agents,
    };
    scenario.normalize();
    scenario.validate().unwrap();
    let layout = open_layout("repeat", 12, 8, &scenario);

    let opts = EmitterTrainOptions {
        epochs: 1200,
        batch: 64,
        lr: 1e-3,
        ..EmitterTrainOptions::default()
    };
    let mut rng = SeedStreams::new(42).stream("overfit");
    let (model, losses) = train_emitter(&layout, &scenario, t_w, &opts, &mut rng).unwrap();
    let first = losses[0];
    let last = *losses.last().unwrap();
    assert!(
        last < 0.1 * first,
        "denoiser did not overfit: first {first}, last {last}"
    );

    // The deterministic sampler should now collapse any noise draw close
    // to the single training example. Draws are independent single-agent
    // windows, matching the one-spawn-per-window training sets.
    // Tolerances are three times the floor std (0.15 in the normalized
    // working range, where each world axis spans [-1, 1]).
    let occupancy = layout.density.zeros_like();
    let mut sample_rng = SeedStreams::new(43).stream("samples");
    let mut drawn = Vec::new();
    let mut dropped = 0;
    for _ in 0..200 {
        let out = emit_agents(&model, &layout, &occupancy, 1, 0, t_w, &mut sample_rng).unwrap();
        dropped += out.dropped;
        drawn.extend(out.agents);
    }
    assert!(drawn.len() + dropped == 200);
    let world = Vec2::new(
        layout.segmentation.world_width(),
        layout.segmentation.world_height(),
    );
    // The codec widens a degenerate pace range to +-0.25 around the
    // single observed value, so 0.45 normalized = 0.1125 m/s here.
    let tol = 3.0 * 0.15;
    let pace_tol = tol * 0.25;
    let mut close = 0;
    for a in &drawn {
        let ds = a.start - Vec2::new(2.0, 4.0);
        let dd = a.dest - Vec2::new(10.0, 4.0);
        let within = |d: Vec2| {
            (d.x * 2.0 / world.x).abs() <= tol && (d.y * 2.0 / world.y).abs() <= tol
        };
        if within(ds) && within(dd) && (a.pace - 1.0).abs() <= pace_tol {
            close += 1;
        }
    }
    let frac = close as f64 / 200.0;
    assert!(
        frac >= 0.95,
        "only {frac:.2} of draws concentrated on the training window \
         ({} kept, {} dropped)",
        drawn.len(),
        dropped
    );
}

#[test]
fn decoder_overfits_a_single_repeated_segment() {
    // Many copies of one straight constant-speed track.
    let mut agents = Vec::new();
    for i in 0..24u64 {
        let y = 3.0 + (i % 6) as f64 * 0.0; // identical lane on purpose
        let positions: Vec<Vec2> = (0..61)
            .map(|k| Vec2::new(2.0 + k as f64 * 0.25, y))
            .collect();
        agents.push(Agent {
            id: i,
            kind: AgentKind::Pedestrian,
            spawn_frame: (i as usize) * 61,
            positions,
        });
    }
    let mut scenario = Scenario {
        fps: 5.0,
        total_frames: 24 * 61 + 1,
        scene_id: "seg".into(),
        agents,
    };
    scenario.normalize();
    let layout = open_layout("seg", 20, 6, &scenario);
    let nav = NavGraph::build(layout.traversable.clone()).unwrap();
    let seg_opts = SegmentOptions::default();
    let segments = segment_and_normalize(&scenario, Some(&nav), &seg_opts).unwrap();
    assert!(!segments.is_empty());
    let vocab = crowdes_core::vocab::kmeans_fit(&segments, 2, 50, 7).unwrap();

    let opts = SimTrainOptions {
        epochs: 150,
        batch: 64,
        lr: 3e-4,
        ablation: AblationFlags::default(),
    };
    let mut rng = SeedStreams::new(11).stream("sim-overfit");
    let (_, log) = train_simulator(
        &layout,
        &scenario,
        &nav,
        &vocab,
        &seg_opts,
        &opts,
        &mut rng,
    )
    .unwrap();
    let first = log.decoder_mae[0];
    let last = *log.decoder_mae.last().unwrap();
    assert!(
        last < 0.1 * first,
        "decoder did not overfit: first {first}, last {last}"
    );
}

/// Bump-shaped lane segments: start and end on the lane axis with a +x
/// heading, all with identical arc length, so every anchor sees the
/// same canonical frame and the shape index is the only thing varying.
fn bump_shape(amplitude: f64, t_f: usize, arc_len: f64) -> Vec<Vec2> {
    // Find the x-extent giving the requested arc length, then walk the
    // curve at constant speed.
    let curve = |x_extent: f64, t: f64| -> Vec2 {
        Vec2::new(
            t * x_extent,
            amplitude * (1.0 - (2.0 * std::f64::consts::PI * t).cos()) / 2.0,
        )
    };
    let length_of = |x_extent: f64| -> f64 {
        let n = 2000;
        let mut len = 0.0;
        let mut prev = curve(x_extent, 0.0);
        for i in 1..=n {
            let p = curve(x_extent, i as f64 / n as f64);
            len += (p - prev).norm();
            prev = p;
        }
        len
    };
    let (mut lo, mut hi) = (1e-6, arc_len);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if length_of(mid) < arc_len {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x_extent = 0.5 * (lo + hi);
    // Resample at equal arc increments.
    let n = 4000;
    let mut dense = Vec::with_capacity(n + 1);
    for i in 0..=n {
        dense.push(curve(x_extent, i as f64 / n as f64));
    }
    let mut cum = vec![0.0];
    for i in 1..dense.len() {
        cum.push(cum[i - 1] + (dense[i] - dense[i - 1]).norm());
    }
    let total = *cum.last().unwrap();
    let mut out = Vec::with_capacity(t_f);
    let mut j = 0;
    for k in 1..=t_f {
        let want = total * k as f64 / t_f as f64;
        while j + 1 < cum.len() && cum[j + 1] < want {
            j += 1;
        }
        let seg = (cum[j + 1] - cum[j]).max(1e-12);
        let frac = (want - cum[j]) / seg;
        out.push(dense[j] + (dense[j + 1] - dense[j]) * frac);
    }
    out
}

#[test]
fn unpredictable_next_states_hold_the_entropy_floor() {
    let t_f = 20usize;
    let fps = 5.0;
    let arc = t_f as f64 * 0.2; // 1 m/s at 5 fps
    let shapes = [
        bump_shape(0.0, t_f, arc),
        bump_shape(0.9, t_f, arc),
        bump_shape(-0.9, t_f, arc),
        bump_shape(1.8, t_f, arc),
    ];
    let b = shapes.len();

    let mut rng = ChaCha12Rng::seed_from_u64(123);
    let mut agents = Vec::new();
    let segments_per_agent = 20usize;
    for id in 0..40u64 {
        let lane = 4.0 + (id % 12) as f64;
        let mut pos = Vec2::new(2.0, lane);
        let mut positions = vec![pos];
        for _ in 0..segments_per_agent {
            let k = rng.gen_range(0..b);
            for p in &shapes[k] {
                positions.push(pos + *p);
            }
            pos = *positions.last().unwrap();
        }
        // Straight run-out one frame short of a segment: no extra anchor
        // appears, and the distance left at the last real anchor stays
        // beyond the steering horizon, so no anchor's control feature
        // can reveal how its own segment ends.
        for k in 1..t_f {
            positions.push(pos + Vec2::new(0.2 * k as f64, 0.0));
        }
        agents.push(Agent {
            id,
            kind: AgentKind::Pedestrian,
            spawn_frame: (id as usize % 7) * 11,
            positions,
        });
    }
    let total_frames = agents
        .iter()
        .map(|a| a.spawn_frame + a.positions.len())
        .max()
        .unwrap();
    let mut scenario = Scenario {
        fps,
        total_frames,
        scene_id: "floor".into(),
        agents,
    };
    scenario.normalize();
    scenario.validate().unwrap();
    let layout = open_layout("floor", 90, 20, &scenario);
    let nav = NavGraph::build(layout.traversable.clone()).unwrap();

    // Hand vocabulary: the four shapes in canonical coordinates. Every
    // anchor's control point sits 4 m straight ahead (pace is exactly
    // 1 m/s and the track end lies on the lane axis), so the canonical
    // frame divides world offsets by 4.
    let seg_opts = SegmentOptions {
        t_f,
        ..SegmentOptions::default()
    };
    let scale = 1.0 * seg_opts.horizon;
    let vocab = BehaviorVocab {
        t_f,
        centers: shapes
            .iter()
            .map(|s| {
                s.iter()
                    .flat_map(|p| [p.x / scale, p.y / scale])
                    .collect()
            })
            .collect(),
    };

    // Neighbor and map channels are zeroed so every anchor's context
    // collapses onto its previous shape: with independent labels nothing
    // is left to memorize and the reachable optimum is the uniform
    // distribution.
    let opts = SimTrainOptions {
        epochs: 40,
        batch: 256,
        lr: 3e-4,
        ablation: AblationFlags {
            no_layout: true,
            no_social: true,
            no_navmesh: false,
        },
    };
    let mut train_rng = SeedStreams::new(3).stream("floor");
    let (_, log) = train_simulator(
        &layout,
        &scenario,
        &nav,
        &vocab,
        &seg_opts,
        &opts,
        &mut train_rng,
    )
    .unwrap();
    let tail = &log.transition_ce[log.transition_ce.len() - 5..];
    let ce = tail.iter().sum::<f64>() / tail.len() as f64;
    let floor = (b as f64).ln();
    assert!(
        (ce - floor).abs() <= 0.05 * floor,
        "transition CE {ce} strayed from the ln {b} floor {floor}"
    );
}

#[test]
fn trained_corridor_walker_reaches_its_goal_efficiently() {
    let (layout, gt) = corridor_fixture(31, 800).unwrap();
    let nav = NavGraph::build(layout.traversable.clone()).unwrap();
    let seg_opts = SegmentOptions::default();
    let segments = segment_and_normalize(&gt, Some(&nav), &seg_opts).unwrap();
    let vocab = crowdes_core::vocab::kmeans_fit(&segments, 4, 50, 5).unwrap();
    let opts = SimTrainOptions {
        epochs: 96,
        batch: 512,
        lr: 3e-4,
        ablation: AblationFlags::default(),
    };
    let mut rng = SeedStreams::new(8).stream("corridor-sim");
    let (model, _) = train_simulator(
        &layout,
        &gt,
        &nav,
        &vocab,
        &seg_opts,
        &opts,
        &mut rng,
    )
    .unwrap();

    let start = Vec2::new(1.5, 4.0);
    let dest = Vec2::new(38.5, 4.0);
    let mut state = RolloutState::default();
    state.schedule(vec![EmittedAgent {
        kind: AgentKind::Pedestrian,
        pace: 1.1,
        spawn_frame: 0,
        start,
        dest,
    }]);
    let mut roll_rng = SeedStreams::new(9).stream("corridor-roll");
    step_window(
        &mut state,
        &model,
        &nav,
        &layout,
        0,
        400,
        &AblationFlags::default(),
        &mut roll_rng,
    )
    .unwrap();
    let s = state.into_scenario(5.0, 400, "corridor-roll");
    let a = &s.agents[0];
    let end = *a.positions.last().unwrap();
    assert!(
        (end - dest).norm() <= ARRIVAL_RADIUS_M,
        "walker stopped {:.2} m from the goal",
        (end - dest).norm()
    );
    let path: f64 = a
        .positions
        .windows(2)
        .map(|w| (w[1] - w[0]).norm())
        .sum();
    let euclid = (dest - start).norm();
    assert!(
        path <= 1.3 * euclid,
        "path {path:.1} m vs straight line {euclid:.1} m"
    );
}
