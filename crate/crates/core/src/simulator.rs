//! Behavior-switching crowd rollout: every `t_f` frames each agent
//! samples its next behavior state from a learned transition
//! distribution and follows the decoded motion segment, conditioned on
//! its own history, nearby agents, the planned route, and a local map
//! crop. All conditioning lives in the agent's heading-aligned frame, so
//! rigid motions of the whole scene commute with generation.

use crate::emitter::EmittedAgent;
use crate::error::{Error, Result};
use crate::geom::{Similarity, Vec2};
use crate::layout::{SceneLayout, SEG_CLASS_COUNT};
use crate::navmesh::{self, NavGraph};
use crate::nn::layers::{Activation, Mlp};
use crate::nn::linalg::Mat;
use crate::nn::tape::{ParamStore, Tape};
use crate::nn::{checkpoint, AdamW};
use crate::trajectory::{Agent, AgentKind, Scenario, AGENT_KINDS};
use crate::vocab::{
    self, canonical_frame, nav_control_point, BehaviorVocab, ScaleMode, SegmentOptions,
};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// History length (frames) fed to the nets.
pub const T_H: usize = 10;
/// Nearest neighbors encoded per agent.
pub const NEIGHBOR_K: usize = 8;
/// Neighbors beyond this range are ignored.
pub const NEIGHBOR_RADIUS_M: f64 = 16.0;
/// Local map crop: CROP_CELLS x CROP_CELLS cells of CROP_RES_M meters.
pub const CROP_CELLS: usize = 16;
pub const CROP_RES_M: f64 = 1.0;

const KIND_SLOTS: usize = AGENT_KINDS.len();
const MLP_WIDTH: usize = 128;
/// Extra transition-input slot for "no previous behavior state".
pub const START_STATE: usize = usize::MAX;

/// Width of the conditioning vector.
pub const fn feature_dim() -> usize {
    KIND_SLOTS + 1 + 2 + 2 * T_H + 4 * NEIGHBOR_K + CROP_CELLS * CROP_CELLS * (SEG_CLASS_COUNT + 1)
}

/// Feature-building switches for the ablation study. Default: everything
/// on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    /// Zero the local map channels.
    pub no_layout: bool,
    /// Steer by straight line to the destination instead of the nav
    /// graph.
    pub no_navmesh: bool,
    /// Zero all neighbor slots.
    pub no_social: bool,
}

// ---------------------------------------------------------------------------
// conditioning features

/// Everything the nets see about one agent at one decision point, plus
/// the similarity frame that maps decoder output back to the world.
#[derive(Debug, Clone)]
pub struct Conditions {
    pub features: Vec<f64>,
    pub frame: Similarity,
    pub control: Vec2,
}

/// View of one agent at a decision instant. `history` holds positions up
/// to and including the current frame (last entry = current position).
#[derive(Debug, Clone, Copy)]
pub struct AgentView<'a> {
    pub kind: AgentKind,
    pub pace: f64,
    pub history: &'a [Vec2],
    pub dest: Vec2,
}

/// Another agent as seen at the same instant.
#[derive(Debug, Clone, Copy)]
pub struct NeighborView {
    pub pos: Vec2,
    pub vel: Vec2,
}

/// Build the conditioning vector for one agent. Neighbor order does not
/// matter (the k nearest are selected and sorted by distance); all
/// coordinates are expressed heading-aligned relative to the agent.
pub fn build_conditions(
    agent: &AgentView,
    neighbors: &[NeighborView],
    nav: Option<&NavGraph>,
    layout: &SceneLayout,
    options: &SegmentOptions,
    fps: f64,
    flags: &AblationFlags,
) -> Conditions {
    let pos = *agent.history.last().expect("agent history is never empty");
    let nav_for_control = if flags.no_navmesh { None } else { nav };
    let control = nav_control_point(nav_for_control, pos, agent.dest, agent.pace, options.horizon);
    let heading = vocab::last_heading(agent.history, agent.history.len() - 1);
    let frame = canonical_frame(
        pos,
        control,
        heading,
        options.scale_mode,
        agent.pace,
        options.horizon,
    );
    // features use the rotation part only; the scale stays in `frame`
    // for decoding
    let rel = |p: Vec2| (p - pos).rotated(-frame.angle);
    let rel_dir = |d: Vec2| d.rotated(-frame.angle);

    let mut f = Vec::with_capacity(feature_dim());
    let mut kind_hot = [0.0; KIND_SLOTS];
    kind_hot[agent.kind.index()] = 1.0;
    f.extend_from_slice(&kind_hot);
    f.push(agent.pace);
    let c = rel(control);
    f.push(c.x);
    f.push(c.y);

    // own history: T_H relative positions ending at the previous frame,
    // padded at the front with the oldest known position
    for k in (1..=T_H).rev() {
        let idx = agent.history.len() as i64 - 1 - k as i64;
        let r = rel(agent.history[idx.max(0) as usize]);
        f.push(r.x);
        f.push(r.y);
    }

    // k nearest neighbors within range, closest first
    let own_vel = if agent.history.len() >= 2 {
        (pos - agent.history[agent.history.len() - 2]) * fps
    } else {
        Vec2::ZERO
    };
    let mut near: Vec<(f64, NeighborView)> = Vec::new();
    if !flags.no_social {
        for n in neighbors {
            let d = (n.pos - pos).norm();
            if d <= NEIGHBOR_RADIUS_M {
                near.push((d, *n));
            }
        }
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        near.truncate(NEIGHBOR_K);
    }
    for slot in 0..NEIGHBOR_K {
        if let Some((_, n)) = near.get(slot) {
            let rp = rel(n.pos);
            let rv = rel_dir(n.vel - own_vel);
            f.extend_from_slice(&[rp.x, rp.y, rv.x, rv.y]);
        } else {
            f.extend_from_slice(&[0.0; 4]);
        }
    }

    // heading-aligned map crop: segmentation one-hot + density
    for cy in 0..CROP_CELLS {
        for cx in 0..CROP_CELLS {
            let local = Vec2::new(
                (cx as f64 + 0.5 - CROP_CELLS as f64 / 2.0) * CROP_RES_M,
                (cy as f64 + 0.5 - CROP_CELLS as f64 / 2.0) * CROP_RES_M,
            );
            let world = pos + local.rotated(frame.angle);
            let mut seg_hot = [0.0; SEG_CLASS_COUNT];
            let mut density = 0.0;
            if !flags.no_layout {
                let class = layout.segmentation.sample(world, -1.0);
                if class >= 0.0 && (class as usize) < SEG_CLASS_COUNT {
                    seg_hot[class as usize] = 1.0;
                }
                density = layout.density.sample(world, 0.0);
            }
            f.extend_from_slice(&seg_hot);
            f.push(density);
        }
    }

    debug_assert_eq!(f.len(), feature_dim());
    Conditions {
        features: f,
        frame,
        control,
    }
}

// ---------------------------------------------------------------------------
// model

/// Per-dimension standardization fitted on the training features.
#[derive(Debug, Clone)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Variance smoothing for feature standardization (0.05 units std).
const STD_SMOOTH_EPS_SQ: f64 = 0.0025;

impl FeatureStats {
    pub fn fit(rows: &[Vec<f64>]) -> FeatureStats {
        let dim = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        // Smooth the variance instead of flooring at machine epsilon: a
        // feature that is constant in training (straight ground truth
        // makes several) would otherwise amplify the slightest rollout
        // deviation by ~1e6 and blow up the heads.
        let std = var.iter().map(|v| (v + STD_SMOOTH_EPS_SQ).sqrt()).collect();
        FeatureStats { mean, std }
    }

    pub fn identity(dim: usize) -> FeatureStats {
        FeatureStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((f, m), s)| (f - m) / s)
            .collect()
    }
}

/// Transition + decoder nets over a fitted behavior vocabulary.
pub struct SimulatorModel {
    pub store: ParamStore,
    pub vocab: BehaviorVocab,
    pub stats: FeatureStats,
    pub options: SegmentOptions,
    transition: Mlp,
    decoder: Mlp,
}

impl SimulatorModel {
    pub fn new(vocab: BehaviorVocab, options: SegmentOptions, seed: u64) -> SimulatorModel {
        let b = vocab.b();
        let f = feature_dim();
        let mut store = ParamStore::new();
        let mut init = ParamStore::init_rng(seed);
        let transition = Mlp::new(
            &mut store,
            &mut init,
            "sim.trans",
            &[f + b + 1, MLP_WIDTH, MLP_WIDTH, b],
            Activation::Gelu,
        );
        let decoder = Mlp::new(
            &mut store,
            &mut init,
            "sim.dec",
            &[f + b, MLP_WIDTH, MLP_WIDTH, 2 * vocab.t_f],
            Activation::Gelu,
        );
        SimulatorModel {
            store,
            vocab,
            stats: FeatureStats::identity(f),
            options,
            transition,
            decoder,
        }
    }

    fn transition_input(&self, features: &[f64], b_h: usize) -> Vec<f64> {
        let b = self.vocab.b();
        let mut x = self.stats.apply(features);
        let mut hot = vec![0.0; b + 1];
        let slot = if b_h == START_STATE { b } else { b_h };
        hot[slot] = 1.0;
        x.extend_from_slice(&hot);
        x
    }

    fn decoder_input(&self, features: &[f64], b_f: usize) -> Vec<f64> {
        let mut x = self.stats.apply(features);
        let mut hot = vec![0.0; self.vocab.b()];
        hot[b_f] = 1.0;
        x.extend_from_slice(&hot);
        x
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let meta = vec![
            ("model".into(), "simulator".into()),
            ("b".into(), self.vocab.b().to_string()),
            ("t_f".into(), self.vocab.t_f.to_string()),
            ("horizon".into(), self.options.horizon.to_string()),
            ("scale_mode".into(), match self.options.scale_mode {
                ScaleMode::ControlDistance => "control".into(),
                ScaleMode::Pace => "pace".into(),
            }),
            ("vocab".into(), join(&self.vocab.centers.concat())),
            ("feat_mean".into(), join(&self.stats.mean)),
            ("feat_std".into(), join(&self.stats.std)),
        ];
        checkpoint::save_params(path, &meta, &self.store)
    }

    pub fn load(path: &std::path::Path) -> Result<SimulatorModel> {
        let (meta, values) = checkpoint::load_params(path)?;
        if checkpoint::meta_value(&meta, "model") != Some("simulator") {
            return Err(Error::parse(path, 0, "not a simulator checkpoint"));
        }
        let b: usize = checkpoint::meta_parse(&meta, "b", path)?;
        let t_f: usize = checkpoint::meta_parse(&meta, "t_f", path)?;
        let horizon: f64 = checkpoint::meta_parse(&meta, "horizon", path)?;
        let scale_mode = match checkpoint::meta_value(&meta, "scale_mode") {
            Some("pace") => ScaleMode::Pace,
            _ => ScaleMode::ControlDistance,
        };
        let split = |key: &str| -> Result<Vec<f64>> {
            checkpoint::meta_value(&meta, key)
                .ok_or_else(|| Error::parse(path, 0, format!("missing {key}")))?
                .split(',')
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(path, 0, format!("bad float in {key}")))
                })
                .collect()
        };
        let flat = split("vocab")?;
        if flat.len() != b * 2 * t_f {
            return Err(Error::parse(path, 0, "vocab size mismatch"));
        }
        let centers = flat.chunks(2 * t_f).map(|c| c.to_vec()).collect();
        let vocab = BehaviorVocab { t_f, centers };
        let options = SegmentOptions {
            t_f,
            horizon,
            scale_mode,
        };
        let mut model = SimulatorModel::new(vocab, options, 0);
        let mean = split("feat_mean")?;
        let std = split("feat_std")?;
        if mean.len() != feature_dim() || std.len() != feature_dim() {
            return Err(Error::parse(path, 0, "feature stats size mismatch"));
        }
        model.stats = FeatureStats { mean, std };
        model.store.load_values(&values)?;
        Ok(model)
    }
}

/// Probability over the next behavior state given the previous one
/// (`START_STATE` for an agent's first decision).
pub fn predict_transition(model: &SimulatorModel, cond: &Conditions, b_h: usize) -> Vec<f64> {
    let x = model.transition_input(&cond.features, b_h);
    let logits = model
        .transition
        .infer(&model.store, &Mat::row_vector(x));
    softmax(&logits.data)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Decode the committed behavior state into `t_f` world positions via
/// the agent's similarity frame.
pub fn decode_segment(model: &SimulatorModel, cond: &Conditions, b_f: usize) -> Vec<Vec2> {
    let x = model.decoder_input(&cond.features, b_f);
    let out = model.decoder.infer(&model.store, &Mat::row_vector(x));
    vocab::unflatten(&out.data)
        .into_iter()
        .map(|c| cond.frame.to_world(c))
        .collect()
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone)]
pub struct SimTrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub ablation: AblationFlags,
}

impl Default for SimTrainOptions {
    fn default() -> Self {
        SimTrainOptions {
            epochs: 64,
            batch: 2048,
            lr: 1e-4,
            ablation: AblationFlags::default(),
        }
    }
}

/// Per-epoch loss means for the two heads.
#[derive(Debug, Clone, Default)]
pub struct SimTrainLog {
    pub transition_ce: Vec<f64>,
    pub decoder_mae: Vec<f64>,
}

struct SimExample {
    features: Vec<f64>,
    b_h: usize,
    b_f: usize,
    target: Vec<f64>,
}

/// One teacher-forced example per vocabulary segment: conditioning from
/// the ground truth at the anchor, targets from the assigned states and
/// canonical coordinates.
fn build_examples(
    layout: &SceneLayout,
    scenario: &Scenario,
    nav: &NavGraph,
    vocab: &BehaviorVocab,
    options: &SegmentOptions,
    flags: &AblationFlags,
) -> Result<Vec<SimExample>> {
    let segments = vocab::segment_and_normalize(scenario, Some(nav), options)?;
    if segments.is_empty() {
        return Err(Error::Invalid(
            "simulator training needs at least one full segment".into(),
        ));
    }
    let mut prev_state: Vec<usize> = vec![START_STATE; scenario.agents.len()];
    let mut out = Vec::with_capacity(segments.len());
    for seg in &segments {
        let agent = &scenario.agents[seg.agent_index];
        let local = seg.anchor_frame - agent.spawn_frame;
        let view = AgentView {
            kind: agent.kind,
            pace: agent.mean_speed(scenario.fps),
            history: &agent.positions[..=local],
            dest: agent.end(),
        };
        let neighbors: Vec<NeighborView> = scenario
            .agents
            .iter()
            .enumerate()
            .filter(|&(i, a)| i != seg.agent_index && a.alive_at(seg.anchor_frame))
            .map(|(_, a)| NeighborView {
                pos: a.position_at(seg.anchor_frame).unwrap(),
                vel: a.velocity_at(seg.anchor_frame, scenario.fps).unwrap_or(Vec2::ZERO),
            })
            .collect();
        let cond = build_conditions(
            &view,
            &neighbors,
            Some(nav),
            layout,
            options,
            scenario.fps,
            flags,
        );
        let b_f = vocab::assign_state(&seg.flat(), vocab);
        out.push(SimExample {
            features: cond.features,
            b_h: prev_state[seg.agent_index],
            b_f,
            target: seg.flat(),
        });
        prev_state[seg.agent_index] = b_f;
    }
    Ok(out)
}

/// Train transition and decoder heads with teacher forcing:
/// cross-entropy on next-state labels, mean absolute error on canonical
/// coordinates.
pub fn train_simulator(
    layout: &SceneLayout,
    scenario: &Scenario,
    nav: &NavGraph,
    vocab: &BehaviorVocab,
    options: &SegmentOptions,
    train: &SimTrainOptions,
    rng: &mut ChaCha12Rng,
) -> Result<(SimulatorModel, SimTrainLog)> {
    let examples = build_examples(layout, scenario, nav, vocab, options, &train.ablation)?;
    let mut model = SimulatorModel::new(vocab.clone(), options.clone(), rng.gen());
    model.stats = FeatureStats::fit(
        &examples
            .iter()
            .map(|e| e.features.clone())
            .collect::<Vec<_>>(),
    );
    let mut optim = AdamW::new(&model.store, train.lr);
    let mut log = SimTrainLog::default();
    let b = model.vocab.b();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _epoch in 0..train.epochs {
        order.shuffle(rng);
        let mut ce_sum = 0.0;
        let mut mae_sum = 0.0;
        let mut batches = 0.0f64;
        for chunk in order.chunks(train.batch) {
            let rows = chunk.len();
            let mut tin = Vec::with_capacity(rows * (feature_dim() + b + 1));
            let mut din = Vec::with_capacity(rows * (feature_dim() + b));
            let mut ce_targets = Vec::with_capacity(rows);
            let mut mae_targets = Vec::with_capacity(rows * 2 * model.vocab.t_f);
            for &i in chunk {
                let e = &examples[i];
                tin.extend(model.transition_input(&e.features, e.b_h));
                din.extend(model.decoder_input(&e.features, e.b_f));
                ce_targets.push(e.b_f);
                mae_targets.extend_from_slice(&e.target);
            }
            model.store.zero_grads();
            let mut tape = Tape::new(&model.store);
            let tx = tape.constant(Mat::from_vec(rows, feature_dim() + b + 1, tin));
            let tl = model.transition.forward(&mut tape, &model.store, tx)?;
            let ce = tape.cross_entropy_loss(tl, ce_targets);
            let dx = tape.constant(Mat::from_vec(rows, feature_dim() + b, din));
            let dl = model.decoder.forward(&mut tape, &model.store, dx)?;
            let mae = tape.mae_loss(
                dl,
                Mat::from_vec(rows, 2 * model.vocab.t_f, mae_targets),
            );
            ce_sum += tape.scalar(ce);
            mae_sum += tape.scalar(mae);
            batches += 1.0;
            let total = tape.add(ce, mae);
            tape.backward(total, &mut model.store)?;
            optim.step(&mut model.store)?;
        }
        log.transition_ce.push(ce_sum / batches.max(1.0));
        log.decoder_mae.push(mae_sum / batches.max(1.0));
    }
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// rollout

/// One agent currently moving through the scene.
#[derive(Debug, Clone)]
pub struct LiveAgent {
    pub id: u64,
    pub kind: AgentKind,
    pub pace: f64,
    pub spawn_frame: usize,
    pub dest: Vec2,
    /// Positions from spawn to the current frame, one per frame.
    pub trail: Vec<Vec2>,
    /// Remaining world positions of the committed segment.
    plan: std::collections::VecDeque<Vec2>,
    b_h: usize,
    /// Frames after which the agent is removed even without arriving.
    lifetime_cap: usize,
}

/// Mutable rollout state threaded through the window loop.
#[derive(Debug, Clone, Default)]
pub struct RolloutState {
    pub live: Vec<LiveAgent>,
    pub finished: Vec<Agent>,
    pending: Vec<(u64, EmittedAgent)>,
    next_id: u64,
    /// Times an agent had to be pushed back onto traversable ground.
    pub reprojections: usize,
    /// Times an implausible decoded plan was replaced by the behavior
    /// state's template shape.
    pub plan_fallbacks: usize,
}

/// Arrival radius around the destination, meters.
pub const ARRIVAL_RADIUS_M: f64 = 1.0;
/// Lifetime cap multiplier over the nominal travel time.
const LIFETIME_FACTOR: f64 = 4.0;
const STUCK_PROJECT_RADIUS_M: f64 = 5.0;

impl RolloutState {
    /// Queue emitted agents; ids are assigned in emission order.
    pub fn schedule(&mut self, emitted: Vec<EmittedAgent>) {
        for e in emitted {
            let id = self.next_id;
            self.next_id += 1;
            self.pending.push((id, e));
        }
    }

    pub fn population(&self) -> usize {
        self.live.len()
    }

    /// Completed scenario view over everything generated so far.
    pub fn into_scenario(mut self, fps: f64, total_frames: usize, scene_id: &str) -> Scenario {
        for a in self.live.drain(..) {
            self.finished.push(Agent {
                id: a.id,
                kind: a.kind,
                spawn_frame: a.spawn_frame,
                positions: a.trail,
            });
        }
        let mut s = Scenario {
            fps,
            total_frames,
            scene_id: scene_id.into(),
            agents: self.finished,
        };
        s.normalize();
        s
    }
}

fn activate(state: &mut RolloutState, nav: &NavGraph, fps: f64, frame: usize) {
    let mut activating: Vec<(u64, EmittedAgent)> = Vec::new();
    state.pending.retain(|(id, e)| {
        if e.spawn_frame == frame {
            activating.push((*id, e.clone()));
            false
        } else {
            true
        }
    });
    activating.sort_by_key(|(id, _)| *id);
    for (id, e) in activating {
        let path_len = match nav.shortest_path(e.start, e.dest) {
            Ok(path) => navmesh::polyline_length(&path),
            Err(_) => (e.dest - e.start).norm(),
        };
        let pace = e.pace.max(0.05);
        let lifetime_cap = ((LIFETIME_FACTOR * path_len / pace) * fps).ceil().max(1.0) as usize;
        state.live.push(LiveAgent {
            id,
            kind: e.kind,
            pace,
            spawn_frame: frame,
            dest: e.dest,
            trail: vec![e.start],
            plan: std::collections::VecDeque::new(),
            b_h: START_STATE,
            lifetime_cap,
        });
    }
}

/// Advance the rollout across `[window_start, window_start + t_w)`.
/// Spawn markers for the window must already be scheduled. Agents decide
/// every `t_f` frames phase-locked to their spawn; arrivals and timed-out
/// agents are moved to `finished`.
pub fn step_window(
    state: &mut RolloutState,
    model: &SimulatorModel,
    nav: &NavGraph,
    layout: &SceneLayout,
    window_start: usize,
    t_w: usize,
    flags: &AblationFlags,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let fps = layout.fps;
    let t_f = model.vocab.t_f;
    for frame in window_start..window_start + t_w {
        activate(state, nav, fps, frame);

        // departures: arrival within radius, or lifetime exceeded
        let mut keep = Vec::with_capacity(state.live.len());
        for a in state.live.drain(..) {
            let pos = *a.trail.last().unwrap();
            let age = frame - a.spawn_frame;
            if (pos - a.dest).norm() <= ARRIVAL_RADIUS_M || age >= a.lifetime_cap {
                state.finished.push(Agent {
                    id: a.id,
                    kind: a.kind,
                    spawn_frame: a.spawn_frame,
                    positions: a.trail,
                });
            } else {
                keep.push(a);
            }
        }
        state.live = keep;

        // decisions at the agent's own cadence; stable id order fixes the
        // rng draw sequence
        state.live.sort_by_key(|a| a.id);
        let snapshot: Vec<(u64, Vec2, Vec2)> = state
            .live
            .iter()
            .map(|a| {
                let pos = *a.trail.last().unwrap();
                let vel = if a.trail.len() >= 2 {
                    (pos - a.trail[a.trail.len() - 2]) * fps
                } else {
                    Vec2::ZERO
                };
                (a.id, pos, vel)
            })
            .collect();
        for i in 0..state.live.len() {
            if (frame - state.live[i].spawn_frame) % t_f != 0 || !state.live[i].plan.is_empty() {
                continue;
            }
            let a = &state.live[i];
            let neighbors: Vec<NeighborView> = snapshot
                .iter()
                .filter(|(id, _, _)| *id != a.id)
                .map(|&(_, pos, vel)| NeighborView { pos, vel })
                .collect();
            let view = AgentView {
                kind: a.kind,
                pace: a.pace,
                history: &a.trail,
                dest: a.dest,
            };
            let cond = build_conditions(
                &view,
                &neighbors,
                Some(nav),
                layout,
                &model.options,
                fps,
                flags,
            );
            let probs = predict_transition(model, &cond, a.b_h);
            let u: f64 = rng.gen();
            let mut b_f = probs.len() - 1;
            let mut acc = 0.0;
            for (s, &p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    b_f = s;
                    break;
                }
            }
            let mut segment = decode_segment(model, &cond, b_f);
            // A committed plan must be kinematically plausible: contiguous
            // with the current position and never faster than a generous
            // multiple of the agent's pace. An undertrained decoder can
            // emit arbitrary coordinates; in that case perform the chosen
            // behavior's template shape instead of teleporting.
            let pos = *state.live[i].trail.last().unwrap();
            let step_cap = (2.5 * state.live[i].pace / fps).max(0.5);
            let mut prev = pos;
            let plausible = segment.iter().all(|&p| {
                let ok = (p - prev).norm() <= step_cap;
                prev = p;
                ok
            });
            if !plausible {
                segment = model
                    .vocab
                    .center_coords(b_f)
                    .into_iter()
                    .map(|c| cond.frame.to_world(c))
                    .collect();
                state.plan_fallbacks += 1;
            }
            let a = &mut state.live[i];
            a.plan = segment.into_iter().collect();
            a.b_h = b_f;
        }

        // advance one frame
        for a in &mut state.live {
            let current = *a.trail.last().unwrap();
            let mut next = a.plan.pop_front().unwrap_or(current);
            if !nav.walkable_at(next) {
                if let Some(fixed) =
                    crate::emitter::project_to_traversable(&layout.traversable, next, STUCK_PROJECT_RADIUS_M)
                {
                    let shift = fixed - next;
                    for p in a.plan.iter_mut() {
                        *p += shift;
                    }
                    next = fixed;
                } else {
                    // The decoded step leads nowhere reachable (off the
                    // map, or not even finite): hold position and force
                    // a fresh decision at the next cadence tick.
                    next = current;
                    a.plan.clear();
                }
                state.reprojections += 1;
            }
            a.trail.push(next);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridRaster;
    use crate::layout::SegClass;
    use crate::rng::SeedStreams;

    fn flat_layout(w: usize, h: usize) -> SceneLayout {
        let seg =
            GridRaster::filled(w, h, 1.0, Vec2::ZERO, SegClass::Sidewalk as usize as f64).unwrap();
        SceneLayout {
            scene_id: "test".into(),
            fps: 5.0,
            segmentation: seg.clone(),
            appearance: seg.zeros_like(),
            density: seg.zeros_like(),
            traversable: GridRaster::filled(w, h, 1.0, Vec2::ZERO, 1.0).unwrap(),
            population_prob: vec![1.0],
        }
    }

    fn little_vocab(b: usize) -> BehaviorVocab {
        // straight-line canonical templates at different reaches
        let t_f = 5;
        let centers = (0..b)
            .map(|s| {
                let reach = 0.5 + s as f64 * 0.5;
                (1..=t_f)
                    .flat_map(|k| [reach * k as f64 / t_f as f64, 0.0])
                    .collect()
            })
            .collect();
        BehaviorVocab { t_f, centers }
    }

    fn walker(id: u64, from: Vec2, step: Vec2, n: usize, spawn: usize) -> Agent {
        Agent {
            id,
            kind: AgentKind::Pedestrian,
            spawn_frame: spawn,
            positions: (0..n).map(|k| from + step * k as f64).collect(),
        }
    }

    #[test]
    fn feature_vector_has_documented_width() {
        assert_eq!(feature_dim(), 2109);
    }

    #[test]
    fn lone_agent_neighbor_slots_are_zero() {
        let layout = flat_layout(40, 40);
        let history = vec![Vec2::new(10.0, 10.0), Vec2::new(10.5, 10.0)];
        let view = AgentView {
            kind: AgentKind::Pedestrian,
            pace: 1.0,
            history: &history,
            dest: Vec2::new(30.0, 10.0),
        };
        let opts = SegmentOptions {
            t_f: 5,
            ..Default::default()
        };
        let cond = build_conditions(
            &view,
            &[],
            None,
            &layout,
            &opts,
            5.0,
            &AblationFlags::default(),
        );
        let base = KIND_SLOTS + 1 + 2 + 2 * T_H;
        assert!(cond.features[base..base + 4 * NEIGHBOR_K]
            .iter()
            .all(|&v| v == 0.0));
        // control point straight ahead: relative x = pace*horizon, y = 0
        assert!((cond.features[KIND_SLOTS + 1] - 4.0).abs() < 1e-9);
        assert!(cond.features[KIND_SLOTS + 2].abs() < 1e-9);
    }

    #[test]
    fn features_survive_a_quarter_turn_of_the_world() {
        // rotate the whole scene (rasters, agent, neighbors, destination)
        // 90 degrees about the grid center; features must not change
        let w = 40usize;
        let center = Vec2::new(20.0, 20.0);
        let mut seg = GridRaster::filled(w, w, 1.0, Vec2::ZERO, 0.0).unwrap();
        let mut density = seg.zeros_like();
        for cy in 0..w {
            for cx in 0..w {
                seg.set(cx, cy, ((cx / 4 + cy / 7) % SEG_CLASS_COUNT) as f64);
                density.set(cx, cy, ((cx * 13 + cy * 7) % 10) as f64 / 10.0);
            }
        }
        let rot90 = |p: Vec2| center + (p - center).perp(); // (x,y) -> (-y,x)
        let mut seg_r = seg.zeros_like();
        let mut density_r = seg.zeros_like();
        for cy in 0..w {
            for cx in 0..w {
                // value at the rotated cell comes from the source cell its
                // center maps back to
                let p = seg_r.cell_center(cx, cy);
                let back = center + Vec2::new((p - center).y, -(p - center).x);
                let (sx, sy) = seg.cell_of(back).unwrap();
                seg_r.set(cx, cy, seg.get(sx, sy));
                density_r.set(cx, cy, density.get(sx, sy));
            }
        }
        let mk_layout = |seg: GridRaster, density: GridRaster| SceneLayout {
            scene_id: "rot".into(),
            fps: 5.0,
            segmentation: seg,
            appearance: density.zeros_like(),
            density,
            traversable: GridRaster::filled(w, w, 1.0, Vec2::ZERO, 1.0).unwrap(),
            population_prob: vec![1.0],
        };
        let layout_a = mk_layout(seg, density);
        let layout_b = mk_layout(seg_r, density_r);

        let history: Vec<Vec2> = (0..6)
            .map(|k| Vec2::new(14.3 + 0.31 * k as f64, 16.2 + 0.17 * k as f64))
            .collect();
        let history_r: Vec<Vec2> = history.iter().map(|&p| rot90(p)).collect();
        let dest = Vec2::new(27.8, 23.4);
        let neighbors = vec![
            NeighborView {
                pos: Vec2::new(17.1, 15.2),
                vel: Vec2::new(0.4, -0.6),
            },
            NeighborView {
                pos: Vec2::new(13.0, 18.9),
                vel: Vec2::new(-0.2, 0.9),
            },
        ];
        let neighbors_r: Vec<NeighborView> = neighbors
            .iter()
            .map(|n| NeighborView {
                pos: rot90(n.pos),
                vel: n.vel.perp(),
            })
            .collect();
        let opts = SegmentOptions {
            t_f: 5,
            ..Default::default()
        };
        let view_a = AgentView {
            kind: AgentKind::Pedestrian,
            pace: 1.1,
            history: &history,
            dest,
        };
        let view_b = AgentView {
            kind: AgentKind::Pedestrian,
            pace: 1.1,
            history: &history_r,
            dest: rot90(dest),
        };
        let fa = build_conditions(
            &view_a,
            &neighbors,
            None,
            &layout_a,
            &opts,
            5.0,
            &AblationFlags::default(),
        );
        let fb = build_conditions(
            &view_b,
            &neighbors_r,
            None,
            &layout_b,
            &opts,
            5.0,
            &AblationFlags::default(),
        );
        for (i, (a, b)) in fa.features.iter().zip(&fb.features).enumerate() {
            assert!((a - b).abs() < 1e-9, "feature {i}: {a} vs {b}");
        }
    }

    #[test]
    fn neighbor_transform_matches_hand_computation() {
        let layout = flat_layout(40, 40);
        // agent walking +y: heading angle pi/2
        let history = vec![Vec2::new(20.0, 10.0), Vec2::new(20.0, 11.0)];
        let view = AgentView {
            kind: AgentKind::Pedestrian,
            pace: 1.0,
            history: &history,
            dest: Vec2::new(20.0, 35.0),
        };
        let neighbor = NeighborView {
            pos: Vec2::new(22.0, 11.0),
            vel: Vec2::new(0.0, 0.0),
        };
        let opts = SegmentOptions {
            t_f: 5,
            ..Default::default()
        };
        let cond = build_conditions(
            &view,
            &[neighbor],
            None,
            &layout,
            &opts,
            5.0,
            &AblationFlags::default(),
        );
        let base = KIND_SLOTS + 1 + 2 + 2 * T_H;
        // neighbor 2 m to the agent's right; canonical frame looks +y, so
        // relative position rotates to (0, -2)
        assert!((cond.features[base] - 0.0).abs() < 1e-9);
        assert!((cond.features[base + 1] - (-2.0)).abs() < 1e-9);
        // own velocity (0, 5) m/s; neighbor still => relative velocity
        // rotated: (-5, 0) along canonical x
        assert!((cond.features[base + 2] - (-5.0)).abs() < 1e-9);
        assert!((cond.features[base + 3] - 0.0).abs() < 1e-9);
    }

    #[test]
    fn zero_weight_transition_is_uniform() {
        let vocab = little_vocab(4);
        let opts = SegmentOptions {
            t_f: 5,
            ..Default::default()
        };
        let mut model = SimulatorModel::new(vocab, opts.clone(), 3);
        // zero every parameter
        let ids: Vec<_> = model.store.ids().collect();
        for id in ids {
            model.store.value_mut(id).fill(0.0);
        }
        let layout = flat_layout(40, 40);
        let history = vec![Vec2::new(5.0, 5.0), Vec2::new(5.5, 5.0)];
        let view = AgentView {
            kind: AgentKind::Pedestrian,
            pace: 1.0,
            history: &history,
            dest: Vec2::new(30.0, 5.0),
        };
        let cond = build_conditions(
            &view,
            &[],
            None,
            &layout,
            &opts,
            5.0,
            &AblationFlags::default(),
        );
        let probs = predict_transition(&model, &cond, START_STATE);
        assert_eq!(probs.len(), 4);
        for p in probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
        let single = SimulatorModel::new(little_vocab(1), opts, 4);
        let probs = predict_transition(&single, &cond, START_STATE);
        assert_eq!(probs, vec![1.0]);
    }

    #[test]
    fn verbatim_decoder_round_trips_through_the_frame() {
        // a decoder that outputs the vocab center should land exactly on
        // the frame-inverse of the center; emulate by mapping center
        // coords manually and comparing decode output offsets
        let vocab = little_vocab(2);
        let opts = SegmentOptions {
            t_f: 5,
            ..Default::default()
        };
        let layout = flat_layout(40, 40);
        let history = vec![Vec2::new(8.0, 8.0), Vec2::new(8.6, 8.8)];
        let view = AgentView {
            kind: AgentKind::Skateboarder,
            pace: 1.25,
            history: &history,
            dest: Vec2::new(30.0, 24.0),
        };
        let cond = build_conditions(
            &view,
            &[],
            None,
            &layout,
            &opts,
            5.0,
            &AblationFlags::default(),
        );
        let center = vocab.center_coords(1);
        let expect: Vec<Vec2> = center.iter().map(|&c| cond.frame.to_world(c)).collect();
        // feed the canonical center through the same mapping decode uses
        let via_decode: Vec<Vec2> = vocab::unflatten(&vocab.centers[1])
            .into_iter()
            .map(|c| cond.frame.to_world(c))
            .collect();
        for (a, b) in expect.iter().zip(&via_decode) {
            assert!((*a - *b).norm() < 1e-12);
        }
        // decode_segment output length is always t_f
        let model = SimulatorModel::new(vocab, opts, 9);
        assert_eq!(decode_segment(&model, &cond, 0).len(), 5);
    }

    #[test]
    fn deterministic_markov_fixture_learns_the_transition() {
        // agents repeat canonical segment patterns so that state 0 is
        // always followed by state 1
        let layout = flat_layout(60, 40);
        let t_f = 5;
        let mut agents = Vec::new();
        for i in 0..8u64 {
            // alternating slow/fast straight walker: slow segment then
            // fast segment, repeated
            let y = 5.0 + i as f64 * 4.0;
            let mut positions = vec![Vec2::new(3.0, y)];
            let mut x = 3.0;
            for rep in 0..4 {
                let step = if rep % 2 == 0 { 0.2 } else { 0.7 };
                for _ in 0..t_f {
                    x += step;
                    positions.push(Vec2::new(x, y));
                }
            }
            agents.push(Agent {
                id: i,
                kind: AgentKind::Pedestrian,
                spawn_frame: 0,
                positions,
            });
        }
        let scenario = Scenario {
            fps: 5.0,
            total_frames: 40,
            scene_id: "markov".into(),
            agents,
        };
        let nav = NavGraph::build(layout.traversable.clone()).unwrap();
        // constant canonical scale (pace·horizon) keeps slow and fast
        // segments linearly separable at every anchor
        let opts = SegmentOptions {
            t_f,
            scale_mode: ScaleMode::Pace,
            ..Default::default()
        };
        let segments = vocab::segment_and_normalize(&scenario, Some(&nav), &opts).unwrap();
        let vocab = vocab::kmeans_fit(&segments, 2, 50, 11).unwrap();
        let train = SimTrainOptions {
            epochs: 120,
            lr: 3e-4,
            ..Default::default()
        };
        let mut rng = SeedStreams::new(17).stream("sim-train");
        let (model, log) =
            train_simulator(&layout, &scenario, &nav, &vocab, &opts, &train, &mut rng).unwrap();
        assert!(log.transition_ce.last().unwrap() < &log.transition_ce[0]);
        assert!(log.decoder_mae.last().unwrap() < &log.decoder_mae[0]);

        // check P(next | state of a slow segment) concentrates on the
        // other state
        let seg0 = &segments[0]; // first slow segment of agent 0
        let s0 = vocab::assign_state(&seg0.flat(), &vocab);
        let agent = &scenario.agents[0];
        let view = AgentView {
            kind: agent.kind,
            pace: agent.mean_speed(5.0),
            history: &agent.positions[..=t_f],
            dest: agent.end(),
        };
        let cond = build_conditions(
            &view,
            &[],
            Some(&nav),
            &layout,
            &opts,
            5.0,
            &AblationFlags::default(),
        );
        let probs = predict_transition(&model, &cond, s0);
        assert!(probs[1 - s0] >= 0.95, "P(other|slow)={:?}", probs);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let layout = flat_layout(20, 20);
        let scenario = Scenario {
            fps: 5.0,
            total_frames: 10,
            scene_id: "empty".into(),
            agents: vec![walker(0, Vec2::new(2.0, 2.0), Vec2::new(0.3, 0.0), 3, 0)],
        };
        let nav = NavGraph::build(layout.traversable.clone()).unwrap();
        let opts = SegmentOptions {
            t_f: 5,
            ..Default::default()
        };
        let vocab = little_vocab(2);
        let mut rng = SeedStreams::new(1).stream("x");
        // 3-frame track < t_f+1 frames -> no segments
        assert!(train_simulator(
            &layout,
            &scenario,
            &nav,
            &vocab,
            &opts,
            &SimTrainOptions::default(),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn rollout_is_deterministic_and_respects_cadence() {
        let layout = flat_layout(40, 40);
        let nav = NavGraph::build(layout.traversable.clone()).unwrap();
        let vocab = little_vocab(3);
        let opts = SegmentOptions {
            t_f: 5,
            ..Default::default()
        };
        let model = SimulatorModel::new(vocab, opts, 23);
        let emitted = vec![
            EmittedAgent {
                kind: AgentKind::Pedestrian,
                pace: 1.0,
                spawn_frame: 0,
                start: Vec2::new(5.0, 20.0),
                dest: Vec2::new(35.0, 20.0),
            },
            EmittedAgent {
                kind: AgentKind::Bicyclist,
                pace: 2.0,
                spawn_frame: 7,
                start: Vec2::new(20.0, 5.0),
                dest: Vec2::new(20.0, 35.0),
            },
        ];
        let run = || {
            let mut state = RolloutState::default();
            state.schedule(emitted.clone());
            let mut rng = SeedStreams::new(77).stream("rollout");
            step_window(
                &mut state,
                &model,
                &nav,
                &layout,
                0,
                30,
                &AblationFlags::default(),
                &mut rng,
            )
            .unwrap();
            state.into_scenario(5.0, 30, "gen")
        };
        let a = run();
        let b = run();
        assert_eq!(a.agents.len(), b.agents.len());
        for (x, y) in a.agents.iter().zip(&b.agents) {
            assert_eq!(x.positions, y.positions);
        }
        // agent 1 spawns at its marker frame
        let late = a.agents.iter().find(|ag| ag.spawn_frame == 7).unwrap();
        assert_eq!(late.kind, AgentKind::Bicyclist);
        // each agent has one position per frame from spawn
        for ag in &a.agents {
            assert!(!ag.positions.is_empty());
            assert!(ag.spawn_frame + ag.positions.len() <= 31);
        }
    }

    #[test]
    fn empty_state_step_is_a_no_op() {
        let layout = flat_layout(20, 20);
        let nav = NavGraph::build(layout.traversable.clone()).unwrap();
        let model = SimulatorModel::new(
            little_vocab(2),
            SegmentOptions {
                t_f: 5,
                ..Default::default()
            },
            1,
        );
        let mut state = RolloutState::default();
        let mut rng = SeedStreams::new(1).stream("noop");
        step_window(
            &mut state,
            &model,
            &nav,
            &layout,
            0,
            10,
            &AblationFlags::default(),
            &mut rng,
        )
        .unwrap();
        assert!(state.live.is_empty());
        assert!(state.finished.is_empty());
    }

    #[test]
    fn checkpoint_round_trip_preserves_simulator() {
        let vocab = little_vocab(3);
        let opts = SegmentOptions {
            t_f: 5,
            horizon: 3.0,
            scale_mode: ScaleMode::Pace,
        };
        let mut model = SimulatorModel::new(vocab, opts, 31);
        model.stats.mean[0] = 0.25;
        model.stats.std[1] = 2.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sim.net");
        model.save(&path).unwrap();
        let loaded = SimulatorModel::load(&path).unwrap();
        assert_eq!(loaded.vocab, model.vocab);
        assert_eq!(loaded.options.scale_mode, ScaleMode::Pace);
        assert!((loaded.stats.mean[0] - 0.25).abs() < 1e-15);
        for (a, b) in model.store.ids().zip(loaded.store.ids()) {
            assert_eq!(model.store.value(a).data, loaded.store.value(b).data);
        }
    }
}
