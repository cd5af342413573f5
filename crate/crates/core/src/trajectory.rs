//! Crowd scenario ingestion, resampling, and windowing.
//!
//! A [`Scenario`] is a set of agents observed at a fixed frame rate; each
//! [`Agent`] carries one world-space position per frame of its lifespan.
//! Parsers normalize external annotation formats into this shape, after
//! which everything downstream (training, generation, metrics) speaks only
//! meters and frame indices.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Agent categories, matching the six classes annotated in drone datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AgentKind {
    Pedestrian,
    Bicyclist,
    Skateboarder,
    Car,
    Cart,
    Bus,
}

pub const AGENT_KINDS: [AgentKind; 6] = [
    AgentKind::Pedestrian,
    AgentKind::Bicyclist,
    AgentKind::Skateboarder,
    AgentKind::Car,
    AgentKind::Cart,
    AgentKind::Bus,
];

impl AgentKind {
    pub fn index(self) -> usize {
        AGENT_KINDS.iter().position(|&k| k == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<AgentKind> {
        AGENT_KINDS.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Pedestrian => "pedestrian",
            AgentKind::Bicyclist => "bicyclist",
            AgentKind::Skateboarder => "skateboarder",
            AgentKind::Car => "car",
            AgentKind::Cart => "cart",
            AgentKind::Bus => "bus",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        // Accepts both our canonical names and the drone-dataset labels.
        match s.to_ascii_lowercase().as_str() {
            "pedestrian" => Ok(AgentKind::Pedestrian),
            "bicyclist" | "biker" => Ok(AgentKind::Bicyclist),
            "skateboarder" | "skater" => Ok(AgentKind::Skateboarder),
            "car" => Ok(AgentKind::Car),
            "cart" => Ok(AgentKind::Cart),
            "bus" => Ok(AgentKind::Bus),
            _ => Err(Error::Invalid(format!("unknown agent kind `{s}`"))),
        }
    }
}

/// One tracked agent: a contiguous run of per-frame positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u64,
    pub kind: AgentKind,
    pub spawn_frame: usize,
    /// World positions, one per frame from `spawn_frame` to `end_frame()`.
    pub positions: Vec<Vec2>,
}

impl Agent {
    pub fn end_frame(&self) -> usize {
        self.spawn_frame + self.positions.len() - 1
    }

    pub fn alive_at(&self, frame: usize) -> bool {
        frame >= self.spawn_frame && frame <= self.end_frame()
    }

    pub fn position_at(&self, frame: usize) -> Option<Vec2> {
        if self.alive_at(frame) {
            Some(self.positions[frame - self.spawn_frame])
        } else {
            None
        }
    }

    /// Backward-difference velocity at `frame` (zero on the spawn frame).
    pub fn velocity_at(&self, frame: usize, fps: f64) -> Option<Vec2> {
        let p = self.position_at(frame)?;
        if frame == self.spawn_frame {
            return Some(Vec2::ZERO);
        }
        let prev = self.positions[frame - self.spawn_frame - 1];
        Some((p - prev) * fps)
    }

    /// Mean speed over the realized path. Always recomputed from the
    /// trajectory; never taken on trust from an annotation.
    pub fn mean_speed(&self, fps: f64) -> f64 {
        if self.positions.len() < 2 {
            return 0.0;
        }
        let total: f64 = self
            .positions
            .windows(2)
            .map(|w| w[0].dist(w[1]))
            .sum();
        total * fps / (self.positions.len() - 1) as f64
    }

    pub fn path_length(&self) -> f64 {
        self.positions.windows(2).map(|w| w[0].dist(w[1])).sum()
    }

    pub fn start(&self) -> Vec2 {
        self.positions[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.positions.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub fps: f64,
    pub total_frames: usize,
    pub scene_id: String,
    pub agents: Vec<Agent>,
}

impl Scenario {
    /// Checks the structural invariants every pipeline stage relies on.
    pub fn validate(&self) -> Result<()> {
        if self.fps <= 0.0 || !self.fps.is_finite() {
            return Err(Error::Invalid(format!("fps must be > 0, got {}", self.fps)));
        }
        for a in &self.agents {
            if a.positions.is_empty() {
                return Err(Error::Invalid(format!("agent {} has empty trajectory", a.id)));
            }
            if a.end_frame() >= self.total_frames {
                return Err(Error::Invalid(format!(
                    "agent {} ends at frame {} but scenario has {} frames",
                    a.id,
                    a.end_frame(),
                    self.total_frames
                )));
            }
            if let Some(p) = a.positions.iter().find(|p| !p.is_finite()) {
                return Err(Error::Invalid(format!(
                    "agent {} has non-finite position ({}, {})",
                    a.id, p.x, p.y
                )));
            }
        }
        let mut ids: Vec<u64> = self.agents.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.agents.len() {
            return Err(Error::Invalid("duplicate agent ids".into()));
        }
        Ok(())
    }

    /// Sorts agents into the canonical order used by writers and parsers,
    /// so identical scenarios compare equal regardless of construction
    /// order.
    pub fn normalize(&mut self) {
        self.agents.sort_by_key(|a| (a.spawn_frame, a.id));
    }

    pub fn alive_at(&self, frame: usize) -> impl Iterator<Item = &Agent> {
        self.agents.iter().filter(move |a| a.alive_at(frame))
    }

    pub fn count_alive(&self, frame: usize) -> usize {
        self.alive_at(frame).count()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.total_frames as f64 / self.fps
    }

    /// Axis-aligned bounds over every recorded position.
    pub fn bbox(&self) -> Option<(Vec2, Vec2)> {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        for a in &self.agents {
            for p in &a.positions {
                any = true;
                min.x = min.x.min(p.x);
                min.y = min.y.min(p.y);
                max.x = max.x.max(p.x);
                max.y = max.y.max(p.y);
            }
        }
        if any {
            Some((min, max))
        } else {
            None
        }
    }

    pub fn max_concurrent(&self) -> usize {
        (0..self.total_frames)
            .map(|f| self.count_alive(f))
            .max()
            .unwrap_or(0)
    }

    /// Copy limited to the first `frames` frames: later spawns are
    /// dropped and running trajectories are cut at the boundary.
    pub fn truncated(&self, frames: usize) -> Scenario {
        let agents = self
            .agents
            .iter()
            .filter(|a| a.spawn_frame < frames)
            .map(|a| {
                let keep = (frames - a.spawn_frame).min(a.positions.len());
                Agent {
                    id: a.id,
                    kind: a.kind,
                    spawn_frame: a.spawn_frame,
                    positions: a.positions[..keep].to_vec(),
                }
            })
            .collect();
        Scenario {
            fps: self.fps,
            total_frames: frames.min(self.total_frames),
            scene_id: self.scene_id.clone(),
            agents,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajFormat {
    /// `frame agent_id x y` rows, meters, possibly strided frame numbers.
    EthUcy,
    /// Drone-annotation rows: `track xmin ymin xmax ymax frame lost occluded generated "Label"`.
    Sdd,
    /// Our interchange format (also the generation output format).
    Generic,
}

impl FromStr for TrajFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ethucy" => Ok(TrajFormat::EthUcy),
            "sdd" => Ok(TrajFormat::Sdd),
            "generic" => Ok(TrajFormat::Generic),
            _ => Err(Error::Invalid(format!("unknown trajectory format `{s}`"))),
        }
    }
}

/// Ingestion parameters that external annotation formats do not carry
/// themselves.
#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Frame rate of the (stride-normalized) frame sequence.
    pub fps: f64,
    /// Meters per input coordinate unit (e.g. meters/pixel for drone data).
    pub scale: f64,
    pub scene_id: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            fps: 5.0,
            scale: 1.0,
            scene_id: "scene".into(),
        }
    }
}

const GENERIC_HEADER_PREFIX: &str = "# crowdes-traj v1";

/// Raw observation rows keyed by agent, prior to gap handling.
type RawTracks = BTreeMap<u64, (AgentKind, Vec<(u64, Vec2)>)>;

pub fn parse_trajectory_file(
    path: &Path,
    format: TrajFormat,
    options: &IngestOptions,
) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tracks: RawTracks = BTreeMap::new();
    let mut fps = options.fps;
    let mut scene_id = options.scene_id.clone();

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed.starts_with('#') {
            if format == TrajFormat::Generic && trimmed.starts_with(GENERIC_HEADER_PREFIX) {
                for tok in trimmed.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("fps=") {
                        fps = v
                            .parse()
                            .map_err(|_| Error::parse(path, lineno, "bad fps in header"))?;
                    } else if let Some(v) = tok.strip_prefix("scene=") {
                        scene_id = v.to_string();
                    }
                }
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let (frame, id, kind, pos) = match format {
            TrajFormat::EthUcy => parse_ethucy_row(&fields, path, lineno)?,
            TrajFormat::Sdd => match parse_sdd_row(&fields, path, lineno)? {
                Some(row) => row,
                None => continue, // out-of-view observation
            },
            TrajFormat::Generic => parse_generic_row(&fields, path, lineno)?,
        };
        tracks
            .entry(id)
            .or_insert_with(|| (kind, Vec::new()))
            .1
            .push((frame, pos * options.scale));
    }

    if tracks.is_empty() {
        return Err(Error::parse(path, 1, "no trajectory rows"));
    }

    match format {
        // Fixed-stride annotation exports: rebase to frame 0 and divide
        // out the stride.
        TrajFormat::EthUcy => normalize_frame_numbers(&mut tracks, true),
        // Dense per-video-frame annotations: rebase only, so dropped
        // frames stay visible to the gap rule.
        TrajFormat::Sdd => normalize_frame_numbers(&mut tracks, false),
        // Our own format carries scenario-absolute frames.
        TrajFormat::Generic => {}
    }
    let agents = assemble_agents(tracks, path)?;
    let total_frames = agents.iter().map(|a| a.end_frame()).max().unwrap() + 1;
    let mut scenario = Scenario {
        fps,
        total_frames,
        scene_id,
        agents,
    };
    scenario.normalize();
    scenario.validate()?;
    Ok(scenario)
}

fn parse_ethucy_row(
    fields: &[&str],
    path: &Path,
    lineno: usize,
) -> Result<(u64, u64, AgentKind, Vec2)> {
    if fields.len() < 4 {
        return Err(Error::parse(path, lineno, "expected `frame id x y`"));
    }
    let frame = parse_frame(fields[0], path, lineno)?;
    let id = parse_frame(fields[1], path, lineno)?;
    let x: f64 = fields[2]
        .parse()
        .map_err(|_| Error::parse(path, lineno, "bad x coordinate"))?;
    let y: f64 = fields[3]
        .parse()
        .map_err(|_| Error::parse(path, lineno, "bad y coordinate"))?;
    Ok((frame, id, AgentKind::Pedestrian, Vec2::new(x, y)))
}

fn parse_sdd_row(
    fields: &[&str],
    path: &Path,
    lineno: usize,
) -> Result<Option<(u64, u64, AgentKind, Vec2)>> {
    if fields.len() < 10 {
        return Err(Error::parse(
            path,
            lineno,
            "expected `track xmin ymin xmax ymax frame lost occluded generated label`",
        ));
    }
    let lost = fields[6] == "1";
    if lost {
        return Ok(None);
    }
    let id = parse_frame(fields[0], path, lineno)?;
    let bbox: Vec<f64> = fields[1..5]
        .iter()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, lineno, "bad bounding box"))?;
    let frame = parse_frame(fields[5], path, lineno)?;
    let label = fields[9].trim_matches('"');
    let kind = label
        .parse::<AgentKind>()
        .map_err(|_| Error::parse(path, lineno, format!("unknown label `{label}`")))?;
    let center = Vec2::new((bbox[0] + bbox[2]) / 2.0, (bbox[1] + bbox[3]) / 2.0);
    Ok(Some((frame, id, kind, center)))
}

fn parse_generic_row(
    fields: &[&str],
    path: &Path,
    lineno: usize,
) -> Result<(u64, u64, AgentKind, Vec2)> {
    if fields.len() < 5 {
        return Err(Error::parse(path, lineno, "expected `frame id kind x y`"));
    }
    let frame = parse_frame(fields[0], path, lineno)?;
    let id = parse_frame(fields[1], path, lineno)?;
    let kind = fields[2]
        .parse::<AgentKind>()
        .map_err(|_| Error::parse(path, lineno, format!("unknown kind `{}`", fields[2])))?;
    let x: f64 = fields[3]
        .parse()
        .map_err(|_| Error::parse(path, lineno, "bad x coordinate"))?;
    let y: f64 = fields[4]
        .parse()
        .map_err(|_| Error::parse(path, lineno, "bad y coordinate"))?;
    Ok((frame, id, kind, Vec2::new(x, y)))
}

fn parse_frame(tok: &str, path: &Path, lineno: usize) -> Result<u64> {
    tok.parse()
        .map_err(|_| Error::parse(path, lineno, format!("bad integer `{tok}`")))
}

/// Rebase frames to start at 0 and, when asked, divide out a constant
/// annotation stride (some exports label only every Nth video frame).
fn normalize_frame_numbers(tracks: &mut RawTracks, detect_stride: bool) {
    let mut min_frame = u64::MAX;
    let mut stride = 0u64;
    for (_, obs) in tracks.values_mut() {
        obs.sort_by_key(|&(f, _)| f);
        for pair in obs.windows(2) {
            stride = gcd(stride, pair[1].0 - pair[0].0);
        }
        min_frame = min_frame.min(obs[0].0);
    }
    if stride == 0 || !detect_stride {
        stride = 1;
    }
    for (_, obs) in tracks.values_mut() {
        for (f, _) in obs.iter_mut() {
            *f = (*f - min_frame) / stride;
        }
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Turns sorted raw observations into agents: duplicate frames are
/// rejected, frame jumps of at most 2 are filled by linear interpolation,
/// and larger jumps split the track into separate agents.
fn assemble_agents(tracks: RawTracks, path: &Path) -> Result<Vec<Agent>> {
    const MAX_INTERP_GAP: u64 = 2;
    let mut next_fresh_id = tracks.keys().max().copied().unwrap_or(0) + 1;
    let mut agents = Vec::new();
    for (id, (kind, obs)) in tracks {
        for pair in obs.windows(2) {
            if pair[1].0 == pair[0].0 {
                return Err(Error::parse(
                    path,
                    1,
                    format!("agent {id} observed twice at frame {}", pair[0].0),
                ));
            }
        }
        let mut fragment_start = 0usize;
        let mut fragments = Vec::new();
        for i in 1..obs.len() {
            if obs[i].0 - obs[i - 1].0 > MAX_INTERP_GAP {
                fragments.push(&obs[fragment_start..i]);
                fragment_start = i;
            }
        }
        fragments.push(&obs[fragment_start..]);
        for (frag_idx, frag) in fragments.iter().enumerate() {
            let frag_id = if frag_idx == 0 {
                id
            } else {
                let fresh = next_fresh_id;
                next_fresh_id += 1;
                fresh
            };
            let spawn_frame = frag[0].0 as usize;
            let mut positions = Vec::new();
            positions.push(frag[0].1);
            for pair in frag.windows(2) {
                let (f0, p0) = pair[0];
                let (f1, p1) = pair[1];
                let steps = f1 - f0;
                for s in 1..=steps {
                    positions.push(p0.lerp(p1, s as f64 / steps as f64));
                }
            }
            agents.push(Agent {
                id: frag_id,
                kind,
                spawn_frame,
                positions,
            });
        }
    }
    Ok(agents)
}

/// Writes the interchange format: a header line, then one row per
/// (frame, agent) sorted by frame and id, coordinates at 0.1 mm precision.
pub fn write_trajectory_file(scenario: &Scenario, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "{GENERIC_HEADER_PREFIX} fps={} scene={}\n",
        scenario.fps, scenario.scene_id
    ));
    let mut ordered: Vec<&Agent> = scenario.agents.iter().collect();
    ordered.sort_by_key(|a| a.id);
    for frame in 0..scenario.total_frames {
        for a in &ordered {
            if let Some(p) = a.position_at(frame) {
                out.push_str(&format!(
                    "{frame} {} {} {:.4} {:.4}\n",
                    a.id, a.kind, p.x, p.y
                ));
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Resamples a scenario onto a new frame grid. Sampling is spawn-aligned
/// per agent: the first resampled point coincides with the agent's first
/// observation and the last with its final one, with linear interpolation
/// between source frames.
pub fn resample_fps(scenario: &Scenario, target_fps: f64) -> Result<Scenario> {
    if target_fps <= 0.0 || !target_fps.is_finite() {
        return Err(Error::Invalid(format!("target fps must be > 0, got {target_fps}")));
    }
    if target_fps > scenario.fps + 1e-9 {
        return Err(Error::Invalid(format!(
            "cannot upsample {} fps data to {} fps",
            scenario.fps, target_fps
        )));
    }
    if (target_fps - scenario.fps).abs() < 1e-12 {
        return Ok(scenario.clone());
    }
    let src = scenario.fps;
    let mut agents = Vec::with_capacity(scenario.agents.len());
    for a in &scenario.agents {
        let t_start = a.spawn_frame as f64 / src;
        let t_end = a.end_frame() as f64 / src;
        let span = t_end - t_start;
        let steps = (span * target_fps - 1e-9).ceil().max(0.0) as usize;
        let mut positions = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let t = (t_start + k as f64 / target_fps).min(t_end);
            positions.push(sample_linear(a, src, t));
        }
        // The final sample time may overshoot the track end by under one
        // target-frame; the clamp above pins it to the last observation.
        agents.push(Agent {
            id: a.id,
            kind: a.kind,
            spawn_frame: (t_start * target_fps).round() as usize,
            positions,
        });
    }
    let max_end = agents.iter().map(|a| a.end_frame()).max().unwrap_or(0);
    let total_frames = ((scenario.total_frames as f64 * target_fps / src).ceil() as usize)
        .max(max_end + 1);
    let mut out = Scenario {
        fps: target_fps,
        total_frames,
        scene_id: scenario.scene_id.clone(),
        agents,
    };
    out.normalize();
    out.validate()?;
    Ok(out)
}

fn sample_linear(agent: &Agent, src_fps: f64, t: f64) -> Vec2 {
    let f = t * src_fps - agent.spawn_frame as f64;
    let last = (agent.positions.len() - 1) as f64;
    let f = f.clamp(0.0, last);
    let i = (f.floor() as usize).min(agent.positions.len() - 1);
    let frac = f - i as f64;
    if frac < 1e-12 || i + 1 >= agent.positions.len() {
        agent.positions[i]
    } else {
        agent.positions[i].lerp(agent.positions[i + 1], frac)
    }
}

/// One training/generation window over a scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub start: usize,
    /// Indices of agents whose spawn frame lies inside this window.
    pub spawned: Vec<usize>,
    /// Indices of agents alive at the window's first frame but spawned
    /// earlier.
    pub alive_at_start: Vec<usize>,
}

/// Tiles `[0, total_frames)` into consecutive windows of `t_w` frames and
/// assigns each agent to the single window containing its spawn frame.
pub fn window_scenario(scenario: &Scenario, t_w: usize) -> Result<Vec<Window>> {
    if t_w == 0 {
        return Err(Error::Invalid("window length must be >= 1".into()));
    }
    let mut windows = Vec::new();
    let mut start = 0usize;
    while start < scenario.total_frames {
        let spawned = scenario
            .agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.spawn_frame >= start && a.spawn_frame < start + t_w)
            .map(|(i, _)| i)
            .collect();
        let alive_at_start = scenario
            .agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.spawn_frame < start && a.end_frame() >= start)
            .map(|(i, _)| i)
            .collect();
        windows.push(Window {
            start,
            spawned,
            alive_at_start,
        });
        start += t_w;
    }
    Ok(windows)
}
