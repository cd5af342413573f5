//! End-to-end orchestration: run configuration, dataset preparation,
//! model training, and the window-alternating generation loop with its
//! warm-up prefix.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;

use crate::emitter::{
    emit_agents, histogram_emit, occupancy_grid, sample_population_count, train_emitter,
    EmitterModel, EmitterTrainOptions, EmpiricalStats,
};
use crate::error::Error;
use crate::geom::Vec2;
use crate::grid::GridRaster;
use crate::layout::{SceneLayout, SegClass};
use crate::navmesh::NavGraph;
use crate::rng::SeedStreams;
use crate::se_orca::{se_orca_generate, SeOrcaOptions};
use crate::simulator::{
    step_window, train_simulator, AblationFlags, RolloutState, SimulatorModel, SimTrainOptions,
    T_H,
};
use crate::trajectory::{
    parse_trajectory_file, resample_fps, write_trajectory_file, Agent, IngestOptions, Scenario,
    TrajFormat,
};
use crate::vocab::{kmeans_fit, segment_and_normalize, SegmentOptions};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    /// Learned emitter + Markov-switching simulator.
    Crowdes,
    /// Histogram emission + reciprocal-avoidance steering baseline.
    SeOrca,
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "crowdes" => Ok(Engine::Crowdes),
            "se-orca" | "seorca" => Ok(Engine::SeOrca),
            _ => Err(Error::Config(format!("unknown engine `{s}`"))),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Crowdes => "crowdes",
            Engine::SeOrca => "se-orca",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitterKind {
    Diffusion,
    Histogram,
}

impl FromStr for EmitterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diffusion" => Ok(EmitterKind::Diffusion),
            "histogram" => Ok(EmitterKind::Histogram),
            _ => Err(Error::Config(format!("unknown emitter `{s}`"))),
        }
    }
}

impl fmt::Display for EmitterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmitterKind::Diffusion => "diffusion",
            EmitterKind::Histogram => "histogram",
        })
    }
}

/// Feature knockouts, each disabling one ingredient of the full engine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablations {
    /// Single-entry behavior vocabulary: the simulator cannot switch
    /// styles mid-track.
    pub no_switching: bool,
    /// Replace the learned emitter with histogram sampling.
    pub no_diffusion: bool,
    /// Draw window population targets uniformly instead of from the
    /// learned distribution.
    pub no_population: bool,
    /// Blank the appearance prior for histogram emission and zero the
    /// local map channels in the simulator features.
    pub no_layout: bool,
    /// Steer straight at destinations instead of along the nav graph.
    pub no_navmesh: bool,
    /// Zero all neighbor slots in the simulator features.
    pub no_social: bool,
}

impl Ablations {
    pub fn parse_list(s: &str) -> Result<Ablations> {
        let mut a = Ablations::default();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "no-switching" => a.no_switching = true,
                "no-diffusion" => a.no_diffusion = true,
                "no-population" => a.no_population = true,
                "no-layout" => a.no_layout = true,
                "no-navmesh" => a.no_navmesh = true,
                "no-social" => a.no_social = true,
                _ => return Err(Error::Config(format!("unknown ablation `{tok}`"))),
            }
        }
        Ok(a)
    }

    pub fn sim_flags(&self) -> AblationFlags {
        AblationFlags {
            no_layout: self.no_layout,
            no_navmesh: self.no_navmesh,
            no_social: self.no_social,
        }
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut toks = Vec::new();
        if self.no_switching {
            toks.push("no-switching");
        }
        if self.no_diffusion {
            toks.push("no-diffusion");
        }
        if self.no_population {
            toks.push("no-population");
        }
        if self.no_layout {
            toks.push("no-layout");
        }
        if self.no_navmesh {
            toks.push("no-navmesh");
        }
        if self.no_social {
            toks.push("no-social");
        }
        f.write_str(&toks.join(","))
    }
}

/// Everything a run needs, overridable key by key from a config file or
/// command line.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scene_id: String,
    pub engine: Engine,
    pub emitter: EmitterKind,
    pub duration_frames: usize,
    pub fps: f64,
    /// Emission window length, frames.
    pub t_w: usize,
    /// Behavior segment length, frames.
    pub t_f: usize,
    /// Simulator history length, frames.
    pub t_h: usize,
    /// Behavior vocabulary size.
    pub b: usize,
    /// Denoising steps the emitter is trained with.
    pub m: usize,
    pub seed: u64,
    /// Generations per evaluation.
    pub reps: usize,
    pub emitter_epochs: usize,
    pub sim_epochs: usize,
    pub ablate: Ablations,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene_id: "scene".into(),
            engine: Engine::Crowdes,
            emitter: EmitterKind::Diffusion,
            duration_frames: 1500,
            fps: 5.0,
            t_w: 50,
            t_f: 20,
            t_h: T_H,
            b: 8,
            m: 50,
            seed: 0,
            reps: 3,
            emitter_epochs: 256,
            sim_epochs: 64,
            ablate: Ablations::default(),
        }
    }
}

impl RunConfig {
    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "scene_id" => self.scene_id = value.to_string(),
            "engine" => self.engine = value.parse()?,
            "emitter" => self.emitter = value.parse()?,
            "duration_frames" => self.duration_frames = num(key, value)?,
            "fps" => self.fps = num(key, value)?,
            "t_w" => self.t_w = num(key, value)?,
            "t_f" => self.t_f = num(key, value)?,
            "t_h" => self.t_h = num(key, value)?,
            "b" => self.b = num(key, value)?,
            "m" => self.m = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "reps" => self.reps = num(key, value)?,
            "emitter_epochs" => self.emitter_epochs = num(key, value)?,
            "sim_epochs" => self.sim_epochs = num(key, value)?,
            "ablate" => self.ablate = Ablations::parse_list(value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Parse a `key=value` file (one pair per line, `#` comments).
    pub fn parse_file(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, i + 1, "expected key=value"))?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = format!(
            "scene_id = {}\nengine = {}\nemitter = {}\nduration_frames = {}\nfps = {}\n\
             t_w = {}\nt_f = {}\nt_h = {}\nb = {}\nm = {}\nseed = {}\nreps = {}\n\
             emitter_epochs = {}\nsim_epochs = {}\nablate = {}\n",
            self.scene_id,
            self.engine,
            self.emitter,
            self.duration_frames,
            self.fps,
            self.t_w,
            self.t_f,
            self.t_h,
            self.b,
            self.m,
            self.seed,
            self.reps,
            self.emitter_epochs,
            self.sim_epochs,
            self.ablate,
        );
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Hard errors fail; soft issues come back as warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        for (name, v) in [
            ("duration_frames", self.duration_frames),
            ("t_w", self.t_w),
            ("t_f", self.t_f),
            ("b", self.b),
            ("m", self.m),
            ("reps", self.reps),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.t_h != T_H {
            return Err(Error::Config(format!(
                "history length is fixed at {T_H} frames in this build, got {}",
                self.t_h
            )));
        }
        let mut warnings = Vec::new();
        if self.t_w % self.t_f != 0 {
            warnings.push(format!(
                "window length {} is not a multiple of the segment length {}; \
                 behavior segments will straddle window boundaries",
                self.t_w, self.t_f
            ));
        }
        Ok(warnings)
    }
}

/// Canonical artifact locations under a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> RunPaths {
        RunPaths { root: root.into() }
    }

    pub fn layout_dir(&self) -> PathBuf {
        self.root.join("layout")
    }

    pub fn layout_cfg(&self) -> PathBuf {
        self.layout_dir().join("scene.cfg")
    }

    pub fn gt(&self) -> PathBuf {
        self.root.join("gt.traj")
    }

    pub fn stats(&self) -> PathBuf {
        self.root.join("stats.txt")
    }

    pub fn vocab(&self) -> PathBuf {
        self.root.join("vocab.bin")
    }

    pub fn emitter(&self) -> PathBuf {
        self.root.join("emitter.ckpt")
    }

    pub fn simulator(&self) -> PathBuf {
        self.root.join("simulator.ckpt")
    }

    pub fn emitter_log(&self) -> PathBuf {
        self.root.join("emitter_loss.txt")
    }

    pub fn sim_log(&self) -> PathBuf {
        self.root.join("sim_loss.txt")
    }

    pub fn gen(&self, rep: u64) -> PathBuf {
        self.root.join(format!("gen-{rep}.traj"))
    }
}

pub fn save_stats(stats: &EmpiricalStats, path: &Path) -> Result<()> {
    let mut text = String::from("kinds");
    for w in stats.kind_weights {
        text.push_str(&format!(" {w}"));
    }
    text.push('\n');
    for p in &stats.paces {
        text.push_str(&format!("{p}\n"));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_stats(path: &Path) -> Result<EmpiricalStats> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, head) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty stats file"))?;
    let mut kind_weights = [0.0; 6];
    let toks: Vec<&str> = head.split_whitespace().collect();
    if toks.len() != 7 || toks[0] != "kinds" {
        return Err(Error::parse(path, 1, "expected `kinds` plus 6 weights"));
    }
    for (i, t) in toks[1..].iter().enumerate() {
        kind_weights[i] = t
            .parse()
            .map_err(|_| Error::parse(path, 1, "bad kind weight"))?;
    }
    let mut paces = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        paces.push(
            line.parse()
                .map_err(|_| Error::parse(path, i + 1, "bad pace"))?,
        );
    }
    if paces.is_empty() {
        return Err(Error::parse(path, 2, "stats file has no pace samples"));
    }
    Ok(EmpiricalStats {
        kind_weights,
        paces,
    })
}

#[derive(Debug, Clone)]
pub struct PrepareOptions {
    pub format: TrajFormat,
    pub ingest: IngestOptions,
    pub target_fps: f64,
    pub cell_size: f64,
    /// Padding around the trajectory bounding box, meters.
    pub margin_m: f64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            format: TrajFormat::Generic,
            ingest: IngestOptions::default(),
            target_fps: 5.0,
            cell_size: 1.0,
            margin_m: 2.0,
        }
    }
}

/// Ingest a trajectory file, resample it, derive the scene layout from
/// it, and persist both under `out_root`.
pub fn prepare(input: &Path, opts: &PrepareOptions, out_root: &Path) -> Result<(SceneLayout, Scenario)> {
    let parsed = parse_trajectory_file(input, opts.format, &opts.ingest)?;
    let scenario = resample_fps(&parsed, opts.target_fps)?;
    let (lo, hi) = scenario
        .bbox()
        .ok_or_else(|| Error::Invalid("input contains no positions".into()))?;
    let m = opts.margin_m;
    let origin = Vec2::new(lo.x - m, lo.y - m);
    let w = (((hi.x - lo.x) + 2.0 * m) / opts.cell_size).ceil().max(1.0) as usize;
    let h = (((hi.y - lo.y) + 2.0 * m) / opts.cell_size).ceil().max(1.0) as usize;
    let seg = GridRaster::filled(w, h, opts.cell_size, origin, SegClass::Sidewalk as usize as f64)?;
    let layout = SceneLayout::derive(scenario.scene_id.clone(), seg, &scenario, None)?;
    let paths = RunPaths::new(out_root);
    fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    layout.save(&paths.layout_dir())?;
    write_trajectory_file(&scenario, &paths.gt())?;
    Ok((layout, scenario))
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub segments: usize,
    pub vocab_b: usize,
    pub emitter_loss: Vec<f64>,
    pub transition_ce: Vec<f64>,
    pub decoder_mae: Vec<f64>,
}

/// Fit every model the configured engine needs and write checkpoints
/// plus loss logs under `out_root`.
pub fn train(cfg: &RunConfig, layout: &SceneLayout, gt: &Scenario, out_root: &Path) -> Result<TrainReport> {
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    let paths = RunPaths::new(out_root);
    fs::create_dir_all(&paths.root).map_err(|e| Error::io(&paths.root, e))?;
    let streams = SeedStreams::new(cfg.seed);

    let stats = EmpiricalStats::from_scenario(gt);
    save_stats(&stats, &paths.stats())?;
    if cfg.engine == Engine::SeOrca {
        // The baseline engine is training-free beyond the empirical
        // histograms.
        return Ok(TrainReport::default());
    }

    let nav = NavGraph::build(layout.traversable.clone())?;
    let seg_opts = SegmentOptions {
        t_f: cfg.t_f,
        ..SegmentOptions::default()
    };
    let segments = segment_and_normalize(gt, Some(&nav), &seg_opts)?;
    if segments.is_empty() {
        return Err(Error::Invalid(
            "ground truth yields no usable behavior segments".into(),
        ));
    }
    let b_eff = if cfg.ablate.no_switching { 1 } else { cfg.b };
    let vocab = kmeans_fit(&segments, b_eff, 100, streams.stream("vocab").gen())?;
    vocab.save(&paths.vocab())?;

    let emit_opts = EmitterTrainOptions {
        epochs: cfg.emitter_epochs,
        diffusion_steps: cfg.m,
        ..EmitterTrainOptions::default()
    };
    let (emitter, emitter_loss) =
        train_emitter(layout, gt, cfg.t_w, &emit_opts, &mut streams.stream("train-emit"))?;
    emitter.save(&paths.emitter())?;
    let log: String = emitter_loss.iter().map(|l| format!("{l}\n")).collect();
    fs::write(paths.emitter_log(), log).map_err(|e| Error::io(paths.emitter_log(), e))?;

    let sim_opts = SimTrainOptions {
        epochs: cfg.sim_epochs,
        ablation: cfg.ablate.sim_flags(),
        ..SimTrainOptions::default()
    };
    let (sim, sim_log) = train_simulator(
        layout,
        gt,
        &nav,
        &vocab,
        &seg_opts,
        &sim_opts,
        &mut streams.stream("train-sim"),
    )?;
    sim.save(&paths.simulator())?;
    let log: String = sim_log
        .transition_ce
        .iter()
        .zip(&sim_log.decoder_mae)
        .map(|(ce, mae)| format!("{ce} {mae}\n"))
        .collect();
    fs::write(paths.sim_log(), log).map_err(|e| Error::io(paths.sim_log(), e))?;

    Ok(TrainReport {
        segments: segments.len(),
        vocab_b: b_eff,
        emitter_loss,
        transition_ce: sim_log.transition_ce,
        decoder_mae: sim_log.decoder_mae,
    })
}

/// Checkpoints loaded back for generation.
pub struct Artifacts {
    pub stats: EmpiricalStats,
    pub emitter: Option<EmitterModel>,
    pub simulator: Option<SimulatorModel>,
}

/// Load whatever the configured engine needs; anything missing on disk
/// is a `MissingArtifact` error.
pub fn load_artifacts(cfg: &RunConfig, out_root: &Path) -> Result<Artifacts> {
    let paths = RunPaths::new(out_root);
    let stats = load_stats(&paths.stats())?;
    if cfg.engine == Engine::SeOrca {
        return Ok(Artifacts {
            stats,
            emitter: None,
            simulator: None,
        });
    }
    let require = |p: PathBuf| -> Result<PathBuf> {
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact(p))
        }
    };
    let simulator = Some(SimulatorModel::load(&require(paths.simulator())?)?);
    let needs_emitter = cfg.emitter == EmitterKind::Diffusion && !cfg.ablate.no_diffusion;
    let emitter = if needs_emitter {
        Some(EmitterModel::load(&require(paths.emitter())?)?)
    } else {
        None
    };
    Ok(Artifacts {
        stats,
        emitter,
        simulator,
    })
}

/// Drop the first `t_w` frames and re-index so the frame at `t_w`
/// becomes frame 0. Agents that never survive past the discarded prefix
/// vanish entirely.
pub fn discard_warmup(s: Scenario, t_w: usize) -> Result<Scenario> {
    let mut agents = Vec::new();
    for a in s.agents {
        if a.spawn_frame + a.positions.len() <= t_w {
            continue;
        }
        if a.spawn_frame >= t_w {
            agents.push(Agent {
                spawn_frame: a.spawn_frame - t_w,
                ..a
            });
        } else {
            let skip = t_w - a.spawn_frame;
            agents.push(Agent {
                id: a.id,
                kind: a.kind,
                spawn_frame: 0,
                positions: a.positions[skip..].to_vec(),
            });
        }
    }
    let mut out = Scenario {
        fps: s.fps,
        total_frames: s.total_frames.saturating_sub(t_w),
        scene_id: s.scene_id,
        agents,
    };
    out.normalize();
    out.validate()?;
    Ok(out)
}

/// Generate one scenario of `duration_frames`. A full warm-up window is
/// simulated first (seeded at half strength) and discarded so the kept
/// span starts from a populated scene rather than an empty one.
pub fn generate(cfg: &RunConfig, layout: &SceneLayout, arts: &Artifacts, rep: u64) -> Result<Scenario> {
    cfg.validate()?;
    let total = cfg.duration_frames + cfg.t_w;
    let streams = SeedStreams::new(cfg.seed);
    let nav = NavGraph::build(layout.traversable.clone())?;

    let pop: Vec<f64> = if cfg.ablate.no_population {
        let k = layout.population_prob.len();
        vec![1.0 / k as f64; k]
    } else {
        layout.population_prob.clone()
    };

    // Emission side of the layout ablation: histogram sampling falls
    // back to uniform-over-traversable when the appearance prior is
    // blank.
    let blanked;
    let emit_layout: &SceneLayout = if cfg.ablate.no_layout {
        blanked = SceneLayout {
            appearance: layout.appearance.zeros_like(),
            ..layout.clone()
        };
        &blanked
    } else {
        layout
    };

    if cfg.engine == Engine::SeOrca {
        let opts = SeOrcaOptions {
            t_w: cfg.t_w,
            horizon: 4.0,
            halve_first_window: true,
        };
        let mut rng = streams.indexed("se-orca", rep);
        let raw = se_orca_generate(
            emit_layout,
            Some(&nav),
            &arts.stats,
            &pop,
            total,
            &opts,
            &mut rng,
        )?
        .truncated(total);
        return discard_warmup(raw, cfg.t_w);
    }

    let sim = arts
        .simulator
        .as_ref()
        .ok_or_else(|| Error::Invalid("simulator model not loaded".into()))?;
    let flags = cfg.ablate.sim_flags();
    let use_diffusion = cfg.emitter == EmitterKind::Diffusion && !cfg.ablate.no_diffusion;
    let mut rng_emit = streams.indexed("emit", rep);
    let mut rng_switch = streams.indexed("switch", rep);

    let mut state = RolloutState::default();
    let mut window_start = 0usize;
    while window_start < total {
        let span = cfg.t_w.min(total - window_start);
        let n_prev = state.population();
        let mut count = sample_population_count(&pop, n_prev, &mut rng_emit)?;
        if window_start == 0 {
            // Half-strength seeding: the discarded warm-up window fills
            // the scene gradually instead of teleporting a full crowd in.
            count = count.div_ceil(2);
        }
        if count > 0 {
            let emitted = if use_diffusion {
                let live_pos: Vec<Vec2> = state
                    .live
                    .iter()
                    .map(|a| *a.trail.last().expect("live trails are never empty"))
                    .collect();
                let occ = occupancy_grid(&layout.density, &live_pos);
                let model = arts
                    .emitter
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("emitter model not loaded".into()))?;
                emit_agents(model, emit_layout, &occ, count, window_start, span, &mut rng_emit)?.agents
            } else {
                histogram_emit(emit_layout, &arts.stats, count, window_start, span, &mut rng_emit)?
            };
            state.schedule(emitted);
        }
        step_window(
            &mut state,
            sim,
            &nav,
            layout,
            window_start,
            span,
            &flags,
            &mut rng_switch,
        )?;
        window_start += span;
    }
    // Trails carry the position after the final step; cut back to the
    // nominal frame count before dropping the warm-up prefix.
    let raw = state
        .into_scenario(layout.fps, total, &layout.scene_id)
        .truncated(total);
    discard_warmup(raw, cfg.t_w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::corridor_fixture;
    use crate::trajectory::AgentKind;

    #[test]
    fn config_file_roundtrip_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.set("engine", "se-orca").unwrap();
        cfg.set("t_w", "40").unwrap();
        cfg.set("ablate", "no-social,no-layout").unwrap();
        cfg.set("seed", "99").unwrap();
        let path = dir.path().join("run.cfg");
        cfg.write(&path).unwrap();
        let back = RunConfig::parse_file(&path).unwrap();
        assert_eq!(back, cfg);

        assert!(cfg.set("nope", "1").is_err());
        assert!(cfg.set("t_w", "forty").is_err());
        assert!(Ablations::parse_list("no-gravity").is_err());
    }

    #[test]
    fn validate_flags_ragged_windows_and_bad_sizes() {
        let cfg = RunConfig::default();
        let warnings = cfg.validate().unwrap();
        assert_eq!(warnings.len(), 1, "50 is not a multiple of 20");

        let mut even = cfg.clone();
        even.t_f = 25;
        assert!(even.validate().unwrap().is_empty());

        let mut bad = cfg.clone();
        bad.t_w = 0;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.t_h = 7;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn discard_warmup_reindexes_and_drops_prefix_only_agents() {
        let agent = |id, spawn, n: usize| Agent {
            id,
            kind: AgentKind::Pedestrian,
            spawn_frame: spawn,
            positions: (0..n).map(|i| Vec2::new(i as f64, 0.0)).collect(),
        };
        let s = Scenario {
            fps: 5.0,
            total_frames: 20,
            scene_id: "t".into(),
            agents: vec![agent(0, 2, 5), agent(1, 6, 10), agent(2, 12, 4)],
        };
        let out = discard_warmup(s, 10).unwrap();
        assert_eq!(out.total_frames, 10);
        assert_eq!(out.agents.len(), 2);
        // Straddler: loses its first 4 frames and starts at the origin
        // of the kept span.
        let b = out.agents.iter().find(|a| a.id == 1).unwrap();
        assert_eq!(b.spawn_frame, 0);
        assert_eq!(b.positions.len(), 6);
        assert_eq!(b.positions[0], Vec2::new(4.0, 0.0));
        let c = out.agents.iter().find(|a| a.id == 2).unwrap();
        assert_eq!(c.spawn_frame, 2);
        assert_eq!(c.positions.len(), 4);
    }

    #[test]
    fn stats_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let stats = EmpiricalStats {
            kind_weights: [0.5, 0.25, 0.25, 0.0, 0.0, 0.0],
            paces: vec![1.0, 1.3, 0.8],
        };
        let path = dir.path().join("stats.txt");
        save_stats(&stats, &path).unwrap();
        let back = load_stats(&path).unwrap();
        assert_eq!(back.kind_weights, stats.kind_weights);
        assert_eq!(back.paces, stats.paces);
        assert!(matches!(
            load_stats(&dir.path().join("missing.txt")),
            Err(Error::MissingArtifact(_))
        ));
    }

    #[test]
    fn train_generate_smoke_on_corridor() {
        let dir = tempfile::tempdir().unwrap();
        let (layout, gt) = corridor_fixture(21, 600).unwrap();
        let cfg = RunConfig {
            scene_id: "corridor".into(),
            duration_frames: 150,
            emitter_epochs: 2,
            sim_epochs: 2,
            seed: 5,
            ..RunConfig::default()
        };
        let report = train(&cfg, &layout, &gt, dir.path()).unwrap();
        assert!(report.segments > 0);
        assert_eq!(report.vocab_b, 8);
        assert_eq!(report.emitter_loss.len(), 2);

        let arts = load_artifacts(&cfg, dir.path()).unwrap();
        let a = generate(&cfg, &layout, &arts, 0).unwrap();
        assert_eq!(a.total_frames, 150);
        a.validate().unwrap();
        let b = generate(&cfg, &layout, &arts, 0).unwrap();
        assert_eq!(a, b, "same seed and rep must reproduce exactly");

        // The baseline engine runs off the same artifact directory.
        let se_cfg = RunConfig {
            engine: Engine::SeOrca,
            ..cfg
        };
        let se_arts = load_artifacts(&se_cfg, dir.path()).unwrap();
        let s = generate(&se_cfg, &layout, &se_arts, 0).unwrap();
        assert_eq!(s.total_frames, 150);
        assert!(!s.agents.is_empty());
    }

    #[test]
    fn generate_without_checkpoints_reports_missing() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default();
        assert!(matches!(
            load_artifacts(&cfg, dir.path()),
            Err(Error::MissingArtifact(_))
        ));
    }
}
