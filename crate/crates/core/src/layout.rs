//! Scene geometry and the spatial layout channels that condition
//! generation.
//!
//! A [`SceneLayout`] bundles five channels on a common raster geometry:
//! semantic segmentation (7 classes), appearance (where agents enter and
//! leave), visit density, traversability, and a categorical distribution
//! over concurrent population counts. All but segmentation are derived
//! from observed trajectories.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::grid::GridRaster;
use crate::trajectory::{Agent, Scenario};

/// Semantic classes stored in the segmentation raster, by cell value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegClass {
    Building = 0,
    Structure = 1,
    Bush = 2,
    Grass = 3,
    Tree = 4,
    Sidewalk = 5,
    Road = 6,
}

pub const SEG_CLASS_COUNT: usize = 7;

impl SegClass {
    pub fn from_index(i: usize) -> Option<SegClass> {
        use SegClass::*;
        [Building, Structure, Bush, Grass, Tree, Sidewalk, Road]
            .get(i)
            .copied()
    }

    /// Whether agents may occupy cells of this class.
    pub fn traversable(self) -> bool {
        !matches!(self, SegClass::Building | SegClass::Structure | SegClass::Bush)
    }

    pub fn name(self) -> &'static str {
        match self {
            SegClass::Building => "building",
            SegClass::Structure => "structure",
            SegClass::Bush => "bush",
            SegClass::Grass => "grass",
            SegClass::Tree => "tree",
            SegClass::Sidewalk => "sidewalk",
            SegClass::Road => "road",
        }
    }
}

impl fmt::Display for SegClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLayout {
    pub scene_id: String,
    pub fps: f64,
    pub segmentation: GridRaster,
    /// Binary: 1 where some observed agent entered or left the scene.
    pub appearance: GridRaster,
    /// Log-compressed visit frequency, normalized to [0, 1].
    pub density: GridRaster,
    /// Binary: 1 where agents may walk.
    pub traversable: GridRaster,
    /// Probability of observing k concurrent agents, k = 0..K-1.
    pub population_prob: Vec<f64>,
}

impl SceneLayout {
    pub fn validate(&self) -> Result<()> {
        for r in [&self.appearance, &self.density, &self.traversable] {
            if !r.same_geometry(&self.segmentation) {
                return Err(Error::Invalid("layout channels disagree on raster geometry".into()));
            }
        }
        for (name, r) in [("appearance", &self.appearance), ("traversable", &self.traversable)] {
            if !r.is_binary() {
                return Err(Error::Invalid(format!("{name} raster is not binary")));
            }
        }
        for &v in self.segmentation.values() {
            if v.fract() != 0.0 || SegClass::from_index(v as usize).is_none() {
                return Err(Error::Invalid(format!("segmentation class {v} out of range")));
            }
        }
        if self.density.values().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Invalid("density values must lie in [0, 1]".into()));
        }
        if self.population_prob.is_empty() {
            return Err(Error::Invalid("population distribution is empty".into()));
        }
        if self.population_prob.iter().any(|&p| p < 0.0) {
            return Err(Error::Invalid("population probabilities must be >= 0".into()));
        }
        let sum: f64 = self.population_prob.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "population probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }

    /// Derives every trajectory-dependent channel for a scene.
    ///
    /// `k` sets the support of the population distribution; by default it
    /// is the observed maximum concurrent count plus 25% headroom.
    pub fn derive(
        scene_id: impl Into<String>,
        segmentation: GridRaster,
        scenario: &Scenario,
        k: Option<usize>,
    ) -> Result<SceneLayout> {
        let k = k.unwrap_or_else(|| default_population_support(scenario));
        let layout = SceneLayout {
            scene_id: scene_id.into(),
            fps: scenario.fps,
            appearance: derive_appearance_map(&scenario.agents, &segmentation)?,
            density: derive_density_map(&scenario.agents, &segmentation)?,
            traversable: derive_traversable_map(&segmentation)?,
            population_prob: derive_population_prob(scenario, k)?,
            segmentation,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.segmentation.write_pgm(&dir.join("segmentation.pgm"))?;
        self.appearance.write_pgm(&dir.join("appearance.pgm"))?;
        self.traversable.write_pgm(&dir.join("traversable.pgm"))?;
        self.density.write_text(&dir.join("density.grid"))?;
        let pop: String = self
            .population_prob
            .iter()
            .map(|p| format!("{p}\n"))
            .collect();
        let pop_path = dir.join("population.txt");
        fs::write(&pop_path, pop).map_err(|e| Error::io(&pop_path, e))?;
        let cfg = SceneConfig {
            scene_id: self.scene_id.clone(),
            fps: self.fps,
            cell_size: self.segmentation.cell_size(),
            origin: self.segmentation.origin(),
            scale: 1.0,
            segmentation: Some("segmentation.pgm".into()),
            appearance: Some("appearance.pgm".into()),
            density: Some("density.grid".into()),
            traversable: Some("traversable.pgm".into()),
            population: Some("population.txt".into()),
        };
        cfg.write(&dir.join("scene.cfg"))
    }

    pub fn load(config_path: &Path) -> Result<SceneLayout> {
        let cfg = SceneConfig::parse(config_path)?;
        let base = config_path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |rel: &Option<PathBuf>, key: &str| -> Result<PathBuf> {
            rel.as_ref()
                .map(|p| base.join(p))
                .ok_or_else(|| Error::Config(format!("scene config is missing `{key}`")))
        };
        let segmentation =
            GridRaster::read_pgm(&resolve(&cfg.segmentation, "segmentation")?, cfg.cell_size, cfg.origin)?;
        let appearance =
            GridRaster::read_pgm(&resolve(&cfg.appearance, "appearance")?, cfg.cell_size, cfg.origin)?;
        let traversable =
            GridRaster::read_pgm(&resolve(&cfg.traversable, "traversable")?, cfg.cell_size, cfg.origin)?;
        let density = GridRaster::read_text(&resolve(&cfg.density, "density")?)?;
        let pop_path = resolve(&cfg.population, "population")?;
        let pop_text = fs::read_to_string(&pop_path).map_err(|e| Error::io(&pop_path, e))?;
        let population_prob = pop_text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(&pop_path, i + 1, "bad probability"))
            })
            .collect::<Result<Vec<f64>>>()?;
        let layout = SceneLayout {
            scene_id: cfg.scene_id,
            fps: cfg.fps,
            segmentation,
            appearance,
            density,
            traversable,
            population_prob,
        };
        layout.validate()?;
        Ok(layout)
    }
}

/// Marks the cells holding each agent's first and last observed position.
pub fn derive_appearance_map(agents: &[Agent], grid_spec: &GridRaster) -> Result<GridRaster> {
    let mut out = grid_spec.zeros_like();
    for a in agents {
        for p in [a.start(), a.end()] {
            let (cx, cy) = cell_checked(&out, a, p)?;
            out.set(cx, cy, 1.0);
        }
    }
    Ok(out)
}

/// Counts per-cell visits across all frames, log-compresses, and
/// normalizes so the busiest cell reads 1.
pub fn derive_density_map(agents: &[Agent], grid_spec: &GridRaster) -> Result<GridRaster> {
    let mut counts = grid_spec.zeros_like();
    for a in agents {
        for &p in &a.positions {
            let (cx, cy) = cell_checked(&counts, a, p)?;
            counts.set(cx, cy, counts.get(cx, cy) + 1.0);
        }
    }
    let mut max_log: f64 = 0.0;
    for &c in counts.values() {
        max_log = max_log.max((1.0 + c).ln());
    }
    let mut out = grid_spec.zeros_like();
    if max_log > 0.0 {
        for cy in 0..out.height_cells() {
            for cx in 0..out.width_cells() {
                out.set(cx, cy, (1.0 + counts.get(cx, cy)).ln() / max_log);
            }
        }
    }
    Ok(out)
}

/// Normalized histogram of concurrent agent counts over every frame.
pub fn derive_population_prob(scenario: &Scenario, k: usize) -> Result<Vec<f64>> {
    let observed_max = scenario.max_concurrent();
    if k <= observed_max {
        return Err(Error::Invalid(format!(
            "population support {k} must exceed the observed maximum count {observed_max}"
        )));
    }
    if scenario.total_frames == 0 {
        return Err(Error::Invalid("scenario has no frames".into()));
    }
    let mut hist = vec![0.0; k];
    for frame in 0..scenario.total_frames {
        hist[scenario.count_alive(frame)] += 1.0;
    }
    let total = scenario.total_frames as f64;
    for h in &mut hist {
        *h /= total;
    }
    Ok(hist)
}

/// Observed max concurrent count plus 25% headroom, rounded up.
pub fn default_population_support(scenario: &Scenario) -> usize {
    let max = scenario.max_concurrent();
    (((max as f64) * 1.25).ceil() as usize).max(max + 1)
}

/// Binary walkability: building, structure, and bush cells are blocked.
pub fn derive_traversable_map(segmentation: &GridRaster) -> Result<GridRaster> {
    let mut out = segmentation.zeros_like();
    for cy in 0..out.height_cells() {
        for cx in 0..out.width_cells() {
            let v = segmentation.get(cx, cy);
            if v.fract() != 0.0 {
                return Err(Error::Invalid(format!("segmentation class {v} is not an integer")));
            }
            let class = SegClass::from_index(v as usize)
                .ok_or_else(|| Error::Invalid(format!("segmentation class {v} out of range")))?;
            out.set(cx, cy, if class.traversable() { 1.0 } else { 0.0 });
        }
    }
    Ok(out)
}

fn cell_checked(raster: &GridRaster, agent: &Agent, p: Vec2) -> Result<(usize, usize)> {
    raster.cell_of(p).ok_or(Error::OutOfBounds {
        agent: agent.id,
        x: p.x,
        y: p.y,
    })
}

/// Line-oriented `key=value` description of a scene on disk. Raster paths
/// are relative to the config file's directory.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub scene_id: String,
    pub fps: f64,
    pub cell_size: f64,
    pub origin: Vec2,
    /// Meters per source-coordinate unit for trajectory ingestion.
    pub scale: f64,
    pub segmentation: Option<PathBuf>,
    pub appearance: Option<PathBuf>,
    pub density: Option<PathBuf>,
    pub traversable: Option<PathBuf>,
    pub population: Option<PathBuf>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            scene_id: "scene".into(),
            fps: 5.0,
            cell_size: 0.5,
            origin: Vec2::ZERO,
            scale: 1.0,
            segmentation: None,
            appearance: None,
            density: None,
            traversable: None,
            population: None,
        }
    }
}

impl SceneConfig {
    pub fn parse(path: &Path) -> Result<SceneConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = SceneConfig::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| Error::parse(path, idx + 1, format!("bad {what} `{value}`"));
            match key {
                "scene" => cfg.scene_id = value.to_string(),
                "fps" => cfg.fps = value.parse().map_err(|_| bad("fps"))?,
                "cell_size" => cfg.cell_size = value.parse().map_err(|_| bad("cell_size"))?,
                "origin_x" => cfg.origin.x = value.parse().map_err(|_| bad("origin_x"))?,
                "origin_y" => cfg.origin.y = value.parse().map_err(|_| bad("origin_y"))?,
                "scale" => cfg.scale = value.parse().map_err(|_| bad("scale"))?,
                "segmentation" => cfg.segmentation = Some(value.into()),
                "appearance" => cfg.appearance = Some(value.into()),
                "density" => cfg.density = Some(value.into()),
                "traversable" => cfg.traversable = Some(value.into()),
                "population" => cfg.population = Some(value.into()),
                _ => return Err(Error::parse(path, idx + 1, format!("unknown key `{key}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str(&format!("scene={}\n", self.scene_id));
        out.push_str(&format!("fps={}\n", self.fps));
        out.push_str(&format!("cell_size={}\n", self.cell_size));
        out.push_str(&format!("origin_x={}\n", self.origin.x));
        out.push_str(&format!("origin_y={}\n", self.origin.y));
        out.push_str(&format!("scale={}\n", self.scale));
        for (key, p) in [
            ("segmentation", &self.segmentation),
            ("appearance", &self.appearance),
            ("density", &self.density),
            ("traversable", &self.traversable),
            ("population", &self.population),
        ] {
            if let Some(p) = p {
                out.push_str(&format!("{key}={}\n", p.display()));
            }
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::AgentKind;

    fn spec_raster() -> GridRaster {
        GridRaster::filled(10, 10, 0.5, Vec2::ZERO, 0.0).unwrap()
    }

    fn agent(id: u64, positions: Vec<Vec2>) -> Agent {
        Agent {
            id,
            kind: AgentKind::Pedestrian,
            spawn_frame: 0,
            positions,
        }
    }

    #[test]
    fn appearance_marks_first_and_last_cells() {
        let spec = spec_raster();
        // start inside cell (3,4), end inside cell (7,1)
        let a = agent(
            0,
            vec![Vec2::new(1.75, 2.25), Vec2::new(2.6, 1.1), Vec2::new(3.75, 0.75)],
        );
        let m = derive_appearance_map(&[a], &spec).unwrap();
        let mut expect = spec.zeros_like();
        expect.set(3, 4, 1.0);
        expect.set(7, 1, 1.0);
        assert_eq!(m, expect);
    }

    #[test]
    fn appearance_empty_input_is_all_zero() {
        let m = derive_appearance_map(&[], &spec_raster()).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn appearance_rejects_out_of_bounds_agent() {
        let a = agent(3, vec![Vec2::new(100.0, 0.0)]);
        let err = derive_appearance_map(&[a], &spec_raster()).unwrap_err();
        assert!(err.to_string().contains("agent 3"));
    }

    #[test]
    fn density_static_agent_saturates_its_cell() {
        let a = agent(0, vec![Vec2::new(1.25, 1.25); 10]);
        let m = derive_density_map(&[a], &spec_raster()).unwrap();
        assert_eq!(m.get(2, 2), 1.0);
        let nonzero = m.values().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn density_log_ratio_on_two_cells() {
        // 9 visits in one cell and 99 in another: log1p gives log(10) and
        // log(100), so after normalization the values are 0.5 and 1.
        let mut positions = vec![Vec2::new(0.25, 0.25); 9];
        positions.extend(vec![Vec2::new(4.25, 4.25); 99]);
        let a = agent(0, positions);
        let m = derive_density_map(&[a], &spec_raster()).unwrap();
        assert!((m.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((m.get(8, 8) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_no_agents_all_zero() {
        let m = derive_density_map(&[], &spec_raster()).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    fn constant_count_scenario() -> Scenario {
        Scenario {
            fps: 5.0,
            total_frames: 20,
            scene_id: "s".into(),
            agents: vec![
                agent(0, vec![Vec2::ZERO; 20]),
                agent(1, vec![Vec2::new(1.0, 1.0); 20]),
            ],
        }
    }

    #[test]
    fn population_one_hot_for_constant_count() {
        let p = derive_population_prob(&constant_count_scenario(), 5).unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(p[2], 1.0);
        assert_eq!(p.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn population_half_half_split() {
        // 10 frames with 1 agent, 10 frames with 3 agents
        let mut s = Scenario {
            fps: 5.0,
            total_frames: 20,
            scene_id: "s".into(),
            agents: vec![
                agent(0, vec![Vec2::ZERO; 20]),
                Agent {
                    id: 1,
                    kind: AgentKind::Pedestrian,
                    spawn_frame: 10,
                    positions: vec![Vec2::new(1.0, 0.0); 10],
                },
                Agent {
                    id: 2,
                    kind: AgentKind::Pedestrian,
                    spawn_frame: 10,
                    positions: vec![Vec2::new(2.0, 0.0); 10],
                },
            ],
        };
        s.normalize();
        let p = derive_population_prob(&s, 6).unwrap();
        assert!((p[1] - 0.5).abs() < 1e-12);
        assert!((p[3] - 0.5).abs() < 1e-12);
        assert_eq!(p[0] + p[2] + p[4] + p[5], 0.0);
    }

    #[test]
    fn population_rejects_small_support() {
        assert!(derive_population_prob(&constant_count_scenario(), 2).is_err());
        assert!(derive_population_prob(&constant_count_scenario(), 3).is_ok());
    }

    #[test]
    fn default_support_exceeds_observed_max() {
        assert_eq!(default_population_support(&constant_count_scenario()), 3);
    }

    #[test]
    fn traversable_classes() {
        let all = |class: f64| {
            let seg = GridRaster::filled(4, 4, 0.5, Vec2::ZERO, class).unwrap();
            derive_traversable_map(&seg).unwrap()
        };
        assert!(all(SegClass::Sidewalk as usize as f64)
            .values()
            .iter()
            .all(|&v| v == 1.0));
        assert!(all(SegClass::Building as usize as f64)
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let seg = GridRaster::filled(2, 2, 0.5, Vec2::ZERO, 9.0).unwrap();
        assert!(derive_traversable_map(&seg).is_err());
    }

    #[test]
    fn derivation_is_idempotent() {
        let s = constant_count_scenario();
        let seg = GridRaster::filled(10, 10, 0.5, Vec2::ZERO, SegClass::Grass as usize as f64)
            .unwrap();
        let a = SceneLayout::derive("s", seg.clone(), &s, None).unwrap();
        let b = SceneLayout::derive("s", seg, &s, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn save_load_round_trip() {
        let s = constant_count_scenario();
        let seg = GridRaster::filled(10, 10, 0.5, Vec2::ZERO, SegClass::Road as usize as f64)
            .unwrap();
        let layout = SceneLayout::derive("roundtrip", seg, &s, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        layout.save(dir.path()).unwrap();
        let loaded = SceneLayout::load(&dir.path().join("scene.cfg")).unwrap();
        assert_eq!(layout.scene_id, loaded.scene_id);
        assert_eq!(layout.segmentation, loaded.segmentation);
        assert_eq!(layout.appearance, loaded.appearance);
        assert_eq!(layout.traversable, loaded.traversable);
        assert_eq!(layout.density, loaded.density);
        assert_eq!(layout.population_prob, loaded.population_prob);
    }
}
