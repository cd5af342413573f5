//! Window-level crowd emission: decides how many agents enter each
//! scheduling window and samples their parameters (kind, pace, spawn
//! offset, start, destination), either with a conditional denoising
//! model over agent sets or a plain appearance-histogram draw.

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::grid::GridRaster;
use crate::layout::{SceneLayout, SEG_CLASS_COUNT};
use crate::nn::layers::{Activation, Linear, Mlp, SetBlock};
use crate::nn::linalg::Mat;
use crate::nn::tape::{ParamStore, Tape};
use crate::nn::{checkpoint, AdamW};
use crate::trajectory::{window_scenario, AgentKind, Scenario, AGENT_KINDS};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Width of one encoded agent-parameter vector: kind slots, pace, spawn
/// offset, start x/y, destination x/y.
pub const PARAM_DIM: usize = AGENT_KINDS.len() + 6;
const KIND_SLOTS: usize = AGENT_KINDS.len();

/// Coarse conditioning grid: every scene is summarized as this many
/// patch tokens per side regardless of raster resolution.
pub const COND_GRID: usize = 16;
/// Channels per patch token: segmentation class fractions, appearance,
/// density, occupancy, and a 4-wide positional encoding.
pub const CTX_DIM: usize = SEG_CLASS_COUNT + 3 + 4;

const TIME_EMB_DIM: usize = 8;
const TOKEN_DIM: usize = 64;
const N_BLOCKS: usize = 2;
const N_HEADS: usize = 4;
const FF_DIM: usize = 128;
const HEAD_WIDTH: usize = 128;

// ---------------------------------------------------------------------------
// noise schedule

/// Variance schedule for the forward noising process.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule between explicit endpoints.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
        if steps == 0 {
            return Err(Error::Invalid("noise schedule needs >= 1 step".into()));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Invalid(format!(
                "invalid beta range [{beta_min}, {beta_max}]"
            )));
        }
        let mut betas = Vec::with_capacity(steps);
        for i in 0..steps {
            let f = if steps == 1 {
                0.0
            } else {
                i as f64 / (steps - 1) as f64
            };
            betas.push(beta_min + f * (beta_max - beta_min));
        }
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// Default schedule for a given step count. The total noise mass is
    /// held constant (sum of betas ~= 10, ratio max/min = 200) so the
    /// terminal marginal is indistinguishable from a unit Gaussian no
    /// matter how many steps the chain uses; the reverse sampler starts
    /// from pure noise, which requires that property.
    pub fn default_linear(steps: usize) -> Result<NoiseSchedule> {
        let m = steps.max(1) as f64;
        let beta_min = (0.1 / m).min(0.998);
        let beta_max = (20.0 / m).min(0.999).max(beta_min);
        NoiseSchedule::linear(steps, beta_min, beta_max)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// beta_m for 1-based step index m.
    pub fn beta(&self, m: usize) -> f64 {
        self.betas[m - 1]
    }

    /// Cumulative product of (1 - beta) through step m; index 0 gives 1.
    pub fn alpha_bar(&self, m: usize) -> f64 {
        if m == 0 {
            1.0
        } else {
            self.alpha_bars[m - 1]
        }
    }
}

// ---------------------------------------------------------------------------
// parameter encoding

/// Maps agent parameters to and from the model's [-1, 1] working space.
/// Positions are normalized against the scene extent; pace against the
/// observed range in the training data.
#[derive(Debug, Clone)]
pub struct ParamCodec {
    pub origin: Vec2,
    pub world: Vec2,
    pub nu_min: f64,
    pub nu_max: f64,
}

/// Decoded agent stub produced by an emitter: everything needed to
/// schedule the agent, nothing about its later motion.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedAgent {
    pub kind: AgentKind,
    pub pace: f64,
    pub spawn_frame: usize,
    pub start: Vec2,
    pub dest: Vec2,
}

impl ParamCodec {
    pub fn new(origin: Vec2, world: Vec2, nu_min: f64, nu_max: f64) -> ParamCodec {
        ParamCodec {
            origin,
            world,
            nu_min,
            nu_max,
        }
    }

    /// Scene extent from a raster, pace range from observed mean speeds.
    pub fn from_data(template: &GridRaster, paces: &[f64]) -> ParamCodec {
        let finite: Vec<f64> = paces.iter().copied().filter(|p| p.is_finite()).collect();
        let (mut lo, mut hi) = finite
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &p| {
                (l.min(p), h.max(p))
            });
        if !lo.is_finite() || !hi.is_finite() {
            lo = 0.5;
            hi = 2.0;
        }
        if hi - lo < 1e-9 {
            // widen a degenerate range so the linear map stays invertible
            lo = (lo - 0.25).max(0.05);
            hi += 0.25;
        }
        ParamCodec::new(
            template.origin(),
            Vec2::new(template.world_width(), template.world_height()),
            lo.max(0.01),
            hi,
        )
    }

    /// Encode one agent into a PARAM_DIM row. `t_s` is the spawn offset
    /// as a fraction of the window, in [0, 1).
    pub fn encode(&self, kind: AgentKind, pace: f64, t_s: f64, start: Vec2, dest: Vec2) -> Vec<f64> {
        let mut v = vec![-1.0; PARAM_DIM];
        v[kind.index()] = 1.0;
        v[KIND_SLOTS] = self.encode_pace(pace);
        v[KIND_SLOTS + 1] = 2.0 * t_s.clamp(0.0, 1.0) - 1.0;
        let s = self.encode_pos(start);
        let d = self.encode_pos(dest);
        v[KIND_SLOTS + 2] = s.x;
        v[KIND_SLOTS + 3] = s.y;
        v[KIND_SLOTS + 4] = d.x;
        v[KIND_SLOTS + 5] = d.y;
        v
    }

    /// Decode a PARAM_DIM row back into agent parameters, clamping to
    /// valid ranges.
    pub fn decode(&self, v: &[f64]) -> (AgentKind, f64, f64, Vec2, Vec2) {
        let kind_idx = (0..KIND_SLOTS)
            .max_by(|&a, &b| v[a].total_cmp(&v[b]))
            .unwrap();
        let kind = AgentKind::from_index(kind_idx).unwrap();
        let pace = self.decode_pace(v[KIND_SLOTS]);
        let t_s = ((v[KIND_SLOTS + 1] + 1.0) / 2.0).clamp(0.0, 1.0 - 1e-9);
        let start = self.decode_pos(v[KIND_SLOTS + 2], v[KIND_SLOTS + 3]);
        let dest = self.decode_pos(v[KIND_SLOTS + 4], v[KIND_SLOTS + 5]);
        (kind, pace, t_s, start, dest)
    }

    fn encode_pace(&self, pace: f64) -> f64 {
        let f = (pace - self.nu_min) / (self.nu_max - self.nu_min);
        2.0 * f.clamp(0.0, 1.0) - 1.0
    }

    fn decode_pace(&self, v: f64) -> f64 {
        let f = ((v + 1.0) / 2.0).clamp(0.0, 1.0);
        self.nu_min + f * (self.nu_max - self.nu_min)
    }

    fn encode_pos(&self, p: Vec2) -> Vec2 {
        Vec2::new(
            2.0 * ((p.x - self.origin.x) / self.world.x).clamp(0.0, 1.0) - 1.0,
            2.0 * ((p.y - self.origin.y) / self.world.y).clamp(0.0, 1.0) - 1.0,
        )
    }

    fn decode_pos(&self, x: f64, y: f64) -> Vec2 {
        let fx = ((x + 1.0) / 2.0).clamp(0.0, 1.0 - 1e-12);
        let fy = ((y + 1.0) / 2.0).clamp(0.0, 1.0 - 1e-12);
        Vec2::new(
            self.origin.x + fx * self.world.x,
            self.origin.y + fy * self.world.y,
        )
    }
}

// ---------------------------------------------------------------------------
// condition encoding

/// Per-cell live-agent counts on the same geometry as `template`.
/// Positions outside the raster are ignored.
pub fn occupancy_grid(template: &GridRaster, positions: &[Vec2]) -> GridRaster {
    let mut grid = template.zeros_like();
    for &p in positions {
        if let Some((cx, cy)) = grid.cell_of(p) {
            let v = grid.get(cx, cy);
            grid.set(cx, cy, v + 1.0);
        }
    }
    grid
}

/// Summarize the scene rasters as COND_GRID x COND_GRID context tokens.
/// Each token averages its patch's segmentation class mix, appearance,
/// density, and squashed occupancy, plus a sinusoidal position code.
pub fn encode_condition(layout: &SceneLayout, occupancy: &GridRaster) -> Mat {
    let w = layout.segmentation.width_cells();
    let h = layout.segmentation.height_cells();
    let mut tokens = Mat::zeros(COND_GRID * COND_GRID, CTX_DIM);
    for ty in 0..COND_GRID {
        for tx in 0..COND_GRID {
            let x0 = tx * w / COND_GRID;
            let x1 = ((tx + 1) * w / COND_GRID).max(x0 + 1).min(w.max(x0 + 1));
            let y0 = ty * h / COND_GRID;
            let y1 = ((ty + 1) * h / COND_GRID).max(y0 + 1).min(h.max(y0 + 1));
            let row = tokens.row_mut(ty * COND_GRID + tx);
            let mut n = 0.0;
            for cy in y0..y1.min(h) {
                for cx in x0..x1.min(w) {
                    let class = layout.segmentation.get(cx, cy) as usize;
                    if class < SEG_CLASS_COUNT {
                        row[class] += 1.0;
                    }
                    row[SEG_CLASS_COUNT] += layout.appearance.get(cx, cy);
                    row[SEG_CLASS_COUNT + 1] += layout.density.get(cx, cy);
                    let occ = occupancy.get(cx, cy);
                    row[SEG_CLASS_COUNT + 2] += occ / (1.0 + occ);
                    n += 1.0;
                }
            }
            if n > 0.0 {
                for v in row.iter_mut().take(SEG_CLASS_COUNT + 3) {
                    *v /= n;
                }
            }
            let u = (tx as f64 + 0.5) / COND_GRID as f64;
            let v = (ty as f64 + 0.5) / COND_GRID as f64;
            row[SEG_CLASS_COUNT + 3] = (std::f64::consts::PI * u).sin();
            row[SEG_CLASS_COUNT + 4] = (std::f64::consts::PI * u).cos();
            row[SEG_CLASS_COUNT + 5] = (std::f64::consts::PI * v).sin();
            row[SEG_CLASS_COUNT + 6] = (std::f64::consts::PI * v).cos();
        }
    }
    tokens
}

fn time_embedding(m: usize) -> [f64; TIME_EMB_DIM] {
    let mut e = [0.0; TIME_EMB_DIM];
    for i in 0..TIME_EMB_DIM / 2 {
        let freq = (10000.0f64).powf(-(i as f64) / (TIME_EMB_DIM / 2) as f64);
        e[2 * i] = (m as f64 * freq).sin();
        e[2 * i + 1] = (m as f64 * freq).cos();
    }
    e
}

// ---------------------------------------------------------------------------
// model

/// Conditional set-denoiser over agent-parameter tokens. All agents of a
/// window are denoised jointly; scene context enters via cross-attention.
pub struct EmitterModel {
    pub store: ParamStore,
    pub schedule: NoiseSchedule,
    pub codec: ParamCodec,
    in_proj: Linear,
    blocks: Vec<SetBlock>,
    head: Mlp,
}

/// Pre-projected context keys/values, one entry per attention block.
/// Valid only for the parameter version it was built against.
pub struct EmitterContext {
    blocks: Vec<crate::nn::layers::BlockContext>,
}

impl EmitterModel {
    pub fn new(codec: ParamCodec, steps: usize, seed: u64) -> Result<EmitterModel> {
        let schedule = NoiseSchedule::default_linear(steps)?;
        let mut store = ParamStore::new();
        let mut init = ParamStore::init_rng(seed);
        let in_proj = Linear::new(
            &mut store,
            &mut init,
            "emit.in",
            PARAM_DIM + TIME_EMB_DIM,
            TOKEN_DIM,
        );
        let blocks = (0..N_BLOCKS)
            .map(|i| {
                SetBlock::new(
                    &mut store,
                    &mut init,
                    &format!("emit.blk{i}"),
                    TOKEN_DIM,
                    CTX_DIM,
                    N_HEADS,
                    FF_DIM,
                )
            })
            .collect();
        let head = Mlp::new(
            &mut store,
            &mut init,
            "emit.head",
            &[TOKEN_DIM, HEAD_WIDTH, PARAM_DIM],
            Activation::Gelu,
        );
        Ok(EmitterModel {
            store,
            schedule,
            codec,
            in_proj,
            blocks,
            head,
        })
    }

    /// Project context tokens once; reusable across every step of a
    /// reverse chain over the same window.
    pub fn project_context(&self, ctx_tokens: &Mat) -> EmitterContext {
        EmitterContext {
            blocks: self
                .blocks
                .iter()
                .map(|b| b.project_context(&self.store, ctx_tokens))
                .collect(),
        }
    }

    fn tokens_with_time(&self, alpha: &Mat, m: usize) -> Mat {
        let emb = time_embedding(m);
        let mut data = Vec::with_capacity(alpha.rows * (PARAM_DIM + TIME_EMB_DIM));
        for r in 0..alpha.rows {
            data.extend_from_slice(alpha.row(r));
            data.extend_from_slice(&emb);
        }
        Mat::from_vec(alpha.rows, PARAM_DIM + TIME_EMB_DIM, data)
    }

    /// Predicted noise for every agent token (inference path).
    pub fn predict_noise(&self, alpha: &Mat, m: usize, ctx: &EmitterContext) -> Mat {
        let mut x = self.in_proj.infer(&self.store, &self.tokens_with_time(alpha, m));
        for (block, bc) in self.blocks.iter().zip(&ctx.blocks) {
            x = block.infer_cached(&self.store, &x, Some(bc));
        }
        self.head.infer(&self.store, &x)
    }

    /// Training-path forward producing a tape node for the predicted
    /// noise.
    fn predict_noise_taped(
        &self,
        tape: &mut Tape,
        alpha: &Mat,
        m: usize,
        ctx_tokens: &Mat,
    ) -> Result<crate::nn::NodeId> {
        let input = tape.constant(self.tokens_with_time(alpha, m));
        let ctx = tape.constant(ctx_tokens.clone());
        let mut x = self.in_proj.forward(tape, &self.store, input)?;
        for block in &self.blocks {
            x = block.forward(tape, &self.store, x, Some(ctx))?;
        }
        self.head.forward(tape, &self.store, x)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let meta = vec![
            ("model".into(), "emitter".into()),
            ("steps".into(), self.schedule.len().to_string()),
            ("origin_x".into(), self.codec.origin.x.to_string()),
            ("origin_y".into(), self.codec.origin.y.to_string()),
            ("world_x".into(), self.codec.world.x.to_string()),
            ("world_y".into(), self.codec.world.y.to_string()),
            ("nu_min".into(), self.codec.nu_min.to_string()),
            ("nu_max".into(), self.codec.nu_max.to_string()),
        ];
        checkpoint::save_params(path, &meta, &self.store)
    }

    pub fn load(path: &std::path::Path) -> Result<EmitterModel> {
        let (meta, values) = checkpoint::load_params(path)?;
        if checkpoint::meta_value(&meta, "model") != Some("emitter") {
            return Err(Error::parse(path, 0, "not an emitter checkpoint"));
        }
        let steps: usize = checkpoint::meta_parse(&meta, "steps", path)?;
        let codec = ParamCodec::new(
            Vec2::new(
                checkpoint::meta_parse(&meta, "origin_x", path)?,
                checkpoint::meta_parse(&meta, "origin_y", path)?,
            ),
            Vec2::new(
                checkpoint::meta_parse(&meta, "world_x", path)?,
                checkpoint::meta_parse(&meta, "world_y", path)?,
            ),
            checkpoint::meta_parse(&meta, "nu_min", path)?,
            checkpoint::meta_parse(&meta, "nu_max", path)?,
        );
        let mut model = EmitterModel::new(codec, steps, 0)?;
        model.store.load_values(&values)?;
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// diffusion operations

/// Draw the window's population target from the categorical `p` and
/// return how many new agents that implies given `n_prev` already
/// present. The difference is clamped at zero: an over-full scene emits
/// nobody rather than removing agents.
pub fn sample_population_count(p: &[f64], n_prev: usize, rng: &mut ChaCha12Rng) -> Result<usize> {
    if p.is_empty() {
        return Err(Error::Invalid("empty population distribution".into()));
    }
    let sum: f64 = p.iter().sum();
    if !(p.iter().all(|&v| v.is_finite() && v >= 0.0) && (sum - 1.0).abs() <= 1e-6) {
        return Err(Error::Invalid(
            "population distribution must be nonnegative and sum to 1".into(),
        ));
    }
    let u: f64 = rng.gen::<f64>() * sum;
    let mut acc = 0.0;
    let mut n_p = p.len() - 1;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            n_p = i;
            break;
        }
    }
    Ok(n_p.saturating_sub(n_prev))
}

/// Closed-form forward noising: returns the noised rows and the exact
/// noise that was injected (the training target).
pub fn forward_diffuse(
    schedule: &NoiseSchedule,
    alpha0: &Mat,
    m: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(Mat, Mat)> {
    if m == 0 || m > schedule.len() {
        return Err(Error::Invalid(format!(
            "diffusion step {m} outside 1..={}",
            schedule.len()
        )));
    }
    let a_bar = schedule.alpha_bar(m);
    let (sa, sn) = (a_bar.sqrt(), (1.0 - a_bar).sqrt());
    let noise = Mat::from_vec(
        alpha0.rows,
        alpha0.cols,
        (0..alpha0.rows * alpha0.cols)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    );
    let mut noised = alpha0.clone();
    for (x, &e) in noised.data.iter_mut().zip(&noise.data) {
        *x = sa * *x + sn * e;
    }
    Ok((noised, noise))
}

/// One deterministic reverse-update (no stochastic term): reconstructs
/// the clean estimate from the predicted noise and re-noises it to the
/// previous step's marginal.
pub fn ddim_update(schedule: &NoiseSchedule, alpha: &Mat, eps_hat: &Mat, m: usize) -> Mat {
    let a_bar = schedule.alpha_bar(m);
    let a_prev = schedule.alpha_bar(m - 1);
    let (sa, sn) = (a_bar.sqrt(), (1.0 - a_bar).sqrt());
    let (pa, pn) = (a_prev.sqrt(), (1.0 - a_prev).sqrt());
    let mut out = alpha.clone();
    for (x, &e) in out.data.iter_mut().zip(&eps_hat.data) {
        let x0 = (*x - sn * e) / sa;
        *x = pa * x0 + pn * e;
    }
    out
}

/// One reverse step of the model's denoising chain over all agent
/// tokens jointly. Zero agents is a no-op.
pub fn denoise_step(
    model: &EmitterModel,
    alpha: &Mat,
    m: usize,
    ctx: &EmitterContext,
) -> Result<Mat> {
    if m == 0 || m > model.schedule.len() {
        return Err(Error::Invalid(format!(
            "diffusion step {m} outside 1..={}",
            model.schedule.len()
        )));
    }
    if alpha.rows == 0 {
        return Ok(alpha.clone());
    }
    let eps_hat = model.predict_noise(alpha, m, ctx);
    Ok(ddim_update(&model.schedule, alpha, &eps_hat, m))
}

/// Nearest traversable point within `max_dist` meters: the point itself
/// if its cell is traversable, otherwise the closest traversable cell
/// center.
pub fn project_to_traversable(traversable: &GridRaster, p: Vec2, max_dist: f64) -> Option<Vec2> {
    if let Some((cx, cy)) = traversable.cell_of(p) {
        if traversable.get(cx, cy) == 1.0 {
            return Some(p);
        }
    }
    // Non-finite or far-off-map points can never project; bail before
    // the cell index math.
    let gmin = traversable.origin();
    let gmax = traversable.world_max();
    if !(p.x.is_finite() && p.y.is_finite())
        || p.x < gmin.x - max_dist
        || p.x > gmax.x + max_dist
        || p.y < gmin.y - max_dist
        || p.y > gmax.y + max_dist
    {
        return None;
    }
    let cell = traversable.cell_size();
    let r = (max_dist / cell).ceil() as i64 + 1;
    let fx = ((p.x - traversable.origin().x) / cell).floor() as i64;
    let fy = ((p.y - traversable.origin().y) / cell).floor() as i64;
    let mut best: Option<(f64, usize, usize)> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let (cx, cy) = (fx + dx, fy + dy);
            if cx < 0
                || cy < 0
                || cx >= traversable.width_cells() as i64
                || cy >= traversable.height_cells() as i64
            {
                continue;
            }
            let (cx, cy) = (cx as usize, cy as usize);
            if traversable.get(cx, cy) != 1.0 {
                continue;
            }
            let c = traversable.cell_center(cx, cy);
            let d2 = (c - p).norm_sq();
            if d2 <= max_dist * max_dist
                && best.map_or(true, |(bd, by, bx)| (d2, cy, cx) < (bd, by, bx))
            {
                best = Some((d2, cy, cx));
            }
        }
    }
    best.map(|(_, cy, cx)| traversable.cell_center(cx, cy))
}

/// Result of emitting one window's agents.
#[derive(Debug, Clone)]
pub struct EmitOutcome {
    pub agents: Vec<EmittedAgent>,
    /// Agents discarded because no traversable cell lay within reach of
    /// their decoded start or destination.
    pub dropped: usize,
}

const PROJECT_RADIUS_M: f64 = 2.0;

fn decode_and_project(
    codec: &ParamCodec,
    traversable: &GridRaster,
    row: &[f64],
    window_start: usize,
    t_w: usize,
) -> Option<EmittedAgent> {
    let (kind, pace, t_s, start, dest) = codec.decode(row);
    let start = project_to_traversable(traversable, start, PROJECT_RADIUS_M)?;
    let dest = project_to_traversable(traversable, dest, PROJECT_RADIUS_M)?;
    let offset = ((t_s * t_w as f64).round() as usize).min(t_w.saturating_sub(1));
    Some(EmittedAgent {
        kind,
        pace,
        spawn_frame: window_start + offset,
        start,
        dest,
    })
}

/// Run the full reverse chain from Gaussian noise and decode `count`
/// agents for the window starting at `window_start` (length `t_w`
/// frames). Undecodable agents are dropped and counted.
pub fn emit_agents(
    model: &EmitterModel,
    layout: &SceneLayout,
    occupancy: &GridRaster,
    count: usize,
    window_start: usize,
    t_w: usize,
    rng: &mut ChaCha12Rng,
) -> Result<EmitOutcome> {
    if t_w == 0 {
        return Err(Error::Invalid("window length must be >= 1".into()));
    }
    if count == 0 {
        return Ok(EmitOutcome {
            agents: Vec::new(),
            dropped: 0,
        });
    }
    let ctx = model.project_context(&encode_condition(layout, occupancy));
    let mut alpha = Mat::from_vec(
        count,
        PARAM_DIM,
        (0..count * PARAM_DIM)
            .map(|_| rng.sample(StandardNormal))
            .collect(),
    );
    for m in (1..=model.schedule.len()).rev() {
        alpha = denoise_step(model, &alpha, m, &ctx)?;
    }
    let mut agents = Vec::with_capacity(count);
    let mut dropped = 0;
    for r in 0..alpha.rows {
        match decode_and_project(
            &model.codec,
            &layout.traversable,
            alpha.row(r),
            window_start,
            t_w,
        ) {
            Some(a) => agents.push(a),
            None => {
                dropped += 1;
                eprintln!(
                    "warning: dropped emitted agent with untraversable start/destination \
                     (window {window_start})"
                );
            }
        }
    }
    Ok(EmitOutcome { agents, dropped })
}

// ---------------------------------------------------------------------------
// training

#[derive(Debug, Clone)]
pub struct EmitterTrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Windows with more spawns than this are subsampled each epoch so
    /// token-set shapes stay bounded.
    pub max_window_agents: usize,
    pub diffusion_steps: usize,
}

impl Default for EmitterTrainOptions {
    fn default() -> Self {
        EmitterTrainOptions {
            epochs: 256,
            batch: 512,
            lr: 1e-4,
            max_window_agents: 32,
            diffusion_steps: 50,
        }
    }
}

struct TrainWindow {
    alpha0: Mat,
    ctx: Mat,
}

/// Per-window training examples: encoded parameters of each spawned
/// agent plus that window's context tokens.
fn build_training_windows(
    layout: &SceneLayout,
    scenario: &Scenario,
    t_w: usize,
    codec: &ParamCodec,
) -> Result<Vec<TrainWindow>> {
    let windows = window_scenario(scenario, t_w)?;
    let mut out = Vec::new();
    for w in &windows {
        if w.spawned.is_empty() {
            continue;
        }
        let mut rows = Vec::with_capacity(w.spawned.len() * PARAM_DIM);
        for &ai in &w.spawned {
            let a = &scenario.agents[ai];
            let t_s = (a.spawn_frame - w.start) as f64 / t_w as f64;
            rows.extend(codec.encode(
                a.kind,
                a.mean_speed(scenario.fps),
                t_s,
                a.start(),
                a.end(),
            ));
        }
        let live: Vec<Vec2> = w
            .alive_at_start
            .iter()
            .filter_map(|&ai| scenario.agents[ai].position_at(w.start))
            .collect();
        let occ = occupancy_grid(&layout.traversable, &live);
        out.push(TrainWindow {
            alpha0: Mat::from_vec(w.spawned.len(), PARAM_DIM, rows),
            ctx: encode_condition(layout, &occ),
        });
    }
    if out.is_empty() {
        return Err(Error::Invalid(
            "emitter training needs at least one window with a spawned agent".into(),
        ));
    }
    Ok(out)
}

fn subsample_rows(m: &Mat, keep: usize, rng: &mut ChaCha12Rng) -> Mat {
    if m.rows <= keep {
        return m.clone();
    }
    let idx = rand::seq::index::sample(rng, m.rows, keep);
    let mut data = Vec::with_capacity(keep * m.cols);
    for i in idx.iter() {
        data.extend_from_slice(m.row(i));
    }
    Mat::from_vec(keep, m.cols, data)
}

/// Train the denoiser with the noise-prediction objective. Returns the
/// model and the mean loss per epoch (empty when `epochs` is zero, in
/// which case the freshly initialized model is returned unchanged).
pub fn train_emitter(
    layout: &SceneLayout,
    scenario: &Scenario,
    t_w: usize,
    opts: &EmitterTrainOptions,
    rng: &mut ChaCha12Rng,
) -> Result<(EmitterModel, Vec<f64>)> {
    let paces: Vec<f64> = scenario
        .agents
        .iter()
        .map(|a| a.mean_speed(scenario.fps))
        .collect();
    let codec = ParamCodec::from_data(&layout.traversable, &paces);
    let windows = build_training_windows(layout, scenario, t_w, &codec)?;
    let mut model = EmitterModel::new(codec, opts.diffusion_steps, rng.gen())?;
    let mut optim = AdamW::new(&model.store, opts.lr);
    let mut log = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    for _epoch in 0..opts.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut epoch_windows = 0usize;
        let mut cursor = 0;
        while cursor < order.len() {
            // one optimizer step over up to `batch` agent examples
            let mut chunk = Vec::new();
            let mut agents_in_chunk = 0;
            while cursor < order.len() && (chunk.is_empty() || agents_in_chunk < opts.batch) {
                let w = &windows[order[cursor]];
                chunk.push(w);
                agents_in_chunk += w.alpha0.rows.min(opts.max_window_agents);
                cursor += 1;
            }
            model.store.zero_grads();
            let scale = 1.0 / chunk.len() as f64;
            for w in chunk {
                let alpha0 = subsample_rows(&w.alpha0, opts.max_window_agents, rng);
                let m = rng.gen_range(1..=model.schedule.len());
                let (noised, noise) = forward_diffuse(&model.schedule, &alpha0, m, rng)?;
                let mut tape = Tape::new(&model.store);
                let pred = model.predict_noise_taped(&mut tape, &noised, m, &w.ctx)?;
                let loss = tape.mse_loss(pred, noise);
                epoch_loss += tape.scalar(loss);
                epoch_windows += 1;
                let scaled = tape.scale(loss, scale);
                tape.backward(scaled, &mut model.store)?;
            }
            optim.step(&mut model.store)?;
        }
        log.push(epoch_loss / epoch_windows.max(1) as f64);
    }
    Ok((model, log))
}

// ---------------------------------------------------------------------------
// histogram emitter

/// Empirical pace and kind statistics of a training scenario, used by
/// the non-neural emitter.
#[derive(Debug, Clone)]
pub struct EmpiricalStats {
    pub kind_weights: [f64; KIND_SLOTS],
    pub paces: Vec<f64>,
}

impl EmpiricalStats {
    pub fn from_scenario(scenario: &Scenario) -> EmpiricalStats {
        let mut kind_weights = [0.0; KIND_SLOTS];
        let mut paces = Vec::with_capacity(scenario.agents.len());
        for a in &scenario.agents {
            kind_weights[a.kind.index()] += 1.0;
            let p = a.mean_speed(scenario.fps);
            if p.is_finite() && p > 0.0 {
                paces.push(p);
            }
        }
        EmpiricalStats {
            kind_weights,
            paces,
        }
    }
}

fn sample_weighted_cell(
    weights: &[(usize, usize, f64)],
    total: f64,
    rng: &mut ChaCha12Rng,
) -> (usize, usize) {
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for &(cx, cy, w) in weights {
        acc += w;
        if u < acc {
            return (cx, cy);
        }
    }
    let &(cx, cy, _) = weights.last().unwrap();
    (cx, cy)
}

/// Draw agents directly from the appearance histogram: starts and
/// destinations proportional to appearance mass (uniform over
/// traversable cells when the map is all zero), pace and kind from the
/// empirical distributions, spawn offset uniform in the window.
pub fn histogram_emit(
    layout: &SceneLayout,
    stats: &EmpiricalStats,
    count: usize,
    window_start: usize,
    t_w: usize,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<EmittedAgent>> {
    if t_w == 0 {
        return Err(Error::Invalid("window length must be >= 1".into()));
    }
    let appearance = &layout.appearance;
    let mut weights = Vec::new();
    let mut total = 0.0;
    for cy in 0..appearance.height_cells() {
        for cx in 0..appearance.width_cells() {
            let w = appearance.get(cx, cy);
            if w > 0.0 {
                weights.push((cx, cy, w));
                total += w;
            }
        }
    }
    if weights.is_empty() {
        for cy in 0..layout.traversable.height_cells() {
            for cx in 0..layout.traversable.width_cells() {
                if layout.traversable.get(cx, cy) == 1.0 {
                    weights.push((cx, cy, 1.0));
                    total += 1.0;
                }
            }
        }
    }
    if weights.is_empty() {
        return Err(Error::Invalid(
            "histogram emitter needs appearance mass or traversable cells".into(),
        ));
    }
    let kind_total: f64 = stats.kind_weights.iter().sum();
    let cell = appearance.cell_size();
    let mut agents = Vec::with_capacity(count);
    for _ in 0..count {
        let (sx, sy) = sample_weighted_cell(&weights, total, rng);
        let (dx, dy) = sample_weighted_cell(&weights, total, rng);
        // jitter strictly inside the chosen cell
        let jitter = |rng: &mut ChaCha12Rng| (rng.gen::<f64>() - 0.5) * 0.98 * cell;
        let start = appearance.cell_center(sx, sy) + Vec2::new(jitter(rng), jitter(rng));
        let dest = appearance.cell_center(dx, dy) + Vec2::new(jitter(rng), jitter(rng));
        let kind = if kind_total > 0.0 {
            let u = rng.gen::<f64>() * kind_total;
            let mut acc = 0.0;
            let mut k = KIND_SLOTS - 1;
            for (i, &w) in stats.kind_weights.iter().enumerate() {
                acc += w;
                if u < acc {
                    k = i;
                    break;
                }
            }
            AgentKind::from_index(k).unwrap()
        } else {
            AgentKind::from_index(rng.gen_range(0..KIND_SLOTS)).unwrap()
        };
        let pace = if stats.paces.is_empty() {
            1.0
        } else {
            stats.paces[rng.gen_range(0..stats.paces.len())]
        };
        let t_s: f64 = rng.gen::<f64>();
        let offset = ((t_s * t_w as f64).round() as usize).min(t_w - 1);
        agents.push(EmittedAgent {
            kind,
            pace,
            spawn_frame: window_start + offset,
            start,
            dest,
        });
    }
    Ok(agents)
}
