//! Per-modality query machines, the aggregator and the two task heads.

use crate::attention::{glorot, StackConfig};
use crate::data::{TaskMode, VideoRecord, KEYPOINT_DIM};
use crate::error::{Error, Result};
use crate::hub::{
    gather_memory, hub_forward, hub_forward_batched, token_means, BankLayout, HubParams, MemoryOptions, MemoryPlan,
    SelectionConfig,
};
use crate::rng::Rng;
use crate::tape::{ParamId, ParamStore, Tape, Var, Warning};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Vis,
    Key,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Vis => "vis",
            Modality::Key => "key",
        }
    }
}

/// Which actor features the HH stage of the key branch reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HhMemory {
    /// Both branches read visual actor features.
    Visual,
    /// Each branch reads its own modality.
    Matched,
}

/// Form of the key-modality input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeypointInput {
    /// Already a `D`-dim embedding.
    Embedded,
    /// 17 keypoints × (x, y, confidence), embedded by a learned MLP.
    Raw,
}

/// Component switches. All on is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationFlags {
    pub use_hierarchy: bool,
    pub use_hh: bool,
    pub use_hc: bool,
    pub use_temporal: bool,
    pub use_selection: bool,
    pub use_vis: bool,
    pub use_key: bool,
    pub use_consistency: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_hierarchy: true,
            use_hh: true,
            use_hc: true,
            use_temporal: true,
            use_selection: true,
            use_vis: true,
            use_key: true,
            use_consistency: true,
        }
    }
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if !self.use_vis && !self.use_key {
            return Err(Error::config("at least one modality must be active"));
        }
        if !self.use_hh && !self.use_hc {
            return Err(Error::config("at least one of use_hh and use_hc must be on"));
        }
        if !self.use_hierarchy && !(self.use_hh && self.use_hc) {
            return Err(Error::config(
                "use_hierarchy=false merges human and context memories and needs use_hh and use_hc",
            ));
        }
        if self.use_consistency && !(self.use_vis && self.use_key) {
            return Err(Error::config("use_consistency needs both modalities"));
        }
        Ok(())
    }

    pub fn modalities(&self) -> Vec<Modality> {
        let mut m = Vec::with_capacity(2);
        if self.use_vis {
            m.push(Modality::Vis);
        }
        if self.use_key {
            m.push(Modality::Key);
        }
        m
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    pub classes: usize,
    /// Aggregator hidden width.
    pub hidden: usize,
    pub stack: StackConfig,
    /// Number of HH→HC stages.
    pub depth: usize,
    pub share_channels: bool,
    pub selection: SelectionConfig,
    pub mode: TaskMode,
    pub flags: AblationFlags,
    pub hh_memory: HhMemory,
    pub keypoints: KeypointInput,
    pub keypoint_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 16,
            classes: 6,
            hidden: 32,
            stack: StackConfig::default(),
            depth: 1,
            share_channels: false,
            selection: SelectionConfig::default(),
            mode: TaskMode::Stal,
            flags: AblationFlags::default(),
            hh_memory: HhMemory::Visual,
            keypoints: KeypointInput::Embedded,
            keypoint_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.hidden == 0 || self.classes == 0 {
            return Err(Error::config("dim, hidden and classes must be positive"));
        }
        if self.mode == TaskMode::Gar && self.classes < 2 {
            return Err(Error::config("GAR needs at least 2 classes"));
        }
        if self.depth == 0 {
            return Err(Error::config("depth must be at least 1"));
        }
        if self.keypoints == KeypointInput::Raw && self.keypoint_hidden == 0 {
            return Err(Error::config("keypoint_hidden must be positive"));
        }
        self.stack.validate(self.dim)?;
        self.selection.validate()?;
        self.flags.validate()
    }

    /// Width of the key-modality input rows.
    pub fn key_dim(&self) -> usize {
        match self.keypoints {
            KeypointInput::Embedded => self.dim,
            KeypointInput::Raw => KEYPOINT_DIM,
        }
    }

    pub fn memory_options(&self) -> MemoryOptions {
        MemoryOptions {
            selection: self.selection,
            temporal: self.flags.use_temporal,
            select: self.flags.use_selection,
        }
    }

    fn embeds_keypoints(&self) -> bool {
        self.flags.use_key && self.keypoints == KeypointInput::Raw
    }
}

/// Two-layer perceptron `relu(x·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn init(store: &mut ParamStore, prefix: &str, dims: [usize; 3], rng: &mut Rng) -> Result<Self> {
        let [i, h, o] = dims;
        Ok(Mlp {
            w1: store.add(format!("{prefix}.w1"), glorot(rng, i, h))?,
            b1: store.add(format!("{prefix}.b1"), Tensor::row(vec![0.0; h])?)?,
            w2: store.add(format!("{prefix}.w2"), glorot(rng, h, o))?,
            b2: store.add(format!("{prefix}.b2"), Tensor::row(vec![0.0; o])?)?,
        })
    }

    pub fn param_count(dims: [usize; 3]) -> usize {
        let [i, h, o] = dims;
        i * h + h + h * o + o
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w1 = tape.param(self.w1);
        let b1 = tape.param(self.b1);
        let w2 = tape.param(self.w2);
        let b2 = tape.param(self.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row(h, b1)?;
        let h = tape.relu(h)?;
        let o = tape.matmul(h, w2)?;
        tape.add_row(o, b2)
    }
}

/// One stage of a modality machine.
#[derive(Clone, Debug, PartialEq)]
pub enum Stage {
    /// HH-HUB then HC-HUB; a missing HUB is skipped.
    Hierarchical {
        hh: Option<HubParams>,
        hc: Option<HubParams>,
    },
    /// A single HUB over actor and context tokens together.
    Flat(HubParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub machines: Vec<(Modality, Vec<Stage>)>,
    pub aggregator: Mlp,
    pub keypoint: Option<Mlp>,
}

/// Configuration, parameter values and their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
}

impl Model {
    /// Glorot-uniform matrices, zero biases, unit layer-norm gains and
    /// `N(0, 0.02²)` null tokens, drawn from one stream of `seed`.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = Rng::derive(seed, 7);
        let mut store = ParamStore::new();
        let (d, f) = (cfg.dim, cfg.flags);
        let keypoint = if cfg.embeds_keypoints() {
            Some(Mlp::init(&mut store, "kp", [KEYPOINT_DIM, cfg.keypoint_hidden, d], &mut rng)?)
        } else {
            None
        };
        let mut machines = Vec::new();
        for m in f.modalities() {
            let mut stages = Vec::with_capacity(cfg.depth);
            for s in 0..cfg.depth {
                let prefix = format!("{}.s{s}", m.name());
                let mut hub = |name: &str, rng: &mut Rng| {
                    HubParams::init(&mut store, &format!("{prefix}.{name}"), d, cfg.stack, cfg.share_channels, rng)
                };
                let stage = if f.use_hierarchy {
                    let hh = if f.use_hh { Some(hub("hh", &mut rng)?) } else { None };
                    let hc = if f.use_hc { Some(hub("hc", &mut rng)?) } else { None };
                    Stage::Hierarchical { hh, hc }
                } else {
                    Stage::Flat(hub("flat", &mut rng)?)
                };
                stages.push(stage);
            }
            machines.push((m, stages));
        }
        let width = f.modalities().len() * d;
        let aggregator = Mlp::init(&mut store, "agg", [width, cfg.hidden, cfg.classes], &mut rng)?;
        Ok(Model {
            cfg,
            store,
            params: ModelParams {
                machines,
                aggregator,
                keypoint,
            },
        })
    }

    /// Closed-form number of scalars [`Model::init`] allocates.
    pub fn param_count(cfg: &ModelConfig) -> usize {
        let f = cfg.flags;
        let hub = HubParams::param_count(cfg.dim, &cfg.stack, cfg.share_channels);
        let hubs_per_stage = if f.use_hierarchy {
            usize::from(f.use_hh) + usize::from(f.use_hc)
        } else {
            1
        };
        let m = f.modalities().len();
        let machines = m * cfg.depth * hubs_per_stage * hub;
        let agg = Mlp::param_count([m * cfg.dim, cfg.hidden, cfg.classes]);
        let kp = if cfg.embeds_keypoints() {
            Mlp::param_count([KEYPOINT_DIM, cfg.keypoint_hidden, cfg.dim])
        } else {
            0
        };
        machines + agg + kp
    }

    fn stages(&self, m: Modality) -> &[Stage] {
        &self
            .params
            .machines
            .iter()
            .find(|(mm, _)| *mm == m)
            .expect("modality is active")
            .1
    }
}

/// Per-video tensors on a tape plus the memory plans of every query row.
/// Query rows are ordered `r = t·N + i`.
pub struct VideoInputs {
    pub clips: usize,
    pub actors: usize,
    pub tokens: usize,
    queries: Vec<(Modality, Var)>,
    human_vis: Var,
    context: Var,
    merged: Vec<(Modality, Var)>,
    hh_plans: Vec<MemoryPlan>,
    hc_plans: Vec<MemoryPlan>,
    flat_plans: Vec<MemoryPlan>,
}

impl VideoInputs {
    pub fn query(&self, m: Modality) -> Var {
        self.queries.iter().find(|(mm, _)| *mm == m).expect("active modality").1
    }

    fn human_bank(&self, model: &Model, m: Modality) -> Var {
        match (model.cfg.hh_memory, m) {
            (HhMemory::Matched, Modality::Key) => self.query(Modality::Key),
            _ => self.human_vis,
        }
    }

    fn merged_bank(&self, m: Modality) -> Var {
        self.merged.iter().find(|(mm, _)| *mm == m).expect("merged bank").1
    }
}

fn check_video(cfg: &ModelConfig, v: &VideoRecord) -> Result<()> {
    if v.vis.dims().len() == 3 && v.vis.dims()[1] == 0 {
        return Err(Error::NoActors);
    }
    v.validate()?;
    let bad = |what: &str, t: &Tensor| Error::InvalidShape {
        dims: t.dims().to_vec(),
        reason: format!("{}: {what}", v.id),
    };
    if v.dim() != cfg.dim {
        return Err(bad(&format!("feature dim must be {}", cfg.dim), &v.vis));
    }
    if v.key_dim() != cfg.key_dim() {
        return Err(bad(&format!("key rows must have width {}", cfg.key_dim()), &v.key));
    }
    if v.mode() != cfg.mode {
        return Err(Error::InvalidTarget(format!("{}: labels are {} but the model is {}", v.id, v.mode(), cfg.mode)));
    }
    Ok(())
}

/// Clamp raw keypoints into `[0, 1]`, warning on the tape if anything moved.
fn clamp_keypoints(tape: &mut Tape, t: &Tensor) -> Result<Tensor> {
    let mut clamped = false;
    let data = t
        .data()
        .iter()
        .map(|&x| {
            let c = x.clamp(0.0, 1.0);
            clamped |= c != x;
            c
        })
        .collect();
    if clamped {
        tape.warn(Warning::KeypointClamped);
    }
    Tensor::new(t.dims(), data)
}

/// Embed `R×51` keypoint rows to `R×D`.
pub fn embed_keypoints(tape: &mut Tape, kp: &Tensor, mlp: &Mlp) -> Result<Var> {
    let rows = kp.len() / KEYPOINT_DIM;
    let clamped = clamp_keypoints(tape, &kp.clone().reshape(&[rows, KEYPOINT_DIM])?)?;
    let x = tape.constant(clamped);
    mlp.forward(tape, x)
}

/// Put a video's features on `tape` and plan every query's memory.
pub fn prepare(tape: &mut Tape, model: &Model, v: &VideoRecord) -> Result<VideoInputs> {
    let cfg = &model.cfg;
    check_video(cfg, v)?;
    let (tc, n, s, d) = (v.clips(), v.actors(), v.tokens(), v.dim());
    let human_vis = tape.constant(v.vis.clone().reshape(&[tc * n, d])?);
    let context = tape.constant(v.context.clone().reshape(&[tc * s, d])?);
    let mut queries = Vec::new();
    for m in cfg.flags.modalities() {
        let q = match m {
            Modality::Vis => human_vis,
            Modality::Key => match &model.params.keypoint {
                Some(mlp) => embed_keypoints(tape, &v.key, mlp)?,
                None => tape.constant(v.key.clone().reshape(&[tc * n, d])?),
            },
        };
        queries.push((m, q));
    }
    let mut inputs = VideoInputs {
        clips: tc,
        actors: n,
        tokens: s,
        queries,
        human_vis,
        context,
        merged: Vec::new(),
        hh_plans: Vec::new(),
        hc_plans: Vec::new(),
        flat_plans: Vec::new(),
    };

    let opts = cfg.memory_options();
    let human_summary = token_means(&v.vis);
    let context_summary = token_means(&v.context);
    let f = cfg.flags;
    let plans = |summary: &Tensor, layout: &BankLayout, exclude: bool| -> Vec<MemoryPlan> {
        (0..tc * n)
            .map(|r| {
                let ex = exclude.then_some((0, r % n));
                MemoryPlan::build(summary, layout, r / n, ex, &opts)
            })
            .collect()
    };
    if f.use_hierarchy {
        if f.use_hh {
            inputs.hh_plans = plans(&human_summary, &BankLayout::single(tc, n), true);
        }
        if f.use_hc {
            inputs.hc_plans = plans(&context_summary, &BankLayout::single(tc, s), false);
        }
    } else {
        inputs.flat_plans = plans(&context_summary, &BankLayout::merged(tc, n, s), true);
        for m in f.modalities() {
            let human = inputs.human_bank(model, m);
            let merged = tape.concat_rows(&[human, context])?;
            inputs.merged.push((m, merged));
        }
    }
    Ok(inputs)
}

/// Refined queries `R×D` of one modality, all rows at once.
pub fn machine_forward(tape: &mut Tape, model: &Model, inputs: &VideoInputs, m: Modality) -> Result<Var> {
    let mut q = inputs.query(m);
    for stage in model.stages(m) {
        match stage {
            Stage::Hierarchical { hh, hc } => {
                if let Some(p) = hh {
                    let bank = inputs.human_bank(model, m);
                    q = hub_forward_batched(tape, q, bank, &inputs.hh_plans, p)?;
                }
                if let Some(p) = hc {
                    q = hub_forward_batched(tape, q, inputs.context, &inputs.hc_plans, p)?;
                }
            }
            Stage::Flat(p) => {
                q = hub_forward_batched(tape, q, inputs.merged_bank(m), &inputs.flat_plans, p)?;
            }
        }
    }
    Ok(q)
}

/// Refined query `1×D` of actor `i` at clip `t`, one HUB call at a time.
pub fn modality_forward(
    tape: &mut Tape,
    model: &Model,
    inputs: &VideoInputs,
    m: Modality,
    t: usize,
    i: usize,
) -> Result<Var> {
    let r = t * inputs.actors + i;
    let all = inputs.query(m);
    let mut q = tape.gather_rows(all, &[r])?;
    for stage in model.stages(m) {
        match stage {
            Stage::Hierarchical { hh, hc } => {
                if let Some(p) = hh {
                    let mem = gather_memory(tape, inputs.human_bank(model, m), &inputs.hh_plans[r])?;
                    q = hub_forward(tape, q, &mem, p)?;
                }
                if let Some(p) = hc {
                    let mem = gather_memory(tape, inputs.context, &inputs.hc_plans[r])?;
                    q = hub_forward(tape, q, &mem, p)?;
                }
            }
            Stage::Flat(p) => {
                let mem = gather_memory(tape, inputs.merged_bank(m), &inputs.flat_plans[r])?;
                q = hub_forward(tape, q, &mem, p)?;
            }
        }
    }
    Ok(q)
}

/// Task head on refined queries. STAL: `R×C` sigmoid scores. GAR: `1×C`
/// softmax over the actor/time mean of each modality.
pub fn head(tape: &mut Tape, model: &Model, q_hat: &[(Modality, Var)]) -> Result<Var> {
    let parts: Vec<Var> = match model.cfg.mode {
        TaskMode::Stal => q_hat.iter().map(|(_, v)| *v).collect(),
        TaskMode::Gar => q_hat
            .iter()
            .map(|(_, v)| tape.mean_rows(*v))
            .collect::<Result<_>>()?,
    };
    let x = if parts.len() == 1 {
        parts[0]
    } else {
        tape.concat_cols(&parts)?
    };
    let logits = model.params.aggregator.forward(tape, x)?;
    match model.cfg.mode {
        TaskMode::Stal => tape.sigmoid(logits),
        TaskMode::Gar => tape.softmax(logits),
    }
}

pub struct VideoOutput {
    /// Refined queries per active modality, `R×D` with `r = t·N + i`.
    pub q_hat: Vec<(Modality, Var)>,
    pub scores: Var,
}

/// Full forward for one video on a tape bound to `model.store`.
pub fn forward_video(tape: &mut Tape, model: &Model, v: &VideoRecord) -> Result<VideoOutput> {
    let inputs = prepare(tape, model, v)?;
    let mut q_hat = Vec::new();
    for m in model.cfg.flags.modalities() {
        q_hat.push((m, machine_forward(tape, model, &inputs, m)?));
    }
    let scores = head(tape, model, &q_hat)?;
    Ok(VideoOutput { q_hat, scores })
}

/// Label scores for one video: `T·N×C` (STAL) or `1×C` (GAR).
pub fn predict(model: &Model, v: &VideoRecord) -> Result<Tensor> {
    let mut tape = Tape::with_params(&model.store);
    let out = forward_video(&mut tape, model, v)?;
    Ok(tape.value(out.scores).clone())
}
