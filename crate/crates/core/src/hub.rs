//! The HUB unit: past, current and future memory channels, each read by its
//! own attention stack, with the three outputs concatenated and mapped back to
//! `D` by `W_a`.
//!
//! Memory contents are described by a [`MemoryPlan`]: for each channel, the
//! row indices of a memory bank that the query may read. The per-query path
//! gathers those rows into a small memory; the batched path keeps the whole
//! bank and masks the attention scores instead. Both read the same plan.

use crate::attention::{glorot, project, stack_forward, AttnStackParams, StackConfig};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Mask, ParamId, ParamStore, Tape, Var};
use crate::tensor::{cosine, Shape, Tensor};

pub const CHANNEL_NAMES: [&str; 3] = ["past", "current", "future"];

/// Window and per-side top-k of the pre-computed clip selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SelectionConfig {
    pub w: usize,
    pub k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { w: 2, k: 1 }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > self.w {
            return Err(Error::config(format!(
                "selection needs 1 <= k <= w, got k={} w={}",
                self.k, self.w
            )));
        }
        Ok(())
    }
}

/// Per-clip token features `X[T×S×D]` with their mean-pooled summaries `[T×D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    x: Tensor,
    summary: Tensor,
}

impl ClipFeatures {
    pub fn new(x: Tensor) -> Result<Self> {
        if x.shape().rank() != 3 || x.dims()[1] == 0 {
            return Err(Error::InvalidShape {
                dims: x.dims().to_vec(),
                reason: "clip features must be T×S×D with S >= 1".into(),
            });
        }
        let summary = token_means(&x);
        Ok(ClipFeatures { x, summary })
    }

    pub fn x(&self) -> &Tensor {
        &self.x
    }

    pub fn summary(&self) -> &Tensor {
        &self.summary
    }

    pub fn clips(&self) -> usize {
        self.x.dims()[0]
    }

    pub fn tokens(&self) -> usize {
        self.x.dims()[1]
    }

    pub fn dim(&self) -> usize {
        self.x.dims()[2]
    }
}

/// Mean over the token axis of a `T×S×D` tensor.
pub fn token_means(x: &Tensor) -> Tensor {
    let (t, s, d) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let mut out = vec![0.0; t * d];
    for c in 0..t {
        for j in 0..s {
            let row = &x.data()[(c * s + j) * d..(c * s + j + 1) * d];
            for (o, v) in out[c * d..(c + 1) * d].iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out[c * d..(c + 1) * d] {
            *o /= s as f64;
        }
    }
    Tensor::matrix(t, d, out).expect("finite means")
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Selection {
    pub past: Vec<usize>,
    pub future: Vec<usize>,
}

fn rank_side(summary: &Tensor, t: usize, candidates: impl Iterator<Item = usize>, k: usize) -> Vec<usize> {
    let anchor = summary.row_slice(t);
    let mut scored: Vec<(f64, usize, usize)> = candidates
        .map(|c| {
            let sim = cosine(summary.row_slice(c), anchor).unwrap_or(0.0);
            (sim, c.abs_diff(t), c)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut picked: Vec<usize> = scored.into_iter().take(k).map(|s| s.2).collect();
    picked.sort_unstable();
    picked
}

/// Top-k clips on each side of `t` within the window, by cosine similarity of
/// clip summaries to clip `t`. Ties go to the nearer clip, then the lower
/// index. Each side is returned in temporal order.
pub fn select_clips(summary: &Tensor, t: usize, cfg: &SelectionConfig) -> Selection {
    let n = summary.rows();
    assert!(t < n, "clip {t} out of range for {n} clips");
    let lo = t.saturating_sub(cfg.w);
    let hi = (t + cfg.w).min(n - 1);
    Selection {
        past: rank_side(summary, t, lo..t, cfg.k),
        future: rank_side(summary, t, t + 1..=hi, cfg.k),
    }
}

/// What a query may read from one channel.
#[derive(Clone, Debug, PartialEq)]
pub enum Channel<M> {
    /// Empty channel; the learned null token stands in.
    Null,
    /// One memory, attended jointly.
    Rows(M),
    /// One memory per clip, attended separately and averaged.
    PerClip(Vec<M>),
}

impl<M> Channel<M> {
    pub fn map<N>(&self, mut f: impl FnMut(&M) -> Result<N>) -> Result<Channel<N>> {
        Ok(match self {
            Channel::Null => Channel::Null,
            Channel::Rows(m) => Channel::Rows(f(m)?),
            Channel::PerClip(ms) => Channel::PerClip(ms.iter().map(f).collect::<Result<_>>()?),
        })
    }
}

/// A bank segment: `per_clip` consecutive rows per clip, starting at `offset`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub offset: usize,
    pub per_clip: usize,
}

/// How the rows of a memory bank are arranged by clip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BankLayout {
    pub segments: Vec<Segment>,
    pub clips: usize,
}

impl BankLayout {
    /// A bank of `clips × per_clip` rows.
    pub fn single(clips: usize, per_clip: usize) -> Self {
        BankLayout {
            segments: vec![Segment { offset: 0, per_clip }],
            clips,
        }
    }

    /// Two banks stacked row-wise: all rows of the first, then all of the second.
    pub fn merged(clips: usize, first: usize, second: usize) -> Self {
        BankLayout {
            segments: vec![
                Segment { offset: 0, per_clip: first },
                Segment {
                    offset: clips * first,
                    per_clip: second,
                },
            ],
            clips,
        }
    }

    pub fn rows(&self) -> usize {
        self.segments.iter().map(|s| s.per_clip * self.clips).sum()
    }

    fn clip_rows(&self, c: usize, exclude: Option<(usize, usize)>) -> Vec<usize> {
        let mut out = Vec::new();
        for (si, seg) in self.segments.iter().enumerate() {
            for j in 0..seg.per_clip {
                if exclude == Some((si, j)) {
                    continue;
                }
                out.push(seg.offset + c * seg.per_clip + j);
            }
        }
        out
    }
}

/// Memory switches for one HUB call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MemoryOptions {
    pub selection: SelectionConfig,
    /// Off: past and future channels hold only the null token.
    pub temporal: bool,
    /// Off: every clip of the window enters memory and is attended separately.
    pub select: bool,
}

impl Default for MemoryOptions {
    fn default() -> Self {
        MemoryOptions {
            selection: SelectionConfig::default(),
            temporal: true,
            select: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryPlan {
    pub channels: [Channel<Vec<usize>>; 3],
}

impl MemoryPlan {
    /// Rows readable by a query at clip `t`. `exclude = (segment, token)` drops
    /// one token of clip `t` from the current channel.
    pub fn build(
        summary: &Tensor,
        layout: &BankLayout,
        t: usize,
        exclude: Option<(usize, usize)>,
        opts: &MemoryOptions,
    ) -> Self {
        let current = layout.clip_rows(t, exclude);
        let current = if current.is_empty() {
            Channel::Null
        } else {
            Channel::Rows(current)
        };
        if !opts.temporal {
            return MemoryPlan {
                channels: [Channel::Null, current, Channel::Null],
            };
        }
        let side = |clips: Vec<usize>| -> Channel<Vec<usize>> {
            if clips.is_empty() {
                Channel::Null
            } else if opts.select {
                Channel::Rows(clips.iter().flat_map(|&c| layout.clip_rows(c, None)).collect())
            } else {
                Channel::PerClip(clips.iter().map(|&c| layout.clip_rows(c, None)).collect())
            }
        };
        let (past, future) = if opts.select {
            let sel = select_clips(summary, t, &opts.selection);
            (sel.past, sel.future)
        } else {
            let w = opts.selection.w;
            (
                (t.saturating_sub(w)..t).collect(),
                (t + 1..(t + w + 1).min(layout.clips)).collect(),
            )
        };
        MemoryPlan {
            channels: [side(past), current, side(future)],
        }
    }
}

/// Channel memories as tensors, for callers outside a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalMemory {
    pub channels: [Channel<Tensor>; 3],
}

fn gather(bank: &Tensor, rows: &[usize]) -> Tensor {
    let d = bank.cols();
    let data = rows.iter().flat_map(|&r| bank.row_slice(r).iter().copied()).collect();
    Tensor::from_parts(Shape::matrix(rows.len(), d), data)
}

/// Memory of clip `t` with selection over the features' own summaries.
pub fn build_memory(features: &ClipFeatures, t: usize, opts: &MemoryOptions) -> TemporalMemory {
    let layout = BankLayout::single(features.clips(), features.tokens());
    let plan = MemoryPlan::build(features.summary(), &layout, t, None, opts);
    let bank = features.x().as_matrix();
    TemporalMemory {
        channels: plan
            .channels
            .map(|c| c.map(|rows| Ok(gather(&bank, rows))).expect("gather")),
    }
}

impl TemporalMemory {
    pub fn on_tape(&self, tape: &mut Tape) -> [Channel<Var>; 3] {
        self.channels.clone().map(|c| {
            c.map(|t| Ok(tape.constant(t.clone()))).expect("constant")
        })
    }
}

/// Parameters of one HUB.
#[derive(Clone, Debug, PartialEq)]
pub struct HubParams {
    pub stacks: [AttnStackParams; 3],
    /// `3D×D` aggregation.
    pub wa: ParamId,
    pub null: [ParamId; 3],
}

impl HubParams {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        cfg: StackConfig,
        share_channels: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let stacks = if share_channels {
            let s = AttnStackParams::init(store, &format!("{prefix}.shared"), d, cfg, rng)?;
            [s.clone(), s.clone(), s]
        } else {
            let mut v = Vec::with_capacity(3);
            for name in CHANNEL_NAMES {
                v.push(AttnStackParams::init(store, &format!("{prefix}.{name}"), d, cfg, rng)?);
            }
            v.try_into().expect("three stacks")
        };
        let wa = store.add(format!("{prefix}.wa"), glorot(rng, 3 * d, d))?;
        let mut null = Vec::with_capacity(3);
        for name in CHANNEL_NAMES {
            let data = (0..d).map(|_| 0.02 * rng.normal()).collect();
            null.push(store.add(format!("{prefix}.null.{name}"), Tensor::row(data)?)?);
        }
        Ok(HubParams {
            stacks,
            wa,
            null: null.try_into().expect("three null tokens"),
        })
    }

    pub fn param_count(d: usize, cfg: &StackConfig, share_channels: bool) -> usize {
        let stacks = if share_channels { 1 } else { 3 };
        stacks * AttnStackParams::param_count(d, cfg) + 3 * d * d + 3 * d
    }
}

/// Gather the planned rows of `bank` onto the tape.
pub fn gather_memory(tape: &mut Tape, bank: Var, plan: &MemoryPlan) -> Result<[Channel<Var>; 3]> {
    let [a, b, c] = &plan.channels;
    Ok([
        a.map(|rows| tape.gather_rows(bank, rows))?,
        b.map(|rows| tape.gather_rows(bank, rows))?,
        c.map(|rows| tape.gather_rows(bank, rows))?,
    ])
}

/// `[attend_stack(q, past), attend_stack(q, current), attend_stack(q, future)] · W_a`
/// for a single query row.
pub fn hub_forward(tape: &mut Tape, q: Var, mem: &[Channel<Var>; 3], p: &HubParams) -> Result<Var> {
    let mut outs = Vec::with_capacity(3);
    for (ch, channel) in mem.iter().enumerate() {
        let stack = &p.stacks[ch];
        let out = match channel {
            Channel::Null => {
                let null = tape.param(p.null[ch]);
                let proj = project(tape, null, stack)?;
                stack_forward(tape, q, &proj, stack, None)?
            }
            Channel::Rows(m) => {
                let proj = project(tape, *m, stack)?;
                stack_forward(tape, q, &proj, stack, None)?
            }
            Channel::PerClip(ms) => {
                let mut acc: Option<Var> = None;
                for &m in ms {
                    let proj = project(tape, m, stack)?;
                    let o = stack_forward(tape, q, &proj, stack, None)?;
                    acc = Some(match acc {
                        Some(a) => tape.add(a, o)?,
                        None => o,
                    });
                }
                let sum = acc.ok_or(Error::EmptyMemory)?;
                tape.scale(sum, 1.0 / ms.len() as f64)?
            }
        };
        outs.push(out);
    }
    let cat = tape.concat_cols(&outs)?;
    let wa = tape.param(p.wa);
    tape.matmul(cat, wa)
}

/// HUB for many query rows `q[R×D]` against one shared `bank`, row `r` reading
/// the rows `plans[r]` allows. Equal to calling [`hub_forward`] per row on
/// the gathered memories.
pub fn hub_forward_batched(
    tape: &mut Tape,
    q: Var,
    bank: Var,
    plans: &[MemoryPlan],
    p: &HubParams,
) -> Result<Var> {
    let r_count = tape.value(q).rows();
    if plans.len() != r_count {
        return Err(Error::Dimension {
            op: "hub_forward_batched",
            lhs: tape.value(q).shape(),
            rhs: Shape::matrix(plans.len(), 1),
        });
    }
    let m = tape.value(bank).rows();
    let mut outs = Vec::with_capacity(3);
    for ch in 0..3 {
        let stack = &p.stacks[ch];
        let null = tape.param(p.null[ch]);
        let mem = tape.concat_rows(&[bank, null])?;
        let proj = project(tape, mem, stack)?;
        let slots = plans
            .iter()
            .map(|pl| match &pl.channels[ch] {
                Channel::PerClip(v) => v.len(),
                _ => 1,
            })
            .max()
            .unwrap_or(1);
        let mut acc: Option<Var> = None;
        for slot in 0..slots {
            let mut mask = Mask::new(r_count, m + 1);
            let mut coeffs = vec![0.0; r_count];
            for (r, pl) in plans.iter().enumerate() {
                let rows: Option<(&[usize], f64)> = match &pl.channels[ch] {
                    Channel::Null => None,
                    Channel::Rows(v) => (slot == 0).then_some((v.as_slice(), 1.0)),
                    Channel::PerClip(vs) => vs.get(slot).map(|v| (v.as_slice(), 1.0 / vs.len() as f64)),
                };
                match rows {
                    Some((rows, c)) => {
                        for &i in rows {
                            mask.allow(r, i);
                        }
                        coeffs[r] = c;
                    }
                    None => {
                        mask.allow(r, m);
                        coeffs[r] = if slot == 0 && matches!(pl.channels[ch], Channel::Null) {
                            1.0
                        } else {
                            0.0
                        };
                    }
                }
            }
            let o = stack_forward(tape, q, &proj, stack, Some(&mask))?;
            let o = if coeffs.iter().all(|&c| c == 1.0) {
                o
            } else {
                tape.scale_rows(o, coeffs)?
            };
            acc = Some(match acc {
                Some(a) => tape.add(a, o)?,
                None => o,
            });
        }
        outs.push(acc.expect("at least one slot"));
    }
    let cat = tape.concat_cols(&outs)?;
    let wa = tape.param(p.wa);
    tape.matmul(cat, wa)
}

/// HH-HUB for actor `actor` at clip `t` over per-actor features (`S = N` tokens).
/// The actor's own token at clip `t` is left out of the current channel.
pub fn hh_hub(
    tape: &mut Tape,
    q: Var,
    actor: usize,
    t: usize,
    human: &ClipFeatures,
    opts: &MemoryOptions,
    p: &HubParams,
) -> Result<Var> {
    let layout = BankLayout::single(human.clips(), human.tokens());
    let plan = MemoryPlan::build(human.summary(), &layout, t, Some((0, actor)), opts);
    let bank = tape.constant(human.x().as_matrix());
    let mem = gather_memory(tape, bank, &plan)?;
    hub_forward(tape, q, &mem, p)
}

/// HC-HUB at clip `t` over context tokens; no exclusion.
pub fn hc_hub(
    tape: &mut Tape,
    q_tilde: Var,
    t: usize,
    context: &ClipFeatures,
    opts: &MemoryOptions,
    p: &HubParams,
) -> Result<Var> {
    let mem = build_memory(context, t, opts).on_tape(tape);
    hub_forward(tape, q_tilde, &mem, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn summaries(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows)
    }

    #[test]
    fn selection_example() {
        let r = 1.0 / 2f64.sqrt();
        let s = summaries(&[&[1.0, 0.0], &[0.0, 1.0], &[r, r], &[1.0, 0.0], &[-1.0, 0.0]]);
        let sel = select_clips(&s, 3, &SelectionConfig { w: 3, k: 2 });
        assert_eq!(sel.past, vec![0, 2]);
        assert_eq!(sel.future, vec![4]);
        let sel = select_clips(&s, 0, &SelectionConfig { w: 3, k: 2 });
        assert!(sel.past.is_empty());
    }

    #[test]
    fn saturated_selection_takes_whole_window() {
        let s = summaries(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0], &[-1.0, 0.5], &[0.3, 0.0]]);
        let sel = select_clips(&s, 2, &SelectionConfig { w: 2, k: 2 });
        assert_eq!(sel.past, vec![0, 1]);
        assert_eq!(sel.future, vec![3, 4]);
    }

    #[test]
    fn ties_prefer_nearer_then_lower() {
        let s = summaries(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0]]);
        let sel = select_clips(&s, 2, &SelectionConfig { w: 2, k: 1 });
        assert_eq!(sel.past, vec![1]);
        assert_eq!(sel.future, vec![3]);
    }

    fn features(t: usize, s: usize, d: usize, seed: u64) -> ClipFeatures {
        let mut rng = Rng::new(seed);
        let data = (0..t * s * d).map(|_| rng.normal()).collect();
        ClipFeatures::new(Tensor::new(&[t, s, d], data).unwrap()).unwrap()
    }

    #[test]
    fn summaries_are_token_means() {
        let f = features(3, 4, 2, 1);
        for c in 0..3 {
            for j in 0..2 {
                let m: f64 = (0..4).map(|s| f.x().data()[(c * 4 + s) * 2 + j]).sum::<f64>() / 4.0;
                assert!((f.summary().get(c, j) - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn memory_shapes() {
        let f = features(5, 3, 2, 2);
        let opts = MemoryOptions {
            selection: SelectionConfig { w: 3, k: 2 },
            ..MemoryOptions::default()
        };
        let mem = build_memory(&f, 4, &opts);
        match &mem.channels[0] {
            Channel::Rows(t) => assert_eq!(t.rows(), 6),
            other => panic!("{other:?}"),
        }
        assert_eq!(mem.channels[2], Channel::Null);
        match &mem.channels[1] {
            Channel::Rows(t) => assert_eq!(t.rows(), 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(build_memory(&f, 4, &opts), mem);
    }

    #[test]
    fn temporal_and_selection_switches() {
        let f = features(5, 2, 2, 3);
        let layout = BankLayout::single(5, 2);
        let opts = MemoryOptions {
            selection: SelectionConfig { w: 2, k: 1 },
            temporal: false,
            select: true,
        };
        let plan = MemoryPlan::build(f.summary(), &layout, 2, None, &opts);
        assert_eq!(plan.channels[0], Channel::Null);
        assert_eq!(plan.channels[2], Channel::Null);
        let opts = MemoryOptions {
            temporal: true,
            select: false,
            ..opts
        };
        let plan = MemoryPlan::build(f.summary(), &layout, 1, Some((0, 1)), &opts);
        assert_eq!(plan.channels[0], Channel::PerClip(vec![vec![0, 1]]));
        assert_eq!(plan.channels[1], Channel::Rows(vec![2]));
        assert_eq!(
            plan.channels[2],
            Channel::PerClip(vec![vec![4, 5], vec![6, 7]])
        );
    }

    fn hub(d: usize, seed: u64, share: bool) -> (ParamStore, HubParams) {
        let mut store = ParamStore::new();
        let p = HubParams::init(&mut store, "h", d, StackConfig::default(), share, &mut Rng::new(seed)).unwrap();
        (store, p)
    }

    #[test]
    fn channel_symmetry_and_averaging_aggregator() {
        let d = 3;
        let (mut store, p) = hub(d, 5, true);
        let mut wa = vec![0.0; 3 * d * d];
        for b in 0..3 {
            for i in 0..d {
                wa[(b * d + i) * d + i] = 1.0 / 3.0;
            }
        }
        *store.get_mut(p.wa) = Tensor::matrix(3 * d, d, wa).unwrap();
        let mut t = Tape::with_params(&store);
        let q = t.constant(Tensor::from_rows(&[&[0.2, -0.4, 1.0]]));
        let m = t.constant(Tensor::from_rows(&[&[1.0, 0.5, -0.5]]));
        let mem = [Channel::Rows(m), Channel::Rows(m), Channel::Rows(m)];
        let out = hub_forward(&mut t, q, &mem, &p).unwrap();
        let c = crate::attention::attend_stack(&mut t, q, m, &p.stacks[0]).unwrap();
        assert!(t.value(out).max_abs_diff(t.value(c)) < 1e-15);
    }

    #[test]
    fn lone_actor_reduces_to_null_tokens() {
        let human = features(4, 1, 3, 7);
        let (store, p) = hub(3, 8, false);
        let opts = MemoryOptions::default();
        let layout = BankLayout::single(4, 1);
        let plan = MemoryPlan::build(human.summary(), &layout, 2, Some((0, 0)), &opts);
        assert_eq!(plan.channels[1], Channel::Null);
        let mut t = Tape::with_params(&store);
        let q = t.constant(Tensor::from_rows(&[&[0.2, -0.4, 1.0]]));
        hh_hub(&mut t, q, 0, 2, &human, &opts, &p).unwrap();
    }

    #[test]
    fn self_exclusion_changes_output() {
        let human = features(4, 2, 3, 9);
        let (store, p) = hub(3, 10, false);
        let opts = MemoryOptions::default();
        let mut t = Tape::with_params(&store);
        let q = t.constant(Tensor::new(&[1, 3], human.x().data()[(2 * 2) * 3..(2 * 2 + 1) * 3].to_vec()).unwrap());
        let with = hh_hub(&mut t, q, 0, 2, &human, &opts, &p).unwrap();
        let mem = build_memory(&human, 2, &opts).on_tape(&mut t);
        let without = hub_forward(&mut t, q, &mem, &p).unwrap();
        assert!(t.value(with).max_abs_diff(t.value(without)) > 1e-6);
    }

    #[test]
    fn batched_matches_per_query() {
        let human = features(6, 3, 4, 11);
        let (store, p) = hub(4, 12, false);
        let layout = BankLayout::single(6, 3);
        for (temporal, select) in [(true, true), (false, true), (true, false), (false, false)] {
            let opts = MemoryOptions {
                selection: SelectionConfig { w: 2, k: 1 },
                temporal,
                select,
            };
            let mut t = Tape::with_params(&store);
            let bank = t.constant(human.x().as_matrix());
            let plans: Vec<MemoryPlan> = (0..18)
                .map(|r| MemoryPlan::build(human.summary(), &layout, r / 3, Some((0, r % 3)), &opts))
                .collect();
            let batched = hub_forward_batched(&mut t, bank, bank, &plans, &p).unwrap();
            for (r, plan) in plans.iter().enumerate() {
                let q = t.gather_rows(bank, &[r]).unwrap();
                let mem = gather_memory(&mut t, bank, plan).unwrap();
                let single = hub_forward(&mut t, q, &mem, &p).unwrap();
                let got = &t.value(batched).row_slice(r).to_vec();
                for (a, b) in got.iter().zip(t.value(single).data()) {
                    assert!((a - b).abs() < 1e-12, "{temporal} {select} row {r}");
                }
            }
        }
    }

    #[test]
    fn composite_passes_grad_check() {
        let human = features(4, 2, 4, 13);
        let context = features(4, 3, 4, 14);
        let mut store = ParamStore::new();
        let mut rng = Rng::new(15);
        let hh = HubParams::init(&mut store, "hh", 4, StackConfig::default(), false, &mut rng).unwrap();
        let hc = HubParams::init(&mut store, "hc", 4, StackConfig::default(), false, &mut rng).unwrap();
        let qid = store.add("q", glorot(&mut rng, 1, 4)).unwrap();
        let opts = MemoryOptions::default();
        let r = grad_check(&store, 1e-5, |t| {
            let q = t.param(qid);
            let a = hh_hub(t, q, 1, 1, &human, &opts, &hh)?;
            let b = hc_hub(t, a, 1, &context, &opts, &hc)?;
            let w = t.constant(Tensor::from_rows(&[&[0.7, -1.3, 0.4, 0.2]]));
            let o = t.mul(b, w)?;
            t.sum_all(o)
        })
        .unwrap();
        assert!(r.max_rel_err() < 1e-5, "{:?}", r.worst());
    }
}
