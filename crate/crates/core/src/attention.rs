//! Scaled dot-product attention and stacked attention layers.
//!
//! Keys and values are the same raw memory rows; the learned projections
//! `W_k` and `W_v` make them differ. A memory is projected once per layer
//! ([`project`]) and can then serve any number of queries, optionally under a
//! [`Mask`] that restricts each query row to a subset of memory rows.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Mask, ParamId, ParamStore, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttnParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNormParams {
    pub gain: ParamId,
    pub bias: ParamId,
}

/// Options shared by every stack of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackConfig {
    pub layers: usize,
    pub heads: usize,
    pub residual: bool,
    pub layer_norm: bool,
}

impl Default for StackConfig {
    fn default() -> Self {
        StackConfig {
            layers: 2,
            heads: 1,
            residual: true,
            layer_norm: true,
        }
    }
}

impl StackConfig {
    pub fn validate(&self, d: usize) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("attention stack needs at least one layer"));
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::config(format!(
                "heads={} must be positive and divide D={d}",
                self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnStackParams {
    pub layers: Vec<AttnParams>,
    pub norms: Vec<LayerNormParams>,
    pub cfg: StackConfig,
    pub d: usize,
}

/// Glorot-uniform `rows×cols` matrix, bound `sqrt(6 / (rows + cols))`.
pub fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("finite glorot draw")
}

impl AttnStackParams {
    /// Allocate `cfg.layers` layers under `prefix` (`{prefix}.l{j}.wq`, ...).
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d: usize,
        cfg: StackConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        cfg.validate(d)?;
        let mut layers = Vec::with_capacity(cfg.layers);
        let mut norms = Vec::with_capacity(cfg.layers);
        for j in 0..cfg.layers {
            let p = format!("{prefix}.l{j}");
            layers.push(AttnParams {
                wq: store.add(format!("{p}.wq"), glorot(rng, d, d))?,
                wk: store.add(format!("{p}.wk"), glorot(rng, d, d))?,
                wv: store.add(format!("{p}.wv"), glorot(rng, d, d))?,
            });
            norms.push(LayerNormParams {
                gain: store.add(format!("{p}.ln_gain"), Tensor::row(vec![1.0; d])?)?,
                bias: store.add(format!("{p}.ln_bias"), Tensor::row(vec![0.0; d])?)?,
            });
        }
        Ok(AttnStackParams {
            layers,
            norms,
            cfg,
            d,
        })
    }

    /// Number of scalars `init` allocates.
    pub fn param_count(d: usize, cfg: &StackConfig) -> usize {
        cfg.layers * (3 * d * d + 2 * d)
    }
}

/// A memory projected through every layer of a stack.
pub struct ProjectedMemory {
    /// Per layer: `(K W_k)ᵀ` per head and `V W_v` per head.
    layers: Vec<Vec<(Var, Var)>>,
    rows: usize,
}

impl ProjectedMemory {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

fn head_selectors(tape: &mut Tape, d: usize, heads: usize) -> Vec<Var> {
    let dh = d / heads;
    (0..heads)
        .map(|h| {
            let mut data = vec![0.0; d * dh];
            for c in 0..dh {
                data[(h * dh + c) * dh + c] = 1.0;
            }
            tape.constant(Tensor::matrix(d, dh, data).expect("selector"))
        })
        .collect()
}

/// Project the memory rows `mem[M×D]` through each layer's `W_k` and `W_v`.
pub fn project(tape: &mut Tape, mem: Var, p: &AttnStackParams) -> Result<ProjectedMemory> {
    let rows = tape.value(mem).rows();
    if rows == 0 {
        return Err(Error::EmptyMemory);
    }
    let selectors = if p.cfg.heads > 1 {
        head_selectors(tape, p.d, p.cfg.heads)
    } else {
        Vec::new()
    };
    let mut layers = Vec::with_capacity(p.layers.len());
    for l in &p.layers {
        let (wk, wv) = (tape.param(l.wk), tape.param(l.wv));
        let k = tape.matmul(mem, wk)?;
        let v = tape.matmul(mem, wv)?;
        let mut per_head = Vec::with_capacity(p.cfg.heads);
        if selectors.is_empty() {
            per_head.push((tape.transpose(k)?, v));
        } else {
            for &sel in &selectors {
                let kh = tape.matmul(k, sel)?;
                let vh = tape.matmul(v, sel)?;
                per_head.push((tape.transpose(kh)?, vh));
            }
        }
        layers.push(per_head);
    }
    Ok(ProjectedMemory { layers, rows })
}

/// One attention layer for the query rows `q[R×D]`. Returns the output and
/// the attention weights of the first head (`R×M`).
fn layer(
    tape: &mut Tape,
    q: Var,
    l: &AttnParams,
    heads: &[(Var, Var)],
    d: usize,
    mask: Option<&Mask>,
) -> Result<(Var, Var)> {
    let wq = tape.param(l.wq);
    let qp = tape.matmul(q, wq)?;
    let selectors = if heads.len() > 1 {
        head_selectors(tape, d, heads.len())
    } else {
        Vec::new()
    };
    let scale = 1.0 / ((d / heads.len()) as f64).sqrt();
    let mut outs = Vec::with_capacity(heads.len());
    let mut first_weights = None;
    for (h, &(kt, v)) in heads.iter().enumerate() {
        let qh = match selectors.get(h) {
            Some(&sel) => tape.matmul(qp, sel)?,
            None => qp,
        };
        let raw = tape.matmul(qh, kt)?;
        let scores = tape.scale(raw, scale)?;
        let w = match mask {
            Some(m) => tape.masked_softmax(scores, m)?,
            None => tape.softmax(scores)?,
        };
        first_weights.get_or_insert(w);
        outs.push(tape.matmul(w, v)?);
    }
    let out = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    Ok((out, first_weights.expect("at least one head")))
}

fn check_query(tape: &Tape, q: Var, d: usize, mem: &ProjectedMemory, mask: Option<&Mask>) -> Result<()> {
    let qv = tape.value(q);
    if qv.cols() != d {
        return Err(Error::Dimension {
            op: "attend",
            lhs: qv.shape(),
            rhs: crate::tensor::Shape::matrix(mem.rows, d),
        });
    }
    if let Some(m) = mask {
        if m.rows() != qv.rows() || m.cols() != mem.rows {
            return Err(Error::Dimension {
                op: "attend mask",
                lhs: crate::tensor::Shape::matrix(m.rows(), m.cols()),
                rhs: crate::tensor::Shape::matrix(qv.rows(), mem.rows),
            });
        }
    }
    Ok(())
}

/// Run the stack for query rows `q[R×D]` against a projected memory.
///
/// Each layer is attend, then optional residual add, then optional layer
/// normalization; the refined query feeds the next layer.
pub fn stack_forward(
    tape: &mut Tape,
    q: Var,
    mem: &ProjectedMemory,
    p: &AttnStackParams,
    mask: Option<&Mask>,
) -> Result<Var> {
    check_query(tape, q, p.d, mem, mask)?;
    let mut x = q;
    for (j, l) in p.layers.iter().enumerate() {
        let (mut out, _) = layer(tape, x, l, &mem.layers[j], p.d, mask)?;
        if p.cfg.residual {
            out = tape.add(out, x)?;
        }
        if p.cfg.layer_norm {
            let (g, b) = (tape.param(p.norms[j].gain), tape.param(p.norms[j].bias));
            out = tape.layer_norm(out, g, b)?;
        }
        x = out;
    }
    Ok(x)
}

/// Single attention layer: `softmax((q W_q)(K W_k)ᵀ / √d) · (V W_v)`, with `K = V = mem`.
pub fn attend(tape: &mut Tape, q: Var, mem: Var, p: &AttnStackParams, layer_index: usize) -> Result<Var> {
    Ok(attend_with_weights(tape, q, mem, p, layer_index)?.0)
}

/// As [`attend`], also returning the attention weights (first head).
pub fn attend_with_weights(
    tape: &mut Tape,
    q: Var,
    mem: Var,
    p: &AttnStackParams,
    layer_index: usize,
) -> Result<(Var, Var)> {
    let single = AttnStackParams {
        layers: vec![p.layers[layer_index]],
        norms: vec![p.norms[layer_index]],
        cfg: StackConfig { layers: 1, ..p.cfg },
        d: p.d,
    };
    let proj = project(tape, mem, &single)?;
    check_query(tape, q, p.d, &proj, None)?;
    layer(tape, q, &single.layers[0], &proj.layers[0], p.d, None)
}

/// Full stack over an unmasked memory `mem[M×D]`.
pub fn attend_stack(tape: &mut Tape, q: Var, mem: Var, p: &AttnStackParams) -> Result<Var> {
    let proj = project(tape, mem, p)?;
    stack_forward(tape, q, &proj, p, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;

    fn identity_stack(d: usize, cfg: StackConfig) -> (ParamStore, AttnStackParams) {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(0);
        let p = AttnStackParams::init(&mut store, "s", d, cfg, &mut rng).unwrap();
        for l in &p.layers {
            for id in [l.wq, l.wk, l.wv] {
                *store.get_mut(id) = Tensor::identity(d);
            }
        }
        (store, p)
    }

    #[test]
    fn hand_example() {
        let cfg = StackConfig {
            layers: 1,
            ..StackConfig::default()
        };
        let (mut store, p) = identity_stack(2, cfg);
        // values [[2,0],[0,2]] arise from keys [[1,0],[0,1]] through W_v = 2I
        *store.get_mut(p.layers[0].wv) = Tensor::from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]);
        let mut t = Tape::with_params(&store);
        let q = t.constant(Tensor::from_rows(&[&[1.0, 0.0]]));
        let kv = t.constant(Tensor::identity(2));
        let (out, w) = attend_with_weights(&mut t, q, kv, &p, 0).unwrap();
        let (w, o) = (t.value(w).data(), t.value(out).data());
        let a = (1.0f64 / 2f64.sqrt()).exp();
        let w0 = a / (a + 1.0);
        assert!((w[0] - w0).abs() < 1e-15 && (w[1] - (1.0 - w0)).abs() < 1e-15);
        assert!((w[0] - 0.6698).abs() < 5e-5 && (w[1] - 0.3302).abs() < 5e-5);
        assert!((o[0] - 2.0 * w0).abs() < 1e-15 && (o[1] - 2.0 * (1.0 - w0)).abs() < 1e-15);
        assert!((o[0] - 1.3396).abs() < 1e-4 && (o[1] - 0.6604).abs() < 1e-4, "{o:?}");
    }

    #[test]
    fn single_key_returns_projected_value() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        let p = AttnStackParams::init(&mut store, "s", 3, StackConfig::default(), &mut rng).unwrap();
        let mut t = Tape::with_params(&store);
        let q = t.constant(Tensor::from_rows(&[&[0.3, -0.2, 0.9]]));
        let kv = t.constant(Tensor::from_rows(&[&[1.0, 2.0, -1.0]]));
        let out = attend(&mut t, q, kv, &p, 0).unwrap();
        let want = Tensor::from_rows(&[&[1.0, 2.0, -1.0]])
            .matmul(store.get(p.layers[0].wv))
            .unwrap();
        assert_eq!(t.value(out).data(), want.data());
    }

    #[test]
    fn empty_memory_is_an_error() {
        let (store, p) = identity_stack(2, StackConfig::default());
        let mut t = Tape::with_params(&store);
        let q = t.constant(Tensor::from_rows(&[&[1.0, 0.0]]));
        let empty = t.constant(Tensor::zeros(&[0, 2]).unwrap());
        assert!(matches!(attend_stack(&mut t, q, empty, &p), Err(Error::EmptyMemory)));
    }

    #[test]
    fn degenerate_stack_equals_attend() {
        let cfg = StackConfig {
            layers: 1,
            heads: 1,
            residual: false,
            layer_norm: false,
        };
        let mut store = ParamStore::new();
        let p = AttnStackParams::init(&mut store, "s", 3, cfg, &mut Rng::new(9)).unwrap();
        let mut t = Tape::with_params(&store);
        let q = t.constant(Tensor::from_rows(&[&[0.3, -0.2, 0.9]]));
        let kv = t.constant(Tensor::from_rows(&[&[1.0, 2.0, -1.0], &[0.5, 0.0, 0.1]]));
        let a = attend(&mut t, q, kv, &p, 0).unwrap();
        let b = attend_stack(&mut t, q, kv, &p).unwrap();
        assert_eq!(t.value(a), t.value(b));
    }

    #[test]
    fn two_layer_stack_is_manual_composition() {
        let mut store = ParamStore::new();
        let p = AttnStackParams::init(&mut store, "s", 3, StackConfig::default(), &mut Rng::new(4)).unwrap();
        let mut t = Tape::with_params(&store);
        let q = t.constant(Tensor::from_rows(&[&[0.3, -0.2, 0.9]]));
        let kv = t.constant(Tensor::from_rows(&[&[1.0, 2.0, -1.0], &[0.5, 0.0, 0.1], &[-1.0, 0.4, 0.0]]));
        let stacked = attend_stack(&mut t, q, kv, &p).unwrap();
        let mut x = q;
        for j in 0..2 {
            let a = attend(&mut t, x, kv, &p, j).unwrap();
            let r = t.add(a, x).unwrap();
            let (g, b) = (t.param(p.norms[j].gain), t.param(p.norms[j].bias));
            x = t.layer_norm(r, g, b).unwrap();
        }
        assert!(t.value(stacked).max_abs_diff(t.value(x)) < 1e-15);
    }

    #[test]
    fn multi_head_splits_columns() {
        let cfg = StackConfig {
            layers: 1,
            heads: 2,
            residual: false,
            layer_norm: false,
        };
        let mut store = ParamStore::new();
        let p = AttnStackParams::init(&mut store, "s", 4, cfg, &mut Rng::new(2)).unwrap();
        let mut t = Tape::with_params(&store);
        let q = t.constant(Tensor::from_rows(&[&[0.3, -0.2, 0.9, 0.1]]));
        let kv = t.constant(Tensor::from_rows(&[&[1.0, 2.0, -1.0, 0.0], &[0.5, 0.0, 0.1, 1.0]]));
        let out = attend_stack(&mut t, q, kv, &p).unwrap();
        // head h: softmax over (q Wq)[h] · (K Wk)[h]ᵀ / √2, applied to (V Wv)[h]
        let qp = t.value(q).matmul(store.get(p.layers[0].wq)).unwrap();
        let kp = t.value(kv).matmul(store.get(p.layers[0].wk)).unwrap();
        let vp = t.value(kv).matmul(store.get(p.layers[0].wv)).unwrap();
        let mut want = vec![0.0; 4];
        for h in 0..2 {
            let s: Vec<f64> = (0..2)
                .map(|m| (0..2).map(|c| qp.get(0, 2 * h + c) * kp.get(m, 2 * h + c)).sum::<f64>() / 2f64.sqrt())
                .collect();
            let mx = s[0].max(s[1]);
            let e: Vec<f64> = s.iter().map(|x| (x - mx).exp()).collect();
            for c in 0..2 {
                want[2 * h + c] = (e[0] * vp.get(0, 2 * h + c) + e[1] * vp.get(1, 2 * h + c)) / (e[0] + e[1]);
            }
        }
        for (a, b) in t.value(out).data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(StackConfig { heads: 3, ..cfg }.validate(4).is_err());
    }

    #[test]
    fn stack_gradients_pass_grad_check() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(21);
        let p = AttnStackParams::init(&mut store, "s", 3, StackConfig::default(), &mut rng).unwrap();
        let qid = store.add("q", glorot(&mut rng, 1, 3)).unwrap();
        let mid = store.add("mem", glorot(&mut rng, 4, 3)).unwrap();
        let r = grad_check(&store, 1e-5, |t| {
            let (q, m) = (t.param(qid), t.param(mid));
            let o = attend_stack(t, q, m, &p)?;
            let w = t.constant(Tensor::from_rows(&[&[0.7, -1.3, 0.4]]));
            let o = t.mul(o, w)?;
            t.sum_all(o)
        })
        .unwrap();
        assert!(r.max_rel_err() < 1e-5, "{:?}", r.worst());
    }
}
