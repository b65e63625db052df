//! Cross-modal consistency, binary and categorical cross-entropy.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    /// Temperature τ.
    pub tau: f64,
    /// Add the positive pair to the denominator (standard InfoNCE).
    pub include_positive: bool,
    /// Weight λ of the consistency term.
    pub lambda: f64,
    /// Average the vis→key and key→vis directions.
    pub bidirectional: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 1.0,
            include_positive: false,
            lambda: 1.0,
            bidirectional: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn one_direction(tape: &mut Tape, sims: Var, off_diag: Option<Var>) -> Result<Var> {
    let e = tape.exp(sims)?;
    let e = match off_diag {
        Some(mask) => tape.mul(e, mask)?,
        None => e,
    };
    let denom = tape.sum_cols(e)?;
    let log_denom = tape.log(denom)?;
    let pos = tape.diag(sims)?;
    let per_anchor = tape.sub(log_denom, pos)?;
    tape.mean_all(per_anchor)
}

/// Mean over anchors `i` of `−log(exp(s_ii) / Σ_{k≠i} exp(s_ik))` with
/// `s_ik = cos(vis_i, key_k) / τ`. Row `b` of `vis` and `key` is the positive pair.
pub fn consistency_loss(tape: &mut Tape, vis: Var, key: Var, ids: &[u64], cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let b = tape.value(vis).rows();
    if tape.value(key).shape() != tape.value(vis).shape() || ids.len() != b {
        return Err(Error::Dimension {
            op: "consistency_loss",
            lhs: tape.value(vis).shape(),
            rhs: tape.value(key).shape(),
        });
    }
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let mut seen = HashSet::with_capacity(b);
    for &id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
    }
    let cos = tape.cosine_matrix(vis, key)?;
    let sims = tape.scale(cos, 1.0 / cfg.tau)?;
    let mask = if cfg.include_positive {
        None
    } else {
        let data = (0..b * b).map(|j| f64::from(j / b != j % b)).collect();
        Some(tape.constant(Tensor::matrix(b, b, data)?))
    };
    let forward = one_direction(tape, sims, mask)?;
    if !cfg.bidirectional {
        return Ok(forward);
    }
    let sims_t = tape.transpose(sims)?;
    let backward = one_direction(tape, sims_t, mask)?;
    let both = tape.add(forward, backward)?;
    tape.scale(both, 0.5)
}

/// Refined query pairs of one video, rows `r = t·N + i`.
#[derive(Clone, Copy, Debug)]
pub struct VideoPairs {
    pub vis: Var,
    pub key: Var,
    pub clips: usize,
    pub actors: usize,
}

/// Consistency over a batch of videos with negatives drawn from the other
/// actors of the same clip: one loss per (video, clip), then the mean over
/// those groups. Clips with a single actor are skipped.
pub fn grouped_consistency(tape: &mut Tape, videos: &[VideoPairs], cfg: &LossConfig) -> Result<Var> {
    let mut terms = Vec::new();
    let mut largest = 0;
    for v in videos {
        largest = largest.max(v.actors);
        if v.actors < 2 {
            continue;
        }
        let ids: Vec<u64> = (0..v.actors as u64).collect();
        for t in 0..v.clips {
            let rows: Vec<usize> = (t * v.actors..(t + 1) * v.actors).collect();
            let vis = tape.gather_rows(v.vis, &rows)?;
            let key = tape.gather_rows(v.key, &rows)?;
            terms.push(consistency_loss(tape, vis, key, &ids, cfg)?);
        }
    }
    if terms.is_empty() {
        return Err(Error::BatchTooSmall(largest));
    }
    let n = terms.len();
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    tape.scale(acc, 1.0 / n as f64)
}

/// Mean binary cross-entropy of scores against 0/1 targets.
pub fn bce_loss(tape: &mut Tape, scores: Var, targets: &Tensor) -> Result<Var> {
    tape.bce(scores, targets)
}

/// Mean of `−log p[target]` over rows of a probability matrix.
pub fn ce_loss(tape: &mut Tape, probs: Var, targets: &[usize]) -> Result<Var> {
    let c = tape.value(probs).cols();
    if let Some(bad) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::InvalidTarget(format!("class {bad} out of range for {c} classes")));
    }
    tape.nll(probs, targets)
}

/// `task + λ·consistency`; without a consistency term this is the task loss.
pub fn total_loss(tape: &mut Tape, task: Var, consistency: Option<Var>, cfg: &LossConfig) -> Result<Var> {
    match consistency {
        None => Ok(task),
        Some(cc) => {
            let w = tape.scale(cc, cfg.lambda)?;
            tape.add(task, w)
        }
    }
}
