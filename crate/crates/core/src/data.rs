//! Video records, the synthetic generator and manifest IO.
//!
//! A manifest is a text file with one record per line:
//!
//! ```text
//! # video_id T N context vis key labels
//! v0000 8 3 v0000.context.ctf v0000.vis.ctf v0000.key.ctf v0000.labels.ctf
//! ```
//!
//! Paths are relative to the manifest's directory. See `docs/manifest.md`.

use std::fs;
use std::path::{Path, PathBuf};

use statrs::distribution::{ContinuousCDF, Normal};

use crate::ctf;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Number of skeleton keypoints; each carries `(x, y, confidence)`.
pub const KEYPOINTS: usize = 17;
pub const KEYPOINT_DIM: usize = KEYPOINTS * 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskMode {
    /// Per actor and clip multi-label scores.
    Stal,
    /// One class per video.
    Gar,
}

impl std::str::FromStr for TaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "stal" => Ok(TaskMode::Stal),
            "gar" => Ok(TaskMode::Gar),
            _ => Err(Error::config(format!("unknown task mode {s}"))),
        }
    }
}

impl std::fmt::Display for TaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskMode::Stal => "stal",
            TaskMode::Gar => "gar",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    /// Multi-hot `T×N×C`.
    Stal(Tensor),
    /// Video class.
    Gar(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    /// `T×S×D` context tokens.
    pub context: Tensor,
    /// `T×N×D` per-actor appearance features.
    pub vis: Tensor,
    /// `T×N×D` pose embeddings, or `T×N×51` raw keypoints.
    pub key: Tensor,
    pub labels: Labels,
}

impl VideoRecord {
    pub fn clips(&self) -> usize {
        self.vis.dims()[0]
    }

    pub fn actors(&self) -> usize {
        self.vis.dims()[1]
    }

    pub fn tokens(&self) -> usize {
        self.context.dims()[1]
    }

    pub fn dim(&self) -> usize {
        self.vis.dims()[2]
    }

    pub fn key_dim(&self) -> usize {
        self.key.dims()[2]
    }

    pub fn mode(&self) -> TaskMode {
        match self.labels {
            Labels::Stal(_) => TaskMode::Stal,
            Labels::Gar(_) => TaskMode::Gar,
        }
    }

    /// Label bits of actor `i` at clip `t` (STAL), or the one-hot video class (GAR).
    pub fn label_row(&self, t: usize, i: usize, classes: usize) -> Vec<f64> {
        match &self.labels {
            Labels::Stal(y) => {
                let c = y.dims()[2];
                let off = (t * self.actors() + i) * c;
                y.data()[off..off + c].to_vec()
            }
            Labels::Gar(g) => (0..classes).map(|c| f64::from(c == *g)).collect(),
        }
    }

    /// Check internal consistency of shapes.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, t: &Tensor| Error::InvalidShape {
            dims: t.dims().to_vec(),
            reason: format!("{}: {what}", self.id),
        };
        for (name, t) in [("context", &self.context), ("vis", &self.vis), ("key", &self.key)] {
            if t.shape().rank() != 3 {
                return Err(bad(&format!("{name} must be rank 3"), t));
            }
        }
        let (tc, n, d) = (self.clips(), self.actors(), self.dim());
        if tc == 0 || n == 0 || self.tokens() == 0 {
            return Err(bad("T, N and S must be positive", &self.vis));
        }
        if self.context.dims()[0] != tc || self.context.dims()[2] != d {
            return Err(bad("context must be T×S×D", &self.context));
        }
        if self.key.dims()[..2] != [tc, n] {
            return Err(bad("key must be T×N×K", &self.key));
        }
        if let Labels::Stal(y) = &self.labels {
            if y.shape().rank() != 3 || y.dims()[..2] != [tc, n] {
                return Err(bad("labels must be T×N×C", y));
            }
            if y.data().iter().any(|v| *v != 0.0 && *v != 1.0) {
                return Err(Error::InvalidTarget(format!("{}: labels must be 0/1", self.id)));
            }
        }
        Ok(())
    }
}

/// Knobs of the synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub videos: usize,
    pub clips: usize,
    pub actors: usize,
    pub tokens: usize,
    pub dim: usize,
    pub classes: usize,
    pub mode: TaskMode,
    /// Observation noise σ.
    pub noise: f64,
    /// Share ρ of each label's evidence that sits in a neighbouring clip.
    pub temporal: f64,
    /// Share of classes visible to vis only, key only, and to both.
    pub split: [f64; 3],
    pub raw_keypoints: bool,
    /// Prior probability of a positive label bit (STAL).
    pub positive_rate: f64,
    /// Correlation between the action codes of two actors in one clip, at
    /// least `−1/(actors − 1)`; negative values make co-occurring actors differ.
    /// Ignored for single-actor videos.
    pub actor_correlation: f64,
    /// Evidence amplitude for single-modality classes.
    pub amplitude: f64,
    /// Evidence amplitude per modality for jointly observed classes.
    pub joint_amplitude: f64,
    /// Norm of each actor's identity offset (drawn independently per modality).
    pub identity: f64,
    /// Norm of the scene component shared by a clip's actors and context.
    pub scene: f64,
    /// Angle in radians the scene turns between consecutive clips.
    pub scene_step: f64,
    /// Weight of each actor's appearance copied into its context cell.
    pub context_gain: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 0,
            videos: 768,
            clips: 6,
            actors: 3,
            tokens: 4,
            dim: 16,
            classes: 6,
            mode: TaskMode::Stal,
            noise: 0.3,
            temporal: 0.5,
            split: [0.4, 0.2, 0.4],
            raw_keypoints: false,
            positive_rate: 0.3,
            actor_correlation: -0.5,
            amplitude: 1.0,
            joint_amplitude: 0.6,
            identity: 2.0,
            scene: 3.0,
            scene_step: std::f64::consts::FRAC_PI_4,
            context_gain: 0.6,
        }
    }
}

/// Which modalities carry a class's evidence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassKind {
    VisOnly,
    KeyOnly,
    Joint,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.split.iter().any(|f| *f < 0.0) {
            return Err(Error::config(format!("modality split {:?} must be nonnegative and sum to 1", self.split)));
        }
        if self.noise < 0.0 {
            return Err(Error::config("noise must be >= 0"));
        }
        for (name, v) in [
            ("temporal", self.temporal),
            ("positive_rate", self.positive_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{name} must lie in [0, 1]")));
            }
        }
        // a single actor has no partner, so any value is accepted
        let floor = -1.0 / (self.actors.max(2) - 1) as f64;
        if self.actors > 1 && !(floor - 1e-12..=1.0).contains(&self.actor_correlation) {
            return Err(Error::config(format!("actor_correlation must lie in [{floor}, 1]")));
        }
        if self.clips == 0 || self.actors == 0 || self.tokens == 0 || self.dim == 0 || self.classes == 0 {
            return Err(Error::config("clips, actors, tokens, dim and classes must be positive"));
        }
        Ok(())
    }

    /// Class kinds by largest-remainder apportionment of `split`, in the order vis, key, joint.
    pub fn class_kinds(&self) -> Vec<ClassKind> {
        let c = self.classes as f64;
        let quotas: Vec<f64> = self.split.iter().map(|f| f * c).collect();
        let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = quotas[a] - quotas[a].floor();
            let rb = quotas[b] - quotas[b].floor();
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut left = self.classes - counts.iter().sum::<usize>();
        for &k in &order {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        let kinds = [ClassKind::VisOnly, ClassKind::KeyOnly, ClassKind::Joint];
        counts
            .iter()
            .zip(kinds)
            .flat_map(|(&n, k)| std::iter::repeat_n(k, n))
            .collect()
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `count` unit vectors in `R^d`, mutually orthogonal for as long as `d` allows.
fn frame(rng: &mut Rng, d: usize, count: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    for j in 0..count {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        if j < d {
            for u in &out {
                let p = dot(&v, u);
                axpy(&mut v, -p, u);
            }
        }
        let n = dot(&v, &v).sqrt();
        out.push(v.into_iter().map(|x| x / n).collect());
    }
    out
}

/// Fixed directions of one dataset. In each modality the frame is, in order:
/// two scene axes, two identity axes, then per class the direction for
/// evidence at the labelled clip and the one for shifted evidence.
struct Directions {
    scene: [Vec<f64>; 2],
    vis_identity: [Vec<f64>; 2],
    key_identity: [Vec<f64>; 2],
    vis_now: Vec<Vec<f64>>,
    vis_shift: Vec<Vec<f64>>,
    key_now: Vec<Vec<f64>>,
    key_shift: Vec<Vec<f64>>,
    /// `D×51` map from pose vectors to keypoint logits.
    kp_map: Vec<f64>,
}

fn directions(cfg: &SyntheticConfig) -> Directions {
    let mut rng = Rng::derive(cfg.seed, 1);
    let (d, c) = (cfg.dim, cfg.classes);
    let split = |rng: &mut Rng| {
        let mut f = frame(rng, d, 4 + 2 * c).into_iter();
        let mut take = |n: usize| (&mut f).take(n).collect::<Vec<_>>();
        let scene = take(2);
        let identity = take(2);
        let classes = take(2 * c);
        let now = classes.iter().step_by(2).cloned().collect::<Vec<_>>();
        let shift = classes.iter().skip(1).step_by(2).cloned().collect::<Vec<_>>();
        (scene, identity, now, shift)
    };
    let (scene, vis_identity, vis_now, vis_shift) = split(&mut rng);
    let (_, key_identity, key_now, key_shift) = split(&mut rng);
    let scale = 2.0 / (d as f64).sqrt();
    let kp_map = (0..d * KEYPOINT_DIM).map(|_| scale * rng.normal()).collect();
    let pair = |v: Vec<Vec<f64>>| -> [Vec<f64>; 2] { v.try_into().expect("two axes") };
    Directions {
        scene: pair(scene),
        vis_identity: pair(vis_identity),
        key_identity: pair(key_identity),
        vis_now,
        vis_shift,
        key_now,
        key_shift,
        kp_map,
    }
}

/// Clip offset at which class `c`'s shifted evidence appears (`+1` or `-1`).
pub fn shift_of(c: usize) -> isize {
    if c % 2 == 0 {
        1
    } else {
        -1
    }
}

/// Draw a dataset. Labels depend only on the label stream of each video, so
/// changing `noise` leaves them unchanged.
pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<VideoRecord>> {
    cfg.validate()?;
    let dirs = directions(cfg);
    let kinds = cfg.class_kinds();
    (0..cfg.videos)
        .map(|v| generate_video(cfg, &dirs, &kinds, v))
        .collect()
}

/// Latent action codes `z` and labels `y`, both `T·N·C` row-major.
///
/// STAL codes are standard normal, correlated across the actors of a clip by
/// `actor_correlation`; a bit is on when its
/// code clears the `1 − positive_rate` quantile. GAR codes are `±1` around
/// the video's class.
fn draw_codes(cfg: &SyntheticConfig, rng: &mut Rng) -> (Option<usize>, Vec<f64>, Vec<f64>) {
    let (tc, n, c) = (cfg.clips, cfg.actors, cfg.classes);
    let mut y = vec![0.0; tc * n * c];
    if cfg.mode == TaskMode::Gar {
        let g = rng.index(c);
        for r in 0..tc * n {
            y[r * c + g] = 1.0;
        }
        let z = y.iter().map(|b| 2.0 * b - 1.0).collect();
        return (Some(g), z, y);
    }
    let threshold = if cfg.positive_rate <= 0.0 {
        f64::INFINITY
    } else if cfg.positive_rate >= 1.0 {
        f64::NEG_INFINITY
    } else {
        Normal::standard().inverse_cdf(1.0 - cfg.positive_rate)
    };
    // equicorrelated normals: own draws centred over the clip's actors plus a shared draw
    let r = cfg.actor_correlation;
    let (own, shared) = ((1.0 - r).sqrt(), (r + (1.0 - r) / n as f64).max(0.0).sqrt());
    let mut z = vec![0.0; tc * n * c];
    for t in 0..tc {
        for k in 0..c {
            let group = rng.normal();
            let e: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let mean = e.iter().sum::<f64>() / n as f64;
            for i in 0..n {
                let r = (t * n + i) * c + k;
                z[r] = own * (e[i] - mean) + shared * group;
                y[r] = f64::from(z[r] > threshold);
            }
        }
    }
    (None, z, y)
}

/// Independent uniform angles, redrawn until every pair is at least `π/n`
/// apart so that no two actors look alike. Gives up after a fixed number of
/// draws and keeps the last one.
fn identity_angles(rng: &mut Rng, n: usize) -> Vec<f64> {
    use std::f64::consts::{PI, TAU};
    let min_gap = PI / n as f64;
    let mut angles = Vec::new();
    for _ in 0..1000 {
        angles = (0..n).map(|_| rng.uniform_range(0.0, TAU)).collect();
        let far = |a: f64, b: f64| {
            let d = (a - b).rem_euclid(TAU);
            d.min(TAU - d) >= min_gap
        };
        if (0..n).all(|i| (i + 1..n).all(|j| far(angles[i], angles[j]))) {
            break;
        }
    }
    angles
}

fn generate_video(cfg: &SyntheticConfig, dirs: &Directions, kinds: &[ClassKind], v: usize) -> Result<VideoRecord> {
    let (tc, n, s, d, c) = (cfg.clips, cfg.actors, cfg.tokens, cfg.dim, cfg.classes);
    let mut label_rng = Rng::derive(cfg.seed, 1000 + 2 * v as u64);
    let mut rng = Rng::derive(cfg.seed, 1001 + 2 * v as u64);

    let (gar_class, z, y) = draw_codes(cfg, &mut label_rng);
    let code = |t: usize, i: usize, k: usize| z[(t * n + i) * c + k];

    let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
    let scene: Vec<Vec<f64>> = (0..tc)
        .map(|t| {
            let a = phase + cfg.scene_step * t as f64;
            let mut s = vec![0.0; d];
            axpy(&mut s, cfg.scene * a.cos(), &dirs.scene[0]);
            axpy(&mut s, cfg.scene * a.sin(), &dirs.scene[1]);
            s
        })
        .collect();
    let mut identity = |axes: &[Vec<f64>; 2]| -> Vec<Vec<f64>> {
        identity_angles(&mut rng, n)
            .into_iter()
            .map(|a| {
                let mut v = vec![0.0; d];
                axpy(&mut v, cfg.identity * a.cos(), &axes[0]);
                axpy(&mut v, cfg.identity * a.sin(), &axes[1]);
                v
            })
            .collect()
    };
    let ident_vis = identity(&dirs.vis_identity);
    let ident_key = identity(&dirs.key_identity);

    let rho = cfg.temporal;
    let mut vis = vec![0.0; tc * n * d];
    let mut key = vec![0.0; tc * n * d];
    let mut appearance = vec![0.0; tc * n * d];
    for t in 0..tc {
        for i in 0..n {
            let off = (t * n + i) * d;
            let mut ev = ident_vis[i].clone();
            let mut ek = ident_key[i].clone();
            for (k, kind) in kinds.iter().enumerate() {
                let (av, ak) = match kind {
                    ClassKind::VisOnly => (cfg.amplitude, 0.0),
                    ClassKind::KeyOnly => (0.0, cfg.amplitude),
                    ClassKind::Joint => (cfg.joint_amplitude, cfg.joint_amplitude),
                };
                let now = (1.0 - rho) * code(t, i, k);
                axpy(&mut ev, av * now, &dirs.vis_now[k]);
                axpy(&mut ek, ak * now, &dirs.key_now[k]);
                // evidence about the label at clip t - shift shows up here
                let src = t as isize - shift_of(k);
                if (0..tc as isize).contains(&src) {
                    let shifted = rho * code(src as usize, i, k);
                    axpy(&mut ev, av * shifted, &dirs.vis_shift[k]);
                    axpy(&mut ek, ak * shifted, &dirs.key_shift[k]);
                }
            }
            appearance[off..off + d].copy_from_slice(&ev);
            for j in 0..d {
                vis[off + j] = scene[t][j] + ev[j] + cfg.noise * rng.normal();
                key[off + j] = ek[j] + cfg.noise * rng.normal();
            }
        }
    }

    let mut context = vec![0.0; tc * s * d];
    for t in 0..tc {
        for cell in 0..s {
            let off = (t * s + cell) * d;
            for j in 0..d {
                context[off + j] = scene[t][j] + cfg.noise * rng.normal();
            }
        }
        for i in 0..n {
            let off = (t * s + i % s) * d;
            let src = (t * n + i) * d;
            axpy(&mut context[off..off + d], cfg.context_gain, &appearance[src..src + d]);
        }
    }

    let key = if cfg.raw_keypoints {
        let mut raw = vec![0.0; tc * n * KEYPOINT_DIM];
        for r in 0..tc * n {
            let kv = &key[r * d..(r + 1) * d];
            for o in 0..KEYPOINT_DIM {
                let logit: f64 = (0..d).map(|j| kv[j] * dirs.kp_map[j * KEYPOINT_DIM + o]).sum();
                raw[r * KEYPOINT_DIM + o] = crate::tape::sigmoid(logit);
            }
        }
        Tensor::new(&[tc, n, KEYPOINT_DIM], raw)?
    } else {
        Tensor::new(&[tc, n, d], key)?
    };

    let labels = match gar_class {
        Some(g) => Labels::Gar(g),
        None => Labels::Stal(Tensor::new(&[tc, n, c], y)?),
    };
    Ok(VideoRecord {
        id: format!("v{v:04}"),
        context: ctf::quantize(&Tensor::new(&[tc, s, d], context)?),
        vis: ctf::quantize(&Tensor::new(&[tc, n, d], vis)?),
        key: ctf::quantize(&key),
        labels,
    })
}

fn label_tensor(r: &VideoRecord) -> Result<Tensor> {
    match &r.labels {
        Labels::Stal(y) => Ok(y.clone()),
        Labels::Gar(g) => Tensor::new(&[1], vec![*g as f64]),
    }
}

/// Write each record's tensors next to a `manifest.txt` in `dir`; returns the manifest path.
pub fn save_dataset(dir: &Path, records: &[VideoRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("# video_id T N context vis key labels\n");
    for r in records {
        let names = ["context", "vis", "key", "labels"].map(|k| format!("{}.{k}.ctf", r.id));
        ctf::write(&dir.join(&names[0]), &r.context)?;
        ctf::write(&dir.join(&names[1]), &r.vis)?;
        ctf::write(&dir.join(&names[2]), &r.key)?;
        ctf::write(&dir.join(&names[3]), &label_tensor(r)?)?;
        manifest.push_str(&format!(
            "{} {} {} {}\n",
            r.id,
            r.clips(),
            r.actors(),
            names.join(" ")
        ));
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Expected trailing dimensions, checked while loading.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DataSpec {
    pub dim: usize,
    pub key_dim: usize,
    pub classes: usize,
}

fn shape_err(path: &Path, expected: String, found: &Tensor) -> Error {
    Error::DataShape {
        path: path.to_path_buf(),
        expected,
        found: found.dims().to_vec(),
    }
}

/// Parse a manifest and load every record it lists.
pub fn load_manifest(path: &Path, spec: Option<&DataSpec>) -> Result<Vec<VideoRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let manifest_err = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            line: lineno + 1,
            reason,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(manifest_err(format!("expected 7 fields, found {}", fields.len())));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| manifest_err(format!("{what} must be a non-negative integer, got {s:?}")))
        };
        let (tc, n) = (parse(fields[1], "T")?, parse(fields[2], "N")?);
        let paths: Vec<PathBuf> = fields[3..].iter().map(|p| base.join(p)).collect();
        let context = ctf::read(&paths[0])?;
        let vis = ctf::read(&paths[1])?;
        let key = ctf::read(&paths[2])?;
        let labels_t = ctf::read(&paths[3])?;

        let d = spec.map(|s| s.dim).unwrap_or_else(|| *vis.dims().last().unwrap_or(&0));
        if vis.dims().len() != 3 || vis.dims()[..2] != [tc, n] || vis.dims()[2] != d {
            return Err(shape_err(&paths[1], format!("{tc}x{n}x{d}"), &vis));
        }
        if context.dims().len() != 3 || context.dims()[0] != tc || context.dims()[2] != d {
            return Err(shape_err(&paths[0], format!("{tc}xSx{d}"), &context));
        }
        let key_ok = key.dims().len() == 3
            && key.dims()[..2] == [tc, n]
            && spec.is_none_or(|s| key.dims()[2] == s.key_dim);
        if !key_ok {
            let k = spec.map_or("K".to_string(), |s| s.key_dim.to_string());
            return Err(shape_err(&paths[2], format!("{tc}x{n}x{k}"), &key));
        }
        let labels = match labels_t.dims() {
            [1] => {
                let g = labels_t.data()[0];
                let valid = g >= 0.0 && g.fract() == 0.0 && spec.is_none_or(|s| (g as usize) < s.classes);
                if !valid {
                    return Err(Error::InvalidTarget(format!("{}: class {g}", paths[3].display())));
                }
                Labels::Gar(g as usize)
            }
            [a, b, c] if [*a, *b] == [tc, n] && spec.is_none_or(|s| *c == s.classes) => Labels::Stal(labels_t),
            _ => {
                let c = spec.map_or("C".to_string(), |s| s.classes.to_string());
                return Err(shape_err(&paths[3], format!("{tc}x{n}x{c} or 1"), &labels_t));
            }
        };
        let rec = VideoRecord {
            id: fields[0].to_string(),
            context,
            vis,
            key,
            labels,
        };
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Per-class count of positive label bits.
pub fn class_frequencies(records: &[VideoRecord], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for r in records {
        match &r.labels {
            Labels::Stal(y) => {
                for (j, v) in y.data().iter().enumerate() {
                    if *v == 1.0 {
                        counts[j % classes] += 1;
                    }
                }
            }
            Labels::Gar(g) => counts[*g] += 1,
        }
    }
    counts
}
