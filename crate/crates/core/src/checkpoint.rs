//! Checkpoints: a directory of CTF tensors plus `manifest.txt`.
//!
//! The manifest holds the run configuration as `key=value` lines followed by
//! one `param.<name>=<d0>x<d1>` line per tensor. Tensor `<name>` is stored in
//! `params/<name>.ctf`.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::ctf;
use crate::error::{Error, Result};
use crate::model::Model;

pub const MANIFEST: &str = "manifest.txt";

fn dims_text(dims: &[usize]) -> String {
    dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

/// Write `model` under `dir`, overwriting earlier files with the same names.
pub fn save(dir: &Path, cfg: &RunConfig, model: &Model) -> Result<()> {
    let params = dir.join("params");
    fs::create_dir_all(&params).map_err(|e| Error::io(&params, e))?;
    let mut manifest = cfg.to_text();
    for (_, name, t) in model.store.iter() {
        ctf::write(&params.join(format!("{name}.ctf")), t)?;
        manifest.push_str(&format!("param.{name}={}\n", dims_text(t.dims())));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Rebuild the model saved under `dir`.
pub fn load(dir: &Path) -> Result<(RunConfig, Model)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut cfg_text = String::new();
    let mut shapes = Vec::new();
    for line in text.lines() {
        match line.strip_prefix("param.").and_then(|l| l.split_once('=')) {
            Some((name, dims)) => shapes.push((name.to_string(), dims.trim().to_string())),
            None => {
                cfg_text.push_str(line);
                cfg_text.push('\n');
            }
        }
    }
    let cfg = RunConfig::parse(&cfg_text)?;
    let mut model = Model::init(cfg.model.clone(), 0)?;
    if shapes.len() != model.store.len() {
        return Err(Error::config(format!(
            "{}: lists {} tensors, the configured model has {}",
            path.display(),
            shapes.len(),
            model.store.len()
        )));
    }
    for (name, dims) in shapes {
        let id = model.store.find(&name).ok_or_else(|| {
            Error::config(format!("{}: unknown parameter {name}", path.display()))
        })?;
        let file = dir.join("params").join(format!("{name}.ctf"));
        let t = ctf::read(&file)?;
        let expected = dims_text(model.store.get(id).dims());
        if dims_text(t.dims()) != expected || dims != expected {
            return Err(Error::DataShape {
                path: file,
                expected,
                found: t.dims().to_vec(),
            });
        }
        model.store.get_mut(id).assign(t.data())?;
    }
    Ok((cfg, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::toy();
        let mut model = Model::init(cfg.model.clone(), 3).unwrap();
        for id in model.store.ids().collect::<Vec<_>>() {
            let q = ctf::quantize(model.store.get(id));
            model.store.get_mut(id).assign(q.data()).unwrap();
        }
        save(dir.path(), &cfg, &model).unwrap();
        let (cfg2, model2) = load(dir.path()).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(model2.store, model.store);
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::toy();
        let model = Model::init(cfg.model.clone(), 3).unwrap();
        save(dir.path(), &cfg, &model).unwrap();
        let m = dir.path().join(MANIFEST);
        let text = fs::read_to_string(&m).unwrap().replace("hidden=6", "hidden=7");
        fs::write(&m, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::DataShape { .. })));
    }
}
