//! Model persistence.
//!
//! Single models are a small binary format: magic "MLR1", dimensions,
//! 64-bit little-endian weights, the ridge scale, the cached output
//! weights, then the fitted transform and config echo as length-prefixed
//! JSON blocks. Ensembles are a directory of member files plus a JSON
//! manifest.

use crate::data::Transform;
use crate::ensemble::{EnsembleKind, EnsembleModel};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{HeadKind, MlrConfig, ModelParams, TaskKind, TrainedModel};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 4] = b"MLR1";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn matrix(&mut self, m: &Matrix) {
        self.u32(m.rows() as u32);
        self.u32(m.cols() as u32);
        for &v in m.data() {
            self.f64(v as f64);
        }
    }

    fn json_block<T: Serialize>(&mut self, value: &T) -> Result<()> {
        let text = serde_json::to_vec(value)
            .map_err(|e| Error::InvalidModelFile(format!("serialize: {e}")))?;
        self.u64(text.len() as u64);
        self.buf.extend_from_slice(&text);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::InvalidModelFile("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        if rows.saturating_mul(cols) > 1 << 28 {
            return Err(Error::InvalidModelFile("matrix too large".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64()? as crate::matrix::Real);
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }

    fn json_block<T: for<'de> Deserialize<'de>>(&mut self) -> Result<T> {
        let len = self.u64()? as usize;
        let bytes = self.take(len)?;
        serde_json::from_slice(bytes)
            .map_err(|e| Error::InvalidModelFile(format!("deserialize: {e}")))
    }
}

/// A model together with the preprocessing that feeds it.
pub struct SavedModel {
    pub model: TrainedModel,
    pub transform: Transform,
}

pub fn save_model(path: &Path, model: &TrainedModel, transform: &Transform) -> Result<()> {
    let w_out = model.w_out.as_ref().ok_or(Error::NotFinalized)?;
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u8(match model.config.task {
        TaskKind::Regression => 0,
        TaskKind::Classification => 1,
    });
    w.u8(match model.config.head {
        HeadKind::Ridge => 0,
        HeadKind::LearnedMse => 1,
    });
    w.u32(model.config.depth as u32);
    let d = if model.params.weights.is_empty() {
        w_out.rows()
    } else {
        model.params.weights[0].rows()
    };
    w.u32(d as u32);
    w.u32(model.config.width as u32);
    w.u32(model.params.weights.len() as u32);
    for (wm, bm) in model.params.weights.iter().zip(model.params.biases.iter()) {
        w.matrix(wm);
        w.matrix(bm);
    }
    w.u8(model.params.head_weights.is_some() as u8);
    if let Some(h) = &model.params.head_weights {
        w.matrix(h);
    }
    w.f64(model.params.log_lambda as f64);
    w.f64(model.lambda as f64);
    w.matrix(w_out);
    w.json_block(transform)?;
    w.json_block(&model.config)?;

    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&w.buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader::new(&bytes);
    if r.take(4)? != MAGIC {
        return Err(Error::InvalidModelFile(format!(
            "{} does not start with the model magic",
            path.display()
        )));
    }
    let task = match r.u8()? {
        0 => TaskKind::Regression,
        1 => TaskKind::Classification,
        k => return Err(Error::InvalidModelFile(format!("unknown task byte {k}"))),
    };
    let head = match r.u8()? {
        0 => HeadKind::Ridge,
        1 => HeadKind::LearnedMse,
        k => return Err(Error::InvalidModelFile(format!("unknown head byte {k}"))),
    };
    let depth = r.u32()? as usize;
    let _d = r.u32()? as usize;
    let _width = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    if n_layers > 8 {
        return Err(Error::InvalidModelFile("layer count out of range".into()));
    }
    let mut weights = Vec::with_capacity(n_layers);
    let mut biases = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        weights.push(r.matrix()?);
        biases.push(r.matrix()?);
    }
    let head_weights = if r.u8()? == 1 { Some(r.matrix()?) } else { None };
    let log_lambda = r.f64()? as crate::matrix::Real;
    let lambda = r.f64()? as crate::matrix::Real;
    let w_out = r.matrix()?;
    let transform: Transform = r.json_block()?;
    let config: MlrConfig = r.json_block()?;
    if config.task != task || config.depth != depth || config.head != head {
        return Err(Error::InvalidModelFile(
            "header disagrees with config echo".into(),
        ));
    }
    Ok(SavedModel {
        model: TrainedModel {
            config,
            params: ModelParams {
                weights,
                biases,
                head_weights,
                log_lambda,
            },
            lambda,
            w_out: Some(w_out),
        },
        transform,
    })
}

#[derive(Serialize, Deserialize)]
struct EnsembleManifest {
    kind: EnsembleKind,
    task: TaskKind,
    val_scores: Vec<crate::matrix::Real>,
    members: Vec<String>,
}

/// Write member files plus `ensemble.json` into `dir`; returns the
/// manifest path.
pub fn save_ensemble(dir: &Path, ensemble: &EnsembleModel, transform: &Transform) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut member_files = Vec::new();
    for (i, member) in ensemble.members.iter().enumerate() {
        let name = format!("member_{i:02}.mlr");
        save_model(&dir.join(&name), member, transform)?;
        member_files.push(name);
    }
    let manifest = EnsembleManifest {
        kind: ensemble.spec.kind,
        task: ensemble.task,
        val_scores: ensemble.val_scores.clone(),
        members: member_files,
    };
    let path = dir.join("ensemble.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::InvalidModelFile(format!("manifest: {e}")))?;
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Anything `predict` can run: one model or an aggregated pool.
pub enum LoadedArtifact {
    Single(SavedModel),
    Ensemble {
        kind: EnsembleKind,
        task: TaskKind,
        members: Vec<TrainedModel>,
        val_scores: Vec<crate::matrix::Real>,
        transform: Transform,
    },
}

impl LoadedArtifact {
    pub fn task(&self) -> TaskKind {
        match self {
            LoadedArtifact::Single(s) => s.model.config.task,
            LoadedArtifact::Ensemble { task, .. } => *task,
        }
    }

    pub fn transform(&self) -> &Transform {
        match self {
            LoadedArtifact::Single(s) => &s.transform,
            LoadedArtifact::Ensemble { transform, .. } => transform,
        }
    }
}

/// Load a `.mlr` file or an `ensemble.json` manifest.
pub fn load_artifact(path: &Path) -> Result<LoadedArtifact> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(MAGIC) {
        return Ok(LoadedArtifact::Single(load_model(path)?));
    }
    let manifest: EnsembleManifest = serde_json::from_slice(&bytes)
        .map_err(|e| Error::InvalidModelFile(format!("not a model file or manifest: {e}")))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut members = Vec::new();
    let mut transform = None;
    for name in &manifest.members {
        let saved = load_model(&dir.join(name))?;
        transform.get_or_insert(saved.transform);
        members.push(saved.model);
    }
    let transform =
        transform.ok_or_else(|| Error::InvalidModelFile("manifest has no members".into()))?;
    Ok(LoadedArtifact::Ensemble {
        kind: manifest.kind,
        task: manifest.task,
        members,
        val_scores: manifest.val_scores,
        transform,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{synthetic_dataset, SyntheticKind};
    use crate::ensemble::{train_ensemble, EnsembleSpec};
    use crate::train::train;

    #[test]
    fn model_roundtrip_is_exact() {
        let ds = synthetic_dataset(SyntheticKind::Linear, 50, 4, 0.6, 3);
        let cfg = MlrConfig {
            depth: 2,
            width: 8,
            permutations: 2,
            max_iter: Some(8),
            budget_seconds: None,
            seed: 5,
            ..MlrConfig::default()
        };
        let (model, _) = train(&cfg, &ds.x, &ds.y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mlr");
        save_model(&path, &model, &ds.transform).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.transform, ds.transform);
        let p1 = model.predict_raw(&ds.x).unwrap();
        let p2 = loaded.model.predict_raw(&ds.x).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn corrupt_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mlr");
        std::fs::write(&path, b"not a model").unwrap();
        assert!(matches!(
            load_model(&path),
            Err(Error::InvalidModelFile(_))
        ));
    }

    #[test]
    fn ensemble_roundtrip() {
        let ds = synthetic_dataset(SyntheticKind::Linear, 50, 4, 0.6, 9);
        let base = MlrConfig {
            width: 8,
            permutations: 2,
            max_iter: Some(6),
            budget_seconds: None,
            ..MlrConfig::default()
        };
        let spec = EnsembleSpec {
            kind: crate::ensemble::EnsembleKind::Bag,
            depths: vec![1; 3],
        };
        let ensemble = train_ensemble(&spec, &base, &ds.x, &ds.y, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_ensemble(dir.path(), &ensemble, &ds.transform).unwrap();
        match load_artifact(&manifest).unwrap() {
            LoadedArtifact::Ensemble {
                members,
                val_scores,
                ..
            } => {
                assert_eq!(members.len(), 3);
                assert_eq!(val_scores, ensemble.val_scores);
                let p1 = ensemble.predict(&ds.x).unwrap();
                let p2 = crate::ensemble::ensemble_predict(
                    &members,
                    &val_scores,
                    crate::ensemble::EnsembleKind::Bag,
                    TaskKind::Regression,
                    &ds.x,
                )
                .unwrap();
                assert_eq!(p1, p2);
            }
            _ => panic!("expected ensemble"),
        }
    }
}
