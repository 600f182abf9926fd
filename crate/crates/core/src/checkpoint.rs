//! Single-file checkpoints: magic, version, a JSON header describing every
//! tensor, then little-endian `f64` payloads in header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calib::CalibState;
use crate::error::{Error, Result};
use crate::vae::{Adam, AdamConfig, Model, ModelConfig, TrainState};

pub const MAGIC: &[u8; 8] = b"QVAECKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub model: ModelConfig,
    /// Full graph document, for inspection and consistency checks.
    pub graph: serde_json::Value,
    pub beta_eff: f64,
    pub epoch: usize,
    pub step: u64,
    pub calib_gamma: f64,
    pub calib_window: usize,
    pub adam: Option<(AdamConfig, u64)>,
    pub tensors: Vec<TensorEntry>,
    /// Free-form run information (configs, sampler choice).
    pub extra: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: Header,
    pub model: Model,
    pub adam: Option<Adam>,
}

impl Checkpoint {
    /// Rebuilds a resumable training state.
    pub fn into_state(self) -> Result<TrainState> {
        let h = &self.header;
        let calib = CalibState::new(h.beta_eff, h.calib_gamma, h.calib_window)?;
        let adam = self.adam.unwrap_or_else(|| Adam::new(AdamConfig::default()));
        Ok(TrainState { model: self.model, adam, calib, epoch: h.epoch, step: h.step })
    }
}

fn collect(model: &mut Model, adam: Option<&Adam>) -> (Vec<TensorEntry>, Vec<f64>) {
    let mut entries = Vec::new();
    let mut data = Vec::new();
    model.visit_params(&mut |name, v, _| {
        entries.push(TensorEntry { name: name.to_string(), len: v.len() });
        data.extend_from_slice(v);
    });
    model.visit_buffers(&mut |name, v| {
        entries.push(TensorEntry { name: name.to_string(), len: v.len() });
        data.extend_from_slice(v);
    });
    if let Some(a) = adam {
        for (kind, moments) in [("adam.m", &a.m), ("adam.v", &a.v)] {
            for (i, m) in moments.iter().enumerate() {
                entries.push(TensorEntry { name: format!("{kind}.{i}"), len: m.len() });
                data.extend_from_slice(m);
            }
        }
    }
    (entries, data)
}

/// Writes to a temporary sibling and renames it into place.
pub fn save(path: &Path, model: &mut Model, adam: Option<&Adam>, calib: Option<&CalibState>, epoch: usize, step: u64, extra: serde_json::Value) -> Result<()> {
    let (tensors, data) = collect(model, adam);
    let header = Header {
        version: VERSION,
        model: model.config().clone(),
        graph: serde_json::from_str(&model.conn().to_json()?)?,
        beta_eff: model.beta_eff,
        epoch,
        step,
        calib_gamma: calib.map_or(1e-3, CalibState::gamma),
        calib_window: calib.map_or(10, CalibState::window),
        adam: adam.map(|a| (a.cfg, a.t)),
        tensors,
        extra,
    };
    let json = serde_json::to_vec(&header)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(MAGIC)?;
        f.write_all(&VERSION.to_le_bytes())?;
        f.write_all(&(json.len() as u64).to_le_bytes())?;
        f.write_all(&json)?;
        for v in &data {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        f.get_ref().sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_state(path: &Path, state: &mut TrainState, extra: serde_json::Value) -> Result<()> {
    save(path, &mut state.model, Some(&state.adam), Some(&state.calib), state.epoch, state.step, extra)
}

/// Reads only the header.
pub fn read_header(path: &Path) -> Result<Header> {
    let bytes = std::fs::read(path)?;
    Ok(split(&bytes)?.0)
}

fn split(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint format version {version} is not supported by this build (expects {VERSION}); \
             re-create it with a matching release"
        )));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    Ok((header, &bytes[20 + hlen..]))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let (header, payload) = split(&bytes)?;
    let total: usize = header.tensors.iter().map(|t| t.len).sum();
    if payload.len() != total * 8 {
        return Err(Error::Format(format!("payload has {} bytes, header describes {}", payload.len(), total * 8)));
    }
    let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut tensors: std::collections::HashMap<&str, Vec<f64>> = std::collections::HashMap::new();
    for t in &header.tensors {
        tensors.insert(t.name.as_str(), values.by_ref().take(t.len).collect());
    }

    let mut model = Model::new(header.model.clone(), 0)?;
    let stored_graph = crate::graph::Connectivity::from_json(&header.graph.to_string())?;
    if stored_graph != **model.conn() {
        return Err(Error::Format("stored graph does not match the graph rebuilt from the model config".into()));
    }
    let mut missing: Option<String> = None;
    let mut fill = |name: &str, v: &mut [f64]| match tensors.get(name) {
        Some(t) if t.len() == v.len() => v.copy_from_slice(t),
        _ => missing = Some(name.to_string()),
    };
    model.visit_params(&mut |name, v, _| fill(name, v));
    model.visit_buffers(&mut |name, v| fill(name, v));
    if let Some(name) = missing {
        return Err(Error::Format(format!("checkpoint lacks tensor '{name}' or its shape differs")));
    }
    model.beta_eff = header.beta_eff;
    let adam = match header.adam {
        Some((cfg, t)) => {
            let mut a = Adam::new(cfg);
            a.t = t;
            let mut i = 0;
            while let (Some(m), Some(v)) = (tensors.get(format!("adam.m.{i}").as_str()), tensors.get(format!("adam.v.{i}").as_str())) {
                a.m.push(m.clone());
                a.v.push(v.clone());
                i += 1;
            }
            Some(a)
        }
        None => None,
    };
    Ok(Checkpoint { header, model, adam })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vae::tests::tiny_config;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(m: &mut Model) -> Vec<f64> {
        let mut v = Vec::new();
        m.visit_params(&mut |_, p, _| v.extend_from_slice(p));
        m.visit_buffers(&mut |_, p| v.extend_from_slice(p));
        v
    }

    #[test]
    fn round_trip_restores_everything() {
        let mut m = Model::new(tiny_config(9), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        m.prior = crate::rbm::BmParams::random(m.conn().clone(), 1.0, 1.0, &mut rng);
        m.beta_eff = 0.7;
        m.visit_buffers(&mut |_, v| v.iter_mut().enumerate().for_each(|(i, x)| *x = 1.0 + i as f64));
        let mut adam = Adam::new(AdamConfig::default());
        m.visit_params(&mut |_, _, g| g.fill(0.1));
        adam.step(&mut m, 1e-3);
        let calib = CalibState::new(0.7, 2e-3, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        save(&p, &mut m, Some(&adam), Some(&calib), 4, 123, serde_json::json!({"note": "x"})).unwrap();
        let ck = load(&p).unwrap();
        assert_eq!(ck.header.epoch, 4);
        assert_eq!(ck.header.extra["note"], "x");
        let mut back = ck.model.clone();
        assert_eq!(params(&mut back), params(&mut m));
        assert_eq!(back.beta_eff, 0.7);
        assert_eq!(ck.adam.as_ref().unwrap(), &adam);
        let st = ck.into_state().unwrap();
        assert_eq!((st.step, st.calib.gamma(), st.calib.window()), (123, 2e-3, 5));
    }

    #[test]
    fn corrupt_files_are_refused() {
        let mut m = Model::new(tiny_config(4), 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        save(&p, &mut m, None, None, 0, 0, serde_json::Value::Null).unwrap();
        let good = std::fs::read(&p).unwrap();
        let mut bad = good.clone();
        bad[8] = 9;
        std::fs::write(&p, &bad).unwrap();
        let err = load(&p).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
        std::fs::write(&p, &good[..good.len() - 8]).unwrap();
        assert!(load(&p).is_err());
        std::fs::write(&p, b"hello").unwrap();
        assert!(load(&p).is_err());
        std::fs::write(&p, &good).unwrap();
        assert!(load(&p).unwrap().adam.is_none());
        assert_eq!(read_header(&p).unwrap().version, VERSION);
    }
}
