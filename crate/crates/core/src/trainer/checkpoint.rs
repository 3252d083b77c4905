//! Versioned binary checkpoints: resolved config, rig, every parameter
//! tensor with its Adam state, epoch counter. Round-trips bit-exactly, so a
//! resumed run continues the unbroken run's trajectory.

use super::{TrainError, TrainerState};
use crate::autodiff::{ParamTensor, ParameterStore};
use crate::config::Config;
use crate::fields::{FieldBundle, FieldConfig};
use crate::rig::{rig_from_text, rig_to_text, RigDefinition};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"GSAVCKPT";
const VERSION: u32 = 1;

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(bytes.len() as u64)?;
    w.write_all(bytes)
}

fn read_bytes<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(values.len() as u64)?;
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R) -> std::io::Result<Vec<f64>> {
    let len = r.read_u64::<LittleEndian>()? as usize;
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(r.read_f64::<LittleEndian>()?);
    }
    Ok(out)
}

pub fn save_checkpoint(
    state: &TrainerState,
    rig: &RigDefinition,
    path: &Path,
) -> Result<(), TrainError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let io = |e: std::io::Error| TrainError::Io(e);
    (|| -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        write_bytes(&mut w, state.config.dump().as_bytes())?;
        write_bytes(&mut w, rig_to_text(rig).as_bytes())?;
        w.write_u64::<LittleEndian>(state.epoch as u64)?;
        let names: Vec<&str> = state.store.names().collect();
        w.write_u32::<LittleEndian>(names.len() as u32)?;
        for name in names {
            let t = state.store.get(name).unwrap();
            write_bytes(&mut w, name.as_bytes())?;
            w.write_u64::<LittleEndian>(t.step)?;
            write_f64s(&mut w, &t.value)?;
            write_f64s(&mut w, &t.m)?;
            write_f64s(&mut w, &t.v)?;
        }
        Ok(())
    })()
    .map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainerState, RigDefinition), TrainError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TrainError::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(TrainError::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {VERSION}"
        )));
    }
    let config_text = String::from_utf8(read_bytes(&mut r)?)
        .map_err(|_| TrainError::Checkpoint("config block is not utf-8".into()))?;
    let mut config = Config::default();
    config
        .apply_text(&config_text)
        .map_err(|e| TrainError::Checkpoint(format!("embedded config: {e}")))?;
    let rig_text = String::from_utf8(read_bytes(&mut r)?)
        .map_err(|_| TrainError::Checkpoint("rig block is not utf-8".into()))?;
    let (rig, _) =
        rig_from_text(&rig_text).map_err(|e| TrainError::Checkpoint(format!("embedded rig: {e}")))?;
    let epoch = r.read_u64::<LittleEndian>()? as usize;
    let n_tensors = r.read_u32::<LittleEndian>()?;
    let mut store = ParameterStore::new();
    for _ in 0..n_tensors {
        let name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| TrainError::Checkpoint("tensor name is not utf-8".into()))?;
        let step = r.read_u64::<LittleEndian>()?;
        let value = read_f64s(&mut r)?;
        let m = read_f64s(&mut r)?;
        let v = read_f64s(&mut r)?;
        let grad = vec![0.0; value.len()];
        store.insert_tensor(&name, ParamTensor { value, grad, m, v, step });
    }
    let field_cfg = FieldConfig {
        hidden_width: config.model_hidden_width,
        hidden_layers: config.model_hidden_layers,
        encoding_bands: config.model_encoding_bands,
        offset_cap: config.model_offset_cap,
        n_joints: rig.n_joints,
        n_expressions: rig.n_expressions,
    };
    let bundle = FieldBundle::new(field_cfg);
    let schedule = config.lifecycle_schedule();
    Ok((TrainerState { config, bundle, store, schedule, epoch }, rig))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Config;

    #[test]
    fn roundtrip_preserves_everything() {
        let mut cfg = Config::desk_preset();
        cfg.model_hidden_width = 8;
        cfg.model_hidden_layers = 1;
        cfg.rig_n_expressions = 4;
        let mut state = TrainerState::new(cfg, 3, 4);
        state.epoch = 17;
        // Dirty some optimizer state so the round trip is nontrivial.
        let t = state.store.get_mut(POINTS).unwrap();
        t.step = 33;
        t.m[5] = 0.125;
        t.v[9] = 0.5;
        let rig = crate::synthdata::build_minirig(1, 4, 16).rig;

        let dir = std::env::temp_dir().join("gsav_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("state.ckpt");
        save_checkpoint(&state, &rig, &path).unwrap();
        let (back, rig_back) = load_checkpoint(&path).unwrap();
        assert_eq!(back.epoch, 17);
        assert_eq!(back.config, state.config);
        assert_eq!(rig_back, rig);
        assert_eq!(back.bundle, state.bundle);
        // Bit-exact tensor state.
        for name in state.store.names() {
            let a = state.store.get(name).unwrap();
            let b = back.store.get(name).unwrap();
            assert_eq!(a, b, "tensor {name}");
        }
    }

    use crate::trainer::POINTS_TENSOR as POINTS;

    #[test]
    fn wrong_version_and_magic_are_rejected() {
        let dir = std::env::temp_dir().join("gsav_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPT____").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(TrainError::Checkpoint(_))));

        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(TrainError::Checkpoint(msg)) => assert!(msg.contains("version 99")),
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
