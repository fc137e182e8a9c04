//! Single-file checkpoint container: a plain-text descriptor header followed
//! by named binary tensor sections (parameters, buffers, optional Adam
//! moments). The same tensor framing backs pretrained-encoder weight files.

use std::io::Write;
use std::path::{Path, PathBuf};

use polypseg_tensor::{AdamState, ParamStore, Tensor};

use super::{build_model_with, ArchDescriptor, ModelError, ModelOptions, SegmentationModel};

const CKPT_MAGIC: &str = "POLYPSEG-CKPT v1";
const WEIGHTS_MAGIC: &str = "POLYPSEG-WEIGHTS v1";
const END_MARKER: &[u8; 8] = b"PSEGEND!";

/// Checkpoint identity and training metadata (the tensors live in the file).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub path: PathBuf,
    pub descriptor: ArchDescriptor,
    pub epoch: u32,
    pub config_hash: String,
}

fn corrupt(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint { path: path.to_path_buf(), reason: reason.into() }
}

fn write_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.buf.len() {
            return None;
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

fn read_tensor(cur: &mut Cursor<'_>) -> Option<(String, Tensor<f32>)> {
    let name_len = cur.u32()? as usize;
    if name_len > 4096 {
        return None;
    }
    let name = String::from_utf8(cur.take(name_len)?.to_vec()).ok()?;
    let mut shape = [0usize; 4];
    for d in &mut shape {
        *d = cur.u32()? as usize;
    }
    let numel: usize = shape.iter().product();
    let bytes = cur.take(numel.checked_mul(4)?)?;
    let data: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Some((name, Tensor::from_vec(shape, data)))
}

fn descriptor_header(d: &ArchDescriptor, epoch: u32, config_hash: &str) -> String {
    let decoder = d.decoder_channels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",");
    format!(
        "{CKPT_MAGIC}\nencoder={}\ninput={}x{}\ndecoder_channels={}\nbase_channels={}\ndepth={}\nskips={}\nseed={}\nepoch={}\nconfig_hash={}\n",
        d.encoder,
        d.input.0,
        d.input.1,
        decoder,
        d.base_channels,
        d.depth,
        d.skip_connections as u8,
        d.seed,
        epoch,
        if config_hash.is_empty() { "-" } else { config_hash },
    )
}

fn parse_header(path: &Path, text: &str) -> Result<(ArchDescriptor, u32, String), ModelError> {
    let mut lines = text.lines();
    if lines.next() != Some(CKPT_MAGIC) {
        return Err(corrupt(path, "missing checkpoint magic"));
    }
    let mut kv = std::collections::HashMap::new();
    for line in lines {
        if let Some((k, v)) = line.split_once('=') {
            kv.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| kv.get(k).cloned().ok_or_else(|| corrupt(path, format!("missing header key {k}")));
    let input_s = get("input")?;
    let (w, h) = input_s
        .split_once('x')
        .ok_or_else(|| corrupt(path, "bad input size"))?;
    let decoder_channels: Vec<usize> = {
        let s = get("decoder_channels")?;
        if s.is_empty() {
            Vec::new()
        } else {
            s.split(',')
                .map(|c| c.parse::<usize>().map_err(|e| corrupt(path, format!("bad decoder channel: {e}"))))
                .collect::<Result<_, _>>()?
        }
    };
    let parse_num = |k: &str| -> Result<u64, ModelError> {
        get(k)?.parse::<u64>().map_err(|e| corrupt(path, format!("bad {k}: {e}")))
    };
    let descriptor = ArchDescriptor {
        format_version: 1,
        encoder: get("encoder")?,
        input: (
            w.parse().map_err(|e| corrupt(path, format!("bad width: {e}")))?,
            h.parse().map_err(|e| corrupt(path, format!("bad height: {e}")))?,
        ),
        decoder_channels,
        base_channels: parse_num("base_channels")? as usize,
        depth: parse_num("depth")? as usize,
        seed: parse_num("seed")?,
        skip_connections: parse_num("skips")? != 0,
    };
    let epoch = parse_num("epoch")? as u32;
    let hash = get("config_hash")?;
    let hash = if hash == "-" { String::new() } else { hash };
    Ok((descriptor, epoch, hash))
}

/// Serialize model parameters, buffers and (optionally) Adam state.
pub fn save_checkpoint(
    model: &SegmentationModel<f32>,
    epoch: u32,
    config_hash: &str,
    adam: Option<&AdamState<f32>>,
    path: &Path,
) -> Result<ModelCheckpoint, ModelError> {
    let store = model.store();
    let mut body = Vec::new();
    for (_, name, t) in store.iter_params() {
        write_tensor(&mut body, name, t);
    }
    for (_, name, t) in store.iter_buffers() {
        write_tensor(&mut body, name, t);
    }
    if let Some(state) = adam {
        body.extend_from_slice(&state.step.to_le_bytes());
        for (i, (id, name, p)) in store.iter_params().enumerate() {
            let _ = id;
            let zero = || Tensor::zeros(p.shape());
            let m = state.m.get(i).and_then(|o| o.clone()).unwrap_or_else(zero);
            let v = state.v.get(i).and_then(|o| o.clone()).unwrap_or_else(zero);
            write_tensor(&mut body, &format!("adam.m.{name}"), &m);
            write_tensor(&mut body, &format!("adam.v.{name}"), &v);
        }
    }

    let header = format!(
        "{}params={}\nbuffers={}\nadam={}\n\n",
        descriptor_header(&model.descriptor, epoch, config_hash),
        store.num_params(),
        store.num_buffers(),
        adam.is_some() as u8,
    );
    let mut file = Vec::with_capacity(header.len() + body.len() + 8);
    file.extend_from_slice(header.as_bytes());
    file.extend_from_slice(&body);
    file.extend_from_slice(END_MARKER);

    let mut f = std::fs::File::create(path).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
    f.write_all(&file).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
    Ok(ModelCheckpoint {
        path: path.to_path_buf(),
        descriptor: model.descriptor.clone(),
        epoch,
        config_hash: config_hash.to_string(),
    })
}

/// Rebuild the model recorded in a checkpoint and restore its tensors.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(SegmentationModel<f32>, ModelCheckpoint, Option<AdamState<f32>>), ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
    if !bytes.ends_with(END_MARKER) {
        return Err(corrupt(path, "truncated file (missing end marker)"));
    }
    let body_end = bytes.len() - END_MARKER.len();
    // Header ends at the first blank line.
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| corrupt(path, "missing header terminator"))?
        + 2;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| corrupt(path, "header not utf-8"))?;
    let (descriptor, epoch, config_hash) = parse_header(path, header)?;

    let mut counts = std::collections::HashMap::new();
    for line in header.lines() {
        if let Some((k, v)) = line.split_once('=') {
            if let Ok(n) = v.parse::<u64>() {
                counts.insert(k.to_string(), n);
            }
        }
    }
    let n_params = *counts.get("params").ok_or_else(|| corrupt(path, "missing params count"))? as usize;
    let n_buffers = *counts.get("buffers").ok_or_else(|| corrupt(path, "missing buffers count"))? as usize;
    let has_adam = counts.get("adam").copied().unwrap_or(0) != 0;

    let options = ModelOptions {
        decoder_channels: if descriptor.decoder_channels.len() == 5 {
            let mut c = [0usize; 5];
            c.copy_from_slice(&descriptor.decoder_channels);
            c
        } else {
            super::DEFAULT_DECODER_CHANNELS
        },
        base_channels: descriptor.base_channels,
        depth: descriptor.depth,
        pretrained_dir: None,
        freeze_encoder: false,
    };
    let mut model = build_model_with::<f32>(&descriptor.encoder, descriptor.input, false, descriptor.seed, &options)
        .map_err(|e| match e {
            ModelError::UnknownEncoder(name) => {
                ModelError::ArchitectureMismatch(format!("checkpoint names unknown encoder `{name}`"))
            }
            other => other,
        })?;
    if model.store().num_params() != n_params || model.store().num_buffers() != n_buffers {
        return Err(ModelError::ArchitectureMismatch(format!(
            "checkpoint has {n_params} params / {n_buffers} buffers, architecture defines {} / {}",
            model.store().num_params(),
            model.store().num_buffers()
        )));
    }

    let mut cur = Cursor { buf: &bytes[header_end..body_end], pos: 0 };
    for i in 0..n_params {
        let (name, t) = read_tensor(&mut cur).ok_or_else(|| corrupt(path, format!("truncated at param {i}")))?;
        let id = model
            .store()
            .find_param(&name)
            .ok_or_else(|| ModelError::ArchitectureMismatch(format!("checkpoint param `{name}` not in architecture")))?;
        if model.store().param(id).shape() != t.shape() {
            return Err(ModelError::ArchitectureMismatch(format!("shape mismatch for `{name}`")));
        }
        model.store_mut().set_param(id, t);
    }
    for i in 0..n_buffers {
        let (name, t) = read_tensor(&mut cur).ok_or_else(|| corrupt(path, format!("truncated at buffer {i}")))?;
        let id = model
            .store()
            .find_buffer(&name)
            .ok_or_else(|| ModelError::ArchitectureMismatch(format!("checkpoint buffer `{name}` not in architecture")))?;
        model.store_mut().set_buffer(id, t);
    }

    let adam = if has_adam {
        let step = cur.u64().ok_or_else(|| corrupt(path, "truncated adam step"))?;
        let mut state = AdamState::new();
        state.step = step;
        for (_, name, _) in model.store().iter_params() {
            let (mn, m) = read_tensor(&mut cur).ok_or_else(|| corrupt(path, "truncated adam m"))?;
            let (vn, v) = read_tensor(&mut cur).ok_or_else(|| corrupt(path, "truncated adam v"))?;
            if mn != format!("adam.m.{name}") || vn != format!("adam.v.{name}") {
                return Err(corrupt(path, "adam section out of order"));
            }
            state.m.push(Some(m));
            state.v.push(Some(v));
        }
        Some(state)
    } else {
        None
    };

    let meta = ModelCheckpoint { path: path.to_path_buf(), descriptor, epoch, config_hash };
    Ok((model, meta, adam))
}

/// Write the encoder subtree (`encoder.*` params and buffers) as a
/// pretrained-weights container.
pub fn export_encoder_weights(model: &SegmentationModel<f32>, path: &Path) -> Result<(), ModelError> {
    let store = model.store();
    let params: Vec<_> = store.iter_params().filter(|(_, n, _)| n.starts_with("encoder.")).collect();
    let buffers: Vec<_> = store.iter_buffers().filter(|(_, n, _)| n.starts_with("encoder.")).collect();
    let mut body = Vec::new();
    for (_, name, t) in &params {
        write_tensor(&mut body, name, t);
    }
    for (_, name, t) in &buffers {
        write_tensor(&mut body, name, t);
    }
    let header = format!(
        "{WEIGHTS_MAGIC}\nencoder={}\nparams={}\nbuffers={}\n\n",
        model.descriptor.encoder,
        params.len(),
        buffers.len()
    );
    let mut file = Vec::new();
    file.extend_from_slice(header.as_bytes());
    file.extend_from_slice(&body);
    file.extend_from_slice(END_MARKER);
    std::fs::write(path, file).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })
}

/// Overwrite `encoder.*` tensors from a pretrained-weights container
/// (stored as f32, cast to the model's scalar type).
pub fn load_pretrained_encoder<T: polypseg_tensor::Scalar>(
    store: &mut ParamStore<T>,
    path: &Path,
) -> Result<(), ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Io { path: path.to_path_buf(), source: e })?;
    if !bytes.ends_with(END_MARKER) {
        return Err(corrupt(path, "truncated weights file"));
    }
    let body_end = bytes.len() - END_MARKER.len();
    let header_end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| corrupt(path, "missing header terminator"))?
        + 2;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| corrupt(path, "header not utf-8"))?;
    if !header.starts_with(WEIGHTS_MAGIC) {
        return Err(corrupt(path, "missing weights magic"));
    }
    let mut n_params = 0usize;
    let mut n_buffers = 0usize;
    for line in header.lines() {
        if let Some(v) = line.strip_prefix("params=") {
            n_params = v.parse().map_err(|e| corrupt(path, format!("bad params count: {e}")))?;
        }
        if let Some(v) = line.strip_prefix("buffers=") {
            n_buffers = v.parse().map_err(|e| corrupt(path, format!("bad buffers count: {e}")))?;
        }
    }
    let mut cur = Cursor { buf: &bytes[header_end..body_end], pos: 0 };
    for _ in 0..n_params {
        let (name, t) = read_tensor(&mut cur).ok_or_else(|| corrupt(path, "truncated param record"))?;
        let id = store.find_param(&name).ok_or_else(|| {
            ModelError::ArchitectureMismatch(format!("weights param `{name}` not in architecture"))
        })?;
        if store.param(id).shape() != t.shape() {
            return Err(ModelError::ArchitectureMismatch(format!("shape mismatch for `{name}`")));
        }
        store.set_param(id, t.cast::<T>());
    }
    for _ in 0..n_buffers {
        let (name, t) = read_tensor(&mut cur).ok_or_else(|| corrupt(path, "truncated buffer record"))?;
        let id = store.find_buffer(&name).ok_or_else(|| {
            ModelError::ArchitectureMismatch(format!("weights buffer `{name}` not in architecture"))
        })?;
        store.set_buffer(id, t.cast::<T>());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use polypseg_tensor::InitRng;

    fn tiny_model(seed: u64) -> SegmentationModel<f32> {
        let options = ModelOptions { base_channels: 4, depth: 2, ..Default::default() };
        build_model_with("unet_baseline", (32, 32), false, seed, &options).unwrap()
    }

    #[test]
    fn save_load_round_trip_preserves_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut model = tiny_model(11);
        let batch: polypseg_tensor::Tensor<f32> = InitRng::new(0).uniform([1, 3, 32, 32], -1.0, 1.0);
        let before = model.predict(&batch).unwrap();

        let meta = save_checkpoint(&model, 3, "abc123", None, &path).unwrap();
        assert_eq!(meta.epoch, 3);
        let (mut loaded, meta2, adam) = load_checkpoint(&path).unwrap();
        assert_eq!(meta2.descriptor, model.descriptor);
        assert_eq!(meta2.config_hash, "abc123");
        assert!(adam.is_none());
        let after = loaded.predict(&batch).unwrap();
        assert_eq!(before.data(), after.data(), "round trip must be exact");
    }

    #[test]
    fn adam_state_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(2);
        let mut state = AdamState::<f32>::new();
        state.step = 17;
        for (_, _, p) in model.store().iter_params() {
            state.m.push(Some(Tensor::filled(p.shape(), 0.25)));
            state.v.push(Some(Tensor::filled(p.shape(), 0.5)));
        }
        save_checkpoint(&model, 1, "", Some(&state), &path).unwrap();
        let (_, _, loaded) = load_checkpoint(&path).unwrap();
        let loaded = loaded.expect("adam state present");
        assert_eq!(loaded.step, 17);
        assert_eq!(loaded.m.len(), model.store().num_params());
        assert_eq!(loaded.m[0].as_ref().unwrap().data()[0], 0.25);
    }

    #[test]
    fn wrong_encoder_name_is_architecture_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(1);
        save_checkpoint(&model, 0, "", None, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes[..200]).to_string();
        let patched = text.replace("encoder=unet_baseline", "encoder=not_a_network");
        bytes.splice(..200, patched.into_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(ModelError::ArchitectureMismatch(msg)) => assert!(msg.contains("not_a_network")),
            other => panic!("expected ArchitectureMismatch, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = tiny_model(1);
        save_checkpoint(&model, 0, "", None, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(ModelError::CorruptCheckpoint { .. })));
    }

    #[test]
    fn encoder_weights_export_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resnet34.pst");
        let model: SegmentationModel<f32> = super::super::build_model("resnet34", (32, 32), false, 9).unwrap();
        export_encoder_weights(&model, &path).unwrap();

        let opts = ModelOptions { pretrained_dir: Some(dir.path().to_path_buf()), ..Default::default() };
        let loaded: SegmentationModel<f32> =
            super::super::build_model_with("resnet34", (32, 32), true, 777, &opts).unwrap();
        // Encoder params must match the exporter exactly; decoder params come
        // from the new seed.
        let src = model.store();
        let dst = loaded.store();
        for (_, name, t) in src.iter_params().filter(|(_, n, _)| n.starts_with("encoder.")) {
            let id = dst.find_param(name).unwrap();
            assert_eq!(dst.param(id).data(), t.data(), "{name}");
        }
    }
}
