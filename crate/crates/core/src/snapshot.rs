//! Model snapshot files.
//!
//! A snapshot stores a complete model (including batch-norm running
//! statistics) plus the training iteration it was captured at. Layout:
//!
//! ```text
//! magic "CSEGSNAP" | format_version u32 | iteration u64
//! config: in_ch u32 | out_ch u32 | hidden_width u32 | init_seed u64
//!         | n_dilations u32 | dilations u32...
//! per hidden layer: conv block, bn block
//! output conv block
//! ```
//!
//! A conv block is `out u32 | in u32 | k u32 | dilation u32 | weights f32...
//! | bias f32...`; a bn block is `channels u32 | momentum f64 | epsilon f64 |
//! scale | shift | running_mean | running_var` (each `f32...`). Everything is
//! little-endian; parameters are 32-bit, so an `f32` round trip is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{io_err, Error, Result};
use crate::net::{Model, SegNetConfig};
use crate::nn::{BatchNormParams, ConvLayerParams};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"CSEGSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;

/// One member of the snapshot ensemble: a model and the iteration at which
/// it was captured. Iterations order the ensemble deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSnapshot<T> {
    pub iteration: u64,
    pub model: Model<T>,
}

pub fn save_snapshot<T: Scalar>(snapshot: &ModelSnapshot<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let werr = |e| Error::Io { path: path.to_path_buf(), source: e };

    w.write_all(MAGIC).map_err(werr)?;
    w.write_u32::<LittleEndian>(SNAPSHOT_VERSION).map_err(werr)?;
    w.write_u64::<LittleEndian>(snapshot.iteration).map_err(werr)?;

    let cfg = &snapshot.model.config;
    w.write_u32::<LittleEndian>(cfg.in_channels as u32).map_err(werr)?;
    w.write_u32::<LittleEndian>(cfg.out_channels as u32).map_err(werr)?;
    w.write_u32::<LittleEndian>(cfg.hidden_width as u32).map_err(werr)?;
    w.write_u64::<LittleEndian>(cfg.init_seed).map_err(werr)?;
    w.write_u32::<LittleEndian>(cfg.dilations.len() as u32).map_err(werr)?;
    for &d in &cfg.dilations {
        w.write_u32::<LittleEndian>(d as u32).map_err(werr)?;
    }

    for layer in &snapshot.model.hidden {
        write_conv(&mut w, &layer.conv, path)?;
        write_bn(&mut w, &layer.bn, path)?;
    }
    write_conv(&mut w, &snapshot.model.output, path)?;
    w.flush().map_err(io_err(path))
}

pub fn load_snapshot<T: Scalar>(path: &Path) -> Result<ModelSnapshot<T>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = BufReader::new(file);
    let rerr = |_: std::io::Error| {
        Error::Format(format!("snapshot {} is truncated or unreadable", path.display()))
    };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(rerr)?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "{} is not a model snapshot (bad magic bytes)",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>().map_err(rerr)?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format(format!(
            "snapshot {} has format version {version}, expected {SNAPSHOT_VERSION}",
            path.display()
        )));
    }
    let iteration = r.read_u64::<LittleEndian>().map_err(rerr)?;

    let in_channels = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let out_channels = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let hidden_width = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let init_seed = r.read_u64::<LittleEndian>().map_err(rerr)?;
    let n_dilations = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    if n_dilations > 1024 {
        return Err(Error::Format(format!("snapshot declares {n_dilations} layers")));
    }
    let mut dilations = Vec::with_capacity(n_dilations);
    for _ in 0..n_dilations {
        dilations.push(r.read_u32::<LittleEndian>().map_err(rerr)? as usize);
    }
    let config =
        SegNetConfig { dilations, hidden_width, in_channels, out_channels, init_seed };

    let mut hidden = Vec::with_capacity(config.dilations.len());
    for _ in 0..config.dilations.len() {
        let conv = read_conv::<T, _>(&mut r, path)?;
        let bn = read_bn::<T, _>(&mut r, path)?;
        hidden.push(crate::net::HiddenLayer { conv, bn });
    }
    let output = read_conv::<T, _>(&mut r, path)?;

    let model = Model { config, hidden, output };
    validate_shapes(&model, path)?;
    Ok(ModelSnapshot { iteration, model })
}

/// All `*.snap` files in a directory, sorted by name.
pub fn list_snapshot_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "snap") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn snapshot_file_name(iteration: u64) -> String {
    format!("snapshot_{iteration:08}.snap")
}

fn validate_shapes<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    let cfg = &model.config;
    let mut in_ch = cfg.in_channels;
    for (i, layer) in model.hidden.iter().enumerate() {
        if layer.conv.in_ch != in_ch
            || layer.conv.out_ch != cfg.hidden_width
            || layer.conv.dilation != cfg.dilations[i]
            || layer.bn.channels() != cfg.hidden_width
        {
            return Err(Error::Format(format!(
                "snapshot {}: layer {i} shapes disagree with its config",
                path.display()
            )));
        }
        in_ch = cfg.hidden_width;
    }
    if model.output.in_ch != in_ch || model.output.out_ch != cfg.out_channels {
        return Err(Error::Format(format!(
            "snapshot {}: output layer shapes disagree with its config",
            path.display()
        )));
    }
    Ok(())
}

fn write_conv<T: Scalar, W: Write>(w: &mut W, conv: &ConvLayerParams<T>, path: &Path) -> Result<()> {
    let werr = |e| Error::Io { path: path.to_path_buf(), source: e };
    w.write_u32::<LittleEndian>(conv.out_ch as u32).map_err(werr)?;
    w.write_u32::<LittleEndian>(conv.in_ch as u32).map_err(werr)?;
    w.write_u32::<LittleEndian>(conv.kernel as u32).map_err(werr)?;
    w.write_u32::<LittleEndian>(conv.dilation as u32).map_err(werr)?;
    write_f32s(w, &conv.weights, path)?;
    write_f32s(w, &conv.bias, path)
}

fn read_conv<T: Scalar, R: Read>(r: &mut R, path: &Path) -> Result<ConvLayerParams<T>> {
    let rerr = |_: std::io::Error| {
        Error::Format(format!("snapshot {} is truncated", path.display()))
    };
    let out_ch = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let in_ch = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let kernel = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    let dilation = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    if out_ch * in_ch == 0 || out_ch > 1 << 20 || in_ch > 1 << 20 {
        return Err(Error::Format(format!(
            "snapshot {}: implausible conv shape {out_ch}x{in_ch}",
            path.display()
        )));
    }
    let weights = read_f32s::<T, R>(r, out_ch * in_ch * kernel * kernel, path)?;
    let bias = read_f32s::<T, R>(r, out_ch, path)?;
    ConvLayerParams::new(out_ch, in_ch, kernel, dilation, weights, bias)
}

fn write_bn<T: Scalar, W: Write>(w: &mut W, bn: &BatchNormParams<T>, path: &Path) -> Result<()> {
    let werr = |e| Error::Io { path: path.to_path_buf(), source: e };
    w.write_u32::<LittleEndian>(bn.channels() as u32).map_err(werr)?;
    w.write_f64::<LittleEndian>(bn.momentum).map_err(werr)?;
    w.write_f64::<LittleEndian>(bn.epsilon).map_err(werr)?;
    write_f32s(w, &bn.scale, path)?;
    write_f32s(w, &bn.shift, path)?;
    write_f32s(w, &bn.running_mean, path)?;
    write_f32s(w, &bn.running_var, path)
}

fn read_bn<T: Scalar, R: Read>(r: &mut R, path: &Path) -> Result<BatchNormParams<T>> {
    let rerr = |_: std::io::Error| {
        Error::Format(format!("snapshot {} is truncated", path.display()))
    };
    let channels = r.read_u32::<LittleEndian>().map_err(rerr)? as usize;
    if channels == 0 || channels > 1 << 20 {
        return Err(Error::Format(format!(
            "snapshot {}: implausible bn width {channels}",
            path.display()
        )));
    }
    let momentum = r.read_f64::<LittleEndian>().map_err(rerr)?;
    let epsilon = r.read_f64::<LittleEndian>().map_err(rerr)?;
    Ok(BatchNormParams {
        scale: read_f32s::<T, R>(r, channels, path)?,
        shift: read_f32s::<T, R>(r, channels, path)?,
        running_mean: read_f32s::<T, R>(r, channels, path)?,
        running_var: read_f32s::<T, R>(r, channels, path)?,
        momentum,
        epsilon,
    })
}

fn write_f32s<T: Scalar, W: Write>(w: &mut W, values: &[T], path: &Path) -> Result<()> {
    for v in values {
        w.write_f32::<LittleEndian>(v.to_f64_s() as f32)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    }
    Ok(())
}

fn read_f32s<T: Scalar, R: Read>(r: &mut R, n: usize, path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = r.read_f32::<LittleEndian>().map_err(|_| {
            Error::Format(format!("snapshot {} is truncated", path.display()))
        })?;
        out.push(T::from_f64_s(v as f64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{build, SegNetConfig};
    use crate::tensor::Tensor;

    fn tiny_model(seed: u64) -> Model<f32> {
        build(&SegNetConfig {
            dilations: vec![1, 2],
            hidden_width: 3,
            in_channels: 2,
            out_channels: 8,
            init_seed: seed,
        })
        .unwrap()
    }

    #[test]
    fn round_trip_preserves_forward_bitwise() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join(snapshot_file_name(42));
        let mut model = tiny_model(11);
        // Run one training step so running stats differ from the defaults.
        let x = Tensor::from_vec([1, 2, 9, 9], (0..162).map(|i| i as f32 * 0.01).collect())
            .unwrap();
        model.forward_train(&x).unwrap();

        save_snapshot(&ModelSnapshot { iteration: 42, model: model.clone() }, &path).unwrap();
        let loaded = load_snapshot::<f32>(&path).unwrap();
        assert_eq!(loaded.iteration, 42);
        assert_eq!(loaded.model, model);
        let a = model.forward_eval(&x).unwrap();
        let b = loaded.model.forward_eval(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn fresh_model_round_trips_config() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.snap");
        let model = tiny_model(3);
        save_snapshot(&ModelSnapshot { iteration: 0, model: model.clone() }, &path).unwrap();
        let loaded = load_snapshot::<f32>(&path).unwrap();
        assert_eq!(loaded.model.config, model.config);
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.snap");
        save_snapshot(&ModelSnapshot { iteration: 1, model: tiny_model(1) }, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_snapshot::<f32>(&path), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_is_a_format_error() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.snap");
        save_snapshot(&ModelSnapshot { iteration: 1, model: tiny_model(1) }, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_snapshot::<f32>(&path), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("m.snap");
        save_snapshot(&ModelSnapshot { iteration: 1, model: tiny_model(1) }, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8] = 99; // version field follows the 8-byte magic
        std::fs::write(&path, &bytes).unwrap();
        match load_snapshot::<f32>(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
