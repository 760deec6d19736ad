//! `DGFC` checkpoint files.
//!
//! Layout (little endian): magic `DGFC`, format version `u32`, config length
//! `u32`, canonical config text, then named blocks of `u16` name length,
//! UTF-8 name, `u32` shape triple and `f64` values. The config text records
//! the block count so a file cut at a block boundary is still detected.

use std::path::Path;

use super::adam::OptimizerState;
use super::{Checkpoint, HistoryEntry};
use crate::autodiff::{Shape, Tensor};
use crate::config::{fmt_f64, read_generator, read_train, write_generator, write_train, KvReader, KvWriter};
use crate::error::{Error, Result};
use crate::net::build_generator;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DGFC";
pub const CHECKPOINT_VERSION: u32 = 1;

fn config_text(cp: &Checkpoint, blocks: usize) -> String {
    let mut w = KvWriter::new();
    write_generator(&mut w, cp.network.config());
    write_train(&mut w, &cp.train);
    let o = &cp.optimizer;
    w.put_f64("optimizer.lr", o.lr)
        .put("optimizer.step", o.step)
        .put_f64("optimizer.beta1", o.beta1)
        .put_f64("optimizer.beta2", o.beta2)
        .put_f64("optimizer.eps", o.eps)
        .put("run.iterations", cp.iterations_run)
        .put("run.best_iteration", cp.best_iteration)
        .put_f64("run.best_val_loss", cp.best_val_loss)
        .put("history.len", cp.history.len());
    for (i, h) in cp.history.iter().enumerate() {
        w.put(
            &format!("history.{i}"),
            format!("{} {} {} {}", h.iteration, fmt_f64(h.lr), fmt_f64(h.train_loss), fmt_f64(h.val_loss)),
        );
    }
    w.put("blocks", blocks);
    w.finish()
}

fn put_block(out: &mut Vec<u8>, name: &str, t: &Tensor<f64>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::contract(format!("block name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    let s = t.shape();
    for d in [s.channels, s.height, s.width] {
        let d = u32::try_from(d).map_err(|_| Error::contract("tensor dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Serializes `cp`. Equal checkpoints give equal bytes.
pub fn encode_checkpoint(cp: &Checkpoint) -> Result<Vec<u8>> {
    let names = cp.network.param_names();
    let blocks = names.len() * 3;
    let text = config_text(cp, blocks);
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let len = u32::try_from(text.len()).map_err(|_| Error::contract("config text exceeds u32"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for (name, t) in cp.network.named_params() {
        put_block(&mut out, name, t)?;
    }
    for (prefix, moments) in [("adam.m.", &cp.optimizer.m), ("adam.v.", &cp.optimizer.v)] {
        for (name, t) in names.iter().zip(moments) {
            put_block(&mut out, &format!("{prefix}{name}"), t)?;
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated checkpoint while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn block(c: &mut Cursor<'_>) -> Result<(String, Tensor<f64>)> {
    let at = c.pos as u64;
    let n = c.u16("block name length")? as usize;
    let name = std::str::from_utf8(c.take(n, "block name")?)
        .map_err(|_| Error::format(at, "block name is not UTF-8"))?
        .to_string();
    let dims = [c.u32("shape")?, c.u32("shape")?, c.u32("shape")?];
    let shape = Shape::new(dims[0] as usize, dims[1] as usize, dims[2] as usize);
    let count = shape.numel();
    let raw = c.take(count.checked_mul(8).ok_or_else(|| Error::format(at, "block too large"))?, &name)?;
    let data = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok((name, Tensor::new(shape, data)?))
}

fn parse_history(s: &str) -> Result<HistoryEntry> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    let bad = || Error::config(format!("bad history entry `{s}`"));
    if parts.len() != 4 {
        return Err(bad());
    }
    Ok(HistoryEntry {
        iteration: parts[0].parse().map_err(|_| bad())?,
        lr: parts[1].parse().map_err(|_| bad())?,
        train_loss: parts[2].parse().map_err(|_| bad())?,
        val_loss: parts[3].parse().map_err(|_| bad())?,
    })
}

fn corrupt(at: usize, e: Error) -> Error {
    match e {
        Error::Format { .. } | Error::Io { .. } => e,
        other => Error::format(at as u64, format!("corrupt checkpoint: {other}")),
    }
}

/// Parses checkpoint bytes. Any inconsistency is a format error.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "not a DGFC checkpoint"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            4,
            format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }
    let len = c.u32("config length")? as usize;
    let text_at = c.pos;
    let text = std::str::from_utf8(c.take(len, "config text")?)
        .map_err(|_| Error::format(text_at as u64, "config text is not UTF-8"))?;

    let parse_config = || -> Result<_> {
        let mut r = KvReader::parse(text)?;
        let gen = read_generator(&mut r, crate::image::Task::SuperResolution)?;
        let train = read_train(&mut r)?;
        let lr: f64 = r.require("optimizer.lr")?;
        let step: u64 = r.require("optimizer.step")?;
        let betas: (f64, f64, f64) = (
            r.require("optimizer.beta1")?,
            r.require("optimizer.beta2")?,
            r.require("optimizer.eps")?,
        );
        let iterations: usize = r.require("run.iterations")?;
        let best_iteration: usize = r.require("run.best_iteration")?;
        let best_val: f64 = r.require("run.best_val_loss")?;
        let n_hist: usize = r.require("history.len")?;
        let history = (0..n_hist)
            .map(|i| {
                let s: String = r
                    .take_str(&format!("history.{i}"))
                    .ok_or_else(|| Error::config(format!("missing history.{i}")))?;
                parse_history(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        let blocks: usize = r.require("blocks")?;
        r.finish()?;
        Ok((gen, train, lr, step, betas, iterations, best_iteration, best_val, history, blocks))
    };
    let (gen, train, lr, step, (beta1, beta2, eps), iterations, best_iteration, best_val, history, blocks) =
        parse_config().map_err(|e| corrupt(text_at, e))?;

    let mut network = build_generator(&gen).map_err(|e| corrupt(text_at, e))?;
    let n = network.param_names().len();
    if blocks != 3 * n {
        return Err(Error::format(text_at as u64, format!("{blocks} blocks for {n} parameters")));
    }
    let names = network.param_names().to_vec();
    let read_group = |prefix: &str, c: &mut Cursor<'_>| -> Result<Vec<Tensor<f64>>> {
        names
            .iter()
            .zip(network.params())
            .map(|(name, p)| {
                let at = c.pos;
                let (got, t) = block(c)?;
                if got != format!("{prefix}{name}") || t.shape() != p.shape() {
                    return Err(Error::format(
                        at as u64,
                        format!("unexpected block `{got}` {}, wanted `{prefix}{name}` {}", t.shape(), p.shape()),
                    ));
                }
                Ok(t)
            })
            .collect()
    };
    let params = read_group("", &mut c)?;
    let m = read_group("adam.m.", &mut c)?;
    let v = read_group("adam.v.", &mut c)?;
    if c.pos != bytes.len() {
        return Err(Error::format(c.pos as u64, "trailing bytes after last block"));
    }
    network.set_params(params)?;
    Ok(Checkpoint {
        network,
        optimizer: OptimizerState {
            m,
            v,
            beta1,
            beta2,
            eps,
            lr,
            step,
        },
        train,
        history,
        iterations_run: iterations,
        best_iteration,
        best_val_loss: best_val,
    })
}

/// Writes `cp` to `path` via a temporary sibling and a rename.
pub fn save_checkpoint(cp: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(cp)?;
    let tmp = path.with_extension("dgfc.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Task;
    use crate::net::GeneratorConfig;
    use crate::train::TrainConfig;

    fn sample() -> Checkpoint {
        let network = build_generator(&GeneratorConfig::wdsr_mini(Task::SuperResolution).with_seed(5)).unwrap();
        let mut optimizer = OptimizerState::new(network.params(), 1e-5).unwrap();
        optimizer.step = 3;
        optimizer.m[0].data_mut()[0] = 0.25;
        Checkpoint {
            network,
            optimizer,
            train: TrainConfig::default(),
            history: vec![HistoryEntry {
                iteration: 0,
                lr: 1e-5,
                train_loss: f64::NAN,
                val_loss: 0.125,
            }],
            iterations_run: 0,
            best_iteration: 0,
            best_val_loss: 0.125,
        }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let cp = sample();
        let bytes = encode_checkpoint(&cp).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.network.params(), cp.network.params());
        assert_eq!(back.optimizer, cp.optimizer);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }

    #[test]
    fn truncation_and_corruption_detected() {
        let bytes = encode_checkpoint(&sample()).unwrap();
        for cut in [0, 3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(decode_checkpoint(&wrong), Err(Error::Format { offset: 4, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
    }
}
