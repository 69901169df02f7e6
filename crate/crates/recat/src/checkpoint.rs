//! Self-describing binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "RECATCKP" | version u32 | dtype u8 | config text
//! model params     | parser params
//! model optimizer  | parser optimizer
//! step u64 | epoch u64 | batch u64 | rng seed [32] | rng stream u64 | rng word u128
//! sha256 of everything above
//! ```
//!
//! A parameter block is a count followed by `name, dtype, rank, dims, data`
//! records. Optimizer blocks hold the step counter and the two moment
//! buffers in parameter order. Text fields are length-prefixed UTF-8.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use recat_core::model::Network;
use recat_core::numerics::{DType, ParamStore, Real};
use recat_core::train::{AdamW, Trainer};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{read_bytes, write, IoError, IoResult};

pub const MAGIC: &[u8; 8] = b"RECATCKP";
pub const VERSION: u32 = 1;

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F32 => 4,
        DType::F64 => 8,
    }
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn text(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn values<F: Real>(&mut self, v: &[F]) {
        v.iter().for_each(|x| x.write_le(&mut self.buf));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> IoResult<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(IoError::Format(format!("checkpoint truncated while reading {what}")));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u8(&mut self, what: &str) -> IoResult<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u32(&mut self, what: &str) -> IoResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, what: &str) -> IoResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
    fn len(&mut self, what: &str) -> IoResult<usize> {
        let n = self.u64(what)?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| IoError::Format(format!("checkpoint field {what} claims {n} entries")))
    }
    fn text(&mut self, what: &str) -> IoResult<String> {
        let n = self.len(what)?;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| IoError::Format(format!("checkpoint field {what} is not UTF-8")))
    }
    fn values<F: Real>(&mut self, n: usize, what: &str) -> IoResult<Vec<F>> {
        let size = F::DTYPE.size_of();
        let bytes = self.take(n * size, what)?;
        Ok(bytes.chunks_exact(size).map(F::read_le).collect())
    }
}

fn write_params<F: Real>(w: &mut Writer, store: &ParamStore<F>) {
    w.u64(store.len() as u64);
    for (_, p) in store.iter() {
        w.text(&p.name);
        w.u8(dtype_code(F::DTYPE));
        let shape = p.tensor.shape();
        w.u32(shape.len() as u32);
        shape.iter().for_each(|&d| w.u64(d as u64));
        w.values(p.tensor.data());
    }
}

/// Overwrites every parameter of `store` by name, checking dtype and shape.
fn read_params<F: Real>(r: &mut Reader<'_>, store: &mut ParamStore<F>, group: &str) -> IoResult<()> {
    let count = r.len(group)?;
    let mut filled = vec![false; store.len()];
    for _ in 0..count {
        let name = r.text("parameter name")?;
        let param_err = |detail: String| IoError::Param { name: name.clone(), detail };
        let dtype = r.u8("dtype")?;
        if dtype != dtype_code(F::DTYPE) {
            return Err(param_err(format!("stored as {dtype}-byte floats, expected {}", F::DTYPE.name())));
        }
        let rank = r.u32("rank")? as usize;
        if rank > 2 {
            return Err(param_err(format!("rank {rank} is not supported")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.len("dimension")?);
        }
        let id = store.find(&name).ok_or_else(|| param_err(format!("unknown in {group} group")))?;
        let expected = store.value(id).shape().to_vec();
        if shape != expected {
            return Err(param_err(format!("shape {shape:?} does not match {expected:?}")));
        }
        let numel = shape.iter().product();
        let data = r.values::<F>(numel, &name)?;
        store.get_mut(id).tensor.data_mut().copy_from_slice(&data);
        filled[id.0] = true;
    }
    if let Some((_, p)) = store.iter().find(|(id, _)| !filled[id.0]) {
        return Err(IoError::Param { name: p.name.clone(), detail: "missing from checkpoint".into() });
    }
    Ok(())
}

fn write_opt<F: Real>(w: &mut Writer, opt: &AdamW<F>) {
    w.u64(opt.step);
    for (m, v) in opt.m.iter().zip(&opt.v) {
        w.values(m);
        w.values(v);
    }
}

fn read_opt<F: Real>(r: &mut Reader<'_>, opt: &mut AdamW<F>) -> IoResult<()> {
    opt.step = r.u64("optimizer step")?;
    for k in 0..opt.m.len() {
        let n = opt.m[k].len();
        opt.m[k] = r.values(n, "optimizer moment")?;
        opt.v[k] = r.values(n, "optimizer moment")?;
    }
    Ok(())
}

/// Serializes the full training state.
pub fn encode<F: Real>(config: &RunConfig, trainer: &Trainer<F>) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u8(dtype_code(F::DTYPE));
    w.text(&config.to_text());
    write_params(&mut w, &trainer.net.model_store);
    write_params(&mut w, &trainer.net.parser_store);
    write_opt(&mut w, &trainer.opt_model);
    write_opt(&mut w, &trainer.opt_parser);
    let s = &trainer.state;
    w.u64(s.step);
    w.u64(s.epoch as u64);
    w.u64(s.batch as u64);
    w.buf.extend_from_slice(&s.rng.get_seed());
    w.u64(s.rng.get_stream());
    w.buf.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());
    let digest = Sha256::digest(&w.buf);
    w.buf.extend_from_slice(&digest);
    w.buf
}

/// Inverse of [`encode`]. The trainer is rebuilt from the stored config and
/// every tensor is replaced, so the result is bit-identical to the source.
pub fn decode<F: Real>(bytes: &[u8]) -> IoResult<(RunConfig, Trainer<F>)> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(IoError::Format("not a checkpoint (bad magic)".into()));
    }
    let mut r = Reader { buf: bytes, pos: MAGIC.len() };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(IoError::Version { found: version, expected: VERSION });
    }
    if bytes.len() < 32 {
        return Err(IoError::Format("checkpoint truncated".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(IoError::Format("checkpoint checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: r.pos };
    let dtype = r.u8("dtype")?;
    if dtype != dtype_code(F::DTYPE) {
        return Err(IoError::Format(format!("checkpoint holds {dtype}-byte floats, expected {}", F::DTYPE.name())));
    }
    let config = RunConfig::parse(&r.text("config")?)?;
    let net = Network::<F>::new(config.model.clone(), 0)?;
    let mut trainer = Trainer::new(net, config.train.clone())?;
    read_params(&mut r, &mut trainer.net.model_store, "model")?;
    read_params(&mut r, &mut trainer.net.parser_store, "parser")?;
    read_opt(&mut r, &mut trainer.opt_model)?;
    read_opt(&mut r, &mut trainer.opt_parser)?;
    trainer.state.step = r.u64("step")?;
    trainer.state.epoch = r.len("epoch")?;
    trainer.state.batch = r.len("batch")?;
    let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
    let stream = r.u64("rng stream")?;
    let word = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word);
    trainer.state.rng = rng;
    if r.pos != body.len() {
        return Err(IoError::Format("trailing bytes in checkpoint".into()));
    }
    Ok((config, trainer))
}

pub fn save<F: Real>(path: &Path, config: &RunConfig, trainer: &Trainer<F>) -> IoResult<()> {
    write(path, encode(config, trainer))
}

pub fn load<F: Real>(path: &Path) -> IoResult<(RunConfig, Trainer<F>)> {
    decode(&read_bytes(path)?)
}
