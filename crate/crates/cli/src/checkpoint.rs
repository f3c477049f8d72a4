//! Binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   "M3FSEG1" (7 bytes), version byte = 1
//! config  channels 4xu32, input (h, w) 2xu32, power ratio f64,
//!         toggles 4xu8 (fd, gcb, mtl, faspp), decoder plan 4xu32,
//!         aspp rates 4xu32
//! count   u32
//! entry*  name length u32, name (utf-8), shape 4xu32,
//!         payload (f32 LE, row-major planar)
//! digest  u64: FNV-1a over every payload byte, verified on load
//! ```
//!
//! Parameters are stored as 32-bit floats; saving a freshly loaded model
//! reproduces the file byte for byte.

use crate::{CliError, Result};
use freqseg_core::network::{Model, ModelConfig, Toggles};

pub const MAGIC: &[u8; 7] = b"M3FSEG1";
pub const VERSION: u8 = 1;

/// Streaming FNV-1a 64-bit digest.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

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
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CliError::Integrity("checkpoint truncated".into()));
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
}

pub fn save(model: &Model) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(MAGIC);
    w.u8(VERSION);

    let cfg = &model.cfg;
    for &c in &cfg.channel_plan {
        w.u32(c as u32);
    }
    w.u32(cfg.input_size.0 as u32);
    w.u32(cfg.input_size.1 as u32);
    w.f64(cfg.power_ratio);
    for flag in [cfg.toggles.fd, cfg.toggles.gcb, cfg.toggles.mtl, cfg.toggles.faspp] {
        w.u8(flag as u8);
    }
    for &c in &cfg.decoder_plan {
        w.u32(c as u32);
    }
    for &r in &cfg.aspp_rates {
        w.u32(r as u32);
    }

    let entries = model.state_entries();
    w.u32(entries.len() as u32);
    let mut digest = Fnv::new();
    for (name, shape, data) in &entries {
        w.u32(name.len() as u32);
        w.buf.extend_from_slice(name.as_bytes());
        for &d in shape {
            w.u32(d as u32);
        }
        for &v in data {
            let bytes = (v as f32).to_le_bytes();
            digest.update(&bytes);
            w.buf.extend_from_slice(&bytes);
        }
    }
    w.u64(digest.finish());
    w.buf
}

pub fn save_to(path: &std::path::Path, model: &Model) -> Result<()> {
    std::fs::write(path, save(model))?;
    Ok(())
}

pub fn load(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(7)? != MAGIC {
        return Err(CliError::Integrity("bad magic: not a model checkpoint".into()));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(CliError::Integrity(format!("unsupported checkpoint version {version}")));
    }

    let mut channel_plan = [0usize; 4];
    for c in &mut channel_plan {
        *c = r.u32()? as usize;
    }
    let input_size = (r.u32()? as usize, r.u32()? as usize);
    let power_ratio = r.f64()?;
    let toggles = Toggles {
        fd: r.u8()? != 0,
        gcb: r.u8()? != 0,
        mtl: r.u8()? != 0,
        faspp: r.u8()? != 0,
    };
    let mut decoder_plan = [0usize; 4];
    for c in &mut decoder_plan {
        *c = r.u32()? as usize;
    }
    let mut aspp_rates = [0usize; 4];
    for c in &mut aspp_rates {
        *c = r.u32()? as usize;
    }
    let cfg = ModelConfig { channel_plan, input_size, power_ratio, toggles, decoder_plan, aspp_rates };

    let count = r.u32()? as usize;
    let mut entries: Vec<(String, [usize; 4], Vec<f64>)> = Vec::with_capacity(count);
    let mut digest = Fnv::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| CliError::Integrity("checkpoint holds a non-utf8 tensor name".into()))?;
        let mut shape = [0usize; 4];
        for d in &mut shape {
            *d = r.u32()? as usize;
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        digest.update(raw);
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        entries.push((name, shape, data));
    }
    let stored = r.u64()?;
    if stored != digest.finish() {
        return Err(CliError::Integrity(format!(
            "payload checksum mismatch: stored {stored:#018x}, computed {:#018x}",
            digest.finish()
        )));
    }
    if r.pos != bytes.len() {
        return Err(CliError::Integrity("trailing bytes after checkpoint".into()));
    }

    let mut model = Model::new(cfg, 0)?;
    model.load_state_entries(&entries)?;
    Ok(model)
}

pub fn load_from(path: &std::path::Path) -> Result<Model> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Io(format!("cannot read checkpoint {}: {e}", path.display())))?;
    load(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use freqseg_core::network::ModelConfig;

    fn tiny_model() -> Model {
        Model::new(ModelConfig::with_plan([2, 4, 8, 16], (32, 32)), 11).unwrap()
    }

    #[test]
    fn round_trip_is_byte_stable() {
        let model = tiny_model();
        let bytes = save(&model);
        let reloaded = load(&bytes).unwrap();
        let bytes2 = save(&reloaded);
        assert_eq!(bytes, bytes2, "save(load(save(m))) must be bitwise stable");

        // Every reloaded parameter equals the f32 quantization of the original.
        for (orig, back) in model.state_entries().iter().zip(reloaded.state_entries()) {
            assert_eq!(orig.0, back.0);
            for (a, b) in orig.2.iter().zip(&back.2) {
                assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
            }
        }
    }

    #[test]
    fn corrupting_any_payload_byte_is_detected() {
        let model = tiny_model();
        let bytes = save(&model);
        // The last payload byte sits just before the 8-byte digest.
        for &offset_from_end in &[9usize, 13] {
            let mut bad = bytes.clone();
            let idx = bad.len() - offset_from_end;
            bad[idx] ^= 0x40;
            let err = load(&bad).unwrap_err();
            assert!(matches!(err, CliError::Integrity(_)), "corruption at -{offset_from_end}");
        }
        // Any mid-file flip also fails the load one way or another.
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x01;
        assert!(load(&bad).is_err());
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(load(b"not a checkpoint at all").is_err());
        let model = tiny_model();
        let mut bytes = save(&model);
        bytes[7] = 9; // version
        assert!(matches!(load(&bytes), Err(CliError::Integrity(_))));
    }
}
