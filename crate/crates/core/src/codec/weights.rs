//! Binary weights file.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "GSMF" | version: u32 | lambda: f64 | count: u32 |
//!   count x ( name_len: u32 | name: utf-8 | ndims: u32 | dims: ndims x u32 | data: f64 ... )
//! ```

use std::fs;
use std::path::Path;

use crate::codec::CodecModel;
use crate::error::{Error, Result};
use crate::tensor::{ParameterSet, Tensor};

pub const MAGIC: &[u8; 4] = b"GSMF";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_weights(model: &CodecModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&model.lambda.to_le_bytes());
    let sets = [&model.encoder, &model.decoder, &model.entropy];
    let count: usize = sets.iter().map(|s| s.len()).sum();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for (name, t) in sets.iter().flat_map(|s| s.iter()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.dims().len() as u32).to_le_bytes());
        for &d in t.dims() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, reason: reason.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<CodecModel> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.err("bad magic, expected \"GSMF\""));
    }
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        r.pos -= 4;
        return Err(r.err(format!("unsupported format version {version}")));
    }
    let lambda = r.f64("lambda")?;
    let count = r.u32("tensor count")?;
    let mut encoder = ParameterSet::new();
    let mut decoder = ParameterSet::new();
    let mut entropy = ParameterSet::new();
    for _ in 0..count {
        let start = r.pos;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Format { offset: start as u64, reason: "tensor name is not utf-8".into() })?
            .to_owned();
        let ndims = r.u32("dimension count")? as usize;
        if ndims == 0 || ndims > 8 {
            return Err(r.err(format!("implausible dimension count {ndims} for {name}")));
        }
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u32("dimension")? as usize);
        }
        let n: usize = dims.iter().product();
        if n == 0 || n > (r.bytes.len() - r.pos) / 8 {
            return Err(r.err(format!("truncated data for tensor {name} {dims:?}")));
        }
        let data = (0..n).map(|_| r.f64("tensor data")).collect::<Result<Vec<_>>>()?;
        let tensor = Tensor::new(&dims, data)?;
        let set = if name.starts_with("encoder.") {
            &mut encoder
        } else if name.starts_with("decoder.") {
            &mut decoder
        } else if name.starts_with("entropy.") {
            &mut entropy
        } else {
            return Err(Error::Format { offset: start as u64, reason: format!("unknown tensor section in {name:?}") });
        };
        set.insert(name, tensor)
            .map_err(|e| Error::Format { offset: start as u64, reason: e.to_string() })?;
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after last tensor"));
    }
    let model = CodecModel { encoder, decoder, entropy, lambda };
    model.validate()?;
    Ok(model)
}

pub fn save_weights(model: &CodecModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_weights(model))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<CodecModel> {
    decode_weights(&fs::read(path)?)
}
