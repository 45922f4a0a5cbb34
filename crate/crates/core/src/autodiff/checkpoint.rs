//! Flat binary container of named arrays with a text index.
//!
//! Layout:
//!
//! ```text
//! segcvae-ckpt-1
//! meta <key> <value>
//! array <name> <f64|f32> <d0>x<d1>x... <byte offset>
//! data <byte length>
//! <little-endian payload>
//! ```
//!
//! Offsets are relative to the first payload byte. Meta entries are written
//! in key order and arrays in insertion order, so identical contents always
//! serialize to identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "segcvae-ckpt-1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F64,
    F32,
}

impl DType {
    fn tag(self) -> &'static str {
        match self {
            DType::F64 => "f64",
            DType::F32 => "f32",
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F64 => 8,
            DType::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    meta: BTreeMap<String, String>,
    arrays: Vec<(String, DType, Tensor)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(bad(format!("invalid name {name:?}")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> Result<()> {
        check_name(key)?;
        let value = value.to_string();
        if value.contains('\n') {
            return Err(bad(format!("meta {key}: value spans lines")));
        }
        self.meta.insert(key.to_string(), value);
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn meta_entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.meta.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Parses a meta value, failing when it is absent or malformed.
    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key).ok_or_else(|| bad(format!("missing meta {key}")))?;
        raw.parse().map_err(|_| bad(format!("meta {key}: cannot parse {raw:?}")))
    }

    pub fn push(&mut self, name: &str, dtype: DType, value: Tensor) -> Result<()> {
        check_name(name)?;
        if self.arrays.iter().any(|(n, _, _)| n == name) {
            return Err(bad(format!("duplicate array {name}")));
        }
        self.arrays.push((name.to_string(), dtype, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _, _)| n == name).map(|(_, _, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let mut header = String::new();
        header.push_str(CHECKPOINT_VERSION);
        header.push('\n');
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (name, dtype, t) in &self.arrays {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            header.push_str(&format!("array {name} {} {} {offset}\n", dtype.tag(), dims.join("x")));
            offset += t.len() * dtype.width();
        }
        header.push_str(&format!("data {offset}\n"));
        w.write_all(header.as_bytes())?;
        let mut payload = Vec::with_capacity(offset);
        for (_, dtype, t) in &self.arrays {
            for &v in t.data() {
                match dtype {
                    DType::F64 => payload.extend_from_slice(&v.to_le_bytes()),
                    DType::F32 => payload.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        w.write_all(&payload)?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        let next_line = |r: &mut BufReader<_>, line: &mut String| -> Result<()> {
            line.clear();
            if r.read_line(line)? == 0 {
                return Err(bad("truncated index"));
            }
            Ok(())
        };
        next_line(&mut r, &mut line)?;
        if line.trim_end() != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {:?}", line.trim_end())));
        }
        let mut ckpt = Checkpoint::new();
        let mut index: Vec<(String, DType, Vec<usize>, usize)> = Vec::new();
        let total = loop {
            next_line(&mut r, &mut line)?;
            let text = line.trim_end_matches('\n');
            let (kind, rest) = text.split_once(' ').ok_or_else(|| bad(format!("bad index line {text:?}")))?;
            match kind {
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ckpt.meta.insert(k.to_string(), v.to_string());
                }
                "array" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    let [name, dtype, dims, off] = f[..] else {
                        return Err(bad(format!("bad array line {text:?}")));
                    };
                    let dtype = match dtype {
                        "f64" => DType::F64,
                        "f32" => DType::F32,
                        other => return Err(bad(format!("unknown dtype {other}"))),
                    };
                    let shape = dims
                        .split('x')
                        .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad dims {dims}"))))
                        .collect::<Result<Vec<_>>>()?;
                    let off = off.parse().map_err(|_| bad(format!("bad offset {off}")))?;
                    index.push((name.to_string(), dtype, shape, off));
                }
                "data" => break rest.parse::<usize>().map_err(|_| bad("bad data length"))?,
                other => return Err(bad(format!("unknown index entry {other}"))),
            }
        };
        let mut payload = vec![0u8; total];
        r.read_exact(&mut payload).map_err(|_| bad("truncated payload"))?;
        for (name, dtype, shape, off) in index {
            let n: usize = shape.iter().product();
            let end = off + n * dtype.width();
            let bytes = payload.get(off..end).ok_or_else(|| bad(format!("{name}: out of range")))?;
            let data = match dtype {
                DType::F64 => bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                DType::F32 => bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                    .collect(),
            };
            ckpt.push(&name, dtype, Tensor::new(&shape, data)?)?;
        }
        Ok(ckpt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_text_and_payload_follows() {
        let mut c = Checkpoint::new();
        c.set_meta("max_clen", 25).unwrap();
        c.push("enc.w_r", DType::F64, Tensor::zeros(&[2, 3])).unwrap();
        c.push("half", DType::F32, Tensor::row(&[1.5, -2.0])).unwrap();
        let bytes = c.to_bytes();
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.starts_with("segcvae-ckpt-1\nmeta max_clen 25\narray enc.w_r f64 2x3 0\narray half f32 1x2 48\ndata 56\n"));
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_wrong_version_and_names() {
        assert!(Checkpoint::read_from(&b"other-1\ndata 0\n"[..]).is_err());
        let mut c = Checkpoint::new();
        assert!(c.push("has space", DType::F64, Tensor::scalar(1.0)).is_err());
        c.push("a", DType::F64, Tensor::scalar(1.0)).unwrap();
        assert!(c.push("a", DType::F64, Tensor::scalar(1.0)).is_err());
    }

    proptest! {
        #[test]
        fn f64_arrays_round_trip_bitwise(vals in proptest::collection::vec(-1e6f64..1e6, 1..40), cols in 1usize..5) {
            let rows = vals.len() / cols;
            prop_assume!(rows > 0);
            let t = Tensor::new(&[rows, cols], vals[..rows * cols].to_vec()).unwrap();
            let mut c = Checkpoint::new();
            c.push("t", DType::F64, t.clone()).unwrap();
            let back = Checkpoint::read_from(&c.to_bytes()[..]).unwrap();
            prop_assert_eq!(back.get("t").unwrap(), &t);
        }
    }
}
