//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"TRIMODAL"  u32 version
//! u64 n, n bytes of JSON model configuration
//! u64 parameter count, then per parameter:
//!   u32 n, n bytes of name   u8 frozen   u32 rank   u64 × rank dims
//!   f64 × Π dims values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autograd::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"TRIMODAL";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Guards against allocating absurd buffers from a corrupt header.
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config).expect("config serializes");
    out.extend_from_slice(&(config.len() as u64).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.store.len() as u64).to_le_bytes());
    for p in model.store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.push(u8::from(p.frozen));
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<R> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("file is truncated".into()),
            _ => Error::Checkpoint(e.to_string()),
        })?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("exact length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > MAX_ELEMENTS {
            return Err(Error::Checkpoint(format!("implausible {what} {n}")));
        }
        Ok(n as usize)
    }
}

pub fn decode(reader: impl Read) -> Result<Model> {
    let mut r = Cursor { inner: reader };
    if &r.array::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let n = r.len("config length")?;
    let config: ModelConfig =
        serde_json::from_slice(&r.bytes(n)?).map_err(|e| Error::Checkpoint(format!("bad configuration: {e}")))?;
    let count = r.len("parameter count")?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(n)?).map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let frozen = match r.array::<1>()?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::Checkpoint(format!("bad frozen flag {b} for `{name}`"))),
        };
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len("dimension")).collect::<Result<Vec<_>>>()?;
        let elements: usize = shape.iter().product();
        if elements as u64 > MAX_ELEMENTS {
            return Err(Error::Checkpoint(format!("implausible shape {shape:?} for `{name}`")));
        }
        let raw = r.bytes(elements * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(name, Tensor::new(shape, data)?, frozen)?;
    }
    let mut rest = Vec::new();
    r.inner
        .read_to_end(&mut rest)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Model::from_parts(config, store)
}

pub fn save_checkpoint(path: &Path, model: &Model) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(model))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    decode(BufReader::new(file)).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioChannelConfig;
    use crate::video::VideoChannelConfig;

    #[test]
    fn round_trip_is_exact() {
        for config in [
            ModelConfig::Audio(AudioChannelConfig::desk()),
            ModelConfig::Video(VideoChannelConfig::default()),
        ] {
            let m = Model::init(config, 9).unwrap();
            let back = decode(encode(&m).as_slice()).unwrap();
            assert_eq!(back.config, m.config);
            for (a, b) in back.store.iter().zip(m.store.iter()) {
                assert_eq!((&a.name, &a.value, a.frozen), (&b.name, &b.value, b.frozen));
            }
        }
    }

    #[test]
    fn corrupt_files_rejected() {
        let m = Model::init(ModelConfig::Audio(AudioChannelConfig::desk()), 9).unwrap();
        let bytes = encode(&m);
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(bad.as_slice()), Err(Error::Checkpoint(_))));
        let mut bad = bytes.clone();
        bad[8] = 7;
        assert!(matches!(decode(bad.as_slice()), Err(Error::Checkpoint(msg)) if msg.contains("version")));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(extra.as_slice()).is_err());
    }
}
