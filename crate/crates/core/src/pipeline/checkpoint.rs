//! Binary checkpoint layout, all integers little-endian:
//!
//! ```text
//! "PERL" | version u32 | tensor count u32
//! per tensor: name length u32 | UTF-8 name | dtype u8 (0 = f32) | rank u8 | dims u32 x rank | f32 data
//! "VOCB" | count u32 | per token: length u32 | UTF-8
//! "PALT" | count u32 | per category: length u32 | UTF-8 | r, g, b as f64
//! "CONF" | length u32 | UTF-8 JSON of the model and diffusion settings
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::DiffusionConfig;
use crate::conditioning::Vocabulary;
use crate::diffusion::{DenoiserConfig, DenoiserModel};
use crate::error::{Error, Result};
use crate::numerics::{ParameterStore, Tensor};
use crate::scenegen::Palette;

const MAGIC: &[u8; 4] = b"PERL";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Settings {
    model: DenoiserConfig,
    diffusion: DiffusionConfig,
}

/// A trained model with everything needed to sample from it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: DenoiserModel,
    pub diffusion: DiffusionConfig,
    pub palette: Palette,
    pub store: ParameterStore,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }

    fn tag(&mut self, tag: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != tag {
            return Err(Error::Checkpoint(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }
}

impl Checkpoint {
    /// Parameters are stored as f32; the returned checkpoint holds the
    /// rounded values so that generation from it matches a reloaded copy.
    pub fn new(model: DenoiserModel, diffusion: DiffusionConfig, palette: Palette, store: &ParameterStore) -> Self {
        Self { model, diffusion, palette, store: store.rounded_to_f32() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION as usize)?;
        put_u32(&mut out, self.store.len())?;
        for (name, t) in self.store.iter() {
            put_str(&mut out, name)?;
            out.push(DTYPE_F32);
            out.push(u8::try_from(t.rank()).map_err(|_| Error::Checkpoint(format!("rank of `{name}`")))?);
            for &d in t.dims() {
                put_u32(&mut out, d)?;
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(b"VOCB");
        put_u32(&mut out, self.model.vocab.len())?;
        for t in self.model.vocab.tokens() {
            put_str(&mut out, t)?;
        }
        out.extend_from_slice(b"PALT");
        put_u32(&mut out, self.palette.len())?;
        for (name, rgb) in &self.palette.entries {
            put_str(&mut out, name)?;
            for c in rgb {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out.extend_from_slice(b"CONF");
        let settings = Settings { model: self.model.config.clone(), diffusion: self.diffusion.clone() };
        put_str(&mut out, &serde_json::to_string(&settings).expect("settings serialize"))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("missing PERL magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let count = r.u32()?;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Checkpoint(format!("`{name}` has unknown dtype {dtype}")));
            }
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            store.insert(&name, Tensor::new(&dims, data)?)?;
        }
        r.tag(b"VOCB")?;
        let tokens = (0..r.u32()?).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        r.tag(b"PALT")?;
        let mut entries = Vec::new();
        for _ in 0..r.u32()? {
            let name = r.string()?;
            entries.push((name, [r.f64()?, r.f64()?, r.f64()?]));
        }
        r.tag(b"CONF")?;
        let settings: Settings =
            serde_json::from_str(&r.string()?).map_err(|e| Error::Checkpoint(format!("settings: {e}")))?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = DenoiserModel::new(settings.model, Vocabulary::new(tokens)?)?;
        let expected = model.init(0)?;
        for (name, t) in expected.iter() {
            let got = store.get(name).map_err(|_| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if got.dims() != t.dims() {
                return Err(Error::Checkpoint(format!("`{name}` has dims {:?}, expected {:?}", got.dims(), t.dims())));
            }
        }
        if store.len() != expected.len() {
            return Err(Error::Checkpoint(format!("{} tensors, model has {}", store.len(), expected.len())));
        }
        Ok(Self { model, diffusion: settings.diffusion, palette: Palette { entries }, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
