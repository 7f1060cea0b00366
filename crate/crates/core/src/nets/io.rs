//! Binary model files.
//!
//! Layout, little-endian: `"BNET"`, `u32` version, `f64` lambda, then for
//! each of the two networks a `u32` layer count followed by
//! `(u8 kind, u32 in, u32 out, u32 filter)` per layer; the parameters of the
//! boundary network and then the pixel network follow as `f64` values in
//! layer order, weight before bias.

use std::path::Path;

use crate::error::{Error, Result};

use super::layers::{LayerKind, LayerSpec};
use super::model::{Model, Sequential};
use super::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"BNET";
pub const VERSION: u32 = 1;

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.lambda.to_le_bytes());
    for net in [&model.boundary, &model.pixel] {
        out.extend_from_slice(&(net.specs.len() as u32).to_le_bytes());
        for s in &net.specs {
            out.push(s.kind.code());
            for v in [s.in_ch, s.out_ch, s.filter] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
    }
    for p in model.params() {
        for v in &p.data {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.pos, format!("truncated {what}")));
        }
        self.pos += n;
        Ok(&self.bytes[self.pos - n..self.pos])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn specs(&mut self) -> Result<Vec<LayerSpec>> {
        let n = self.u32("layer count")?;
        if n == 0 || n > 1024 {
            return Err(Error::parse(self.pos - 4, format!("implausible layer count {n}")));
        }
        (0..n)
            .map(|_| {
                let at = self.pos;
                let code = self.take(1, "layer kind")?[0];
                let kind = LayerKind::from_code(code)
                    .ok_or_else(|| Error::parse(at, format!("unknown layer kind {code}")))?;
                let in_ch = self.u32("layer table")? as usize;
                let out_ch = self.u32("layer table")? as usize;
                let filter = self.u32("layer table")? as usize;
                let spec = LayerSpec {
                    kind,
                    in_ch,
                    out_ch,
                    filter,
                };
                spec.validate().map_err(|e| Error::parse(at, e.to_string()))?;
                Ok(spec)
            })
            .collect()
    }

    fn network(&mut self, specs: Vec<LayerSpec>) -> Result<Sequential> {
        let mut params = Vec::new();
        for s in &specs {
            let Some(ws) = s.weight_shape() else { continue };
            for shape in [ws.to_vec(), vec![s.out_ch]] {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|_| self.f64("parameters")).collect::<Result<Vec<_>>>()?;
                params.push(Tensor::new(shape, data)?);
            }
        }
        Sequential::new(specs, params).map_err(|e| Error::parse(self.pos, e.to_string()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse(0, "missing BNET magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let lambda = r.f64("lambda")?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::parse(8, format!("lambda {lambda} is not positive")));
    }
    let boundary_specs = r.specs()?;
    let pixel_specs = r.specs()?;
    let boundary = r.network(boundary_specs)?;
    let pixel = r.network(pixel_specs)?;
    if r.pos != bytes.len() {
        return Err(Error::parse(r.pos, "trailing bytes after parameters"));
    }
    Ok(Model {
        lambda,
        boundary,
        pixel,
    })
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    decode_model(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::model::{InitScheme, NetConfig};

    fn model() -> Model {
        Model::init(&NetConfig::tiny(), 0.5, InitScheme::Xavier, 9).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let bytes = encode_model(&m);
        assert_eq!(&bytes[..4], b"BNET");
        assert_eq!(decode_model(&bytes).unwrap(), m);
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let bytes = encode_model(&model());
        for cut in [0, 3, 10, 20, bytes.len() - 1] {
            assert!(matches!(decode_model(&bytes[..cut]), Err(Error::Parse { .. })), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_model(&extra), Err(Error::Parse { .. })));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(decode_model(&bad), Err(Error::Parse { offset: 0, .. })));
    }
}
