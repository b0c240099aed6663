//! Little-endian binary checkpoint format.
//!
//! ```text
//! "RRLB"                magic
//! u32                   format version
//! u8                    encoder kind (0 dense, 1 conv_small)
//! u32 n, u32 * n        layer widths
//! u32 n, u32 * n        input shape
//! u32                   classes
//! u32                   head dimension
//! u8                    freeze_encoder flag
//! u64                   rng seed
//! u32                   parameter tensor count
//! per tensor: u32 rank, u32 * rank dims, f64 * product(dims)
//! ```

use crate::error::{Error, Result};
use crate::models::{EncoderConfig, EncoderKind, ModelBundle};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"RRLB";
pub const VERSION: u32 = 1;

/// Byte offset of the `freeze_encoder` flag for a given config.
pub fn freeze_flag_offset(config: &EncoderConfig) -> usize {
    4 + 4 + 1 + 4 + 4 * config.layer_widths.len() + 4 + 4 * config.input_shape.len() + 4 + 4
}

pub(crate) fn encode(model: &ModelBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match model.config.kind {
        EncoderKind::Dense => 0,
        EncoderKind::ConvSmall => 1,
    });
    let put_list = |out: &mut Vec<u8>, xs: &[usize]| {
        out.extend_from_slice(&(xs.len() as u32).to_le_bytes());
        for &x in xs {
            out.extend_from_slice(&(x as u32).to_le_bytes());
        }
    };
    put_list(&mut out, &model.config.layer_widths);
    put_list(&mut out, &model.config.input_shape);
    out.extend_from_slice(&(model.n_classes as u32).to_le_bytes());
    out.extend_from_slice(&(model.head_dim as u32).to_le_bytes());
    out.push(u8::from(model.freeze_encoder));
    out.extend_from_slice(&model.rng_seed.to_le_bytes());
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, t) in params {
        put_list(&mut out, t.shape());
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!("checkpoint ends inside {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn list(&mut self, what: &str) -> Result<Vec<usize>> {
        let n = self.u32(what)? as usize;
        if n > 64 {
            return Err(Error::Parse(format!("implausible {what} length {n}")));
        }
        (0..n).map(|_| Ok(self.u32(what)? as usize)).collect()
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ModelBundle> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::VersionMismatch(format!(
            "not a checkpoint (magic {:?}, expected {:?})",
            String::from_utf8_lossy(magic),
            std::str::from_utf8(MAGIC).expect("ascii")
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch(format!("found version {version}, supported {VERSION}")));
    }
    let kind = match r.u8("encoder kind")? {
        0 => EncoderKind::Dense,
        1 => EncoderKind::ConvSmall,
        k => return Err(Error::Parse(format!("unknown encoder kind {k}"))),
    };
    let layer_widths = r.list("layer widths")?;
    let input_shape = r.list("input shape")?;
    let config = EncoderConfig {
        kind,
        layer_widths,
        input_shape,
    };
    let n_classes = r.u32("class count")? as usize;
    let head_dim = r.u32("head dimension")? as usize;
    let freeze_encoder = match r.u8("freeze flag")? {
        0 => false,
        1 => true,
        f => return Err(Error::Parse(format!("invalid freeze flag {f}"))),
    };
    let rng_seed = r.u64("seed")?;

    // The declared config determines every expected parameter shape.
    let mut model = crate::models::init_model(config, n_classes, head_dim, rng_seed)?;
    model.freeze_encoder = freeze_encoder;
    let count = r.u32("parameter count")? as usize;
    let expected: Vec<Vec<usize>> = model.params().iter().map(|(_, t)| t.shape().to_vec()).collect();
    if count != expected.len() {
        return Err(Error::shape(
            "checkpoint",
            format!("{count} parameter tensors, config implies {}", expected.len()),
        ));
    }
    let mut loaded = Vec::with_capacity(count);
    for (i, want) in expected.iter().enumerate() {
        let shape = r.list("parameter shape")?;
        if &shape != want {
            return Err(Error::shape(
                "checkpoint",
                format!("parameter {i} has shape {shape:?}, config implies {want:?}"),
            ));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 8, "parameter data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        loaded.push(Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse(format!("{} trailing bytes after parameters", bytes.len() - r.pos)));
    }
    for (slot, t) in model.params_mut().into_iter().zip(loaded) {
        *slot = t;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_model;

    fn model() -> ModelBundle {
        init_model(EncoderConfig::dense(6, &[5, 4]), 3, 2, 9).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(back, m);
        assert!(m.params().iter().zip(back.params()).all(|((_, a), (_, b))| a.bitwise_eq(b)));
    }

    #[test]
    fn flipped_magic_is_version_mismatch() {
        let mut bytes = encode(&model());
        bytes[0] ^= 0xff;
        assert!(matches!(decode(&bytes), Err(Error::VersionMismatch(_))));
        let mut bytes = encode(&model());
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::VersionMismatch(_))));
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode(&model());
        for cut in [3, 10, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Truncated(_))), "cut {cut}");
        }
    }

    #[test]
    fn declared_dimensions_are_checked() {
        let m = model();
        let mut bytes = encode(&m);
        // first layer width 5 -> 6 makes every stored shape disagree with the config
        let off = 4 + 4 + 1 + 4;
        bytes[off] = 6;
        assert!(matches!(decode(&bytes), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn freeze_flag_is_the_only_difference() {
        let mut m = model();
        let a = encode(&m);
        m.freeze_encoder = true;
        let b = encode(&m);
        let diffs: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(diffs, vec![freeze_flag_offset(&m.config)]);
    }
}
