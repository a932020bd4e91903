//! DGIM image container.
//!
//! Layout (little-endian): `"DGIM"`, u32 version, u32 N, u16 H, u16 W, u8 C,
//! u8 K, K x (u8 length + UTF-8 class name), N*C*H*W pixel bytes, N label bytes.

use std::path::Path;

use domgen_core::data::LabeledImageSet;

use super::{read_file, write_file, ByteReader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DGIM";
pub const VERSION: u32 = 1;

pub fn encode_dgim(set: &LabeledImageSet) -> Result<Vec<u8>> {
    let [c, h, w] = set.image_shape();
    let too_big = |what: &str| Error::format("DGIM", format!("{what} does not fit the header"));
    let n = u32::try_from(set.len()).map_err(|_| too_big("image count"))?;
    let h = u16::try_from(h).map_err(|_| too_big("height"))?;
    let w = u16::try_from(w).map_err(|_| too_big("width"))?;
    let c = u8::try_from(c).map_err(|_| too_big("channel count"))?;
    let k = u8::try_from(set.num_classes()).map_err(|_| too_big("class count"))?;
    let mut out = Vec::with_capacity(18 + set.pixels().len() + set.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.push(c);
    out.push(k);
    for name in set.class_names() {
        let len = u8::try_from(name.len()).map_err(|_| too_big("class name"))?;
        out.push(len);
        out.extend_from_slice(name.as_bytes());
    }
    out.extend_from_slice(set.pixels());
    out.extend_from_slice(set.labels());
    Ok(out)
}

pub fn decode_dgim(bytes: &[u8]) -> Result<LabeledImageSet> {
    let mut r = ByteReader::new(bytes, "DGIM");
    if &r.array::<4>("magic")? != MAGIC {
        return Err(Error::format("DGIM", "bad magic"));
    }
    let version = r.u32_le("version")?;
    if version != VERSION {
        return Err(Error::format("DGIM", format!("unsupported version {version}")));
    }
    let n = r.u32_le("count")? as usize;
    let h = r.u16_le("height")? as usize;
    let w = r.u16_le("width")? as usize;
    let c = r.u8("channels")? as usize;
    let k = r.u8("class count")? as usize;
    if n == 0 || h == 0 || w == 0 || c == 0 || k == 0 {
        return Err(Error::format("DGIM", format!("degenerate header N={n} {c}x{h}x{w} K={k}")));
    }
    let mut names = Vec::with_capacity(k);
    for _ in 0..k {
        let len = r.u8("class name length")? as usize;
        let raw = r.take(len, "class name")?;
        let name = std::str::from_utf8(raw).map_err(|_| Error::format("DGIM", "class name is not UTF-8"))?;
        names.push(name.to_string());
    }
    // the header alone fixes the payload size, so check it before copying anything
    let payload = n * (c * h * w + 1);
    if r.remaining() != payload {
        return Err(Error::format(
            "DGIM",
            format!("payload is {} bytes, header implies {payload}", r.remaining()),
        ));
    }
    let pixels = r.take(n * c * h * w, "pixels")?.to_vec();
    let labels = r.take(n, "labels")?.to_vec();
    r.finish()?;
    Ok(LabeledImageSet::new(c, h, w, pixels, labels, names)?)
}

pub fn load_dgim(path: &Path) -> Result<LabeledImageSet> {
    decode_dgim(&read_file(path)?)
}

pub fn save_dgim(set: &LabeledImageSet, path: &Path) -> Result<()> {
    write_file(path, &encode_dgim(set)?)
}
