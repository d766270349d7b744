//! `ADPC` embedding-cache file format.
//!
//! Little-endian layout:
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0      | 4    | magic `"ADPC"` |
//! | 4      | 4    | version `u32` = 1 |
//! | 8      | 8    | `n_samples` `u64` |
//! | 16     | 4    | `d_img` `u32` |
//! | 20     | 4    | `d_txt` `u32` |
//! | 24     | 4    | `tokens_img` `u32` |
//! | 28     | 4    | `tokens_txt` `u32` |
//! | 32     | 1    | `has_labels` `u8` (0/1) |
//! | 33     | 1    | `split` `u8` (0 train, 1 val, 2 test) |
//! | 34     | 6    | reserved, must be zero |
//! | 40     | ...  | payload: image `f32`s, text `f32`s, optional `u32` labels |
//! | end−4  | 4    | CRC-32 of payload |
//!
//! Floats are stored as `f32` and widened to `f64` in memory; the in-memory
//! cache is already quantized to `f32` precision, so the round trip is
//! bit-exact. An empty cache cannot reach the writer — the in-memory
//! constructor rejects `n = 0` — and the reader rejects it in the header.

use std::path::Path;

use adaptor_core::data::{EmbeddingCache, Split};

use crate::error::{CliError, FormatError, Result};
use crate::wire::{Reader, Writer};

pub const MAGIC: [u8; 4] = *b"ADPC";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 40;

/// Header summary plus integrity status, for `inspect`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdpcInfo {
    pub n_samples: u64,
    pub d_img: u32,
    pub d_txt: u32,
    pub tokens_img: u32,
    pub tokens_txt: u32,
    pub has_labels: bool,
    pub split: Split,
    pub payload_bytes: u64,
    pub stored_crc: u32,
    pub computed_crc: u32,
}

impl AdpcInfo {
    pub fn checksum_ok(&self) -> bool {
        self.stored_crc == self.computed_crc
    }
}

struct Header {
    n_samples: u64,
    d_img: u32,
    d_txt: u32,
    tokens_img: u32,
    tokens_txt: u32,
    has_labels: bool,
    split: Split,
}

impl Header {
    /// Payload length in bytes, overflow-checked so an absurd header fails
    /// cleanly instead of wrapping or allocating.
    fn payload_bytes(&self) -> std::result::Result<u64, FormatError> {
        let img = self
            .n_samples
            .checked_mul(self.tokens_img as u64)
            .and_then(|v| v.checked_mul(self.d_img as u64))
            .and_then(|v| v.checked_mul(4));
        let txt = self
            .n_samples
            .checked_mul(self.tokens_txt as u64)
            .and_then(|v| v.checked_mul(self.d_txt as u64))
            .and_then(|v| v.checked_mul(4));
        let labels = if self.has_labels { self.n_samples.checked_mul(4) } else { Some(0) };
        img.zip(txt)
            .zip(labels)
            .and_then(|((i, t), l)| i.checked_add(t).and_then(|s| s.checked_add(l)))
            .ok_or_else(|| FormatError::Header("payload size overflows u64".into()))
    }
}

fn parse_header(r: &mut Reader<'_>) -> std::result::Result<Header, FormatError> {
    let magic: [u8; 4] = r.take(4)?.try_into().expect("take(4) yields 4 bytes");
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic, expected: MAGIC });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { found: version, expected: VERSION });
    }
    let n_samples = r.u64()?;
    let d_img = r.u32()?;
    let d_txt = r.u32()?;
    let tokens_img = r.u32()?;
    let tokens_txt = r.u32()?;
    let has_labels = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(FormatError::Header(format!("has_labels byte is {other}, want 0 or 1"))),
    };
    let split_byte = r.u8()?;
    let split = Split::from_u8(split_byte)
        .map_err(|_| FormatError::Header(format!("split byte is {split_byte}, want 0, 1, or 2")))?;
    let reserved = r.take(6)?;
    if reserved.iter().any(|&b| b != 0) {
        return Err(FormatError::Header("reserved bytes must be zero".into()));
    }
    if n_samples == 0 {
        return Err(FormatError::Header("cache holds zero samples".into()));
    }
    if d_img == 0 || d_txt == 0 || tokens_img == 0 || tokens_txt == 0 {
        return Err(FormatError::Header("dimensions and token counts must be nonzero".into()));
    }
    Ok(Header { n_samples, d_img, d_txt, tokens_img, tokens_txt, has_labels, split })
}

fn check_total_len(buf_len: u64, payload: u64) -> std::result::Result<u64, FormatError> {
    let expected = HEADER_BYTES
        .checked_add(payload)
        .and_then(|v| v.checked_add(4))
        .ok_or_else(|| FormatError::Header("file size overflows u64".into()))?;
    if buf_len < expected {
        return Err(FormatError::Truncated { expected, found: buf_len });
    }
    if buf_len > expected {
        return Err(FormatError::TrailingData { expected, found: buf_len });
    }
    Ok(expected)
}

fn crc32(bytes: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(bytes);
    h.finalize()
}

/// Serializes a cache to the canonical byte encoding.
pub fn encode(cache: &EmbeddingCache) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(&MAGIC);
    w.u32(VERSION);
    w.u64(cache.n_samples() as u64);
    w.u32(cache.d_img() as u32);
    w.u32(cache.d_txt() as u32);
    w.u32(cache.tokens_img() as u32);
    w.u32(cache.tokens_txt() as u32);
    w.u8(u8::from(cache.labels().is_some()));
    w.u8(cache.split().as_u8());
    w.bytes(&[0u8; 6]);

    let mut payload = Writer::new();
    payload.f32_slice(cache.image_data().iter().map(|&v| v as f32));
    payload.f32_slice(cache.text_data().iter().map(|&v| v as f32));
    if let Some(labels) = cache.labels() {
        payload.u32_slice(labels);
    }
    let payload = payload.into_bytes();
    let crc = crc32(&payload);
    w.bytes(&payload);
    w.u32(crc);
    w.into_bytes()
}

/// Parses the canonical byte encoding back into a cache. Every corruption
/// mode maps to a distinct [`FormatError`].
pub fn decode(bytes: &[u8]) -> std::result::Result<EmbeddingCache, FormatError> {
    let mut r = Reader::new(bytes);
    let header = parse_header(&mut r)?;
    let payload_len = header.payload_bytes()?;
    check_total_len(bytes.len() as u64, payload_len)?;

    let payload_start = r.position();
    let n = header.n_samples as usize;
    let img_count = n * header.tokens_img as usize * header.d_img as usize;
    let txt_count = n * header.tokens_txt as usize * header.d_txt as usize;
    let img: Vec<f64> = r.f32_slice(img_count)?.into_iter().map(f64::from).collect();
    let txt: Vec<f64> = r.f32_slice(txt_count)?.into_iter().map(f64::from).collect();
    let labels = if header.has_labels { Some(r.u32_slice(n)?) } else { None };
    let payload_end = r.position();

    let stored = r.u32()?;
    let computed = crc32(&bytes[payload_start..payload_end]);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }

    EmbeddingCache::new(
        n,
        header.d_img as usize,
        header.d_txt as usize,
        header.tokens_img as usize,
        header.tokens_txt as usize,
        img,
        txt,
        labels,
        header.split,
    )
    .map_err(|e| FormatError::Header(format!("payload rejected: {e}")))
}

/// Header echo plus checksum verdict without constructing the cache; used
/// by `inspect`, which must report a checksum FAIL rather than bail on it.
pub fn inspect_bytes(bytes: &[u8]) -> std::result::Result<AdpcInfo, FormatError> {
    let mut r = Reader::new(bytes);
    let header = parse_header(&mut r)?;
    let payload_len = header.payload_bytes()?;
    check_total_len(bytes.len() as u64, payload_len)?;
    let start = r.position();
    let payload = r.take(payload_len as usize)?;
    debug_assert_eq!(start as u64, HEADER_BYTES);
    let stored = r.u32()?;
    Ok(AdpcInfo {
        n_samples: header.n_samples,
        d_img: header.d_img,
        d_txt: header.d_txt,
        tokens_img: header.tokens_img,
        tokens_txt: header.tokens_txt,
        has_labels: header.has_labels,
        split: header.split,
        payload_bytes: payload_len,
        stored_crc: stored,
        computed_crc: crc32(payload),
    })
}

/// Writes atomically: temp file in the target directory, then rename.
pub fn write_cache(cache: &EmbeddingCache, path: &Path) -> Result<()> {
    crate::fsutil::write_atomic(path, &encode(cache))
}

pub fn read_cache(path: &Path) -> Result<EmbeddingCache> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| CliError::format(path, e))
}

/// Plain-text import: one sample per line, `id label <image floats> | <text floats>`,
/// whitespace-separated, for interoperating with external encoder dumps.
/// Blank lines are skipped. Dimensions are fixed by the first sample; ids
/// must be unique; every line carries a label.
pub fn import_text(text: &str, split: Split) -> Result<EmbeddingCache> {
    let mut img = Vec::new();
    let mut txt = Vec::new();
    let mut labels = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    let mut d_img = None;
    let mut d_txt = None;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (left, right) = line
            .split_once('|')
            .ok_or_else(|| CliError::invalid(format!("line {lineno}: missing '|' separator")))?;
        if right.contains('|') {
            return Err(CliError::invalid(format!("line {lineno}: more than one '|' separator")));
        }

        let mut fields = left.split_whitespace();
        let id: u64 = fields
            .next()
            .ok_or_else(|| CliError::invalid(format!("line {lineno}: missing sample id")))?
            .parse()
            .map_err(|e| CliError::invalid(format!("line {lineno}: bad sample id: {e}")))?;
        if !ids.insert(id) {
            return Err(CliError::invalid(format!("line {lineno}: duplicate sample id {id}")));
        }
        let label: u32 = fields
            .next()
            .ok_or_else(|| CliError::invalid(format!("line {lineno}: missing label")))?
            .parse()
            .map_err(|e| CliError::invalid(format!("line {lineno}: bad label: {e}")))?;
        labels.push(label);

        let parse_floats = |part: &str, side: &str| -> Result<Vec<f64>> {
            part.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|e| {
                        CliError::invalid(format!("line {lineno}: bad {side} float {tok:?}: {e}"))
                    })
                })
                .collect()
        };
        let img_row: Vec<f64> = fields
            .map(|tok| {
                tok.parse::<f64>().map_err(|e| {
                    CliError::invalid(format!("line {lineno}: bad image float {tok:?}: {e}"))
                })
            })
            .collect::<Result<_>>()?;
        let txt_row = parse_floats(right, "text")?;

        match d_img {
            None => d_img = Some(img_row.len()),
            Some(d) if d != img_row.len() => {
                return Err(CliError::invalid(format!(
                    "line {lineno}: {} image floats, expected {d}",
                    img_row.len()
                )));
            }
            _ => {}
        }
        match d_txt {
            None => d_txt = Some(txt_row.len()),
            Some(d) if d != txt_row.len() => {
                return Err(CliError::invalid(format!(
                    "line {lineno}: {} text floats, expected {d}",
                    txt_row.len()
                )));
            }
            _ => {}
        }
        img.extend(img_row);
        txt.extend(txt_row);
    }

    let n = labels.len();
    if n == 0 {
        return Err(CliError::invalid("no samples in text input"));
    }
    let d_img = d_img.expect("n > 0 implies dims set");
    let d_txt = d_txt.expect("n > 0 implies dims set");
    if d_img == 0 || d_txt == 0 {
        return Err(CliError::invalid("each sample needs at least one image and one text float"));
    }
    EmbeddingCache::new(n, d_img, d_txt, 1, 1, img, txt, Some(labels), split).map_err(CliError::Core)
}
