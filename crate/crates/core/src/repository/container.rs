//! The protected-image container (`S2SC`).

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;

use super::wire::{expect_preamble, split_digest, write_atomic, Reader, Writer, DIGEST_LEN};
use crate::error::{Error, Result};
use crate::image::PixelBuffer;
use crate::metadata::{parse_metadata, serialize_metadata};
use crate::regioncrypt::{EncryptedPso, ProtectedImage, IV_LEN, MAC_LEN};

pub const CONTAINER_MAGIC: &[u8; 4] = b"S2SC";
pub const CONTAINER_VERSION: u16 = 1;
/// Bytes per blob index entry.
pub const INDEX_ENTRY_LEN: usize = 4 + 2 + 8 + 8 + IV_LEN + MAC_LEN + 8;
const PREAMBLE_LEN: usize = 4 + 2 + 4;
const IMAGE_PREFIX_LEN: usize = 4 + 4 + 1 + 8;
const WHAT: &str = "container";

/// Serializes a protected image. The output depends only on the input.
pub fn encode_container(p: &ProtectedImage) -> Result<Vec<u8>> {
    let metadata = serialize_metadata(&p.metadata);
    let mut compressed = DeflateEncoder::new(Vec::new(), Compression::default());
    compressed.write_all(p.scrambled.as_bytes())?;
    let compressed = compressed.finish()?;

    let header_len = 4 + metadata.len() + 4 + p.blobs.len() * INDEX_ENTRY_LEN;
    let blob_start = (PREAMBLE_LEN + header_len + IMAGE_PREFIX_LEN + compressed.len()) as u64;

    let mut w = Writer::default();
    w.bytes(CONTAINER_MAGIC);
    w.u16(CONTAINER_VERSION);
    w.u32(u32::try_from(header_len).map_err(|_| Error::validation("container header too large"))?);
    w.blob32(&metadata)?;
    w.u32(p.blobs.len() as u32);
    let mut offset = blob_start;
    for b in &p.blobs {
        w.u32(b.pso_id);
        w.u16(b.group);
        w.u64(offset);
        w.u64(b.ciphertext.len() as u64);
        w.bytes(&b.iv);
        w.bytes(&b.mac);
        w.u64(b.pixel_count);
        offset += b.ciphertext.len() as u64;
    }
    w.u32(p.scrambled.width());
    w.u32(p.scrambled.height());
    w.u8(p.scrambled.channels());
    w.u64(compressed.len() as u64);
    w.bytes(&compressed);
    debug_assert_eq!(w.buf.len() as u64, blob_start);
    for b in &p.blobs {
        w.bytes(&b.ciphertext);
    }
    Ok(w.finish())
}

struct IndexEntry {
    pso_id: u32,
    group: u16,
    offset: u64,
    length: u64,
    iv: [u8; IV_LEN],
    mac: [u8; MAC_LEN],
    pixel_count: u64,
}

/// Parses a container, verifying the digest, layout and metadata.
pub fn decode_container(bytes: &[u8]) -> Result<ProtectedImage> {
    let body = split_digest(bytes, WHAT)?;
    let mut r = Reader::new(body, WHAT);
    expect_preamble(&mut r, CONTAINER_MAGIC, CONTAINER_VERSION)?;
    let header_len = r.u32("header_len")? as usize;
    let header_start = r.pos();

    let metadata_bytes = r.blob32("metadata")?;
    let metadata = parse_metadata(metadata_bytes).map_err(|e| r.corrupt(format!("metadata: {e}")))?;
    let count = r.u32("blob count")? as usize;
    if count.saturating_mul(INDEX_ENTRY_LEN) > r.remaining() {
        return Err(r.corrupt(format!("blob count {count} exceeds the file size")));
    }
    let mut index = Vec::with_capacity(count);
    for _ in 0..count {
        index.push(IndexEntry {
            pso_id: r.u32("pso_id")?,
            group: r.u16("group")?,
            offset: r.u64("offset")?,
            length: r.u64("length")?,
            iv: r.array("iv")?,
            mac: r.array("mac")?,
            pixel_count: r.u64("pixel_count")?,
        });
    }
    if r.pos() - header_start != header_len {
        return Err(r.corrupt(format!(
            "header_len says {header_len} bytes but the header holds {}",
            r.pos() - header_start
        )));
    }

    let width = r.u32("width")?;
    let height = r.u32("height")?;
    let channels = r.u8("channels")?;
    let compressed_len = r.u64("compressed length")?;
    let compressed = r.take(
        usize::try_from(compressed_len).map_err(|_| r.corrupt("compressed length overflows"))?,
        "image data",
    )?;
    let expected_raw = width as u64 * height as u64 * channels as u64;
    let mut raw = Vec::new();
    DeflateDecoder::new(compressed)
        .take(expected_raw + 1)
        .read_to_end(&mut raw)
        .map_err(|e| r.corrupt(format!("image data does not inflate: {e}")))?;
    if raw.len() as u64 != expected_raw {
        return Err(r.corrupt(format!(
            "image data inflates to {} bytes, expected {expected_raw}",
            raw.len()
        )));
    }
    let scrambled =
        PixelBuffer::new(width, height, channels, raw).map_err(|e| r.corrupt(format!("image section: {e}")))?;

    let blob_start = r.pos() as u64;
    let blob_end = body.len() as u64;
    let mut cursor = blob_start;
    let mut blobs = Vec::with_capacity(count);
    for e in index {
        let end = e
            .offset
            .checked_add(e.length)
            .ok_or_else(|| r.corrupt("blob range overflows"))?;
        if e.offset < blob_start || end > blob_end {
            return Err(r.corrupt(format!("blob for PSO {} lies outside the blob section", e.pso_id)));
        }
        if e.offset < cursor {
            return Err(r.corrupt(format!("blob for PSO {} overlaps the previous blob", e.pso_id)));
        }
        if e.offset != cursor {
            return Err(r.corrupt(format!("gap before the blob for PSO {}", e.pso_id)));
        }
        cursor = end;
        blobs.push(EncryptedPso {
            pso_id: e.pso_id,
            group: e.group,
            iv: e.iv,
            ciphertext: body[e.offset as usize..end as usize].to_vec(),
            mac: e.mac,
            pixel_count: e.pixel_count,
        });
    }
    if cursor != blob_end {
        return Err(r.corrupt(format!("{} unindexed bytes after the last blob", blob_end - cursor)));
    }
    ProtectedImage::assemble(scrambled, blobs, metadata)
}

pub fn store_container(p: &ProtectedImage, path: &Path) -> Result<()> {
    write_atomic(path, &encode_container(p)?)
}

pub fn load_container(path: &Path) -> Result<ProtectedImage> {
    decode_container(&fs::read(path)?)
}

/// Size of everything in a container except the compressed image and the ciphertexts.
pub fn framing_len(blob_count: usize, metadata_len: usize) -> usize {
    PREAMBLE_LEN + 4 + metadata_len + 4 + blob_count * INDEX_ENTRY_LEN + IMAGE_PREFIX_LEN + DIGEST_LEN
}
