//! On-disk embedding cache, one file per (video, model).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic          8 bytes   "FCEMBED\0"
//! version        u32       CACHE_FORMAT_VERSION
//! video_id       u32 length + UTF-8 bytes
//! content_hash   32 bytes  SHA-256 of the video bytes
//! model_id       u32 length + UTF-8 bytes
//! dim            u32
//! param_hash     32 bytes  SHA-256 of the pipeline parameters
//! total_frames   u64
//! skipped_frames u64
//! dropped_frames u64
//! rows           u64
//! rows × { frame_index u64, dim × f32 }
//! checksum       32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Files are written to a temporary name and renamed into place. A file
//! whose checksum, header or length does not match is reported as corrupt
//! and treated as a miss.

use sha2::{Digest, Sha256};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Embedding, EmbeddingSet};

pub const CACHE_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FCEMBED\0";
const EXTENSION: &str = "emb";

pub type Digest32 = [u8; 32];

/// Everything that identifies a cache entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheKey {
    pub video_id: String,
    pub content_hash: Digest32,
    pub model_id: String,
    pub param_hash: Digest32,
}

impl CacheKey {
    pub fn file_name(&self) -> String {
        let mut h = Sha256::new();
        for part in [
            self.video_id.as_bytes(),
            &self.content_hash,
            self.model_id.as_bytes(),
            &self.param_hash,
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        let digest = hex::encode(h.finalize());
        format!(
            "{}__{}__{}.{EXTENSION}",
            sanitize(&self.video_id),
            sanitize(&self.model_id),
            &digest[..16]
        )
    }

    pub fn path_in(&self, dir: &Path) -> PathBuf {
        dir.join(self.file_name())
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

#[derive(Debug)]
pub enum CacheLookup {
    Hit(EmbeddingSet),
    Miss,
    /// Unreadable or mismatched entry; the reason is meant for a warning.
    Corrupt {
        path: PathBuf,
        reason: String,
    },
}

fn encode(set: &EmbeddingSet, key: &CacheKey, dim: usize) -> Vec<u8> {
    let mut buf = Vec::with_capacity(160 + set.embeddings.len() * (8 + 4 * dim));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CACHE_FORMAT_VERSION.to_le_bytes());
    put_str(&mut buf, &key.video_id);
    buf.extend_from_slice(&key.content_hash);
    put_str(&mut buf, &key.model_id);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&key.param_hash);
    for v in [
        set.total_frames,
        set.skipped_frames,
        set.dropped_frames,
        set.embeddings.len() as u64,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for e in &set.embeddings {
        buf.extend_from_slice(&e.frame_index.to_le_bytes());
        for x in &e.vector {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let checksum = Sha256::digest(&buf);
    buf.extend_from_slice(&checksum);
    buf
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or("truncated")?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn digest(&mut self) -> Result<Digest32, String> {
        Ok(self.take(32)?.try_into().unwrap())
    }
    fn string(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "invalid utf-8".to_string())
    }
}

fn decode(bytes: &[u8], key: &CacheKey) -> Result<EmbeddingSet, String> {
    if bytes.len() < MAGIC.len() + 32 {
        return Err("truncated".into());
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != CACHE_FORMAT_VERSION {
        return Err(format!("format version {version} (expected {CACHE_FORMAT_VERSION})"));
    }
    let video_id = r.string()?;
    let content_hash = r.digest()?;
    let model_id = r.string()?;
    let dim = r.u32()? as usize;
    let param_hash = r.digest()?;
    let found = CacheKey {
        video_id,
        content_hash,
        model_id,
        param_hash,
    };
    if &found != key {
        return Err("header does not match the requested key".into());
    }
    let total_frames = r.u64()?;
    let skipped_frames = r.u64()?;
    let dropped_frames = r.u64()?;
    let rows = r.u64()? as usize;
    let expected_len = rows.checked_mul(8 + 4 * dim).ok_or("row count overflow")?;
    if body.len() - r.pos != expected_len {
        return Err(format!(
            "expected {expected_len} row bytes, found {}",
            body.len() - r.pos
        ));
    }
    let mut embeddings = Vec::with_capacity(rows);
    for _ in 0..rows {
        let frame_index = r.u64()?;
        let vector = r
            .take(4 * dim)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        embeddings.push(Embedding {
            vector,
            model_id: key.model_id.clone(),
            frame_index,
        });
    }
    if !embeddings.windows(2).all(|w| w[0].frame_index < w[1].frame_index) {
        return Err("rows out of order".into());
    }
    if embeddings.len() as u64 + skipped_frames + dropped_frames != total_frames {
        return Err("frame counts inconsistent".into());
    }
    Ok(EmbeddingSet {
        video_id: key.video_id.clone(),
        model_id: key.model_id.clone(),
        embeddings,
        total_frames,
        skipped_frames,
        dropped_frames,
    })
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `set` under `key` atomically and returns the entry path.
pub fn cache_store(set: &EmbeddingSet, key: &CacheKey, dim: usize, dir: &Path) -> io::Result<PathBuf> {
    if set.embeddings.iter().any(|e| e.vector.len() != dim) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "embedding width differs from dim",
        ));
    }
    fs::create_dir_all(dir)?;
    let path = key.path_in(dir);
    let tmp = dir.join(format!(
        ".{}.{}.{}.tmp",
        key.file_name(),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, encode(set, key, dim))?;
    fs::rename(&tmp, &path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(path)
}

pub fn cache_load(key: &CacheKey, dir: &Path) -> CacheLookup {
    let path = key.path_in(dir);
    let bytes = match fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return CacheLookup::Miss,
        Err(e) => {
            return CacheLookup::Corrupt {
                path,
                reason: e.to_string(),
            }
        }
    };
    match decode(&bytes, key) {
        Ok(set) => CacheLookup::Hit(set),
        Err(reason) => CacheLookup::Corrupt { path, reason },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key() -> CacheKey {
        CacheKey {
            video_id: "real/clip 01.mp4".into(),
            content_hash: [7; 32],
            model_id: "toy".into(),
            param_hash: [9; 32],
        }
    }

    fn sample_set() -> EmbeddingSet {
        EmbeddingSet {
            video_id: "real/clip 01.mp4".into(),
            model_id: "toy".into(),
            embeddings: vec![
                Embedding {
                    vector: vec![0.1, -2.5, f32::MIN_POSITIVE],
                    model_id: "toy".into(),
                    frame_index: 1,
                },
                Embedding {
                    vector: vec![3.0, 1e-6, 0.333_333_34],
                    model_id: "toy".into(),
                    frame_index: 4,
                },
            ],
            total_frames: 6,
            skipped_frames: 3,
            dropped_frames: 1,
        }
    }

    #[test]
    fn store_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = cache_store(&sample_set(), &key(), 3, dir.path()).unwrap();
        assert!(path
            .file_name()
            .unwrap()
            .to_str()
            .unwrap()
            .starts_with("real_clip_01.mp4__toy__"));
        match cache_load(&key(), dir.path()) {
            CacheLookup::Hit(set) => assert_eq!(set, sample_set()),
            other => panic!("expected hit, got {other:?}"),
        }
    }

    #[test]
    fn changed_parameters_miss() {
        let dir = tempfile::tempdir().unwrap();
        cache_store(&sample_set(), &key(), 3, dir.path()).unwrap();
        let mut k = key();
        k.param_hash[0] ^= 1;
        assert!(matches!(cache_load(&k, dir.path()), CacheLookup::Miss));
    }

    #[test]
    fn truncated_file_is_corrupt_not_a_panic() {
        let dir = tempfile::tempdir().unwrap();
        let path = cache_store(&sample_set(), &key(), 3, dir.path()).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [0, 5, 40, bytes.len() - 33, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(cache_load(&key(), dir.path()), CacheLookup::Corrupt { .. }),
                "cut {cut}"
            );
        }
    }

    #[test]
    fn flipped_bit_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = cache_store(&sample_set(), &key(), 3, dir.path()).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x10;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(cache_load(&key(), dir.path()), CacheLookup::Corrupt { .. }));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = encode(&sample_set(), &key(), 3);
        bytes[8] = 2;
        let n = bytes.len() - 32;
        let sum = Sha256::digest(&bytes[..n]);
        bytes[n..].copy_from_slice(&sum);
        assert!(decode(&bytes, &key()).unwrap_err().contains("version"));
    }

    #[test]
    fn no_temp_files_left_behind() {
        let dir = tempfile::tempdir().unwrap();
        cache_store(&sample_set(), &key(), 3, dir.path()).unwrap();
        let names: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
