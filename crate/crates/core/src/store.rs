//! Content-addressed on-disk store for KV-cache chunk payloads.
//!
//! Layout under the store root:
//!
//! ```text
//! <root>/manifest.v1          line-oriented manifest, see below
//! <root>/<hh>/<digest>.kv     one file per chunk, hh = first two hex chars
//! ```
//!
//! The manifest starts with the header line `cake-chunk-store<TAB>v1`; every
//! following line describes one committed chunk with six tab-separated fields:
//! `digest`, relative path, token count, codec id, encoded bytes, uncompressed
//! bytes. A chunk is committed once its payload file has been renamed into
//! place *and* its manifest line, including the trailing newline, is on disk.
//! A torn final line is dropped on open. [`ChunkStore::compact`] rewrites the
//! manifest through a temporary file and a rename.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{Codec, CodecError};
use crate::model::{chunk_bytes, split_into_chunks, ModelError, ModelProfile, RequestSpec};

pub const MANIFEST_FILE: &str = "manifest.v1";
const MANIFEST_HEADER: &str = "cake-chunk-store\tv1";

/// Vocabulary size used for synthetic token ids.
pub const SYNTHETIC_VOCAB: u32 = 32_000;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("chunk {0} not found in store")]
    Missing(ChunkKey),
    #[error("chunk {key} is corrupt: {reason}")]
    Corrupt { key: ChunkKey, reason: String },
    #[error("chunk {0} already stored with a different payload")]
    Conflict(ChunkKey),
    #[error("payload is {actual} bytes but metadata declares {declared}")]
    SizeMismatch { declared: u64, actual: u64 },
    #[error("store device is full: {0}")]
    StorageFull(io::Error),
    #[error("permission denied: {0}")]
    PermissionDenied(io::Error),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("cannot hash an empty token chunk")]
    EmptyTokens,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("store i/o: {0}")]
    Io(io::Error),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::StorageFull => StoreError::StorageFull(e),
            io::ErrorKind::PermissionDenied => StoreError::PermissionDenied(e),
            _ => StoreError::Io(e),
        }
    }
}

/// SHA-256 identity of a chunk and its entire token prefix.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChunkKey(pub [u8; 32]);

impl ChunkKey {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for ChunkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ChunkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChunkKey({})", &self.to_hex()[..12])
    }
}

impl FromStr for ChunkKey {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(ChunkKey(out))
    }
}

/// Hashes `tokens` chained onto the previous chunk's key (or 32 zero bytes).
///
/// Each token id contributes its little-endian 4-byte encoding.
pub fn chain_hash(prev: Option<&ChunkKey>, tokens: &[u32]) -> Result<ChunkKey, StoreError> {
    if tokens.is_empty() {
        return Err(StoreError::EmptyTokens);
    }
    let mut hasher = Sha256::new();
    hasher.update(prev.map_or([0u8; 32], |k| k.0));
    for t in tokens {
        hasher.update(t.to_le_bytes());
    }
    Ok(ChunkKey(hasher.finalize().into()))
}

/// Keys of consecutive `chunk_size` slices of `tokens`, each chained to the last.
pub fn chain_keys(tokens: &[u32], chunk_size: u32) -> Result<Vec<ChunkKey>, StoreError> {
    let chunks = split_into_chunks(tokens.len() as u32, chunk_size)?;
    let mut prev = None;
    chunks
        .iter()
        .map(|c| {
            let key = chain_hash(prev.as_ref(), &tokens[c.token_start as usize..c.token_end() as usize])?;
            prev = Some(key);
            Ok(key)
        })
        .collect()
}

/// Deterministic synthetic prompt. Prompts from the same seed share prefixes.
pub fn synthetic_tokens(seed: u64, count: u32) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen_range(0..SYNTHETIC_VOCAB)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChunkMeta {
    pub token_count: u32,
    pub codec: Codec,
    pub encoded_bytes: u64,
    pub uncompressed_bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
struct ManifestEntry {
    rel_path: String,
    meta: ChunkMeta,
}

/// Shared handle to an open store. Reads run concurrently; puts serialize.
pub struct ChunkStore {
    root: PathBuf,
    entries: RwLock<HashMap<ChunkKey, ManifestEntry>>,
    journal: Mutex<File>,
}

impl fmt::Debug for ChunkStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChunkStore").field("root", &self.root).field("chunks", &self.len()).finish()
    }
}

impl ChunkStore {
    /// Opens the store at `root`, creating it if needed.
    ///
    /// Entries whose payload file is missing or has the wrong size are
    /// dropped, as is a torn final manifest line; the manifest is compacted
    /// when anything was dropped.
    pub fn open(root: impl AsRef<Path>) -> Result<ChunkStore, StoreError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let manifest_path = root.join(MANIFEST_FILE);
        let (entries, dirty) = if manifest_path.exists() {
            load_manifest(&root, &manifest_path)?
        } else {
            let mut f = File::create(&manifest_path)?;
            writeln!(f, "{MANIFEST_HEADER}")?;
            f.sync_all()?;
            (HashMap::new(), false)
        };
        let journal = OpenOptions::new().append(true).open(&manifest_path)?;
        let store = ChunkStore { root, entries: RwLock::new(entries), journal: Mutex::new(journal) };
        if dirty {
            store.compact()?;
        }
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.entries.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &ChunkKey) -> bool {
        self.entries.read().contains_key(key)
    }

    pub fn meta(&self, key: &ChunkKey) -> Result<ChunkMeta, StoreError> {
        self.entries.read().get(key).map(|e| e.meta).ok_or(StoreError::Missing(*key))
    }

    fn rel_path(key: &ChunkKey) -> String {
        let hex = key.to_hex();
        format!("{}/{}.kv", &hex[..2], hex)
    }

    /// Absolute path of a committed chunk's payload.
    pub fn chunk_path(&self, key: &ChunkKey) -> Result<PathBuf, StoreError> {
        let entries = self.entries.read();
        let entry = entries.get(key).ok_or(StoreError::Missing(*key))?;
        Ok(self.root.join(&entry.rel_path))
    }

    /// Stores `payload` under `key`. Re-putting identical bytes is a no-op.
    pub fn put(&self, key: &ChunkKey, payload: &[u8], meta: ChunkMeta) -> Result<(), StoreError> {
        if payload.len() as u64 != meta.encoded_bytes {
            return Err(StoreError::SizeMismatch { declared: meta.encoded_bytes, actual: payload.len() as u64 });
        }
        let mut journal = self.journal.lock();
        if self.contains(key) {
            let (existing, _) = self.get(key)?;
            return if existing == payload { Ok(()) } else { Err(StoreError::Conflict(*key)) };
        }

        let rel_path = Self::rel_path(key);
        let final_path = self.root.join(&rel_path);
        let dir = final_path.parent().expect("chunk path has a fan-out directory");
        fs::create_dir_all(dir)?;
        let tmp_path = dir.join(format!("{}.tmp", key.to_hex()));
        {
            let mut f = File::create(&tmp_path)?;
            f.write_all(payload)?;
            f.flush()?;
        }
        fs::rename(&tmp_path, &final_path)?;

        let entry = ManifestEntry { rel_path, meta };
        journal.write_all(manifest_line(key, &entry).as_bytes())?;
        self.entries.write().insert(*key, entry);
        Ok(())
    }

    /// Returns the payload previously stored under `key`.
    pub fn get(&self, key: &ChunkKey) -> Result<(Vec<u8>, ChunkMeta), StoreError> {
        let (mut file, meta) = self.open_chunk(key)?;
        let mut payload = Vec::with_capacity(meta.encoded_bytes as usize);
        file.read_to_end(&mut payload)?;
        if payload.len() as u64 != meta.encoded_bytes {
            return Err(StoreError::Corrupt {
                key: *key,
                reason: format!("read {} bytes, manifest says {}", payload.len(), meta.encoded_bytes),
            });
        }
        Ok((payload, meta))
    }

    /// Opens a committed chunk for streaming reads after checking its size.
    pub fn open_chunk(&self, key: &ChunkKey) -> Result<(File, ChunkMeta), StoreError> {
        let (path, meta) = {
            let entries = self.entries.read();
            let entry = entries.get(key).ok_or(StoreError::Missing(*key))?;
            (self.root.join(&entry.rel_path), entry.meta)
        };
        let file = File::open(&path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => StoreError::Corrupt { key: *key, reason: "payload file is missing".into() },
            _ => e.into(),
        })?;
        let len = file.metadata()?.len();
        if len != meta.encoded_bytes {
            return Err(StoreError::Corrupt { key: *key, reason: format!("file is {len} bytes, manifest says {}", meta.encoded_bytes) });
        }
        Ok((file, meta))
    }

    /// Flushes the manifest journal to stable storage.
    pub fn sync(&self) -> Result<(), StoreError> {
        self.journal.lock().sync_all()?;
        Ok(())
    }

    /// Rewrites the manifest from the in-memory index via write-temp-then-rename.
    pub fn compact(&self) -> Result<(), StoreError> {
        let mut journal = self.journal.lock();
        let manifest_path = self.root.join(MANIFEST_FILE);
        let tmp_path = self.root.join(format!("{MANIFEST_FILE}.tmp"));
        {
            let entries = self.entries.read();
            let mut sorted: Vec<_> = entries.iter().collect();
            sorted.sort_by_key(|(k, _)| **k);
            let mut out = io::BufWriter::new(File::create(&tmp_path)?);
            writeln!(out, "{MANIFEST_HEADER}")?;
            for (key, entry) in sorted {
                out.write_all(manifest_line(key, entry).as_bytes())?;
            }
            out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp_path, &manifest_path)?;
        *journal = OpenOptions::new().append(true).open(&manifest_path)?;
        Ok(())
    }
}

fn manifest_line(key: &ChunkKey, entry: &ManifestEntry) -> String {
    let m = &entry.meta;
    format!("{}\t{}\t{}\t{}\t{}\t{}\n", key, entry.rel_path, m.token_count, m.codec, m.encoded_bytes, m.uncompressed_bytes)
}

fn parse_manifest_line(line: &str, line_no: usize) -> Result<(ChunkKey, ManifestEntry), StoreError> {
    let bad = |reason: String| StoreError::Manifest { line: line_no, reason };
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 6 {
        return Err(bad(format!("expected 6 fields, found {}", fields.len())));
    }
    let key: ChunkKey = fields[0].parse().map_err(|e| bad(format!("digest: {e}")))?;
    let num = |i: usize, name: &str| fields[i].parse::<u64>().map_err(|e| bad(format!("{name}: {e}")));
    let meta = ChunkMeta {
        token_count: num(2, "token_count")? as u32,
        codec: fields[3].parse().map_err(|e: CodecError| bad(e.to_string()))?,
        encoded_bytes: num(4, "encoded bytes")?,
        uncompressed_bytes: num(5, "uncompressed bytes")?,
    };
    Ok((key, ManifestEntry { rel_path: fields[1].to_string(), meta }))
}

fn load_manifest(root: &Path, path: &Path) -> Result<(HashMap<ChunkKey, ManifestEntry>, bool), StoreError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut entries = HashMap::new();
    let mut dirty = false;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        line_no += 1;
        let Some(body) = line.strip_suffix('\n') else {
            log::warn!("dropping torn manifest line {line_no}");
            dirty = true;
            break;
        };
        if line_no == 1 {
            if body != MANIFEST_HEADER {
                return Err(StoreError::Manifest { line: 1, reason: format!("unsupported header {body:?}") });
            }
            continue;
        }
        let (key, entry) = parse_manifest_line(body, line_no)?;
        match fs::metadata(root.join(&entry.rel_path)) {
            Ok(md) if md.len() == entry.meta.encoded_bytes => {
                entries.insert(key, entry);
            }
            _ => {
                log::warn!("dropping manifest entry {key}: payload missing or wrong size");
                dirty = true;
            }
        }
    }
    if line_no == 0 {
        return Err(StoreError::Manifest { line: 0, reason: "empty manifest".into() });
    }
    Ok((entries, dirty))
}

/// Synthetic KV payload for a chunk: finite f16 values in [-1, 1) drawn from
/// a generator seeded by the chunk key, so identical chunks get identical bytes.
pub fn synthetic_payload(key: &ChunkKey, nbytes: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::from_seed(key.0);
    let mut out = Vec::with_capacity(nbytes as usize);
    for _ in 0..nbytes / 2 {
        let v = half::f16::from_f32(rng.gen_range(-1.0f32..1.0));
        out.extend_from_slice(&v.to_le_bytes());
    }
    if nbytes % 2 == 1 {
        out.push(0);
    }
    out
}

/// Writes every chunk of a synthetic request and returns the keys in sequence order.
pub fn populate(
    store: &ChunkStore,
    request: &RequestSpec,
    profile: &ModelProfile,
    codec: Codec,
    seed: u64,
) -> Result<Vec<ChunkKey>, StoreError> {
    request.validate()?;
    profile.validate()?;
    let tokens = synthetic_tokens(seed, request.total_tokens);
    let keys = chain_keys(&tokens, request.chunk_size)?;
    let chunks = request.chunks()?;
    for (chunk, key) in chunks.iter().zip(&keys) {
        if store.contains(key) {
            continue;
        }
        let raw_len = chunk_bytes(profile, chunk);
        let payload = codec.encode(&synthetic_payload(key, raw_len))?;
        let meta = ChunkMeta { token_count: chunk.token_count, codec, encoded_bytes: payload.len() as u64, uncompressed_bytes: raw_len };
        store.put(key, &payload, meta)?;
    }
    store.sync()?;
    Ok(keys)
}

/// Keys a request would have under [`populate`], without touching a store.
pub fn request_keys(request: &RequestSpec, seed: u64) -> Result<Vec<ChunkKey>, StoreError> {
    chain_keys(&synthetic_tokens(seed, request.total_tokens), request.chunk_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn meta_for(payload: &[u8]) -> ChunkMeta {
        ChunkMeta { token_count: 1, codec: Codec::Identity, encoded_bytes: payload.len() as u64, uncompressed_bytes: payload.len() as u64 }
    }

    fn key(n: u32) -> ChunkKey {
        chain_hash(None, &[n]).unwrap()
    }

    #[test]
    fn hash_is_deterministic_and_sensitive() {
        assert_eq!(key(7), key(7));
        assert_ne!(chain_hash(None, &[1, 2, 3]).unwrap(), chain_hash(None, &[1, 2, 4]).unwrap());
        assert!(matches!(chain_hash(None, &[]), Err(StoreError::EmptyTokens)));
        let k = key(3);
        assert_eq!(k.to_hex().len(), 64);
        assert_eq!(k.to_hex().parse::<ChunkKey>().unwrap(), k);
    }

    #[test]
    fn absent_prev_equals_zero_prev() {
        let zero = ChunkKey([0; 32]);
        assert_eq!(chain_hash(None, &[5, 6]).unwrap(), chain_hash(Some(&zero), &[5, 6]).unwrap());
    }

    #[test]
    fn put_get_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let payload: Vec<u8> = synthetic_payload(&key(1), 1 << 20);
        store.put(&key(1), &payload, meta_for(&payload)).unwrap();
        let (got, meta) = store.get(&key(1)).unwrap();
        assert_eq!(got, payload);
        assert_eq!(meta.encoded_bytes, 1 << 20);
        let hex = key(1).to_hex();
        assert!(dir.path().join(&hex[..2]).join(format!("{hex}.kv")).exists());
    }

    #[test]
    fn missing_key() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        assert!(matches!(store.get(&key(9)), Err(StoreError::Missing(_))));
        assert!(!store.contains(&key(9)));
    }

    #[test]
    fn idempotent_put_and_conflict() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let a = vec![1u8; 64];
        let b = vec![2u8; 64];
        store.put(&key(1), &a, meta_for(&a)).unwrap();
        store.put(&key(1), &a, meta_for(&a)).unwrap();
        assert!(matches!(store.put(&key(1), &b, meta_for(&b)), Err(StoreError::Conflict(_))));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn put_rejects_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let mut meta = meta_for(&[0u8; 8]);
        meta.encoded_bytes = 9;
        assert!(matches!(store.put(&key(1), &[0u8; 8], meta), Err(StoreError::SizeMismatch { .. })));
    }

    #[test]
    fn reopen_preserves_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let payloads: Vec<Vec<u8>> = (0..20).map(|i| synthetic_payload(&key(i), 1000 + i as u64)).collect();
        {
            let store = ChunkStore::open(dir.path()).unwrap();
            for (i, p) in payloads.iter().enumerate() {
                store.put(&key(i as u32), p, meta_for(p)).unwrap();
            }
        }
        let store = ChunkStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 20);
        for (i, p) in payloads.iter().enumerate() {
            assert_eq!(&store.get(&key(i as u32)).unwrap().0, p);
        }
    }

    #[test]
    fn corruption_detected_on_get() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let p = vec![3u8; 100];
        store.put(&key(1), &p, meta_for(&p)).unwrap();
        let path = store.chunk_path(&key(1)).unwrap();
        fs::write(&path, [3u8; 50]).unwrap();
        assert!(matches!(store.get(&key(1)), Err(StoreError::Corrupt { .. })));
    }

    #[test]
    fn crash_before_manifest_append_is_invisible() {
        let dir = tempfile::tempdir().unwrap();
        let p = vec![4u8; 128];
        {
            let store = ChunkStore::open(dir.path()).unwrap();
            store.put(&key(1), &p, meta_for(&p)).unwrap();
        }
        // payload renamed into place, manifest line never written
        let hex = key(2).to_hex();
        fs::create_dir_all(dir.path().join(&hex[..2])).unwrap();
        fs::write(dir.path().join(&hex[..2]).join(format!("{hex}.kv")), &p).unwrap();
        // and a leftover temp file from an interrupted payload write
        fs::write(dir.path().join(&hex[..2]).join(format!("{hex}.tmp")), &p[..10]).unwrap();

        let store = ChunkStore::open(dir.path()).unwrap();
        assert!(store.contains(&key(1)));
        assert!(!store.contains(&key(2)));
        // the orphaned chunk can still be committed normally
        store.put(&key(2), &p, meta_for(&p)).unwrap();
        assert_eq!(store.get(&key(2)).unwrap().0, p);
    }

    #[test]
    fn torn_manifest_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = vec![5u8; 32];
        {
            let store = ChunkStore::open(dir.path()).unwrap();
            store.put(&key(1), &p, meta_for(&p)).unwrap();
            store.put(&key(2), &p, meta_for(&p)).unwrap();
        }
        let manifest = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest).unwrap();
        // cut the last line mid-way
        fs::write(&manifest, &text[..text.len() - 20]).unwrap();

        let store = ChunkStore::open(dir.path()).unwrap();
        assert_eq!(store.len(), 1);
        let committed = if store.contains(&key(1)) { key(1) } else { key(2) };
        assert_eq!(store.get(&committed).unwrap().0, p);
        // compaction left a clean manifest behind
        let text = fs::read_to_string(&manifest).unwrap();
        assert!(text.ends_with('\n'));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn entry_with_truncated_payload_dropped_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let p = vec![6u8; 64];
        {
            let store = ChunkStore::open(dir.path()).unwrap();
            store.put(&key(1), &p, meta_for(&p)).unwrap();
            fs::write(store.chunk_path(&key(1)).unwrap(), &p[..3]).unwrap();
        }
        let store = ChunkStore::open(dir.path()).unwrap();
        assert!(!store.contains(&key(1)));
    }

    #[test]
    fn rejects_foreign_manifest() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "something-else\tv9\n").unwrap();
        assert!(matches!(ChunkStore::open(dir.path()), Err(StoreError::Manifest { .. })));
    }

    #[test]
    fn manifest_format() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let p = vec![0u8; 10];
        let meta = ChunkMeta { token_count: 3, codec: Codec::Quant8, encoded_bytes: 10, uncompressed_bytes: 12 };
        store.put(&key(1), &p, meta).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let hex = key(1).to_hex();
        assert_eq!(text, format!("cake-chunk-store\tv1\n{hex}\t{}/{hex}.kv\t3\tquant8\t10\t12\n", &hex[..2]));
    }

    #[test]
    fn populate_writes_all_chunks_with_codec() {
        let dir = tempfile::tempdir().unwrap();
        let store = ChunkStore::open(dir.path()).unwrap();
        let profile = ModelProfile::with_bytes_per_token("tiny", 64);
        let request = RequestSpec::new(1000, 256, 1.0);
        let keys = populate(&store, &request, &profile, Codec::Quant8, 11).unwrap();
        assert_eq!(keys.len(), 4);
        assert_eq!(keys, request_keys(&request, 11).unwrap());
        let last = store.meta(&keys[3]).unwrap();
        assert_eq!(last.token_count, 232);
        assert_eq!(last.uncompressed_bytes, 232 * 64);
        assert_eq!(last.encoded_bytes, 232 * 32 + 4);
        // idempotent re-population
        assert_eq!(populate(&store, &request, &profile, Codec::Quant8, 11).unwrap(), keys);
    }

    #[test]
    fn shorter_request_shares_full_chunk_keys() {
        let long = request_keys(&RequestSpec::new(4096, 512, 1.0), 3).unwrap();
        let short = request_keys(&RequestSpec::new(2048, 512, 1.0), 3).unwrap();
        assert_eq!(&long[..4], &short[..]);
    }

    proptest! {
        #[test]
        fn prefix_change_propagates(tokens in prop::collection::vec(0u32..50_000, 12..64), pos in 0usize..4) {
            let keys = chain_keys(&tokens, 4).unwrap();
            let mut altered = tokens.clone();
            altered[pos] = altered[pos].wrapping_add(1);
            let altered_keys = chain_keys(&altered, 4).unwrap();
            // the change sits in chunk 0, so every key differs
            for (a, b) in keys.iter().zip(&altered_keys) {
                prop_assert_ne!(a, b);
            }
        }

        #[test]
        fn shared_prefix_shares_keys(
            prefix in prop::collection::vec(0u32..50_000, 1..40),
            tail_a in prop::collection::vec(0u32..50_000, 1..20),
            tail_b in prop::collection::vec(0u32..50_000, 1..20),
            chunk in 1u32..8,
        ) {
            prop_assume!(tail_a[0] != tail_b[0]);
            let a: Vec<u32> = prefix.iter().chain(&tail_a).copied().collect();
            let b: Vec<u32> = prefix.iter().chain(&tail_b).copied().collect();
            let ka = chain_keys(&a, chunk).unwrap();
            let kb = chain_keys(&b, chunk).unwrap();
            let shared = prefix.len() / chunk as usize;
            prop_assert_eq!(&ka[..shared], &kb[..shared]);
            prop_assert_ne!(ka[shared], kb[shared]);
        }
    }
}
