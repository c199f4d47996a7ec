//! Corpus serialization.
//!
//! All multi-byte values little-endian. Three blob formats, each
//! magic + u32 version + payload:
//!
//! - token blob `SOLA`: u32 N,T,D then N·T·D f32, row-major (track, frame, dim)
//! - mask tracks `SOLR`: u32 n_tracks, n_frames; per track a u32 id length +
//!   UTF-8 id, then per frame u32 H, W, run_count and the u32 runs
//! - text embedding `SOLE`: u32 N_w, D_text then N_w·D_text f32
//!
//! The manifest is TOML. Writers stage to a sibling `.tmp` file and rename,
//! so an existing corpus is never mutated in place.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Corpus, ExpressionRecord, TextEmbedding, TokenSet, VideoData, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::mask::{MaskTrack, RleMask, TrackSet};

const TOKEN_MAGIC: &[u8; 4] = b"SOLA";
const TRACK_MAGIC: &[u8; 4] = b"SOLR";
const TEXT_MAGIC: &[u8; 4] = b"SOLE";

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    format_version: u32,
    videos: Vec<ManifestVideo>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestVideo {
    video_id: String,
    n_frames: u32,
    height: u32,
    width: u32,
    trackset_path: String,
    tokenset_path: String,
    expressions: Vec<ManifestExpression>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestExpression {
    expression_id: String,
    raw_text: String,
    embedding_path: String,
    gt_track_path: String,
}

/// Writes `bytes` to `path` via a staging file and atomic rename.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

// ----- encoding -----

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_tokens(tokens: &TokenSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + tokens.values().len() * 4);
    out.extend_from_slice(TOKEN_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, tokens.n_tracks() as u32);
    push_u32(&mut out, tokens.n_frames() as u32);
    push_u32(&mut out, tokens.dim() as u32);
    for v in tokens.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn encode_tracks(tracks: &[MaskTrack]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TRACK_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, tracks.len() as u32);
    push_u32(&mut out, tracks.first().map_or(0, |t| t.len()) as u32);
    for t in tracks {
        let id = t.track_id().as_bytes();
        push_u32(&mut out, id.len() as u32);
        out.extend_from_slice(id);
        for f in t.frames() {
            push_u32(&mut out, f.height());
            push_u32(&mut out, f.width());
            push_u32(&mut out, f.runs().len() as u32);
            for &r in f.runs() {
                push_u32(&mut out, r);
            }
        }
    }
    out
}

fn encode_text(e: &TextEmbedding) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + e.values().len() * 4);
    out.extend_from_slice(TEXT_MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, e.n_words() as u32);
    push_u32(&mut out, e.dim() as u32);
    for v in e.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

// ----- decoding -----

/// Byte reader that tracks its offset so format errors can name it.
pub(crate) struct BlobReader {
    path: PathBuf,
    bytes: Vec<u8>,
    offset: usize,
}

impl BlobReader {
    pub(crate) fn open(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Ok(BlobReader {
            path: path.to_path_buf(),
            bytes,
            offset: 0,
        })
    }

    pub(crate) fn fail(&self, detail: impl Into<String>) -> Error {
        Error::format(&self.path, format!("{} (at offset {})", detail.into(), self.offset))
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.fail(format!(
                "truncated while reading {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.offset
            )));
        }
        let s = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(s)
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            let shown: String = got.iter().map(|b| format!("{b:02x}")).collect();
            return Err(self.fail(format!(
                "bad magic {shown}, expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    fn expect_version(&mut self) -> Result<()> {
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(self.fail(format!("unsupported format version {v}, expected {FORMAT_VERSION}")));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub(crate) fn f32_vec(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.take(count * 4, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn f64_vec(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.take(count * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    /// Length-prefixed UTF-8 string.
    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let b = self.take(n, what)?.to_vec();
        String::from_utf8(b).map_err(|_| self.fail(format!("{what} is not valid UTF-8")))
    }

    pub(crate) fn done(&self) -> Result<()> {
        if self.offset != self.bytes.len() {
            return Err(self.fail(format!(
                "{} trailing bytes after payload",
                self.bytes.len() - self.offset
            )));
        }
        Ok(())
    }
}

fn decode_tokens(path: &Path, track_ids: Vec<String>) -> Result<TokenSet> {
    let mut r = BlobReader::open(path)?;
    r.expect_magic(TOKEN_MAGIC)?;
    r.expect_version()?;
    let n = r.u32("track count")? as usize;
    let t = r.u32("frame count")? as usize;
    let d = r.u32("token dim")? as usize;
    if n != track_ids.len() {
        return Err(r.fail(format!(
            "token blob declares {n} tracks, track set has {}",
            track_ids.len()
        )));
    }
    let values = r.f32_vec(n * t * d, "token payload")?;
    r.done()?;
    TokenSet::new(track_ids, t, d, values).map_err(|e| r.fail(e.to_string()))
}

fn decode_tracks(path: &Path) -> Result<Vec<MaskTrack>> {
    let mut r = BlobReader::open(path)?;
    r.expect_magic(TRACK_MAGIC)?;
    r.expect_version()?;
    let n = r.u32("track count")? as usize;
    let t = r.u32("frame count")? as usize;
    let mut tracks = Vec::with_capacity(n);
    for _ in 0..n {
        let id_len = r.u32("track id length")? as usize;
        let id = String::from_utf8(r.take(id_len, "track id")?.to_vec())
            .map_err(|e| r.fail(format!("track id is not UTF-8: {e}")))?;
        let mut frames = Vec::with_capacity(t);
        for _ in 0..t {
            let h = r.u32("frame height")?;
            let w = r.u32("frame width")?;
            let run_count = r.u32("run count")? as usize;
            let mut runs = Vec::with_capacity(run_count);
            for _ in 0..run_count {
                runs.push(r.u32("run length")?);
            }
            frames.push(RleMask::new(h, w, runs).map_err(|e| r.fail(e.to_string()))?);
        }
        tracks.push(MaskTrack::new(id, frames).map_err(|e| r.fail(e.to_string()))?);
    }
    r.done()?;
    Ok(tracks)
}

/// Writes mask tracks as a standalone container (same layout as the
/// per-video track blob inside a corpus).
pub fn save_tracks(tracks: &[MaskTrack], path: &Path) -> Result<()> {
    atomic_write(path, &encode_tracks(tracks))
}

/// Reads a standalone mask-track container written by [`save_tracks`].
pub fn load_tracks(path: &Path) -> Result<Vec<MaskTrack>> {
    decode_tracks(path)
}

fn decode_text(path: &Path, expression_id: String, raw_text: String) -> Result<TextEmbedding> {
    let mut r = BlobReader::open(path)?;
    r.expect_magic(TEXT_MAGIC)?;
    r.expect_version()?;
    let n_words = r.u32("word count")? as usize;
    let dim = r.u32("text dim")? as usize;
    let values = r.f32_vec(n_words * dim, "text payload")?;
    r.done()?;
    TextEmbedding::new(expression_id, raw_text, n_words, dim, values).map_err(|e| r.fail(e.to_string()))
}

// ----- corpus level -----

fn video_dir(video_id: &str) -> String {
    format!("videos/{video_id}")
}

/// Writes a corpus under `root`: blobs first, manifest last.
pub fn save_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    let mut manifest = ManifestFile {
        format_version: corpus.format_version,
        videos: Vec::with_capacity(corpus.videos.len()),
    };
    for v in &corpus.videos {
        let dir = video_dir(&v.video_id);
        let expr_dir = root.join(&dir).join("expr");
        fs::create_dir_all(&expr_dir).map_err(|e| Error::io(&expr_dir, e))?;
        let trackset_path = format!("{dir}/tracks.solr");
        let tokenset_path = format!("{dir}/tokens.sola");
        atomic_write(&root.join(&trackset_path), &encode_tracks(v.tracks.tracks()))?;
        atomic_write(&root.join(&tokenset_path), &encode_tokens(&v.tokens))?;
        let mut expressions = Vec::with_capacity(v.expressions.len());
        for (k, e) in v.expressions.iter().enumerate() {
            let embedding_path = format!("{dir}/expr/e{k}.sole");
            let gt_track_path = format!("{dir}/expr/e{k}.gt.solr");
            atomic_write(&root.join(&embedding_path), &encode_text(&e.embedding))?;
            atomic_write(
                &root.join(&gt_track_path),
                &encode_tracks(std::slice::from_ref(&e.gt_track)),
            )?;
            expressions.push(ManifestExpression {
                expression_id: e.expression_id.clone(),
                raw_text: e.embedding.raw_text.clone(),
                embedding_path,
                gt_track_path,
            });
        }
        manifest.videos.push(ManifestVideo {
            video_id: v.video_id.clone(),
            n_frames: v.tracks.n_frames() as u32,
            height: v.tracks.height(),
            width: v.tracks.width(),
            trackset_path,
            tokenset_path,
            expressions,
        });
    }
    let text = toml::to_string(&manifest)
        .map_err(|e| Error::format(root.join("manifest.toml"), format!("manifest serialization: {e}")))?;
    atomic_write(&root.join("manifest.toml"), text.as_bytes())
}

/// Loads and fully validates a corpus from `root`.
pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let manifest_path = root.join("manifest.toml");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: ManifestFile =
        toml::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &manifest_path,
            format!(
                "unsupported format version {}, expected {FORMAT_VERSION}",
                manifest.format_version
            ),
        ));
    }
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for mv in &manifest.videos {
        let trackset_path = root.join(&mv.trackset_path);
        let tracks = decode_tracks(&trackset_path)?;
        let track_ids: Vec<String> = tracks.iter().map(|t| t.track_id().to_string()).collect();
        let tracks = TrackSet::new(mv.video_id.clone(), tracks)
            .map_err(|e| Error::format(&trackset_path, e.to_string()))?;
        if tracks.n_frames() != mv.n_frames as usize
            || tracks.height() != mv.height
            || tracks.width() != mv.width
        {
            return Err(Error::format(
                &trackset_path,
                format!(
                    "geometry {}x{}x{} does not match manifest {}x{}x{}",
                    tracks.n_frames(),
                    tracks.height(),
                    tracks.width(),
                    mv.n_frames,
                    mv.height,
                    mv.width
                ),
            ));
        }
        let tokens = decode_tokens(&root.join(&mv.tokenset_path), track_ids)?;
        let mut expressions = Vec::with_capacity(mv.expressions.len());
        for me in &mv.expressions {
            let embedding = decode_text(
                &root.join(&me.embedding_path),
                me.expression_id.clone(),
                me.raw_text.clone(),
            )?;
            let gt_path = root.join(&me.gt_track_path);
            let mut gt_tracks = decode_tracks(&gt_path)?;
            if gt_tracks.len() != 1 {
                return Err(Error::format(
                    &gt_path,
                    format!("ground-truth container holds {} tracks, expected 1", gt_tracks.len()),
                ));
            }
            expressions.push(ExpressionRecord {
                expression_id: me.expression_id.clone(),
                video_id: mv.video_id.clone(),
                embedding,
                gt_track: gt_tracks.remove(0),
            });
        }
        videos.push(VideoData {
            video_id: mv.video_id.clone(),
            tracks,
            tokens,
            expressions,
        });
    }
    let corpus = Corpus {
        format_version: manifest.format_version,
        videos,
    };
    let violations = super::validate_corpus(&corpus);
    if !violations.is_empty() {
        return Err(Error::format(
            &manifest_path,
            format!(
                "corpus fails validation ({} violations), first: {}",
                violations.len(),
                violations[0]
            ),
        ));
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use crate::data::SynthConfig;

    fn small_corpus() -> Corpus {
        let cfg = SynthConfig {
            scenes: 2,
            ..SynthConfig::tiny()
        };
        generate_synthetic(&cfg, 7).unwrap()
    }

    #[test]
    fn corpus_roundtrips_bit_exactly() {
        let corpus = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let loaded = load_corpus(dir.path()).unwrap();
        assert_eq!(corpus, loaded);
    }

    #[test]
    fn save_twice_produces_identical_bytes() {
        let corpus = small_corpus();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        save_corpus(&corpus, d1.path()).unwrap();
        save_corpus(&corpus, d2.path()).unwrap();
        for entry in walk(d1.path()) {
            let rel = entry.strip_prefix(d1.path()).unwrap();
            let a = fs::read(&entry).unwrap();
            let b = fs::read(d2.path().join(rel)).unwrap();
            assert_eq!(a, b, "differs: {rel:?}");
        }
    }

    fn walk(root: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in fs::read_dir(&dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push(p);
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn corrupted_magic_is_a_format_error() {
        let corpus = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let blob = dir.path().join("videos").join(&corpus.videos[0].video_id).join("tokens.sola");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[0] = b'X';
        fs::write(&blob, &bytes).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn truncated_blob_is_a_format_error_naming_offset() {
        let corpus = small_corpus();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let blob = dir.path().join("videos").join(&corpus.videos[0].video_id).join("tokens.sola");
        let bytes = fs::read(&blob).unwrap();
        fs::write(&blob, &bytes[..bytes.len() / 2]).unwrap();
        let err = load_corpus(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated") && msg.contains("offset"), "{msg}");
    }

    #[test]
    fn token_header_declares_exact_payload_length() {
        let tokens = TokenSet::new(
            (0..3).map(|i| format!("t{i}")).collect(),
            8,
            16,
            vec![0.0; 3 * 8 * 16],
        )
        .unwrap();
        let bytes = encode_tokens(&tokens);
        // magic + version + N,T,D headers, then the declared payload.
        assert_eq!(bytes.len(), 4 + 4 + 12 + 3 * 8 * 16 * 4);
    }
}
