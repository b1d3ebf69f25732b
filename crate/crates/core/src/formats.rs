//! Bit-exact file formats.
//!
//! * LEB — layered-embedding binary: `"LEB1"`, version u32, L/T/D u32,
//!   dtype u8 (0 = f32 little-endian), then L*T*D floats in
//!   layer-frame-dim order. Header is 21 bytes.
//! * Manifest — TSV lines `utt_id<TAB>path<TAB>label`.
//! * Scores — text lines `utt_id<SPACE>score`, six significant digits.
//! * Checkpoint — `"MFAC"`, version u32, tensor count u32, then per tensor:
//!   name length u16 + UTF-8 name, rank u8, dims u32 each, f32 LE data.
//!
//! All integers and floats are little-endian. Binary roundtrips are bitwise
//! lossless; parsers fail the whole file with a position instead of
//! truncating.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::frontend::LayeredEmbeddings;

pub const LEB_MAGIC: [u8; 4] = *b"LEB1";
pub const LEB_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MFAC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Ground-truth class of an utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    /// Logit index: spoof = 0, bonafide = 1.
    pub fn class_index(self) -> usize {
        match self {
            Label::Spoof => 0,
            Label::Bonafide => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s {
            "bonafide" => Some(Label::Bonafide),
            "spoof" => Some(Label::Spoof),
            _ => None,
        }
    }
}

/// One manifest row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub path: String,
    pub label: Label,
}

/// One scored utterance; higher score means more bonafide-like.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub utt_id: String,
    pub score: f64,
}

/// Named f32 tensor inside a checkpoint container.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

// ---------------------------------------------------------------------------
// low-level byte helpers
// ---------------------------------------------------------------------------

fn read_bytes(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(Error::Truncated {
                what,
                needed: buf.len(),
                available: filled,
            });
        }
        filled += n;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_bytes(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u16(r: &mut impl Read, what: &'static str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_bytes(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u8(r: &mut impl Read, what: &'static str) -> Result<u8> {
    let mut b = [0u8; 1];
    read_bytes(r, &mut b, what)?;
    Ok(b[0])
}

fn read_f32_payload(r: &mut impl Read, count: usize, what: &'static str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    read_bytes(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32_payload(w: &mut impl Write, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// LEB
// ---------------------------------------------------------------------------

/// Serialize an embedding stack; returns the byte count (21 + 4*L*T*D).
pub fn write_leb(emb: &LayeredEmbeddings<f32>, w: &mut impl Write) -> Result<u64> {
    let (l, t, d) = (emb.num_layers(), emb.num_frames(), emb.dim());
    w.write_all(&LEB_MAGIC)?;
    w.write_all(&LEB_VERSION.to_le_bytes())?;
    w.write_all(&(l as u32).to_le_bytes())?;
    w.write_all(&(t as u32).to_le_bytes())?;
    w.write_all(&(d as u32).to_le_bytes())?;
    w.write_all(&[0u8])?; // dtype 0 = f32 LE
    write_f32_payload(w, emb.values().as_slice())?;
    Ok(21 + 4 * (l as u64) * (t as u64) * (d as u64))
}

pub fn read_leb(r: &mut impl Read) -> Result<LayeredEmbeddings<f32>> {
    let mut magic = [0u8; 4];
    read_bytes(r, &mut magic, "leb header")?;
    if magic != LEB_MAGIC {
        return Err(Error::BadMagic {
            expected: LEB_MAGIC,
            found: magic,
        });
    }
    let version = read_u32(r, "leb header")?;
    if version != LEB_VERSION {
        return Err(Error::BadVersion {
            expected: LEB_VERSION,
            found: version,
        });
    }
    let l = read_u32(r, "leb header")?;
    let t = read_u32(r, "leb header")?;
    let d = read_u32(r, "leb header")?;
    if l == 0 || t == 0 || d == 0 {
        return Err(Error::BadExtent {
            what: "leb header",
            l,
            t,
            d,
        });
    }
    let dtype = read_u8(r, "leb header")?;
    if dtype != 0 {
        return Err(Error::BadDtype(dtype));
    }
    let count = (l as usize)
        .checked_mul(t as usize)
        .and_then(|n| n.checked_mul(d as usize))
        .ok_or(Error::BadExtent {
            what: "leb header (extent overflow)",
            l,
            t,
            d,
        })?;
    let data = read_f32_payload(r, count, "leb payload")?;
    LayeredEmbeddings::new(l as usize, t as usize, d as usize, data)
}

pub fn write_leb_file(emb: &LayeredEmbeddings<f32>, path: &Path) -> Result<u64> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = write_leb(emb, &mut f)?;
    f.flush()?;
    Ok(n)
}

pub fn read_leb_file(path: &Path) -> Result<LayeredEmbeddings<f32>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_leb(&mut f)
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

/// Parse TSV manifest text. Order is preserved; blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut seen: HashSet<&str> = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Manifest {
                line: line_no,
                reason: format!("expected 3 tab-separated fields, got {}", fields.len()),
            });
        }
        let (utt_id, path, label_str) = (fields[0], fields[1], fields[2]);
        if utt_id.is_empty() || utt_id.chars().any(char::is_whitespace) {
            return Err(Error::Manifest {
                line: line_no,
                reason: format!("invalid utt_id {utt_id:?}"),
            });
        }
        if path.is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                reason: "empty path".into(),
            });
        }
        let label = Label::parse(label_str).ok_or_else(|| Error::Manifest {
            line: line_no,
            reason: format!("unknown label {label_str:?}"),
        })?;
        if !seen.insert(utt_id) {
            return Err(Error::Manifest {
                line: line_no,
                reason: format!("duplicate utt_id {utt_id:?}"),
            });
        }
        entries.push(ManifestEntry {
            utt_id: utt_id.to_string(),
            path: path.to_string(),
            label,
        });
    }
    Ok(entries)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&e.utt_id);
        out.push('\t');
        out.push_str(&e.path);
        out.push('\t');
        out.push_str(e.label.as_str());
        out.push('\n');
    }
    out
}

pub fn read_manifest_file(path: &Path) -> Result<Vec<ManifestEntry>> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub fn write_manifest_file(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    std::fs::write(path, format_manifest(entries))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

/// Print a score with six significant digits.
pub fn format_score_value(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (5 - exp).clamp(0, 17) as usize;
    format!("{v:.decimals$}")
}

/// One line per record: `utt_id score`. Non-finite scores are rejected.
pub fn format_scores(records: &[ScoreRecord]) -> Result<String> {
    let mut out = String::new();
    for (i, r) in records.iter().enumerate() {
        if !r.score.is_finite() {
            return Err(Error::NonFinite {
                context: "write_scores",
                index: i,
            });
        }
        out.push_str(&r.utt_id);
        out.push(' ');
        out.push_str(&format_score_value(r.score));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (utt_id, score_str) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(s), None) => (id, s),
            _ => {
                return Err(Error::ScoreParse {
                    line: line_no,
                    reason: "expected `utt_id score`".into(),
                })
            }
        };
        let score: f64 = score_str.parse().map_err(|_| Error::ScoreParse {
            line: line_no,
            reason: format!("bad score {score_str:?}"),
        })?;
        if !score.is_finite() {
            return Err(Error::ScoreParse {
                line: line_no,
                reason: format!("non-finite score {score_str:?}"),
            });
        }
        records.push(ScoreRecord {
            utt_id: utt_id.to_string(),
            score,
        });
    }
    Ok(records)
}

pub fn read_scores_file(path: &Path) -> Result<Vec<ScoreRecord>> {
    parse_scores(&std::fs::read_to_string(path)?)
}

pub fn write_scores_file(records: &[ScoreRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_scores(records)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

/// Serialize named tensors; names must be unique and sizes consistent.
pub fn write_checkpoint(tensors: &[NamedTensor], w: &mut impl Write) -> Result<u64> {
    let mut seen = HashSet::new();
    let mut written = 12u64;
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::DuplicateTensor(t.name.clone()));
        }
        let declared: usize = t.dims.iter().product();
        if declared != t.data.len() {
            return Err(Error::Shape {
                op: "write_checkpoint",
                expected: format!("{:?} = {declared} values for {:?}", t.dims, t.name),
                got: format!("{} values", t.data.len()),
            });
        }
        let name_bytes = t.name.as_bytes();
        if name_bytes.len() > u16::MAX as usize || t.dims.len() > u8::MAX as usize {
            return Err(Error::Shape {
                op: "write_checkpoint",
                expected: "name <= 65535 bytes, rank <= 255".into(),
                got: format!("name {} bytes, rank {}", name_bytes.len(), t.dims.len()),
            });
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        w.write_all(&[t.dims.len() as u8])?;
        for &d in &t.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        write_f32_payload(w, &t.data)?;
        written += 2 + name_bytes.len() as u64 + 1 + 4 * t.dims.len() as u64 + 4 * t.data.len() as u64;
    }
    Ok(written)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 4];
    read_bytes(r, &mut magic, "checkpoint header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = read_u32(r, "checkpoint header")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let count = read_u32(r, "checkpoint header")? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let name_len = read_u16(r, "checkpoint tensor name")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_bytes(r, &mut name_bytes, "checkpoint tensor name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Config(
            "checkpoint tensor name is not valid UTF-8".into(),
        ))?;
        let rank = read_u8(r, "checkpoint tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(r, "checkpoint tensor dims")? as usize);
        }
        let count: usize = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or(Error::Truncated {
                what: "checkpoint tensor (size overflow)",
                needed: usize::MAX,
                available: 0,
            })?;
        let data = read_f32_payload(r, count, "checkpoint tensor data")?;
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateTensor(name));
        }
        tensors.push(NamedTensor { name, dims, data });
    }
    Ok(tensors)
}

pub fn write_checkpoint_file(tensors: &[NamedTensor], path: &Path) -> Result<u64> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = write_checkpoint(tensors, &mut f)?;
    f.flush()?;
    Ok(n)
}

pub fn read_checkpoint_file(path: &Path) -> Result<Vec<NamedTensor>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_embeddings(l: usize, t: usize, d: usize, seed: u64) -> LayeredEmbeddings<f32> {
        let mut rng = Rng::new(seed);
        let data = (0..l * t * d)
            .map(|_| rng.uniform_in(-2.0, 2.0) as f32)
            .collect();
        LayeredEmbeddings::new(l, t, d, data).unwrap()
    }

    #[test]
    fn leb_minimal_file_is_25_bytes() {
        let emb = LayeredEmbeddings::new(1, 1, 1, vec![0.0f32]).unwrap();
        let mut buf = Vec::new();
        let n = write_leb(&emb, &mut buf).unwrap();
        assert_eq!(n, 25);
        assert_eq!(buf.len(), 25);
        let back = read_leb(&mut buf.as_slice()).unwrap();
        assert_eq!(back, emb);
    }

    #[test]
    fn leb_header_matches_hand_assembled_bytes() {
        let emb = random_embeddings(2, 3, 4, 9);
        let mut buf = Vec::new();
        write_leb(&emb, &mut buf).unwrap();

        let mut want = Vec::new();
        want.extend_from_slice(b"LEB1");
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&2u32.to_le_bytes());
        want.extend_from_slice(&3u32.to_le_bytes());
        want.extend_from_slice(&4u32.to_le_bytes());
        want.push(0);
        assert_eq!(&buf[..21], &want[..]);

        let back = read_leb(&mut buf.as_slice()).unwrap();
        assert_eq!(back.values().as_slice(), emb.values().as_slice());
    }

    #[test]
    fn leb_bad_magic() {
        let emb = random_embeddings(1, 2, 2, 1);
        let mut buf = Vec::new();
        write_leb(&emb, &mut buf).unwrap();
        buf[..4].copy_from_slice(b"XXXX");
        match read_leb(&mut buf.as_slice()) {
            Err(Error::BadMagic { found, .. }) => assert_eq!(&found, b"XXXX"),
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }

    #[test]
    fn leb_bad_version_dtype_truncation() {
        let emb = random_embeddings(1, 2, 2, 2);
        let mut good = Vec::new();
        write_leb(&emb, &mut good).unwrap();

        let mut bad_version = good.clone();
        bad_version[4..8].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            read_leb(&mut bad_version.as_slice()),
            Err(Error::BadVersion { found: 9, .. })
        ));

        let mut bad_dtype = good.clone();
        bad_dtype[20] = 7;
        assert!(matches!(read_leb(&mut bad_dtype.as_slice()), Err(Error::BadDtype(7))));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(
            read_leb(&mut &truncated[..]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn leb_zero_extent_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"LEB1");
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.extend_from_slice(&1u32.to_le_bytes());
        buf.push(0);
        assert!(matches!(read_leb(&mut buf.as_slice()), Err(Error::BadExtent { .. })));
    }

    #[test]
    fn manifest_single_line() {
        let entries = parse_manifest("u1\ta/u1.leb\tbonafide").unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].label, Label::Bonafide);
        assert_eq!(entries[0].path, "a/u1.leb");
    }

    #[test]
    fn manifest_duplicate_id_reports_line() {
        let err = parse_manifest("u1\ta\tbonafide\nu1\tb\tspoof").unwrap_err();
        match err {
            Error::Manifest { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("duplicate"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_order_preserved() {
        let text = "a\tx.leb\tspoof\nb\ty.leb\tbonafide\nc\tz.leb\tspoof\n";
        let entries = parse_manifest(text).unwrap();
        let ids: Vec<&str> = entries.iter().map(|e| e.utt_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(format_manifest(&entries), text);
    }

    #[test]
    fn manifest_bad_label_and_field_count() {
        assert!(matches!(
            parse_manifest("u1\ta\tgenuine"),
            Err(Error::Manifest { line: 1, .. })
        ));
        assert!(matches!(
            parse_manifest("u1\ta"),
            Err(Error::Manifest { line: 1, .. })
        ));
    }

    #[test]
    fn scores_single_record() {
        let text = format_scores(&[ScoreRecord {
            utt_id: "u1".into(),
            score: 1.5,
        }])
        .unwrap();
        assert_eq!(text, "u1 1.50000\n");
    }

    #[test]
    fn scores_empty_list() {
        assert_eq!(format_scores(&[]).unwrap(), "");
        assert!(parse_scores("").unwrap().is_empty());
    }

    #[test]
    fn scores_roundtrip_close() {
        let mut rng = Rng::new(4);
        let records: Vec<ScoreRecord> = (0..5)
            .map(|i| ScoreRecord {
                utt_id: format!("u{i}"),
                score: rng.uniform_in(-10.0, 10.0),
            })
            .collect();
        let text = format_scores(&records).unwrap();
        let back = parse_scores(&text).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in records.iter().zip(&back) {
            assert_eq!(a.utt_id, b.utt_id);
            assert!((a.score - b.score).abs() < 1e-4, "{} vs {}", a.score, b.score);
        }
    }

    #[test]
    fn scores_reject_non_finite() {
        let r = [ScoreRecord {
            utt_id: "u".into(),
            score: f64::NAN,
        }];
        assert!(format_scores(&r).is_err());
        assert!(parse_scores("u inf").is_err());
        assert!(parse_scores("u").is_err());
    }

    #[test]
    fn score_value_significant_digits() {
        assert_eq!(format_score_value(1.5), "1.50000");
        assert_eq!(format_score_value(0.5), "0.500000");
        assert_eq!(format_score_value(-123.456789), "-123.457");
        assert_eq!(format_score_value(0.0), "0.00000");
    }

    #[test]
    fn checkpoint_minimal_roundtrip() {
        let tensors = vec![NamedTensor {
            name: "w".into(),
            dims: vec![2],
            data: vec![1.0, 2.0],
        }];
        let mut buf = Vec::new();
        write_checkpoint(&tensors, &mut buf).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, tensors);
    }

    #[test]
    fn checkpoint_empty_container_is_12_bytes() {
        let mut buf = Vec::new();
        let n = write_checkpoint(&[], &mut buf).unwrap();
        assert_eq!(n, 12);
        assert_eq!(buf.len(), 12);
        assert!(read_checkpoint(&mut buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn checkpoint_duplicate_name_rejected_both_ways() {
        let t = NamedTensor {
            name: "w".into(),
            dims: vec![1],
            data: vec![0.0],
        };
        let mut buf = Vec::new();
        assert!(matches!(
            write_checkpoint(&[t.clone(), t.clone()], &mut buf),
            Err(Error::DuplicateTensor(_))
        ));

        // Hand-build a container with two tensors named "w".
        let mut raw = Vec::new();
        raw.extend_from_slice(b"MFAC");
        raw.extend_from_slice(&1u32.to_le_bytes());
        raw.extend_from_slice(&2u32.to_le_bytes());
        for _ in 0..2 {
            raw.extend_from_slice(&1u16.to_le_bytes());
            raw.push(b'w');
            raw.push(1);
            raw.extend_from_slice(&1u32.to_le_bytes());
            raw.extend_from_slice(&0.0f32.to_le_bytes());
        }
        assert!(matches!(
            read_checkpoint(&mut raw.as_slice()),
            Err(Error::DuplicateTensor(_))
        ));
    }

    #[test]
    fn checkpoint_size_mismatch_and_truncation() {
        let bad = NamedTensor {
            name: "w".into(),
            dims: vec![2, 2],
            data: vec![0.0; 3],
        };
        let mut buf = Vec::new();
        assert!(matches!(
            write_checkpoint(&[bad], &mut buf),
            Err(Error::Shape { .. })
        ));

        let good = NamedTensor {
            name: "w".into(),
            dims: vec![3],
            data: vec![1.0, 2.0, 3.0],
        };
        let mut bytes = Vec::new();
        write_checkpoint(&[good], &mut bytes).unwrap();
        let cut = &bytes[..bytes.len() - 2];
        assert!(matches!(
            read_checkpoint(&mut &cut[..]),
            Err(Error::Truncated { .. })
        ));
    }
}
