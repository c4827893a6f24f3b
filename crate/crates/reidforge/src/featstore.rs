//! Embedding storage: dense feature matrices, gallery metadata, and the
//! FEAT binary format.
//!
//! FEAT layout (all little-endian, independent of host endianness):
//!
//! ```text
//! magic   "FEAT"          4 bytes
//! version u32 = 1         4 bytes
//! rows    u64             8 bytes
//! cols    u64             8 bytes
//! flags   u32             4 bytes   bit 0 = rows are L2-normalized
//! payload rows*cols f32, row-major
//! ```
//!
//! Values are held as f64 in memory; f32 applies only at the file boundary.

use std::collections::HashMap;
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub const FEAT_MAGIC: [u8; 4] = *b"FEAT";
pub const FEAT_VERSION: u32 = 1;
/// magic + version + rows + cols + flags
pub const FEAT_HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4;

const FLAG_NORMALIZED: u32 = 1;

/// Dense row-major matrix of embedding vectors (rows = items).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    normalized: bool,
}

impl FeatureMatrix {
    /// Build a matrix, checking shape and finiteness.
    pub fn new(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || dim == 0 {
            return Err(Error::InvalidParam {
                name: "shape",
                msg: format!("rows and dim must be >= 1, got {rows}x{dim}"),
            });
        }
        if data.len() != rows * dim {
            return Err(Error::InvalidParam {
                name: "data",
                msg: format!("expected {} values, got {}", rows * dim, data.len()),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            rows,
            dim,
            data,
            normalized: false,
        })
    }

    /// Build from per-row slices.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParam {
                name: "rows",
                msg: "need at least one row".into(),
            });
        }
        let dim = rows[0].len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidParam {
                name: "rows",
                msg: "ragged rows".into(),
            });
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.dim + c]
    }

    /// New matrix holding the given rows, in order. Indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::IndexOutOfRange {
                    context: "select_rows",
                    index: i,
                    limit: self.rows,
                });
            }
            data.extend_from_slice(self.row(i));
        }
        let mut out = Self::new(indices.len(), self.dim, data)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Internal constructor for rows already known to be unit-norm.
    pub(crate) fn new_normalized(rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(rows, dim, data)?;
        m.normalized = true;
        Ok(m)
    }
}

/// Divide each row by its Euclidean norm and set the normalized flag.
///
/// Rejects zero-norm rows. Idempotent within 1e-6.
pub fn l2_normalize_rows(matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
    let mut data = Vec::with_capacity(matrix.data.len());
    for r in 0..matrix.rows {
        let row = matrix.row(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormRow { row: r });
        }
        data.extend(row.iter().map(|v| v / norm));
    }
    FeatureMatrix::new_normalized(matrix.rows, matrix.dim, data)
}

/// Serialize a matrix in the FEAT format. Returns the byte count written.
pub fn write_features<W: Write>(matrix: &FeatureMatrix, sink: &mut W) -> Result<u64> {
    sink.write_all(&FEAT_MAGIC)?;
    sink.write_all(&FEAT_VERSION.to_le_bytes())?;
    sink.write_all(&(matrix.rows as u64).to_le_bytes())?;
    sink.write_all(&(matrix.dim as u64).to_le_bytes())?;
    let flags: u32 = if matrix.normalized { FLAG_NORMALIZED } else { 0 };
    sink.write_all(&flags.to_le_bytes())?;
    for v in &matrix.data {
        sink.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok((FEAT_HEADER_LEN + 4 * matrix.data.len()) as u64)
}

fn read_exact_or(source: &mut impl Read, buf: &mut [u8], part: &'static str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    part,
                    needed: buf.len() - filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

/// Parse a FEAT stream, validating header, payload, and invariants.
pub fn read_features<R: Read>(source: &mut R) -> Result<FeatureMatrix> {
    let mut magic = [0u8; 4];
    read_exact_or(source, &mut magic, "magic")?;
    if magic != FEAT_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let mut u32buf = [0u8; 4];
    read_exact_or(source, &mut u32buf, "version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != FEAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FEAT_VERSION,
        });
    }
    let mut u64buf = [0u8; 8];
    read_exact_or(source, &mut u64buf, "rows")?;
    let rows = u64::from_le_bytes(u64buf);
    read_exact_or(source, &mut u64buf, "cols")?;
    let cols = u64::from_le_bytes(u64buf);
    read_exact_or(source, &mut u32buf, "flags")?;
    let flags = u32::from_le_bytes(u32buf);

    if rows == 0 || cols == 0 {
        return Err(Error::InvalidHeader {
            msg: format!("empty shape {rows}x{cols}"),
        });
    }
    let count = (rows as usize)
        .checked_mul(cols as usize)
        .ok_or_else(|| Error::InvalidHeader {
            msg: format!("shape {rows}x{cols} overflows"),
        })?;

    let mut payload = vec![0u8; count * 4];
    read_exact_or(source, &mut payload, "payload")?;
    let mut data = Vec::with_capacity(count);
    for (index, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite { index });
        }
        data.push(v as f64);
    }

    let mut matrix = FeatureMatrix::new(rows as usize, cols as usize, data)?;
    if flags & FLAG_NORMALIZED != 0 {
        for r in 0..matrix.rows {
            let norm = matrix.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-5 {
                return Err(Error::NormFlagViolation { row: r, norm });
            }
        }
        matrix.normalized = true;
    }
    Ok(matrix)
}

// ── Named-block container ──────────────────────────────────────────────────

pub const PACK_MAGIC: [u8; 4] = *b"FPAK";
pub const PACK_VERSION: u32 = 1;

/// Write a sequence of named FEAT blocks:
/// magic "FPAK", version u32, count u32, then per tensor
/// `name_len u32, name utf-8, FEAT block`.
pub fn write_named_blocks<W: Write>(
    blocks: &[(&str, &FeatureMatrix)],
    sink: &mut W,
) -> Result<u64> {
    sink.write_all(&PACK_MAGIC)?;
    sink.write_all(&PACK_VERSION.to_le_bytes())?;
    sink.write_all(&(blocks.len() as u32).to_le_bytes())?;
    let mut total = (4 + 4 + 4) as u64;
    for (name, matrix) in blocks {
        let bytes = name.as_bytes();
        sink.write_all(&(bytes.len() as u32).to_le_bytes())?;
        sink.write_all(bytes)?;
        total += 4 + bytes.len() as u64;
        total += write_features(matrix, sink)?;
    }
    Ok(total)
}

/// Parse a named-block container written by [`write_named_blocks`].
pub fn read_named_blocks<R: Read>(source: &mut R) -> Result<Vec<(String, FeatureMatrix)>> {
    let mut magic = [0u8; 4];
    read_exact_or(source, &mut magic, "pack magic")?;
    if magic != PACK_MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let mut u32buf = [0u8; 4];
    read_exact_or(source, &mut u32buf, "pack version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != PACK_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: PACK_VERSION,
        });
    }
    read_exact_or(source, &mut u32buf, "pack count")?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        read_exact_or(source, &mut u32buf, "block name length")?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact_or(source, &mut name_bytes, "block name")?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::InvalidHeader {
            msg: "block name is not utf-8".into(),
        })?;
        blocks.push((name, read_features(source)?));
    }
    Ok(blocks)
}

// ── Gallery metadata ───────────────────────────────────────────────────────

/// One gallery item's metadata. `tracklet`/`frame` use -1 for unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub item_id: String,
    pub identity: i64,
    pub camera: i64,
    pub tracklet: i64,
    pub frame: i64,
}

/// Per-item labels, cameras, and tracklets paired with a feature matrix.
///
/// Invariants: item ids unique; every tracklet (other than -1) stays on a
/// single camera.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GalleryManifest {
    entries: Vec<ManifestEntry>,
}

impl GalleryManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (line, e) in entries.iter().enumerate() {
            if seen.insert(e.item_id.as_str(), line).is_some() {
                return Err(Error::DuplicateItemId {
                    line: line + 1,
                    item_id: e.item_id.clone(),
                });
            }
        }
        let mut tracklet_camera: HashMap<i64, i64> = HashMap::new();
        for e in &entries {
            if e.tracklet == -1 {
                continue;
            }
            match tracklet_camera.get(&e.tracklet) {
                Some(&cam) if cam != e.camera => {
                    return Err(Error::TrackletCameraConflict {
                        tracklet: e.tracklet,
                        first: cam,
                        second: e.camera,
                    });
                }
                Some(_) => {}
                None => {
                    tracklet_camera.insert(e.tracklet, e.camera);
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn entry(&self, i: usize) -> &ManifestEntry {
        &self.entries[i]
    }

    /// Sub-manifest holding the given entries, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut entries = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.entries.len() {
                return Err(Error::IndexOutOfRange {
                    context: "manifest select",
                    index: i,
                    limit: self.entries.len(),
                });
            }
            entries.push(self.entries[i].clone());
        }
        Self::new(entries)
    }

    /// Identity label of every entry, in order.
    pub fn identities(&self) -> Vec<i64> {
        self.entries.iter().map(|e| e.identity).collect()
    }
}

/// Parse the manifest text format: one `item_id,identity,camera,tracklet,frame`
/// record per line, `#` comments and blank lines ignored.
pub fn read_manifest<R: std::io::BufRead>(source: R) -> Result<GalleryManifest> {
    let mut entries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::ManifestParse {
                line: line_no,
                msg: format!("expected 5 comma-separated fields, got {}", fields.len()),
            });
        }
        let item_id = fields[0].trim().to_string();
        if item_id.is_empty() {
            return Err(Error::ManifestParse {
                line: line_no,
                msg: "empty item_id".into(),
            });
        }
        let parse_int = |field: &str, name: &str| -> Result<i64> {
            field.trim().parse::<i64>().map_err(|_| Error::ManifestParse {
                line: line_no,
                msg: format!("cannot parse {name} \"{}\"", field.trim()),
            })
        };
        let identity = parse_int(fields[1], "identity")?;
        let camera = parse_int(fields[2], "camera")?;
        let tracklet = parse_int(fields[3], "tracklet")?;
        let frame = parse_int(fields[4], "frame")?;
        if let Some(prev) = seen.insert(item_id.clone(), line_no) {
            let _ = prev;
            return Err(Error::DuplicateItemId {
                line: line_no,
                item_id,
            });
        }
        entries.push(ManifestEntry {
            item_id,
            identity,
            camera,
            tracklet,
            frame,
        });
    }
    GalleryManifest::new(entries)
}

/// Emit the canonical manifest text form (round-trips with [`read_manifest`]
/// for comment-free inputs).
pub fn write_manifest<W: Write>(manifest: &GalleryManifest, sink: &mut W) -> Result<u64> {
    let mut total = 0u64;
    for e in &manifest.entries {
        let line = format!(
            "{},{},{},{},{}\n",
            e.item_id, e.identity, e.camera, e.tracklet, e.frame
        );
        sink.write_all(line.as_bytes())?;
        total += line.len() as u64;
    }
    Ok(total)
}

// ── Query/gallery split ────────────────────────────────────────────────────

/// Index lists carving a feature matrix into query and gallery sides.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    query: Vec<usize>,
    gallery: Vec<usize>,
    disjoint: bool,
}

impl DatasetSplit {
    pub fn new(query: Vec<usize>, gallery: Vec<usize>, disjoint: bool, rows: usize) -> Result<Self> {
        for &i in query.iter().chain(gallery.iter()) {
            if i >= rows {
                return Err(Error::IndexOutOfRange {
                    context: "dataset split",
                    index: i,
                    limit: rows,
                });
            }
        }
        if disjoint {
            let gallery_set: std::collections::HashSet<usize> = gallery.iter().copied().collect();
            if let Some(&i) = query.iter().find(|i| gallery_set.contains(i)) {
                return Err(Error::InvalidParam {
                    name: "split",
                    msg: format!("index {i} appears in both query and gallery"),
                });
            }
        }
        Ok(Self {
            query,
            gallery,
            disjoint,
        })
    }

    pub fn query(&self) -> &[usize] {
        &self.query
    }

    pub fn gallery(&self) -> &[usize] {
        &self.gallery
    }

    pub fn is_disjoint(&self) -> bool {
        self.disjoint
    }
}
