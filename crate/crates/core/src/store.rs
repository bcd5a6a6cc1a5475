//! Single-file `.kgsq` model format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic              4 bytes  "KGSQ"
//! version            u32      1
//! dim                u32
//! n_entities         u64
//! n_relations_total  u64      2M (original + augmented)
//! entity names       n_entities × (u32 byte length, UTF-8 bytes)
//! relation names     M × (u32 byte length, UTF-8 bytes)
//! entity types       u64 count, then count × (u64 entity id, u32 byte length, UTF-8 bytes)
//! head_vectors       n_entities × dim f32, row-major
//! tail_vectors       n_entities × dim f32, row-major
//! relation_vectors   n_relations_total × dim f32, row-major
//! ```
//!
//! Nothing may follow the last matrix.

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::graph::{EntityId, Vocabulary};
use crate::matrix::Matrix;
use crate::model::{EmbeddingModel, ModelConfig};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"KGSQ";
pub const VERSION: u32 = 1;
pub const FILE_EXTENSION: &str = "kgsq";
/// Default ceiling on the bytes a header may ask the loader to read.
pub const DEFAULT_SIZE_CAP: u64 = 4 << 30;

const HEADER_LEN: u64 = 4 + 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Header,
    EntityNames,
    RelationNames,
    EntityTypes,
    HeadVectors,
    TailVectors,
    RelationVectors,
    Trailer,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Section::Header => "header",
            Section::EntityNames => "entity names",
            Section::RelationNames => "relation names",
            Section::EntityTypes => "entity types",
            Section::HeadVectors => "head vectors",
            Section::TailVectors => "tail vectors",
            Section::RelationVectors => "relation vectors",
            Section::Trailer => "trailer",
        })
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{section} at byte {offset}: bad magic {found:?}, expected \"KGSQ\"")]
    BadMagic {
        section: Section,
        offset: u64,
        found: [u8; 4],
    },
    #[error("{section} at byte {offset}: unsupported version {version}")]
    UnsupportedVersion {
        section: Section,
        offset: u64,
        version: u32,
    },
    #[error("{section} at byte {offset}: truncated, expected {expected} bytes, got {actual}")]
    Truncated {
        section: Section,
        offset: u64,
        expected: u64,
        actual: u64,
    },
    #[error("{section} at byte {offset}: non-finite value")]
    NonFinite { section: Section, offset: u64 },
    #[error("{section} at byte {offset}: declared size {requested} bytes exceeds cap {cap}")]
    TooLarge {
        section: Section,
        offset: u64,
        requested: u64,
        cap: u64,
    },
    #[error("{section} at byte {offset}: {detail}")]
    Invalid {
        section: Section,
        offset: u64,
        detail: String,
    },
    #[error("trailer at byte {offset}: unexpected trailing bytes")]
    TrailingBytes { offset: u64 },
    #[error("i/o error while {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
}

impl StoreError {
    /// Section the error was detected in, when known.
    pub fn section(&self) -> Option<Section> {
        match self {
            StoreError::BadMagic { section, .. }
            | StoreError::UnsupportedVersion { section, .. }
            | StoreError::Truncated { section, .. }
            | StoreError::NonFinite { section, .. }
            | StoreError::TooLarge { section, .. }
            | StoreError::Invalid { section, .. } => Some(*section),
            StoreError::TrailingBytes { .. } => Some(Section::Trailer),
            StoreError::Io { .. } => None,
        }
    }

    pub fn offset(&self) -> Option<u64> {
        match self {
            StoreError::BadMagic { offset, .. }
            | StoreError::UnsupportedVersion { offset, .. }
            | StoreError::Truncated { offset, .. }
            | StoreError::NonFinite { offset, .. }
            | StoreError::TooLarge { offset, .. }
            | StoreError::Invalid { offset, .. }
            | StoreError::TrailingBytes { offset } => Some(*offset),
            StoreError::Io { .. } => None,
        }
    }
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8], what: &str) -> Result<(), StoreError> {
        self.inner.write_all(bytes).map_err(|source| StoreError::Io {
            context: format!("writing {what}"),
            source,
        })?;
        self.written += bytes.len() as u64;
        Ok(())
    }

    fn put_str(&mut self, s: &str, what: &str) -> Result<(), StoreError> {
        let len = u32::try_from(s.len()).map_err(|_| StoreError::Io {
            context: format!("writing {what}"),
            source: io::Error::new(io::ErrorKind::InvalidInput, "string longer than 4 GiB"),
        })?;
        self.put(&len.to_le_bytes(), what)?;
        self.put(s.as_bytes(), what)
    }

    fn put_matrix<F: Scalar>(&mut self, m: &Matrix<F>, what: &str) -> Result<(), StoreError> {
        let mut buf = Vec::with_capacity(m.cols() * 4);
        for row in m.iter_rows() {
            buf.clear();
            for &v in row {
                buf.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
            }
            self.put(&buf, what)?;
        }
        Ok(())
    }
}

/// Writes `model` in `.kgsq` layout, rounding entries to nearest-even `f32`.
/// Returns the number of bytes written.
pub fn save_model<F: Scalar, W: Write>(model: &EmbeddingModel<F>, sink: W) -> Result<u64, StoreError> {
    model.check_shapes().map_err(|e| StoreError::Io {
        context: "validating model".into(),
        source: io::Error::new(io::ErrorKind::InvalidInput, e.to_string()),
    })?;
    let dim = u32::try_from(model.dim()).map_err(|_| StoreError::Io {
        context: "writing header".into(),
        source: io::Error::new(io::ErrorKind::InvalidInput, "dim exceeds u32"),
    })?;
    let vocab = &model.vocabulary;
    let mut w = CountingWriter {
        inner: sink,
        written: 0,
    };
    w.put(&MAGIC, "header")?;
    w.put(&VERSION.to_le_bytes(), "header")?;
    w.put(&dim.to_le_bytes(), "header")?;
    w.put(&(model.num_entities() as u64).to_le_bytes(), "header")?;
    w.put(&(model.relation_vectors.rows() as u64).to_le_bytes(), "header")?;
    for name in vocab.entity_names() {
        w.put_str(name, "entity names")?;
    }
    for name in vocab.relation_names() {
        w.put_str(name, "relation names")?;
    }
    let types = vocab.entity_types();
    w.put(&(types.len() as u64).to_le_bytes(), "entity types")?;
    for (id, ty) in types {
        w.put(&(id.0 as u64).to_le_bytes(), "entity types")?;
        w.put_str(ty, "entity types")?;
    }
    w.put_matrix(&model.head_vectors, "head vectors")?;
    w.put_matrix(&model.tail_vectors, "tail vectors")?;
    w.put_matrix(&model.relation_vectors, "relation vectors")?;
    w.inner.flush().map_err(|source| StoreError::Io {
        context: "flushing model".into(),
        source,
    })?;
    Ok(w.written)
}

struct Cursor<R> {
    inner: R,
    offset: u64,
    budget: u64,
    cap: u64,
}

impl<R: Read> Cursor<R> {
    /// Reads exactly `n` bytes, reporting truncation as expected vs actual.
    fn take(&mut self, n: u64, section: Section) -> Result<Vec<u8>, StoreError> {
        if n > self.budget {
            return Err(StoreError::TooLarge {
                section,
                offset: self.offset,
                requested: n,
                cap: self.cap,
            });
        }
        let mut buf = Vec::new();
        (&mut self.inner)
            .take(n)
            .read_to_end(&mut buf)
            .map_err(|source| StoreError::Io {
                context: format!("reading {section} at byte {}", self.offset),
                source,
            })?;
        if (buf.len() as u64) < n {
            return Err(StoreError::Truncated {
                section,
                offset: self.offset,
                expected: n,
                actual: buf.len() as u64,
            });
        }
        self.offset += n;
        self.budget -= n;
        Ok(buf)
    }

    fn u32(&mut self, section: Section) -> Result<u32, StoreError> {
        let b = self.take(4, section)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self, section: Section) -> Result<u64, StoreError> {
        let b = self.take(8, section)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self, section: Section) -> Result<String, StoreError> {
        let len = self.u32(section)? as u64;
        let at = self.offset;
        let bytes = self.take(len, section)?;
        String::from_utf8(bytes).map_err(|_| StoreError::Invalid {
            section,
            offset: at,
            detail: "invalid UTF-8".into(),
        })
    }

    fn matrix(&mut self, rows: usize, cols: usize, section: Section) -> Result<Matrix<f32>, StoreError> {
        let start = self.offset;
        let bytes = self.take((rows * cols * 4) as u64, section)?;
        let mut data = Vec::with_capacity(rows * cols);
        for (i, chunk) in bytes.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(StoreError::NonFinite {
                    section,
                    offset: start + 4 * i as u64,
                });
            }
            data.push(v);
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

/// Reads a `.kgsq` model with the default size cap.
pub fn load_model<R: Read>(source: R) -> Result<EmbeddingModel<f32>, StoreError> {
    load_model_with_cap(source, DEFAULT_SIZE_CAP)
}

/// Reads a `.kgsq` model, refusing any file whose declared sizes would need
/// more than `cap` bytes.
pub fn load_model_with_cap<R: Read>(source: R, cap: u64) -> Result<EmbeddingModel<f32>, StoreError> {
    let mut c = Cursor {
        inner: source,
        offset: 0,
        budget: cap,
        cap,
    };
    let magic = c.take(4, Section::Header)?;
    if magic != MAGIC {
        return Err(StoreError::BadMagic {
            section: Section::Header,
            offset: 0,
            found: magic.try_into().unwrap(),
        });
    }
    let version = c.u32(Section::Header)?;
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion {
            section: Section::Header,
            offset: 4,
            version,
        });
    }
    let dim = c.u32(Section::Header)? as u64;
    let n_entities = c.u64(Section::Header)?;
    let n_rel_total = c.u64(Section::Header)?;
    let invalid = |offset, detail: String| StoreError::Invalid {
        section: Section::Header,
        offset,
        detail,
    };
    if dim == 0 {
        return Err(invalid(8, "dim must be >= 1".into()));
    }
    if n_rel_total % 2 != 0 {
        return Err(invalid(
            20,
            format!("relation count {n_rel_total} is odd; expected 2M rows"),
        ));
    }
    // fail fast before touching any variable-size section
    let matrix_bytes = n_entities
        .checked_mul(2)
        .and_then(|r| r.checked_add(n_rel_total))
        .and_then(|r| r.checked_mul(dim))
        .and_then(|r| r.checked_mul(4));
    match matrix_bytes {
        Some(b) if b <= c.budget => {}
        other => {
            return Err(StoreError::TooLarge {
                section: Section::Header,
                offset: HEADER_LEN,
                requested: other.unwrap_or(u64::MAX),
                cap,
            })
        }
    }
    let matrix_bytes = matrix_bytes.unwrap();
    // reserve the matrix bytes so vocabulary strings cannot eat into them
    c.budget -= matrix_bytes;

    let mut entities = Vec::new();
    for _ in 0..n_entities {
        entities.push(c.string(Section::EntityNames)?);
    }
    let mut relations = Vec::new();
    for _ in 0..n_rel_total / 2 {
        relations.push(c.string(Section::RelationNames)?);
    }
    let mut vocabulary = Vocabulary::from_names(entities, relations).map_err(|detail| {
        StoreError::Invalid {
            section: Section::EntityNames,
            offset: HEADER_LEN,
            detail,
        }
    })?;

    let n_types = c.u64(Section::EntityTypes)?;
    for _ in 0..n_types {
        let at = c.offset;
        let id = c.u64(Section::EntityTypes)?;
        let ty = c.string(Section::EntityTypes)?;
        if id >= n_entities {
            return Err(StoreError::Invalid {
                section: Section::EntityTypes,
                offset: at,
                detail: format!("entity id {id} out of range (N = {n_entities})"),
            });
        }
        let id = EntityId(id as usize);
        if vocabulary.entity_type(id).is_some() {
            return Err(StoreError::Invalid {
                section: Section::EntityTypes,
                offset: at,
                detail: format!("entity id {} typed twice", id.0),
            });
        }
        vocabulary.set_entity_type(id, ty);
    }

    c.budget += matrix_bytes;
    let (n, r, d) = (n_entities as usize, n_rel_total as usize, dim as usize);
    let head = c.matrix(n, d, Section::HeadVectors)?;
    let tail = c.matrix(n, d, Section::TailVectors)?;
    let rel = c.matrix(r, d, Section::RelationVectors)?;

    let mut probe = [0u8; 1];
    let trailing = loop {
        match c.inner.read(&mut probe) {
            Ok(n) => break n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(source) => {
                return Err(StoreError::Io {
                    context: "checking for trailing bytes".into(),
                    source,
                })
            }
        }
    };
    if trailing != 0 {
        return Err(StoreError::TrailingBytes { offset: c.offset });
    }

    let config = ModelConfig {
        dim: d,
        ..ModelConfig::default()
    };
    Ok(EmbeddingModel::from_parts(vocabulary, config, head, tail, rel)
        .expect("shapes follow from the validated header"))
}

pub fn save_model_file<F: Scalar>(model: &EmbeddingModel<F>, path: &Path) -> Result<u64, StoreError> {
    let file = File::create(path).map_err(|source| StoreError::Io {
        context: format!("creating {}", path.display()),
        source,
    })?;
    save_model(model, BufWriter::new(file))
}

pub fn load_model_file(path: &Path) -> Result<EmbeddingModel<f32>, StoreError> {
    let file = File::open(path).map_err(|source| StoreError::Io {
        context: format!("opening {}", path.display()),
        source,
    })?;
    load_model(BufReader::new(file))
}
