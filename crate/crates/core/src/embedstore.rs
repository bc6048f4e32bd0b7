//! Embedding sets, paired corpora and their on-disk formats.
//!
//! Binary `EMB1` layout (all integers and floats little-endian):
//!
//! ```text
//! "EMB1" | dim: u32 | count: u64 | count x (len: u16, utf-8 id bytes) | count*dim x f32 (row-major)
//! ```
//!
//! TSV layout is one item per line, `id<TAB>v1,v2,...,vdim`. Correspondence
//! files are `image_id<TAB>text_id` lines; lines starting with `#` are skipped.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::vecmath;
use crate::{Error, Result};

pub const EMB1_MAGIC: &[u8; 4] = b"EMB1";

/// Size in bytes of an `EMB1` file holding `ids` with `dim`-dimensional rows.
pub fn emb1_file_size<'a>(ids: impl IntoIterator<Item = &'a str>, dim: usize) -> u64 {
    let mut count = 0u64;
    let mut id_bytes = 0u64;
    for id in ids {
        count += 1;
        id_bytes += 2 + id.len() as u64;
    }
    4 + 4 + 8 + id_bytes + count * dim as u64 * 4
}

/// An id-indexed dense `count x dim` matrix of `f32` embeddings.
///
/// Construction validates every row: finite entries, strictly positive norm,
/// unique ids. Norms are cached in `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    data: Vec<f32>,
    norms: Vec<f64>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::MalformedHeader("dimension must be positive".into()));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::MalformedHeader(format!(
                "{} ids with dimension {dim} need {} values, got {}",
                ids.len(),
                ids.len() * dim,
                data.len()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        let mut norms = Vec::with_capacity(ids.len());
        for (row, (id, values)) in ids.iter().zip(data.chunks_exact(dim)).enumerate() {
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row, col });
            }
            let norm = vecmath::norm_f32(values);
            if norm <= 0.0 {
                return Err(Error::ZeroNormRow { row });
            }
            if index.insert(id.clone(), row).is_some() {
                return Err(Error::DuplicateId { row, id: id.clone() });
            }
            norms.push(norm);
        }
        Ok(Self { ids, index, dim, data, norms })
    }

    /// Builds a set from per-row vectors; every row must have the same length.
    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::MalformedHeader(format!(
                "{} ids but {} rows",
                ids.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (row, values) in rows.iter().enumerate() {
            if values.len() != dim {
                return Err(Error::RowDimension { row, expected: dim, found: values.len() });
            }
            data.extend_from_slice(values);
        }
        Self::new(ids, dim, data)
    }

    /// An empty set of the given dimension.
    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(Vec::new(), dim, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn norm(&self, row: usize) -> f64 {
        self.norms[row]
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    /// Row-major view of the whole matrix.
    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// A new set holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut ids = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        let mut norms = Vec::with_capacity(rows.len());
        for (new_row, &r) in rows.iter().enumerate() {
            let id = self.ids[r].clone();
            let fresh = index.insert(id.clone(), new_row).is_none();
            assert!(fresh, "subset rows must be distinct");
            ids.push(id);
            data.extend_from_slice(self.row(r));
            norms.push(self.norms[r]);
        }
        Self { ids, index, dim: self.dim, data, norms }
    }
}

/// On-disk embedding format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Binary,
    Tsv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" | "emb1" => Ok(Format::Binary),
            "tsv" => Ok(Format::Tsv),
            other => Err(Error::InvalidConfig(format!("unknown embedding format `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Binary => "binary",
            Format::Tsv => "tsv",
        })
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, format: Format) -> Result<EmbeddingSet> {
    let reader = BufReader::new(File::open(path)?);
    match format {
        Format::Binary => read_emb1(reader),
        Format::Tsv => read_tsv(reader),
    }
}

pub fn save_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    match format {
        Format::Binary => write_emb1(set, &mut writer)?,
        Format::Tsv => write_tsv(set, &mut writer)?,
    }
    writer.flush()?;
    Ok(())
}

pub fn write_emb1<W: Write>(set: &EmbeddingSet, w: &mut W) -> Result<()> {
    w.write_all(EMB1_MAGIC)?;
    let dim = u32::try_from(set.dim)
        .map_err(|_| Error::InvalidConfig(format!("dimension {} exceeds u32", set.dim)))?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    for (row, id) in set.ids.iter().enumerate() {
        let len = u16::try_from(id.len()).map_err(|_| Error::MalformedRow {
            row,
            detail: format!("id of {} bytes exceeds the u16 length prefix", id.len()),
        })?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id.as_bytes())?;
    }
    let mut buf = Vec::with_capacity(set.dim * 4);
    for values in set.rows() {
        buf.clear();
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], err: impl FnOnce() -> Error) -> Result<()> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(err()),
        Err(e) => Err(e.into()),
    }
}

pub fn read_emb1<R: Read>(mut r: R) -> Result<EmbeddingSet> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, || Error::MalformedHeader("file shorter than magic".into()))?;
    if &magic != EMB1_MAGIC {
        return Err(Error::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let mut b4 = [0u8; 4];
    read_exact_or(&mut r, &mut b4, || Error::MalformedHeader("truncated dimension".into()))?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    read_exact_or(&mut r, &mut b8, || Error::MalformedHeader("truncated count".into()))?;
    let count = u64::from_le_bytes(b8);
    if dim == 0 {
        return Err(Error::MalformedHeader("dimension must be positive".into()));
    }
    let count = usize::try_from(count)
        .map_err(|_| Error::MalformedHeader(format!("count {count} too large")))?;

    // Capacity is capped so a corrupt header cannot force a huge allocation.
    let mut ids = Vec::with_capacity(count.min(1 << 16));
    for row in 0..count {
        let mut b2 = [0u8; 2];
        read_exact_or(&mut r, &mut b2, || Error::MalformedRow {
            row,
            detail: "truncated id length".into(),
        })?;
        let mut bytes = vec![0u8; u16::from_le_bytes(b2) as usize];
        read_exact_or(&mut r, &mut bytes, || Error::MalformedRow {
            row,
            detail: "truncated id".into(),
        })?;
        let id = String::from_utf8(bytes).map_err(|_| Error::MalformedRow {
            row,
            detail: "id is not valid UTF-8".into(),
        })?;
        ids.push(id);
    }

    let mut data = Vec::with_capacity(count.min(1 << 16) * dim);
    let mut buf = vec![0u8; dim * 4];
    for row in 0..count {
        read_exact_or(&mut r, &mut buf, || Error::MalformedRow {
            row,
            detail: "truncated vector data".into(),
        })?;
        data.extend(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::MalformedHeader("trailing bytes after vector data".into()));
    }
    EmbeddingSet::new(ids, dim, data)
}

pub fn write_tsv<W: Write>(set: &EmbeddingSet, w: &mut W) -> Result<()> {
    for (row, (id, values)) in set.ids.iter().zip(set.rows()).enumerate() {
        if id.contains(['\t', '\n', '\r']) {
            return Err(Error::MalformedRow {
                row,
                detail: "id contains a tab or line break".into(),
            });
        }
        w.write_all(id.as_bytes())?;
        w.write_all(b"\t")?;
        for (j, v) in values.iter().enumerate() {
            if j > 0 {
                w.write_all(b",")?;
            }
            // `Display` prints the shortest string that parses back to the same f32.
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_tsv<R: BufRead>(r: R) -> Result<EmbeddingSet> {
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (row, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            return Err(Error::MalformedRow { row, detail: "empty line".into() });
        }
        let (id, values) = line.split_once('\t').ok_or_else(|| Error::MalformedRow {
            row,
            detail: "missing tab separator".into(),
        })?;
        let before = data.len();
        for field in values.split(',') {
            let v: f32 = field.trim().parse().map_err(|_| Error::MalformedRow {
                row,
                detail: format!("cannot parse `{field}` as a number"),
            })?;
            data.push(v);
        }
        let found = data.len() - before;
        match dim {
            None => dim = Some(found),
            Some(expected) if expected != found => {
                return Err(Error::RowDimension { row, expected, found })
            }
            Some(_) => {}
        }
        ids.push(id.to_string());
    }
    let dim = dim.ok_or_else(|| {
        Error::MalformedHeader("TSV file has no rows, dimension is unknown".into())
    })?;
    EmbeddingSet::new(ids, dim, data)
}

/// Reads an `image_id<TAB>text_id` correspondence file.
pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    read_pairs(BufReader::new(File::open(path)?))
}

pub fn read_pairs<R: BufRead>(r: R) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (row, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        match (fields.next(), fields.next(), fields.next()) {
            (Some(image), Some(text), None) if !image.is_empty() && !text.is_empty() => {
                pairs.push((image.to_string(), text.to_string()))
            }
            _ => {
                return Err(Error::MalformedRow {
                    row,
                    detail: "expected `image_id<TAB>text_id`".into(),
                })
            }
        }
    }
    Ok(pairs)
}

pub fn save_pairs<'a>(
    pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (image, text) in pairs {
        writeln!(w, "{image}\t{text}")?;
    }
    w.flush()?;
    Ok(())
}

/// Image and text embeddings joined by a total image -> text map.
///
/// Every image has exactly one text; a text may have any number of images,
/// including none.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedCorpus {
    images: EmbeddingSet,
    texts: EmbeddingSet,
    image_to_text: Vec<usize>,
    text_to_images: Vec<Vec<usize>>,
}

impl PairedCorpus {
    pub fn images(&self) -> &EmbeddingSet {
        &self.images
    }

    pub fn texts(&self) -> &EmbeddingSet {
        &self.texts
    }

    /// Text row paired with the given image row.
    pub fn text_of_image(&self, image: usize) -> usize {
        self.image_to_text[image]
    }

    /// Image rows paired with the given text row, ascending.
    pub fn images_of_text(&self, text: usize) -> &[usize] {
        &self.text_to_images[text]
    }

    pub fn image_to_text(&self) -> &[usize] {
        &self.image_to_text
    }

    pub fn text_to_images(&self) -> &[Vec<usize>] {
        &self.text_to_images
    }

    /// Text rows with at least one image, ascending.
    pub fn paired_texts(&self) -> Vec<usize> {
        (0..self.texts.len()).filter(|&t| !self.text_to_images[t].is_empty()).collect()
    }

    /// `(image_id, text_id)` pairs in image order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.image_to_text
            .iter()
            .enumerate()
            .map(|(i, &t)| (self.images.id(i), self.texts.id(t)))
    }

    /// Sub-corpus holding the given text rows (in that order) and all their images.
    pub fn subset_by_texts(&self, texts: &[usize]) -> PairedCorpus {
        let text_set = self.texts.subset(texts);
        let mut image_rows = Vec::new();
        let mut image_to_text = Vec::new();
        let mut text_to_images = Vec::with_capacity(texts.len());
        for (new_t, &t) in texts.iter().enumerate() {
            let mut mine = Vec::with_capacity(self.text_to_images[t].len());
            for &i in &self.text_to_images[t] {
                mine.push(image_rows.len());
                image_rows.push(i);
                image_to_text.push(new_t);
            }
            text_to_images.push(mine);
        }
        PairedCorpus {
            images: self.images.subset(&image_rows),
            texts: text_set,
            image_to_text,
            text_to_images,
        }
    }

    /// Keeps only images whose id satisfies `keep_image` and texts satisfying
    /// `keep_text`; images whose text is dropped are dropped too.
    pub fn filter(
        &self,
        keep_image: impl Fn(&str) -> bool,
        keep_text: impl Fn(&str) -> bool,
    ) -> PairedCorpus {
        let texts: Vec<usize> =
            (0..self.texts.len()).filter(|&t| keep_text(self.texts.id(t))).collect();
        let mut new_text = vec![usize::MAX; self.texts.len()];
        for (n, &t) in texts.iter().enumerate() {
            new_text[t] = n;
        }
        let images: Vec<usize> = (0..self.images.len())
            .filter(|&i| {
                keep_image(self.images.id(i)) && new_text[self.image_to_text[i]] != usize::MAX
            })
            .collect();
        let image_to_text: Vec<usize> =
            images.iter().map(|&i| new_text[self.image_to_text[i]]).collect();
        let mut text_to_images = vec![Vec::new(); texts.len()];
        for (n, &t) in image_to_text.iter().enumerate() {
            text_to_images[t].push(n);
        }
        PairedCorpus {
            images: self.images.subset(&images),
            texts: self.texts.subset(&texts),
            image_to_text,
            text_to_images,
        }
    }
}

/// Joins image and text sets through `(image_id, text_id)` pairs.
///
/// Every image must appear in exactly one pair.
pub fn join_corpus(
    images: EmbeddingSet,
    texts: EmbeddingSet,
    pairs: &[(String, String)],
) -> Result<PairedCorpus> {
    let mut image_to_text = vec![usize::MAX; images.len()];
    for (image_id, text_id) in pairs {
        let i = images.position(image_id).ok_or_else(|| Error::UnknownId(image_id.clone()))?;
        let t = texts.position(text_id).ok_or_else(|| Error::UnknownId(text_id.clone()))?;
        if image_to_text[i] != usize::MAX {
            return Err(Error::DuplicateImagePairing {
                image: image_id.clone(),
                first: texts.id(image_to_text[i]).to_string(),
                second: text_id.clone(),
            });
        }
        image_to_text[i] = t;
    }
    if let Some(i) = image_to_text.iter().position(|&t| t == usize::MAX) {
        return Err(Error::UnpairedImage(images.id(i).to_string()));
    }
    let mut text_to_images = vec![Vec::new(); texts.len()];
    for (i, &t) in image_to_text.iter().enumerate() {
        text_to_images[t].push(i);
    }
    Ok(PairedCorpus { images, texts, image_to_text, text_to_images })
}
