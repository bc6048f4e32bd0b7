//! Seeded synthetic paired corpora with known ground truth.
//!
//! Every class has a latent centre on the unit sphere. An item's latent is
//! its class centre plus Gaussian jitter; its text is `B * latent` and each
//! of its images is `A * latent`, both plus independent Gaussian noise.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::embedstore::{join_corpus, save_embeddings, save_pairs, EmbeddingSet, Format, PairedCorpus};
use crate::{Error, Result};

/// How many images each text receives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImagesPerText {
    Fixed(usize),
    /// Uniform over `1..=k`.
    UpTo(usize),
}

/// The latent-to-embedding maps `A` and `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Maps {
    /// Entries drawn i.i.d. `N(0, 1/latent_dim)`.
    #[default]
    Random,
    /// `A = B = I`; requires all three dimensions to be equal.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_classes: usize,
    pub items_per_class: usize,
    pub latent_dim: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub image_noise_sigma: f64,
    pub text_noise_sigma: f64,
    /// Norm scale of an item's jitter around its class centre.
    pub item_spread: f64,
    pub images_per_text: ImagesPerText,
    pub maps: Maps,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_classes: 100,
            items_per_class: 50,
            latent_dim: 32,
            image_dim: 128,
            text_dim: 96,
            image_noise_sigma: 0.1,
            text_noise_sigma: 0.1,
            item_spread: 0.6,
            images_per_text: ImagesPerText::UpTo(3),
            maps: Maps::Random,
            seed: 7,
        }
    }
}

impl SynthSpec {
    /// Items per class held out for the test split (the last fifth).
    pub fn test_items_per_class(&self) -> usize {
        self.items_per_class / 5
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_classes == 0 || self.latent_dim == 0 || self.image_dim == 0 || self.text_dim == 0 {
            return bad("class count and dimensions must be positive".into());
        }
        if self.items_per_class < 5 {
            return bad(format!(
                "items_per_class must be at least 5 for an 80/20 split, got {}",
                self.items_per_class
            ));
        }
        for (name, s) in [
            ("image_noise_sigma", self.image_noise_sigma),
            ("text_noise_sigma", self.text_noise_sigma),
            ("item_spread", self.item_spread),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} must be finite and non-negative, got {s}"));
            }
        }
        match self.images_per_text {
            ImagesPerText::Fixed(0) | ImagesPerText::UpTo(0) => {
                return bad("every text needs at least one image".into())
            }
            _ => {}
        }
        if self.maps == Maps::Identity
            && (self.image_dim != self.latent_dim || self.text_dim != self.latent_dim)
        {
            return bad("identity maps need image_dim = text_dim = latent_dim".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One generated image with its text, class and split.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub image_id: String,
    pub text_id: String,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: PairedCorpus,
    pub test: PairedCorpus,
    pub truth: Vec<TruthRow>,
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
}

#[derive(Default)]
struct SplitBuf {
    text_ids: Vec<String>,
    texts: Vec<f32>,
    image_ids: Vec<String>,
    images: Vec<f32>,
    pairs: Vec<(String, String)>,
}

impl SplitBuf {
    fn finish(self, spec: &SynthSpec) -> Result<PairedCorpus> {
        let images = EmbeddingSet::new(self.image_ids, spec.image_dim, self.images)?;
        let texts = EmbeddingSet::new(self.text_ids, spec.text_dim, self.texts)?;
        join_corpus(images, texts, &self.pairs)
    }
}

/// Draws a train/test corpus pair from `spec`.
///
/// Per class, the last fifth of the items go to the test split. Ids encode
/// class and item, e.g. text `t_c07_i12` with images `i_c07_i12_0`, ...
pub fn generate(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = spec.latent_dim;

    let mut centres = Vec::with_capacity(spec.n_classes);
    while centres.len() < spec.n_classes {
        let c = gaussian_vector(&mut rng, l, 1.0);
        let n = c.norm();
        if n > 0.0 {
            centres.push(c / n);
        }
    }
    let (a, b) = match spec.maps {
        Maps::Random => {
            let scale = 1.0 / (l as f64).sqrt();
            let a = gaussian_matrix(&mut rng, spec.image_dim, l, scale);
            let b = gaussian_matrix(&mut rng, spec.text_dim, l, scale);
            (a, b)
        }
        Maps::Identity => (DMatrix::identity(l, l), DMatrix::identity(l, l)),
    };

    let cw = width(spec.n_classes);
    let iw = width(spec.items_per_class);
    let test_from = spec.items_per_class - spec.test_items_per_class();
    let jitter = spec.item_spread / (l as f64).sqrt();
    let mut train = SplitBuf::default();
    let mut test = SplitBuf::default();
    let mut truth = Vec::new();
    for (class, centre) in centres.iter().enumerate() {
        for item in 0..spec.items_per_class {
            let latent = centre + gaussian_vector(&mut rng, l, jitter);
            let text = &b * &latent + gaussian_vector(&mut rng, spec.text_dim, spec.text_noise_sigma);
            let n_images = match spec.images_per_text {
                ImagesPerText::Fixed(k) => k,
                ImagesPerText::UpTo(k) => rng.random_range(1..=k),
            };
            let split = if item >= test_from { Split::Test } else { Split::Train };
            let buf = match split {
                Split::Train => &mut train,
                Split::Test => &mut test,
            };
            let text_id = format!("t_c{class:0cw$}_i{item:0iw$}");
            buf.text_ids.push(text_id.clone());
            buf.texts.extend(text.iter().map(|&v| v as f32));
            for k in 0..n_images {
                let image =
                    &a * &latent + gaussian_vector(&mut rng, spec.image_dim, spec.image_noise_sigma);
                let image_id = format!("i_c{class:0cw$}_i{item:0iw$}_{k}");
                buf.image_ids.push(image_id.clone());
                buf.images.extend(image.iter().map(|&v| v as f32));
                buf.pairs.push((image_id.clone(), text_id.clone()));
                truth.push(TruthRow { image_id, text_id: text_id.clone(), class, split });
            }
        }
    }
    Ok(SynthCorpus { train: train.finish(spec)?, test: test.finish(spec)?, truth })
}

/// File names written by [`write_corpus`], in manifest order.
pub const CORPUS_FILES: [&str; 7] = [
    "train_images.emb",
    "train_texts.emb",
    "train_pairs.tsv",
    "test_images.emb",
    "test_texts.emb",
    "test_pairs.tsv",
    "truth.tsv",
];

/// Writes the corpus into `dir` (created if missing) and returns the paths.
///
/// Embeddings are `EMB1`; pairs and ground truth are TSV.
pub fn write_corpus(corpus: &SynthCorpus, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = CORPUS_FILES.iter().map(|f| dir.join(f)).collect();
    for (split, base) in [(&corpus.train, 0), (&corpus.test, 3)] {
        save_embeddings(split.images(), &paths[base], Format::Binary)?;
        save_embeddings(split.texts(), &paths[base + 1], Format::Binary)?;
        save_pairs(split.pairs(), &paths[base + 2])?;
    }
    let mut w = BufWriter::new(File::create(&paths[6])?);
    writeln!(w, "# image_id\ttext_id\tclass\tsplit")?;
    for row in &corpus.truth {
        writeln!(w, "{}\t{}\t{}\t{}", row.image_id, row.text_id, row.class, row.split.as_str())?;
    }
    w.flush()?;
    Ok(paths)
}

/// A synthetic document whose title and body draw on class keywords.
#[derive(Debug, Clone, PartialEq)]
pub struct TitleDoc {
    pub id: String,
    pub class: usize,
    pub title: Vec<String>,
    pub body: Vec<String>,
}

/// Keyword `j` of class `c`.
pub fn class_keyword(class: usize, j: usize) -> String {
    format!("c{class}w{j}")
}

/// Samples `n_docs` documents over `n_classes` keyword vocabularies.
///
/// Titles hold 1 to 4 tokens: 1 to 3 of the class's 4 keywords plus at most
/// one of 20 shared filler words. Bodies hold 6 to 12 tokens drawn from the
/// class keywords (two thirds) and the filler words.
pub fn title_corpus(n_docs: usize, n_classes: usize, seed: u64) -> Vec<TitleDoc> {
    const KEYWORDS: usize = 4;
    const FILLERS: usize = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let filler = |j: usize| format!("common{j}");
    (0..n_docs)
        .map(|d| {
            let class = rng.random_range(0..n_classes.max(1));
            let n_kw = rng.random_range(1..=3);
            let mut title: Vec<String> =
                rand::seq::index::sample(&mut rng, KEYWORDS, n_kw)
                    .into_iter()
                    .map(|j| class_keyword(class, j))
                    .collect();
            if rng.random_bool(0.5) {
                title.push(filler(rng.random_range(0..FILLERS)));
            }
            let body_len = rng.random_range(6..=12);
            let body = (0..body_len)
                .map(|_| {
                    if rng.random_range(0..3) < 2 {
                        class_keyword(class, rng.random_range(0..KEYWORDS))
                    } else {
                        filler(rng.random_range(0..FILLERS))
                    }
                })
                .collect();
            TitleDoc { id: format!("doc{d}"), class, title, body }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecmath::{dot_f32, norm_f32};

    fn small() -> SynthSpec {
        SynthSpec {
            n_classes: 10,
            items_per_class: 10,
            latent_dim: 8,
            image_dim: 12,
            text_dim: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn deterministic_and_split() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.texts().len(), 80);
        assert_eq!(a.test.texts().len(), 20);
        assert_eq!(a.truth.len(), a.train.images().len() + a.test.images().len());
        for t in 0..a.test.texts().len() {
            let n = a.test.images_of_text(t).len();
            assert!((1..=3).contains(&n));
        }
        let c = generate(&SynthSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_noise_identity_pairs_coincide() {
        let spec = SynthSpec {
            latent_dim: 6,
            image_dim: 6,
            text_dim: 6,
            image_noise_sigma: 0.0,
            text_noise_sigma: 0.0,
            maps: Maps::Identity,
            ..small()
        };
        let data = generate(&spec).unwrap();
        for corpus in [&data.train, &data.test] {
            for i in 0..corpus.images().len() {
                assert_eq!(corpus.images().row(i), corpus.texts().row(corpus.text_of_image(i)));
            }
        }
    }

    #[test]
    fn within_class_distances_are_smaller() {
        let spec = SynthSpec { item_spread: 0.3, ..small() };
        let data = generate(&spec).unwrap();
        let imgs = data.train.images();
        let class = |id: &str| id[3..5].to_string();
        let (mut within, mut nw, mut between, mut nb) = (0.0, 0, 0.0, 0);
        for i in 0..imgs.len() {
            for j in i + 1..imgs.len() {
                let d = 1.0
                    - dot_f32(imgs.row(i), imgs.row(j)) / (norm_f32(imgs.row(i)) * norm_f32(imgs.row(j)));
                if class(imgs.id(i)) == class(imgs.id(j)) {
                    within += d;
                    nw += 1;
                } else {
                    between += d;
                    nb += 1;
                }
            }
        }
        assert!(within / nw as f64 + 0.1 < between / nb as f64);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&SynthSpec { items_per_class: 4, ..small() }).is_err());
        assert!(generate(&SynthSpec { image_noise_sigma: -1.0, ..small() }).is_err());
        assert!(generate(&SynthSpec { maps: Maps::Identity, ..small() }).is_err());
        assert!(generate(&SynthSpec { images_per_text: ImagesPerText::Fixed(0), ..small() }).is_err());
    }

    #[test]
    fn write_corpus_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate(&small()).unwrap();
        let paths = write_corpus(&data, dir.path()).unwrap();
        assert_eq!(paths.len(), 7);
        assert!(paths.iter().all(|p| p.exists()));
        let back = crate::embedstore::load_embeddings(&paths[0], Format::Binary).unwrap();
        assert_eq!(&back, data.train.images());
    }

    #[test]
    fn title_corpus_uses_class_keywords() {
        let docs = title_corpus(50, 5, 3);
        assert_eq!(docs, title_corpus(50, 5, 3));
        for d in &docs {
            let prefix = format!("c{}w", d.class);
            assert!(d.title.iter().any(|t| t.starts_with(&prefix)));
            assert!((1..=4).contains(&d.title.len()));
            assert!((6..=12).contains(&d.body.len()));
        }
    }
}
