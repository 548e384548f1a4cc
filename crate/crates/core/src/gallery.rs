//! Embedding gallery for zero-shot product classification.
//!
//! Each product is enrolled from one image plus a number of augmented views;
//! every view is stored as a unit embedding. A query is assigned the product
//! owning the single most cosine-similar stored embedding (1-nearest
//! neighbour). Adding a product never touches existing entries, so new
//! products need no retraining.
//!
//! Ties on the best score go to the product enrolled first. Enrollment order
//! is unique per product, so no further tie-break is needed.
//!
//! # File format
//!
//! All integers little-endian:
//!
//! ```text
//! magic  "RKLIPGAL"   8 bytes
//! version u16 = 1
//! dim     u32
//! count   u32         products
//! per product, in enrollment order:
//!   id_len u16, id UTF-8 bytes
//!   n      u32        embeddings
//!   n * dim f32
//! ```

use std::path::Path;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::AugmentationPolicy;
use crate::encoder::ImageEncoder;
use crate::error::{Error, Result};
use crate::tensor::{normalize, EmbeddingVector, ImageTensor};

pub const GALLERY_MAGIC: &[u8; 8] = b"RKLIPGAL";
pub const GALLERY_VERSION: u16 = 1;

/// Tolerance on stored unit norms when reading a gallery file.
const LOAD_NORM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Match {
    pub product_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    dim: usize,
    entries: IndexMap<String, Vec<Vec<f32>>>,
}

/// Similarity between a unit query and a stored embedding.
#[inline]
fn similarity(query: &[f64], stored: &[f32]) -> f64 {
    query.iter().zip(stored).map(|(q, s)| q * *s as f64).sum()
}

impl Gallery {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: IndexMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_embeddings(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    /// Product ids in enrollment order.
    pub fn product_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn embeddings(&self, product_id: &str) -> Option<&[Vec<f32>]> {
        self.entries.get(product_id).map(Vec::as_slice)
    }

    pub fn contains(&self, product_id: &str) -> bool {
        self.entries.contains_key(product_id)
    }

    /// Position of the product in enrollment order.
    pub fn enrollment_order(&self, product_id: &str) -> Option<usize> {
        self.entries.get_index_of(product_id)
    }

    /// Stores unit-normalized copies of `embeddings` under a new product id.
    pub fn enroll_embeddings(&mut self, product_id: &str, embeddings: &[EmbeddingVector]) -> Result<()> {
        if self.entries.contains_key(product_id) {
            return Err(Error::Conflict(format!("product {product_id:?} is already enrolled")));
        }
        if product_id.is_empty() || product_id.len() > u16::MAX as usize {
            return Err(Error::Data(format!("product id must be 1..=65535 bytes, got {}", product_id.len())));
        }
        if embeddings.is_empty() {
            return Err(Error::Empty(format!("no embeddings to enroll for {product_id:?}")));
        }
        let mut stored = Vec::with_capacity(embeddings.len());
        for e in embeddings {
            if e.dim() != self.dim {
                return Err(Error::Shape(format!("embedding has dim {}, gallery has {}", e.dim(), self.dim)));
            }
            stored.push(normalize(e.values())?.into_iter().map(|v| v as f32).collect());
        }
        self.entries.insert(product_id.to_string(), stored);
        Ok(())
    }

    /// Enrolls `image` and `n_augmentations` augmented views of it.
    /// View `k` is `policy.view(k, ..)` drawn from a generator seeded with `seed`.
    pub fn enroll(
        &mut self,
        product_id: &str,
        image: &ImageTensor,
        encoder: &dyn ImageEncoder,
        policy: &AugmentationPolicy,
        n_augmentations: usize,
        seed: u64,
    ) -> Result<()> {
        if self.entries.contains_key(product_id) {
            return Err(Error::Conflict(format!("product {product_id:?} is already enrolled")));
        }
        if encoder.embed_dim() != self.dim {
            return Err(Error::Shape(format!(
                "encoder produces dim {}, gallery has {}",
                encoder.embed_dim(),
                self.dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut embeddings = vec![encoder.encode(image)?];
        for k in 1..=n_augmentations {
            embeddings.push(encoder.encode(&policy.view(k, image, &mut rng))?);
        }
        self.enroll_embeddings(product_id, &embeddings)
    }

    pub fn remove(&mut self, product_id: &str) -> Result<()> {
        self.entries
            .shift_remove(product_id)
            .map(|_| ())
            .ok_or_else(|| Error::NotFound(format!("product {product_id:?} is not enrolled")))
    }

    fn unit_query(&self, query: &EmbeddingVector) -> Result<Vec<f64>> {
        if query.dim() != self.dim {
            return Err(Error::Shape(format!("query has dim {}, gallery has {}", query.dim(), self.dim)));
        }
        normalize(query.values())
    }

    /// Cosine 1-NN over every stored embedding.
    pub fn classify_embedding(&self, query: &EmbeddingVector) -> Result<Match> {
        if self.entries.is_empty() {
            return Err(Error::State("cannot classify against an empty gallery".into()));
        }
        let q = self.unit_query(query)?;
        let mut best: Option<(&str, f64)> = None;
        for (id, embs) in &self.entries {
            for e in embs {
                let s = similarity(&q, e);
                // Strict improvement only: earlier enrollments win ties.
                if best.is_none_or(|(_, best_s)| s > best_s) {
                    best = Some((id, s));
                }
            }
        }
        let (id, score) = best.expect("non-empty gallery");
        Ok(Match { product_id: id.to_string(), score })
    }

    pub fn classify(&self, image: &ImageTensor, encoder: &dyn ImageEncoder) -> Result<Match> {
        if self.entries.is_empty() {
            return Err(Error::State("cannot classify against an empty gallery".into()));
        }
        self.classify_embedding(&encoder.encode(image)?)
    }

    /// Euclidean 1-NN on the same unit vectors. Equivalent to
    /// [`Self::classify_embedding`] up to floating-point rounding, since
    /// `|q - e|^2 = 2 - 2 q·e` for unit vectors. The returned score is the
    /// distance.
    pub fn classify_euclidean(&self, query: &EmbeddingVector) -> Result<Match> {
        if self.entries.is_empty() {
            return Err(Error::State("cannot classify against an empty gallery".into()));
        }
        let q = self.unit_query(query)?;
        let mut best: Option<(&str, f64)> = None;
        for (id, embs) in &self.entries {
            for e in embs {
                let d = q.iter().zip(e).map(|(a, b)| (a - *b as f64).powi(2)).sum::<f64>().sqrt();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((id, d));
                }
            }
        }
        let (id, score) = best.expect("non-empty gallery");
        Ok(Match { product_id: id.to_string(), score })
    }

    /// Similarity of `query` to every stored embedding, as
    /// `(product, embedding index, score)` in storage order.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<(String, usize, f64)>> {
        let q = self.unit_query(query)?;
        let q = &q;
        Ok(self
            .entries
            .iter()
            .flat_map(|(id, embs)| embs.iter().enumerate().map(move |(k, e)| (id.clone(), k, similarity(q, e))))
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(22 + self.num_embeddings() * self.dim * 4);
        out.extend_from_slice(GALLERY_MAGIC);
        out.extend_from_slice(&GALLERY_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (id, embs) in &self.entries {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            out.extend_from_slice(&(embs.len() as u32).to_le_bytes());
            for e in embs {
                for v in e {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        let magic = r.take(8, "magic")?;
        if magic != GALLERY_MAGIC {
            return Err(Error::format(0, format!("bad magic {:?}", String::from_utf8_lossy(magic))));
        }
        let version = r.u16("version")?;
        if version != GALLERY_VERSION {
            return Err(Error::format(8, format!("unsupported gallery version {version}")));
        }
        let dim = r.u32("dim")? as usize;
        if dim == 0 {
            return Err(Error::format(10, "dimension must be positive"));
        }
        let count = r.u32("product count")?;
        let mut gallery = Gallery::new(dim);
        for _ in 0..count {
            let id_offset = r.pos as u64;
            let id_len = r.u16("id length")? as usize;
            let id = std::str::from_utf8(r.take(id_len, "id")?)
                .map_err(|e| Error::format(id_offset + 2, format!("product id is not UTF-8: {e}")))?
                .to_string();
            if id.is_empty() || gallery.entries.contains_key(&id) {
                return Err(Error::format(id_offset, format!("empty or duplicate product id {id:?}")));
            }
            let n_offset = r.pos as u64;
            let n = r.u32("embedding count")? as usize;
            if n == 0 {
                return Err(Error::format(n_offset, format!("product {id:?} has no embeddings")));
            }
            let mut embs = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let e_offset = r.pos as u64;
                let raw = r.take(dim * 4, "embedding values")?;
                let e: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
                let norm = e.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
                if norm.is_nan() || (norm - 1.0).abs() > LOAD_NORM_TOL {
                    return Err(Error::format(e_offset, format!("stored embedding for {id:?} has norm {norm}")));
                }
                embs.push(e);
            }
            gallery.entries.insert(id, embs);
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(gallery)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct ByteReader<'a> {
    pub(crate) bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            )
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Treats the pixels of a 1×dim×1 image as the embedding.
    struct PixelEncoder(usize);

    impl ImageEncoder for PixelEncoder {
        fn embed_dim(&self) -> usize {
            self.0
        }
        fn input_shape(&self) -> (usize, usize, usize) {
            (1, self.0, 1)
        }
        fn encode(&self, image: &ImageTensor) -> Result<EmbeddingVector> {
            EmbeddingVector::new(image.data().iter().map(|v| *v as f64).collect())
        }
    }

    fn emb(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn img(v: &[f32]) -> ImageTensor {
        ImageTensor::new(1, v.len(), 1, v.to_vec()).unwrap()
    }

    fn two_product_gallery() -> Gallery {
        let mut g = Gallery::new(2);
        g.enroll_embeddings("A", &[emb(&[1.0, 0.0])]).unwrap();
        g.enroll_embeddings("B", &[emb(&[0.0, 1.0])]).unwrap();
        g
    }

    #[test]
    fn augmentation_counts() {
        let enc = PixelEncoder(4);
        let policy = AugmentationPolicy::enrollment_default();
        let mut g = Gallery::new(4);
        g.enroll("p0", &img(&[0.1, 0.9, 0.3, 0.2]), &enc, &policy, 0, 1).unwrap();
        g.enroll("p4", &img(&[0.5, 0.1, 0.3, 0.7]), &enc, &policy, 4, 1).unwrap();
        assert_eq!(g.embeddings("p0").unwrap().len(), 1);
        assert_eq!(g.embeddings("p4").unwrap().len(), 5);
    }

    #[test]
    fn identity_augmentation_gives_equal_embeddings() {
        let enc = PixelEncoder(3);
        let mut g = Gallery::new(3);
        g.enroll("p", &img(&[0.2, 0.4, 0.1]), &enc, &AugmentationPolicy::identity(), 3, 0).unwrap();
        let embs = g.embeddings("p").unwrap();
        assert!(embs.iter().all(|e| e == &embs[0]));
    }

    #[test]
    fn duplicate_and_dim_errors() {
        let mut g = two_product_gallery();
        assert!(matches!(g.enroll_embeddings("A", &[emb(&[1.0, 1.0])]), Err(Error::Conflict(_))));
        assert!(matches!(g.enroll_embeddings("C", &[emb(&[1.0, 1.0, 1.0])]), Err(Error::Shape(_))));
        let enc = PixelEncoder(3);
        assert!(matches!(
            g.enroll("C", &img(&[0.1, 0.2, 0.3]), &enc, &AugmentationPolicy::identity(), 0, 0),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn enrollment_leaves_existing_entries_untouched() {
        let mut g = two_product_gallery();
        let before = g.to_bytes();
        g.enroll_embeddings("C", &[emb(&[0.3, -0.7])]).unwrap();
        let after = g.to_bytes();
        assert_eq!(&after[..10], &before[..10]);
        assert_eq!(&after[18..before.len()], &before[18..]);
    }

    #[test]
    fn self_match_scores_one() {
        let enc = PixelEncoder(3);
        let mut g = Gallery::new(3);
        let a = img(&[0.2, 0.4, 0.1]);
        g.enroll("a", &a, &enc, &AugmentationPolicy::identity(), 0, 0).unwrap();
        g.enroll("b", &img(&[0.9, 0.1, 0.1]), &enc, &AugmentationPolicy::identity(), 0, 0).unwrap();
        let m = g.classify(&a, &enc).unwrap();
        assert_eq!(m.product_id, "a");
        assert!((m.score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hand_dot_product() {
        let g = two_product_gallery();
        let m = g.classify_embedding(&emb(&[0.9, 0.1])).unwrap();
        assert_eq!(m.product_id, "A");
        // 0.9 / sqrt(0.82)
        assert!((m.score - 0.993_883_734_673_619_6).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_earliest_enrollment() {
        let mut g = Gallery::new(2);
        g.enroll_embeddings("B", &[emb(&[0.0, 1.0])]).unwrap();
        g.enroll_embeddings("A", &[emb(&[1.0, 0.0])]).unwrap();
        assert_eq!(g.classify_embedding(&emb(&[1.0, 1.0])).unwrap().product_id, "B");
        assert_eq!(two_product_gallery().classify_embedding(&emb(&[1.0, 1.0])).unwrap().product_id, "A");
    }

    #[test]
    fn empty_gallery_is_a_state_error() {
        let g = Gallery::new(2);
        assert!(matches!(g.classify_embedding(&emb(&[1.0, 0.0])), Err(Error::State(_))));
    }

    #[test]
    fn remove_semantics() {
        let mut g = Gallery::new(2);
        g.enroll_embeddings("A", &[emb(&[1.0, 0.0])]).unwrap();
        g.remove("A").unwrap();
        assert!(g.is_empty());
        assert!(matches!(g.remove("A"), Err(Error::NotFound(_))));

        let mut g = two_product_gallery();
        g.remove("B").unwrap();
        assert_eq!(g.classify_embedding(&emb(&[1.0, 0.0])).unwrap().product_id, "A");
    }

    #[test]
    fn euclidean_alias_agrees() {
        let g = two_product_gallery();
        for q in [[0.9, 0.1], [0.2, 0.7], [-1.0, 0.3]] {
            let q = emb(&q);
            assert_eq!(g.classify_embedding(&q).unwrap().product_id, g.classify_euclidean(&q).unwrap().product_id);
        }
    }

    #[test]
    fn byte_round_trip_and_empty() {
        let mut g = two_product_gallery();
        g.enroll_embeddings("ünïcode", &[emb(&[0.3, 0.4]), emb(&[-1.0, 2.0])]).unwrap();
        assert_eq!(Gallery::from_bytes(&g.to_bytes()).unwrap(), g);
        let empty = Gallery::new(16);
        assert_eq!(Gallery::from_bytes(&empty.to_bytes()).unwrap(), empty);
    }

    #[test]
    fn exact_layout() {
        let mut g = Gallery::new(1);
        g.enroll_embeddings("x", &[emb(&[-2.0])]).unwrap();
        let mut expected = b"RKLIPGAL".to_vec();
        expected.extend([1, 0]);
        expected.extend([1, 0, 0, 0]);
        expected.extend([1, 0, 0, 0]);
        expected.extend([1, 0, b'x']);
        expected.extend([1, 0, 0, 0]);
        expected.extend((-1.0f32).to_le_bytes());
        assert_eq!(g.to_bytes(), expected);
    }

    #[test]
    fn corrupt_files() {
        let bytes = two_product_gallery().to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Gallery::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        let err = Gallery::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Format { offset, .. } if offset > 20), "{err}");
        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(Gallery::from_bytes(&bad), Err(Error::Format { offset: 8, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(Gallery::from_bytes(&extra), Err(Error::Format { .. })));
    }
}
