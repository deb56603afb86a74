//! Word embedding table with a deterministic out-of-vocabulary policy.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::RwLock;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelError;

/// Fixed-dimension word vectors. Unknown tokens get a hash-seeded random
/// unit vector, cached so a token always maps to the same vector within and
/// across runs with the same seed.
#[derive(Debug)]
pub struct EmbeddingTable {
    dimension: usize,
    vectors: HashMap<String, Array1<f64>>,
    oov_seed: u64,
    oov_cache: RwLock<HashMap<String, Array1<f64>>>,
}

impl EmbeddingTable {
    pub fn new(dimension: usize, vectors: HashMap<String, Array1<f64>>, oov_seed: u64) -> Self {
        Self { dimension, vectors, oov_seed, oov_cache: RwLock::new(HashMap::new()) }
    }

    /// A table with no pre-trained vocabulary: every token resolves through
    /// the deterministic OOV policy. Degrades quality but keeps the whole
    /// pipeline runnable without an embedding file.
    pub fn random(dimension: usize, seed: u64) -> Self {
        Self::new(dimension, HashMap::new(), seed)
    }

    /// Load the plain-text format: one line per word, `word v1 v2 ... vd`.
    /// The first line fixes the dimension.
    pub fn load(path: &Path, oov_seed: u64) -> Result<Self, ModelError> {
        let file = File::open(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut vectors = HashMap::new();
        let mut dimension = 0usize;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| ModelError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts
                .next()
                .ok_or_else(|| ModelError::BadEmbedding { line: i + 1 })?
                .to_string();
            let values: Vec<f64> = parts
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| ModelError::BadEmbedding { line: i + 1 })?;
            if values.is_empty() || (dimension != 0 && values.len() != dimension) {
                return Err(ModelError::BadEmbedding { line: i + 1 });
            }
            dimension = values.len();
            vectors.insert(word, Array1::from(values));
        }
        if vectors.is_empty() {
            return Err(ModelError::BadEmbedding { line: 0 });
        }
        Ok(Self::new(dimension, vectors, oov_seed))
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// Vector for a token; unknown tokens fall back to the OOV policy.
    pub fn vector(&self, token: &str) -> Array1<f64> {
        if let Some(v) = self.vectors.get(token) {
            return v.clone();
        }
        if let Some(v) = self.oov_cache.read().expect("cache poisoned").get(token) {
            return v.clone();
        }
        let v = self.oov_vector(token);
        self.oov_cache
            .write()
            .expect("cache poisoned")
            .insert(token.to_string(), v.clone());
        v
    }

    /// Deterministic unit vector seeded by (table seed, token bytes).
    fn oov_vector(&self, token: &str) -> Array1<f64> {
        let mut rng =
            ChaCha8Rng::seed_from_u64(crate::text::stable_hash(self.oov_seed, token.as_bytes()));
        let mut v: Array1<f64> =
            Array1::from_iter((0..self.dimension).map(|_| rng.random_range(-1.0..1.0)));
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 {
            v /= norm;
        }
        v
    }

    /// Unweighted mean of the tokens' vectors. Errors on an empty list.
    pub fn mean_vector(&self, tokens: &[String]) -> Result<Array1<f64>, ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyTokenList);
        }
        let mut sum = Array1::zeros(self.dimension);
        for token in tokens {
            sum += &self.vector(token);
        }
        Ok(sum / tokens.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write as _;

    #[test]
    fn oov_vectors_are_reproducible_and_unit_length() {
        let a = EmbeddingTable::random(16, 7);
        let b = EmbeddingTable::random(16, 7);
        let va = a.vector("novelword");
        let vb = b.vector("novelword");
        assert_eq!(va, vb, "same seed, same token, bit-identical vector");
        assert_abs_diff_eq!(va.dot(&va).sqrt(), 1.0, epsilon = 1e-12);

        let c = EmbeddingTable::random(16, 8);
        assert_ne!(va, c.vector("novelword"), "different seed differs");
        assert_ne!(va, a.vector("otherword"), "different token differs");
    }

    #[test]
    fn cached_oov_is_same_as_first_call() {
        let table = EmbeddingTable::random(8, 1);
        let first = table.vector("x");
        let second = table.vector("x");
        assert_eq!(first, second);
    }

    #[test]
    fn mean_vector_averages() {
        let mut vectors = HashMap::new();
        vectors.insert("a".to_string(), Array1::from(vec![1.0, 0.0]));
        vectors.insert("b".to_string(), Array1::from(vec![0.0, 1.0]));
        let table = EmbeddingTable::new(2, vectors, 0);
        let mean = table.mean_vector(&["a".to_string(), "b".to_string()]).unwrap();
        assert_eq!(mean, Array1::from(vec![0.5, 0.5]));
        assert!(table.mean_vector(&[]).is_err());
    }

    #[test]
    fn loads_text_format() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "pain 0.1 0.2 0.3").unwrap();
        writeln!(f, "knee -1 0 1").unwrap();
        let table = EmbeddingTable::load(f.path(), 0).unwrap();
        assert_eq!(table.dimension(), 3);
        assert!(table.contains("pain"));
        assert_eq!(table.vector("knee"), Array1::from(vec![-1.0, 0.0, 1.0]));

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "pain 0.1 0.2").unwrap();
        writeln!(bad, "knee 0.1").unwrap();
        assert!(EmbeddingTable::load(bad.path(), 0).is_err());
    }
}
