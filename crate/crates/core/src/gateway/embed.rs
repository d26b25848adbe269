use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, EmbeddingBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionEmbedding {
    pub vector: Vec<f64>,
    pub unit_norm: bool,
}

impl QuestionEmbedding {
    pub fn new(vector: Vec<f64>) -> Self {
        let norm = l2(&vector);
        Self {
            unit_norm: (norm - 1.0).abs() < 1e-9,
            vector,
        }
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn norm(&self) -> f64 {
        l2(&self.vector)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Offline embedder: each text seeds a ChaCha stream from its SHA-256 digest
/// and draws a vector uniformly from the cube, then normalizes it.
///
/// The vectors carry no semantics; they only give ranking a deterministic,
/// reproducible input.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let seed: [u8; 32] = Sha256::digest(text.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        loop {
            let v: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = l2(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

impl EmbeddingBackend for HashEmbedder {
    fn embed_batch(&self, _model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn is_local(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_vectors_of_configured_dimension() {
        let e = HashEmbedder::new(24);
        for i in 0..50 {
            let v = QuestionEmbedding::new(e.embed_one(&format!("question {i}")));
            assert_eq!(v.dim(), 24);
            assert!((v.norm() - 1.0).abs() < 1e-9);
            assert!(v.unit_norm);
        }
    }

    #[test]
    fn same_text_same_vector_different_text_differs() {
        let e = HashEmbedder::new(8);
        assert_eq!(e.embed_one("why"), e.embed_one("why"));
        assert_ne!(e.embed_one("why"), e.embed_one("why not"));
    }
}
