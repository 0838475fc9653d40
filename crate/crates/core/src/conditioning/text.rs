use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// Deterministic stand-in for a text encoder: each whitespace token maps
/// to a fixed Gaussian row keyed by its hash, independent of position.
#[derive(Clone, Debug, PartialEq)]
pub struct TextEmbedding {
    /// `[L_max, D]`, pad rows zero.
    pub data: Tensor<f32>,
    /// `true` for real tokens; pads follow every real token.
    pub mask: Vec<bool>,
}

impl TextEmbedding {
    pub fn token_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// The unpadded rows `[token_count, D]`.
    pub fn tokens(&self) -> Tensor<f32> {
        self.data.slice0(0, self.token_count()).expect("prefix of rows")
    }
}

pub fn token_row(token: &str, dim: usize) -> Vec<f32> {
    let mut r = rng::stream(rng::label("text.token"), &[rng::label(token)]);
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            z as f32
        })
        .collect()
}

/// Whitespace tokens, truncated or padded to `max_len`.
pub fn embed_text(s: &str, max_len: usize, dim: usize) -> Result<TextEmbedding> {
    if max_len == 0 || dim == 0 {
        return Err(Error::Precondition("text embedding needs max_len >= 1 and dim >= 1".into()));
    }
    let tokens: Vec<&str> = s.split_whitespace().take(max_len).collect();
    let mut data = vec![0.0f32; max_len * dim];
    for (i, t) in tokens.iter().enumerate() {
        data[i * dim..(i + 1) * dim].copy_from_slice(&token_row(t, dim));
    }
    let mask = (0..max_len).map(|i| i < tokens.len()).collect();
    Ok(TextEmbedding {
        data: Tensor::new(vec![max_len, dim], data)?,
        mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = embed_text("red square moving right", 8, 16).unwrap();
        let b = embed_text("red square moving right", 8, 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.token_count(), 4);
        assert_eq!(a.tokens().shape(), &[4, 16]);
    }

    #[test]
    fn empty_is_all_pad() {
        let e = embed_text("", 4, 8).unwrap();
        assert_eq!(e.token_count(), 0);
        assert!(e.data.data().iter().all(|&v| v == 0.0));
        assert!(matches!(embed_text("a", 0, 8), Err(Error::Precondition(_))));
    }

    #[test]
    fn one_word_changes_one_row() {
        let a = embed_text("a blue disk moving up", 8, 16).unwrap();
        let b = embed_text("a blue disk moving down", 8, 16).unwrap();
        let differing: Vec<usize> = (0..8)
            .filter(|&i| a.data.data()[i * 16..(i + 1) * 16] != b.data.data()[i * 16..(i + 1) * 16])
            .collect();
        assert_eq!(differing, vec![4]);
    }

    #[test]
    fn truncates() {
        let e = embed_text("a b c d e f", 3, 4).unwrap();
        assert_eq!(e.token_count(), 3);
        assert_eq!(e.data.shape(), &[3, 4]);
    }
}
