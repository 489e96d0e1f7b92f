use std::hash::Hasher;

use fnv::FnvHasher;

use super::EmbeddingError;

/// Offline embedder: word tokens and character 3-grams of the lowercased
/// text are counted into `dim` buckets by FNV-1a hash, then L2-normalized.
/// Output depends only on the text bytes, so it is identical across
/// processes and platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedEmbedder {
    dim: usize,
}

fn bucket(kind: u8, feature: &str, dim: usize) -> usize {
    let mut h = FnvHasher::default();
    h.write(&[kind]);
    h.write(feature.as_bytes());
    (h.finish() % dim as u64) as usize
}

impl HashedEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, EmbeddingError> {
        let normalized = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        if normalized.is_empty() {
            return Err(EmbeddingError::Parameter("empty text".into()));
        }
        let mut v = vec![0.0f64; self.dim];
        for token in normalized.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            v[bucket(b'w', token, self.dim)] += 1.0;
        }
        let chars: Vec<char> = format!(" {normalized} ").chars().collect();
        let mut gram = String::with_capacity(12);
        for w in chars.windows(3) {
            gram.clear();
            gram.extend(w);
            v[bucket(b'c', &gram, self.dim)] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frozen_buckets() {
        // FNV-1a of [b'w', b'm', b'o', b'u', b's', b'e'] folded into 3072 buckets.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in b"wmouse" {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x100000001b3);
        }
        assert_eq!(bucket(b'w', "mouse", 3072), (h % 3072) as usize);
    }

    #[test]
    fn whitespace_and_case_do_not_matter() {
        let e = HashedEmbedder::new(64);
        assert_eq!(e.embed("Mouse  is\tresting").unwrap(), e.embed("mouse is resting").unwrap());
    }

    proptest! {
        #[test]
        fn unit_norm_and_deterministic(text in "\\PC{1,80}") {
            prop_assume!(!text.trim().is_empty());
            let e = HashedEmbedder::new(128);
            let a = e.embed(&text).unwrap();
            let b = e.embed(&text).unwrap();
            prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }
}
