//! Visual, semantic and spatial token sets with their prototypes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UmcfError};
use crate::field::{block_pool, dot, l2_normalize, pairwise_mean, BlockRegion, UnitVector, VoxelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Semantic,
    Spatial,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Semantic => "semantic",
            Modality::Spatial => "spatial",
        }
    }
}

/// Ordered unit-norm tokens of one modality and their normalized mean.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSet {
    modality: Modality,
    dim: usize,
    tokens: Vec<UnitVector>,
    labels: Vec<String>,
    /// Source block of each visual token; empty for other modalities.
    regions: Vec<BlockRegion>,
    prototype: UnitVector,
}

impl TokenSet {
    /// Normalizes `vectors` and computes the prototype. Labels default to
    /// the token index when `labels` is empty.
    pub fn from_vectors(
        modality: Modality,
        dim: usize,
        vectors: &[Vec<f64>],
        labels: Vec<String>,
    ) -> Result<Self> {
        let tokens = vectors
            .iter()
            .map(|v| {
                if v.len() != dim {
                    return Err(UmcfError::mismatch(format!(
                        "{} token has dim {}, expected {dim}",
                        modality.as_str(),
                        v.len()
                    )));
                }
                l2_normalize(v)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_unit(modality, dim, tokens, labels)
    }

    pub fn from_unit(
        modality: Modality,
        dim: usize,
        tokens: Vec<UnitVector>,
        labels: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(UmcfError::invalid("token dim must be >= 1"));
        }
        if let Some(t) = tokens.iter().find(|t| t.dim() != dim) {
            return Err(UmcfError::mismatch(format!(
                "token dim {} differs from set dim {dim}",
                t.dim()
            )));
        }
        let labels = if labels.is_empty() {
            (0..tokens.len()).map(|i| i.to_string()).collect()
        } else if labels.len() != tokens.len() {
            return Err(UmcfError::mismatch(format!(
                "{} labels for {} tokens",
                labels.len(),
                tokens.len()
            )));
        } else {
            labels
        };
        let prototype = prototype_of(dim, &tokens)?;
        Ok(Self {
            modality,
            dim,
            tokens,
            labels,
            regions: Vec::new(),
            prototype,
        })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[UnitVector] {
        &self.tokens
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn regions(&self) -> &[BlockRegion] {
        &self.regions
    }

    pub fn prototype(&self) -> &UnitVector {
        &self.prototype
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `l2_normalize` of the mean over non-degenerate tokens.
fn prototype_of(dim: usize, tokens: &[UnitVector]) -> Result<UnitVector> {
    let live: Vec<&UnitVector> = tokens.iter().filter(|t| !t.is_degenerate()).collect();
    if live.is_empty() {
        return Ok(UnitVector::zero(dim));
    }
    let mean: Vec<f64> = (0..dim)
        .map(|c| {
            let column: Vec<f64> = live.iter().map(|t| t.values()[c]).collect();
            pairwise_mean(&column)
        })
        .collect();
    l2_normalize(&mean)
}

/// Word vectors of one clinical phrase, already encoded upstream.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseEmbedding {
    pub phrase: String,
    pub word_vectors: Vec<Vec<f64>>,
}

impl PhraseEmbedding {
    pub fn pooled(&self) -> Result<Vec<f64>> {
        let first = self.word_vectors.first().ok_or_else(|| {
            UmcfError::invalid(format!("phrase {:?} has no word vectors", self.phrase))
        })?;
        let dim = first.len();
        if self.word_vectors.iter().any(|w| w.len() != dim) {
            return Err(UmcfError::mismatch(format!(
                "phrase {:?} mixes word-vector dims",
                self.phrase
            )));
        }
        Ok((0..dim)
            .map(|c| {
                let column: Vec<f64> = self.word_vectors.iter().map(|w| w[c]).collect();
                pairwise_mean(&column)
            })
            .collect())
    }
}

pub fn build_visual_tokens(features: &VoxelGrid, block: usize, dim: usize) -> Result<TokenSet> {
    if features.channels() != dim {
        return Err(UmcfError::mismatch(format!(
            "feature grid has {} channels, expected {dim}",
            features.channels()
        )));
    }
    let blocks = block_pool(features, block)?;
    let mut regions = Vec::with_capacity(blocks.len());
    let mut tokens = Vec::with_capacity(blocks.len());
    let mut labels = Vec::with_capacity(blocks.len());
    for b in blocks {
        tokens.push(l2_normalize(&b.mean)?);
        regions.push(b.region);
        labels.push(format!("block-{}-{}-{}", b.index[0], b.index[1], b.index[2]));
    }
    let mut set = TokenSet::from_unit(Modality::Visual, dim, tokens, labels)?;
    set.regions = regions;
    Ok(set)
}

pub fn build_semantic_tokens(phrases: &[PhraseEmbedding]) -> Result<TokenSet> {
    let first = phrases.first().ok_or_else(|| {
        UmcfError::invalid("no semantic phrases; disable the semantic stream explicitly instead")
    })?;
    let pooled = phrases
        .iter()
        .map(PhraseEmbedding::pooled)
        .collect::<Result<Vec<_>>>()?;
    let dim = pooled[0].len();
    if pooled.iter().any(|p| p.len() != dim) {
        return Err(UmcfError::mismatch(format!(
            "semantic phrases disagree on dim (first phrase {:?} has {dim})",
            first.phrase
        )));
    }
    let labels = phrases.iter().map(|p| p.phrase.clone()).collect();
    TokenSet::from_vectors(Modality::Semantic, dim, &pooled, labels)
}

/// Output of [`project_embeddings`].
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub vectors: Vec<Vec<f64>>,
    /// Set when the target dim exceeded the source dim and vectors were
    /// zero-padded instead of projected.
    pub padded: bool,
}

/// Maps `raw` vectors to `target_dim` with a fixed seeded projection whose
/// rows are orthonormal, scaled by `sqrt(d_text / d)` so inner products are
/// preserved in expectation.
pub fn project_embeddings(raw: &[Vec<f64>], target_dim: usize, seed: u64) -> Result<Projection> {
    if target_dim == 0 {
        return Err(UmcfError::invalid("projection target dim must be >= 1"));
    }
    let Some(first) = raw.first() else {
        return Ok(Projection {
            vectors: Vec::new(),
            padded: false,
        });
    };
    let source_dim = first.len();
    if source_dim == 0 {
        return Err(UmcfError::invalid("projection source dim must be >= 1"));
    }
    if raw.iter().any(|v| v.len() != source_dim) {
        return Err(UmcfError::mismatch("projection inputs disagree on dim"));
    }
    if source_dim == target_dim {
        return Ok(Projection {
            vectors: raw.to_vec(),
            padded: false,
        });
    }
    if target_dim > source_dim {
        let vectors = raw
            .iter()
            .map(|v| {
                let mut out = v.clone();
                out.resize(target_dim, 0.0);
                out
            })
            .collect();
        return Ok(Projection {
            vectors,
            padded: true,
        });
    }
    let rows = orthonormal_rows(target_dim, source_dim, seed);
    let scale = (source_dim as f64 / target_dim as f64).sqrt();
    let vectors = raw
        .iter()
        .map(|v| rows.iter().map(|r| scale * dot(r, v)).collect())
        .collect();
    Ok(Projection {
        vectors,
        padded: false,
    })
}

/// `count` orthonormal rows of length `len` (requires `count <= len`), from
/// modified Gram-Schmidt over seeded uniform draws in [-1, 1).
fn orthonormal_rows(count: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    debug_assert!(count <= len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    while rows.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        for r in &rows {
            let p = dot(r, &v);
            for (x, y) in v.iter_mut().zip(r) {
                *x -= p * y;
            }
        }
        let norm = dot(&v, &v).sqrt();
        // redraw on (vanishingly unlikely) near-dependence
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    rows
}
