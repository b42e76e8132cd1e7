//! Transcript channel: word embeddings, parallel n-gram convolutions with
//! max-over-time pooling, a sentence-mean clip encoding and a sigmoid head.

use std::borrow::Cow;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audio::dense;
use crate::autograd::{ConvIds, DenseIds, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::traits::NUM_TRAITS;

/// Sentences of lowercased, punctuation-free tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    pub sentences: Vec<Vec<String>>,
}

impl Transcript {
    pub fn new(sentences: Vec<Vec<String>>) -> Result<Self> {
        let sentences: Vec<Vec<String>> = sentences.into_iter().filter(|s| !s.is_empty()).collect();
        if sentences.is_empty() {
            return Err(Error::EmptyTranscript);
        }
        if sentences.iter().flatten().any(String::is_empty) {
            return Err(Error::InvalidParameter("transcript contains an empty token".into()));
        }
        Ok(Transcript { sentences })
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Splits raw text on `.`, `!` and `?`, lowercases, and keeps only
/// alphanumeric runs (apostrophes survive between two alphanumerics).
pub fn normalize_text(raw: &str) -> Result<Transcript> {
    let mut sentences = Vec::new();
    for chunk in raw.split(['.', '!', '?']) {
        let chars: Vec<char> = chunk.chars().map(|c| if c == '\u{2019}' { '\'' } else { c }).collect();
        let mut cleaned = String::with_capacity(chunk.len());
        for (i, &c) in chars.iter().enumerate() {
            let keep = c.is_alphanumeric()
                || (c == '\''
                    && i > 0
                    && chars[i - 1].is_alphanumeric()
                    && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric()));
            if keep {
                cleaned.extend(c.to_lowercase());
            } else {
                cleaned.push(' ');
            }
        }
        let tokens: Vec<String> = cleaned.split_whitespace().map(str::to_string).collect();
        if !tokens.is_empty() {
            sentences.push(tokens);
        }
    }
    Transcript::new(sentences)
}

#[derive(Debug, Clone)]
enum Vectors {
    Table(HashMap<String, Vec<f64>>),
    /// Every token maps to a pseudo-random vector derived from
    /// `sha256(seed ‖ token)`; no token is ever out of vocabulary.
    Hashed { seed: u64 },
}

/// Read-only token → vector map.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: Vectors,
    oov: Vec<f64>,
}

impl EmbeddingTable {
    /// Table with a zero out-of-vocabulary vector.
    pub fn from_map(dim: usize, map: HashMap<String, Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dimension must be positive".into()));
        }
        if let Some((tok, v)) = map.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Dimension(format!(
                "embedding for `{tok}` has {} values, expected {dim}",
                v.len()
            )));
        }
        Ok(EmbeddingTable {
            dim,
            vectors: Vectors::Table(map),
            oov: vec![0.0; dim],
        })
    }

    pub fn hashed(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingTable {
            dim,
            vectors: Vectors::Hashed { seed },
            oov: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_len(&self) -> Option<usize> {
        match &self.vectors {
            Vectors::Table(m) => Some(m.len()),
            Vectors::Hashed { .. } => None,
        }
    }

    pub fn oov_vector(&self) -> &[f64] {
        &self.oov
    }

    pub fn contains(&self, token: &str) -> bool {
        match &self.vectors {
            Vectors::Table(m) => m.contains_key(token),
            Vectors::Hashed { .. } => true,
        }
    }

    pub fn lookup(&self, token: &str) -> Cow<'_, [f64]> {
        match &self.vectors {
            Vectors::Table(m) => Cow::Borrowed(m.get(token).map_or(self.oov.as_slice(), Vec::as_slice)),
            Vectors::Hashed { seed } => Cow::Owned(hashed_vector(*seed, token, self.dim)),
        }
    }
}

pub fn hashed_vector(seed: u64, token: &str, dim: usize) -> Vec<f64> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(token.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect()
}

/// `[n, dim]` matrix of the token vectors, in sentence order.
pub fn embed_sentence(tokens: &[String], table: &EmbeddingTable) -> Result<Tensor> {
    if tokens.is_empty() {
        return Err(Error::EmptyTranscript);
    }
    let mut data = Vec::with_capacity(tokens.len() * table.dim());
    for t in tokens {
        data.extend_from_slice(&table.lookup(t));
    }
    Tensor::new(vec![tokens.len(), table.dim()], data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextChannelConfig {
    pub embedding_dim: usize,
    pub window_widths: Vec<usize>,
    pub filters_per_width: usize,
    pub dropout_p: f64,
    pub penultimate_dim: usize,
}

impl Default for TextChannelConfig {
    fn default() -> Self {
        TextChannelConfig {
            embedding_dim: 300,
            window_widths: vec![3, 4, 5],
            filters_per_width: 128,
            dropout_p: 0.5,
            penultimate_dim: 64,
        }
    }
}

impl TextChannelConfig {
    pub fn desk() -> Self {
        TextChannelConfig {
            embedding_dim: 32,
            filters_per_width: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut widths = self.window_widths.clone();
        widths.sort_unstable();
        widths.dedup();
        if widths.len() != self.window_widths.len() || widths.is_empty() || widths[0] == 0 {
            return Err(Error::InvalidParameter(format!(
                "window widths must be positive and distinct: {:?}",
                self.window_widths
            )));
        }
        if self.embedding_dim == 0 || self.filters_per_width == 0 || self.penultimate_dim == 0 {
            return Err(Error::InvalidParameter("text dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidParameter(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        Ok(())
    }

    pub fn max_width(&self) -> usize {
        self.window_widths.iter().copied().max().unwrap_or(1)
    }

    pub fn encoding_dim(&self) -> usize {
        self.window_widths.len() * self.filters_per_width
    }
}

#[derive(Debug, Clone)]
pub struct TextChannel {
    pub config: TextChannelConfig,
    convs: Vec<ConvIds>,
    penultimate: DenseIds,
    head: Option<DenseIds>,
}

pub struct TextOutputs {
    pub encoding: Var,
    pub penultimate: Var,
    pub traits: Option<Var>,
}

const PREFIX: &str = "text";

impl TextChannel {
    fn kernel_shape(config: &TextChannelConfig, width: usize) -> [usize; 3] {
        [config.filters_per_width, config.embedding_dim, width]
    }

    pub fn init<R: Rng + ?Sized>(config: TextChannelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::new();
        for &w in &config.window_widths {
            let shape = Self::kernel_shape(&config, w);
            convs.push(ConvIds::init(store, &format!("{PREFIX}.conv_w{w}"), &shape, false, rng)?);
        }
        let penultimate = DenseIds::init(
            store,
            &format!("{PREFIX}.fc"),
            config.encoding_dim(),
            config.penultimate_dim,
            false,
            rng,
        )?;
        let head = DenseIds::init(
            store,
            &format!("{PREFIX}.head"),
            config.penultimate_dim,
            NUM_TRAITS,
            false,
            rng,
        )?;
        Ok(TextChannel {
            config,
            convs,
            penultimate,
            head: Some(head),
        })
    }

    pub fn bind(config: TextChannelConfig, store: &ParamStore, with_head: bool) -> Result<Self> {
        config.validate()?;
        let convs = config
            .window_widths
            .iter()
            .map(|&w| ConvIds::bind(store, &format!("{PREFIX}.conv_w{w}"), &Self::kernel_shape(&config, w)))
            .collect::<Result<Vec<_>>>()?;
        let penultimate = DenseIds::bind(
            store,
            &format!("{PREFIX}.fc"),
            config.encoding_dim(),
            config.penultimate_dim,
        )?;
        let head = if with_head {
            Some(DenseIds::bind(
                store,
                &format!("{PREFIX}.head"),
                config.penultimate_dim,
                NUM_TRAITS,
            )?)
        } else {
            None
        };
        Ok(TextChannel {
            config,
            convs,
            penultimate,
            head,
        })
    }

    pub fn head_prefix() -> String {
        format!("{PREFIX}.head")
    }

    /// Turns an `[n, dim]` sentence matrix into the `[dim, max(n, w_max)]`
    /// conv input, zero-padding short sentences at the end.
    pub fn sentence_input(&self, matrix: &Tensor) -> Result<Tensor> {
        let &[n, dim] = matrix.shape() else {
            return Err(Error::Dimension(format!(
                "sentence matrix must be [n, dim], got {:?}",
                matrix.shape()
            )));
        };
        if dim != self.config.embedding_dim {
            return Err(Error::Dimension(format!(
                "embedding dimension {dim} does not match channel dimension {}",
                self.config.embedding_dim
            )));
        }
        let len = n.max(self.config.max_width());
        let mut data = vec![0.0; dim * len];
        for t in 0..n {
            for d in 0..dim {
                data[d * len + t] = matrix.data()[t * dim + d];
            }
        }
        Tensor::new(vec![dim, len], data)
    }

    /// Pooled n-gram features of one sentence: `[filters · widths]`.
    pub fn sentence_encoding(&self, g: &mut Graph<'_>, input: Var) -> Result<Var> {
        let mut pools = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let k = g.param(conv.kernels);
            let b = g.param(conv.bias);
            let y = g.conv1d(input, k, b, 1)?;
            let y = g.relu(y);
            pools.push(g.max_over_time(y)?);
        }
        g.concat(&pools)
    }

    /// Forward pass over prepared sentence inputs (see [`Self::sentence_input`]).
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        sentences: &[Tensor],
        training: bool,
        rng: &mut R,
    ) -> Result<TextOutputs> {
        if sentences.is_empty() {
            return Err(Error::EmptyTranscript);
        }
        let mut encodings = Vec::with_capacity(sentences.len());
        for s in sentences {
            let x = g.constant(s.clone());
            encodings.push(self.sentence_encoding(g, x)?);
        }
        let encoding = g.mean(&encodings)?;
        let dropped = g.dropout(encoding, self.config.dropout_p, training, rng)?;
        let penultimate = dense(g, &self.penultimate, dropped)?;
        let penultimate = g.relu(penultimate);
        let traits = match &self.head {
            Some(head) => {
                let z = dense(g, head, penultimate)?;
                Some(g.sigmoid(z))
            }
            None => None,
        };
        Ok(TextOutputs {
            encoding,
            penultimate,
            traits,
        })
    }
}
