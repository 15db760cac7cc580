//! Block-factorized token space: schemas, token sequences, one-hot expand
//! embeddings, and per-block views.
//!
//! An architecture is a token per (block, group) pair, read left to right.
//! The expand embedding concatenates a one-hot vector per group; it is the key
//! space for critic inputs and knowledge-pool lookups.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub name: String,
    pub vocab: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub name: String,
    pub groups: Vec<GroupSpec>,
}

/// A flattened view of one token position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatGroup {
    pub block_index: usize,
    /// `<block>.<group>`, unique across the schema.
    pub qualified_name: String,
    pub vocab: usize,
    /// Offset of this group's one-hot slice in the expand embedding.
    pub bit_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceSchema {
    pub blocks: Vec<BlockSpec>,
}

impl SpaceSchema {
    /// The desk-scale default: 4 blocks of {op:4, kernel:3, width:4, skip:2}.
    pub fn default_space() -> Self {
        SpaceSchema {
            blocks: (0..4).map(|i| standard_block(&format!("b{i}"), true)).collect(),
        }
    }

    /// Enumerable variant: 2 blocks x 3 groups of vocab 4 (4096 architectures),
    /// small enough to brute-force.
    pub fn enumerable_space() -> Self {
        SpaceSchema {
            blocks: (0..2)
                .map(|i| BlockSpec {
                    name: format!("b{i}"),
                    groups: ["op", "kernel", "width"]
                        .iter()
                        .map(|g| GroupSpec { name: g.to_string(), vocab: 4 })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Total sequence length T (one token per group).
    pub fn sequence_len(&self) -> usize {
        self.blocks.iter().map(|b| b.groups.len()).sum()
    }

    /// Length of the expand embedding (sum of vocab sizes).
    pub fn embedding_len(&self) -> usize {
        self.blocks.iter().flat_map(|b| &b.groups).map(|g| g.vocab).sum()
    }

    pub fn flat_groups(&self) -> Vec<FlatGroup> {
        let mut out = Vec::with_capacity(self.sequence_len());
        let mut bit_offset = 0;
        for (bi, block) in self.blocks.iter().enumerate() {
            for g in &block.groups {
                out.push(FlatGroup {
                    block_index: bi,
                    qualified_name: format!("{}.{}", block.name, g.name),
                    vocab: g.vocab,
                    bit_offset,
                });
                bit_offset += g.vocab;
            }
        }
        out
    }

    /// Index range of each block in the token sequence.
    pub fn block_token_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut start = 0;
        for b in &self.blocks {
            out.push(start..start + b.groups.len());
            start += b.groups.len();
        }
        out
    }

    /// Index range of each block in the expand embedding.
    pub fn block_bit_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut start = 0;
        for b in &self.blocks {
            let width: usize = b.groups.iter().map(|g| g.vocab).sum();
            out.push(start..start + width);
            start += width;
        }
        out
    }

    /// Search-space size, or None when it overflows u128.
    pub fn cardinality(&self) -> Option<u128> {
        let mut card: u128 = 1;
        for b in &self.blocks {
            for g in &b.groups {
                card = card.checked_mul(g.vocab as u128)?;
            }
        }
        Some(card)
    }

    pub fn validate(&self) -> Result<SchemaInfo> {
        if self.blocks.is_empty() {
            return Err(Error::Schema("schema has zero blocks".to_string()));
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            if b.groups.is_empty() {
                return Err(Error::Schema(format!("block {bi} (`{}`) has no groups", b.name)));
            }
            for (gi, g) in b.groups.iter().enumerate() {
                if g.vocab == 0 {
                    return Err(Error::Schema(format!(
                        "group {gi} (`{}`) of block {bi} (`{}`) has vocab size 0",
                        g.name, b.name
                    )));
                }
            }
        }
        let names: Vec<String> =
            self.flat_groups().into_iter().map(|g| g.qualified_name).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Schema(format!("duplicate group name `{n}`")));
            }
        }
        Ok(SchemaInfo {
            num_blocks: self.num_blocks(),
            sequence_len: self.sequence_len(),
            embedding_len: self.embedding_len(),
            cardinality: self.cardinality(),
        })
    }

    /// Stable 64-bit hash of the schema structure (FNV-1a over a canonical
    /// rendering); used to fence checkpoints and pools to their schema.
    pub fn schema_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for b in &self.blocks {
            eat(b.name.as_bytes());
            eat(&[0xff]);
            for g in &b.groups {
                eat(g.name.as_bytes());
                eat(&[0xfe]);
                eat(&(g.vocab as u64).to_le_bytes());
            }
        }
        h
    }

    /// Uniform random tokens.
    pub fn sample_uniform<R: rand::Rng>(&self, rng: &mut R) -> ArchTokens {
        let tokens = self
            .flat_groups()
            .iter()
            .map(|g| rng.gen_range(0..g.vocab))
            .collect();
        ArchTokens { tokens }
    }

    /// Enumerates every token sequence; only sensible on enumerable schemas.
    pub fn enumerate_all(&self) -> Vec<ArchTokens> {
        let groups = self.flat_groups();
        let mut out = Vec::new();
        let mut tokens = vec![0usize; groups.len()];
        loop {
            out.push(ArchTokens { tokens: tokens.clone() });
            let mut i = groups.len();
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                tokens[i] += 1;
                if tokens[i] < groups[i].vocab {
                    break;
                }
                tokens[i] = 0;
            }
        }
    }
}

fn standard_block(name: &str, with_skip: bool) -> BlockSpec {
    let mut groups = vec![
        GroupSpec { name: "op".to_string(), vocab: 4 },
        GroupSpec { name: "kernel".to_string(), vocab: 3 },
        GroupSpec { name: "width".to_string(), vocab: 4 },
    ];
    if with_skip {
        groups.push(GroupSpec { name: "skip".to_string(), vocab: 2 });
    }
    BlockSpec { name: name.to_string(), groups }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaInfo {
    pub num_blocks: usize,
    pub sequence_len: usize,
    pub embedding_len: usize,
    pub cardinality: Option<u128>,
}

/// Validates a schema and reports its cardinality.
pub fn validate_schema(schema: &SpaceSchema) -> Result<SchemaInfo> {
    schema.validate()
}

/// The action sequence decoding one architecture.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchTokens {
    pub tokens: Vec<usize>,
}

impl ArchTokens {
    pub fn new(tokens: Vec<usize>) -> Self {
        ArchTokens { tokens }
    }

    pub fn validate(&self, schema: &SpaceSchema) -> Result<()> {
        let groups = schema.flat_groups();
        if self.tokens.len() != groups.len() {
            return Err(Error::Schema(format!(
                "token count {} does not match sequence length {}",
                self.tokens.len(),
                groups.len()
            )));
        }
        for (i, (&t, g)) in self.tokens.iter().zip(&groups).enumerate() {
            if t >= g.vocab {
                return Err(Error::Schema(format!(
                    "token {i} (`{}`) is {t}, vocab size is {}",
                    g.qualified_name, g.vocab
                )));
            }
        }
        Ok(())
    }

    /// Dash-joined rendering used by the tabular format, e.g. `2-0-3-1`.
    pub fn dash_string(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }

    pub fn parse_dash(s: &str) -> Result<Self> {
        let tokens = s
            .split('-')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Schema(format!("malformed token string `{s}`")))?;
        Ok(ArchTokens { tokens })
    }
}

/// Concatenated one-hot representation of a token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandEmbedding {
    pub bits: Vec<f64>,
    pub block_slices: Vec<std::ops::Range<usize>>,
}

impl ExpandEmbedding {
    pub fn block(&self, index: usize) -> &[f64] {
        &self.bits[self.block_slices[index].clone()]
    }
}

/// One-hot expansion; exactly one 1 per token group.
pub fn expand(tokens: &ArchTokens, schema: &SpaceSchema) -> Result<ExpandEmbedding> {
    tokens.validate(schema)?;
    let mut bits = vec![0.0; schema.embedding_len()];
    for (&t, g) in tokens.tokens.iter().zip(schema.flat_groups()) {
        bits[g.bit_offset + t] = 1.0;
    }
    Ok(ExpandEmbedding { bits, block_slices: schema.block_bit_ranges() })
}

/// Inverse of [`expand`]; errors if a group slice is not one-hot.
pub fn collapse(embedding: &ExpandEmbedding, schema: &SpaceSchema) -> Result<ArchTokens> {
    let mut tokens = Vec::with_capacity(schema.sequence_len());
    for g in schema.flat_groups() {
        let slice = &embedding.bits[g.bit_offset..g.bit_offset + g.vocab];
        let ones: Vec<usize> = slice
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        match ones.as_slice() {
            [one] if slice[*one] == 1.0 => tokens.push(*one),
            _ => {
                return Err(Error::Schema(format!(
                    "group `{}` slice is not one-hot",
                    g.qualified_name
                )))
            }
        }
    }
    Ok(ArchTokens { tokens })
}

/// The token sub-slice belonging to one block.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockTokens {
    pub block_index: usize,
    pub tokens: Vec<usize>,
}

impl BlockTokens {
    /// One-hot key for this block; the slice of the full expand embedding.
    pub fn key(&self, schema: &SpaceSchema) -> Result<Vec<f64>> {
        let block = schema
            .blocks
            .get(self.block_index)
            .ok_or_else(|| Error::Schema(format!("block index {} out of range", self.block_index)))?;
        if self.tokens.len() != block.groups.len() {
            return Err(Error::Schema(format!(
                "block {} has {} groups, got {} tokens",
                self.block_index,
                block.groups.len(),
                self.tokens.len()
            )));
        }
        let width: usize = block.groups.iter().map(|g| g.vocab).sum();
        let mut bits = vec![0.0; width];
        let mut offset = 0;
        for (&t, g) in self.tokens.iter().zip(&block.groups) {
            if t >= g.vocab {
                return Err(Error::Schema(format!(
                    "token {t} out of range for group `{}`",
                    g.name
                )));
            }
            bits[offset + t] = 1.0;
            offset += g.vocab;
        }
        Ok(bits)
    }
}

/// Splits a token sequence into per-block views.
pub fn split_blocks(tokens: &ArchTokens, schema: &SpaceSchema) -> Result<Vec<BlockTokens>> {
    tokens.validate(schema)?;
    Ok(schema
        .block_token_ranges()
        .into_iter()
        .enumerate()
        .map(|(i, r)| BlockTokens { block_index: i, tokens: tokens.tokens[r].to_vec() })
        .collect())
}

/// Elementwise mean of expand embeddings: the per-operator selection frequency.
pub fn operator_expectation(archs: &[ArchTokens], schema: &SpaceSchema) -> Result<Vec<f64>> {
    if archs.is_empty() {
        return Err(Error::Schema("operator expectation of an empty set".to_string()));
    }
    let mut acc = vec![0.0; schema.embedding_len()];
    for a in archs {
        let e = expand(a, schema)?;
        for (s, b) in acc.iter_mut().zip(&e.bits) {
            *s += b;
        }
    }
    let n = archs.len() as f64;
    for s in acc.iter_mut() {
        *s /= n;
    }
    Ok(acc)
}
