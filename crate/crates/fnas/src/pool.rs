//! Architecture knowledge pool: a per-block-position store of trained block
//! checkpoints, keyed by one-hot expand embeddings and queried by cosine
//! similarity with a fuzzy-match threshold.
//!
//! Fairness rule: every checkpoint in the pool was trained for exactly the
//! pool's canonical iteration count; inserts that disagree are rejected.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{BlockTokens, SpaceSchema};

/// One named tensor of a block's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorPayload {
    pub name: String,
    /// Row-major shape; `[n]` or `[rows, cols]`.
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// All parameters of one block.
pub type BlockWeights = Vec<TensorPayload>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCheckpoint {
    /// One-hot expand embedding of the block's tokens.
    pub key: Vec<f64>,
    pub weights: BlockWeights,
    pub train_iterations: u64,
    pub source_task: String,
    pub insert_seq: u64,
}

/// Cosine similarity; 0 when either vector is all-zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Outcome of a fuzzy lookup.
#[derive(Debug, Clone)]
pub struct QueryOutcome<'a> {
    pub best: Option<&'a BlockCheckpoint>,
    pub similarity: f64,
    /// similarity >= the pool's threshold
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockInitOutcome {
    pub matched: bool,
    pub similarity: f64,
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitReport {
    pub per_block: Vec<BlockInitOutcome>,
    pub hit_ratio: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgePool {
    /// Entries grouped by block position.
    positions: Vec<Vec<BlockCheckpoint>>,
    pub canonical_iterations: u64,
    pub tau_sim: f64,
    pub schema_hash: u64,
    next_seq: u64,
}

pub const DEFAULT_TAU_SIM: f64 = 0.6;

impl KnowledgePool {
    pub fn new(schema: &SpaceSchema, canonical_iterations: u64, tau_sim: f64) -> Self {
        KnowledgePool {
            positions: vec![Vec::new(); schema.num_blocks()],
            canonical_iterations,
            tau_sim,
            schema_hash: schema.schema_hash(),
            next_seq: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.iter().map(|p| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn entries_at(&self, position: usize) -> &[BlockCheckpoint] {
        &self.positions[position]
    }

    fn check_schema(&self, schema: &SpaceSchema) -> Result<()> {
        if schema.schema_hash() != self.schema_hash {
            return Err(Error::Transfer(
                "pool schema hash does not match the query schema".to_string(),
            ));
        }
        Ok(())
    }

    /// Stores a block checkpoint. Rejected unless `train_iterations` equals the
    /// pool's canonical count; an exact-key duplicate replaces the older entry.
    pub fn insert(
        &mut self,
        block: &BlockTokens,
        schema: &SpaceSchema,
        weights: BlockWeights,
        train_iterations: u64,
        source_task: &str,
    ) -> Result<()> {
        self.check_schema(schema)?;
        if train_iterations != self.canonical_iterations {
            return Err(Error::Fairness(format!(
                "checkpoint trained for {train_iterations} iterations, pool canon is {}",
                self.canonical_iterations
            )));
        }
        for t in &weights {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric { context: format!("pool insert `{}`", t.name) });
            }
            if t.data.len() != t.shape.iter().product::<usize>() {
                return Err(Error::Dimension {
                    segment: t.name.clone(),
                    expected: t.shape.iter().product(),
                    got: t.data.len(),
                });
            }
        }
        let key = block.key(schema)?;
        let entries = &mut self.positions[block.block_index];
        entries.retain(|e| e.key != key);
        entries.push(BlockCheckpoint {
            key,
            weights,
            train_iterations,
            source_task: source_task.to_string(),
            insert_seq: self.next_seq,
        });
        self.next_seq += 1;
        Ok(())
    }

    /// Highest-cosine entry at the block's position. Equal similarities break
    /// toward the most recent insertion.
    pub fn query(&self, block: &BlockTokens, schema: &SpaceSchema) -> Result<QueryOutcome<'_>> {
        self.check_schema(schema)?;
        let key = block.key(schema)?;
        let entries = &self.positions[block.block_index];
        let mut best: Option<&BlockCheckpoint> = None;
        let mut best_sim = 0.0;
        for e in entries {
            let sim = cosine(&key, &e.key);
            let better = match best {
                None => true,
                Some(b) => sim > best_sim || (sim == best_sim && e.insert_seq > b.insert_seq),
            };
            if better {
                best = Some(e);
                best_sim = sim;
            }
        }
        Ok(QueryOutcome {
            similarity: if best.is_some() { best_sim } else { 0.0 },
            accepted: best.is_some() && best_sim >= self.tau_sim,
            best,
        })
    }

    /// Per-block initialization: matched blocks get the stored weights adapted
    /// onto the fresh template, misses keep the template. The report's hit
    /// ratio is matched / queried.
    pub fn initialize_architecture(
        &self,
        arch: &crate::space::ArchTokens,
        schema: &SpaceSchema,
        templates: Vec<BlockWeights>,
    ) -> Result<(Vec<BlockWeights>, InitReport)> {
        let blocks = crate::space::split_blocks(arch, schema)?;
        if templates.len() != blocks.len() {
            return Err(Error::Dimension {
                segment: "templates".to_string(),
                expected: blocks.len(),
                got: templates.len(),
            });
        }
        let mut out = Vec::with_capacity(blocks.len());
        let mut per_block = Vec::with_capacity(blocks.len());
        let mut matched = 0usize;
        for (block, template) in blocks.iter().zip(templates) {
            let q = self.query(block, schema)?;
            if q.accepted {
                let src = q.best.unwrap();
                out.push(adapt_weights(&src.weights, template));
                per_block.push(BlockInitOutcome {
                    matched: true,
                    similarity: q.similarity,
                    source: Some(format!("{}#{}", src.source_task, src.insert_seq)),
                });
                matched += 1;
            } else {
                out.push(template);
                per_block.push(BlockInitOutcome {
                    matched: false,
                    similarity: q.similarity,
                    source: None,
                });
            }
        }
        let hit_ratio = matched as f64 / blocks.len() as f64;
        Ok((out, InitReport { per_block, hit_ratio }))
    }

    /// Empirical hit ratio over uniformly random block queries.
    pub fn measure_hit_ratio<R: rand::Rng>(
        &self,
        schema: &SpaceSchema,
        queries: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let ranges = schema.block_token_ranges();
        let groups = schema.flat_groups();
        let mut hits = 0usize;
        for _ in 0..queries {
            let pos = rng.gen_range(0..schema.num_blocks());
            let tokens: Vec<usize> =
                ranges[pos].clone().map(|gi| rng.gen_range(0..groups[gi].vocab)).collect();
            let block = BlockTokens { block_index: pos, tokens };
            if self.query(&block, schema)?.accepted {
                hits += 1;
            }
        }
        Ok(hits as f64 / queries as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(POOL_MAGIC)?;
        w.write_all(&self.canonical_iterations.to_le_bytes())?;
        w.write_all(&self.tau_sim.to_le_bytes())?;
        w.write_all(&self.schema_hash.to_le_bytes())?;
        w.write_all(&(self.positions.len() as u16).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for (pos, entries) in self.positions.iter().enumerate() {
            for e in entries {
                let record = encode_record(pos as u16, e);
                w.write_all(&(record.len() as u32).to_le_bytes())?;
                w.write_all(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != POOL_MAGIC {
            return Err(Error::Checkpoint("bad pool magic".to_string()));
        }
        let canonical_iterations = read_u64(&mut r)?;
        let tau_sim = read_f64(&mut r)?;
        let schema_hash = read_u64(&mut r)?;
        let num_positions = read_u16(&mut r)? as usize;
        let count = read_u64(&mut r)?;
        let mut pool = KnowledgePool {
            positions: vec![Vec::new(); num_positions],
            canonical_iterations,
            tau_sim,
            schema_hash,
            next_seq: 0,
        };
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            read_exact(&mut r, &mut buf)?;
            let (pos, entry) = decode_record(&buf)?;
            if pos as usize >= num_positions {
                return Err(Error::Checkpoint(format!("record position {pos} out of range")));
            }
            pool.next_seq = pool.next_seq.max(entry.insert_seq + 1);
            pool.positions[pos as usize].push(entry);
        }
        Ok(pool)
    }
}

/// Most recently inserted among equal-similarity candidates.
pub fn tie_break<'a>(candidates: &[&'a BlockCheckpoint]) -> &'a BlockCheckpoint {
    candidates
        .iter()
        .max_by_key(|c| c.insert_seq)
        .expect("tie_break over empty candidate set")
}

/// Copies the overlapping region of each source tensor onto the template
/// (matched by name, truncating larger dimensions); entries outside the
/// overlap keep the template's fresh initialization.
pub fn adapt_weights(source: &BlockWeights, mut template: BlockWeights) -> BlockWeights {
    for t in template.iter_mut() {
        let Some(s) = source.iter().find(|s| s.name == t.name) else {
            continue;
        };
        match (t.shape.as_slice(), s.shape.as_slice()) {
            ([n], [m]) => {
                let keep = (*n).min(*m);
                t.data[..keep].copy_from_slice(&s.data[..keep]);
            }
            ([tr, tc], [sr, sc]) => {
                let rows = (*tr).min(*sr);
                let cols = (*tc).min(*sc);
                for r in 0..rows {
                    t.data[r * tc..r * tc + cols].copy_from_slice(&s.data[r * sc..r * sc + cols]);
                }
            }
            _ => {}
        }
    }
    template
}

const POOL_MAGIC: &[u8; 8] = b"FNASAKP1";

fn encode_record(pos: u16, e: &BlockCheckpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&pos.to_le_bytes());
    out.extend_from_slice(&(e.key.len() as u32).to_le_bytes());
    for v in &e.key {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(e.weights.len() as u16).to_le_bytes());
    for t in &e.weights {
        let name = t.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(t.data.len() as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let task = e.source_task.as_bytes();
    out.extend_from_slice(&(task.len() as u16).to_le_bytes());
    out.extend_from_slice(task);
    out.extend_from_slice(&e.insert_seq.to_le_bytes());
    out.extend_from_slice(&e.train_iterations.to_le_bytes());
    out
}

fn decode_record(buf: &[u8]) -> Result<(u16, BlockCheckpoint)> {
    let mut r = std::io::Cursor::new(buf);
    let pos = read_u16(&mut r)?;
    let key_len = read_u32(&mut r)? as usize;
    let mut key = Vec::with_capacity(key_len);
    for _ in 0..key_len {
        key.push(read_f64(&mut r)?);
    }
    let n_tensors = read_u16(&mut r)? as usize;
    let mut weights = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let name_len = read_u16(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".to_string()))?;
        let rank = {
            let mut b = [0u8; 1];
            read_exact(&mut r, &mut b)?;
            b[0] as usize
        };
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let data_len = read_u32(&mut r)? as usize;
        let mut data = Vec::with_capacity(data_len);
        for _ in 0..data_len {
            data.push(read_f64(&mut r)?);
        }
        weights.push(TensorPayload { name, shape, data });
    }
    let task_len = read_u16(&mut r)? as usize;
    let mut task = vec![0u8; task_len];
    read_exact(&mut r, &mut task)?;
    let source_task = String::from_utf8(task)
        .map_err(|_| Error::Checkpoint("task name is not utf-8".to_string()))?;
    let insert_seq = read_u64(&mut r)?;
    let train_iterations = read_u64(&mut r)?;
    Ok((pos, BlockCheckpoint { key, weights, train_iterations, source_task, insert_seq }))
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("pool file truncated".to_string()))
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
