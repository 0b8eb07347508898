//! Reference forward pass of the pose-conditioned memory retriever and the
//! memory-conditioned cross-attention injection, at toy scale with
//! deterministic initialization.
//!
//! Per time step, a pose token and its memory tokens are embedded into a
//! joint sequence, refined by a per-entry encoder stack, and concatenated
//! across time into the encoded memory. A query sequence (embedded query
//! pose + learnable query tokens) cross-attends into that memory; the rows
//! corresponding to the learnable queries are the retrieved world tokens.
//! A linear head maps world tokens back to memory space, and a separate
//! residual cross-attention injects them into a latent token sequence.
//!
//! Everything is a pure function of (parameters, inputs); parameters are a
//! pure function of the seed. No training happens here: the kernel exists
//! for shape and invariant verification.

mod nn;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::pose::CameraPose;
use nn::{Attention, Block, Linear};

/// Production-scale reference dimensions, kept for documentation; the kernel
/// itself runs at the toy dimensions in [`RetrieverDims::default`].
pub mod full_scale {
    /// Memory tokens per frame: four encoder layers of 782 tokens each.
    pub const MEMORY_TOKENS_PER_FRAME: usize = 4 * 782;
    /// Width of a single memory token.
    pub const MEMORY_DIM: usize = 1024;
    /// Hidden width of the video generator the world tokens condition.
    pub const HIDDEN_DIM: usize = 3072;
}

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("memory bank is empty")]
    EmptyMemory,
    #[error("all memory positions are masked")]
    NoValidMemory,
}

/// Kernel dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrieverDims {
    /// Pose token width (a flattened 3x4 pose).
    pub d_pose: usize,
    /// Memory token width.
    pub d_mem: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Blocks per encoder stack.
    pub n_blocks: usize,
    /// Learnable query tokens (world tokens per query).
    pub m_query: usize,
    /// Memory tokens per bank entry.
    pub m_mem: usize,
    /// Latent width of the injection target.
    pub d_hidden: usize,
}

impl Default for RetrieverDims {
    fn default() -> Self {
        Self {
            d_pose: 12,
            d_mem: 16,
            d_model: 64,
            n_heads: 4,
            n_blocks: 2,
            m_query: 8,
            m_mem: 8,
            d_hidden: 96,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetrieverConfig {
    pub dims: RetrieverDims,
    /// Start all attention/FFN output projections at zero, making every
    /// residual block the identity (the initial-state convention).
    pub zero_output_projections: bool,
    /// Add the pose/time positional encoding to memory entries and the
    /// query pose row. Disable to obtain time-permutation invariance.
    pub positional_encoding: bool,
}

impl Default for RetrieverConfig {
    fn default() -> Self {
        Self {
            dims: RetrieverDims::default(),
            zero_output_projections: true,
            positional_encoding: true,
        }
    }
}

/// One time step of the memory bank.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub time_step: i64,
    /// Flattened world-to-camera pose, length `d_pose`.
    pub pose_token: Vec<f64>,
    /// `m_mem x d_mem`.
    pub memory_tokens: DMatrix<f64>,
}

/// Ordered memory entries plus a per-token validity mask over the joint
/// sequences (entry count x (1 + m_mem) bits; the pose token is position 0
/// of each entry).
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub entries: Vec<MemoryEntry>,
    pub mask: Vec<bool>,
}

impl MemoryBank {
    pub fn new(entries: Vec<MemoryEntry>) -> Result<Self, RetrieverError> {
        let per_entry = entries
            .first()
            .map(|e| 1 + e.memory_tokens.nrows())
            .unwrap_or(1);
        let mask = vec![true; entries.len() * per_entry];
        Self::with_mask(entries, mask)
    }

    pub fn with_mask(entries: Vec<MemoryEntry>, mask: Vec<bool>) -> Result<Self, RetrieverError> {
        if let Some(first) = entries.first() {
            let (rows, cols) = first.memory_tokens.shape();
            for e in &entries {
                if e.memory_tokens.shape() != (rows, cols) {
                    return Err(RetrieverError::Shape {
                        what: "memory token matrix",
                        expected: rows * cols,
                        got: e.memory_tokens.nrows() * e.memory_tokens.ncols(),
                    });
                }
                if e.pose_token.len() != first.pose_token.len() {
                    return Err(RetrieverError::Shape {
                        what: "pose token",
                        expected: first.pose_token.len(),
                        got: e.pose_token.len(),
                    });
                }
            }
            let expected = entries.len() * (1 + rows);
            if mask.len() != expected {
                return Err(RetrieverError::Shape {
                    what: "bank mask",
                    expected,
                    got: mask.len(),
                });
            }
        }
        Ok(Self { entries, mask })
    }

    /// Tokens per entry in the joint sequence (pose token + memory tokens).
    pub fn tokens_per_entry(&self) -> usize {
        self.entries
            .first()
            .map(|e| 1 + e.memory_tokens.nrows())
            .unwrap_or(0)
    }
}

/// Retrieved pose-aligned tokens: `m_query x d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldTokens(pub DMatrix<f64>);

/// Query side input: the pose token of the target time step.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPose {
    pub time_step: i64,
    pub pose_token: Vec<f64>,
}

impl QueryPose {
    pub fn from_pose(pose: &CameraPose) -> Self {
        Self {
            time_step: pose.time_step,
            pose_token: pose.flatten().to_vec(),
        }
    }
}

/// All learnable state of the kernel, reproducible from a seed.
#[derive(Debug, Clone)]
pub struct RetrieverParams {
    pub config: RetrieverConfig,
    embed_pose: Linear,
    embed_mem: Linear,
    mem_encoder: Vec<Block>,
    qry_encoder: Vec<Block>,
    learnable_queries: DMatrix<f64>,
    retrieval_attn: Attention,
    reconstruct_head: Linear,
    world_embed: Linear,
    inject_attn: Attention,
}

impl RetrieverParams {
    pub fn init(seed: u64) -> Self {
        Self::with_config(seed, RetrieverConfig::default())
    }

    pub fn with_config(seed: u64, config: RetrieverConfig) -> Self {
        let d = config.dims;
        let zero = config.zero_output_projections;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embed_pose = Linear::init(&mut rng, d.d_model, d.d_pose);
        let embed_mem = Linear::init(&mut rng, d.d_model, d.d_mem);
        let mem_encoder = (0..d.n_blocks)
            .map(|_| Block::init(&mut rng, d.d_model, d.n_heads, zero))
            .collect();
        let qry_encoder = (0..d.n_blocks)
            .map(|_| Block::init(&mut rng, d.d_model, d.n_heads, zero))
            .collect();
        let scale = 1.0 / (d.d_model as f64).sqrt();
        let learnable_queries =
            DMatrix::from_fn(d.m_query, d.d_model, |_, _| rng.random_range(-scale..scale));
        let retrieval_attn = Attention::init(&mut rng, d.d_model, d.n_heads, zero);
        let reconstruct_head = Linear::init(&mut rng, d.d_mem, d.d_model);
        let world_embed = Linear::init(&mut rng, d.d_hidden, d.d_model);
        let inject_attn = Attention::init(&mut rng, d.d_hidden, d.n_heads, zero);
        Self {
            config,
            embed_pose,
            embed_mem,
            mem_encoder,
            qry_encoder,
            learnable_queries,
            retrieval_attn,
            reconstruct_head,
            world_embed,
            inject_attn,
        }
    }

    pub fn learnable_queries(&self) -> &DMatrix<f64> {
        &self.learnable_queries
    }
}

/// Sinusoidal encoding of where a pose sits in space and time: channels
/// cycle over (camera center, optical axis, time step) at geometrically
/// spaced frequencies. Derived from the flattened pose so that entries carry
/// their own geometry, not their ordinal position in the bank.
fn positional_encoding(pose_token: &[f64], time_step: i64, d_model: usize) -> DVector<f64> {
    // Unflatten [R | t] row-major.
    let r = nalgebra::Matrix3::new(
        pose_token[0],
        pose_token[1],
        pose_token[2],
        pose_token[4],
        pose_token[5],
        pose_token[6],
        pose_token[8],
        pose_token[9],
        pose_token[10],
    );
    let t = Vector3::new(pose_token[3], pose_token[7], pose_token[11]);
    let center = -r.transpose() * t;
    let forward = r.transpose() * Vector3::z();
    let feats = [
        center.x,
        center.y,
        center.z,
        forward.x,
        forward.y,
        forward.z,
        time_step as f64,
    ];
    DVector::from_fn(d_model, |k, _| {
        let j = k % feats.len();
        let octave = (k / feats.len()) as f64;
        let omega = 0.5 * 1.35f64.powf(octave);
        let phase = if k % 2 == 0 { 0.0 } else { std::f64::consts::FRAC_PI_2 };
        (omega * feats[j] + phase).sin()
    })
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), RetrieverError> {
    if expected != got {
        return Err(RetrieverError::Shape {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Embed one bank entry into the joint token sequence
/// `[phi_p(pose), phi_m(m_1), ..., phi_m(m_M)]` of shape
/// `(1 + m_mem) x d_model`. Pure embedding; the positional encoding is added
/// by [`encode_memory`].
pub fn build_joint_sequence(
    entry: &MemoryEntry,
    params: &RetrieverParams,
) -> Result<DMatrix<f64>, RetrieverError> {
    let d = params.config.dims;
    check_dim("pose token", d.d_pose, entry.pose_token.len())?;
    check_dim("memory token width", d.d_mem, entry.memory_tokens.ncols())?;
    let m = entry.memory_tokens.nrows();
    let mut seq = DMatrix::zeros(1 + m, d.d_model);
    let pose_vec = DVector::from_column_slice(&entry.pose_token);
    seq.row_mut(0)
        .copy_from(&params.embed_pose.apply_vec(&pose_vec).transpose());
    let embedded = params.embed_mem.apply(&entry.memory_tokens);
    seq.rows_mut(1, m).copy_from(&embedded);
    Ok(seq)
}

/// Encoded local memory: per-entry joint sequences refined by the memory
/// encoder and concatenated across time, with the bank's validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedMemory {
    /// `(entries * (1 + m_mem)) x d_model`.
    pub tokens: DMatrix<f64>,
    pub mask: Vec<bool>,
}

/// Encode a memory bank: embed every entry, add the positional encoding
/// (when enabled), run the per-entry encoder stack and concatenate. Masked
/// positions carry through but are excluded from all attention.
pub fn encode_memory(
    bank: &MemoryBank,
    params: &RetrieverParams,
) -> Result<EncodedMemory, RetrieverError> {
    if bank.entries.is_empty() {
        return Err(RetrieverError::EmptyMemory);
    }
    let d = params.config.dims;
    let per_entry = bank.tokens_per_entry();
    let mut tokens = DMatrix::zeros(bank.entries.len() * per_entry, d.d_model);
    for (idx, entry) in bank.entries.iter().enumerate() {
        let mut seq = build_joint_sequence(entry, params)?;
        if params.config.positional_encoding {
            let pe = positional_encoding(&entry.pose_token, entry.time_step, d.d_model);
            for mut row in seq.row_iter_mut() {
                row += pe.transpose();
            }
        }
        let mask_slice = &bank.mask[idx * per_entry..(idx + 1) * per_entry];
        for block in &params.mem_encoder {
            seq = block.forward(&seq, Some(mask_slice));
        }
        tokens.rows_mut(idx * per_entry, per_entry).copy_from(&seq);
    }
    Ok(EncodedMemory {
        tokens,
        mask: bank.mask.clone(),
    })
}

/// Build and refine the query sequence `[phi_p(query), r_1, ..., r_M]`
/// through the query encoder; shape `(1 + m_query) x d_model`. The
/// positional encoding (when enabled) is added to the pose row only; the
/// learnable queries are global tokens without a location.
pub fn build_and_encode_queries(
    query: &QueryPose,
    params: &RetrieverParams,
) -> Result<DMatrix<f64>, RetrieverError> {
    let d = params.config.dims;
    check_dim("query pose token", d.d_pose, query.pose_token.len())?;
    let mut seq = DMatrix::zeros(1 + d.m_query, d.d_model);
    let pose_vec = DVector::from_column_slice(&query.pose_token);
    let mut pose_row = params.embed_pose.apply_vec(&pose_vec);
    if params.config.positional_encoding {
        pose_row += positional_encoding(&query.pose_token, query.time_step, d.d_model);
    }
    seq.row_mut(0).copy_from(&pose_row.transpose());
    seq.rows_mut(1, d.m_query)
        .copy_from(&params.learnable_queries);
    let mut out = seq;
    for block in &params.qry_encoder {
        out = block.forward(&out, None);
    }
    Ok(out)
}

/// Result of one retrieval: the world tokens plus the cross-attention
/// weights per head (rows: query sequence positions, columns: memory
/// positions; masked columns are zero).
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub world_tokens: WorldTokens,
    pub attention: Vec<DMatrix<f64>>,
}

/// Residual cross-attention from the encoded queries into the encoded
/// memory, then selection of the learnable-query rows as world tokens.
pub fn retrieve(
    queries: &DMatrix<f64>,
    memory: &EncodedMemory,
    params: &RetrieverParams,
) -> Result<Retrieval, RetrieverError> {
    let d = params.config.dims;
    check_dim("query sequence length", 1 + d.m_query, queries.nrows())?;
    check_dim("query width", d.d_model, queries.ncols())?;
    check_dim("memory mask", memory.tokens.nrows(), memory.mask.len())?;
    if !memory.mask.iter().any(|&b| b) {
        return Err(RetrieverError::NoValidMemory);
    }
    let (attended, attention) =
        params
            .retrieval_attn
            .forward(queries, &memory.tokens, Some(&memory.mask));
    let refined = queries + attended;
    let world = refined.rows(1, d.m_query).into_owned();
    Ok(Retrieval {
        world_tokens: WorldTokens(world),
        attention,
    })
}

/// Map world tokens back to the memory space, row-wise: `m_query x d_mem`.
pub fn reconstruct_memory(
    world: &WorldTokens,
    params: &RetrieverParams,
) -> Result<DMatrix<f64>, RetrieverError> {
    let d = params.config.dims;
    check_dim("world token rows", d.m_query, world.0.nrows())?;
    check_dim("world token width", d.d_model, world.0.ncols())?;
    Ok(params.reconstruct_head.apply(&world.0))
}

/// One memory-conditioned injection layer: embed the world tokens into the
/// latent width and add `CrossAttn(Z, W, W)` residually. Callers stack
/// layers by calling repeatedly with the same world tokens.
pub fn inject_world_tokens(
    latent: &DMatrix<f64>,
    world: &WorldTokens,
    params: &RetrieverParams,
) -> Result<DMatrix<f64>, RetrieverError> {
    let d = params.config.dims;
    check_dim("latent width", d.d_hidden, latent.ncols())?;
    check_dim("world token rows", d.m_query, world.0.nrows())?;
    let w_hidden = params.world_embed.apply(&world.0);
    let (attended, _) = params.inject_attn.forward(latent, &w_hidden, None);
    Ok(latent + attended)
}

/// Injection variant that also returns the attention weights (for the
/// normalization checks).
pub fn inject_world_tokens_with_attention(
    latent: &DMatrix<f64>,
    world: &WorldTokens,
    params: &RetrieverParams,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>), RetrieverError> {
    let d = params.config.dims;
    check_dim("latent width", d.d_hidden, latent.ncols())?;
    check_dim("world token rows", d.m_query, world.0.nrows())?;
    let w_hidden = params.world_embed.apply(&world.0);
    let (attended, attention) = params.inject_attn.forward(latent, &w_hidden, None);
    Ok((latent + attended, attention))
}

/// Synthesize a memory bank for a pose segment: pose tokens are flattened
/// poses, memory tokens are low-frequency sinusoids of the camera center and
/// optical axis, so nearby poses yield nearby tokens. The random projections
/// are drawn once from the seed; the bank is a deterministic, smooth
/// function of the poses.
pub fn synth_memory_features(
    poses: &[CameraPose],
    m_mem: usize,
    d_mem: usize,
    seed: u64,
) -> MemoryBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_feats = 6;
    let projections: Vec<(Vec<f64>, f64)> = (0..m_mem * d_mem)
        .map(|_| {
            let dirs = (0..n_feats).map(|_| rng.random_range(-0.4..0.4)).collect();
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (dirs, phase)
        })
        .collect();

    let entries = poses
        .iter()
        .map(|pose| {
            let c = pose.center();
            let f = pose.forward();
            let feats = [c.x, c.y, c.z, f.x, f.y, f.z];
            let memory_tokens = DMatrix::from_fn(m_mem, d_mem, |i, j| {
                let (dirs, phase) = &projections[i * d_mem + j];
                let arg: f64 = dirs.iter().zip(feats.iter()).map(|(a, x)| a * x).sum();
                (arg + phase).sin()
            });
            MemoryEntry {
                time_step: pose.time_step,
                pose_token: pose.flatten().to_vec(),
                memory_tokens,
            }
        })
        .collect();
    MemoryBank::new(entries).expect("uniform synthetic entries")
}
