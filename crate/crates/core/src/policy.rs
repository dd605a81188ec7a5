//! Neural policy forward pass.
//!
//! Every agent encodes its `o1` into a 32-dim feature `f_i`. Features are then scattered
//! onto a `32 x V_h x V_w` grid (filled with -1) at each neighbor's relative position, with
//! the agent's own feature at the center. A 1x1 projection of `o2` is added, and a
//! second convolutional stack decodes the result into five action probabilities.
//!
//! Convolutions run batched across agents via im2col and a single sgemm per layer.

use std::collections::HashSet;
use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{Action, GridMap};
use crate::observe::{encode_all, Observation, ObservationConfig, ObserveError, O1_CHANNELS, O2_CHANNELS};
use crate::pibt::AgentState;

pub const FEATURE_DIM: usize = 32;
pub const HIDDEN_DIM: usize = 64;
pub const NUM_ACTIONS: usize = 5;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"SILW";
pub const WEIGHTS_VERSION: u16 = 1;

/// Agents per batched block. Fixed so results do not depend on thread count.
const BLOCK: usize = 32;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("not a weights file (bad magic)")]
    Magic,
    #[error("unsupported weights version {0}")]
    Version(u16),
    #[error("tensor `{slot}` has shape {found:?}, expected {expected:?}")]
    Shape {
        slot: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),
    #[error("tensor `{0}` appears twice")]
    DuplicateTensor(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("tensor `{0}` contains non-finite values")]
    NonFinite(String),
    #[error("observation window {found_h}x{found_w} does not match weights {expected_h}x{expected_w}")]
    Window {
        expected_h: usize,
        expected_w: usize,
        found_h: usize,
        found_w: usize,
    },
    #[error("observation of agent {0} names unknown neighbor {1}")]
    Neighbor(usize, usize),
    #[error("non-finite activation for agent {0}")]
    NonFiniteActivation(usize),
    #[error("malformed weights file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Observe(#[from] ObserveError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Produces one learned action per agent from the current state.
pub trait LearnedPolicy: Sync {
    fn learned_actions(&self, map: &GridMap, agents: &[AgentState]) -> Result<Vec<Action>, PolicyError>;
}

/// Architecture slots in storage order.
pub const SLOTS: [(&str, &[usize]); 16] = [
    ("encoder.conv1.weight", &[FEATURE_DIM, O1_CHANNELS, 3, 3]),
    ("encoder.conv1.bias", &[FEATURE_DIM]),
    ("encoder.conv2.weight", &[FEATURE_DIM, FEATURE_DIM, 3, 3]),
    ("encoder.conv2.bias", &[FEATURE_DIM]),
    ("encoder.fc.weight", &[FEATURE_DIM, FEATURE_DIM]),
    ("encoder.fc.bias", &[FEATURE_DIM]),
    ("ssc.proj.weight", &[FEATURE_DIM, O2_CHANNELS, 1, 1]),
    ("ssc.proj.bias", &[FEATURE_DIM]),
    ("decoder.conv1.weight", &[FEATURE_DIM, FEATURE_DIM, 3, 3]),
    ("decoder.conv1.bias", &[FEATURE_DIM]),
    ("decoder.conv2.weight", &[FEATURE_DIM, FEATURE_DIM, 3, 3]),
    ("decoder.conv2.bias", &[FEATURE_DIM]),
    ("decoder.fc1.weight", &[HIDDEN_DIM, FEATURE_DIM]),
    ("decoder.fc1.bias", &[HIDDEN_DIM]),
    ("decoder.fc2.weight", &[NUM_ACTIONS, HIDDEN_DIM]),
    ("decoder.fc2.bias", &[NUM_ACTIONS]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Slot {
    EncConv1W,
    EncConv1B,
    EncConv2W,
    EncConv2B,
    EncFcW,
    EncFcB,
    ProjW,
    ProjB,
    DecConv1W,
    DecConv1B,
    DecConv2W,
    DecConv2B,
    DecFc1W,
    DecFc1B,
    DecFc2W,
    DecFc2B,
}

impl Slot {
    pub fn name(self) -> &'static str {
        SLOTS[self as usize].0
    }
}

fn slot_len(dims: &[usize]) -> usize {
    dims.iter().product()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyWeights {
    pub config: ObservationConfig,
    tensors: Vec<Vec<f32>>,
}

impl PolicyWeights {
    pub fn zeros(config: ObservationConfig) -> Self {
        Self {
            config,
            tensors: SLOTS.iter().map(|(_, d)| vec![0.0; slot_len(d)]).collect(),
        }
    }

    /// Uniform in `±1/sqrt(fan_in)` per layer, biases included.
    pub fn random(config: ObservationConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Self::zeros(config);
        for pair in 0..SLOTS.len() / 2 {
            let dims = SLOTS[2 * pair].1;
            let fan_in: usize = dims[1..].iter().product();
            let bound = 1.0 / (fan_in as f32).sqrt();
            for k in [2 * pair, 2 * pair + 1] {
                for x in w.tensors[k].iter_mut() {
                    *x = rng.gen_range(-bound..bound);
                }
            }
        }
        w
    }

    pub fn get(&self, slot: Slot) -> &[f32] {
        &self.tensors[slot as usize]
    }

    pub fn get_mut(&mut self, slot: Slot) -> &mut [f32] {
        &mut self.tensors[slot as usize]
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&'static str, &'static [usize], &[f32])> {
        SLOTS.iter().zip(&self.tensors).map(|((n, d), t)| (*n, *d, t.as_slice()))
    }

    pub fn save<W: Write>(&self, mut out: W) -> Result<(), PolicyError> {
        out.write_all(WEIGHTS_MAGIC)?;
        out.write_u16::<LittleEndian>(WEIGHTS_VERSION)?;
        out.write_u16::<LittleEndian>(self.config.fov_h as u16)?;
        out.write_u16::<LittleEndian>(self.config.fov_w as u16)?;
        out.write_u32::<LittleEndian>(SLOTS.len() as u32)?;
        for (name, dims, data) in self.tensors() {
            out.write_u16::<LittleEndian>(name.len() as u16)?;
            out.write_all(name.as_bytes())?;
            out.write_u8(dims.len() as u8)?;
            for d in dims {
                out.write_u32::<LittleEndian>(*d as u32)?;
            }
            for x in data {
                out.write_f32::<LittleEndian>(*x)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self, PolicyError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != WEIGHTS_MAGIC {
            return Err(PolicyError::Magic);
        }
        let version = input.read_u16::<LittleEndian>()?;
        if version != WEIGHTS_VERSION {
            return Err(PolicyError::Version(version));
        }
        let fov_h = input.read_u16::<LittleEndian>()? as usize;
        let fov_w = input.read_u16::<LittleEndian>()? as usize;
        let config = ObservationConfig::new(fov_h, fov_w)?;
        let count = input.read_u32::<LittleEndian>()?;
        let mut weights = Self::zeros(config);
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = input.read_u16::<LittleEndian>()? as usize;
            let mut name = vec![0u8; len];
            input.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| PolicyError::Malformed("tensor name is not UTF-8".into()))?;
            let k = SLOTS
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| PolicyError::UnknownTensor(name.clone()))?;
            if !seen.insert(k) {
                return Err(PolicyError::DuplicateTensor(name));
            }
            let rank = input.read_u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(input.read_u32::<LittleEndian>()? as usize);
            }
            if dims != SLOTS[k].1 {
                return Err(PolicyError::Shape {
                    slot: name,
                    expected: SLOTS[k].1.to_vec(),
                    found: dims,
                });
            }
            input.read_f32_into::<LittleEndian>(&mut weights.tensors[k])?;
            if weights.tensors[k].iter().any(|x| !x.is_finite()) {
                return Err(PolicyError::NonFinite(name));
            }
        }
        if let Some(k) = (0..SLOTS.len()).find(|k| !seen.contains(k)) {
            return Err(PolicyError::MissingTensor(SLOTS[k].0.to_string()));
        }
        Ok(weights)
    }
}

/// Channel-major activations for a block of agents: `channels x (batch * H * W)`.
struct Scratch {
    col: Vec<f32>,
    a: Vec<f32>,
    b: Vec<f32>,
}

impl Scratch {
    fn new() -> Self {
        Self {
            col: Vec::new(),
            a: Vec::new(),
            b: Vec::new(),
        }
    }
}

/// 3x3 same-padded convolution followed by ReLU over a batch laid out channel-major.
#[allow(clippy::too_many_arguments)]
fn conv3x3_relu(
    input: &[f32],
    c_in: usize,
    batch: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    bias: &[f32],
    c_out: usize,
    col: &mut Vec<f32>,
    out: &mut Vec<f32>,
) {
    let hw = h * w;
    let n = batch * hw;
    col.clear();
    col.resize(c_in * 9 * n, 0.0);
    for ci in 0..c_in {
        let src = &input[ci * n..(ci + 1) * n];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * n..][..n];
                for b in 0..batch {
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut row[b * hw + y * w..][..w];
                        let srow = &src[b * hw + sy as usize * w..][..w];
                        match kx {
                            0 => dst[1..].copy_from_slice(&srow[..w - 1]),
                            1 => dst.copy_from_slice(srow),
                            _ => dst[..w - 1].copy_from_slice(&srow[1..]),
                        }
                    }
                }
            }
        }
    }
    out.clear();
    out.resize(c_out * n, 0.0);
    let k = c_in * 9;
    unsafe {
        matrixmultiply::sgemm(
            c_out,
            k,
            n,
            1.0,
            weight.as_ptr(),
            k as isize,
            1,
            col.as_ptr(),
            n as isize,
            1,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    for (c, chunk) in out.chunks_mut(n).enumerate() {
        let bc = bias[c];
        for x in chunk {
            *x = (*x + bc).max(0.0);
        }
    }
}

/// Spatial mean per (agent, channel): returns `batch x channels`.
fn mean_pool(input: &[f32], channels: usize, batch: usize, hw: usize) -> Vec<f32> {
    let n = batch * hw;
    let mut out = vec![0.0; batch * channels];
    for c in 0..channels {
        for b in 0..batch {
            let s: f32 = input[c * n + b * hw..][..hw].iter().sum();
            out[b * channels + c] = s / hw as f32;
        }
    }
    out
}

fn linear(x: &[f32], weight: &[f32], bias: &[f32], out_dim: usize, relu: bool) -> Vec<f32> {
    let in_dim = x.len();
    (0..out_dim)
        .map(|o| {
            let row = &weight[o * in_dim..(o + 1) * in_dim];
            let y = row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>() + bias[o];
            if relu {
                y.max(0.0)
            } else {
                y
            }
        })
        .collect()
}

/// Softmax computed in f64 for a tight normalization.
pub fn softmax(logits: &[f32; NUM_ACTIONS]) -> [f32; NUM_ACTIONS] {
    let m = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let e: Vec<f64> = logits.iter().map(|&l| (l as f64 - m).exp()).collect();
    let s: f64 = e.iter().sum();
    let mut p = [0f32; NUM_ACTIONS];
    for (p, e) in p.iter_mut().zip(e) {
        *p = (e / s) as f32;
    }
    p
}

fn encode_block(weights: &PolicyWeights, obs: &[Observation], s: &mut Scratch) -> Vec<[f32; FEATURE_DIM]> {
    let cfg = weights.config;
    let (h, w, hw) = (cfg.fov_h, cfg.fov_w, cfg.plane());
    let batch = obs.len();
    let n = batch * hw;
    let mut input = vec![0f32; O1_CHANNELS * n];
    for (b, o) in obs.iter().enumerate() {
        for c in 0..O1_CHANNELS {
            input[c * n + b * hw..][..hw].copy_from_slice(o.o1_channel(c));
        }
    }
    conv3x3_relu(
        &input,
        O1_CHANNELS,
        batch,
        h,
        w,
        weights.get(Slot::EncConv1W),
        weights.get(Slot::EncConv1B),
        FEATURE_DIM,
        &mut s.col,
        &mut s.a,
    );
    conv3x3_relu(
        &s.a,
        FEATURE_DIM,
        batch,
        h,
        w,
        weights.get(Slot::EncConv2W),
        weights.get(Slot::EncConv2B),
        FEATURE_DIM,
        &mut s.col,
        &mut s.b,
    );
    let pooled = mean_pool(&s.b, FEATURE_DIM, batch, hw);
    pooled
        .chunks(FEATURE_DIM)
        .map(|x| {
            let y = linear(x, weights.get(Slot::EncFcW), weights.get(Slot::EncFcB), FEATURE_DIM, false);
            let mut f = [0f32; FEATURE_DIM];
            f.copy_from_slice(&y);
            f
        })
        .collect()
}

fn decode_block(
    weights: &PolicyWeights,
    obs: &[Observation],
    self_ids: std::ops::Range<usize>,
    features: &[[f32; FEATURE_DIM]],
    s: &mut Scratch,
) -> Vec<[f32; NUM_ACTIONS]> {
    let cfg = weights.config;
    let (h, w, hw) = (cfg.fov_h, cfg.fov_w, cfg.plane());
    let batch = obs.len();
    let n = batch * hw;
    let mut grid = vec![0f32; FEATURE_DIM * n];
    for (b, (o, me)) in obs.iter().zip(self_ids).enumerate() {
        let buf = ssc_buffer(o, &features[me], features);
        for c in 0..FEATURE_DIM {
            grid[c * n + b * hw..][..hw].copy_from_slice(&buf[c * hw..][..hw]);
        }
    }
    let pw = weights.get(Slot::ProjW);
    let pb = weights.get(Slot::ProjB);
    for (b, o) in obs.iter().enumerate() {
        for c in 0..FEATURE_DIM {
            let dst = &mut grid[c * n + b * hw..][..hw];
            let (w0, w1, w2) = (pw[c * 3], pw[c * 3 + 1], pw[c * 3 + 2]);
            let (s0, s1, s2) = (o.o2_channel(0), o.o2_channel(1), o.o2_channel(2));
            for k in 0..hw {
                dst[k] += w0 * s0[k] + w1 * s1[k] + w2 * s2[k] + pb[c];
            }
        }
    }
    conv3x3_relu(
        &grid,
        FEATURE_DIM,
        batch,
        h,
        w,
        weights.get(Slot::DecConv1W),
        weights.get(Slot::DecConv1B),
        FEATURE_DIM,
        &mut s.col,
        &mut s.a,
    );
    conv3x3_relu(
        &s.a,
        FEATURE_DIM,
        batch,
        h,
        w,
        weights.get(Slot::DecConv2W),
        weights.get(Slot::DecConv2B),
        FEATURE_DIM,
        &mut s.col,
        &mut s.b,
    );
    let pooled = mean_pool(&s.b, FEATURE_DIM, batch, hw);
    pooled
        .chunks(FEATURE_DIM)
        .map(|x| {
            let hdn = linear(x, weights.get(Slot::DecFc1W), weights.get(Slot::DecFc1B), HIDDEN_DIM, true);
            let y = linear(&hdn, weights.get(Slot::DecFc2W), weights.get(Slot::DecFc2B), NUM_ACTIONS, false);
            let mut logits = [0f32; NUM_ACTIONS];
            logits.copy_from_slice(&y);
            logits
        })
        .collect()
}

/// The `32 x V_h x V_w` communication grid of one agent before the `o2` projection is
/// added: -1 everywhere except the agent's own feature at the center and each
/// neighbor's feature at its relative offset.
pub fn ssc_buffer(obs: &Observation, own: &[f32; FEATURE_DIM], features: &[[f32; FEATURE_DIM]]) -> Vec<f32> {
    let cfg = obs.config;
    let hw = cfg.plane();
    let mut buf = vec![-1f32; FEATURE_DIM * hw];
    let mut place = |cell: usize, f: &[f32; FEATURE_DIM]| {
        for (c, v) in f.iter().enumerate() {
            buf[c * hw + cell] = *v;
        }
    };
    place(cfg.half_h() as usize * cfg.fov_w + cfg.half_w() as usize, own);
    for nb in &obs.neighbor_offsets {
        let cell = (nb.d_row + cfg.half_h()) as usize * cfg.fov_w + (nb.d_col + cfg.half_w()) as usize;
        place(cell, &features[nb.agent_id]);
    }
    buf
}

/// Encoder features `f_i` for every observation.
pub fn encode_features(weights: &PolicyWeights, obs: &[Observation]) -> Vec<[f32; FEATURE_DIM]> {
    obs.par_chunks(BLOCK)
        .map_init(Scratch::new, |s, block| encode_block(weights, block, s))
        .collect::<Vec<_>>()
        .concat()
}

/// Action probabilities for every agent. `obs[i]` is agent `i`'s observation and
/// neighbor ids index into `obs`.
pub fn forward(weights: &PolicyWeights, obs: &[Observation]) -> Result<Vec<[f32; NUM_ACTIONS]>, PolicyError> {
    let cfg = weights.config;
    for (i, o) in obs.iter().enumerate() {
        if o.config != cfg {
            return Err(PolicyError::Window {
                expected_h: cfg.fov_h,
                expected_w: cfg.fov_w,
                found_h: o.config.fov_h,
                found_w: o.config.fov_w,
            });
        }
        for nb in &o.neighbor_offsets {
            if nb.agent_id >= obs.len() || nb.d_row.abs() > cfg.half_h() || nb.d_col.abs() > cfg.half_w() {
                return Err(PolicyError::Neighbor(i, nb.agent_id));
            }
        }
    }
    let features = encode_features(weights, obs);
    let logits: Vec<[f32; NUM_ACTIONS]> = obs
        .par_chunks(BLOCK)
        .enumerate()
        .map_init(Scratch::new, |s, (bi, block)| {
            let start = bi * BLOCK;
            decode_block(weights, block, start..start + block.len(), &features, s)
        })
        .collect::<Vec<_>>()
        .concat();
    logits
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if l.iter().any(|x| !x.is_finite()) {
                return Err(PolicyError::NonFiniteActivation(i));
            }
            Ok(softmax(l))
        })
        .collect()
}

/// Index of the largest probability; the lowest index wins ties.
pub fn argmax(p: &[f32; NUM_ACTIONS]) -> Action {
    let mut best = 0;
    for k in 1..NUM_ACTIONS {
        if p[k] > p[best] {
            best = k;
        }
    }
    Action::from_index(best).expect("action index")
}

/// Greedy neural policy: encode, forward, argmax.
#[derive(Debug, Clone)]
pub struct NeuralPolicy {
    pub weights: PolicyWeights,
}

impl NeuralPolicy {
    pub fn new(weights: PolicyWeights) -> Self {
        Self { weights }
    }

    pub fn config(&self) -> ObservationConfig {
        self.weights.config
    }
}

impl LearnedPolicy for NeuralPolicy {
    fn learned_actions(&self, map: &GridMap, agents: &[AgentState]) -> Result<Vec<Action>, PolicyError> {
        let obs = encode_all(map, agents, &self.weights.config)?;
        Ok(forward(&self.weights, &obs)?.iter().map(argmax).collect())
    }
}
