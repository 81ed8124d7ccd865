//! Independent oracles shared by the property and acceptance suites.
//!
//! Nothing here calls into the library's costing code: operator work is
//! recounted by enumerating einsum index spaces, and pipelines are replayed
//! tick by tick.
#![allow(dead_code)]

use std::collections::HashSet;

use edgevla::opgraph::{prefill_graph, vision_graph, OpShape, Operator, PhaseGraph};
use edgevla::workload::{ActionHeadSpec, DecoderSpec, VisionEncoderSpec};
use edgevla::{HardwareSpec, RequestProfile, VlaModelSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const ACT: u64 = 2;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// einsum enumeration

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Weight,
    ActRead,
    ActWrite,
    KvRead,
    KvWrite,
}

/// Maps a point of the index space to the element it touches.
pub type CoordFn = Box<dyn Fn(&[u64]) -> Option<Vec<u64>>>;

/// One tensor of a contraction: which coordinate an index point touches
/// (`None` if it does not touch this tensor at all).
pub struct Operand {
    pub role: Role,
    pub elem_bytes: u64,
    pub coord: CoordFn,
}

pub fn operand(role: Role, elem_bytes: u64, f: impl Fn(&[u64]) -> Option<Vec<u64>> + 'static) -> Operand {
    Operand {
        role,
        elem_bytes,
        coord: Box::new(f),
    }
}

pub struct Einsum {
    /// Extent of every loop index.
    pub dims: Vec<u64>,
    pub operands: Vec<Operand>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Work {
    pub flops: u64,
    pub weight: u64,
    pub act_read: u64,
    pub act_write: u64,
    pub kv_read: u64,
    pub kv_write: u64,
}

impl Work {
    pub fn of(op: &Operator) -> Work {
        Work {
            flops: op.flops,
            weight: op.weight_bytes,
            act_read: op.activation_read_bytes,
            act_write: op.activation_write_bytes,
            kv_read: op.kv_read_bytes,
            kv_write: op.kv_write_bytes,
        }
    }
}

/// Visits every point of the index space: one multiply-accumulate each, and
/// every distinct element of every operand counted once.
pub fn enumerate(e: &Einsum) -> Work {
    let mut seen: Vec<HashSet<Vec<u64>>> = e.operands.iter().map(|_| HashSet::new()).collect();
    let mut macs = 0u64;
    let mut idx = vec![0u64; e.dims.len()];
    if e.dims.iter().all(|&d| d > 0) {
        'outer: loop {
            macs += 1;
            for (o, set) in e.operands.iter().zip(seen.iter_mut()) {
                if let Some(c) = (o.coord)(&idx) {
                    set.insert(c);
                }
            }
            for pos in (0..idx.len()).rev() {
                idx[pos] += 1;
                if idx[pos] < e.dims[pos] {
                    continue 'outer;
                }
                idx[pos] = 0;
            }
            break;
        }
    }
    let mut w = Work {
        flops: 2 * macs,
        ..Default::default()
    };
    for (o, set) in e.operands.iter().zip(&seen) {
        let bytes = set.len() as u64 * o.elem_bytes;
        match o.role {
            Role::Weight => w.weight += bytes,
            Role::ActRead => w.act_read += bytes,
            Role::ActWrite => w.act_write += bytes,
            Role::KvRead => w.kv_read += bytes,
            Role::KvWrite => w.kv_write += bytes,
        }
    }
    w
}

/// Attention geometry of one transformer block invocation.
#[derive(Debug, Clone, Copy)]
pub struct Attn {
    pub batch: u64,
    pub q_len: u64,
    pub kv_len: u64,
    pub heads: u64,
    pub kv_heads: u64,
    pub d_head: u64,
    pub d_model: u64,
    pub d_ff: u64,
    pub weight_bytes: u64,
    /// `Some(dtype)` when K/V live in a cache; `None` when they are fresh
    /// activations.
    pub cache: Option<u64>,
}

/// Contraction performed by the block operator named `kind`.
pub fn block_einsum(kind: &str, a: Attn) -> Einsum {
    let wb = a.weight_bytes;
    let q_w = a.heads * a.d_head;
    let kv_w = a.kv_heads * a.d_head;
    let group = a.heads / a.kv_heads;
    let linear = |k: u64, n: u64| Einsum {
        // b, s, k, n
        dims: vec![a.batch, a.q_len, k, n],
        operands: vec![
            operand(Role::ActRead, ACT, |i| Some(vec![i[0], i[1], i[2]])),
            operand(Role::Weight, wb, |i| Some(vec![i[2], i[3]])),
            operand(Role::ActWrite, ACT, |i| Some(vec![i[0], i[1], i[3]])),
        ],
    };
    let (kv_role, kv_bytes) = match a.cache {
        Some(dt) => (Role::KvRead, dt),
        None => (Role::ActRead, ACT),
    };
    match kind {
        "qkv_proj" => {
            let mut e = linear(a.d_model, q_w + 2 * kv_w);
            if let Some(dt) = a.cache {
                // Q stays an activation; K and V columns land in the cache
                e.operands[2] = operand(Role::ActWrite, ACT, move |i| (i[3] < q_w).then(|| vec![i[0], i[1], i[3]]));
                e.operands.push(operand(Role::KvWrite, dt, move |i| (i[3] >= q_w).then(|| vec![i[0], i[1], i[3]])));
            }
            e
        }
        // b, h, s, c, x
        "attn_score" => Einsum {
            dims: vec![a.batch, a.heads, a.q_len, a.kv_len, a.d_head],
            operands: vec![
                operand(Role::ActRead, ACT, |i| Some(vec![i[0], i[1], i[2], i[4]])),
                operand(kv_role, kv_bytes, move |i| Some(vec![i[0], i[1] / group, i[3], i[4]])),
                operand(Role::ActWrite, ACT, |i| Some(vec![i[0], i[1], i[2], i[3]])),
            ],
        },
        // b, h, s, x, c
        "attn_value" => Einsum {
            dims: vec![a.batch, a.heads, a.q_len, a.d_head, a.kv_len],
            operands: vec![
                operand(Role::ActRead, ACT, |i| Some(vec![i[0], i[1], i[2], i[4]])),
                operand(kv_role, kv_bytes, move |i| Some(vec![i[0], i[1] / group, i[4], i[3]])),
                operand(Role::ActWrite, ACT, |i| Some(vec![i[0], i[1], i[2], i[3]])),
            ],
        },
        "o_proj" => linear(q_w, a.d_model),
        "mlp_gate" | "mlp_up" => linear(a.d_model, a.d_ff),
        "mlp_down" => linear(a.d_ff, a.d_model),
        other => panic!("no einsum for {other}"),
    }
}

/// The output head: last position against the tied embedding.
pub fn logits_einsum(d: &DecoderSpec) -> Einsum {
    Einsum {
        dims: vec![d.d_model, d.vocab],
        operands: vec![
            operand(Role::ActRead, ACT, |i| Some(vec![i[0]])),
            operand(Role::Weight, d.weight_dtype_bytes, |i| Some(vec![i[0], i[1]])),
            operand(Role::ActWrite, ACT, |i| Some(vec![i[1]])),
        ],
    }
}

pub fn projector_einsum(images: u64, tokens: u64, k: u64, n: u64, wb: u64) -> Einsum {
    Einsum {
        dims: vec![images, tokens, k, n],
        operands: vec![
            operand(Role::ActRead, ACT, |i| Some(vec![i[0], i[1], i[2]])),
            operand(Role::Weight, wb, |i| Some(vec![i[2], i[3]])),
            operand(Role::ActWrite, ACT, |i| Some(vec![i[0], i[1], i[3]])),
        ],
    }
}

/// A tiny random model whose operators are cheap to enumerate.
pub fn tiny_model(rng: &mut ChaCha8Rng) -> VlaModelSpec {
    let d_head = [2u64, 4][rng.gen_range(0..2)];
    let kv_heads = rng.gen_range(1..=2);
    let heads = kv_heads * rng.gen_range(1..=2);
    let d_model = heads * d_head;
    let v_heads = rng.gen_range(1..=2);
    let v_d = v_heads * [2u64, 4][rng.gen_range(0..2)];
    let n_backbones = rng.gen_range(1..=2);
    VlaModelSpec {
        name: "tiny".into(),
        vision: VisionEncoderSpec {
            n_backbones,
            layers: 1,
            d_model: v_d,
            n_heads: v_heads,
            d_ff: rng.gen_range(2..=12),
            tokens_per_image: rng.gen_range(1..=4),
            projector_dims: vec![rng.gen_range(2..=8), d_model],
            weight_dtype_bytes: [1, 2, 4][rng.gen_range(0..3)],
        },
        decoder: DecoderSpec {
            layers: 1,
            d_model,
            n_heads: heads,
            n_kv_heads: kv_heads,
            d_head,
            d_ff: rng.gen_range(2..=16),
            vocab: rng.gen_range(2..=24),
            weight_dtype_bytes: [1, 2, 4][rng.gen_range(0..3)],
            kv_dtype_bytes: [1, 2][rng.gen_range(0..2)],
        },
        action: ActionHeadSpec::DiscreteTokens {
            action_tokens_per_step: 1,
        },
    }
}

/// Einsum for a matmul operator drawn from a tiny model's vision, prefill or
/// decode-step graph; the graph context is supplied by the caller.
pub fn oracle_for(op: &Operator, model: &VlaModelSpec, ctx: GraphContext) -> Einsum {
    let kind = op.name.rsplit('.').next().unwrap();
    match ctx {
        GraphContext::Vision { images } => {
            let v = &model.vision;
            if let Some(i) = op.name.strip_prefix("projector.") {
                let i: usize = i.parse().unwrap();
                let k = if i == 0 { v.projector_input() } else { v.projector_dims[i - 1] };
                return projector_einsum(images, v.tokens_per_image, k, v.projector_dims[i], v.weight_dtype_bytes);
            }
            block_einsum(
                kind,
                Attn {
                    batch: images,
                    q_len: v.tokens_per_image,
                    kv_len: v.tokens_per_image,
                    heads: v.n_heads,
                    kv_heads: v.n_heads,
                    d_head: v.d_model / v.n_heads,
                    d_model: v.d_model,
                    d_ff: v.d_ff,
                    weight_bytes: v.weight_dtype_bytes,
                    cache: None,
                },
            )
        }
        GraphContext::Decoder { q_len, kv_len } => {
            let d = &model.decoder;
            if kind == "logits" {
                return logits_einsum(d);
            }
            block_einsum(
                kind,
                Attn {
                    batch: 1,
                    q_len,
                    kv_len,
                    heads: d.n_heads,
                    kv_heads: d.n_kv_heads,
                    d_head: d.d_head,
                    d_model: d.d_model,
                    d_ff: d.d_ff,
                    weight_bytes: d.weight_dtype_bytes,
                    cache: Some(d.kv_dtype_bytes),
                },
            )
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum GraphContext {
    Vision { images: u64 },
    Decoder { q_len: u64, kv_len: u64 },
}

/// A random small matmul operator together with its einsum oracle.
pub fn random_small_operator(rng: &mut ChaCha8Rng) -> (Operator, Einsum) {
    let model = tiny_model(rng);
    let (graph, ctx): (PhaseGraph, GraphContext) = match rng.gen_range(0..3) {
        0 => {
            let images = rng.gen_range(1..=2);
            let req = RequestProfile {
                n_images: images,
                ..Default::default()
            };
            (vision_graph(&model, &req), GraphContext::Vision { images })
        }
        1 => {
            let s = rng.gen_range(1..=4);
            (prefill_graph(&model, s), GraphContext::Decoder { q_len: s, kv_len: s })
        }
        _ => {
            let c = rng.gen_range(1..=6);
            (
                edgevla::opgraph::decode_step_graph(&model, c),
                GraphContext::Decoder { q_len: 1, kv_len: c },
            )
        }
    };
    let matmuls: Vec<&Operator> = graph
        .ops
        .iter()
        .filter(|o| matches!(o.shape, OpShape::Matmul { .. }))
        .collect();
    let op = matmuls[rng.gen_range(0..matmuls.len())].clone();
    let e = oracle_for(&op, &model, ctx);
    (op, e)
}

// ---------------------------------------------------------------------------
// tick-level pipeline

/// Compute seconds, memory seconds, prefetchable fraction.
pub type TickStage = (f64, f64, f64);

/// Replays a double-buffered two-engine pipeline in fixed ticks.
///
/// The memory engine loads operators in order; it may begin operator `i`
/// once `i-1` is fully loaded and `i-2` has finished computing, and may load
/// only `fraction` of it until the compute engine has moved onto it. The
/// compute engine runs operators in order and never gets ahead of the loaded
/// fraction of the operator it is working on.
pub fn tick_pipeline(stages: &[TickStage], dt: f64) -> f64 {
    let n = stages.len();
    if n == 0 {
        return 0.0;
    }
    let eps = dt * 1e-6;
    let mut loaded = vec![0.0f64; n]; // seconds of memory work done
    let mut computed = vec![0.0f64; n]; // seconds of compute work done
    let mut finished = vec![false; n];
    let mut ticks = 0u64;
    let is_loaded = |loaded: &[f64], i: usize| loaded[i] >= stages[i].1 - eps;
    loop {
        // the state both engines see during this tick
        let loaded_before = loaded.clone();
        let finished_before = finished.clone();
        if finished_before.iter().all(|&f| f) {
            return ticks as f64 * dt;
        }

        if let Some(i) = (0..n).find(|&i| !is_loaded(&loaded_before, i)) {
            let may_start = i < 2 || finished_before[i - 2];
            if may_start {
                let (_, m, frac) = stages[i];
                let cap = if i == 0 || finished_before[i - 1] { m } else { frac * m };
                loaded[i] = (loaded[i] + dt).min(cap);
            }
        }

        if let Some(j) = (0..n).find(|&j| !finished_before[j]) {
            let (c, m, _) = stages[j];
            // operator j-1 is done, so j's load is allowed to run to completion;
            // compute trails the loaded fraction
            let available = if m > 0.0 { c * (loaded_before[j] / m).min(1.0) } else { c };
            computed[j] = (computed[j] + dt).min(available);
            if is_loaded(&loaded_before, j) && computed[j] >= c - eps {
                finished[j] = true;
            }
        }
        ticks += 1;
    }
}

/// A hardware description with a single SM and unit derates, so roofline
/// times of tile-aligned matmuls are exactly flops/peak and bytes/bandwidth.
pub fn flat_hardware(peak: f64, bandwidth: f64, sram: f64) -> HardwareSpec {
    let mut hw = HardwareSpec::new("flat", edgevla::hw::MemoryTechnology::Other, bandwidth / 1e9, peak / 1e12, 1000.0);
    hw.sm_count = 1;
    hw.tile_m = 1;
    hw.tile_n = 1;
    hw.sram_bytes = sram;
    hw.bandwidth_derate.contiguous_efficiency = 1.0;
    hw.bandwidth_derate.strided_efficiency = 1.0;
    hw
}
