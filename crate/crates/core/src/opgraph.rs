//! Lowering of a VLA model and request into per-phase operator sequences
//! with exact FLOP and byte accounting.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::workload::{ActionHeadSpec, RequestProfile, VlaModelSpec, ACT_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Phase {
    Vision,
    Prefill,
    Decode,
    Action,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Vision, Phase::Prefill, Phase::Decode, Phase::Action];

    pub fn label(self) -> &'static str {
        match self {
            Phase::Vision => "vision",
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
            Phase::Action => "action",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OpShape {
    /// `batch` independent `[m, k] x [k, n]` products.
    Matmul { batch: u64, m: u64, n: u64, k: u64 },
    /// Normalization, activation and residual work folded into one pass.
    Elementwise { elements: u64 },
}

/// FLOPs charged per element by the folded elementwise overhead operator.
pub const ELEMENTWISE_FLOPS_PER_ELEMENT: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Operator {
    pub name: String,
    pub phase: Phase,
    pub shape: OpShape,
    pub weight_bytes: u64,
    pub activation_read_bytes: u64,
    pub activation_write_bytes: u64,
    pub kv_read_bytes: u64,
    pub kv_write_bytes: u64,
    pub innermost_contiguous_bytes: u64,
    pub flops: u64,
}

impl Operator {
    pub fn matmul(name: impl Into<String>, phase: Phase, batch: u64, m: u64, n: u64, k: u64) -> Self {
        Operator {
            name: name.into(),
            phase,
            shape: OpShape::Matmul { batch, m, n, k },
            weight_bytes: 0,
            activation_read_bytes: 0,
            activation_write_bytes: 0,
            kv_read_bytes: 0,
            kv_write_bytes: 0,
            innermost_contiguous_bytes: 0,
            flops: 2 * batch * m * n * k,
        }
    }

    /// Elementwise pass: one read and one write of every element.
    pub fn elementwise(name: impl Into<String>, phase: Phase, elements: u64, row_bytes: u64) -> Self {
        Operator {
            name: name.into(),
            phase,
            shape: OpShape::Elementwise { elements },
            weight_bytes: 0,
            activation_read_bytes: elements * ACT_BYTES,
            activation_write_bytes: elements * ACT_BYTES,
            kv_read_bytes: 0,
            kv_write_bytes: 0,
            innermost_contiguous_bytes: row_bytes,
            flops: ELEMENTWISE_FLOPS_PER_ELEMENT * elements,
        }
    }

    fn weights(mut self, bytes: u64) -> Self {
        self.weight_bytes = bytes;
        self
    }

    fn reads(mut self, bytes: u64) -> Self {
        self.activation_read_bytes = bytes;
        self
    }

    fn writes(mut self, bytes: u64) -> Self {
        self.activation_write_bytes = bytes;
        self
    }

    fn kv(mut self, read: u64, write: u64) -> Self {
        self.kv_read_bytes = read;
        self.kv_write_bytes = write;
        self
    }

    fn contiguous(mut self, bytes: u64) -> Self {
        self.innermost_contiguous_bytes = bytes;
        self
    }

    pub fn is_matmul(&self) -> bool {
        matches!(self.shape, OpShape::Matmul { .. })
    }

    pub fn activation_bytes(&self) -> u64 {
        self.activation_read_bytes + self.activation_write_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.weight_bytes
            + self.activation_read_bytes
            + self.activation_write_bytes
            + self.kv_read_bytes
            + self.kv_write_bytes
    }

    /// FLOP per byte moved.
    pub fn arithmetic_intensity(&self) -> f64 {
        self.flops as f64 / self.total_bytes() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseGraph {
    pub phase: Phase,
    pub ops: Vec<Operator>,
    /// Weights the phase needs resident in device memory.
    pub weight_resident_bytes: u64,
    /// KV cache resident at the end of the phase.
    pub kv_resident_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct GraphTotals {
    pub flops: u64,
    pub bytes: u64,
    pub resident_bytes: u64,
}

impl PhaseGraph {
    pub fn empty(phase: Phase) -> Self {
        PhaseGraph {
            phase,
            ops: Vec::new(),
            weight_resident_bytes: 0,
            kv_resident_bytes: 0,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn resident_bytes(&self) -> u64 {
        self.weight_resident_bytes + self.kv_resident_bytes
    }

    pub fn totals(&self) -> GraphTotals {
        graph_totals(self)
    }
}

pub fn graph_totals(g: &PhaseGraph) -> GraphTotals {
    GraphTotals {
        flops: g.ops.iter().map(|o| o.flops).sum(),
        bytes: g.ops.iter().map(Operator::total_bytes).sum(),
        resident_bytes: g.resident_bytes(),
    }
}

/// Attention source for a block: either a KV cache in device memory or
/// freshly computed activations.
#[derive(Clone, Copy)]
enum KvSource {
    Cache { dtype_bytes: u64 },
    Activations,
}

/// One pre-norm transformer block.
#[derive(Clone, Copy)]
struct Block {
    phase: Phase,
    batch: u64,
    q_len: u64,
    kv_len: u64,
    d_model: u64,
    n_heads: u64,
    n_kv_heads: u64,
    d_head: u64,
    d_ff: u64,
    weight_dtype: u64,
    kv: KvSource,
}

impl Block {
    fn emit(&self, prefix: &str, out: &mut Vec<Operator>) {
        let Block {
            phase,
            batch,
            q_len,
            kv_len,
            d_model,
            n_heads,
            n_kv_heads,
            d_head,
            d_ff,
            weight_dtype: wb,
            kv,
        } = *self;
        let tokens = batch * q_len;
        let q_width = n_heads * d_head;
        let kv_width = n_kv_heads * d_head;
        let qkv_width = q_width + 2 * kv_width;
        let linear = |name: &str, n: u64, k: u64| {
            Operator::matmul(format!("{prefix}.{name}"), phase, batch, q_len, n, k)
                .weights(n * k * wb)
                .reads(tokens * k * ACT_BYTES)
                .writes(tokens * n * ACT_BYTES)
                .contiguous(k * wb)
        };

        out.push(Operator::elementwise(
            format!("{prefix}.overhead"),
            phase,
            tokens * d_model,
            d_model * ACT_BYTES,
        ));

        let qkv = linear("qkv_proj", qkv_width, d_model);
        out.push(match kv {
            KvSource::Cache { dtype_bytes } => qkv
                .writes(tokens * q_width * ACT_BYTES)
                .kv(0, tokens * 2 * kv_width * dtype_bytes),
            KvSource::Activations => qkv,
        });

        // K and V each: one head-row per cached token.
        let (kv_stream, kv_row) = match kv {
            KvSource::Cache { dtype_bytes } => (batch * kv_len * kv_width * dtype_bytes, d_head * dtype_bytes),
            KvSource::Activations => (batch * kv_len * kv_width * ACT_BYTES, d_head * ACT_BYTES),
        };
        let scores = batch * n_heads * q_len * kv_len * ACT_BYTES;
        let attend = |name: &str, n: u64, k: u64| {
            let op = Operator::matmul(format!("{prefix}.{name}"), phase, batch * n_heads, q_len, n, k)
                .contiguous(kv_row);
            match kv {
                KvSource::Cache { .. } => op.kv(kv_stream, 0),
                KvSource::Activations => op.reads(kv_stream),
            }
        };
        let score = attend("attn_score", kv_len, d_head);
        let q_bytes = tokens * q_width * ACT_BYTES;
        out.push(Operator {
            activation_read_bytes: score.activation_read_bytes + q_bytes,
            ..score
        }
        .writes(scores));
        let value = attend("attn_value", d_head, kv_len);
        out.push(Operator {
            activation_read_bytes: value.activation_read_bytes + scores,
            ..value
        }
        .writes(tokens * q_width * ACT_BYTES));

        out.push(linear("o_proj", d_model, q_width));
        out.push(linear("mlp_gate", d_ff, d_model));
        out.push(linear("mlp_up", d_ff, d_model));
        out.push(linear("mlp_down", d_model, d_ff));
    }
}

/// Vision backbones (per-image attention, images batched) followed by the
/// projector MLP. No images yields an empty graph.
pub fn vision_graph(model: &VlaModelSpec, request: &RequestProfile) -> PhaseGraph {
    let v = &model.vision;
    let mut g = PhaseGraph::empty(Phase::Vision);
    if request.n_images == 0 {
        return g;
    }
    let d_head = v.d_model / v.n_heads;
    let block = Block {
        phase: Phase::Vision,
        batch: request.n_images,
        q_len: v.tokens_per_image,
        kv_len: v.tokens_per_image,
        d_model: v.d_model,
        n_heads: v.n_heads,
        n_kv_heads: v.n_heads,
        d_head,
        d_ff: v.d_ff,
        weight_dtype: v.weight_dtype_bytes,
        kv: KvSource::Activations,
    };
    for bb in 0..v.n_backbones {
        for layer in 0..v.layers {
            block.emit(&format!("bb{bb}.L{layer}"), &mut g.ops);
        }
    }
    let tokens = request.n_images * v.tokens_per_image;
    let mut prev = v.projector_input();
    for (i, &w) in v.projector_dims.iter().enumerate() {
        g.ops.push(
            Operator::matmul(format!("projector.{i}"), Phase::Vision, request.n_images, v.tokens_per_image, w, prev)
                .weights(w * prev * v.weight_dtype_bytes)
                .reads(tokens * prev * ACT_BYTES)
                .writes(tokens * w * ACT_BYTES)
                .contiguous(prev * v.weight_dtype_bytes),
        );
        prev = w;
    }
    g.weight_resident_bytes = v.param_count() * v.weight_dtype_bytes;
    g
}

fn decoder_block(model: &VlaModelSpec, phase: Phase, q_len: u64, kv_len: u64) -> Block {
    let d = &model.decoder;
    Block {
        phase,
        batch: 1,
        q_len,
        kv_len,
        d_model: d.d_model,
        n_heads: d.n_heads,
        n_kv_heads: d.n_kv_heads,
        d_head: d.d_head,
        d_ff: d.d_ff,
        weight_dtype: d.weight_dtype_bytes,
        kv: KvSource::Cache {
            dtype_bytes: d.kv_dtype_bytes,
        },
    }
}

/// Output head over the (tied) embedding for the last position only.
fn logits_op(model: &VlaModelSpec, phase: Phase, prefix: &str) -> Operator {
    let d = &model.decoder;
    Operator::matmul(format!("{prefix}logits"), phase, 1, 1, d.vocab, d.d_model)
        .weights(d.vocab * d.d_model * d.weight_dtype_bytes)
        .reads(d.d_model * ACT_BYTES)
        .writes(d.vocab * ACT_BYTES)
        .contiguous(d.d_model * d.weight_dtype_bytes)
}

fn push_decoder_pass(model: &VlaModelSpec, phase: Phase, q_len: u64, kv_len: u64, prefix: &str, out: &mut Vec<Operator>) {
    let block = decoder_block(model, phase, q_len, kv_len);
    for layer in 0..model.decoder.layers {
        block.emit(&format!("{prefix}L{layer}"), out);
    }
    out.push(logits_op(model, phase, prefix));
}

/// The decoder over the full visual + text context at once.
pub fn prefill_graph(model: &VlaModelSpec, context_tokens: u64) -> PhaseGraph {
    let mut g = PhaseGraph::empty(Phase::Prefill);
    if context_tokens == 0 {
        return g;
    }
    push_decoder_pass(model, Phase::Prefill, context_tokens, context_tokens, "", &mut g.ops);
    g.weight_resident_bytes = model.decoder.weight_bytes();
    g.kv_resident_bytes = context_tokens * model.decoder.kv_bytes_per_token();
    g
}

/// One autoregressive step attending over `context_len` cached tokens
/// (including the one written by this step).
pub fn decode_step_graph(model: &VlaModelSpec, context_len: u64) -> PhaseGraph {
    step_graph(model, Phase::Decode, context_len, "")
}

fn step_graph(model: &VlaModelSpec, phase: Phase, context_len: u64, prefix: &str) -> PhaseGraph {
    let mut g = PhaseGraph::empty(phase);
    push_decoder_pass(model, phase, 1, context_len.max(1), prefix, &mut g.ops);
    g.weight_resident_bytes = model.decoder.weight_bytes();
    g.kv_resident_bytes = context_len * model.decoder.kv_bytes_per_token();
    g
}

/// Context attended by decode step `t` (0-based) after a prefill of
/// `prefill_tokens`.
pub fn decode_context(prefill_tokens: u64, t: u64) -> u64 {
    prefill_tokens + t + 1
}

/// All generation steps, each as its own graph.
pub fn decode_graphs(model: &VlaModelSpec, request: &RequestProfile) -> Vec<PhaseGraph> {
    let s0 = request.prefill_tokens(model);
    (0..request.generated_tokens)
        .map(|t| decode_step_graph(model, decode_context(s0, t)))
        .collect()
}

/// Independent passes the action head performs, in execution order: one
/// decode step per discrete action token, or one DiT forward per denoising
/// step.
pub fn action_step_graphs(model: &VlaModelSpec, request: &RequestProfile) -> Vec<PhaseGraph> {
    if request.actions_per_inference == 0 {
        return Vec::new();
    }
    match model.action {
        ActionHeadSpec::DiscreteTokens {
            action_tokens_per_step,
        } => {
            let start = request.prefill_tokens(model) + request.generated_tokens;
            (0..action_tokens_per_step * request.actions_per_inference)
                .map(|j| step_graph(model, Phase::Action, decode_context(start, j), &format!("a{j}.")))
                .collect()
        }
        ActionHeadSpec::DiffusionTransformer {
            layers,
            d_model,
            n_heads,
            d_ff,
            horizon_tokens,
            diffusion_steps,
            weight_dtype_bytes,
        } => {
            let block = Block {
                phase: Phase::Action,
                batch: 1,
                q_len: horizon_tokens,
                kv_len: horizon_tokens,
                d_model,
                n_heads,
                n_kv_heads: n_heads,
                d_head: d_model / n_heads,
                d_ff,
                weight_dtype: weight_dtype_bytes,
                kv: KvSource::Activations,
            };
            (0..diffusion_steps)
                .map(|s| {
                    let mut g = PhaseGraph::empty(Phase::Action);
                    for layer in 0..layers {
                        block.emit(&format!("s{s}.L{layer}"), &mut g.ops);
                    }
                    g.weight_resident_bytes = model.action.weight_bytes();
                    g
                })
                .collect()
        }
    }
}

/// The whole action phase as one operator sequence.
pub fn action_graph(model: &VlaModelSpec, request: &RequestProfile) -> PhaseGraph {
    concat(Phase::Action, action_step_graphs(model, request))
}

/// The whole generation phase as one operator sequence.
pub fn decode_graph(model: &VlaModelSpec, request: &RequestProfile) -> PhaseGraph {
    let s0 = request.prefill_tokens(model);
    let steps = (0..request.generated_tokens)
        .map(|t| step_graph(model, Phase::Decode, decode_context(s0, t), &format!("t{t}.")))
        .collect();
    concat(Phase::Decode, steps)
}

fn concat(phase: Phase, steps: Vec<PhaseGraph>) -> PhaseGraph {
    let mut g = PhaseGraph::empty(phase);
    for s in steps {
        g.weight_resident_bytes = g.weight_resident_bytes.max(s.weight_resident_bytes);
        g.kv_resident_bytes = g.kv_resident_bytes.max(s.kv_resident_bytes);
        g.ops.extend(s.ops);
    }
    g
}

/// Writes the operator table used for oracle diffing.
pub fn write_ops_csv<W: Write>(out: W, graphs: &[&PhaseGraph]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "name",
        "phase",
        "batch",
        "m",
        "n",
        "k",
        "flops",
        "weight_bytes",
        "kv_read_bytes",
        "activation_bytes",
        "intensity",
    ])?;
    for g in graphs {
        for op in &g.ops {
            let (batch, m, n, k) = match op.shape {
                OpShape::Matmul { batch, m, n, k } => {
                    (batch.to_string(), m.to_string(), n.to_string(), k.to_string())
                }
                OpShape::Elementwise { .. } => Default::default(),
            };
            w.write_record([
                op.name.clone(),
                op.phase.label().to_string(),
                batch,
                m,
                n,
                k,
                op.flops.to_string(),
                op.weight_bytes.to_string(),
                op.kv_read_bytes.to_string(),
                op.activation_bytes().to_string(),
                crate::report::sig6(op.arithmetic_intensity()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
