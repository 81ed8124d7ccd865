//! Phase and step latency aggregation with cross-operator prefetch, and the
//! control-frequency sweep.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::hw::{CapacityCheck, CapacityMode, HardwareSpec, HwError};
use crate::opgraph::{
    decode_context, decode_step_graph, prefill_graph, vision_graph, Phase, PhaseGraph,
};
use crate::roofline::{op_cost, Bound, OpCost};
use crate::workload::{ActionHeadSpec, RequestProfile, VlaModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FrequencyMode {
    /// Actions per inference divided by inference latency.
    Amortized,
    /// One control update per inference.
    PerInference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub prefetch: bool,
    pub capacity: CapacityMode,
    pub frequency: FrequencyMode,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            prefetch: true,
            capacity: CapacityMode::Warn,
            frequency: FrequencyMode::Amortized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BoundHistogram {
    pub compute_bound: u64,
    pub memory_bound: u64,
}

impl BoundHistogram {
    fn add(&mut self, bound: Bound) {
        match bound {
            Bound::ComputeBound => self.compute_bound += 1,
            Bound::MemoryBound => self.memory_bound += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.compute_bound + self.memory_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseReport {
    pub phase: Phase,
    /// Seconds.
    pub latency: f64,
    pub compute_sum: f64,
    pub memory_sum: f64,
    /// Sum of per-operator roofline times (the no-prefetch latency).
    pub serial_sum: f64,
    /// Per-operator costs. Phases made of repeated steps report one row per
    /// distinct operator with times summed over steps.
    pub op_costs: Vec<OpCost>,
    pub bound_histogram: BoundHistogram,
    pub prefetch_enabled: bool,
    /// Independent passes folded into this report (decode/action steps).
    pub steps: u64,
}

impl PhaseReport {
    pub fn empty(phase: Phase, prefetch: bool) -> Self {
        PhaseReport {
            phase,
            latency: 0.0,
            compute_sum: 0.0,
            memory_sum: 0.0,
            serial_sum: 0.0,
            op_costs: Vec::new(),
            bound_histogram: BoundHistogram::default(),
            prefetch_enabled: prefetch,
            steps: 0,
        }
    }

    /// Folds another pass of the same phase into this report.
    fn absorb(&mut self, other: PhaseReport) {
        self.latency += other.latency;
        self.compute_sum += other.compute_sum;
        self.memory_sum += other.memory_sum;
        self.serial_sum += other.serial_sum;
        self.bound_histogram.compute_bound += other.bound_histogram.compute_bound;
        self.bound_histogram.memory_bound += other.bound_histogram.memory_bound;
        self.steps += other.steps;
        if self.op_costs.is_empty() {
            self.op_costs = other.op_costs;
            return;
        }
        let index: HashMap<String, usize> = self
            .op_costs
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.clone(), i))
            .collect();
        for c in other.op_costs {
            match index.get(&c.name) {
                Some(&i) => {
                    let acc = &mut self.op_costs[i];
                    let flops = acc.achieved_flops_rate * acc.time + c.achieved_flops_rate * c.time;
                    let bytes = acc.achieved_bandwidth * acc.time + c.achieved_bandwidth * c.time;
                    acc.compute_time += c.compute_time;
                    acc.memory_time += c.memory_time;
                    acc.time += c.time;
                    acc.bound = if acc.compute_time > acc.memory_time {
                        Bound::ComputeBound
                    } else {
                        Bound::MemoryBound
                    };
                    if acc.time > 0.0 {
                        acc.achieved_flops_rate = flops / acc.time;
                        acc.achieved_bandwidth = bytes / acc.time;
                    }
                }
                None => self.op_costs.push(c),
            }
        }
    }
}

/// One operator as seen by the pipeline: compute seconds, memory seconds,
/// and the fraction of its operands that fits in the prefetch buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage {
    pub compute: f64,
    pub memory: f64,
    pub prefetch_fraction: f64,
}

/// Completion time of a double-buffered two-engine pipeline.
///
/// The memory engine streams operands in order and may start on operator
/// `i` once operator `i-2` has finished computing (two buffers). Until the
/// compute engine reaches operator `i`, at most `prefetch_fraction` of its
/// operands can be staged. Compute on an operator streams behind its data:
/// it never gets ahead of the loaded fraction.
pub fn pipelined_latency(stages: &[Stage]) -> f64 {
    let mut loaded_prev = 0.0; // A_{i-1}
    let mut done_prev = 0.0; // F_{i-1}
    let mut done_prev2 = 0.0; // F_{i-2}
    for s in stages {
        let start = f64::max(loaded_prev, done_prev2);
        let loaded = f64::max(start + s.memory, done_prev + (1.0 - s.prefetch_fraction) * s.memory);
        let compute_start = f64::max(done_prev, start);
        let done = f64::max(compute_start + s.compute, loaded);
        loaded_prev = loaded;
        done_prev2 = done_prev;
        done_prev = done;
    }
    done_prev
}

/// Costs every operator and combines them into a phase latency.
pub fn phase_latency(g: &PhaseGraph, hw: &HardwareSpec, prefetch: bool) -> PhaseReport {
    let mut report = PhaseReport::empty(g.phase, prefetch);
    if g.is_empty() {
        return report;
    }
    report.steps = 1;
    let mut stages = Vec::with_capacity(g.ops.len());
    for op in &g.ops {
        let cost = op_cost(op, hw);
        report.compute_sum += cost.compute_time;
        report.memory_sum += cost.memory_time;
        report.serial_sum += cost.time;
        report.bound_histogram.add(cost.bound);
        let bytes = op.total_bytes() as f64;
        stages.push(Stage {
            compute: cost.compute_time,
            memory: cost.memory_time,
            prefetch_fraction: if bytes > 0.0 {
                (hw.sram_bytes / bytes).min(1.0)
            } else {
                1.0
            },
        });
        report.op_costs.push(cost);
    }
    report.latency = if prefetch {
        // the recurrence is bounded by the serial sum; clamp rounding noise
        pipelined_latency(&stages).min(report.serial_sum)
    } else {
        report.serial_sum
    };
    report
}

/// Phase latency for a sequence of dependent passes (each pass is its own
/// pipeline), aggregated into one report.
fn passes_latency<I>(phase: Phase, passes: I, hw: &HardwareSpec, prefetch: bool) -> PhaseReport
where
    I: IntoIterator<Item = PhaseGraph>,
{
    let mut total = PhaseReport::empty(phase, prefetch);
    for g in passes {
        let mut r = phase_latency(&g, hw, prefetch);
        r.phase = phase;
        total.absorb(r);
    }
    total
}

/// Autoregressive generation: one pass per generated token, each attending
/// over a context one longer than the last.
pub fn decode_phase_latency(
    model: &VlaModelSpec,
    hw: &HardwareSpec,
    request: &RequestProfile,
    prefetch: bool,
) -> PhaseReport {
    let s0 = request.prefill_tokens(model);
    passes_latency(
        Phase::Decode,
        (0..request.generated_tokens).map(|t| decode_step_graph(model, decode_context(s0, t))),
        hw,
        prefetch,
    )
}

pub fn action_phase_latency(
    model: &VlaModelSpec,
    hw: &HardwareSpec,
    request: &RequestProfile,
    prefetch: bool,
) -> PhaseReport {
    if request.actions_per_inference == 0 {
        return PhaseReport::empty(Phase::Action, prefetch);
    }
    match model.action {
        ActionHeadSpec::DiscreteTokens {
            action_tokens_per_step,
        } => {
            let start = request.prefill_tokens(model) + request.generated_tokens;
            let n = action_tokens_per_step * request.actions_per_inference;
            passes_latency(
                Phase::Action,
                (0..n).map(|j| decode_step_graph(model, decode_context(start, j))),
                hw,
                prefetch,
            )
        }
        ActionHeadSpec::DiffusionTransformer { .. } => passes_latency(
            Phase::Action,
            crate::opgraph::action_step_graphs(model, request)
                .into_iter()
                .map(|mut g| {
                    // strip the step prefix so repeated passes aggregate
                    for op in &mut g.ops {
                        if let Some((_, rest)) = op.name.split_once('.') {
                            op.name = rest.to_string();
                        }
                    }
                    g
                }),
            hw,
            prefetch,
        ),
    }
}

/// KV bytes read over all generation steps, in closed form.
pub fn decode_kv_read_total(model: &VlaModelSpec, request: &RequestProfile) -> u64 {
    let n = request.generated_tokens;
    let s0 = request.prefill_tokens(model);
    // sum_{t=0}^{n-1} (s0 + t + 1)
    model.decoder.kv_bytes_per_token() * (n * s0 + n * (n + 1) / 2)
}

/// Weights plus the KV cache at the end of the action phase.
pub fn resident_bytes(model: &VlaModelSpec, request: &RequestProfile) -> u64 {
    let action_tokens = match model.action {
        ActionHeadSpec::DiscreteTokens {
            action_tokens_per_step,
        } => action_tokens_per_step * request.actions_per_inference,
        ActionHeadSpec::DiffusionTransformer { .. } => 0,
    };
    let context = request.prefill_tokens(model) + request.generated_tokens + action_tokens;
    model.weight_bytes() + context * model.decoder.kv_bytes_per_token()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Capacity(#[from] HwError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub model_name: String,
    pub params: u64,
    pub hw_name: String,
    pub bw_gbps: f64,
    pub tflops_total: f64,
    pub vision: PhaseReport,
    pub prefill: PhaseReport,
    pub decode: PhaseReport,
    pub action: PhaseReport,
    /// Seconds.
    pub total_latency: f64,
    /// (prefill + decode) / total.
    pub generation_share: f64,
    /// Hz.
    pub control_frequency: f64,
    pub per_token_decode_latency: f64,
    pub target_frequency: f64,
    pub meets_target: bool,
    pub resident_bytes: u64,
    /// Bytes by which the resident set exceeds device memory, if it does.
    pub capacity_overflow: Option<f64>,
    /// No work at all: zero tokens and no images.
    pub degenerate: bool,
}

impl StepReport {
    pub fn phases(&self) -> [&PhaseReport; 4] {
        [&self.vision, &self.prefill, &self.decode, &self.action]
    }

    /// Fraction of total latency per phase, in `Phase::ALL` order.
    pub fn phase_shares(&self) -> [f64; 4] {
        let t = self.total_latency;
        self.phases()
            .map(|p| if t > 0.0 { p.latency / t } else { 0.0 })
    }
}

pub fn step_latency(
    model: &VlaModelSpec,
    hw: &HardwareSpec,
    request: &RequestProfile,
    opts: &EvalOptions,
) -> Result<StepReport, SimError> {
    let resident = resident_bytes(model, request);
    let capacity_overflow = match hw.check_capacity(resident as f64, opts.capacity)? {
        CapacityCheck::Ok => None,
        CapacityCheck::Warning { overflow } => Some(overflow),
    };
    let prefetch = opts.prefetch;
    let vision = phase_latency(&vision_graph(model, request), hw, prefetch);
    let prefill = phase_latency(&prefill_graph(model, request.prefill_tokens(model)), hw, prefetch);
    let decode = decode_phase_latency(model, hw, request, prefetch);
    let action = action_phase_latency(model, hw, request, prefetch);

    let total = vision.latency + prefill.latency + decode.latency + action.latency;
    let degenerate = total == 0.0;
    let generation_share = if degenerate {
        0.0
    } else {
        (prefill.latency + decode.latency) / total
    };
    let control_frequency = if degenerate {
        0.0
    } else {
        match opts.frequency {
            FrequencyMode::Amortized => request.actions_per_inference as f64 / total,
            FrequencyMode::PerInference => 1.0 / total,
        }
    };
    let per_token_decode_latency = if request.generated_tokens > 0 {
        decode.latency / request.generated_tokens as f64
    } else {
        0.0
    };
    Ok(StepReport {
        model_name: model.name.clone(),
        params: model.param_count(),
        hw_name: hw.name.clone(),
        bw_gbps: hw.headline_bandwidth() / crate::hw::GB,
        tflops_total: hw.total_peak_compute() / crate::hw::TFLOPS,
        vision,
        prefill,
        decode,
        action,
        total_latency: total,
        generation_share,
        control_frequency,
        per_token_decode_latency,
        target_frequency: request.target_frequency,
        meets_target: !degenerate && control_frequency >= request.target_frequency,
        resident_bytes: resident,
        capacity_overflow,
        degenerate,
    })
}

/// Evaluates every (model, hardware) pair. Rows come back model-major,
/// hardware-minor regardless of evaluation order.
pub fn control_frequency_sweep(
    models: &[VlaModelSpec],
    hws: &[HardwareSpec],
    request: &RequestProfile,
    opts: &EvalOptions,
) -> Result<Vec<StepReport>, SimError> {
    let cells: Vec<(&VlaModelSpec, &HardwareSpec)> = models
        .iter()
        .flat_map(|m| hws.iter().map(move |h| (m, h)))
        .collect();
    cells
        .par_iter()
        .map(|(m, h)| step_latency(m, h, request, opts))
        .collect()
}
