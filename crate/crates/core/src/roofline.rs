//! Per-operator roofline costing: tile/wave-quantized compute time,
//! derated memory time, and SoC/PIM placement.

use serde::Serialize;

use crate::hw::{Domain, HardwareSpec};
use crate::opgraph::{OpShape, Operator};

/// Fraction of peak available to non-matmul work.
pub const ELEMENTWISE_EFFICIENCY: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Bound {
    ComputeBound,
    MemoryBound,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpCost {
    pub name: String,
    pub placement: Domain,
    /// Seconds.
    pub compute_time: f64,
    pub memory_time: f64,
    pub time: f64,
    pub bound: Bound,
    /// FLOP/s.
    pub achieved_flops_rate: f64,
    /// Bytes/s.
    pub achieved_bandwidth: f64,
}

/// Utilization of the SoC matrix engine for one matmul: wave quantization
/// across SMs times edge-tile padding. `k` is reduced sequentially inside a
/// tile and does not participate.
pub fn tile_utilization(hw: &HardwareSpec, batch: u64, m: u64, n: u64) -> f64 {
    let tile_m = u64::from(hw.tile_m);
    let tile_n = u64::from(hw.tile_n);
    let sms = u64::from(hw.sm_count);
    let tiles_m = m.div_ceil(tile_m);
    let tiles_n = n.div_ceil(tile_n);
    let tiles = tiles_m * tiles_n * batch;
    if tiles == 0 {
        return 1.0;
    }
    let waves = tiles.div_ceil(sms);
    let wave_util = tiles as f64 / (waves * sms) as f64;
    let edge_util = (m * n) as f64 / ((tiles_m * tile_m) as f64 * (tiles_n * tile_n) as f64);
    wave_util * edge_util
}

pub fn compute_time(op: &Operator, hw: &HardwareSpec, placement: Domain) -> f64 {
    if op.flops == 0 {
        return 0.0;
    }
    let flops = op.flops as f64;
    match placement {
        Domain::Pim => {
            let pim = hw.pim.expect("PIM placement on a spec without PIM");
            flops / pim.peak_compute
        }
        Domain::Soc => match op.shape {
            OpShape::Matmul { batch, m, n, .. } => {
                flops / (hw.soc_peak_compute * tile_utilization(hw, batch, m, n))
            }
            OpShape::Elementwise { .. } => flops / (hw.soc_peak_compute * ELEMENTWISE_EFFICIENCY),
        },
    }
}

pub fn memory_time(op: &Operator, hw: &HardwareSpec, placement: Domain) -> f64 {
    let bytes = op.total_bytes();
    if bytes == 0 {
        return 0.0;
    }
    let bandwidth = match placement {
        Domain::Soc => hw.dram_bandwidth,
        Domain::Pim => hw.pim.expect("PIM placement on a spec without PIM").bandwidth,
    };
    let efficiency = hw.bandwidth_derate.efficiency(op.innermost_contiguous_bytes);
    bytes as f64 / (bandwidth * efficiency)
}

/// PIM takes every operator whose intensity is below its threshold.
pub fn place(op: &Operator, hw: &HardwareSpec) -> Domain {
    match hw.pim {
        Some(pim) if op.arithmetic_intensity() < pim.placement_threshold => Domain::Pim,
        _ => Domain::Soc,
    }
}

/// Roofline cost in a given domain, bypassing placement.
pub fn op_cost_in(op: &Operator, hw: &HardwareSpec, placement: Domain) -> OpCost {
    let compute = compute_time(op, hw, placement);
    let memory = memory_time(op, hw, placement);
    let (time, bound) = if compute > memory {
        (compute, Bound::ComputeBound)
    } else {
        (memory, Bound::MemoryBound)
    };
    let rate = |x: f64| if time > 0.0 { x / time } else { 0.0 };
    OpCost {
        name: op.name.clone(),
        placement,
        compute_time: compute,
        memory_time: memory,
        time,
        bound,
        achieved_flops_rate: rate(op.flops as f64),
        achieved_bandwidth: rate(op.total_bytes() as f64),
    }
}

pub fn op_cost(op: &Operator, hw: &HardwareSpec) -> OpCost {
    op_cost_in(op, hw, place(op, hw))
}
