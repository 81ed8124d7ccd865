//! CSV, JSON and table renderings of simulation results. Floats are printed
//! with 6 significant digits so outputs are byte-stable.

use std::fmt::Write as _;
use std::io::Write;

use serde_json::Value;

use crate::hw::{HardwareSpec, GB, TFLOPS};
use crate::opgraph::Phase;
use crate::scheduler::StepReport;

/// Formats `x` with 6 significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if (-5..15).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        sci
    }
}

fn round6(x: f64) -> f64 {
    sig6(x).parse().unwrap_or(x)
}

pub const SWEEP_HEADER: [&str; 14] = [
    "model_name",
    "params",
    "hw_name",
    "bw_gbps",
    "tflops_total",
    "vision_s",
    "prefill_s",
    "decode_s",
    "action_s",
    "total_s",
    "generation_share",
    "per_token_ms",
    "control_hz",
    "meets_target",
];

pub fn sweep_row(r: &StepReport) -> [String; 14] {
    [
        r.model_name.clone(),
        r.params.to_string(),
        r.hw_name.clone(),
        sig6(r.bw_gbps),
        sig6(r.tflops_total),
        sig6(r.vision.latency),
        sig6(r.prefill.latency),
        sig6(r.decode.latency),
        sig6(r.action.latency),
        sig6(r.total_latency),
        sig6(r.generation_share),
        sig6(r.per_token_decode_latency * 1e3),
        sig6(r.control_frequency),
        r.meets_target.to_string(),
    ]
}

pub fn write_sweep_csv<W: Write>(out: W, rows: &[StepReport]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record(sweep_row(r))?;
    }
    w.flush()?;
    Ok(())
}

/// Rounds every float in a JSON tree to 6 significant digits.
fn round_floats(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(round6).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// JSON export: the sweep columns plus full per-phase and per-operator detail.
pub fn reports_json(rows: &[StepReport]) -> String {
    let mut v = serde_json::to_value(rows).expect("reports serialize");
    if let Value::Array(items) = &mut v {
        for (item, r) in items.iter_mut().zip(rows) {
            if let Value::Object(map) = item {
                map.insert("total_s".into(), r.total_latency.into());
                map.insert("per_token_ms".into(), (r.per_token_decode_latency * 1e3).into());
                map.insert("control_hz".into(), r.control_frequency.into());
                for (phase, p) in Phase::ALL.iter().zip(r.phases()) {
                    map.insert(format!("{}_s", phase.label()), p.latency.into());
                }
            }
        }
    }
    round_floats(&mut v);
    let mut s = serde_json::to_string_pretty(&v).expect("json renders");
    s.push('\n');
    s
}

pub fn step_table(r: &StepReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "model: {} ({} params)   hardware: {} ({} GB/s, {} BF16 TFLOPS)",
        r.model_name,
        crate::workload::format_params(r.params),
        r.hw_name,
        sig6(r.bw_gbps),
        sig6(r.tflops_total)
    );
    let _ = writeln!(
        s,
        "{:<8} {:>12} {:>8} {:>12} {:>12} {:>8} {:>10}",
        "phase", "latency_s", "share", "compute_s", "memory_s", "steps", "mem-bound"
    );
    for ((phase, p), share) in Phase::ALL.iter().zip(r.phases()).zip(r.phase_shares()) {
        let hist = &p.bound_histogram;
        let mem = if hist.total() > 0 {
            format!("{:.1}%", 100.0 * hist.memory_bound as f64 / hist.total() as f64)
        } else {
            "-".to_string()
        };
        let _ = writeln!(
            s,
            "{:<8} {:>12} {:>7.1}% {:>12} {:>12} {:>8} {:>10}",
            phase.label(),
            sig6(p.latency),
            100.0 * share,
            sig6(p.compute_sum),
            sig6(p.memory_sum),
            p.steps,
            mem
        );
    }
    let _ = writeln!(s, "{:<8} {:>12}", "total", sig6(r.total_latency));
    let _ = writeln!(s, "generation share: {:.1}%", 100.0 * r.generation_share);
    if r.per_token_decode_latency > 0.0 {
        let _ = writeln!(s, "per-token decode: {} ms", sig6(r.per_token_decode_latency * 1e3));
    }
    let _ = writeln!(
        s,
        "control frequency: {} Hz (target {} Hz: {})",
        sig6(r.control_frequency),
        sig6(r.target_frequency),
        if r.meets_target { "met" } else { "not met" }
    );
    if let Some(over) = r.capacity_overflow {
        let _ = writeln!(s, "warning: resident set exceeds memory capacity by {} GB", sig6(over / GB));
    }
    if r.degenerate {
        let _ = writeln!(s, "note: degenerate input (no images and no tokens), nothing to simulate");
    }
    s
}

pub fn sweep_table(rows: &[StepReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:<14} {:>10} {:>12} {:>10} {:>10}",
        "model", "hardware", "total_s", "per_tok_ms", "control_hz", "meets"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<24} {:<14} {:>10} {:>12} {:>10} {:>10}",
            r.model_name,
            r.hw_name,
            sig6(r.total_latency),
            sig6(r.per_token_decode_latency * 1e3),
            sig6(r.control_frequency),
            r.meets_target
        );
    }
    s
}

/// One line naming the cells that reach their target frequency.
pub fn sweep_summary(rows: &[StepReport]) -> String {
    let met: Vec<String> = rows
        .iter()
        .filter(|r| r.meets_target)
        .map(|r| format!("{}/{}", r.model_name, r.hw_name))
        .collect();
    let target = rows.first().map_or(0.0, |r| r.target_frequency);
    if met.is_empty() {
        format!("0/{} cells meet {} Hz", rows.len(), sig6(target))
    } else {
        format!(
            "{}/{} cells meet {} Hz: {}",
            met.len(),
            rows.len(),
            sig6(target),
            met.join(", ")
        )
    }
}

pub fn catalog_table(hws: &[HardwareSpec]) -> String {
    let mut s = String::from("System | Memory | BW (GB/s) | BF16 TFLOPS\n");
    for h in hws {
        let _ = writeln!(
            s,
            "{} | {} | {} | {}",
            h.name,
            h.memory_technology.display(),
            h.headline_bandwidth() / GB,
            h.total_peak_compute() / TFLOPS
        );
    }
    s
}

pub fn catalog_csv(hws: &[HardwareSpec]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["name", "memory", "bw_gbps", "tflops_bf16", "capacity_gb", "pim"]);
    for h in hws {
        let _ = w.write_record([
            h.name.clone(),
            h.memory_technology.display().to_string(),
            (h.headline_bandwidth() / GB).to_string(),
            (h.total_peak_compute() / TFLOPS).to_string(),
            (h.memory_capacity / GB).to_string(),
            h.pim.is_some().to_string(),
        ]);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(24.50123456), "24.5012");
        assert_eq!(sig6(0.000123456789), "0.000123457");
        assert_eq!(sig6(203.0), "203.000");
        assert_eq!(sig6(9.9999999), "10.0000");
        assert_eq!(sig6(1.5e20), "1.50000e20");
        assert_eq!(sig6(-1.23456789), "-1.23457");
    }

    #[test]
    fn catalog_rows() {
        let t = catalog_table(&crate::hw::builtin_catalog());
        assert!(t.contains("Thor | LPDDR5X | 273 | 500\n"));
        assert!(t.contains("Orin+PIM | LPDDR6X PIM | 2180 | 1074\n"));
        assert_eq!(t.lines().count(), 8);
    }
}
