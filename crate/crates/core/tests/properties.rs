mod common;

use common::*;
use edgevla::hw::{Domain, MemoryTechnology};
use edgevla::opgraph::{
    decode_context, decode_step_graph, prefill_graph, OpShape, Operator, Phase, PhaseGraph,
};
use edgevla::roofline::{op_cost_in, place};
use edgevla::scheduler::{decode_kv_read_total, decode_phase_latency, phase_latency, pipelined_latency, Stage};
use edgevla::workload::scale_to;
use edgevla::{builtin_catalog, catalog_entry, op_cost, Bound, HardwareSpec, RequestProfile, VlaModelSpec};
use proptest::prelude::*;

// ---------------------------------------------------------------------------
// independent oracles

#[test]
fn einsum_oracle_matches_small_operators() {
    let mut rng = seeded(7);
    for _ in 0..300 {
        let (op, e) = random_small_operator(&mut rng);
        assert_eq!(Work::of(&op), enumerate(&e), "{}", op.name);
    }
}

#[test]
fn tick_oracle_hand_cases() {
    let ms = 1e-3;
    // compute 1/memory 3 twice: compute hides entirely under the stream
    let l = tick_pipeline(&[(1.0 * ms, 3.0 * ms, 1.0), (1.0 * ms, 3.0 * ms, 1.0)], 1e-6);
    assert!((l - 6.0 * ms).abs() < 5e-6, "{l}");
    // no buffer space: each operator streams only once its predecessor is done
    let l = tick_pipeline(&[(1.0 * ms, 3.0 * ms, 0.0), (1.0 * ms, 3.0 * ms, 0.0)], 1e-6);
    assert!((l - 6.0 * ms).abs() < 5e-6, "{l}");
    let pairs = [(3.0, 1.0), (1.0, 3.0), (3.0, 1.0), (1.0, 3.0)];
    let stages: Vec<Stage> = pairs
        .iter()
        .map(|&(c, m)| Stage {
            compute: c * ms,
            memory: m * ms,
            prefetch_fraction: 1.0,
        })
        .collect();
    let ticks: Vec<TickStage> = pairs.iter().map(|&(c, m)| (c * ms, m * ms, 1.0)).collect();
    let a = pipelined_latency(&stages);
    let b = tick_pipeline(&ticks, 1e-6);
    assert!((a - 8.0 * ms).abs() < 1e-12, "{a}");
    assert!((a - b).abs() / a < 1e-3, "{a} vs {b}");
}

#[test]
fn hand_parameter_count() {
    let m = VlaModelSpec::molmoact_7b_class();
    let d = 4096u64;
    let decoder = 32 * (d * 3 * d + d * d + 3 * d * 11008) + 32000 * d;
    let backbone = 24 * (4 * 1024 * 1024 + 3 * 1024 * 4096);
    let projector = 2048 * 4096 + 4096 * 4096;
    assert_eq!(m.decoder.param_count(), decoder);
    assert_eq!(m.param_count(), decoder + 2 * backbone + projector);
    assert_eq!(m.param_count(), 7_437_549_568);
    assert_eq!(m.weight_bytes(), 2 * 7_437_549_568);
}

// ---------------------------------------------------------------------------
// random inputs

fn arb_hw() -> impl Strategy<Value = HardwareSpec> {
    (
        50.0f64..3000.0,
        10.0f64..1000.0,
        prop::option::of((500.0f64..5000.0, 100.0f64..5000.0)),
        1u32..64,
        prop::sample::select(vec![16u32, 64, 128]),
        0.0f64..64e6,
    )
        .prop_map(|(bw, tf, pim, sms, tile, sram)| {
            let mut hw = HardwareSpec::new("random", MemoryTechnology::Other, bw, tf, 64.0);
            if let Some((pbw, ptf)) = pim {
                hw = hw.with_pim(pbw, ptf);
            }
            hw.sm_count = sms;
            hw.tile_m = tile;
            hw.tile_n = tile;
            hw.sram_bytes = sram;
            hw
        })
}

fn arb_op() -> impl Strategy<Value = Operator> {
    let matmul = (1u64..8, 1u64..4096, 1u64..4096, 1u64..4096, 0u64..1 << 28, 0u64..1 << 24, 0u64..1 << 20, 0u64..4096)
        .prop_map(|(b, m, n, k, w, a, kv, row)| {
            let mut op = Operator::matmul("mm", Phase::Prefill, b, m, n, k);
            op.weight_bytes = w;
            op.activation_read_bytes = a;
            op.activation_write_bytes = a / 2;
            op.kv_read_bytes = kv;
            op.innermost_contiguous_bytes = row;
            op
        });
    let ew = (1u64..1 << 24, 1u64..8192).prop_map(|(e, row)| Operator::elementwise("ew", Phase::Decode, e, row));
    prop_oneof![3 => matmul, 1 => ew]
}

fn arb_graph() -> impl Strategy<Value = PhaseGraph> {
    prop::collection::vec(arb_op(), 0..12).prop_map(|ops| {
        let mut g = PhaseGraph::empty(Phase::Prefill);
        g.ops = ops;
        g
    })
}

fn tol(x: f64) -> f64 {
    1e-9 * x.abs() + 1e-15
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn roofline_lower_bounds(op in arb_op(), hw in arb_hw()) {
        let c = op_cost(&op, &hw);
        let peak = hw.peak_compute(c.placement).unwrap();
        let bw = hw.bandwidth(c.placement).unwrap();
        prop_assert!(c.time + tol(c.time) >= op.flops as f64 / peak);
        prop_assert!(c.time + tol(c.time) >= op.total_bytes() as f64 / bw);
        prop_assert_eq!(c.time, c.compute_time.max(c.memory_time));
        prop_assert_eq!(c.bound == Bound::ComputeBound, c.compute_time > c.memory_time);
    }

    #[test]
    fn more_bandwidth_or_compute_never_slows(op in arb_op(), hw in arb_hw(), f in 1.0f64..8.0) {
        let base = op_cost_in(&op, &hw, Domain::Soc).time;
        let mut faster = hw.clone();
        faster.dram_bandwidth *= f;
        prop_assert!(op_cost_in(&op, &faster, Domain::Soc).time <= base + tol(base));
        let mut faster = hw.clone();
        faster.soc_peak_compute *= f;
        prop_assert!(op_cost_in(&op, &faster, Domain::Soc).time <= base + tol(base));
    }

    #[test]
    fn placement_follows_threshold(op in arb_op(), hw in arb_hw()) {
        let d = place(&op, &hw);
        match hw.pim {
            None => prop_assert_eq!(d, Domain::Soc),
            Some(p) => {
                prop_assert_eq!(d == Domain::Pim, op.arithmetic_intensity() < p.placement_threshold);
                // a partition at least as fast on both limbs never loses to the SoC
                if d == Domain::Pim && p.peak_compute >= hw.soc_peak_compute && p.bandwidth >= hw.dram_bandwidth {
                    let pim = op_cost_in(&op, &hw, Domain::Pim).time;
                    let soc = op_cost_in(&op, &hw, Domain::Soc).time;
                    prop_assert!(pim <= soc + tol(soc));
                }
            }
        }
    }

    #[test]
    fn prefetch_bounds(g in arb_graph(), hw in arb_hw()) {
        let on = phase_latency(&g, &hw, true);
        let off = phase_latency(&g, &hw, false);
        let lower = on.compute_sum.max(on.memory_sum);
        prop_assert!(on.latency + tol(lower) >= lower);
        prop_assert!(on.latency <= off.latency);
        let serial: f64 = g.ops.iter().map(|o| op_cost(o, &hw).time).sum();
        prop_assert!((off.latency - serial).abs() <= tol(serial));
    }

    #[test]
    fn flops_conserved_between_prefill_and_decode(seed in 0u64..10_000, s in 1u64..6) {
        let model = tiny_model(&mut seeded(seed));
        let linear = |g: &PhaseGraph| -> u64 {
            g.ops
                .iter()
                .filter(|o| ["qkv_proj", "o_proj", "mlp_gate", "mlp_up", "mlp_down"].iter().any(|k| o.name.ends_with(k)))
                .map(|o| o.flops)
                .sum()
        };
        let prefill = linear(&prefill_graph(&model, s));
        let stepwise: u64 = (1..=s).map(|c| linear(&decode_step_graph(&model, c))).sum();
        prop_assert_eq!(prefill, stepwise);
    }

    #[test]
    fn kv_accounting_is_consistent(seed in 0u64..10_000, s in 1u64..64, n in 0u64..16) {
        let model = tiny_model(&mut seeded(seed));
        let per_token = model.decoder.kv_bytes_per_token();
        let writes = |g: &PhaseGraph| g.ops.iter().map(|o| o.kv_write_bytes).sum::<u64>();
        let reads = |g: &PhaseGraph| g.ops.iter().map(|o| o.kv_read_bytes).sum::<u64>();
        let pre = prefill_graph(&model, s);
        prop_assert_eq!(writes(&pre), s * per_token);
        prop_assert_eq!(pre.kv_resident_bytes, s * per_token);
        let mut total = 0;
        for t in 0..n {
            let g = decode_step_graph(&model, decode_context(s, t));
            prop_assert_eq!(writes(&g), per_token);
            prop_assert_eq!(reads(&g), decode_context(s, t) * per_token);
            total += reads(&g);
        }
        let req = RequestProfile { n_images: 0, prompt_tokens: s, generated_tokens: n, ..Default::default() };
        prop_assert_eq!(decode_kv_read_total(&model, &req), total);
    }

    #[test]
    fn scaling_is_idempotent(target in 8_000_000_000u64..120_000_000_000) {
        let template = VlaModelSpec::molmoact_7b_class();
        if let Ok(m) = scale_to(target, &template) {
            let again = scale_to(target, &m).unwrap();
            prop_assert_eq!(&again.decoder, &m.decoder);
            prop_assert_eq!(&again.vision, &m.vision);
            let err = (m.param_count() as f64 - target as f64).abs() / target as f64;
            prop_assert!(err <= 0.05, "{}", err);
            prop_assert!(m.validate().is_ok());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn decode_latency_grows_with_generation(n in 1u64..24, extra in 1u64..8) {
        let model = VlaModelSpec::molmoact_7b_class();
        let orin = catalog_entry("Orin").unwrap();
        let req = |g| RequestProfile { generated_tokens: g, ..Default::default() };
        let a = decode_phase_latency(&model, &orin, &req(n), true).latency;
        let b = decode_phase_latency(&model, &orin, &req(n + extra), true).latency;
        prop_assert!(b > a);
    }
}

#[test]
fn every_decode_matmul_streams_weights_on_catalog() {
    let model = VlaModelSpec::molmoact_7b_class();
    let g = decode_step_graph(&model, 300);
    for hw in builtin_catalog() {
        for op in g.ops.iter().filter(|o| matches!(o.shape, OpShape::Matmul { .. })) {
            let c = op_cost(op, &hw);
            assert!(c.memory_time > 0.0, "{} on {}", op.name, hw.name);
        }
    }
}

#[test]
fn bundled_models_are_scaler_outputs() {
    let template = VlaModelSpec::molmoact_7b_class();
    for (name, target) in [("vla-10b", 10e9), ("vla-40b", 40e9), ("vla-100b", 100e9)] {
        let bundled = VlaModelSpec::from_toml(edgevla::bundled::model_text(name).unwrap()).unwrap();
        let scaled = scale_to(target as u64, &template).unwrap();
        assert_eq!(bundled.decoder, scaled.decoder, "{name}");
        assert_eq!(bundled.vision, scaled.vision, "{name}");
        assert_eq!(bundled.action, scaled.action, "{name}");
    }
}
