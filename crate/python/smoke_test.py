"""Smoke test for the Python bindings.

    pip install --no-build-isolation ./crates/python
    python python/smoke_test.py
"""

import json

import edgevla


def main():
    systems = {hw.name: hw for hw in edgevla.catalog()}
    assert len(systems) == 7, systems
    assert systems["Thor"].bw_gbps == 273.0
    assert systems["Orin+PIM"].has_pim

    model = edgevla.VlaModelSpec.molmoact_7b_class()
    assert model.param_count == 7_437_549_568
    assert edgevla.VlaModelSpec.load("molmoact-7b-class").param_count == model.param_count

    orin = edgevla.simulate(model, systems["Orin"])
    thor = edgevla.simulate(model, edgevla.HardwareSpec.load("Thor"))
    assert 0.65 <= orin.generation_share <= 0.85
    assert 20.0 <= orin.total_s <= 30.0
    assert 1.25 <= orin.total_s / thor.total_s <= 1.55
    phases = dict(orin.phase_latencies())
    assert set(phases) == {"vision", "prefill", "decode", "action"}
    assert json.loads(orin.to_json())[0]["hw_name"] == "Orin"

    short = edgevla.RequestProfile(generated_tokens=10)
    big = model.scale_to(100_000_000_000)
    rows = edgevla.sweep([big], list(systems.values()), short)
    assert all(r.control_hz < 10.0 for r in rows)
    csv = edgevla.sweep_csv(rows)
    assert csv.count("\n") == 8

    try:
        edgevla.simulate(big, systems["Orin"], capacity="strict")
    except RuntimeError as e:
        assert "capacity" in str(e)
    else:
        raise AssertionError("strict capacity should fail for 100B on Orin")

    try:
        edgevla.HardwareSpec.from_toml('name = "x"')
    except ValueError as e:
        assert "bw_gbps required" in str(e)
    else:
        raise AssertionError("missing bandwidth should be rejected")

    print(f"ok: Orin {orin.total_s:.2f} s ({orin.generation_share:.1%} generation), "
          f"Thor {thor.total_s:.2f} s, 100B best {max(r.control_hz for r in rows):.2f} Hz")


if __name__ == "__main__":
    main()
