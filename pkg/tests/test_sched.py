import json

import pytest

from tpu_imac_sim.exceptions import EmptyWorkloadError, PlanError
from tpu_imac_sim.imac import CrossbarConfig
from tpu_imac_sim.sched import (
    MB,
    Mode,
    Unit,
    compare_row,
    memory_report,
    plan,
    report_basename,
    report_to_csv,
    run,
    speedup,
    summary,
    write_report,
)
from tpu_imac_sim.systolic import SystolicConfig
from tpu_imac_sim.topology import bundled_names, bundled_topology, param_count, parse_topology

HEADER = "name,ifmap_h,ifmap_w,filter_h,filter_w,channels_in,num_filters,stride,kind\n"


def simulate(name, mode=Mode.HYBRID, **kwargs):
    return run(bundled_topology(name), SystolicConfig(), CrossbarConfig(), mode, **kwargs)


def test_plan_assigns_units():
    lenet = bundled_topology("lenet_mnist")
    hybrid = plan(lenet, Mode.HYBRID)
    assert hybrid.unit_of("conv1") is Unit.TPU
    assert hybrid.unit_of("flatten") is Unit.AUX
    assert [hybrid.unit_of(layer.name) for layer in lenet.dense_layers()] == [Unit.IMAC] * 4
    assert hybrid.handoff_index == 3
    baseline = plan(lenet, Mode.TPU_ONLY)
    assert baseline.unit_of("fc4") is Unit.TPU
    assert baseline.handoff_index is None


def test_plan_rejects_interleaved_fc_block():
    topology = parse_topology(
        HEADER + "fc1,1,1,1,1,16,16,1,Dense\nflat,1,1,1,1,16,16,1,Flatten\nfc2,1,1,1,1,16,4,1,Dense\n"
    )
    with pytest.raises(PlanError):
        plan(topology, Mode.HYBRID)
    assert plan(topology, Mode.TPU_ONLY).unit_of("fc1") is Unit.TPU


def test_lenet_hybrid_report():
    report = simulate("lenet_mnist")
    assert report.total_cycles == 948
    assert report.baseline_total_cycles == 2618
    assert report.speedup == pytest.approx(2.7616, abs=1e-4)
    imac = [r for r in report.per_layer if r.unit is Unit.IMAC]
    assert [r.cycles for r in imac] == [1, 1, 1, 1]
    assert imac[0].subarrays == 4
    assert report.warnings == ()


def test_lenet_memory():
    lenet = bundled_topology("lenet_mnist")
    mem = memory_report(lenet, Mode.HYBRID)
    assert mem.sram_bytes == 4 * 2998
    assert mem.rram_bytes == 2 * 43488 // 8
    assert mem.baseline_sram_bytes == 4 * 46486
    assert mem.reduction == pytest.approx(0.8770, abs=1e-4)
    assert round(mem.baseline_sram_bytes / MB, 3) == 0.177


def test_tpu_only_report_is_its_own_baseline():
    report = simulate("lenet_mnist", Mode.TPU_ONLY)
    assert report.total_cycles == report.baseline_total_cycles == 2618
    assert speedup(report) == 1.0
    assert summary(report)["rram_mb"] == 0
    assert report.memory.reduction == 0.0


@pytest.mark.parametrize(
    "name, expected_speedup, expected_reduction",
    [
        ("lenet_mnist", 2.7616, 0.8770),
        ("vgg9_cifar10", 1.0496, 0.0966),
        ("mobilenetv1_cifar10", 1.1502, 0.2333),
        ("mobilenetv2_cifar10", 1.0694, 0.3118),
        ("resnet18_cifar10", 1.0440, 0.0689),
        ("mobilenetv1_cifar100", 1.1638, 0.2482),
        ("mobilenetv2_cifar100", 1.0757, 0.3294),
    ],
)
def test_bundled_speedups(name, expected_speedup, expected_reduction):
    report = simulate(name)
    assert report.speedup == pytest.approx(expected_speedup, abs=1e-4)
    assert report.memory.reduction == pytest.approx(expected_reduction, abs=1e-4)
    assert report.speedup > 1.0


@pytest.mark.parametrize("name", bundled_names())
def test_reduction_matches_parameter_split(name):
    topology = bundled_topology(name)
    p_fc = sum(param_count(layer) for layer in topology.dense_layers())
    p_total = topology.total_params()
    p_conv = p_total - p_fc
    expected = 1 - (4 * p_conv + p_fc / 4) / (4 * p_total)
    assert memory_report(topology, Mode.HYBRID).reduction == pytest.approx(expected, abs=1e-12)


def test_speedup_grows_with_fc_share():
    """Cycles saved equal the TPU cost of the FC block minus one cycle per layer."""
    for name in ("lenet_mnist", "mobilenetv1_cifar10"):
        report = simulate(name)
        saved = report.baseline_total_cycles - report.total_cycles
        baseline = simulate(name, Mode.TPU_ONLY)
        fc = sum(r.cycles for r in baseline.per_layer if r.kind.value == "Dense")
        assert saved == fc - len(bundled_topology(name).dense_layers())


def test_aux_cost_applies_to_pool_and_flatten():
    report = simulate("lenet_mnist", aux_cost_per_elem=1)
    assert report.total_cycles == 948 + 1024


def test_empty_workload():
    topology = parse_topology(HEADER + "pool,4,4,2,2,1,1,2,MaxPool\n")
    report = run(topology, SystolicConfig(), CrossbarConfig(), Mode.TPU_ONLY)
    assert report.total_cycles == 0
    with pytest.raises(EmptyWorkloadError):
        speedup(report)


def test_flatten_warning_is_carried():
    report = run(
        bundled_topology("lenet_mnist"),
        SystolicConfig(rows=16, cols=16),
        CrossbarConfig(),
        Mode.HYBRID,
    )
    assert len(report.warnings) == 1
    assert "1024" in report.warnings[0]


def test_report_csv_layout():
    report = simulate("lenet_mnist", accuracy={"accuracy_step1": 0.99, "accuracy_step2": 0.98})
    lines = report_to_csv(report).splitlines()
    assert lines[0] == "layer,unit,cycles,utilization"
    assert lines[1].startswith("conv1,TPU,438,")
    blank = lines.index("")
    assert blank == 1 + len(report.per_layer)
    assert lines[blank + 1].split(",")[-2:] == ["accuracy_step1", "accuracy_step2"]
    values = dict(zip(lines[blank + 1].split(","), lines[blank + 2].split(",")))
    assert values["total_cycles"] == "948"
    assert values["speedup"] == "2.7616"
    assert values["accuracy_step2"] == "0.9800"


def test_write_report(tmp_path):
    report = simulate("lenet_mnist")
    csv_path, json_path = write_report(report, tmp_path / "a")
    assert csv_path.name == f"{report_basename(report)}.csv"
    data = json.loads(json_path.read_text())
    assert data["summary"]["total_cycles"] == 948
    assert data["layers"][3]["unit"] == "IMAC"
    again, _ = write_report(simulate("lenet_mnist"), tmp_path / "b")
    assert again.read_bytes() == csv_path.read_bytes()


def test_compare_row():
    row = compare_row(bundled_topology("lenet_mnist"), SystolicConfig(), CrossbarConfig())
    assert row == {
        "model": "lenet_mnist",
        "baseline_cycles": 2618,
        "hybrid_cycles": 948,
        "speedup": 2.7616,
        "reduction_pct": pytest.approx(87.70, abs=0.01),
    }


def test_mode_from_cli():
    assert Mode.from_cli("tpu") is Mode.TPU_ONLY
    assert Mode.from_cli("tpu-imac") is Mode.HYBRID
    assert Mode.from_cli("hybrid") is Mode.HYBRID
