import pytest

from tpu_imac_sim.defaults import BUNDLED_TOPOLOGIES
from tpu_imac_sim.exceptions import (
    LoweringError,
    TopologyParseError,
    TopologyValidationError,
)
from tpu_imac_sim.topology import (
    GemmShape,
    LayerKind,
    LayerSpec,
    Severity,
    bundled_topology,
    depthwise_gemm,
    errors,
    load_topology,
    mac_count,
    output_shape,
    param_count,
    parse_topology,
    resolve_topology,
    to_gemm,
    validate,
)

HEADER = "name,ifmap_h,ifmap_w,filter_h,filter_w,channels_in,num_filters,stride,kind\n"


def test_lenet_shapes():
    lenet = bundled_topology("lenet_mnist")
    assert [layer.name for layer in lenet] == [
        "conv1", "conv2", "flatten", "fc1", "fc2", "fc3", "fc4",
    ]
    assert output_shape(lenet.layer("conv1")) == (12, 12, 7)
    assert output_shape(lenet.layer("conv2")) == (8, 8, 16)
    assert output_shape(lenet.layer("flatten")) == (1, 1, 1024)
    assert output_shape(lenet.layer("fc4")) == (1, 1, 10)
    assert lenet.dataset_tag == "mnist"


def test_lenet_parameter_counts():
    lenet = bundled_topology("lenet_mnist")
    assert param_count(lenet.layer("conv1")) == 5 * 5 * 1 * 7 + 7
    assert param_count(lenet.layer("flatten")) == 0
    fc = sum(param_count(layer) for layer in lenet.dense_layers())
    assert fc == 43488
    assert lenet.total_params() - fc == 2998


def test_gemm_lowering():
    lenet = bundled_topology("lenet_mnist")
    assert to_gemm(lenet.layer("conv1")) == GemmShape(m=144, k=25, n=7)
    assert to_gemm(lenet.layer("fc1")) == GemmShape(m=1, k=1024, n=32)
    assert mac_count(lenet.layer("conv2")) == to_gemm(lenet.layer("conv2")).macs


def test_depthwise_and_pool_have_no_single_gemm():
    dw = LayerSpec("dw", LayerKind.DEPTHWISE_CONV, 6, 6, 3, 3, 8, 8)
    pool = LayerSpec("pool", LayerKind.MAX_POOL, 4, 4, 2, 2, 8, 8, 2)
    with pytest.raises(LoweringError):
        to_gemm(dw)
    with pytest.raises(LoweringError):
        to_gemm(pool)
    assert depthwise_gemm(dw) == GemmShape(m=16, k=9, n=1)
    assert output_shape(pool) == (2, 2, 8)


@pytest.mark.parametrize("name", BUNDLED_TOPOLOGIES)
def test_bundled_topologies_validate(name):
    topology = bundled_topology(name)
    assert errors(validate(topology, hybrid_mode=True)) == []
    assert errors(validate(topology, hybrid_mode=False)) == []
    assert topology.dense_layers()[0].channels_in == 1024


def test_trailing_empty_column_is_tolerated():
    text = "name,ifmap_h,ifmap_w,filter_h,filter_w,channels_in,num_filters,stride,kind,\n"
    text += "fc,1,1,1,1,4,2,1,Dense,\n"
    topology = parse_topology(text)
    assert topology.layers[0].num_filters == 2


@pytest.mark.parametrize(
    "row",
    [
        "conv,8,8,3,3,1,4,1,Conv3D",
        "conv,8,8,three,3,1,4,1,Conv",
        "conv,8,8,3,3,1,4,Conv",
    ],
)
def test_malformed_rows(row):
    with pytest.raises(TopologyParseError, match="row 2"):
        parse_topology(HEADER + row + "\n")


def test_empty_and_duplicate_topologies():
    with pytest.raises(TopologyParseError):
        parse_topology(HEADER)
    with pytest.raises(TopologyParseError, match="duplicate"):
        parse_topology(HEADER + "fc,1,1,1,1,4,4,1,Dense\nfc,1,1,1,1,4,4,1,Dense\n")


def test_non_positive_dimension():
    with pytest.raises(TopologyValidationError, match="stride must be positive"):
        parse_topology(HEADER + "conv,8,8,3,3,1,4,0,Conv\n")


def test_filter_larger_than_ifmap():
    with pytest.raises(TopologyValidationError):
        LayerSpec("conv", LayerKind.CONV, 2, 2, 3, 3, 1, 1)


def test_fc_block_must_trail_in_hybrid_mode():
    topology = parse_topology(
        HEADER
        + "fc1,1,1,1,1,16,16,1,Dense\n"
        + "flat,1,1,1,1,16,16,1,Flatten\n"
        + "fc2,1,1,1,1,16,4,1,Dense\n"
    )
    hybrid = errors(validate(topology, hybrid_mode=True))
    assert [f.layer for f in hybrid] == ["flat"]
    assert "FC block must be trailing" in hybrid[0].message
    assert errors(validate(topology, hybrid_mode=False)) == []


def test_flatten_width_warning():
    lenet = bundled_topology("lenet_mnist")
    findings = validate(lenet, hybrid_mode=True, array_pes=256)
    assert [f.severity for f in findings] == [Severity.WARNING]
    assert findings[0].layer == "fc1"
    assert validate(lenet, hybrid_mode=True, array_pes=1024) == []


def test_shape_chain_mismatch():
    topology = parse_topology(
        HEADER + "conv1,8,8,3,3,1,4,1,Conv\n" + "conv2,6,6,3,3,3,4,1,Conv\n"
    )
    found = errors(validate(topology, hybrid_mode=False))
    assert [f.layer for f in found] == ["conv2"]


def test_padded_halo_chains():
    padded = parse_topology(
        HEADER + "conv1,8,8,3,3,1,4,1,Conv\n" + "conv2,8,8,3,3,4,4,1,Conv\n"
    )
    assert validate(padded, hybrid_mode=False) == []
    odd = parse_topology(
        HEADER + "conv1,8,8,3,3,1,4,1,Conv\n" + "conv2,7,7,3,3,4,4,1,Conv\n"
    )
    assert errors(validate(odd, hybrid_mode=False))


def test_flatten_size_must_match_its_input():
    topology = parse_topology(
        HEADER + "conv1,8,8,3,3,1,4,1,Conv\n" + "flat,6,6,1,1,4,100,1,Flatten\n"
    )
    assert any("flatten declares" in f.message for f in validate(topology, False))


def test_load_topology_names_from_file(tmp_path, tiny_csv):
    path = tmp_path / "tiny_cifar10.csv"
    path.write_text(tiny_csv)
    topology = load_topology(path)
    assert topology.name == "tiny_cifar10"
    assert topology.dataset_tag == "cifar10"
    assert parse_topology(topology.to_csv()).layers == topology.layers


def test_resolve_topology(tmp_path):
    assert resolve_topology("lenet_mnist").name == "lenet_mnist"
    with pytest.raises(FileNotFoundError):
        resolve_topology(tmp_path / "missing.csv")
