from tpu_imac_sim.mptrain.backends import (
    AnalogBackend,
    Backend,
    DigitalBackend,
    FCBackend,
    evaluate,
    predict,
)
from tpu_imac_sim.mptrain.data import LabeledDataset, load_mnist
from tpu_imac_sim.mptrain.export import export_weights, load_exported, read_manifest
from tpu_imac_sim.mptrain.network import Phase
from tpu_imac_sim.mptrain.quantize import sign_binarize, ternarize
from tpu_imac_sim.mptrain.train import (
    TrainHyper,
    TrainState,
    init_state,
    train_step1,
    train_step2,
)
