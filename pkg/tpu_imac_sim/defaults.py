#: Systolic array geometry (processing elements per side)
DEFAULT_ARRAY_ROWS = 32
DEFAULT_ARRAY_COLS = 32

#: Bytes per tensor element in SRAM/LPDDR (FP32)
DEFAULT_WORD_BYTES = 4

#: Base byte addresses of the three trace regions
DEFAULT_IFMAP_OFFSET = 0
DEFAULT_FILTER_OFFSET = 10_000_000
DEFAULT_OFMAP_OFFSET = 20_000_000

#: Cycle cost per output element for layers run outside the array
DEFAULT_AUX_COST_PER_ELEM = 0

#: Logical synapse grid of one IMAC subarray
DEFAULT_SUB_ROWS = 256
DEFAULT_SUB_COLS = 256

#: Device conductances in siemens (1/R_low and 1/R_high)
DEFAULT_G_ON = 100e-6
DEFAULT_G_OFF = 1e-6

#: Read voltage in volts
DEFAULT_V_READ = 0.1

DEFAULT_NEURON_SLOPE = 1.0
DEFAULT_ADC_BITS = 8
DEFAULT_VARIATION_SIGMA = 0.0

#: Variation factors are clipped to 1 +/- this many standard deviations
VARIATION_CLIP_SIGMAS = 6.0

#: Ternary threshold as a fraction of mean(|w|)
TERNARY_THRESHOLD_FACTOR = 0.7

#: Bytes used for one FP32 parameter and bits used for one ternary weight
SRAM_BYTES_PER_PARAM = 4
RRAM_BITS_PER_WEIGHT = 2

#: Guard for the cycle-by-cycle oracle
ORACLE_MAX_PES = 4096
ORACLE_MAX_MACS = 10**8

DEFAULT_LEARNING_RATE = 0.02
DEFAULT_MOMENTUM = 0.9
DEFAULT_BATCH_SIZE = 64
DEFAULT_EPOCHS_STEP1 = 10
DEFAULT_EPOCHS_STEP2 = 5
DEFAULT_SEED = 2023

#: Environment variables read through python-dotenv
ENV_LOG_LEVEL = "TPUIMAC_LOG_LEVEL"
ENV_CONFIG = "TPUIMAC_CONFIG"
ENV_MNIST_DIR = "TPUIMAC_MNIST_DIR"

MANIFEST_FILENAME = "manifest.txt"
COMPARISON_FILENAME = "comparison.csv"
TRACE_SUFFIX = ".trace.csv"

#: Bundled workloads, in the order they are compared
BUNDLED_TOPOLOGIES = (
    "lenet_mnist",
    "vgg9_cifar10",
    "mobilenetv1_cifar10",
    "mobilenetv2_cifar10",
    "resnet18_cifar10",
    "mobilenetv1_cifar100",
    "mobilenetv2_cifar100",
)
