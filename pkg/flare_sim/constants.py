import math

TENSOR_MAGIC = b"FFTD"
TENSOR_VERSION = 1
TENSOR_MAX_RANK = 4

# Rec. 709 luminance weights (linear RGB).
LUMINANCE_WEIGHTS = (0.2126, 0.7152, 0.0722)

DEFAULT_LIGHT_THRESHOLD = 0.97
BRUTE_FORCE_MAX_SIDE = 64

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

LOSS_WEIGHTS_DEFAULT = (0.5, 0.5, 1.0, 1.0)

LOGVAR_CLAMP = 20.0
# Sigmoid outputs are clamped to [SIGMOID_EPS, 1 - SIGMOID_EPS] to stay inside (0, 1).
SIGMOID_EPS = 1e-7
VAE_HIDDEN = (128, 128)
VAE_LATENT_DIM = 32
KERNEL_ENERGY_FRAC = 0.9

# Augmentation supports, used both to draw plans and to check them.
AUG_GAMMA = (1.8, 2.2)
AUG_RGB_GAIN = (0.5, 1.2)
AUG_NOISE_SCALE = 0.01
AUG_OFFSET = (-0.02, 0.02)
AUG_JITTER_GAIN = (0.8, 3.0)
AUG_ROTATION = (0.0, 2.0 * math.pi)
AUG_TRANSLATION_PX = (-300.0, 300.0)
AUG_SHEAR = (-math.radians(20.0), math.radians(20.0))
AUG_SCALE = (0.8, 1.5)
AUG_BLUR_SIGMA = (0.1, 3.0)

MANIFEST_FILENAME = "manifest.json"
PLAN_MANIFEST_FILENAME = "manifest.jsonl"
IMAGE_SUFFIXES = (".png",)

HEATMAP_DIRNAME = "heatmaps"
DEFAULT_VAE_SIZE = 32

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4
