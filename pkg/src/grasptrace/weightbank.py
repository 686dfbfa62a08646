"""Built-in "desk" network weights for tabletop RGB-D scenes.

Every channel is constructed explicitly rather than trained:

* conv1: oriented derivative-of-Gaussian edge filters on luminance, split
  by contrast polarity (4 orientations x 2 signs), normalized so a unit
  luminance step perpendicular to the filter responds with G1.
* conv2: smoothed polarity passes and orientation energies, plus a
  floored copy of each vertical polarity taken before pooling blurs
  magnitudes together, and seeded distractor mixes for the consistency
  ranking to reject.
* conv3: polarity/energy passes, per-polarity stripe bands (the floored
  vertical edges that cylinder label striping produces in bulk) each
  exposed with a capped twin so the next layer can AND the two polarities
  - striping is the only surface where both edge polarities coexist
  within a cell or two, while every box-born vertical is locally
  one-signed - and high-contrast-band polarities that only "face vs
  table" rims can reach.
* conv4: end-stopped corner detectors (an edge that stops is a corner;
  one that continues is penalized away), straight rim-run integrators,
  texture blobs, and texture-gated shoulder detectors.
* conv5: object anchors that AND several conv4 cues together and veto the
  other object family - box anchors die wherever shading texture lurks
  below, cylinder anchors are texture-dominant so no flat-faced object
  can reach them - plus always-on energy blobs so any training set yields
  several rankable roots.

The numeric constants are tuned against the bundled scene renderer
(table/lighting colors, object color range); they are not meaningful for
arbitrary imagery.
"""
from __future__ import annotations

import math

import numpy as np

from .layers import CONV, MAXPOOL, LayerSpec
from .network import NetworkSpec, WeightSet

DESK_TAPS = ("conv-5", "conv-4", "conv-3")

LUMA = np.array([0.299, 0.587, 0.114])
_SIGMA = 1.4
_SEED = 61409

# ---- contrast calibration -------------------------------------------------
G1 = 8.0            # edge gain
B1 = -0.05          # conv1 bias: mutes quantization speckle
B_TFLOOR = -0.45    # conv2: vertical polarity past any face-vs-face edge
B_HI = -1.55        # conv3: only "vs table" top rims reach this band
TEX_CAP = 0.15      # per-cell clamp used to AND the two stripe polarities
DISTRACTOR_SCALE = 0.08
B_DISTRACTOR = -0.02

# conv2 channel indices
C2_E0, C2_E1, C2_E2, C2_E3 = 8, 9, 10, 11
C2_P0F, C2_P4F = 12, 13                     # floored vertical polarities

# conv3 channel indices
P0, P1, P2, P3, P4, P5, P6, P7 = range(8)   # passes of conv2 0..7
TEX0, TEX0C = 8, 9                          # stripe band, bright-right
TEX4, TEX4C = 10, 15                        # stripe band, bright-left
DEN = 11                                    # diagonal energy
H0, H4, H2 = 12, 13, 14                     # high band polarities

CONV3_CHANNELS = (
    "pol-right", "pol-downright", "pol-below", "pol-downleft",
    "pol-left", "pol-upleft", "pol-above", "pol-upright",
    "tex-right", "tex-right-cap", "tex-left", "denergy",
    "hi-right", "hi-left", "hi-below", "tex-left-cap",
)

# conv4 channel indices
TBL, TBR, FTL, FTR = 0, 1, 2, 3             # corners (top-back / front-top)
RBR, RFR, LRR, RRR = 4, 5, 6, 7             # rim runs (back/front/left/right)
VTB, SHL, SHR, ARC = 8, 9, 10, 11           # texture blob, shoulders, cap arc
EN, VE, HE, FF = 12, 13, 14, 15             # energy blobs, front-face band
TXB = 16                                    # texture just below

CONV4_CHANNELS = (
    "corner-top-back-left", "corner-top-back-right",
    "corner-front-top-left", "corner-front-top-right",
    "run-back-rim", "run-front-rim", "run-left-rim", "run-right-rim",
    "texture-blob", "shoulder-left", "shoulder-right", "cap-arc",
    "energy", "venergy", "henergy", "front-face", "texture-below",
)

# conv5 channel indices
BOX_A, CYL_A = 0, 1
BOX_TR, BOX_FTL, BOX_FTR = 2, 3, 4
CYL_R, CYL_SIDE, BOX_RIM, CYL_CAP, FRONT = 5, 6, 7, 8, 9
EN_B, VE_B, HE_B, RIM_ANY = 10, 11, 12, 13

CONV5_CHANNELS = (
    "box-top-back-left", "cyl-shoulder-left",
    "box-top-back-right", "box-front-top-left", "box-front-top-right",
    "cyl-shoulder-right", "cyl-side", "box-rim", "cyl-cap", "front-face",
    "energy", "venergy", "henergy", "rim-any",
)

_G3 = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0


def desk_network_spec() -> NetworkSpec:
    return NetworkSpec((
        LayerSpec(CONV, kernel=5, padding=2, out_channels=8,
                  name="conv1", tap="conv-1"),
        LayerSpec(MAXPOOL, kernel=2, stride=2, name="pool1"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=16,
                  name="conv2", tap="conv-2"),
        LayerSpec(MAXPOOL, kernel=2, stride=2, name="pool2"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=16,
                  name="conv3", tap="conv-3"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=24,
                  name="conv4", tap="conv-4"),
        LayerSpec(CONV, kernel=3, padding=1, out_channels=24,
                  name="conv5", tap="conv-5"),
    ), input_channels=3, preprocess=("rgb unit-range",))


def _edge_kernel(theta: float, k: int = 5, sigma: float = _SIGMA) -> np.ndarray:
    """Directional derivative of a Gaussian, normalized so that a unit
    luminance step perpendicular to `theta` responds with 1.0."""
    half = k // 2
    ys, xs = np.mgrid[-half:half + 1, -half:half + 1].astype(float)
    along = xs * math.cos(theta) + ys * math.sin(theta)
    g = np.exp(-(xs ** 2 + ys ** 2) / (2.0 * sigma ** 2))
    kern = along * g
    step = (along > 0).astype(float) + 0.5 * (along == 0)
    return kern / float((kern * step).sum())


def _conv1(rng) -> tuple[np.ndarray, np.ndarray]:
    w = np.zeros((8, 3, 5, 5))
    for i, theta in enumerate(np.arange(4) * math.pi / 4.0):
        kern = _edge_kernel(theta) * G1
        for ch in range(3):
            w[i, ch] = kern * LUMA[ch]
            w[i + 4, ch] = -kern * LUMA[ch]
    return w, np.full(8, B1)


def _conv2(rng) -> tuple[np.ndarray, np.ndarray]:
    w = np.zeros((16, 8, 3, 3))
    bias = np.zeros(16)
    for j in range(8):              # smoothed polarity passes
        w[j, j] = _G3
    for t in range(4):              # orientation energies
        w[8 + t, t] = _G3
        w[8 + t, 4 + t] = _G3
    # Floored vertical polarities, taken before pooling blurs magnitudes:
    # the floor sits above every face-vs-face edge, so only label-stripe
    # boundaries and object silhouettes get through.
    w[C2_P0F, 0] = _G3
    bias[C2_P0F] = B_TFLOOR
    w[C2_P4F, 4] = _G3
    bias[C2_P4F] = B_TFLOOR
    for j in range(14, 16):
        w[j] = rng.normal(scale=DISTRACTOR_SCALE, size=(8, 3, 3))
        bias[j] = B_DISTRACTOR
    return w, bias


def _conv3(rng) -> tuple[np.ndarray, np.ndarray]:
    w = np.zeros((16, 16, 3, 3))
    bias = np.zeros(16)
    for j in range(8):              # keep conv2 passes (low band)
        w[j, j] = _G3
    # Per-polarity stripe bands.  Each comes with a capped twin (same
    # input, bias shifted by the cap) so conv4 can form
    # min(band, cap) = band - twin and require BOTH polarities: a stripe
    # field interleaves them within a cell or two, while silhouettes and
    # face edges are one-signed there, saturate at the cap, and get
    # cancelled exactly by the conv4 bias.
    for band, capped, src in ((TEX0, TEX0C, C2_P0F),
                              (TEX4, TEX4C, C2_P4F)):
        w[band, src] = _G3
        bias[band] = -0.01
        w[capped, src] = _G3
        bias[capped] = -0.01 - TEX_CAP
    w[DEN, C2_E1] = _G3
    w[DEN, C2_E3] = _G3
    for hi, src in ((H0, 0), (H4, 4), (H2, 2)):
        w[hi, src] = _G3            # high contrast band
        bias[hi] = B_HI
    return w, bias


def _put(w: np.ndarray, out_ch: int, in_ch: int, cells, weight: float):
    share = weight / len(cells)
    for r, c in cells:
        w[out_ch, in_ch, r, c] += share


_ALL9 = [(r, c) for r in range(3) for c in range(3)]
_ROW2 = [(2, 0), (2, 1), (2, 2)]

# ---- conv4 shape constants ------------------------------------------------
C4_ENDSTOP = 0.7    # penalty on an edge continuing past a corner
C4_TAU = 0.10       # corner firing threshold, strong-band corners
C4_TAU_FT = 0.50    # front-top corners need both arms, not one rim
W_TEX = 8.0         # texture-to-edge magnitude balance


def _tex(w: np.ndarray, out_ch: int, cells, weight: float) -> float:
    """Bipolar texture term: weight * avg over `cells` of
    min(tex-right, cap) + min(tex-left, cap).

    Returns the bias shift (-weight * cap) that turns the sum into an AND
    of the two polarities; positive arms add it, vetoes may discard it.
    """
    for band, capped in ((TEX0, TEX0C), (TEX4, TEX4C)):
        _put(w, out_ch, band, cells, weight)
        _put(w, out_ch, capped, cells, -weight)
    return -weight * TEX_CAP


def _conv4(rng) -> tuple[np.ndarray, np.ndarray]:
    w = np.zeros((24, 16, 3, 3))
    bias = np.zeros(24)

    # End-stopped corners. Arms sum to 1.0; continuations are penalized.
    _put(w, TBL, H2, [(1, 1), (1, 2)], 1.0)       # back rim running right
    _put(w, TBL, H0, [(1, 1), (2, 1)], 1.0)       # left top rim running down
    _put(w, TBL, H2, [(1, 0)], -C4_ENDSTOP)
    _put(w, TBL, H0, [(0, 1)], -C4_ENDSTOP)
    bias[TBL] = -C4_TAU

    _put(w, TBR, H2, [(1, 0), (1, 1)], 1.0)
    _put(w, TBR, H4, [(1, 1), (2, 1)], 1.0)
    _put(w, TBR, H2, [(1, 2)], -C4_ENDSTOP)
    _put(w, TBR, H4, [(0, 1)], -C4_ENDSTOP)
    bias[TBR] = -C4_TAU

    # Front-top corners live in the low band (face-vs-face rims).  They do
    # fire on cap front rims too; the anchors above them sort that out
    # with the texture blobs, which a 3x3 linear kernel here could not do
    # without also tripping on one-signed silhouette edges.
    _put(w, FTL, P6, [(1, 1), (1, 2)], 1.0)
    _put(w, FTL, P0, [(0, 1), (1, 1), (2, 1)], 0.8)
    _put(w, FTL, P6, [(1, 0)], -C4_ENDSTOP)
    bias[FTL] = -C4_TAU_FT

    _put(w, FTR, P6, [(1, 0), (1, 1)], 1.0)
    _put(w, FTR, P4, [(0, 1), (1, 1), (2, 1)], 0.8)
    _put(w, FTR, P6, [(1, 2)], -C4_ENDSTOP)
    bias[FTR] = -C4_TAU_FT

    # Straight rim integrators.
    _put(w, RBR, H2, [(1, 0), (1, 1), (1, 2)], 1.0)
    bias[RBR] = -0.02
    _put(w, RFR, P6, [(1, 0), (1, 1), (1, 2)], 1.0)
    bias[RFR] = -0.02
    _put(w, LRR, H0, [(0, 1), (1, 1), (2, 1)], 1.0)
    bias[LRR] = -0.02
    _put(w, RRR, H4, [(0, 1), (1, 1), (2, 1)], 1.0)
    bias[RRR] = -0.02

    # Texture blobs: dense bipolar striping.
    bias[VTB] = _tex(w, VTB, _ALL9, W_TEX) - 0.05
    bias[TXB] = (_tex(w, TXB, [(1, 0), (1, 1), (1, 2)], W_TEX * 0.35)
                 + _tex(w, TXB, _ROW2, W_TEX * 0.65) - 0.03)

    # Shoulders: a soft vertical boundary with texture underneath.  A box
    # silhouette also has the vertical, but in the strong band, so that
    # band subtracts.
    _put(w, SHL, P0, [(0, 1), (1, 1)], 0.3)
    _put(w, SHL, H0, [(1, 1), (2, 1)], -0.6)
    bias[SHL] = _tex(w, SHL, _ROW2, W_TEX * 0.7) - 0.30

    _put(w, SHR, P4, [(0, 1), (1, 1)], 0.3)
    _put(w, SHR, H4, [(1, 1), (2, 1)], -0.6)
    bias[SHR] = _tex(w, SHR, _ROW2, W_TEX * 0.7) - 0.30

    # Cap arc: a horizontal rim over texture, diagonal flanks.
    _put(w, ARC, H2, [(0, 1), (1, 1)], 0.1)
    _put(w, ARC, DEN, [(1, 0), (1, 2)], 0.1)
    bias[ARC] = _tex(w, ARC, _ROW2, W_TEX * 0.7) - 0.10

    # Generic channels: always-on energy blobs and the front-face band.
    for src in (P0, P2, P4, P6):
        _put(w, EN, src, _ALL9, 0.25)
    _put(w, VE, P0, _ALL9, 0.5)
    _put(w, VE, P4, _ALL9, 0.5)
    _put(w, HE, P2, _ALL9, 0.5)
    _put(w, HE, P6, _ALL9, 0.5)
    _put(w, FF, P6, _ALL9, 1.0)
    bias[FF] = -0.02

    for j in range(17, 24):
        w[j, :10] = rng.normal(scale=DISTRACTOR_SCALE, size=(10, 3, 3))
        bias[j] = B_DISTRACTOR
    return w, bias


# ---- conv5 shape constants ------------------------------------------------
C5_TEXVETO = 2.5    # box anchors die wherever texture lurks below
C5_BOXVETO = 0.5    # cylinder anchors reject strong-band corners
C5_DUST = 0.1       # keeps generic children reachable from anchors
B5_BOX = 0.08
B5_CYL = 0.10


def _conv5(rng) -> tuple[np.ndarray, np.ndarray]:
    w = np.zeros((24, 24, 3, 3))
    bias = np.zeros(24)

    def texveto(ch):
        _put(w, ch, VTB, _ALL9, -C5_TEXVETO)
        _put(w, ch, TXB, _ROW2, -C5_TEXVETO)
        _put(w, ch, TXB, [(1, 0), (1, 1), (1, 2)], -C5_TEXVETO * 0.6)
        _put(w, ch, SHL, _ALL9, -1.0)
        _put(w, ch, SHR, _ALL9, -1.0)
        _put(w, ch, ARC, _ALL9, -0.8)

    def boxveto(ch):
        # Only the front-top corners are safe sources here: the strong-band
        # corners also trip on the steep flanks of a cap rim.
        for src in (FTL, FTR):
            _put(w, ch, src, _ALL9, -C5_BOXVETO)

    def dust(ch):
        for src in (EN, VE, HE):
            _put(w, ch, src, [(1, 1)], C5_DUST)

    # Box anchors: corner + the two rim runs leaving it, no texture below.
    _put(w, BOX_A, TBL, [(1, 1)], 1.0)
    _put(w, BOX_A, RBR, [(1, 2)], 0.5)
    _put(w, BOX_A, LRR, [(2, 1)], 0.5)
    texveto(BOX_A)
    dust(BOX_A)
    bias[BOX_A] = -B5_BOX

    _put(w, BOX_TR, TBR, [(1, 1)], 1.0)
    _put(w, BOX_TR, RBR, [(1, 0)], 0.5)
    _put(w, BOX_TR, RRR, [(2, 1)], 0.5)
    texveto(BOX_TR)
    dust(BOX_TR)
    bias[BOX_TR] = -B5_BOX

    _put(w, BOX_FTL, FTL, [(1, 1)], 1.0)
    _put(w, BOX_FTL, RFR, [(1, 2)], 0.5)
    _put(w, BOX_FTL, LRR, [(0, 1)], 0.3)
    texveto(BOX_FTL)
    dust(BOX_FTL)
    bias[BOX_FTL] = -B5_BOX * 0.5

    _put(w, BOX_FTR, FTR, [(1, 1)], 1.0)
    _put(w, BOX_FTR, RFR, [(1, 0)], 0.5)
    _put(w, BOX_FTR, RRR, [(0, 1)], 0.3)
    texveto(BOX_FTR)
    dust(BOX_FTR)
    bias[BOX_FTR] = -B5_BOX * 0.5

    _put(w, BOX_RIM, RBR, [(1, 1)], 1.0)
    _put(w, BOX_RIM, LRR, [(1, 0)], 0.35)
    _put(w, BOX_RIM, RRR, [(1, 2)], 0.35)
    texveto(BOX_RIM)
    dust(BOX_RIM)
    bias[BOX_RIM] = -B5_BOX

    # Cylinder anchors: texture terms dominate, geometry only steers.
    _put(w, CYL_A, SHL, [(1, 1)], 1.0)
    _put(w, CYL_A, VTB, _ROW2, 0.4)
    _put(w, CYL_A, ARC, [(0, 1), (0, 2)], 0.2)
    boxveto(CYL_A)
    dust(CYL_A)
    bias[CYL_A] = -B5_CYL

    _put(w, CYL_R, SHR, [(1, 1)], 1.0)
    _put(w, CYL_R, VTB, _ROW2, 0.4)
    _put(w, CYL_R, ARC, [(0, 0), (0, 1)], 0.2)
    boxveto(CYL_R)
    dust(CYL_R)
    bias[CYL_R] = -B5_CYL

    _put(w, CYL_SIDE, VTB, [(1, 1)], 0.6)
    _put(w, CYL_SIDE, VTB, [c for c in _ALL9 if c != (1, 1)], 0.4)
    boxveto(CYL_SIDE)
    dust(CYL_SIDE)
    bias[CYL_SIDE] = -B5_CYL * 0.5

    _put(w, CYL_CAP, ARC, [(1, 1)], 1.0)
    _put(w, CYL_CAP, TXB, _ROW2, 0.4)
    _put(w, CYL_CAP, SHL, [(1, 0)], 0.2)
    _put(w, CYL_CAP, SHR, [(1, 2)], 0.2)
    boxveto(CYL_CAP)
    dust(CYL_CAP)
    bias[CYL_CAP] = -B5_CYL

    # Generic vocabulary, kept deliberately faint: it must stay available as
    # fallback but never outrank the shape anchors on response consistency,
    # or models root on channels any object can light up.
    _put(w, FRONT, FF, _ALL9, 1.0)
    _put(w, FRONT, VTB, _ALL9, -0.5)
    dust(FRONT)
    bias[FRONT] = -0.02
    _put(w, EN_B, EN, _ALL9, 0.4)
    _put(w, VE_B, VE, _ALL9, 0.4)
    _put(w, HE_B, HE, _ALL9, 0.4)
    for src in (RBR, RFR, LRR, RRR):
        _put(w, RIM_ANY, src, [(1, 1)], 0.5)

    for j in range(14, 24):
        w[j, :17] = rng.normal(scale=DISTRACTOR_SCALE * 0.5, size=(17, 3, 3))
        bias[j] = B_DISTRACTOR - 0.04
    return w, bias


def build_desk_bank() -> tuple[NetworkSpec, WeightSet]:
    """Construct the full weight bank. Deterministic."""
    rng = np.random.default_rng(_SEED)
    net = desk_network_spec()
    kernels: dict[str, np.ndarray] = {}
    biases: dict[str, np.ndarray] = {}
    for name, builder in (("conv1", _conv1), ("conv2", _conv2),
                          ("conv3", _conv3), ("conv4", _conv4),
                          ("conv5", _conv5)):
        kernels[name], biases[name] = builder(rng)
    weights = WeightSet(kernels, biases)
    weights.validate(net)
    return net, weights


_BANK: tuple[NetworkSpec, WeightSet] | None = None


def get_desk_bank() -> tuple[NetworkSpec, WeightSet]:
    """Build once per process; the construction is deterministic."""
    global _BANK
    if _BANK is None:
        _BANK = build_desk_bank()
    return _BANK
