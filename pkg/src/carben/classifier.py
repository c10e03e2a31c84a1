"""Self-contained differentiable CNN classifier.

Fixed architecture for 3x32x32 inputs:
    conv3x3 (3->8, pad 1) -> ReLU -> maxpool 2
    -> conv3x3 (8->16, pad 1) -> ReLU -> maxpool 2
    -> flatten (1024) -> dense (1024->K) -> softmax

Backpropagation is written out by hand, including the exact gradient with
respect to the input image (what the attack engine consumes). Max-pool
routes gradient to the first row-major argmax in each window.

Determinism: all randomness (weight init, shuffling, the synthetic dataset)
comes from SplitMix64, a 64-bit shift/multiply generator, so results are
reproducible bit for bit for a given seed on one platform.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view

ARCH_TAG = "cnn32-v1"
_MASK64 = (1 << 64) - 1


class WeightsFormatError(ValueError):
    """CPW1 container violations (bad magic, header, or values)."""


class WeightsPayloadError(WeightsFormatError):
    """CPW1 payload length does not match the declared shapes."""


class DatasetFormatError(ValueError):
    """Malformed CIFAR-10 binary batch."""


class SplitMix64:
    """Seedable, platform-independent 64-bit shift/multiply PRNG."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        return lo + (hi - lo) * ((self.next_u64() >> 11) * 2.0**-53)

    def uniform_array(self, shape, lo: float, hi: float) -> np.ndarray:
        n = int(np.prod(shape))
        vals = [self.uniform(lo, hi) for _ in range(n)]
        return np.array(vals, dtype=np.float64).reshape(shape)

    def randint(self, n: int) -> int:
        return self.next_u64() % n

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.randint(i + 1)
            items[i], items[j] = items[j], items[i]


@dataclass
class ModelWeights:
    arch: str
    tensors: dict[str, np.ndarray]
    class_names: list[str]

    _ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "dense_w", "dense_b")

    def __post_init__(self):
        k = len(self.class_names)
        expected = {
            "conv1_w": (8, 3, 3, 3),
            "conv1_b": (8,),
            "conv2_w": (16, 8, 3, 3),
            "conv2_b": (16,),
            "dense_w": (k, 1024),
            "dense_b": (k,),
        }
        if self.arch != ARCH_TAG:
            raise WeightsFormatError(f"unsupported architecture tag {self.arch!r}")
        if set(self.tensors) != set(expected):
            raise WeightsFormatError("missing or extra tensors for the architecture")
        for name, shape in expected.items():
            t = self.tensors[name]
            if t.shape != shape:
                raise WeightsFormatError(f"tensor {name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise WeightsFormatError(f"tensor {name} contains non-finite values")
            self.tensors[name] = np.asarray(t, dtype=np.float32)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


@dataclass
class PredictionResult:
    probabilities: np.ndarray
    predicted_label: int
    confidence: float
    correct: bool | None = None


@dataclass
class LabeledDataset:
    images: list[np.ndarray]
    labels: list[int]
    class_names: list[str]
    provenance: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels length mismatch")
        k = len(self.class_names)
        if any(not (0 <= y < k) for y in self.labels):
            raise ValueError("label out of range")

    def __len__(self) -> int:
        return len(self.images)


# ---------------------------------------------------------------------------
# Layer math (all in float64 internally; weights stored as float32)
# ---------------------------------------------------------------------------


def _im2col(x: np.ndarray) -> np.ndarray:
    """(B, C, H, W) -> (B, H*W, C*9) patch matrix for a 3x3 pad-1 conv."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # (B, C, H, W, 3, 3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, h * w, c * 9)


def _col2im(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Adjoint of _im2col: (B, H*W, C*9) -> (B, C, H, W)."""
    b = cols.shape[0]
    patches = cols.reshape(b, h, w, c, 3, 3)
    xp = np.zeros((b, c, h + 2, w + 2), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            xp[:, :, i : i + h, j : j + w] += patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return xp[:, :, 1 : 1 + h, 1 : 1 + w]


def _conv_forward(x: np.ndarray, wt: np.ndarray, b: np.ndarray):
    bsz, _, h, w = x.shape
    f = wt.shape[0]
    cols = _im2col(x)
    out = cols @ wt.reshape(f, -1).T + b  # (B, H*W, F)
    return out.transpose(0, 2, 1).reshape(bsz, f, h, w), cols


def _conv_backward(dout: np.ndarray, cols: np.ndarray, wt: np.ndarray, in_c: int):
    bsz, f, h, w = dout.shape
    dflat = dout.reshape(bsz, f, h * w).transpose(0, 2, 1)  # (B, H*W, F)
    dw = np.einsum("bpf,bpk->fk", dflat, cols).reshape(wt.shape)
    db = dflat.sum(axis=(0, 1))
    dcols = dflat @ wt.reshape(f, -1)
    dx = _col2im(dcols, in_c, h, w)
    return dx, dw, db


def _maxpool_forward(x: np.ndarray):
    b, c, h, w = x.shape
    win = x.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)  # first max in row-major window order
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _maxpool_backward(dout: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    b, c, h2, w2 = dout.shape
    dwin = np.zeros((b, c, h2, w2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)


def _forward_batch(params: dict[str, np.ndarray], x: np.ndarray):
    """Forward pass on (B, 3, 32, 32); returns logits and the activation cache."""
    z1, cols1 = _conv_forward(x, params["conv1_w"], params["conv1_b"])
    a1 = np.maximum(z1, 0.0)
    p1, idx1 = _maxpool_forward(a1)
    z2, cols2 = _conv_forward(p1, params["conv2_w"], params["conv2_b"])
    a2 = np.maximum(z2, 0.0)
    p2, idx2 = _maxpool_forward(a2)
    flat = p2.reshape(x.shape[0], -1)
    logits = flat @ params["dense_w"].T + params["dense_b"]
    cache = {"z1": z1, "cols1": cols1, "idx1": idx1, "z2": z2, "cols2": cols2, "idx2": idx2, "flat": flat}
    return logits, cache


def _backward_batch(params, cache, dlogits):
    """Gradient of a scalar loss w.r.t. input and all parameters."""
    b = dlogits.shape[0]
    grads = {}
    grads["dense_w"] = dlogits.T @ cache["flat"]
    grads["dense_b"] = dlogits.sum(axis=0)
    dflat = dlogits @ params["dense_w"]
    dp2 = dflat.reshape(b, 16, 8, 8)
    da2 = _maxpool_backward(dp2, cache["idx2"], 16, 16)
    dz2 = da2 * (cache["z2"] > 0.0)
    dp1, grads["conv2_w"], grads["conv2_b"] = _conv_backward(dz2, cache["cols2"], params["conv2_w"], 8)
    da1 = _maxpool_backward(dp1, cache["idx1"], 32, 32)
    dz1 = da1 * (cache["z1"] > 0.0)
    dx, grads["conv1_w"], grads["conv1_b"] = _conv_backward(dz1, cache["cols1"], params["conv1_w"], 3)
    return dx, grads


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _params64(weights: ModelWeights) -> dict[str, np.ndarray]:
    return {k: v.astype(np.float64) for k, v in weights.tensors.items()}


def _check_input(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.shape != (3, 32, 32):
        raise ValueError(f"expected a 3x32x32 image, got shape {arr.shape}")
    return arr


def forward(weights: ModelWeights, image: np.ndarray, true_label: int | None = None) -> PredictionResult:
    """Class probabilities for one image."""
    x = _check_input(image)[None]
    logits, _ = _forward_batch(_params64(weights), x)
    probs = _softmax(logits)[0]
    pred = int(probs.argmax())
    return PredictionResult(
        probabilities=probs,
        predicted_label=pred,
        confidence=float(probs[pred]),
        correct=None if true_label is None else pred == true_label,
    )


def loss_and_input_grad(weights: ModelWeights, image: np.ndarray, label: int):
    """Cross-entropy loss -log p[label] and its exact input gradient."""
    if not 0 <= label < weights.num_classes:
        raise ValueError("label out of range")
    x = _check_input(image)[None]
    params = _params64(weights)
    logits, cache = _forward_batch(params, x)
    z = logits[0]
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    loss = float(lse - z[label])
    probs = _softmax(logits)
    dlogits = probs.copy()
    dlogits[0, label] -= 1.0
    dx, _ = _backward_batch(params, cache, dlogits)
    return loss, dx[0].astype(np.float32)


def predict_loss(weights: ModelWeights, image: np.ndarray, label: int):
    """One forward pass: (cross-entropy loss, predicted label, probabilities)."""
    x = _check_input(image)[None]
    logits, _ = _forward_batch(_params64(weights), x)
    z = logits[0]
    zmax = z.max()
    lse = zmax + np.log(np.exp(z - zmax).sum())
    probs = _softmax(logits)[0]
    return float(lse - z[label]), int(z.argmax()), probs


def init_weights(seed: int, class_names: list[str]) -> ModelWeights:
    """He-uniform initialization from the seeded PRNG; zero biases."""
    rng = SplitMix64(seed)
    k = len(class_names)
    tensors = {}
    for name, shape, fan_in in (
        ("conv1_w", (8, 3, 3, 3), 27),
        ("conv2_w", (16, 8, 3, 3), 72),
        ("dense_w", (k, 1024), 1024),
    ):
        limit = float(np.sqrt(6.0 / fan_in))
        tensors[name] = rng.uniform_array(shape, -limit, limit).astype(np.float32)
    tensors["conv1_b"] = np.zeros(8, dtype=np.float32)
    tensors["conv2_b"] = np.zeros(16, dtype=np.float32)
    tensors["dense_b"] = np.zeros(k, dtype=np.float32)
    return ModelWeights(ARCH_TAG, tensors, list(class_names))


def train(
    dataset: LabeledDataset,
    epochs: int,
    learning_rate: float,
    momentum: float,
    batch_size: int,
    seed: int,
    batch_perturb=None,
) -> ModelWeights:
    """SGD with momentum on cross-entropy; deterministic for a given seed.

    batch_perturb, when given, maps (images (B,3,32,32), labels, current
    ModelWeights) to perturbed images before the gradient step; used for
    attack-in-the-loop training.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if epochs < 0 or learning_rate <= 0 or batch_size <= 0 or momentum < 0:
        raise ValueError("non-positive hyperparameter")
    weights = init_weights(seed, dataset.class_names)
    params = _params64(weights)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = SplitMix64(seed ^ 0xA5A5A5A5A5A5A5A5)
    xs = np.stack([np.asarray(im, dtype=np.float64) for im in dataset.images])
    ys = np.asarray(dataset.labels, dtype=np.int64)

    for _ in range(epochs):
        order = list(range(len(dataset)))
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            sel = order[start : start + batch_size]
            xb, yb = xs[sel], ys[sel]
            if batch_perturb is not None:
                snap = ModelWeights(ARCH_TAG, {k: v.astype(np.float32) for k, v in params.items()}, dataset.class_names)
                xb = np.asarray(batch_perturb(xb, yb, snap), dtype=np.float64)
            logits, cache = _forward_batch(params, xb)
            probs = _softmax(logits)
            dlogits = probs.copy()
            dlogits[np.arange(len(sel)), yb] -= 1.0
            dlogits /= len(sel)
            _, grads = _backward_batch(params, cache, dlogits)
            for name in params:
                velocity[name] = momentum * velocity[name] - learning_rate * grads[name]
                params[name] = params[name] + velocity[name]
    return ModelWeights(ARCH_TAG, {k: v.astype(np.float32) for k, v in params.items()}, dataset.class_names)


def mean_loss(weights: ModelWeights, dataset: LabeledDataset) -> float:
    """Mean cross-entropy over a dataset (evaluation helper)."""
    params = _params64(weights)
    xs = np.stack([np.asarray(im, dtype=np.float64) for im in dataset.images])
    logits, _ = _forward_batch(params, xs)
    zmax = logits.max(axis=1, keepdims=True)
    lse = zmax[:, 0] + np.log(np.exp(logits - zmax).sum(axis=1))
    return float((lse - logits[np.arange(len(dataset)), dataset.labels]).mean())


def accuracy(weights: ModelWeights, dataset: LabeledDataset) -> float:
    params = _params64(weights)
    xs = np.stack([np.asarray(im, dtype=np.float64) for im in dataset.images])
    logits, _ = _forward_batch(params, xs)
    return float((logits.argmax(axis=1) == np.asarray(dataset.labels)).mean())


# ---------------------------------------------------------------------------
# CPW1 weight container
# ---------------------------------------------------------------------------

_MAGIC = b"CPW1\n"


def save_weights(weights: ModelWeights, path: str) -> None:
    header = {
        "arch": weights.arch,
        "class_names": weights.class_names,
        "tensors": [{"name": n, "shape": list(weights.tensors[n].shape)} for n in ModelWeights._ORDER],
    }
    hbytes = json.dumps(header, separators=(",", ":")).encode("utf-8")
    payload = b"".join(weights.tensors[n].astype("<f4").tobytes() for n in ModelWeights._ORDER)
    with open(path, "wb") as f:
        f.write(_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + payload)


def load_weights(path: str) -> ModelWeights:
    with open(path, "rb") as f:
        blob = f.read()
    if not blob.startswith(_MAGIC):
        raise WeightsFormatError("bad magic; not a CPW1 file")
    if len(blob) < len(_MAGIC) + 4:
        raise WeightsFormatError("truncated header length")
    (hlen,) = struct.unpack_from("<I", blob, len(_MAGIC))
    hstart = len(_MAGIC) + 4
    if len(blob) < hstart + hlen:
        raise WeightsFormatError("truncated JSON header")
    try:
        header = json.loads(blob[hstart : hstart + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError("malformed JSON header") from exc
    payload = blob[hstart + hlen :]
    tensors = {}
    pos = 0
    for rec in header.get("tensors", []):
        shape = tuple(rec["shape"])
        nbytes = int(np.prod(shape)) * 4
        if pos + nbytes > len(payload):
            raise WeightsPayloadError(f"payload too short for tensor {rec['name']}")
        tensors[rec["name"]] = np.frombuffer(payload[pos : pos + nbytes], dtype="<f4").reshape(shape).copy()
        pos += nbytes
    if pos != len(payload):
        raise WeightsPayloadError("trailing bytes after declared tensors")
    return ModelWeights(header.get("arch", ""), tensors, list(header.get("class_names", [])))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

SHAPE_CLASSES = ["circle", "square", "triangle", "cross"]


def _hsv_saturated_rgb(rng: SplitMix64) -> np.ndarray:
    """Fully saturated random-hue color (away from gray by construction)."""
    h = rng.uniform(0.0, 6.0)
    i = int(h) % 6
    f = h - int(h)
    p, q, t = 0.0, 1.0 - f, f
    table = [(1, t, p), (q, 1, p), (p, 1, t), (p, q, 1), (t, p, 1), (1, p, q)]
    return np.array(table[i], dtype=np.float64)


def synth_shapes(seed: int, n: int) -> LabeledDataset:
    """Synthetic 32x32 four-class shape dataset; class depends on geometry only.

    Fill color, background, position (+-3 px), and size are randomized per
    sample, so hue/saturation/brightness/contrast and small rotations never
    change the true label.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    rng = SplitMix64(seed)
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    images, labels = [], []
    for i in range(n):
        cls = i % 4
        fill = _hsv_saturated_rgb(rng)
        bg_v = rng.uniform(0.15, 0.85)
        bg = np.clip(np.array([bg_v + rng.uniform(-0.05, 0.05) for _ in range(3)]), 0.0, 1.0)
        cy = 15.5 + (rng.randint(7) - 3)
        cx = 15.5 + (rng.randint(7) - 3)
        r = 6 + rng.randint(5)  # 6..10
        dy, dx = yy - cy, xx - cx
        if cls == 0:
            mask = dy * dy + dx * dx <= r * r
        elif cls == 1:
            mask = np.maximum(np.abs(dy), np.abs(dx)) <= r
        elif cls == 2:
            mask = (dy >= -r) & (dy <= r) & (np.abs(dx) <= (dy + r) / 2.0)
        else:
            t = max(1, r // 3)
            mask = ((np.abs(dx) <= t) & (np.abs(dy) <= r)) | ((np.abs(dy) <= t) & (np.abs(dx) <= r))
        img = np.empty((3, 32, 32), dtype=np.float64)
        for ch in range(3):
            img[ch] = np.where(mask, fill[ch], bg[ch])
        images.append(img.astype(np.float32))
        labels.append(cls)
    return LabeledDataset(images, labels, list(SHAPE_CLASSES), provenance=f"synth:{seed}:{n}")


CIFAR10_CLASSES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]


def load_cifar10(path: str) -> LabeledDataset:
    """Parse a CIFAR-10 binary batch: 3073-byte records, planar RGB pixels."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) == 0 or len(blob) % 3073 != 0:
        raise DatasetFormatError(f"file size {len(blob)} is not a positive multiple of 3073")
    n = len(blob) // 3073
    raw = np.frombuffer(blob, dtype=np.uint8).reshape(n, 3073)
    labels = raw[:, 0].astype(int).tolist()
    if any(y > 9 for y in labels):
        raise DatasetFormatError("label byte exceeds 9")
    pixels = raw[:, 1:].reshape(n, 3, 32, 32).astype(np.float32) / np.float32(255.0)
    return LabeledDataset([pixels[i] for i in range(n)], labels, list(CIFAR10_CLASSES), provenance=f"cifar:{path}")
