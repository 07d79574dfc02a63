"""Convolutional cost model: inference, exact gradients, training, and
weight serialization.

The network maps a 72x72 height patch plus a 3-value goal offset to a
feasibility probability and a cost estimate. Convolutions are valid,
stride 1; the second kernel is foot-sized (9 px) and the third spans the
longest single-foot action (13 px). Everything is plain numpy: im2col plus
GEMM for the convolutions, explicit reverse-mode gradients, SGD with
momentum. Training supports map-grouped batches in which tasks sharing a
patch reuse one trunk pass; gradients are identical to the per-task
formulation because the trunk gradient is the sum over its tasks.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from terraplan.errors import DivergenceDetected, FormatError, ShapeMismatchError

INPUT_CLIP = (-1.0, 2.0)
GOAL_DIM = 3

# (kind, args): conv = (in_ch, out_ch, kernel); dense widths exclude input
ARCH_FULL = {
    "input": 72,
    "conv": [(1, 16, 3), (16, 32, 9), (32, 32, 13), (32, 32, 3), (32, 32, 3)],
    "pool_after": [3, 4],          # conv indices followed by 2x2 max pooling
    "dense": [1024, 512, 256, 128, 64, 2],
}

ARCH_TINY = {
    "input": 8,
    "conv": [(1, 2, 3), (2, 3, 5)],  # covers both conv code paths
    "pool_after": [1],
    "dense": [8, 6, 2],
}


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """Sliding k*k windows of an NHWC tensor as rows: [N*Ho*Wo, k*k*C].

    Channels-last keeps the window gather cache-friendly and the
    convolution a single 2D GEMM.
    """
    n, h, w, c = x.shape
    ho, wo = h - k + 1, w - k + 1
    s0, s1, s2, s3 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, (n, ho, wo, k, k, c), (s0, s1, s2, s1, s2, s3))
    return view.reshape(n * ho * wo, k * k * c)


class Conv2D:
    """Valid cross-correlation, stride 1, NHWC activations."""

    def __init__(self, in_ch, out_ch, k, rng, dtype, needs_dx=True):
        fan_in = in_ch * k * k
        fan_out = out_ch * k * k
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        self.w = rng.uniform(-bound, bound, (out_ch, in_ch, k, k)).astype(dtype)
        self.b = np.zeros(out_ch, dtype=dtype)
        self.k = k
        self.needs_dx = needs_dx
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._cache = None

    def _wmat(self):
        # [k*k*C, O] with (ki, kj, c) row layout matching _im2col
        return np.ascontiguousarray(
            self.w.transpose(2, 3, 1, 0).reshape(-1, self.w.shape[0]))

    def forward(self, x):
        n, h, w, c = x.shape
        k = self.k
        ho, wo = h - k + 1, w - k + 1
        cols = _im2col(x, k)
        out = cols @ self._wmat() + self.b
        self._cache = (cols, x.shape)
        return out.reshape(n, ho, wo, -1)

    def backward(self, dout):
        cols, x_shape = self._cache
        n, ho, wo, o = dout.shape
        k = self.k
        dm = dout.reshape(-1, o)
        self.gw = (cols.T @ dm).reshape(k, k, x_shape[3], o).transpose(3, 2, 0, 1)
        self.gw = np.ascontiguousarray(self.gw)
        self.gb = dm.sum(0)
        if not self.needs_dx:
            return None
        # dx: full correlation of dout with the flipped kernel
        pad = k - 1
        dpad = np.pad(dout, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        dcols = _im2col(dpad, k)
        wf = np.ascontiguousarray(
            self.w[:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(-1, self.w.shape[1]))
        dx = dcols @ wf
        return dx.reshape(x_shape)

    def params(self):
        return (("weight", self.w, self.gw), ("bias", self.b, self.gb))


class FFTConv2D(Conv2D):
    """Same contract as Conv2D, computed via FFT products.

    For foot- and action-sized kernels the im2col expansion dominates the
    direct GEMM (a 13x13 kernel inflates the input 169-fold), while padded
    FFTs keep both compute and memory near the activation size. Valid
    regions are free of circular wrap because the transform size is at
    least the input size.
    """

    def forward(self, x):
        n, h, w, c = x.shape
        k = self.k
        ho, wo = h - k + 1, w - k + 1
        S = sfft.next_fast_len(h)
        Sw = sfft.next_fast_len(w)
        xf = sfft.rfft2(x, s=(S, Sw), axes=(1, 2))
        wf = sfft.rfft2(self.w.transpose(0, 2, 3, 1), s=(S, Sw), axes=(1, 2))
        yf = np.einsum("nxyc,oxyc->nxyo", xf, np.conj(wf))
        y = sfft.irfft2(yf, s=(S, Sw), axes=(1, 2))
        self._cache = (xf, wf, x.shape, (S, Sw))
        return np.ascontiguousarray(y[:, :ho, :wo, :]) + self.b

    def backward(self, dout):
        xf, wf, x_shape, (S, Sw) = self._cache
        n, h, w, c = x_shape
        k = self.k
        df = sfft.rfft2(dout, s=(S, Sw), axes=(1, 2))
        gwf = np.einsum("nxyc,nxyo->xyco", xf, np.conj(df))
        gw = sfft.irfft2(gwf, s=(S, Sw), axes=(0, 1))[:k, :k]
        self.gw = np.ascontiguousarray(gw.transpose(3, 2, 0, 1)).astype(
            self.w.dtype, copy=False)
        self.gb = dout.sum((0, 1, 2))
        if not self.needs_dx:
            return None
        dxf = np.einsum("nxyo,oxyc->nxyc", df, wf)
        dx = sfft.irfft2(dxf, s=(S, Sw), axes=(1, 2))[:, :h, :w, :]
        return np.ascontiguousarray(dx).astype(self.w.dtype, copy=False)


class MaxPool2:
    """2x2 max pooling, stride 2, NHWC activations."""

    def __init__(self):
        self._cache = None

    def forward(self, x):
        n, h, w, c = x.shape
        r = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
        r = r.reshape(n, h // 2, w // 2, c, 4)
        idx = r.argmax(-1)
        out = np.take_along_axis(r, idx[..., None], -1)[..., 0]
        self._cache = (idx, x.shape)
        return out

    def backward(self, dout):
        idx, x_shape = self._cache
        n, h, w, c = x_shape
        dr = np.zeros((n, h // 2, w // 2, c, 4), dtype=dout.dtype)
        np.put_along_axis(dr, idx[..., None], dout[..., None], -1)
        dr = dr.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
        return np.ascontiguousarray(dr).reshape(x_shape)

    def params(self):
        return ()


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dout):
        return dout * self._mask

    def params(self):
        return ()


class Dense:
    def __init__(self, n_in, n_out, rng, dtype):
        bound = np.sqrt(6.0 / (n_in + n_out))
        self.w = rng.uniform(-bound, bound, (n_out, n_in)).astype(dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, dout):
        self.gw = dout.T @ self._x
        self.gb = dout.sum(0)
        return dout @ self.w

    def params(self):
        return (("weight", self.w, self.gw), ("bias", self.b, self.gb))


class CostNetwork:
    """Feasibility/cost model over (patch, goal) pairs.

    The trunk (convolutions and pooling) sees only the patch; the head
    (fully connected stack) sees trunk features concatenated with the goal
    values. Output unit 0 is the cost (linear), unit 1 the feasibility
    logit.
    """

    def __init__(self, seed: int = 0, dtype=np.float32, arch: dict | None = None):
        self.arch = arch or ARCH_FULL
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.seed = seed

        self.trunk = []
        size = self.arch["input"]
        chain = [size]
        ch = None
        for i, (cin, cout, k) in enumerate(self.arch["conv"]):
            cls = FFTConv2D if (k >= 5 or k * k * cin >= 256) else Conv2D
            self.trunk.append((f"conv{i + 1}",
                               cls(cin, cout, k, rng, self.dtype,
                                   needs_dx=i > 0)))
            self.trunk.append((f"relu_c{i + 1}", ReLU()))
            size = size - k + 1
            chain.append(size)
            if i in self.arch["pool_after"]:
                self.trunk.append((f"pool{i + 1}", MaxPool2()))
                size //= 2
                chain.append(size)
            ch = cout
        self.spatial_chain = chain
        self.feat_dim = ch * size * size

        self.head = []
        n_in = self.feat_dim + GOAL_DIM
        widths = self.arch["dense"]
        for i, n_out in enumerate(widths):
            self.head.append((f"fc{i + 1}", Dense(n_in, n_out, rng, self.dtype)))
            if i < len(widths) - 1:
                self.head.append((f"relu_f{i + 1}", ReLU()))
            n_in = n_out
        if widths[-1] != 2:
            raise ValueError("output layer must have 2 units")

    # -- forward -----------------------------------------------------------

    def _check_patches(self, patches):
        size = self.arch["input"]
        patches = np.asarray(patches, dtype=self.dtype)
        if patches.ndim == 2:
            patches = patches[None]
        if patches.ndim != 3 or patches.shape[1:] != (size, size):
            raise ShapeMismatchError(
                f"expected patches [N, {size}, {size}], got {patches.shape}")
        return patches

    def trunk_forward(self, patches: np.ndarray) -> np.ndarray:
        patches = self._check_patches(patches)
        x = np.clip(patches, INPUT_CLIP[0], INPUT_CLIP[1])[..., None]  # NHWC
        for _, layer in self.trunk:
            x = layer.forward(x)
        return x.reshape(x.shape[0], -1)

    def head_forward(self, feats: np.ndarray, goals: np.ndarray) -> np.ndarray:
        goals = np.asarray(goals, dtype=self.dtype)
        x = np.concatenate([feats, goals.reshape(len(goals), GOAL_DIM)], axis=1)
        for _, layer in self.head:
            x = layer.forward(x)
        return x

    def forward(self, patches, goals):
        """Probability of feasibility and estimated cost; both [N]."""
        feats = self.trunk_forward(patches)
        raw = self.head_forward(feats, np.atleast_2d(goals))
        prob = _sigmoid(raw[:, 1])
        return prob, raw[:, 0]

    # -- backward ----------------------------------------------------------

    def backward(self, d_raw: np.ndarray, task_map: np.ndarray | None = None,
                 n_maps: int | None = None) -> None:
        """Backpropagate output gradients; fills every layer's gw/gb.

        With ``task_map`` given, head inputs were trunk features indexed by
        map (several tasks per patch); the trunk then receives the per-map
        sum of the task feature gradients.
        """
        dx = d_raw
        for _, layer in reversed(self.head):
            dx = layer.backward(dx)
        dfeat = dx[:, :self.feat_dim]
        if task_map is not None:
            agg = np.zeros((n_maps, self.feat_dim), dtype=dfeat.dtype)
            np.add.at(agg, task_map, dfeat)
            dfeat = agg
        size = self.spatial_chain[-1]
        ch = self.arch["conv"][-1][1]
        dx = dfeat.reshape(-1, size, size, ch)
        for _, layer in reversed(self.trunk):
            dx = layer.backward(dx)

    # -- parameters ----------------------------------------------------------

    def named_params(self):
        for name, layer in self.trunk + self.head:
            for pname, p, g in layer.params():
                yield f"{name}.{pname}", p, g

    def get_state(self) -> dict:
        return {name: p.copy() for name, p, _ in self.named_params()}

    def set_state(self, state: dict) -> None:
        for name, p, _ in self.named_params():
            if name not in state:
                raise KeyError(f"missing parameter {name}")
            if state[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}")
            p[...] = state[name].astype(p.dtype)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def loss_terms(raw: np.ndarray, feasible: np.ndarray, cost_label: np.ndarray,
               w_feasible: float, w_costs: float):
    """Per-sample losses and the gradient w.r.t. the two raw outputs.

    Binary cross-entropy on the feasibility logit plus an L1 cost term
    that only exists for feasible labels. Returns (bce, l1, d_raw).
    """
    z = raw[:, 1]
    c = raw[:, 0]
    y = feasible.astype(raw.dtype)
    labels = np.where(feasible, cost_label, 0.0).astype(raw.dtype)
    bce = _softplus(z) - y * z
    l1 = np.abs(c - labels) * y
    d_raw = np.empty_like(raw)
    d_raw[:, 1] = w_feasible * (_sigmoid(z) - y)
    d_raw[:, 0] = w_costs * y * np.sign(c - labels)
    return bce, l1, d_raw


# -- training ------------------------------------------------------------------


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    epochs: int = 100
    maps_per_batch: int = 4
    w_feasible: float = 1.0
    w_costs: float = 1.0
    patience: int = 3
    weight_divisor: float = 5.0
    threshold: float = 0.5
    seed: int = 0


class PlateauSchedule:
    """Divide a loss weight by ``divisor`` after ``patience`` successive
    epochs without improvement over the best epoch-mean loss so far."""

    def __init__(self, weight: float, patience: int = 3, divisor: float = 5.0):
        self.weight = weight
        self.patience = patience
        self.divisor = divisor
        self.best = np.inf
        self.streak = 0

    def update(self, epoch_loss: float) -> float:
        if epoch_loss < self.best:
            self.best = epoch_loss
            self.streak = 0
        else:
            self.streak += 1
            if self.streak >= self.patience:
                self.weight /= self.divisor
                self.streak = 0
        return self.weight


@dataclass
class TrainData:
    """Tasks bound to patch rows, ready for map-grouped batching."""

    patches: np.ndarray    # f32 [M, S, S]
    task_map: np.ndarray   # i64 [T] patch row per task
    goals: np.ndarray      # f32 [T, 3]
    feasible: np.ndarray   # bool [T]
    costs: np.ndarray      # f32 [T] (0 where infeasible)

    @classmethod
    def from_dataset(cls, ds) -> "TrainData":
        row = {int(m): i for i, m in enumerate(ds.map_ids)}
        t = ds.tasks
        task_map = np.array([row[int(m)] for m in t["map_id"]], dtype=np.int64)
        goals = np.stack([t["dx"], t["dy"], t["dtheta"]], axis=1).astype(np.float32)
        feasible = t["feasible"].astype(bool)
        costs = np.where(feasible, t["cost"], 0.0).astype(np.float32)
        return cls(ds.patches, task_map, goals, feasible, costs)


def _forward_tasks(net: CostNetwork, data: TrainData, map_rows: np.ndarray,
                   train: bool = False):
    """Trunk pass over the given patch rows, head pass over their tasks.

    Returns (raw outputs, task indices, local map index per task).
    """
    sel = np.isin(data.task_map, map_rows)
    task_idx = np.nonzero(sel)[0]
    local = {int(m): i for i, m in enumerate(map_rows)}
    task_local = np.array([local[int(m)] for m in data.task_map[task_idx]],
                          dtype=np.int64)
    feats = net.trunk_forward(data.patches[map_rows])
    raw = net.head_forward(feats[task_local], data.goals[task_idx])
    return raw, task_idx, task_local


def train(net: CostNetwork, train_data: TrainData, val_data: TrainData,
          config: TrainConfig | None = None, log=None):
    """SGD with momentum over map-grouped batches.

    Each loss keeps its own plateau schedule on raw epoch means (BCE over
    all tasks, L1 over feasible tasks). Returns (best_state, history); the
    network is left loaded with the snapshot that scored the best
    validation feasibility accuracy (ties: lower validation cost error).
    """
    cfg = config or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    n_maps = len(train_data.patches)
    velocity = {name: np.zeros_like(p) for name, p, _ in net.named_params()}
    sched_f = PlateauSchedule(cfg.w_feasible, cfg.patience, cfg.weight_divisor)
    sched_c = PlateauSchedule(cfg.w_costs, cfg.patience, cfg.weight_divisor)

    history = []
    best_key = None
    best_state = net.get_state()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_maps)
        bce_sum = 0.0
        l1_sum = 0.0
        n_tasks = 0
        n_feas = 0
        for lo in range(0, n_maps, cfg.maps_per_batch):
            rows = order[lo:lo + cfg.maps_per_batch]
            raw, task_idx, task_local = _forward_tasks(net, train_data, rows)
            if len(task_idx) == 0:
                continue
            bce, l1, d_raw = loss_terms(
                raw, train_data.feasible[task_idx], train_data.costs[task_idx],
                sched_f.weight, sched_c.weight)
            d_raw /= len(task_idx)
            net.backward(d_raw, task_local, len(rows))
            for name, p, g in net.named_params():
                v = velocity[name]
                v *= cfg.momentum
                v += g
                p -= (cfg.learning_rate * v).astype(p.dtype, copy=False)
            bce_sum += float(bce.sum())
            l1_sum += float(l1.sum())
            n_tasks += len(task_idx)
            n_feas += int(train_data.feasible[task_idx].sum())

        bce_mean = bce_sum / max(1, n_tasks)
        l1_mean = l1_sum / max(1, n_feas)
        if not (np.isfinite(bce_mean) and np.isfinite(l1_mean)):
            raise DivergenceDetected(f"epoch {epoch}: non-finite loss")
        w_f = sched_f.update(bce_mean)
        w_c = sched_c.update(l1_mean)

        metrics = evaluate(net, val_data, threshold=cfg.threshold)
        key = (metrics["feasibility_accuracy"], -metrics["mean_abs_cost_error"])
        if best_key is None or key > best_key:
            best_key = key
            best_state = net.get_state()
        history.append({
            "epoch": epoch,
            "bce": bce_mean,
            "l1": l1_mean,
            "w_feasible": w_f,
            "w_costs": w_c,
            "val_accuracy": metrics["feasibility_accuracy"],
            "val_cost_error": metrics["mean_abs_cost_error"],
        })
        if log is not None:
            log(history[-1])

    net.set_state(best_state)
    return best_state, history


def evaluate(net: CostNetwork, data: TrainData, threshold: float = 0.5,
             maps_per_batch: int = 16) -> dict:
    """Feasibility accuracy and cost statistics on a labeled set.

    A task counts as predicted feasible when the probability strictly
    exceeds the threshold. Cost error is averaged over tasks that both the
    labels and the prediction consider feasible.
    """
    n_maps = len(data.patches)
    probs = np.zeros(len(data.task_map))
    costs = np.zeros(len(data.task_map))
    for lo in range(0, n_maps, maps_per_batch):
        rows = np.arange(lo, min(lo + maps_per_batch, n_maps))
        raw, task_idx, _ = _forward_tasks(net, data, rows)
        probs[task_idx] = _sigmoid(raw[:, 1].astype(np.float64))
        costs[task_idx] = raw[:, 0]
    pred = probs > threshold
    acc = float((pred == data.feasible).mean()) if len(pred) else 0.0
    both = pred & data.feasible
    mean_cost = float(costs[both].mean()) if both.any() else float("nan")
    err = float(np.abs(costs[both] - data.costs[both]).mean()) if both.any() else float("nan")
    mean_label = float(data.costs[data.feasible].mean()) if data.feasible.any() else float("nan")
    return {
        "feasibility_accuracy": acc,
        "mean_cost": mean_cost,
        "mean_abs_cost_error": err,
        "mean_label_cost": mean_label,
        "n_tasks": int(len(pred)),
        "n_both_feasible": int(both.sum()),
    }


# -- weight files (TPNW1) --------------------------------------------------------

_NW_MAGIC = b"TPNW1"
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_TAG_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


def save_weights(net: CostNetwork, path: str) -> None:
    tensors = [(name, p) for name, p, _ in net.named_params()]
    meta = {
        "arch": net.arch,
        "spatial_chain": net.spatial_chain,
        "seed": net.seed,
        "dtype": net.dtype.name,
    }
    tensors.append(("meta.json", np.frombuffer(
        json.dumps(meta).encode("utf-8"), dtype=np.uint8).copy()))
    body = bytearray()
    body += _NW_MAGIC
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        nb = name.encode("utf-8")
        body += struct.pack("<I", len(nb))
        body += nb
        body += struct.pack("<B", _TAG_FOR[np.dtype(arr.dtype.newbyteorder("="))])
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.astype(arr.dtype.newbyteorder("<")).tobytes()
    crc = zlib.crc32(bytes(body))
    with open(path, "wb") as f:
        f.write(bytes(body))
        f.write(struct.pack("<I", crc))


def load_weights(path: str) -> CostNetwork:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(_NW_MAGIC) + 8:
        raise FormatError(f"file too short: {path}")
    if data[:len(_NW_MAGIC)] != _NW_MAGIC:
        raise FormatError(f"bad magic or unsupported version in {path}")
    body, crc_stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc_stored:
        raise FormatError(f"checksum mismatch in {path}")

    off = len(_NW_MAGIC)
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    tensors = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", body, off)
            off += 4
            name = body[off:off + nlen].decode("utf-8")
            off += nlen
            (tag,) = struct.unpack_from("<B", body, off)
            off += 1
            (rank,) = struct.unpack_from("<I", body, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", body, off)
            off += 4 * rank
            dt = _DTYPE_TAGS[tag]
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            raw = body[off:off + size * dt.itemsize]
            if len(raw) != size * dt.itemsize:
                raise FormatError(f"truncated tensor {name} in {path}")
            off += size * dt.itemsize
            tensors[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    except (struct.error, KeyError) as e:
        raise FormatError(f"corrupt weight file {path}") from e

    if "meta.json" not in tensors:
        raise FormatError(f"missing metadata in {path}")
    meta = json.loads(tensors.pop("meta.json").tobytes().decode("utf-8"))
    arch = meta["arch"]
    arch["conv"] = [tuple(c) for c in arch["conv"]]
    net = CostNetwork(seed=meta.get("seed", 0), dtype=np.dtype(meta["dtype"]),
                      arch=arch)
    net.set_state(tensors)
    return net
