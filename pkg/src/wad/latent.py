"""Frame dataset collection, convolutional autoencoder training and frozen latent extraction."""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import Adam, Conv2d, ConvTranspose2d, Dense, Network, content_hash, load_checkpoint, save_checkpoint
from .nn.checkpoint import restore
from .perception import rasterize
from .sim import routing
from .sim.town import build_town
from .sim.weather import get_weather
from .sim.world import make_world, spawn_traffic, step

MIN_FRAMES = 100
HOLDOUT_FRACTION = 0.1
_HEADER = struct.Struct("<4I")


# ---------------------------------------------------------------- dataset
@dataclass
class FrameDataset:
    frames: np.ndarray                      # (N, H, W, C) float32 in [0, 1]
    holdout: np.ndarray                     # (N,) bool
    provenance: list[tuple[str, str, str]] = field(default_factory=list)   # (town, weather, policy) per frame

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def train_frames(self) -> np.ndarray:
        return self.frames[~self.holdout]

    @property
    def holdout_frames(self) -> np.ndarray:
        return self.frames[self.holdout]

    def save(self, path) -> None:
        """Header (count, H, W, C) as uint32 LE, then float32 LE frames; split and provenance in a JSON sidecar."""
        path = Path(path)
        n, h, w, c = self.frames.shape
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(n, h, w, c))
            fh.write(np.ascontiguousarray(self.frames, dtype="<f4").tobytes())
        side = {"holdout": np.flatnonzero(self.holdout).tolist(), "provenance": [list(p) for p in self.provenance]}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(side))

    @classmethod
    def load(cls, path) -> "FrameDataset":
        path = Path(path)
        data = path.read_bytes()
        if len(data) < _HEADER.size:
            raise ValueError(f"{path}: missing dataset header")
        n, h, w, c = _HEADER.unpack_from(data)
        body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
        if body.size != n * h * w * c:
            raise ValueError(f"{path}: header says {n}x{h}x{w}x{c} values, payload has {body.size}")
        frames = body.reshape(n, h, w, c).astype(np.float32)
        holdout = np.zeros(n, dtype=bool)
        prov = []
        side = path.with_suffix(path.suffix + ".json")
        if side.exists():
            meta = json.loads(side.read_text())
            holdout[meta["holdout"]] = True
            prov = [tuple(p) for p in meta["provenance"]]
        else:
            holdout[_holdout_indices(n, 0)] = True
        return cls(frames, holdout, prov)


def _holdout_indices(n: int, seed: int) -> np.ndarray:
    k = int(round(HOLDOUT_FRACTION * n))
    return np.random.default_rng([seed, 0xA5]).permutation(n)[:k]


def collect_dataset(n_frames: int, towns=("A",), weathers=("clear_day", "cloudy", "day_rain"), seed: int = 0,
                    size: int = 64, every: int = 3, steer_noise: float = 0.25, traffic=(8, 12),
                    episode_steps: int = 600) -> FrameDataset:
    """Frames seen by the scripted driver on random routes, cycling over towns and weathers.

    Steering gets a slowly varying perturbation so the frames also cover
    off-centre poses, which a learning agent will visit.
    """
    from .harness.autopilot import scripted_autopilot

    if n_frames < MIN_FRAMES:
        raise ValueError(f"need at least {MIN_FRAMES} frames, asked for {n_frames}")
    towns = list(towns)
    weathers = list(weathers)
    for t in towns:
        build_town(t)
    for w in weathers:
        get_weather(w)
    rng = np.random.default_rng(seed)
    frames = np.empty((n_frames, size, size, 3), dtype=np.float32)
    prov = []
    got = 0
    episode = 0
    while got < n_frames:
        town = towns[episode % len(towns)]
        weather = weathers[(episode // len(towns)) % len(weathers)]
        ep_seed = int(rng.integers(2 ** 31))
        mg = build_town(town)
        ep_rng = np.random.default_rng(ep_seed)
        start = mg.spawn_points[int(ep_rng.integers(len(mg.spawn_points)))]
        route = routing.random_route(mg, start, 1500.0, ep_rng)
        world = make_world(town, route, weather, seed=ep_seed)
        spawn_traffic(world, *traffic)
        drift = 0.0
        for t in range(episode_steps):
            steer, throttle, brake = scripted_autopilot(world)
            drift = 0.95 * drift + ep_rng.normal(0.0, steer_noise * 0.3)
            step(world, (float(np.clip(steer + drift, -1, 1)), throttle, brake))
            st = world.status
            if st.off_map or st.goal_reached or st.collision is not None:
                break
            if t % every == 0:
                frames[got] = rasterize(world, size)
                prov.append((town, weather, "autopilot"))
                got += 1
                if got == n_frames:
                    break
        episode += 1
    holdout = np.zeros(n_frames, dtype=bool)
    holdout[_holdout_indices(n_frames, seed)] = True
    return FrameDataset(frames, holdout, prov)


# ---------------------------------------------------------------- model
@dataclass(frozen=True)
class AESpec:
    size: int = 64
    channels: tuple[int, ...] = (8, 16, 32, 64)
    latent: int = 32
    weight_decay: float = 1e-6

    @classmethod
    def full_scale(cls) -> "AESpec":
        return cls(size=128, channels=(32, 64, 128, 256, 512, 512), latent=200)


def build_encoder(spec: AESpec) -> Network:
    net = Network({"frame": (3, spec.size, spec.size)})
    src, shape = "frame", (3, spec.size, spec.size)
    for i, ch in enumerate(spec.channels):
        layer = Conv2d(shape, ch, 3, 2, "relu", spec.weight_decay)
        net.add(f"conv{i}", layer, src)
        src, shape = f"conv{i}", layer.out_shape
    flat = int(np.prod(shape))
    net.reshape("flat", src, (flat,))
    net.add("latent", Dense(flat, spec.latent, "linear", spec.weight_decay), "flat")
    net.output("latent", "latent")
    return net


def build_decoder(spec: AESpec, bottleneck: tuple[int, int, int]) -> Network:
    net = Network({"latent": (spec.latent,)})
    net.add("fc", Dense(spec.latent, int(np.prod(bottleneck)), "relu", spec.weight_decay), "latent")
    net.reshape("grid", "fc", bottleneck)
    src, shape = "grid", bottleneck
    outs = list(spec.channels[-2::-1]) + [spec.channels[0]]
    for i, ch in enumerate(outs):
        layer = ConvTranspose2d(shape, ch, 3, 2, "relu", spec.weight_decay)
        net.add(f"deconv{i}", layer, src)
        src, shape = f"deconv{i}", layer.out_shape
    k = spec.size - shape[1] + 1
    if k < 1:
        raise ValueError(f"decoder overshoots: {shape[1]} > {spec.size}")
    last = ConvTranspose2d(shape, 3, k, 1, "sigmoid", spec.weight_decay)
    net.add("recon", last, src)
    if last.out_shape != (3, spec.size, spec.size):
        raise ValueError(f"decoder produces {last.out_shape}, expected {(3, spec.size, spec.size)}")
    net.output("recon", "recon")
    return net


def _nchw(frames: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(frames.transpose(0, 3, 1, 2))


class Autoencoder:
    def __init__(self, spec: AESpec = AESpec(), seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.encoder = build_encoder(spec).init(rng)
        bottleneck = self.encoder.nodes[len(spec.channels) - 1].out_shape
        self.decoder = build_decoder(spec, bottleneck).init(rng)
        # per-dimension standardisation applied to encode() output only; the
        # decoder always sees the raw bottleneck
        self.latent_mean = np.zeros(spec.latent, dtype=np.float32)
        self.latent_scale = np.ones(spec.latent, dtype=np.float32)

    @property
    def latent_dim(self) -> int:
        return self.spec.latent

    def nets(self) -> dict[str, Network]:
        return {"encoder": self.encoder, "decoder": self.decoder}

    def encode(self, frame: np.ndarray) -> np.ndarray:
        """Latent vector of one (H, W, 3) frame, or (N, latent) for a batch."""
        frame = np.asarray(frame, dtype=np.float32)
        single = frame.ndim == 3
        batch = frame[None] if single else frame
        want = (self.spec.size, self.spec.size, 3)
        if batch.shape[1:] != want:
            raise ValueError(f"frame shape {batch.shape[1:]} does not match encoder input {want}")
        z = self.encoder.forward({"frame": _nchw(batch)})["latent"]
        self.encoder.clear_cache()
        z = (z - self.latent_mean) / self.latent_scale
        return z[0] if single else z

    def fit_latent_stats(self, frames: np.ndarray, batch: int = 256) -> None:
        """Set the standardisation so ``encode`` gives zero mean, unit spread on ``frames``."""
        self.latent_mean = np.zeros(self.spec.latent, dtype=np.float32)
        self.latent_scale = np.ones(self.spec.latent, dtype=np.float32)
        z = np.concatenate([self.encode(frames[i:i + batch]) for i in range(0, len(frames), batch)])
        self.latent_mean = z.mean(axis=0).astype(np.float32)
        self.latent_scale = np.maximum(z.std(axis=0), 1e-6).astype(np.float32)

    def _stats(self) -> dict[str, np.ndarray]:
        return {"latent_stats.mean": self.latent_mean, "latent_stats.scale": self.latent_scale}

    def reconstruct(self, frames: np.ndarray) -> np.ndarray:
        z = self.encoder.forward({"frame": _nchw(np.asarray(frames, dtype=np.float32))})["latent"]
        out = self.decoder.forward({"latent": z})["recon"]
        return out.transpose(0, 2, 3, 1)

    def mse(self, frames: np.ndarray, batch: int = 128) -> float:
        total = 0.0
        for i in range(0, len(frames), batch):
            chunk = frames[i:i + batch]
            diff = self.reconstruct(chunk) - chunk
            total += float(np.sum(diff.astype(np.float64) ** 2))
        return total / max(frames.size, 1)

    def loss_and_grads(self, x_nchw: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        """Mean squared reconstruction error (plus weight decay) and its parameter gradients."""
        z = self.encoder.forward({"frame": x_nchw})["latent"]
        y = self.decoder.forward({"latent": z})["recon"]
        diff = y - x_nchw
        value = float(np.mean(diff.astype(np.float64) ** 2))
        dy = (2.0 / diff.size) * diff
        g_dec = self.decoder.backward({"recon": dy})
        g_enc = self.encoder.backward({"latent": self.decoder.input_grads["latent"]})
        grads = {f"decoder.{k}": v for k, v in g_dec.items()}
        grads.update({f"encoder.{k}": v for k, v in g_enc.items()})
        penalty = self.encoder.decay_penalty() + self.decoder.decay_penalty()
        return value + penalty, grads

    def parameters(self) -> dict[str, np.ndarray]:
        out = {f"encoder.{k}": v for k, v in self.encoder.parameters().items()}
        out.update({f"decoder.{k}": v for k, v in self.decoder.parameters().items()})
        return out

    def astype(self, dtype) -> "Autoencoder":
        other = object.__new__(Autoencoder)
        other.spec = self.spec
        other.encoder = self.encoder.astype(dtype)
        other.decoder = self.decoder.astype(dtype)
        other.latent_mean, other.latent_scale = self.latent_mean.copy(), self.latent_scale.copy()
        return other

    def save(self, path) -> None:
        meta = {"kind": "autoencoder", **{k: ",".join(map(str, v)) if isinstance(v, tuple) else v
                                          for k, v in asdict(self.spec).items()}}
        save_checkpoint(path, {**self.parameters(), **self._stats()}, meta)

    @classmethod
    def load(cls, path) -> "Autoencoder":
        ckpt = load_checkpoint(path)
        if ckpt.meta.get("kind") != "autoencoder":
            raise TypeError(f"{path} holds a {ckpt.meta.get('kind')!r} checkpoint, not an autoencoder")
        m = ckpt.meta
        spec = AESpec(size=int(m["size"]), channels=tuple(int(c) for c in m["channels"].split(",")),
                      latent=int(m["latent"]), weight_decay=float(m["weight_decay"]))
        ae = cls(spec)
        restore(ae.nets(), ckpt)
        if "latent_stats.mean" in ckpt.tensors:
            ae.latent_mean = ckpt.tensors["latent_stats.mean"].astype(np.float32)
            ae.latent_scale = ckpt.tensors["latent_stats.scale"].astype(np.float32)
        return ae


def freeze_guard(ae_or_encoder) -> str:
    """Content hash of the encoder weights (and latent standardisation); any change to either changes it."""
    if isinstance(ae_or_encoder, Autoencoder):
        return content_hash({**ae_or_encoder.encoder.parameters(), **ae_or_encoder._stats()})
    return content_hash(ae_or_encoder.parameters())


# ---------------------------------------------------------------- training
class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"reconstruction loss became non-finite in epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainResult:
    ae: Autoencoder
    curve: list[tuple[int, float, float]]   # (epoch, train_mse, holdout_mse); epoch 0 = before training
    best_epoch: int
    kept: list[tuple[int, float]]           # (epoch, holdout_mse) every time the retained checkpoint improved

    def write_curve(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_mse", "holdout_mse"])
            for e, tr, ho in self.curve:
                w.writerow([e, f"{tr:.8g}", f"{ho:.8g}"])


def _checked_mse(ae: Autoencoder, frames: np.ndarray, epoch: int) -> float:
    try:
        return ae.mse(frames)
    except FloatingPointError as exc:
        raise DivergenceError(epoch) from exc


def train_ae(spec: AESpec | Autoencoder, dataset: FrameDataset, epochs: int, lr: float = 1e-4, batch: int = 32,
             seed: int = 0, target_mse: float | None = None, log=None) -> TrainResult:
    """Adam on mean squared reconstruction error, keeping the parameters with the best holdout MSE.

    Stops early once the holdout MSE is below ``target_mse`` (when given).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    ae = spec if isinstance(spec, Autoencoder) else Autoencoder(spec, seed)
    train, hold = dataset.train_frames, dataset.holdout_frames
    if len(hold) == 0:
        hold = train
    params = ae.parameters()
    opt = Adam(params, lr=lr)
    rng = np.random.default_rng([seed, 0xAE])
    best = _checked_mse(ae, hold, 0)
    curve = [(0, _checked_mse(ae, train, 0), best)]
    kept = [(0, best)]
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch = 0
    x_all = _nchw(train)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train))
        total = 0.0
        for i in range(0, len(order), batch):
            idx = order[i:i + batch]
            try:
                value, grads = ae.loss_and_grads(x_all[idx])
            except FloatingPointError as exc:
                raise DivergenceError(epoch) from exc
            if not math.isfinite(value):
                raise DivergenceError(epoch)
            try:
                opt.step(grads)
            except FloatingPointError as exc:
                raise DivergenceError(epoch) from exc
            total += value * len(idx)
        train_mse = total / len(train)
        hold_mse = _checked_mse(ae, hold, epoch)
        if not math.isfinite(hold_mse):
            raise DivergenceError(epoch)
        curve.append((epoch, train_mse, hold_mse))
        if log is not None:
            log(epoch, train_mse, hold_mse)
        if hold_mse < best:
            best, best_epoch = hold_mse, epoch
            kept.append((epoch, hold_mse))
            for k, v in params.items():
                best_params[k][...] = v
        if target_mse is not None and best < target_mse:
            break
    for k, v in params.items():
        v[...] = best_params[k]
    ae.encoder.clear_cache()
    ae.decoder.clear_cache()
    ae.fit_latent_stats(train)
    return TrainResult(ae, curve, best_epoch, kept)
