"""Stage composition, training, streaming sessions and model persistence.

A PipelineModel bundles the anchor basis plus one entry per blendshape
channel: feature selector, transform chain, regressor, correction
parameters and smoother config. Prediction runs the fixed stage order
(normalize, select, transform, regress+correct, smooth) per enabled
channel; disabled channels emit zero. Models serialize to a versioned,
human-diffable JSON document (schema documented in the README) and a
loaded model reproduces bit-identical predictions.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Sequence

import numpy as np

from . import smooth
from .core import (
    BLENDSHAPE_COUNT,
    BLENDSHAPE_NAMES,
    BlendshapeFrame,
    LandmarkFrame,
)
from .errors import (
    AlignmentFailure,
    DimensionMismatch,
    IndexOutOfRange,
    InsufficientTraining,
    NonMonotonicTimestamp,
    SchemaViolation,
    VersionMismatch,
)
from .features import (
    DEFAULT_PERCENTILE,
    FeatureSelector,
    correlation_map,
    select_top_percentile,
)
from .geometry import AffineBasis, apply_transform, solve_transform
from .regress import (
    G_TABLE_PRESETS,
    CorrectionParams,
    RegressorModel,
    apply_correction,
    fit as fit_regressor,
    init_correction_state,
    predict_raw,
)
from .transforms import TransformChain, TransformStep, apply_chain, build_chain, fit_pcd

FORMAT_NAME = "blendpipe-model"
FORMAT_VERSION = 1

MIN_TRAIN_SAMPLES = 50

# Smoother buffers reset after a stream gap longer than this; shorter gaps
# keep state untouched (no time extrapolation).
GAP_RESET_MS = 250

CHAIN_RECIPES = ("displacement", "displacement_pcd", "aspect_ratio")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelConfig:
    """Per-channel training recipe.

    The default chain projects selected-landmark displacements onto their
    leading variance direction before the (by default linear) regressor;
    raw displacements of one expression are near-collinear, so the
    projection both conditions the design matrix and shrinks the model.
    """

    enabled: bool = True
    family: str = "ols"
    degree: int = 2
    components: int = 1
    chain: str = "displacement_pcd"
    percentile: float | None = None
    correction: CorrectionParams = field(default_factory=CorrectionParams)
    smoother: smooth.SmootherConfig = field(default_factory=smooth.SmootherConfig)

    def __post_init__(self):
        if self.chain not in CHAIN_RECIPES:
            raise ValueError(f"unknown chain recipe {self.chain!r}")


@dataclass(frozen=True)
class TrainConfig:
    basis: AffineBasis = field(default_factory=AffineBasis)
    percentile: float = DEFAULT_PERCENTILE
    defaults: ChannelConfig = field(default_factory=ChannelConfig)
    overrides: dict = field(default_factory=dict)
    min_samples: int = MIN_TRAIN_SAMPLES

    def channel_config(self, name: str) -> ChannelConfig:
        """Defaults merged with per-channel overrides; TongueOut stays
        disabled unless a config explicitly enables it (no landmark carries
        tongue information)."""
        cfg = self.overrides.get(name, self.defaults)
        if name == "TongueOut" and name not in self.overrides:
            cfg = replace(cfg, enabled=False)
        return cfg

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        basis = AffineBasis(**d["basis"]) if "basis" in d else AffineBasis()
        percentile = float(d.get("percentile", DEFAULT_PERCENTILE))
        defaults = _channel_config_from_dict(d.get("defaults", {}), ChannelConfig())
        overrides = {
            name: _channel_config_from_dict(spec, defaults)
            for name, spec in d.get("channels", {}).items()
        }
        for name in overrides:
            if name not in BLENDSHAPE_NAMES:
                raise SchemaViolation(f"unknown channel in config: {name!r}")
        return cls(
            basis=basis,
            percentile=percentile,
            defaults=defaults,
            overrides=overrides,
            min_samples=int(d.get("min_samples", MIN_TRAIN_SAMPLES)),
        )


def _correction_from_dict(d: dict) -> CorrectionParams:
    d = dict(d)
    preset = d.pop("g_preset", None)
    if preset is not None:
        if preset not in G_TABLE_PRESETS:
            raise SchemaViolation(f"unknown g_table preset {preset!r}")
        d["g_table"] = G_TABLE_PRESETS[preset]
    if "g_table" in d:
        d["g_table"] = tuple((float(x), float(v)) for x, v in d["g_table"])
    return CorrectionParams(**d)


def _channel_config_from_dict(d: dict, base: ChannelConfig) -> ChannelConfig:
    kwargs = {}
    for key in ("enabled", "family", "degree", "components", "chain", "percentile"):
        if key in d:
            kwargs[key] = d[key]
    if "correction" in d:
        kwargs["correction"] = _correction_from_dict(d["correction"])
    if "smoother" in d:
        kwargs["smoother"] = smooth.SmootherConfig.from_dict(d["smoother"])
    return replace(base, **kwargs)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelModel:
    enabled: bool
    selector: FeatureSelector | None = None
    chain: TransformChain | None = None
    regressor: RegressorModel | None = None
    correction: CorrectionParams | None = None
    smoother: smooth.SmootherConfig | None = None
    note: str = ""


@dataclass(frozen=True)
class PipelineModel:
    basis: AffineBasis
    channels: dict[str, ChannelModel]
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self):
        if set(self.channels) != set(BLENDSHAPE_NAMES):
            raise SchemaViolation("model must carry exactly the 52 canonical channels")
        for name, cm in self.channels.items():
            if not cm.enabled:
                continue
            missing = [
                part
                for part in ("selector", "chain", "regressor", "correction", "smoother")
                if getattr(cm, part) is None
            ]
            if missing:
                raise SchemaViolation(f"{name}: enabled channel missing {missing}")
            in_dim = 3 * len(cm.selector)
            want = cm.chain.steps[0].input_dim() if cm.chain.steps else None
            if want is not None and want != in_dim:
                raise SchemaViolation(
                    f"{name}: selector feeds dim {in_dim}, chain expects {want}"
                )
            if cm.chain.output_dim != cm.regressor.input_dim:
                raise SchemaViolation(
                    f"{name}: chain emits dim {cm.chain.output_dim}, "
                    f"regressor expects {cm.regressor.input_dim}"
                )

    def enabled_channels(self) -> list[str]:
        return [n for n in BLENDSHAPE_NAMES if self.channels[n].enabled]

    def with_overrides(
        self, no_correction: bool = False, smoother: smooth.SmootherConfig | None = None
    ) -> "PipelineModel":
        """Run-time variations: neutral correction and/or one smoother for all."""
        channels = {}
        for name, cm in self.channels.items():
            if cm.enabled:
                if no_correction:
                    cm = replace(cm, correction=CorrectionParams())
                if smoother is not None:
                    cm = replace(cm, smoother=smoother)
            channels[name] = cm
        return PipelineModel(basis=self.basis, channels=channels)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        channels = {}
        for name, cm in self.channels.items():
            entry: dict = {"enabled": cm.enabled}
            if cm.note:
                entry["note"] = cm.note
            if cm.selector is not None:
                entry["selector"] = {
                    "indices": list(cm.selector.indices),
                    "scores": list(cm.selector.scores),
                    "method": cm.selector.method,
                }
            if cm.chain is not None:
                entry["chain"] = [{"kind": s.kind, "params": s.params} for s in cm.chain.steps]
                entry["chain_output_dim"] = cm.chain.output_dim
            if cm.regressor is not None:
                entry["regressor"] = cm.regressor.to_dict()
            if cm.correction is not None:
                entry["correction"] = cm.correction.to_dict()
            if cm.smoother is not None:
                entry["smoother"] = cm.smoother.to_dict()
            channels[name] = entry
        return {
            "format": FORMAT_NAME,
            "version": self.format_version,
            "basis": {
                "anchor_nose": self.basis.anchor_nose,
                "anchor_eye_left": self.basis.anchor_eye_left,
                "anchor_eye_right": self.basis.anchor_eye_right,
                "target_interocular": self.basis.target_interocular,
            },
            "channels": channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineModel":
        if not isinstance(d, dict) or d.get("format") != FORMAT_NAME:
            raise SchemaViolation("not a blendpipe model document")
        if d.get("version") != FORMAT_VERSION:
            raise VersionMismatch(
                f"model version {d.get('version')!r}, this build reads {FORMAT_VERSION}"
            )
        try:
            basis = AffineBasis(**d["basis"])
            channels = {}
            for name, entry in d["channels"].items():
                selector = chain = regressor = correction = smoother_cfg = None
                if "selector" in entry:
                    sel = entry["selector"]
                    selector = FeatureSelector(
                        blendshape=name,
                        indices=tuple(int(i) for i in sel["indices"]),
                        scores=tuple(float(s) for s in sel["scores"]),
                        method=sel.get("method", "correlation"),
                    )
                if "chain" in entry:
                    steps = [TransformStep(kind=s["kind"], params=s["params"]) for s in entry["chain"]]
                    in_dim = 3 * len(selector) if selector is not None else entry["chain_output_dim"]
                    chain = build_chain(steps, input_dim=in_dim)
                    if chain.output_dim != entry["chain_output_dim"]:
                        raise SchemaViolation(
                            f"{name}: chain output dim {chain.output_dim} != "
                            f"declared {entry['chain_output_dim']}"
                        )
                if "regressor" in entry:
                    regressor = RegressorModel.from_dict(entry["regressor"])
                if "correction" in entry:
                    correction = CorrectionParams.from_dict(entry["correction"])
                if "smoother" in entry:
                    smoother_cfg = smooth.SmootherConfig.from_dict(entry["smoother"])
                channels[name] = ChannelModel(
                    enabled=bool(entry["enabled"]),
                    selector=selector,
                    chain=chain,
                    regressor=regressor,
                    correction=correction,
                    smoother=smoother_cfg,
                    note=entry.get("note", ""),
                )
        except SchemaViolation:
            raise
        except (KeyError, TypeError, ValueError, DimensionMismatch) as exc:
            raise SchemaViolation(f"malformed model document: {exc}") from exc
        return cls(basis=basis, channels=channels)


def save_model(model: PipelineModel, sink: IO) -> dict[str, int]:
    """Write the model as indented JSON; returns serialized bytes per channel."""
    doc = model.to_dict()
    sink.write(json.dumps(doc, indent=2, sort_keys=True))
    sizes = {
        name: len(json.dumps(entry, indent=2, sort_keys=True).encode())
        for name, entry in doc["channels"].items()
    }
    return sizes


def load_model(source: IO) -> PipelineModel:
    try:
        doc = json.load(source)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"model file is not valid JSON: {exc.msg}") from exc
    return PipelineModel.from_dict(doc)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _build_channel_chain(
    cfg: ChannelConfig,
    sel_points: np.ndarray,
    neutral_sel: np.ndarray,
) -> tuple[TransformChain, np.ndarray]:
    """Fit the configured chain recipe; returns (chain, per-frame features)."""
    n, k, _ = sel_points.shape
    disp_step = TransformStep("displacement", {"neutral": neutral_sel.ravel().tolist()})
    if cfg.chain == "displacement":
        chain = build_chain([disp_step], input_dim=3 * k)
    elif cfg.chain == "displacement_pcd":
        disp_chain = build_chain([disp_step], input_dim=3 * k)
        D = np.stack([apply_chain(disp_chain, sel_points[i]) for i in range(n)])
        pcd_step = fit_pcd(D, components=cfg.components)
        chain = build_chain([disp_step, pcd_step], input_dim=3 * k)
    else:  # aspect_ratio: consecutive selected points paired in order
        pairs = [[2 * i, 2 * i + 1] for i in range(k // 2)]
        if not pairs:
            raise InsufficientTraining("aspect_ratio recipe needs at least 2 selected points")
        step = TransformStep(
            "aspect_ratio", {"neutral": neutral_sel.ravel().tolist(), "pairs": pairs}
        )
        chain = build_chain([step], input_dim=3 * k)
    X = np.stack([apply_chain(chain, sel_points[i]) for i in range(n)])
    return chain, X


def train(
    config: TrainConfig,
    landmark_frames: Sequence[LandmarkFrame],
    target_frames: Sequence[BlendshapeFrame],
) -> PipelineModel:
    """Fit selector, chain and regressor per enabled channel.

    Channels whose targets cannot support a fit (too few samples, zero
    variance) are disabled with a note instead of failing the run.
    """
    lm = list(landmark_frames)
    bs = list(target_frames)
    if len(lm) != len(bs):
        raise AlignmentFailure(f"{len(lm)} landmark frames vs {len(bs)} target frames")
    for i, (a, b) in enumerate(zip(lm, bs)):
        if a.timestamp_ms != b.timestamp_ms:
            raise AlignmentFailure(
                f"frame {i}: landmark t={a.timestamp_ms} vs target t={b.timestamp_ms}"
            )
    n = len(lm)

    normalized = [apply_transform(f, solve_transform(f, config.basis)) for f in lm]
    norm_pts = np.stack([f.points for f in normalized])
    Y = np.stack([f.weights for f in bs])

    # displacement reference: first frame with every channel at zero
    zero_rows = np.flatnonzero(Y.sum(axis=1) == 0.0)
    neutral_idx = int(zero_rows[0]) if zero_rows.size else int(np.argmin(Y.max(axis=1)))

    channels: dict[str, ChannelModel] = {}
    for ci, name in enumerate(BLENDSHAPE_NAMES):
        cfg = config.channel_config(name)
        if not cfg.enabled:
            channels[name] = ChannelModel(enabled=False, note="disabled by configuration")
            continue
        y = Y[:, ci]
        if n < config.min_samples:
            channels[name] = ChannelModel(
                enabled=False,
                note=f"insufficient training: {n} samples < {config.min_samples}",
            )
            continue
        if float(y.var()) == 0.0:
            channels[name] = ChannelModel(
                enabled=False, note="insufficient training: target variance is zero"
            )
            continue
        scores = correlation_map(normalized, y)
        selector = select_top_percentile(
            scores, cfg.percentile or config.percentile, blendshape=name
        )
        idx = list(selector.indices)
        sel_points = norm_pts[:, idx, :]
        neutral_sel = norm_pts[neutral_idx][idx]
        chain, X = _build_channel_chain(cfg, sel_points, neutral_sel)
        regressor = fit_regressor(
            cfg.family, X, y, degree=cfg.degree, components=cfg.components
        )
        channels[name] = ChannelModel(
            enabled=True,
            selector=selector,
            chain=chain,
            regressor=regressor,
            correction=cfg.correction,
            smoother=cfg.smoother,
        )
    return PipelineModel(basis=config.basis, channels=channels)


# ---------------------------------------------------------------------------
# streaming prediction
# ---------------------------------------------------------------------------

class StreamSession:
    """Per-stream mutable state: correction and smoother state per enabled
    channel plus the last timestamp. Not shareable across streams."""

    def __init__(self, model: PipelineModel, collect_timings: bool = False):
        self.model = model
        self.collect_timings = collect_timings
        self.stage_timings: list[list[tuple[str, int]]] = []
        self._compiled = []
        all_idx: list[int] = []
        for ci, name in enumerate(BLENDSHAPE_NAMES):
            cm = model.channels[name]
            if not cm.enabled:
                continue
            start = len(all_idx)
            all_idx.extend(cm.selector.indices)
            # (channel position, slice into the per-frame gather, stages)
            self._compiled.append(
                (ci, start, len(all_idx), cm.chain, cm.regressor, cm.correction, cm.smoother)
            )
        self._all_idx = np.asarray(all_idx, dtype=np.intp)
        self._min_points = int(self._all_idx.max()) + 1 if all_idx else 0
        self.reset()

    def reset(self):
        """Forget all stream state; replaying the same stream afterwards
        reproduces identical output."""
        self.last_t: int | None = None
        self._cstates = [init_correction_state(c[5]) for c in self._compiled]
        self._sstates = [smooth.make_state(c[6]) for c in self._compiled]
        self.stage_timings = []

    def reset_smoothers(self):
        self._sstates = [smooth.make_state(c[6]) for c in self._compiled]


def predict_frame(
    model: PipelineModel, session: StreamSession, frame: LandmarkFrame
) -> BlendshapeFrame:
    """Run one frame through normalize/select/transform/regress/smooth.

    Raises before any state mutation, so a failed frame leaves the session
    untouched. A gap longer than GAP_RESET_MS resets smoother buffers.
    """
    if session.model is not model:
        raise ValueError("session was created for a different model")
    if frame.point_count < session._min_points:
        raise IndexOutOfRange(
            f"frame has {frame.point_count} points, model selects up to "
            f"index {session._min_points - 1}"
        )
    t = frame.timestamp_ms
    if session.last_t is not None and t <= session.last_t:
        raise NonMonotonicTimestamp(f"frame t={t} not after session t={session.last_t}")

    timing = session.collect_timings
    t0 = time.perf_counter_ns() if timing else 0
    tform = solve_transform(frame, model.basis)
    pts = tform.apply_points(frame.points)
    t_ta = time.perf_counter_ns() - t0 if timing else 0

    if session.last_t is not None and t - session.last_t > GAP_RESET_MS:
        session.reset_smoothers()

    weights = np.zeros(BLENDSHAPE_COUNT)
    cstates = session._cstates
    sstates = session._sstates
    gathered = pts[session._all_idx]
    t_s = t_td = t_r = t_f = 0
    for j, (ci, s0, s1, chain, regressor, correction, smoother_cfg) in enumerate(
        session._compiled
    ):
        if timing:
            m0 = time.perf_counter_ns()
        sel = gathered[s0:s1]
        if timing:
            m1 = time.perf_counter_ns()
            t_s += m1 - m0
        x = apply_chain(chain, sel)
        if timing:
            m2 = time.perf_counter_ns()
            t_td += m2 - m1
        raw = predict_raw(regressor, x)
        corrected, cstates[j] = apply_correction(correction, cstates[j], raw, t)
        if timing:
            m3 = time.perf_counter_ns()
            t_r += m3 - m2
        out, _ = smooth.step(smoother_cfg, sstates[j], corrected)
        if timing:
            t_f += time.perf_counter_ns() - m3
        weights[ci] = out

    session.last_t = t
    if timing:
        session.stage_timings.append(
            [("T_a", t_ta), ("S", t_s), ("T_d", t_td), ("R", t_r), ("F", t_f)]
        )
    return BlendshapeFrame(timestamp_ms=t, weights=weights)


def predict_stream(
    model: PipelineModel,
    frames: Iterable[LandmarkFrame],
    session: StreamSession | None = None,
) -> Iterable[BlendshapeFrame]:
    """Convenience wrapper: one fresh session over an iterable of frames."""
    if session is None:
        session = StreamSession(model)
    for frame in frames:
        yield predict_frame(model, session, frame)
