"""JSON-over-HTTP API behind the interactive perturbation panel.

Endpoints: sample/model listing, level-based perturbation with per-model
predictions, attack execution, the order-effect grid, and the leaderboard.
Images travel as base64 raw RGB8 (row-major H x W x 3).

Slider levels 0..4 map to fractions {0, 0.25, 0.5, 0.75, 1.0} of each
component's bound; level 0 disables the component. The Linf level sets an
epsilon fraction and triggers a T-step optimization of the noise against a
designated model (cached per sample/model/epsilon); a slider value alone
cannot determine a per-pixel tensor.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace

import numpy as np
from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from . import classifier, evaluation, transforms
from .attack import AttackConfig, order_search, single_attack
from .classifier import ModelWeights
from .evaluation import LeaderboardEntry, LeaderboardError, leaderboard_rank, leaderboard_load, leaderboard_save
from .imaging import encode_rgb8_base64
from .transforms import CANONICAL_ORDER, Kind, KIND_NAMES

DEFAULT_PORT = 8787
PORT_ENV_VAR = "CARBEN_PORT"
LEVEL_MAX = 4


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Sample:
    id: str
    image: np.ndarray
    label: int
    class_name: str


@dataclass
class LoadedModel:
    id: str
    name: str
    kind_tag: str
    weights: ModelWeights


def level_fraction(level: int) -> float:
    if not isinstance(level, int) or not 0 <= level <= LEVEL_MAX:
        raise ApiError(422, "bad_level", f"level must be an integer in 0..{LEVEL_MAX}")
    return level / LEVEL_MAX


def level_to_param(kind: Kind, level: int, config: AttackConfig, sign: int = 1) -> float:
    """Map a slider level to a scalar parameter (or epsilon fraction for linf)."""
    frac = level_fraction(level)
    if kind is Kind.LINF:
        return frac * config.epsilon
    b = config.bounds[kind]
    target = b.hi if sign >= 0 else b.lo
    return b.identity + frac * (target - b.identity)


def _parse_kind(name: str) -> Kind:
    kind = KIND_NAMES.get(str(name).lower())
    if kind is None:
        raise ApiError(422, "bad_kind", f"unknown kind {name!r}; valid: {sorted(KIND_NAMES)}")
    return kind


def _prediction_payload(model: LoadedModel, image: np.ndarray, label: int) -> dict:
    pred = classifier.forward(model.weights, image, true_label=label)
    return {
        "model_id": model.id,
        "label": pred.predicted_label,
        "class_name": model.weights.class_names[pred.predicted_label],
        "confidence": pred.confidence,
        "correct": bool(pred.correct),
        "probs": [float(p) for p in pred.probabilities],
    }


def _image_payload(image: np.ndarray) -> dict:
    return {
        "image_b64": encode_rgb8_base64(image),
        "width": int(image.shape[2]),
        "height": int(image.shape[1]),
    }


class PanelService:
    """Shared immutable state plus the two guarded mutable pieces
    (leaderboard file, linf-noise cache)."""

    def __init__(self, models, samples, leaderboard_path, config: AttackConfig | None = None):
        if not models:
            raise ValueError("need at least one model")
        self.models = list(models)
        self.model_by_id = {m.id: m for m in self.models}
        if len(self.model_by_id) != len(self.models):
            raise ValueError("duplicate model ids")
        self.samples = list(samples)
        self.sample_by_id = {s.id: s for s in self.samples}
        self.leaderboard_path = leaderboard_path
        self.config = config or AttackConfig()
        self._board_lock = threading.Lock()
        self._linf_cache: dict[tuple, np.ndarray] = {}
        self._linf_lock = threading.Lock()

    def get_sample(self, sample_id) -> Sample:
        s = self.sample_by_id.get(sample_id)
        if s is None:
            raise ApiError(404, "unknown_sample", f"no sample with id {sample_id!r}")
        return s

    def get_model(self, model_id) -> LoadedModel:
        m = self.model_by_id.get(model_id)
        if m is None:
            raise ApiError(404, "unknown_model", f"no model with id {model_id!r}")
        return m

    def linf_noise(self, sample: Sample, model: LoadedModel, eps: float) -> np.ndarray:
        """Optimized additive noise for the panel's linf slider, cached."""
        key = (sample.id, model.id, round(eps, 9))
        with self._linf_lock:
            hit = self._linf_cache.get(key)
        if hit is not None:
            return hit
        cfg = replace(self.config, enabled=(Kind.LINF,), epsilon=eps, early_stop=False)
        result = single_attack(model.weights, sample.image, sample.label, Kind.LINF, cfg)
        delta = result.chain[0][1]
        with self._linf_lock:
            self._linf_cache[key] = delta
        return delta

    def build_chain(self, sample: Sample, order: list[Kind], levels: dict[Kind, int],
                    signs: dict[Kind, int], linf_model: LoadedModel):
        """Level-mapped chain over kinds with level > 0, in the given order."""
        chain = []
        for kind in order:
            level = levels.get(kind, 0)
            if level == 0:
                continue
            if kind is Kind.LINF:
                eps = level_to_param(kind, level, self.config)
                chain.append((kind, self.linf_noise(sample, linf_model, eps)))
            else:
                chain.append((kind, level_to_param(kind, level, self.config, signs.get(kind, 1))))
        return chain

    def load_board(self) -> list[LeaderboardEntry]:
        import os

        if not os.path.exists(self.leaderboard_path):
            return []
        return leaderboard_load(self.leaderboard_path)

    def append_entry(self, entry: LeaderboardEntry) -> list[LeaderboardEntry]:
        with self._board_lock:
            entries = self.load_board()
            entries.append(entry)
            leaderboard_save(entries, self.leaderboard_path)
        return leaderboard_rank(entries)


def _config_from_body(base: AttackConfig, body: dict) -> AttackConfig:
    cfg = body or {}
    known = {"enabled", "epsilon", "steps", "step_fraction", "sweeps", "early_stop", "seed"}
    unknown = set(cfg) - known
    if unknown:
        raise ApiError(422, "bad_config", f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    if "enabled" in cfg:
        kwargs["enabled"] = tuple(_parse_kind(n) for n in cfg["enabled"])
    for key in ("epsilon", "step_fraction"):
        if key in cfg:
            kwargs[key] = float(cfg[key])
    for key in ("steps", "sweeps", "seed"):
        if key in cfg:
            kwargs[key] = int(cfg[key])
    if "early_stop" in cfg:
        kwargs["early_stop"] = bool(cfg["early_stop"])
    try:
        return replace(base, **kwargs)
    except ValueError as exc:
        raise ApiError(422, "bad_config", str(exc)) from exc


def _entry_payload(rank: int, e: LeaderboardEntry) -> dict:
    payload = {f: getattr(e, f) for f in evaluation._ENTRY_FIELDS}
    payload["rank"] = rank
    return payload


def create_app(service: PanelService, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="composite-attack panel API")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"error": exc.code, "message": exc.message})

    @app.get("/api/samples")
    def list_samples():
        return [
            {"id": s.id, "class_name": s.class_name, **_image_payload(s.image)}
            for s in service.samples
        ]

    @app.get("/api/models")
    def list_models():
        return [{"id": m.id, "name": m.name, "kind_tag": m.kind_tag} for m in service.models]

    @app.post("/api/perturb")
    async def perturb(request: Request):
        body = await request.json()
        sample = service.get_sample(body.get("sample_id"))
        raw_levels = body.get("levels") or {}
        levels = {}
        for name, level in raw_levels.items():
            kind = _parse_kind(name)
            level_fraction(level)
            levels[kind] = level
        signs = {_parse_kind(n): (1 if int(v) >= 0 else -1) for n, v in (body.get("signs") or {}).items()}
        if "order" in body and body["order"] is not None:
            order = [_parse_kind(n) for n in body["order"]]
            if len(set(order)) != len(order):
                raise ApiError(422, "duplicate_kind", "each kind may appear at most once in the order")
        else:
            order = [k for k in CANONICAL_ORDER]
        linf_model = service.get_model(body["linf_model_id"]) if body.get("linf_model_id") else service.models[0]
        chain = service.build_chain(sample, order, levels, signs, linf_model)
        image = transforms.compose(sample.image, chain)
        model_ids = body.get("model_ids")
        models = [service.get_model(mid) for mid in model_ids] if model_ids else service.models
        return {
            **_image_payload(image),
            "predictions": [_prediction_payload(m, image, sample.label) for m in models],
        }

    @app.post("/api/attack")
    async def run_attack(request: Request):
        body = await request.json()
        sample = service.get_sample(body.get("sample_id"))
        model = service.get_model(body.get("model_id"))
        cfg = _config_from_body(service.config, body.get("config") or {})
        strategy = body.get("strategy", "fixed")
        try:
            order, result = order_search(model.weights, sample.image, sample.label, cfg, strategy)
        except ValueError as exc:
            raise ApiError(422, "bad_strategy", str(exc)) from exc
        chain_params = {}
        for kind, param in result.chain:
            if kind is Kind.LINF:
                chain_params[kind.key] = {
                    "epsilon": cfg.epsilon,
                    "max_abs": float(np.abs(param.delta).max()),
                }
            else:
                chain_params[kind.key] = float(param)
        return {
            **_image_payload(result.adversarial),
            "order": [k.key for k in order],
            "chain_params": chain_params,
            "success": result.success,
            "loss_trace": result.loss_trace,
            "queries": result.model_queries,
        }

    @app.get("/api/order-grid")
    def order_grid_endpoint(sample_id: str, model_id: str, kinds: str, max_orders: int = 24):
        from itertools import permutations

        from .attack import order_grid
        from .classifier import SplitMix64

        sample = service.get_sample(sample_id)
        model = service.get_model(model_id)
        kind_list = [_parse_kind(n) for n in kinds.split(",") if n.strip()]
        if not 1 <= len(kind_list) <= 6:
            raise ApiError(422, "bad_kinds", "need between 1 and 6 kinds")
        if len(set(kind_list)) != len(kind_list):
            raise ApiError(422, "duplicate_kind", "kinds must be unique")
        perms = list(permutations(sorted(kind_list)))
        if len(perms) > max_orders:
            rng = SplitMix64(service.config.seed)
            chosen = []
            pool = list(perms)
            for _ in range(max_orders):
                chosen.append(pool.pop(rng.randint(len(pool))))
            perms = chosen
        cfg = replace(service.config, enabled=tuple(kind_list))
        rows = order_grid(model.weights, sample.image, sample.label, cfg, perms)
        payload = []
        for order, images, preds in rows:
            cells = []
            for image, pred in zip(images, preds):
                cells.append(
                    {
                        **_image_payload(image),
                        "label": pred.predicted_label,
                        "class_name": model.weights.class_names[pred.predicted_label],
                        "confidence": pred.confidence,
                        "correct": bool(pred.correct),
                    }
                )
            payload.append({"order": [k.key for k in order], "cells": cells})
        return {"rows": payload}

    @app.get("/api/leaderboard")
    def get_leaderboard():
        ranked = leaderboard_rank(service.load_board())
        return [_entry_payload(i + 1, e) for i, e in enumerate(ranked)]

    @app.post("/api/leaderboard")
    async def post_leaderboard(request: Request):
        body = await request.json()
        unknown = set(body) - set(evaluation._ENTRY_FIELDS)
        if unknown:
            raise ApiError(422, "bad_entry", f"unknown entry fields: {sorted(unknown)}")
        try:
            entry = LeaderboardEntry(**body)
        except (LeaderboardError, TypeError) as exc:
            raise ApiError(422, "bad_entry", str(exc)) from exc
        ranked = service.append_entry(entry)
        return [_entry_payload(i + 1, e) for i, e in enumerate(ranked)]

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="panel")

    return app
