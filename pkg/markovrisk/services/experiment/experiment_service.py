"""
Experiment configuration, presets and the grid runner.

Each curve (estimator, divergence, k) gets its own random chain, seeded by
hashing the master seed with the curve name; every grid point then runs
`trials` independent restarts on substreams keyed by (master_seed, curve
seed, n, trial).
"""

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from config import Config
from markovrisk.services.divergence.divergence_service import DivergenceSpec, parse_divergence
from markovrisk.services.experiment.report_service import ResultRow, sort_rows
from markovrisk.services.markov.estimator_service import EstimatorSpec, parse_estimator
from markovrisk.services.markov.markov_service import MarkovChain, random_chain, stationary_distribution
from markovrisk.services.risk.risk_service import (
    ESTIMATION_MAX,
    PREDICTION,
    estimation_losses,
    prediction_losses,
    resolve_workers,
    summarize_estimation,
    summarize_prediction,
)
from markovrisk.services.theory.theory_service import BoundQuery, bound
from markovrisk.services.utility.errors import ValidationError
from markovrisk.services.utility.logger import log_with_context

logger = logging.getLogger(__name__)

RiskMode = Literal["auto", "prediction", "estimation_max", "estimation_weighted"]


# ============================================================================
# CONFIGURATION MODEL
# ============================================================================


class ExperimentConfig(BaseModel):
    """One experiment: a k grid, a geometric n grid, and the curves to draw."""

    model_config = {"extra": "forbid"}

    name: str = Field(min_length=1)
    k: List[int] = Field(min_length=1)
    n_min: int = Field(ge=4)
    n_max: int = Field(ge=4)
    n_points: int = Field(default=1, ge=1)
    delta: float = Field(ge=0.0)
    divergences: List[str] = Field(min_length=1)
    estimators: List[str] = Field(min_length=1)
    trials: int = Field(default=100, ge=1)
    master_seed: int = Field(default_factory=lambda: Config.MASTER_SEED, ge=0)
    burn_in: bool = False
    risk_mode: RiskMode = "auto"
    adjust_prediction_constant: bool = False

    @field_validator("k", mode="before")
    @classmethod
    def _single_k(cls, value):
        return [value] if isinstance(value, int) else value

    @field_validator("k")
    @classmethod
    def _k_range(cls, value):
        if any(k < 2 for k in value):
            raise ValueError("every k must be >= 2")
        return sorted(set(value))

    @field_validator("divergences")
    @classmethod
    def _known_divergences(cls, value):
        for token in value:
            parse_divergence(token)
        return value

    @field_validator("estimators")
    @classmethod
    def _known_estimators(cls, value):
        for token in value:
            parse_estimator(token)
        return value

    @model_validator(mode="after")
    def _consistent(self):
        if self.n_max < self.n_min:
            raise ValueError("n_max must be >= n_min")
        if self.n_points > 1 and self.n_max == self.n_min:
            raise ValueError("n_points > 1 needs n_max > n_min")
        if not self.delta < 1.0 / max(self.k):
            raise ValueError(f"delta must lie in [0, 1/k) for every k; 1/max(k) = {1.0 / max(self.k)}")
        if self.risk_mode.startswith("estimation"):
            for token in self.estimators:
                if parse_estimator(token).prediction_only:
                    raise ValueError(f"estimator '{token}' cannot be used with {self.risk_mode}")
        return self

    @property
    def n_grid(self) -> List[int]:
        """Geometric integer grid from n_min to n_max."""
        if self.n_points == 1:
            return [self.n_min]
        grid = np.rint(np.geomspace(self.n_min, self.n_max, self.n_points)).astype(int)
        return [int(n) for n in np.unique(grid)]

    def mode_for(self, estimator: EstimatorSpec) -> str:
        if self.risk_mode != "auto":
            return self.risk_mode
        return PREDICTION if estimator.prediction_only else ESTIMATION_MAX


def _location(text: str, position: int) -> str:
    line = text.count("\n", 0, position) + 1
    column = position - (text.rfind("\n", 0, position) + 1) + 1
    return f"line {line}, column {column}"


def load_config(path: Union[str, Path], overrides: Optional[Dict] = None) -> ExperimentConfig:
    """
    Read a flat JSON config and apply flag overrides.

    Raises:
        ValidationError: malformed JSON (with line/column) or invalid fields
        OSError: unreadable file
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}")
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: the config must be a JSON object")

    data.update(overrides or {})
    try:
        return ExperimentConfig(**data)
    except PydanticValidationError as e:
        raise ValidationError(f"{path}: {_describe(e, text)}")


def _describe(error: PydanticValidationError, text: str = "") -> str:
    messages = []
    for item in error.errors():
        field = ".".join(str(part) for part in item["loc"]) or "config"
        where = ""
        if text and item["loc"]:
            position = text.find(f'"{item["loc"][0]}"')
            if position >= 0:
                where = f" ({_location(text, position)})"
        messages.append(f"{field}{where}: {item['msg']}")
    return "; ".join(messages)


def build_config(data: Dict) -> ExperimentConfig:
    """Validate a config dict, converting pydantic errors to ValidationError."""
    try:
        return ExperimentConfig(**data)
    except PydanticValidationError as e:
        raise ValidationError(_describe(e))


# ============================================================================
# PRESETS
# ============================================================================


PRESETS: Dict[str, Dict] = {
    # KL prediction (hybrid) and KL estimation (add-1/2)
    "fig1a": {
        "name": "fig1a",
        "k": [6],
        "n_min": 10_000,
        "n_max": 100_000,
        "n_points": 10,
        "delta": 0.05,
        "divergences": ["kl"],
        "estimators": ["hybrid", "add(0.5)"],
        "adjust_prediction_constant": True,
    },
    # L2 estimation, add-sqrt against add-1
    "fig1b": {
        "name": "fig1b",
        "k": [6],
        "n_min": 10_000,
        "n_max": 100_000,
        "n_points": 10,
        "delta": 0.05,
        "divergences": ["l2"],
        "estimators": ["add-sqrt", "add(1)"],
    },
    # Other ordinary f-divergences with add-1/2
    "fig1c": {
        "name": "fig1c",
        "k": [6],
        "n_min": 10_000,
        "n_max": 100_000,
        "n_points": 10,
        "delta": 0.05,
        "divergences": ["hellinger", "chi2", "alpha(1/3)"],
        "estimators": ["add(0.5)"],
    },
    # Fixed n, varying k
    "fig1d": {
        "name": "fig1d",
        "k": list(range(4, 37, 4)),
        "n_min": 100_000,
        "n_max": 100_000,
        "n_points": 1,
        "delta": 0.01,
        "divergences": ["kl"],
        "estimators": ["add(0.5)"],
    },
}


def preset(name: str, overrides: Optional[Dict] = None) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValidationError(f"Unknown preset '{name}' (choose from {', '.join(sorted(PRESETS))})")
    return build_config({**PRESETS[name], **(overrides or {})})


# ============================================================================
# RUNNER
# ============================================================================


def curve_seed(master_seed: int, curve_name: str) -> int:
    """63-bit seed from sha256(master_seed:curve_name)."""
    digest = hashlib.sha256(f"{master_seed}:{curve_name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass(frozen=True)
class GridPoint:
    experiment: str
    k: int
    n: int
    delta: float
    estimator: EstimatorSpec
    divergence: DivergenceSpec
    mode: str
    trials: int
    master_seed: int
    seed: int
    chain: MarkovChain
    burn_in: bool
    adjust_prediction: bool


def theory_value(point: GridPoint) -> Optional[float]:
    """The matching upper bound for a grid point, or None when no bound applies."""
    divergence = point.divergence
    if point.n < 3:
        return None

    if point.mode == PREDICTION:
        if divergence.token != "kl":
            return None
        query = BoundQuery(k=point.k, n=point.n, risk="prediction_kl", side="upper")
        return bound(query, adjust_prediction=point.adjust_prediction)

    weighted = point.mode == "estimation_weighted"
    if divergence.is_f_divergence:
        risk, curvature = ("estimation_f_weighted" if weighted else "estimation_f"), divergence.curvature
    elif divergence.kind == "l2":
        risk, curvature = ("estimation_l2_weighted" if weighted else "estimation_l2"), 1.0
    else:
        return None

    pi_star = min(float(stationary_distribution(point.chain.matrix).probs.min()), 1.0 / point.k)
    query = BoundQuery(
        k=point.k, n=point.n, pi_star=pi_star, curvature=curvature, risk=risk, side="upper"
    )
    return bound(query)


def evaluate_point(point: GridPoint) -> ResultRow:
    """Monte Carlo risk at one grid point (runs in a worker process)."""
    keys = (point.master_seed, point.seed, point.n)
    if point.mode == PREDICTION:
        losses = prediction_losses(
            point.chain, point.estimator, point.n, point.divergence, point.trials, keys, workers=1
        )
        risk = summarize_prediction(losses)
    else:
        losses = estimation_losses(
            point.chain,
            point.estimator,
            point.n,
            point.divergence,
            point.trials,
            keys,
            burn_in=point.burn_in,
            workers=1,
        )
        risk = summarize_estimation(point.chain, losses, point.mode)

    log_with_context(
        logger,
        logging.DEBUG,
        "Grid point evaluated",
        experiment=point.experiment,
        k=point.k,
        n=point.n,
        estimator=point.estimator.token,
        divergence=point.divergence.token,
    )
    return ResultRow(
        experiment=point.experiment,
        k=point.k,
        n=point.n,
        delta=point.delta,
        divergence=point.divergence.token,
        estimator=point.estimator.token,
        risk_mode=point.mode,
        trials=point.trials,
        mean_loss=risk.value,
        stderr=risk.stderr,
        theory_value=theory_value(point),
        master_seed=point.master_seed,
    )


def grid_points(config: ExperimentConfig) -> List[GridPoint]:
    """Every (curve, n) pair, with one chain generated per curve."""
    points = []
    for k in config.k:
        for est_token in config.estimators:
            estimator = parse_estimator(est_token)
            for div_token in config.divergences:
                divergence = parse_divergence(div_token)
                name = f"{estimator.token}|{divergence.token}|{k}"
                seed = curve_seed(config.master_seed, name)
                chain = random_chain(k, config.delta, seed)
                for n in config.n_grid:
                    points.append(
                        GridPoint(
                            experiment=config.name,
                            k=k,
                            n=n,
                            delta=config.delta,
                            estimator=estimator,
                            divergence=divergence,
                            mode=config.mode_for(estimator),
                            trials=config.trials,
                            master_seed=config.master_seed,
                            seed=seed,
                            chain=chain,
                            burn_in=config.burn_in,
                            adjust_prediction=config.adjust_prediction_constant,
                        )
                    )
    return points


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> List[ResultRow]:
    """
    Evaluate every grid point, fanning points out over a process pool.

    Returns:
        List[ResultRow]: sorted by (k, n, estimator, divergence); identical
        for every worker count
    """
    workers = resolve_workers(workers)
    points = grid_points(config)
    log_with_context(
        logger,
        logging.INFO,
        "Running experiment",
        experiment=config.name,
        points=len(points),
        trials=config.trials,
        workers=workers,
    )

    if workers == 1 or len(points) == 1:
        rows = [evaluate_point(point) for point in points]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(points))) as pool:
            rows = list(pool.map(evaluate_point, points))

    log_with_context(logger, logging.INFO, "Experiment finished", experiment=config.name, rows=len(rows))
    return sort_rows(rows)
