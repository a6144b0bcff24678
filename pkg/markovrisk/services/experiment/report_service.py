"""
Result rows, CSV emission and SVG figures.

CSV floats are written with repr (shortest round-trip decimal) and empty
cells stand for a missing theory value, so parse_csv(emit_csv(rows)) gives
the rows back unchanged.
"""

import csv
import io
import logging
from collections import defaultdict
from pathlib import Path
from typing import Iterable, List, Literal, Optional, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from pydantic import BaseModel, Field  # noqa: E402

from markovrisk.services.utility.errors import ValidationError  # noqa: E402
from markovrisk.services.utility.logger import log_with_context  # noqa: E402

logger = logging.getLogger(__name__)

CSV_HEADER = (
    "experiment",
    "k",
    "n",
    "delta",
    "divergence",
    "estimator",
    "risk_mode",
    "trials",
    "mean_loss",
    "stderr",
    "theory_value",
    "master_seed",
)

_FLOAT_FIELDS = ("delta", "mean_loss", "stderr", "theory_value")
_INT_FIELDS = ("k", "n", "trials", "master_seed")

PathLike = Union[str, Path]


# ============================================================================
# ROW MODEL
# ============================================================================


class ResultRow(BaseModel):
    """One grid point of one curve."""

    model_config = {"extra": "forbid", "frozen": True}

    experiment: str = Field(min_length=1)
    k: int = Field(ge=2)
    n: int = Field(ge=1)
    delta: float
    divergence: str
    estimator: str
    risk_mode: str
    trials: int = Field(ge=1)
    mean_loss: float
    stderr: float
    theory_value: Optional[float] = None
    master_seed: int = Field(ge=0)

    @property
    def sort_key(self):
        return (self.k, self.n, self.estimator, self.divergence)


def sort_rows(rows: Iterable[ResultRow]) -> List[ResultRow]:
    return sorted(rows, key=lambda row: row.sort_key)


# ============================================================================
# CSV
# ============================================================================


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_csv(rows: Iterable[ResultRow]) -> str:
    """CSV text with the fixed header, rows sorted by (k, n, estimator, divergence)."""
    rows = sort_rows(rows)
    if not rows:
        raise ValidationError("No result rows to emit")
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_format_cell(getattr(row, column)) for column in CSV_HEADER])
    return buffer.getvalue()


def emit_csv(rows: Iterable[ResultRow], path: PathLike) -> Path:
    """
    Write result rows to `path`.

    Raises:
        ValidationError: no rows
        OSError: the path is not writable
    """
    text = render_csv(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)
    log_with_context(logger, logging.INFO, "CSV written", path=str(path))
    return path


def parse_csv(source: Union[PathLike, io.TextIOBase]) -> List[ResultRow]:
    """Read rows written by emit_csv."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as handle:
            return parse_csv(handle)

    reader = csv.DictReader(source)
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise ValidationError(f"Unexpected CSV header: {reader.fieldnames}")

    rows = []
    for record in reader:
        values = dict(record)
        for name in _INT_FIELDS:
            values[name] = int(values[name])
        for name in _FLOAT_FIELDS:
            values[name] = float(values[name]) if values[name] != "" else None
        rows.append(ResultRow(**values))
    return rows


# ============================================================================
# PLOT
# ============================================================================


def _x_axis(rows: List[ResultRow]) -> str:
    """n on the x axis, or k when every row shares one n."""
    if len({row.n for row in rows}) == 1 and len({row.k for row in rows}) > 1:
        return "k"
    return "n"


def emit_plot(
    rows: Iterable[ResultRow], path: PathLike, axes: Literal["loglog", "semilog"] = "loglog"
) -> Path:
    """
    Static SVG figure: one line per (estimator, divergence), split by k when
    several k share the n axis, and a dashed theory line wherever theory
    values exist.

    Raises:
        ValidationError: no rows, rows from several experiments, or bad axes
    """
    rows = list(rows)
    if not rows:
        raise ValidationError("No result rows to plot")
    experiments = {row.experiment for row in rows}
    if len(experiments) != 1:
        raise ValidationError(f"Rows mix experiments: {sorted(experiments)}")
    if axes not in ("loglog", "semilog"):
        raise ValidationError(f"axes must be 'loglog' or 'semilog', got '{axes}'")

    x_name = _x_axis(rows)
    # Each k is its own curve when several share the n axis
    split_k = x_name == "n" and len({row.k for row in rows}) > 1
    curves = defaultdict(list)
    for row in rows:
        curves[(row.estimator, row.divergence, row.k if split_k else 0)].append(row)

    plt.rcParams["svg.hashsalt"] = "markovrisk"
    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    try:
        for (estimator, divergence, k), points in sorted(curves.items()):
            name = f"{estimator}-{divergence}" + (f"-k{k}" if split_k else "")
            label = f"{estimator} {divergence}" + (f" k={k}" if split_k else "")
            points.sort(key=lambda row: getattr(row, x_name))
            xs = [getattr(row, x_name) for row in points]
            (line,) = ax.plot(
                xs,
                [row.mean_loss for row in points],
                marker="o",
                markersize=3,
                label=label,
            )
            line.set_gid(f"real-{name}")

            theory = [(x, row.theory_value) for x, row in zip(xs, points) if row.theory_value is not None]
            if theory:
                (dashed,) = ax.plot(
                    [x for x, _ in theory],
                    [y for _, y in theory],
                    linestyle="--",
                    color=line.get_color(),
                    label=f"theory {label}",
                )
                dashed.set_gid(f"theory-{name}")

        ax.set_yscale("log")
        if axes == "loglog":
            ax.set_xscale("log")
        ax.set_xlabel(x_name)
        ax.set_ylabel("mean loss")
        ax.set_title(rows[0].experiment)
        ax.legend(fontsize="small")

        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)

    log_with_context(logger, logging.INFO, "Plot written", experiment=rows[0].experiment, path=str(path))
    return path
