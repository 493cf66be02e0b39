"""
Experiment Runner Module

Runs one sweep: for every axis value, the requested bound families and the
optional empirical ML campaign; writes CSV or JSON results.
"""

import json
import logging
import time
from functools import partial
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from pnbounds import __version__
from pnbounds.bounds_crb import (
    BoundReport, deterministic_crb, deterministic_fim, hybrid_crb, hybrid_fim_observation,
    hybrid_fim_prior, snapshot
)
from pnbounds.config import BoundRequest, SweepPoint, SweepSpec
from pnbounds.errors import PnBoundsError
from pnbounds.estimator import rmse_campaign
from pnbounds.mcrb_engine import averaged_lb
from pnbounds.ofdm_frame import SymbolGrid, qpsk_symbols
from pnbounds.phase_noise import sample_time_grid
from pnbounds.utils import parallel_map

logger = logging.getLogger(__name__)

FAMILY_COLUMNS = {
    BoundRequest.CRB_FREE: ("crb_free_range_m", "crb_free_vel_mps"),
    BoundRequest.CRB: ("crb_range_m", "crb_vel_mps"),
    BoundRequest.CRB_DELAY_PRIOR: ("crb_dp_range_m", "crb_dp_vel_mps"),
    BoundRequest.LB: ("lb_range_m", "lb_vel_mps"),
}
CAMPAIGN_COLUMNS = ("ml_range_m", "ml_vel_mps")
COUNT_COLUMNS = ("n_real", "n_excluded")
FLOAT_FORMAT = "%.8e"

STATUS_OK = "ok"
STATUS_BEYOND_CP = "beyond_cp"


def result_columns(families: Sequence[BoundRequest], campaign: bool = False) -> List[str]:
    """Column order of the result table: axis value, bound pairs, campaign pair, counts, status."""
    columns = ["axis_value"]
    for family in BoundRequest:
        if family in families:
            columns.extend(FAMILY_COLUMNS[family])
    if campaign:
        columns.extend(CAMPAIGN_COLUMNS)
    columns.extend(COUNT_COLUMNS)
    columns.append("status")
    return columns


@dataclass
class ResultRow:
    """
    Results of one axis value.

    Attributes:
        axis_value: Value of the swept quantity
        values: RMSE columns (range m, velocity m/s) keyed by column name
        n_real: PN realizations entering the averaged LB
        n_excluded: Realizations dropped for a non-converged search
        status: "ok", "beyond_cp" or "error:<ExceptionClass>"
        wall_time_s: Compute time of the point (logged, never written)
    """

    axis_value: float
    values: Dict[str, float] = field(default_factory=dict)
    n_real: int = 0
    n_excluded: int = 0
    status: str = STATUS_OK
    wall_time_s: float = 0.0

    def record_failure(self, err: Exception) -> None:
        if not self.status.startswith("error:"):
            self.status = f"error:{type(err).__name__}"

    def to_record(self, columns: Sequence[str]) -> Dict[str, Any]:
        record: Dict[str, Any] = {}
        for column in columns:
            if column == "axis_value":
                record[column] = float(self.axis_value)
            elif column in COUNT_COLUMNS:
                record[column] = int(getattr(self, column))
            elif column == "status":
                record[column] = self.status
            else:
                record[column] = float(self.values.get(column, np.nan))
        return record


class BoundCalculator:
    """
    Computes every requested bound for the points of one sweep.

    Attributes:
        spec: Resolved sweep
        symbols: QPSK grid drawn once from the master seed; all bounds are conditioned on it
    """

    def __init__(self, spec: SweepSpec, symbols: Optional[SymbolGrid] = None):
        self.spec = spec
        self.symbols = symbols if symbols is not None else qpsk_symbols(spec.ofdm, spec.seed)

    def pn_free_crb(self, point: SweepPoint) -> BoundReport:
        fim = deterministic_fim(point.ofdm, self.symbols, point.truth, point.noise)
        return deterministic_crb(fim, snapshot(point.ofdm, point.truth, point.noise))

    def hybrid_crb(self, point: SweepPoint, include_delay_prior: bool = False) -> BoundReport:
        grid = sample_time_grid(point.ofdm)
        obs = hybrid_fim_observation(point.ofdm, self.symbols, point.truth, point.noise)
        prior = hybrid_fim_prior(point.osc, grid, point.truth.delay_s,
                                 include_delay_prior=include_delay_prior)
        return hybrid_crb(obs, prior, snapshot(point.ofdm, point.truth, point.noise, point.osc))

    def averaged_lb(self, point: SweepPoint) -> BoundReport:
        # same master seed at every point: common PN draws across the sweep
        return averaged_lb(point.ofdm, self.symbols, point.truth, point.noise, point.osc,
                           n_realizations=self.spec.n_realizations, seed=self.spec.seed,
                           window_cells=self.spec.window_cells)

    def compute_point(self, value: float) -> ResultRow:
        """
        Every requested family at one axis value.

        Failures are recorded in the row status; the other families still run.
        """
        start = time.perf_counter()
        row = ResultRow(axis_value=value)
        try:
            point = self.spec.point(value)
        except (PnBoundsError, ValueError) as err:
            logger.error(f"Point {value}: {err}")
            row.record_failure(err)
            return row

        beyond_cp = point.truth.delay_s > point.ofdm.cp_duration_s
        if beyond_cp:
            row.status = STATUS_BEYOND_CP
            logger.warning(f"Point {value}: target delay exceeds the CP, bounds only")

        handlers = {
            BoundRequest.CRB_FREE: self.pn_free_crb,
            BoundRequest.CRB: self.hybrid_crb,
            BoundRequest.CRB_DELAY_PRIOR: partial(self.hybrid_crb, include_delay_prior=True),
            BoundRequest.LB: self.averaged_lb,
        }
        for family in self.spec.families:
            try:
                report = handlers[family](point)
            except (PnBoundsError, ValueError, np.linalg.LinAlgError) as err:
                logger.error(f"Point {value}: {family.value} failed: {err}")
                row.record_failure(err)
                continue
            range_col, vel_col = FAMILY_COLUMNS[family]
            row.values[range_col] = report.range_rmse_m
            row.values[vel_col] = report.velocity_rmse_mps
            if family is BoundRequest.LB:
                row.n_real = report.metadata["n_realizations"] - report.metadata["n_excluded"]
                row.n_excluded = report.metadata["n_excluded"]

        if self.spec.campaign_trials > 0 and not beyond_cp:
            try:
                campaign = rmse_campaign(point.ofdm, self.spec.symbols_policy, point.truth,
                                         point.noise, osc=point.osc,
                                         n_trials=self.spec.campaign_trials,
                                         seed=self.spec.seed, symbols=self.symbols,
                                         window_cells=self.spec.window_cells)
                row.values["ml_range_m"] = campaign.range_rmse_m
                row.values["ml_vel_mps"] = campaign.velocity_rmse_mps
            except (PnBoundsError, ValueError) as err:
                logger.error(f"Point {value}: ML campaign failed: {err}")
                row.record_failure(err)

        row.wall_time_s = time.perf_counter() - start
        logger.info(f"{self.spec.axis.value} = {value:g}: {row.status} "
                    f"({row.wall_time_s:.2f} s)")
        return row


def run_sweep(spec: SweepSpec, jobs: int = 1, show_progress: bool = False) -> List[ResultRow]:
    """
    Compute one row per axis value, in axis order.

    Args:
        spec: Resolved sweep
        jobs: Worker processes for the axis points
        show_progress: tqdm bar on terminals

    Returns:
        List of ResultRow aligned with spec.values
    """
    calculator = BoundCalculator(spec)
    logger.info(f"Sweep over {spec.axis.value}: {spec.num_rows} points, "
                f"families {','.join(f.value for f in spec.families)}, seed {spec.seed}")
    return parallel_map(calculator.compute_point, spec.values, jobs=jobs,
                        desc=f"sweep {spec.axis.value}", show_progress=show_progress)


def results_frame(rows: Sequence[ResultRow], spec: SweepSpec) -> pd.DataFrame:
    columns = result_columns(spec.families, spec.campaign_trials > 0)
    return pd.DataFrame([row.to_record(columns) for row in rows], columns=columns)


def emit_results(rows: Sequence[ResultRow], fmt: str, path: Union[str, Path],
                 spec: SweepSpec) -> Path:
    """
    Write results as CSV or JSON, plus the resolved config echo next to them.

    CSV starts with a `# config_sha256=<hex>` comment, then the header and one
    row per axis value in 9-significant-digit scientific notation. JSON holds
    {"metadata": {...}, "rows": [...]}.

    Args:
        rows: Sweep rows (non-empty)
        fmt: "csv" or "json"
        path: Output file
        spec: The sweep that produced the rows

    Returns:
        Path of the config echo file

    Raises:
        ValueError: If rows is empty or fmt is unknown
        OSError: If the path is not writable
    """
    if not rows:
        raise ValueError("No result rows to write")
    if fmt not in ("csv", "json"):
        raise ValueError(f"Unknown output format: {fmt}")

    path = Path(path)
    frame = results_frame(rows, spec)
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="") as f:
            f.write(f"# config_sha256={spec.digest}\n")
            frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, na_rep="nan",
                         lineterminator="\n")
    else:
        document = {
            "metadata": {
                "config": spec.to_flat_lines(),
                "config_sha256": spec.digest,
                "seed": spec.seed,
                "version": __version__,
            },
            "rows": frame.astype(object).where(frame.notna(), None).to_dict(orient="records"),
        }
        with open(path, "w", encoding="utf-8") as f:
            json.dump(document, f, indent=2, allow_nan=False)
            f.write("\n")

    echo = path.with_name(path.name + ".config")
    echo.write_text("\n".join(spec.to_flat_lines()) + "\n", encoding="utf-8")
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return echo


def read_results_csv(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", keep_default_na=True)
