import os
import csv
import hashlib
import logging
from typing import List, Sequence

from ..scenarios import Metrics, SimLog, SimRecord

logger = logging.getLogger(__name__)

# Constants
LOG_COLUMNS = [
    "t", "xi", "yi", "psii", "vi", "deltai", "xj", "yj", "psij", "vj", "deltaj",
    "unom_vi", "unom_di", "unom_vj", "unom_dj", "u_vi", "u_di", "u_vj", "u_dj",
    "h", "mtv_exact", "c2c_exact", "psi1", "psi2", "qp_status", "qp_ms",
]
WALL_TIME_COLUMNS = {"qp_ms"}


def _number(value: float) -> str:
    return format(float(value), ".17g")


class SimLogExporter:
    def __init__(self, out_dir: str):
        """Writes run logs and summaries into out_dir, creating it if needed"""
        self.out_dir = out_dir
        try:
            os.makedirs(out_dir, exist_ok=True)
        except OSError as e:
            logger.error(f"Could not create output directory {out_dir}: {e}")
            raise

    def _header_row(self) -> List[str]:
        return list(LOG_COLUMNS)

    def _format_record(self, record: SimRecord) -> List[str]:
        """One CSV row in LOG_COLUMNS order"""
        states = [*record.state_i.as_array(), *record.state_j.as_array()]
        numbers = [
            record.t,
            *states,
            *record.u_nom,
            *record.u_safe,
            record.h,
            record.mtv_exact,
            record.c2c_exact,
            record.psi1,
            record.psi2,
        ]
        return [_number(value) for value in numbers] + [record.qp_status, f"{record.qp_ms:.4f}"]

    def export_log(self, log: SimLog, filename: str = "log.csv") -> str:
        """Write every record of the run; returns the file path"""
        path = os.path.join(self.out_dir, filename)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(self._header_row())
            for record in log.records:
                writer.writerow(self._format_record(record))
        logger.info(f"Exported {len(log)} log rows to {path}")
        return path

    def _format_metrics(self, metrics: Metrics) -> List[str]:
        completion = "none" if metrics.completion_time is None else f"{metrics.completion_time:.2f}"
        return [
            f"kind: {metrics.kind.value}",
            f"margin_mode: {metrics.margin_mode.value}",
            f"min_exact_margin_m: {metrics.min_exact_margin:.6f}",
            f"min_margin_time_s: {metrics.min_margin_time:.2f}",
            f"completed: {str(metrics.completed).lower()}",
            f"completion_time_s: {completion}",
            f"evasion_i_percent: {metrics.evasion_i_percent:.2f}",
            f"evasion_j_percent: {metrics.evasion_j_percent:.2f}",
            f"evasion_average_percent: {metrics.average_evasion_percent:.2f}",
            f"y_nom_percent: {metrics.y_nom_percent:.2f}",
            f"qp_mean_ms: {metrics.qp_mean_ms:.3f}",
            f"qp_max_ms: {metrics.qp_max_ms:.3f}",
            f"relaxed_steps: {metrics.relaxed_steps}",
            f"steps: {metrics.steps}",
        ]

    def export_metrics(self, metrics: Metrics, filename: str = "metrics.txt") -> str:
        path = os.path.join(self.out_dir, filename)
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self._format_metrics(metrics)) + "\n")
        logger.info(f"Exported metrics to {path}")
        return path

    def export_comparison(self, labels: Sequence[str], rows: Sequence[Metrics], filename: str = "comparison.txt") -> str:
        """Side-by-side table, one row per run"""
        header = f"{'run':<24}{'mode':<8}{'min_margin_m':>14}{'completed':>11}{'t_done_s':>10}" \
                 f"{'evasion_i%':>12}{'evasion_j%':>12}{'evasion_avg%':>14}{'qp_mean_ms':>12}{'relaxed':>9}"
        lines = [header]
        for label, metrics in zip(labels, rows):
            completion = "-" if metrics.completion_time is None else f"{metrics.completion_time:.2f}"
            lines.append(
                f"{label:<24}{metrics.margin_mode.value:<8}{metrics.min_exact_margin:>14.5f}"
                f"{str(metrics.completed).lower():>11}{completion:>10}"
                f"{metrics.evasion_i_percent:>12.2f}{metrics.evasion_j_percent:>12.2f}"
                f"{metrics.average_evasion_percent:>14.2f}{metrics.qp_mean_ms:>12.3f}{metrics.relaxed_steps:>9}"
            )
        path = os.path.join(self.out_dir, filename)
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        logger.info(f"Exported comparison of {len(rows)} runs to {path}")
        return path


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def log_sha256(path: str) -> str:
    """Hash of a run log with the wall-time columns left out"""
    digest = hashlib.sha256()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        keep = [index for index, name in enumerate(header) if name not in WALL_TIME_COLUMNS]
        for row in [header, *reader]:
            digest.update(",".join(row[index] for index in keep).encode("utf-8"))
            digest.update(b"\n")
    return digest.hexdigest()
