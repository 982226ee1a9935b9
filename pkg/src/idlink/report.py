"""CSV tables and matplotlib figures written next to CLI output."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _out(directory, name: str) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    return d / name


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-stable
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def mining_attempts(attempts, difficulty_bits: int, directory) -> list[Path]:
    csv_path = write_csv(_out(directory, "mining_attempts.csv"), ["block", "attempts"], enumerate(attempts))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(range(len(attempts)), attempts, color="0.55", width=0.8)
    expected = 2 ** difficulty_bits
    ax.axhline(expected, color="C3", lw=1.2, label=f"expected $2^{{{difficulty_bits}}}$ = {expected}")
    if attempts:
        mean = sum(attempts) / len(attempts)
        ax.axhline(mean, color="C0", lw=1.0, ls="--", label=f"sample mean = {mean:.0f}")
    ax.set_xlabel("block")
    ax.set_ylabel("hash attempts")
    ax.legend(frameon=False, fontsize=8)
    return [csv_path, _save(fig, _out(directory, "mining_attempts.png"))]


def repair_cost(report, directory) -> list[Path]:
    idx = [report.tampered_index + i for i in range(report.blocks_remined)]
    csv_path = write_csv(_out(directory, "repair_cost.csv"), ["block", "attempts"],
                         zip(idx, report.per_block_attempts))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    cumulative, total = [], 0
    for a in report.per_block_attempts:
        total += a
        cumulative.append(total)
    ax.bar(idx, report.per_block_attempts, color="0.6", label="per block")
    ax.plot(idx, cumulative, "o-", color="C3", ms=3, label="cumulative")
    ax.set_xlabel("re-mined block")
    ax.set_ylabel("hash attempts")
    ax.set_title(f"tamper at block {report.tampered_index}: {report.blocks_remined} blocks re-mined", fontsize=9)
    ax.legend(frameon=False, fontsize=8)
    return [csv_path, _save(fig, _out(directory, "repair_cost.png"))]


def retention(report, directory) -> list[Path]:
    csv_path = write_csv(_out(directory, "retention.csv"), ["chip", "mismatched_bits"],
                         enumerate(report.mismatches))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.hist(report.mismatches, bins=min(50, max(1, len(set(report.mismatches)))), color="0.5")
    ax.set_xlabel("mismatched bits after aging")
    ax.set_ylabel("chips")
    ax.set_title(f"{report.n_chips} chips, {report.temp_c:g} C / {report.duration_hours:g} h: "
                 f"{report.inconsistent_chips} inconsistent", fontsize=9)
    return [csv_path, _save(fig, _out(directory, "retention.png"))]


def simulation(report, directory) -> list[Path]:
    d = report.to_dict()
    csv_path = write_csv(_out(directory, "simulation.csv"), ["metric", "value"], d.items())
    labels = ["transfers", "spoofs", "tampers"]
    tried = [report.transfers_ok + report.transfers_rejected, report.spoofs_attempted, report.tampers_attempted]
    hit = [report.transfers_ok, report.spoofs_accepted, report.tampers_detected]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = range(len(labels))
    ax.bar([i - 0.2 for i in x], tried, width=0.4, color="0.7", label="attempted")
    ax.bar([i + 0.2 for i in x], hit, width=0.4, color="C0", label="accepted / detected")
    ax.set_xticks(list(x), labels)
    ax.legend(frameon=False, fontsize=8)
    return [csv_path, _save(fig, _out(directory, "simulation.png"))]
