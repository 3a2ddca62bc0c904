"""Static figures and gnuplot data files for experiment result directories.

Every recognized CSV ``name.csv`` yields ``name.dat`` (whitespace columns,
``#`` header) and ``name.svg``.  SVG output is made reproducible by fixing
the hash salt and dropping the date stamp.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

params = {
    "svg.hashsalt": "mcre-lab",
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "figure.figsize": (5.0, 3.4),
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _read(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return (rows[0], rows[1:]) if rows else ([], [])


def _num(rows, i) -> np.ndarray:
    out = []
    for r in rows:
        try:
            out.append(float(r[i]))
        except (ValueError, IndexError):
            out.append(np.nan)
    return np.array(out)


def write_dat(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    with open(path, "w") as fh:
        fh.write("# " + " ".join(header) + "\n")
        for row in zip(*columns):
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _save(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_tail(path: Path) -> list[Path]:
    header, rows = _read(path)
    n, p, se, fit = (_num(rows, header.index(c)) for c in ("n", "p_tau_gt_n", "stderr", "bound_fit"))
    dat = path.with_suffix(".dat")
    write_dat(dat, ["n", "p_tau_gt_n", "stderr", "bound_fit"], [n, p, se, fit])
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        keep = p > 0
        ax.semilogy(n[keep], p[keep], "k-", label=r"empirical $P(\tau>n)$")
        ax.semilogy(n, fit, "r--", label=r"fit $c_1 e^{-c_2\sqrt{n}}$")
        ax.set_xlabel("n")
        ax.set_ylabel("tail probability")
        ax.legend()
        _save(fig, path.with_suffix(".svg"))
    return [dat, path.with_suffix(".svg")]


def plot_fclt(paths_csv: Path, var_csv: Path | None, n_paths: int = 50) -> list[Path]:
    header, rows = _read(paths_csv)
    rep, t, b = (_num(rows, header.index(c)) for c in ("replica", "t", "B_n"))
    out = []
    dat = paths_csv.with_suffix(".dat")
    write_dat(dat, ["replica", "t", "B_n"], [rep, t, b])
    out.append(dat)
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for r in np.unique(rep)[:n_paths]:
            sel = rep == r
            ax.step(np.concatenate([[0.0], t[sel]]), np.concatenate([[0.0], b[sel]]), where="post",
                    lw=0.6, alpha=0.6)
        ax.set_xlabel("t")
        ax.set_ylabel(r"$B_n(t)$")
        _save(fig, paths_csv.with_suffix(".svg"))
    out.append(paths_csv.with_suffix(".svg"))
    if var_csv is not None and var_csv.exists():
        h2, r2 = _read(var_csv)
        tt, vv = _num(r2, h2.index("t")), _num(r2, h2.index("var"))
        dat2 = var_csv.with_suffix(".dat")
        write_dat(dat2, ["t", "var"], [tt, vv])
        with plt.rc_context(params):
            fig, ax = plt.subplots()
            ax.plot(tt, vv, "ko-", ms=2, label=r"Var $B_n(t)$")
            ax.plot([0, 1], [0, 1], "r--", label="t")
            ax.set_xlabel("t")
            ax.set_ylabel("variance")
            ax.legend()
            _save(fig, var_csv.with_suffix(".svg"))
        out += [dat2, var_csv.with_suffix(".svg")]
    return out


def plot_generic(path: Path, logy: bool = False) -> list[Path]:
    """First column on x, every other numeric column as a curve."""
    header, rows = _read(path)
    cols = [_num(rows, i) for i in range(len(header))]
    numeric = [i for i, c in enumerate(cols) if np.isfinite(c).any()]
    if len(numeric) < 2:
        return []
    dat = path.with_suffix(".dat")
    write_dat(dat, [header[i] for i in numeric], [cols[i] for i in numeric])
    x = cols[numeric[0]]
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        for i in numeric[1:]:
            y = cols[i]
            keep = np.isfinite(y) & ((y > 0) if logy else True)
            if keep.any():
                ax.plot(x[keep], y[keep], marker="o", ms=2, label=header[i])
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel(header[numeric[0]])
        ax.legend()
        _save(fig, path.with_suffix(".svg"))
    return [dat, path.with_suffix(".svg")]


LOG_Y = {"felsmann", "lln", "borovkov", "contractivity"}


def emit_plots(result_dir) -> dict:
    """Render every recognized CSV in ``result_dir``."""
    d = Path(result_dir)
    if not d.is_dir():
        raise FileNotFoundError(f"{d} is not a directory")
    csvs = sorted(p for p in d.glob("*.csv"))
    if not csvs:
        return {"status": "nothing to plot", "files": []}
    written = []
    for path in csvs:
        header, _ = _read(path)
        if {"n", "p_tau_gt_n", "bound_fit"} <= set(header):
            written += plot_tail(path)
        elif header[:3] == ["replica", "t", "B_n"]:
            written += plot_fclt(path, d / "fclt_variance.csv")
        elif path.name == "fclt_variance.csv":
            continue
        elif header and header[0] in ("n", "t", "a", "j", "y"):
            written += plot_generic(path, logy=path.stem in LOG_Y)
    if not written:
        return {"status": "nothing to plot", "files": []}
    return {"status": "ok", "files": [str(p) for p in written]}
