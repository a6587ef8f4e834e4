"""Model files, reports, CSV dumps, provenance headers.

Model files are JSON (key-value with nested arrays) carrying dims, the
dense row-major coefficient matrices and the horizon.  Floats serialize
through Python's shortest round-trip representation, so a save/load
cycle reproduces every binary64 bit pattern.  All emitted files carry a
provenance header (config hash, seed, package version) and never a
timestamp, so identical runs produce identical bytes.
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__
from .linsys import InitialExpansion, ReducedSystem, SystemCoefficients

FORMAT_VERSION = 1


def config_hash(obj):
    """Stable short hash of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _provenance(seed, cfg_hash):
    return {"config_hash": cfg_hash, "seed": int(seed),
            "version": __version__}


def _mat(a):
    return np.asarray(a, dtype=float).tolist()


def save_system(sys, path, z0=None, seed=0, cfg_hash=""):
    doc = {
        "format_version": FORMAT_VERSION,
        "provenance": _provenance(seed, cfg_hash),
        "n": sys.n, "q": sys.q, "m": sys.m, "p": sys.p,
        "T": sys.T,
        "A": _mat(sys.A),
        "N": [_mat(Ni) for Ni in sys.N],
        "X0": _mat(sys.X0),
        "C": _mat(sys.C),
        "K_M": _mat(sys.K_M),
    }
    if z0 is not None:
        doc["z0"] = np.asarray(z0.z0, dtype=float).tolist()
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_system(path):
    doc = json.loads(Path(path).read_text())
    sys = SystemCoefficients(
        A=np.array(doc["A"]),
        N=tuple(np.array(Ni) for Ni in doc["N"]),
        X0=np.array(doc["X0"]),
        C=np.array(doc["C"]),
        K_M=np.array(doc["K_M"]),
        T=float(doc["T"]),
    )
    z0 = InitialExpansion(np.array(doc["z0"])) if "z0" in doc else None
    return sys, z0


def save_reduced(red, path, seed=0, cfg_hash=""):
    doc = {
        "format_version": FORMAT_VERSION,
        "provenance": _provenance(seed, cfg_hash),
        "nhat": red.nhat, "n": red.n, "q": red.q,
        "A": _mat(red.A),
        "N": [_mat(Ni) for Ni in red.N],
        "X0": _mat(red.X0),
        "C": _mat(red.C),
        "V": _mat(red.V),
        "W": _mat(red.W),
        "S": _mat(red.S),
        "cond_WV": red.cond_WV,
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_reduced(path):
    doc = json.loads(Path(path).read_text())
    return ReducedSystem(
        A=np.array(doc["A"]),
        N=tuple(np.array(Ni) for Ni in doc["N"]),
        X0=np.array(doc["X0"]),
        C=np.array(doc["C"]),
        V=np.array(doc["V"]),
        W=np.array(doc["W"]),
        S=np.array(doc["S"]),
        cond_WV=float(doc["cond_WV"]),
    )


def _header_lines(seed, cfg_hash):
    return [f"# config_hash={cfg_hash}", f"# seed={seed}",
            f"# version={__version__}"]


def write_csv(path, header, rows, seed=0, cfg_hash=""):
    """CSV with provenance comment lines and >= 10 significant digits."""
    lines = _header_lines(seed, cfg_hash)
    lines.append(",".join(header))
    for row in rows:
        cells = []
        for c in row:
            if isinstance(c, (float, np.floating)):
                cells.append(f"{c:.12g}")
            else:
                cells.append(str(c))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_matrix_block(path, name, mat, seed=0, cfg_hash=""):
    """Dense matrix text block at 17 significant digits."""
    lines = _header_lines(seed, cfg_hash)
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    lines.append(f"{name} {mat.shape[0]} {mat.shape[1]}")
    for row in mat:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_trajectory_csv(path, traj, seed=0, cfg_hash=""):
    """(t, row, col, value) dump of a covariance trajectory."""
    rows = []
    for k, t in enumerate(traj.times):
        mat = traj.values[k]
        for r in range(mat.shape[0]):
            for c in range(mat.shape[1]):
                rows.append((float(t), r, c, float(mat[r, c])))
    write_csv(path, ("t", "row", "col", "value"), rows, seed=seed,
              cfg_hash=cfg_hash)


def write_paths_csv(path, ens, which="reduced", seed=0, cfg_hash=""):
    """(path_id, t, component, value) dump of an ensemble's stored states.

    Large: one row per (path, date, component); callers gate this behind
    an explicit flag.
    """
    states = ens.xhat_paths if which == "reduced" else ens.x_paths
    if states is None:
        raise ValueError(f"{which} states were not stored")
    rows = []
    for i in range(states.shape[0]):
        for d, t in enumerate(ens.times):
            for c in range(states.shape[2]):
                rows.append((i, float(t), c, float(states[i, d, c])))
    write_csv(path, ("path_id", "t", "component", "value"), rows,
              seed=seed, cfg_hash=cfg_hash)


def format_diagnostics(nhat, diag):
    """Structured text block for a reduction report."""
    lines = [
        f"nhat = {nhat}",
        f"converged = {diag.converged}",
        f"iterations = {diag.iterations}",
        f"bound_value = "
        + ("unavailable" if diag.bound_value is None
           else f"{diag.bound_value:.12g}"),
        f"terminal_cov_err_primal = {diag.terminal_cov_err[0]:.12g}",
        f"terminal_cov_err_dual = {diag.terminal_cov_err[1]:.12g}",
        "opt_residuals = "
        + " ".join(f"{r:.12g}" for r in diag.opt_residuals),
        "fixed_point_residuals = "
        + " ".join(f"{r:.12g}" for r in diag.fixed_point_residuals),
        "subspace_change_history = "
        + " ".join(f"{g:.6g}" for g in diag.subspace_change_history),
    ]
    for note in diag.notes:
        lines.append(f"note = {note}")
    return "\n".join(lines)
