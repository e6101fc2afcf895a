"""File formats: trajectory CSV, bundle/config JSON and result CSVs.

Every output carries a provenance header (tool version, resolved config,
seed, input hashes). JSON is written with sorted keys and CSV with a fixed
float format so that reruns are byte-identical.
"""

import csv
import hashlib
import io
import json
import os

import numpy as np

from . import __version__
from .samplers import DemoSet, PosteriorBundle

TRAJECTORY_COLUMNS = ("trajectory_id", "t", "state", "action", "successor")
OUTPUT_ENV = "DDBNIRL_OUTPUT_DIR"


class ValidationError(ValueError):
    """Bad user input (maps to exit code 1 in the CLI)."""


def output_dir(explicit=None):
    """Explicit directory, else ``$DDBNIRL_OUTPUT_DIR``, else the working directory."""
    return explicit or os.environ.get(OUTPUT_ENV) or "."


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def provenance(config, seed, inputs=None):
    """Header embedded in every output; ``inputs`` maps a name to a file path."""
    return {
        "tool": "ddbnirl",
        "version": __version__,
        "config": config,
        "seed": seed,
        "inputs": {k: file_digest(p) for k, p in sorted((inputs or {}).items())},
    }


def _int(value, row, column):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"row {row}: column {column!r} is not an integer: {value!r}") from None


def _float(value, row, column):
    try:
        out = float(value)
    except (TypeError, ValueError):
        raise ValidationError(f"row {row}: column {column!r} is not a number: {value!r}") from None
    if not np.isfinite(out):
        raise ValidationError(f"row {row}: column {column!r} is not finite")
    return out


def load_demos(path, mdp=None):
    """Read a trajectory CSV into a DemoSet.

    Rows are numbered from 1 after the header. The kind follows from which
    column is populated (-1 marks a missing entry); ``mdp`` enables range
    checks.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRAJECTORY_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path}: no records")
    traj, times, states, actions, succ = [], [], [], [], []
    for n, r in enumerate(rows, start=1):
        traj.append(_int(r["trajectory_id"], n, "trajectory_id"))
        times.append(_float(r["t"], n, "t"))
        states.append(_int(r["state"], n, "state"))
        actions.append(_int(r["action"], n, "action"))
        succ.append(_int(r["successor"], n, "successor"))
    has_action = [a != -1 for a in actions]
    has_succ = [s != -1 for s in succ]
    if all(has_action):
        kind = "state-action"
    elif all(has_succ) and not any(has_action):
        kind = "state-successor"
    else:
        if has_action[0]:
            bad = has_action.index(False) + 1
        else:
            bad = next(n for n, (a, s) in enumerate(zip(has_action, has_succ), start=1)
                       if a or not s)
        raise ValidationError(f"row {bad}: mixed record kinds (every row needs an action, "
                              "or every row a successor and no action)")
    last = {}
    for n, (tid, t) in enumerate(zip(traj, times), start=1):
        if tid in last and t <= last[tid]:
            raise ValidationError(f"row {n}: timestamp {t} not increasing within trajectory {tid}")
        last[tid] = t
    if mdp is not None:
        checks = [("state", states, mdp.n_states)]
        checks.append(("action", actions, mdp.n_actions) if kind == "state-action"
                      else ("successor", succ, mdp.n_states))
        for name, values, bound in checks:
            for n, v in enumerate(values, start=1):
                if not 0 <= v < bound:
                    raise ValidationError(f"row {n}: {name} {v} out of range [0, {bound})")
    if kind == "state-action":
        demos = DemoSet(states, actions=actions, timestamps=times, trajectory=traj)
    else:
        demos = DemoSet(states, successors=succ, timestamps=times, trajectory=traj)
    if mdp is not None and kind == "state-successor":
        reach = mdp.transition[demos.states, :, demos.successors].max(axis=1)
        if np.any(reach <= 0):
            n = int(np.flatnonzero(reach <= 0)[0]) + 1
            raise ValidationError(f"row {n}: successor unreachable from its state under every action")
    return demos


def save_demos(demos, path):
    """Write a DemoSet in the trajectory CSV format."""
    t = demos.times()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for d in range(len(demos)):
            a = int(demos.actions[d]) if demos.actions is not None else -1
            s = int(demos.successors[d]) if demos.successors is not None else -1
            w.writerow([int(demos.trajectory[d]), _fmt(t[d]), int(demos.states[d]), a, s])


def _fmt(x):
    return repr(float(x))


def dumps(obj):
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def write_json(path, obj):
    with open(path, "w") as fh:
        fh.write(dumps(obj))


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def save_bundle(bundle, path, header):
    write_json(path, {"provenance": header, "bundle": bundle.to_dict()})


def load_bundle(path):
    """Returns ``(bundle, provenance header)``."""
    data = read_json(path)
    try:
        return PosteriorBundle.from_dict(data["bundle"]), data["provenance"]
    except (KeyError, TypeError, IndexError) as exc:
        raise ValidationError(f"{path}: not a posterior bundle ({exc!r})") from None


def write_csv(path, header, columns, rows):
    """CSV with a leading ``# {json}`` provenance comment line."""
    buf = io.StringIO()
    buf.write("# " + json.dumps(header, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path):
    """Rows of a CSV written by ``write_csv`` as dicts of strings."""
    with open(path, newline="") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


def write_predictive(path, header, probs, policy, entropy):
    A = probs.shape[1]
    columns = ["state", "map_action", "entropy"] + [f"p_{a}" for a in range(A)]
    rows = ([s, int(policy[s]), float(entropy[s])] + [float(p) for p in probs[s]]
            for s in range(probs.shape[0]))
    write_csv(path, header, columns, rows)


def write_subgoals(path, header, reports, support):
    """Long-format subgoal posteriors of the clusters that hold demonstrations."""
    columns = ["cluster", "n_members", "n_demos", "map_subgoal", "subgoal", "posterior"]
    rows = []
    for r in reports:
        if r["n_demos"] == 0:
            continue
        for g, p in zip(support, r["posterior"]):
            rows.append([r["cluster"], len(r["members"]), r["n_demos"], r["map_subgoal"],
                         int(g), float(p)])
    write_csv(path, header, columns, rows)
