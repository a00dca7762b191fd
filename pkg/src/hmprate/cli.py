"""Command-line experiment runner.

Every subcommand writes one table (CSV or JSON) and exits with status 0, or
prints a JSON error object on stderr and exits nonzero:

* 2  configuration problems (bad flags, missing files, empty grids)
* 3  model or channel files that fail validation
* 4  any other library error (for example a non-primitive chain)
* 1  ``check`` ran but some property group failed
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .belief_recursions import (
    belief_trace,
    entropy_rate_exact,
    entropy_rate_mc,
    forgetting_check,
    simulate_path,
)
from .errors import ConfigError, HMPError, ModelValidationError
from .families import family_from_dict
from .fsc_capacity import (
    ChannelFamily,
    FiniteStateChannel,
    MarkovInput,
    bsc_channel_family,
    capacity_expansion_report,
    isi_channel_family,
    isi_edge_optimizer,
)
from .high_noise_series import entropy_series
from .markov_core import (
    HiddenMarkovModel,
    NotApplicable,
    birkhoff_coefficients,
    hilbert_distance,
    load_model,
    primitivity_certificate,
)
from .rate_derivatives import (
    edge_occupancy_entropy_derivative,
    entropy_derivative_mc,
    measure_property_check,
)

SCHEMA = "hmprate-table/1"
LN2 = math.log(2)

# columns measured in nats (converted by --bits)
INFO_COLUMNS = {"estimate", "std_error", "entropy", "c0", "c1", "c2", "I_mc", "stderr",
                "predicted", "value"}


@dataclass
class ResultRecord:
    operation: str
    inputs: dict
    columns: list
    rows: list
    seed: int | None
    units: str = "nats"
    wall_time: float = 0.0
    version: str = __version__
    notes: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {SCHEMA} op={self.operation} units={self.units} seed={self.seed} "
                  f"version={self.version} wall_time={self.wall_time:.3f}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in self.columns])
        for key, val in self.notes.items():
            buf.write(f"# {key}={val}\n")
        return buf.getvalue()

    def to_json(self) -> str:
        body = {
            "schema": SCHEMA,
            "operation": self.operation,
            "inputs": self.inputs,
            "units": self.units,
            "seed": self.seed,
            "version": self.version,
            "wall_time": self.wall_time,
            "columns": self.columns,
            "rows": [{c: _json_value(r[c]) for c in self.columns} for r in self.rows],
            **self.notes,
        }
        return json.dumps(body, indent=2) + "\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _json_value(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


# --------------------------------------------------------------------------
# argument handling

def _theta_values(args, default):
    if args.theta is not None and args.theta_grid is not None:
        raise ConfigError("give --theta or --theta-grid, not both")
    if args.theta_grid is not None:
        try:
            a, b, step = (float(x) for x in args.theta_grid.split(":"))
        except ValueError:
            raise ConfigError("--theta-grid must look like a:b:step") from None
        if step <= 0 or b < a:
            raise ConfigError("--theta-grid needs a <= b and a positive step")
        count = int(math.floor((b - a) / step + 1e-9)) + 1
        return [round(a + k * step, 12) for k in range(count)]
    if args.theta is not None:
        return [args.theta]
    if default is None:
        raise ConfigError("a parameter value is required (--theta)")
    return [default]


def _positive(value, flag):
    if value is None:
        raise ConfigError(f"{flag} is required")
    if value <= 0:
        raise ConfigError(f"{flag} must be positive")
    return value


def _load_model(args):
    if not args.model:
        raise ConfigError("--model is required")
    path = Path(args.model)
    if not path.is_file():
        raise ConfigError(f"model file not found: {path}")
    return load_model(path)


def _family(model, raw):
    if "family" not in raw:
        raise ConfigError("model file has no 'family' entry")
    return family_from_dict(raw["family"], model)


def _load_channel(args):
    if not args.channel:
        raise ConfigError("--channel is required")
    path = Path(args.channel)
    if not path.is_file():
        raise ConfigError(f"channel file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ModelValidationError("$", f"invalid JSON: {exc}") from None


def _channel_parts(raw):
    """Channel family and labelled inputs from a channel file."""
    for key in ("channel_states", "inputs"):
        if key not in raw:
            raise ModelValidationError(key, "missing")
    states = raw["channel_states"]
    n_states = states if isinstance(states, int) else len(states)
    inputs = tuple(str(x) for x in raw["inputs"])
    kind = raw.get("family", {}).get("kind") if isinstance(raw.get("family"), dict) else raw.get("family")
    if "isi_means" in raw:
        means = np.array(raw["isi_means"], dtype=float)
        nxt = raw.get("isi_next")
        if nxt is None:
            if n_states != len(inputs):
                raise ModelValidationError("isi_next", "required unless states are the previous input")
            nxt = [[x for x in range(len(inputs))] for _ in range(n_states)]
        family = isi_channel_family(nxt, means, inputs, float(raw.get("variance", 1.0)))
        # validate shapes eagerly
        family.build(1.0)
    elif kind == "bsc":
        if n_states != 1 or len(inputs) != 2:
            raise ModelValidationError("family", "bsc needs one channel state and two inputs")
        family = bsc_channel_family()
    elif "W" in raw:
        W0 = np.array(raw["W"], dtype=float)
        dW = np.array(raw.get("dW", np.zeros_like(W0)), dtype=float)
        d2W = np.array(raw.get("d2W", np.zeros_like(W0)), dtype=float)
        outputs = tuple(str(y) for y in raw.get("outputs", range(W0.shape[-1])))
        theta_star = float(raw.get("theta_star", 0.0))

        def build(t, W0=W0, dW=dW, d2W=d2W):
            d = t - theta_star
            return FiniteStateChannel(n_states, inputs, W=W0 + d * dW + 0.5 * d * d * d2W,
                                      outputs=outputs)

        build(theta_star)
        family = ChannelFamily(build, tuple(raw.get("domain", (-0.5, 0.5))), theta_star,
                               dW=lambda t: dW + (t - theta_star) * d2W, d2W=lambda t: d2W,
                               name="kernel")
    else:
        raise ModelValidationError("W", "channel needs 'W', 'isi_means' or family 'bsc'")
    laws = raw.get("input_law", [])
    if isinstance(laws, dict):
        laws = [laws]
    sources = []
    for k, law in enumerate(laws):
        where = f"input_law[{k}]"
        if "table" not in law:
            raise ModelValidationError(f"{where}.table", "missing")
        try:
            src = MarkovInput(len(inputs), int(law.get("memory", 1)), law["table"],
                              label=str(law.get("id", k)))
        except ModelValidationError as exc:
            raise ModelValidationError(f"{where}.{exc.field.split('.', 1)[-1]}",
                                       str(exc).split(": ", 1)[-1]) from None
        sources.append((str(law.get("id", k)), src))
    return family, sources


# --------------------------------------------------------------------------
# subcommands

def cmd_entropy(args):
    model, raw = _load_model(args)
    n = _positive(args.n, "--n")
    if args.burnin is not None and args.burnin < 0:
        raise ConfigError("--burnin must be nonnegative")
    thetas = [None]
    if args.theta is not None or args.theta_grid is not None:
        family = _family(model, raw)
        thetas = _theta_values(args, None)
    rows = []
    for t in thetas:
        m = model if t is None else family.model_at(t)
        r = entropy_rate_mc(m, n, args.seed, args.burnin)
        rows.append({"theta": "" if t is None else t, "estimate": r.estimate,
                     "std_error": r.std_error, "n": n, "burn_in": r.burn_in, "seed": args.seed})
        if args.beliefs:
            path = simulate_path(m, n, args.seed)
            table = belief_trace(m, path.outputs)
            q = m.n_states
            header = ["t"] + [f"alpha{i}" for i in range(q)] + [f"beta{i}" for i in range(q)] + ["psi"]
            with open(args.beliefs, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in table:
                    w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
    return ResultRecord("entropy", {"model": args.model, "n": n, "burnin": args.burnin},
                        ["theta", "estimate", "std_error", "n", "burn_in", "seed"], rows, args.seed)


def cmd_entropy_exact(args):
    model, raw = _load_model(args)
    n = _positive(args.n, "--n")
    thetas = [None]
    if args.theta is not None or args.theta_grid is not None:
        family = _family(model, raw)
        thetas = _theta_values(args, None)
    rows = []
    for t in thetas:
        m = model if t is None else family.model_at(t)
        rows.append({"theta": "" if t is None else t, "n": n, "entropy": entropy_rate_exact(m, n)})
    return ResultRecord("entropy-exact", {"model": args.model, "n": n},
                        ["theta", "n", "entropy"], rows, None)


def cmd_deriv(args):
    model, raw = _load_model(args)
    samples = _positive(args.samples, "--samples")
    if args.mode == "edge":
        if "perturbation" not in raw:
            raise ConfigError("edge mode needs a 'perturbation' entry in the model file")
        delta = _perturbation(model, raw["perturbation"])
        r = edge_occupancy_entropy_derivative(model, delta, samples, args.seed, args.burnin,
                                              workers=args.workers)
        rows = [{"theta": "", "estimate": r.estimate, "std_error": r.std_error,
                 "samples": samples, "seed": args.seed}]
    else:
        family = _family(model, raw)
        rows = []
        for t in _theta_values(args, family.theta_star):
            r = entropy_derivative_mc(family, t, samples, args.burnin, args.seed,
                                      workers=args.workers)
            rows.append({"theta": t, "estimate": r.estimate, "std_error": r.std_error,
                         "samples": samples, "seed": args.seed})
    return ResultRecord("deriv", {"model": args.model, "mode": args.mode, "samples": samples,
                                  "burnin": args.burnin, "workers": args.workers},
                        ["theta", "estimate", "std_error", "samples", "seed"], rows, args.seed)


def _perturbation(model: HiddenMarkovModel, spec) -> np.ndarray:
    from .markov_core import _edge_index

    n = model.n_states
    delta = np.zeros((n, n))
    if isinstance(spec, dict):
        for key, val in spec.items():
            i, j = _edge_index(key, list(model.chain.states), f"perturbation[{key}]")
            delta[i, j] = float(val)
    else:
        delta = np.array(spec, dtype=float)
        if delta.shape != (n, n):
            raise ModelValidationError("perturbation", f"expected a {n}x{n} array")
    return delta


def cmd_series(args):
    model, raw = _load_model(args)
    family = _family(model, raw)
    s = entropy_series(family)
    row = {"theta_star": s.theta_star, "c0": s.c0, "c1": s.c1, "c2": s.c2}
    return ResultRecord("series", {"model": args.model}, list(row), [row], None)


def cmd_capacity(args):
    raw = _load_channel(args)
    family, sources = _channel_parts(raw)
    if not sources:
        raise ConfigError("channel file lists no input laws")
    thetas = _theta_values(args, raw.get("theta_check", 0.05))
    if len(thetas) != 1:
        raise ConfigError("capacity-expansion takes a single --theta check point")
    n = args.n or 0
    if n < 0:
        raise ConfigError("--n must be nonnegative")
    report = capacity_expansion_report(family, sources, thetas[0], n, args.seed, args.burnin)
    cols = ["input_id", "c2", "theta_check", "I_mc", "stderr", "predicted"]
    rows = [{"input_id": r.input_id, "c2": r.c2, "theta_check": r.theta_check, "I_mc": r.I_mc,
             "stderr": r.stderr, "predicted": r.predicted} for r in report.rows]
    return ResultRecord("capacity-expansion", {"channel": args.channel, "n": n}, cols, rows,
                        args.seed, notes={"argmax": report.argmax})


def cmd_isi(args):
    if args.channel:
        raw = _load_channel(args)
        if "isi_means" not in raw:
            raise ConfigError("isi-optimize needs a channel with 'isi_means'")
        family, _ = _channel_parts(raw)
        ch = family.build(1.0)
        weights = {}
        for s in range(ch.n_states):
            for x in range(len(ch.inputs)):
                edge = (s, int(ch.next_state[s, x]))
                m = float(ch.means[s, x])
                if edge in weights and weights[edge] != m:
                    raise ModelValidationError("isi_means", f"edge {edge} carries two means")
                weights[edge] = m
        names = [str(s) for s in (raw["channel_states"] if not isinstance(raw["channel_states"], int)
                                  else range(raw["channel_states"]))]
    else:
        model, _ = _load_model(args)
        if not model.is_gaussian:
            raise ConfigError("isi-optimize needs Gaussian edge means")
        weights = {(int(i), int(j)): float(model.means[i, j]) for i, j in model.chain.edges()}
        names = list(model.chain.states)
    res = isi_edge_optimizer(list(weights), weights)
    rows = [{"edge": f"{names[u]}->{names[v]}", "occupancy": res.e[(u, v)], "weight": weights[(u, v)],
             "value": res.value, "gap": res.gap} for (u, v) in weights]
    return ResultRecord("isi-optimize", {"channel": args.channel, "model": args.model},
                        ["edge", "occupancy", "weight", "value", "gap"], rows, None,
                        notes={"iterations": res.iterations})


def cmd_check(args):
    model, raw = _load_model(args)
    rows = []
    rng = np.random.default_rng(args.seed)

    # normalization: rows of P, kernels, sum of M(y) and zero pattern
    if model.is_gaussian:
        resid = float(np.abs(model.P.sum(axis=1) - 1).max())
        pattern_ok = True
    else:
        Ms = model.matrices()
        resid = float(np.abs(Ms.sum(axis=0) - model.P).max())
        pattern_ok = bool(np.all((Ms > 0) == (model.P > 0)[None]))
    rows.append({"group": "normalization", "passed": resid <= 1e-12, "residual": resid,
                 "detail": "zero pattern kept" if pattern_ok else "some M(y) loses a transition"})

    # contraction on random positive matrices plus the certificate sample
    worst = -np.inf
    for _ in range(200):
        M = rng.uniform(0.05, 1.0, (model.n_states, model.n_states))
        u, v = rng.uniform(0.05, 1.0, (2, model.n_states))
        tau = birkhoff_coefficients(M)[1]
        worst = max(worst, hilbert_distance(M.T @ u, M.T @ v) - tau * hilbert_distance(u, v))
    cert = None
    detail = "gaussian model: certificate not applicable"
    try:
        cert = primitivity_certificate(model)
    except HMPError as exc:
        detail = f"no certificate: {exc}"
    if isinstance(cert, NotApplicable):
        cert = None
    ok = worst <= 1e-12 and (cert is None or cert.contraction_checked)
    if cert is not None:
        detail = f"k={cert.k} epsilon={cert.epsilon:.6g}"
    rows.append({"group": "contraction", "passed": ok, "residual": max(worst, 0.0), "detail": detail})

    # Blackwell-measure identities
    samples = args.samples or 10_000
    family = family_from_dict(raw["family"], model) if "family" in raw else None
    theta = None
    if family is not None:
        theta = args.theta if args.theta is not None else family.theta_star
        if family.model_at(theta).P.shape != model.P.shape:
            family = None
    ident = measure_property_check(model, samples, args.seed, family=family, theta=theta,
                                   burn_in=args.burnin, workers=args.workers)
    zmax = max(r.z for r in ident)
    rows.append({"group": "blackwell", "passed": all(r.passed for r in ident),
                 "residual": max(abs(r.residual) for r in ident),
                 "detail": f"max z={zmax:.3g} over {len(ident)} identities"})

    # forgetting with certificate constants
    if cert is not None:
        excess = forgetting_check(model, cert, paths=20, length=200, seed=args.seed)
        rows.append({"group": "forgetting", "passed": excess <= 0, "residual": max(excess, 0.0),
                     "detail": f"C={cert.C:.6g} gamma={cert.gamma:.6g}"})
    else:
        rows.append({"group": "forgetting", "passed": True, "residual": 0.0,
                     "detail": "skipped: " + detail})
    rec = ResultRecord("check", {"model": args.model, "samples": samples},
                       ["group", "passed", "residual", "detail"], rows, args.seed)
    rec.notes["all_passed"] = all(r["passed"] for r in rows)
    return rec


COMMANDS = {
    "entropy": cmd_entropy,
    "entropy-exact": cmd_entropy_exact,
    "deriv": cmd_deriv,
    "series": cmd_series,
    "capacity-expansion": cmd_capacity,
    "isi-optimize": cmd_isi,
    "check": cmd_check,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hmprate", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--model")
        p.add_argument("--channel")
        p.add_argument("--theta", type=float)
        p.add_argument("--theta-grid")
        p.add_argument("--n", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--burnin", type=int)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        p.add_argument("--bits", action="store_true")
        if name == "deriv":
            p.add_argument("--mode", choices=("observation", "edge"), default="observation")
        if name == "entropy":
            p.add_argument("--beliefs", help="also write a belief trace CSV to this file")
    return parser


def run(argv=None) -> ResultRecord:
    args = build_parser().parse_args(argv)
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    start = time.perf_counter()
    record = COMMANDS[args.command](args)
    record.wall_time = time.perf_counter() - start
    if args.bits:
        record.units = "bits"
        for row in record.rows:
            for c in INFO_COLUMNS & set(row):
                if isinstance(row[c], (int, float)) and not isinstance(row[c], bool):
                    row[c] = row[c] / LN2
    text = record.to_json() if args.format == "json" else record.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return record


def main(argv=None) -> int:
    try:
        record = run(argv)
    except HMPError as exc:
        payload = {"error": exc.category, "message": str(exc)}
        if isinstance(exc, ModelValidationError):
            payload["field"] = exc.field
        sys.stderr.write(json.dumps(payload) + "\n")
        if isinstance(exc, ConfigError):
            return 2
        if isinstance(exc, ModelValidationError):
            return 3
        return 4
    if record.operation == "check" and not record.notes.get("all_passed", True):
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
