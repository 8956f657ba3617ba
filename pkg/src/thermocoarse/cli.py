"""Command-line front end.

Exit codes: 0 success, 1 negative verdict (infeasible / not majorized),
2 usage or data error.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys

import numpy as np

from .core import InfeasibleError, build_curve, majorization_gap, thermo_majorizes
from .io import (
    InputError,
    dumps,
    curve_to_csv,
    loads,
    parse_number,
    protocol_from_dict,
    protocol_to_dict,
    system_from_dict,
    system_to_dict,
    work_to_dict,
)
from .ops import PITR, Protocol, apply_protocol
from .oracle import oracle_corpus
from .synth import (
    common_order,
    synth_general,
    synth_general_approx,
    synth_same_order,
    synth_same_order_two_level,
)
from .work import (
    distillable_work,
    extraction_protocol,
    formation_protocol,
    work_of_formation,
    work_of_transition,
    work_of_transition_with_hamiltonian_change,
)

EXIT_OK, EXIT_NEGATIVE, EXIT_INPUT = 0, 1, 2


class Negative(Exception):
    """Carries a JSON payload for a negative verdict."""

    def __init__(self, payload):
        super().__init__(payload.get("error", "negative verdict"))
        self.payload = payload


def _read_text(path, where):
    try:
        if path in (None, "-"):
            return sys.stdin.read()
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise InputError(f"{where}: cannot read {path}: {exc.strerror}") from exc


def _load_system(path, beta, where):
    if path is None:
        raise InputError(f"missing --{where}")
    return system_from_dict(loads(_read_text(path, where), where), beta, where)


def _target_for(rho, args):
    sigma = _load_system(args.target, args.beta if args.beta is not None else rho.beta, "target")
    if sigma.n != rho.n:
        raise InputError(f"target: {sigma.n} levels, input has {rho.n}")
    return sigma


def _kt(w, beta):
    return {"w": w * beta, "units": "kT", "w_energy": w}


def _curve_points(c):
    return [[x, y] for x, y in c.points]


# ----------------------------------------------------------------- commands

def cmd_curve(args):
    s = _load_system(args.input, args.beta, "input")
    c = build_curve(s)
    if args.compare is None:
        if args.format in (None, "csv"):
            return curve_to_csv(c), EXIT_OK
        return {"curve": _curve_points(c), "Z": s.Z}, EXIT_OK
    other = _load_system(args.compare, args.beta if args.beta is not None else s.beta, "compare")
    gap, x = majorization_gap(s, other)
    ok = thermo_majorizes(s, other, args.tol)
    out = {"curve": _curve_points(c), "compare": _curve_points(build_curve(other)),
           "thermo_majorizes": ok, "min_gap": gap, "witness_x": x}
    return out, EXIT_OK if ok else EXIT_NEGATIVE


def cmd_check(args):
    rho = _load_system(args.input, args.beta, "input")
    sigma = _target_for(rho, args)
    gap, x = majorization_gap(rho, sigma)
    ok = thermo_majorizes(rho, sigma, args.tol)
    out = {"thermo_majorizes": ok, "min_gap": gap, "witness_x": x}
    return out, EXIT_OK if ok else EXIT_NEGATIVE


def cmd_synth(args):
    rho = _load_system(args.input, args.beta, "input")
    sigma = _target_for(rho, args)
    if not np.array_equal(sigma.energies, rho.energies):
        raise InputError("target: energies must match the input Hamiltonian")
    mode = args.mode
    if mode == "auto":
        mode = "same-order" if common_order(rho, sigma) is not None else "general"
    e_cap = (40.0 if args.e_cap is None else args.e_cap) / rho.beta
    try:
        if mode == "same-order":
            rep = synth_same_order(rho, sigma)
        elif mode == "two-level":
            rep = synth_same_order_two_level(rho, sigma)
        elif mode == "general":
            rep = synth_general(rho, sigma, args.ancilla_gap)
        else:
            delta = 1e-6 if args.tol is None else args.tol
            rep = synth_general_approx(rho, sigma, args.ancilla_gap, e_cap, delta)
    except InfeasibleError as exc:
        raise Negative({"feasible": False, "error": str(exc)}) from exc
    out = {"mode": mode, "protocol": protocol_to_dict(rep.protocol)}
    out.update(rep.to_dict())
    out["target"] = system_to_dict(sigma)
    return out, EXIT_OK


def _with_steps(protocol, steps):
    ops = [dataclasses.replace(op, steps=steps) if isinstance(op, PITR) else op for op in protocol.ops]
    return Protocol(ops, protocol.label)


def cmd_apply(args):
    s = _load_system(args.input, args.beta, "input")
    protocol = protocol_from_dict(loads(_read_text(args.protocol, "protocol"), "protocol"))
    mode = "ideal"
    if args.steps is not None:
        protocol = _with_steps(protocol, args.steps)
        mode = "simulate"
    final, dist, trace = apply_protocol(s, protocol, mode)
    out = {"system": system_to_dict(final), "work": work_to_dict(dist, s.beta)}
    if args.target is not None:
        sigma = _load_system(args.target, s.beta, "target")
        if sigma.n != final.n:
            raise InputError(f"target: {sigma.n} levels, final state has {final.n}")
        out["residual_error"] = float(np.abs(final.populations - sigma.populations).max())
    if args.trace:
        out["trace"] = [system_to_dict(t) for t in trace]
    return out, EXIT_OK


def cmd_distill(args):
    s = _load_system(args.input, args.beta, "input")
    eps = 0.0 if args.epsilon is None else args.epsilon
    out = _kt(distillable_work(s, eps), s.beta)
    out["epsilon"] = eps
    if args.v_penalty is not None:
        res = extraction_protocol(s, eps, args.v_penalty, args.ancilla_gap)
        out.update({
            "v_penalty": args.v_penalty,
            "success_prob": res.success_prob,
            "success_work": _kt(res.success_work, s.beta),
            "failure_work": _kt(res.failure_work, s.beta),
            "protocol": protocol_to_dict(res.protocol),
            "ledger": work_to_dict(res.ledger, s.beta),
        })
    return out, EXIT_OK


def cmd_form(args):
    s = _load_system(args.input, args.beta, "input")
    out = _kt(work_of_formation(s), s.beta)
    if np.isfinite(s.energies).all():
        protocol, dist = formation_protocol(s)
        out["protocol"] = protocol_to_dict(protocol)
        out["ledger"] = work_to_dict(dist, s.beta)
    return out, EXIT_OK


def cmd_work(args):
    rho = _load_system(args.input, args.beta, "input")
    sigma = _target_for(rho, args)
    tol_w = 1e-6 if args.tol is None else args.tol
    try:
        if np.array_equal(sigma.energies, rho.energies):
            w = work_of_transition(rho, sigma, tol_w)
        else:
            w = work_of_transition_with_hamiltonian_change(
                rho.populations, rho.energies, sigma.populations, sigma.energies, rho.beta, tol_w)
    except ValueError as exc:
        if "bracket" in str(exc):
            raise Negative({"feasible": False, "error": str(exc)}) from exc
        raise
    out = _kt(w, rho.beta)
    out["tol_w"] = tol_w
    return out, EXIT_OK


def cmd_oracle(args):
    seed = 0 if args.seed is None else args.seed
    tol = 1e-9 if args.tol is None else args.tol
    rep = oracle_corpus(args.trials, seed, tol=tol)
    return rep, EXIT_OK if not rep["disagreements"] else EXIT_NEGATIVE


COMMANDS = {
    "curve": cmd_curve, "check": cmd_check, "synth": cmd_synth, "apply": cmd_apply,
    "distill": cmd_distill, "form": cmd_form, "work": cmd_work, "oracle": cmd_oracle,
}


# ------------------------------------------------------------------ parser

def _float(text):
    try:
        return parse_number(float(text) if text.lower() not in ("inf", "-inf", "+inf") else text, "argument")
    except (ValueError, InputError) as exc:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from exc


def _positive(text):
    x = _float(text)
    if not (0 < x < math.inf):
        raise argparse.ArgumentTypeError(f"must be positive and finite: {text!r}")
    return x


def _epsilon(text):
    x = _float(text)
    if not 0 <= x < 1:
        raise argparse.ArgumentTypeError(f"epsilon must lie in [0, 1): {text!r}")
    return x


def _penalty(text):
    x = _float(text)
    if x > 0:
        raise argparse.ArgumentTypeError(f"v-penalty must be <= 0 or -inf: {text!r}")
    return x


def _steps(text):
    try:
        n = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from exc
    if n < 1:
        raise argparse.ArgumentTypeError("steps must be >= 1")
    return n


def build_parser():
    p = argparse.ArgumentParser(prog="thermocoarse",
                                description="Thermo-majorization curves, coarse-operation protocols and work.")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_, *flags):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--beta", type=_positive, help="override the inverse temperature in the files")
        sp.add_argument("--format", choices=["json", "csv"], default=None)
        for f in flags:
            f(sp)
        return sp

    def input_(sp):
        sp.add_argument("--input", required=True, metavar="PATH", help="system JSON")

    def target(sp):
        sp.add_argument("--target", required=True, metavar="PATH", help="target system JSON")

    def tol(help_):
        return lambda sp: sp.add_argument("--tol", type=_positive, default=None, help=help_)

    def gap(sp):
        sp.add_argument("--ancilla-gap", type=_positive, default=None, help="ancilla qubit gap (default ln2/beta)")

    add("curve", "thermo-majorization curve breakpoints", input_,
        lambda sp: sp.add_argument("--compare", metavar="PATH", help="second system to compare against"),
        lambda sp: sp.add_argument("--tol", type=_positive, default=1e-9))
    add("check", "decide whether input thermo-majorizes target", input_, target,
        lambda sp: sp.add_argument("--tol", type=_positive, default=1e-9))
    add("synth", "synthesize a protocol from input to target", input_, target, gap,
        tol("approximation budget delta (approx mode)"),
        lambda sp: sp.add_argument("--e-cap", type=_positive, default=None, help="energy cap in kT (approx mode, default 40)"),
        lambda sp: sp.add_argument("--mode", choices=["auto", "same-order", "two-level", "general", "approx"],
                                   default="auto"))
    add("apply", "apply a protocol to a system", input_,
        lambda sp: sp.add_argument("--protocol", metavar="PATH", default=None, help="protocol JSON (default stdin)"),
        lambda sp: sp.add_argument("--target", metavar="PATH", default=None, help="report residual against this system"),
        lambda sp: sp.add_argument("--steps", type=_steps, default=None, help="simulate PITR work with N steps"),
        lambda sp: sp.add_argument("--trace", action="store_true", help="include every intermediate system"))
    add("distill", "epsilon-deterministic work extraction", input_, gap,
        lambda sp: sp.add_argument("--epsilon", type=_epsilon, default=0.0),
        lambda sp: sp.add_argument("--v-penalty", type=_penalty, default=None, help="tail penalty (<= 0 or -inf)"))
    add("form", "work of formation from the Gibbs state", input_)
    add("work", "work of transition input -> target", input_, target, tol("bisection tolerance on W"))
    add("oracle", "decision-oracle agreement corpus",
        lambda sp: sp.add_argument("--seed", type=int, default=0),
        lambda sp: sp.add_argument("--trials", type=_steps, default=1000),
        lambda sp: sp.add_argument("--tol", type=_positive, default=1e-9))
    return p


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # argparse takes "-inf" for an option flag; glue it to its option
    for i in range(len(argv) - 1, 0, -1):
        if argv[i].lower() in ("-inf", "-infinity") and argv[i - 1].startswith("--"):
            argv[i - 1:i + 1] = [f"{argv[i - 1]}={argv[i]}"]
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        out, code = COMMANDS[args.command](args)
    except Negative as exc:
        sys.stdout.write(dumps(exc.payload) + "\n")
        return EXIT_NEGATIVE
    except (InputError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    if isinstance(out, str):
        sys.stdout.write(out)
    else:
        sys.stdout.write(dumps(out) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
