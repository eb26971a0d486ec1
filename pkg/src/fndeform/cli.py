"""Command-line interface.

Every command reads JSON inputs, writes a JSON result to ``--out`` and an
experiment manifest next to it (``<out>.manifest.json``) recording the resolved
arguments, thresholds, input and output digests.  ``fndeform rerun MANIFEST``
re-executes a manifest into a scratch directory and compares digests.

Exit codes: 0 success, 1 input error, 2 budget exhausted, 3 certification
failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import Tolerances, tolerances, use_tolerances
from .errors import BudgetExhausted, CertificationFailed, FnDeformError, InputError, QmaxTooSmall
from .groups import GroupSpec, decode_element, encode_element, haar_sample

EXIT_OK, EXIT_INPUT, EXIT_BUDGET, EXIT_CERT = 0, 1, 2, 3
OUTPUT_KEYS = ("out", "csv")


# ---------------------------------------------------------------------------
# I/O helpers

def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read {path}: {e}") from e


def _load_elements(path, spec) -> list:
    data = _load_json(path)
    if isinstance(data, dict) and "elements" in data:
        data = data["elements"]
    if not isinstance(data, list):
        raise InputError(f"{path}: expected a list of elements")
    try:
        return [decode_element(e, spec) for e in data]
    except (KeyError, TypeError) as e:
        raise InputError(f"{path}: malformed element ({e})") from e


def _elements_json(elems) -> dict:
    return {"elements": [encode_element(g) for g in elems]}


def _parse_budget(text):
    if text is None:
        return {}
    if os.path.exists(text):
        return _load_json(text)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"--budget is neither a file nor JSON: {e}") from e


def _spec(args):
    try:
        return GroupSpec.parse(args.group)
    except (ValueError, KeyError) as e:
        raise InputError(f"bad --group {args.group!r}: {e}") from e


# ---------------------------------------------------------------------------
# Commands; each returns the result dictionary written to --out

def cmd_deform(args):
    from .nielsen import DeformationProblem, deform_to_generate, general_deform, replay_residual
    spec = _spec(args)
    targets = _load_elements(args.targets, spec)
    gamma = _load_elements(args.gamma, spec)
    if len(targets) != args.n:
        raise InputError(f"--n is {args.n} but the targets file has {len(targets)} elements")
    p = DeformationProblem(spec, targets, gamma, args.eps, args.qmax, _parse_budget(args.budget), args.seed)
    mode = args.mode or ("semisimple" if spec.semisimple else "general")
    run = deform_to_generate if mode == "semisimple" else general_deform
    tuple_, cert = run(p)
    return {"mode": mode, "tuple": _elements_json(tuple_)["elements"], "certificate": cert.to_dict(),
            "replay_residual": replay_residual(cert), "problem": p.to_dict()}


def cmd_fa_witness(args):
    from .torsion import fa_witness
    spec = _spec(args)
    pair = _load_elements(args.pair, spec)
    if len(pair) != 2:
        raise InputError("the pair file must hold two elements")
    try:
        wit = fa_witness(pair[0], pair[1], args.eps, args.qmax, seed=args.seed)
    except QmaxTooSmall as e:
        print(f"projection bound {e.bound:.6g} is not below eps/3 = {e.allowed:.6g}", file=sys.stderr)
        raise
    return {"witness": wit.to_dict()}


def cmd_z2(args):
    from .torsion import z2_example
    spec = _spec(args)
    triple = _load_elements(args.triple, spec)
    if len(triple) != 3:
        raise InputError("the triple file must hold three elements")
    (a, b, c), word, report = z2_example(*triple, args.eps, args.max_len, args.bound, args.qmax, seed=args.seed)
    return {"triple": _elements_json([a, b, c])["elements"], "gamma_word": word.to_text(), "report": report}


def cmd_walk(args):
    from .ergodic import WalkConfig, haar_expectations, run_walk
    spec = _spec(args)
    cfg = WalkConfig(spec, args.n, args.steps, args.burn_in, args.thinning, args.seed, args.restricted,
                     args.qmax, keep_samples=args.csv is not None)
    if args.start:
        start = _load_elements(args.start, spec)
    else:
        rng = np.random.default_rng(args.seed)
        start = [haar_sample(spec, rng) for _ in range(args.n)]
    stats = run_walk(cfg, start)
    if args.csv:
        Path(args.csv).write_text(stats.to_csv())
    out = {"stats": stats.to_dict(), "start": _elements_json(start)["elements"]}
    if len(spec.blocks) == 1 and str(spec) in ("so3", "su2"):
        out["haar"] = haar_expectations(cfg)
    return out


def cmd_net(args):
    from .words import build_net
    spec = _spec(args)
    pair = _load_elements(args.pair, spec)
    if len(pair) != 2:
        raise InputError("the pair file must hold two elements")
    net = build_net(tuple(pair), args.eps, args.samples, seed=args.seed, max_len_cap=args.cap)
    return {"net": net.to_dict()}


def cmd_certify(args):
    from .algebra import dense_tuple_certificate
    spec = _spec(args)
    elems = _load_elements(args.tuple, spec)
    cert = dense_tuple_certificate(elems, args.qmax, args.l_cert)
    return {"certificate": cert.to_dict()}


def cmd_replay(args):
    from .nielsen import MoveCertificate, replay, replay_residual
    data = _load_json(args.cert)
    if "certificate" in data:
        data = data["certificate"]
    try:
        cert = MoveCertificate.from_dict(data)
    except (KeyError, TypeError) as e:
        raise InputError(f"malformed certificate: {e}") from e
    replay(cert)
    return {"replayed_moves": len(cert.moves), "replay_residual": replay_residual(cert)}


def cmd_sample(args):
    spec = _spec(args)
    rng = np.random.default_rng(args.seed)
    return _elements_json([haar_sample(spec, rng) for _ in range(args.count)])


COMMANDS = {
    "deform": cmd_deform, "fa-witness": cmd_fa_witness, "z2": cmd_z2, "walk": cmd_walk,
    "net": cmd_net, "certify": cmd_certify, "replay": cmd_replay, "sample": cmd_sample,
}
INPUT_KEYS = ("targets", "gamma", "pair", "triple", "start", "tuple", "cert", "config")


# ---------------------------------------------------------------------------
# Parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fndeform", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, group=True):
        if group:
            p.add_argument("--group", required=True, help="group spec, e.g. so3, su2, so3xtorus1")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="JSON file overriding numerical thresholds")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("--out", required=True, help="result JSON path")
        return p

    p = common(sub.add_parser("deform", help="deform targets to a generating tuple"))
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--gamma", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--qmax", type=int, default=100)
    p.add_argument("--budget", help="JSON object or file with budget overrides")
    p.add_argument("--mode", choices=["semisimple", "general"])

    p = common(sub.add_parser("fa-witness", help="torsion pair with torsion product near a pair"))
    p.add_argument("--pair", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--qmax", type=int, default=60)

    p = common(sub.add_parser("z2", help="free abelian rank-2 example near a triple"))
    p.add_argument("--triple", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--bound", type=int, default=20)
    p.add_argument("--qmax", type=int, default=100)

    p = common(sub.add_parser("walk", help="random Nielsen walk statistics"))
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--thinning", type=int, default=10)
    p.add_argument("--restricted", action="store_true")
    p.add_argument("--qmax", type=int, default=200)
    p.add_argument("--start", help="start tuple file (default: Haar sample from --seed)")
    p.add_argument("--csv", help="write thinned samples as CSV")

    p = common(sub.add_parser("net", help="epsilon/2-net of words in a pair"))
    p.add_argument("--pair", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--samples", type=int, default=10_000)
    p.add_argument("--cap", type=int, default=16)

    p = common(sub.add_parser("certify", help="density certificate of a tuple"))
    p.add_argument("--tuple", required=True)
    p.add_argument("--qmax", type=int, default=100)
    p.add_argument("--l-cert", type=int)

    p = common(sub.add_parser("replay", help="replay a move certificate"), group=False)
    p.add_argument("--cert", required=True)

    p = common(sub.add_parser("sample", help="Haar-random elements"))
    p.add_argument("--count", type=int, default=2)

    p = sub.add_parser("rerun", help="re-execute a manifest and compare output digests")
    p.add_argument("manifest")
    return ap


# ---------------------------------------------------------------------------
# Execution

def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _exit_code(err: Exception) -> int:
    if isinstance(err, (InputError, ValueError)):
        return EXIT_INPUT
    if isinstance(err, BudgetExhausted):
        return EXIT_BUDGET
    if isinstance(err, (CertificationFailed, FnDeformError)):
        return EXIT_CERT
    raise err


def _resolve_tolerances(path) -> Tolerances:
    if not path:
        return tolerances()
    data = _load_json(path)
    if not isinstance(data, dict):
        raise InputError("--config must hold a JSON object")
    return Tolerances.from_dict({**tolerances().to_dict(), **data})


def execute(args) -> int:
    """Run one parsed command; writes result and manifest, returns the exit code."""
    cmd = args.command
    try:
        tol = _resolve_tolerances(args.config)
        with use_tolerances(tol):
            result = COMMANDS[cmd](args)
        status, error = EXIT_OK, None
    except Exception as e:  # noqa: BLE001 - mapped onto exit codes
        status = _exit_code(e)
        error = {"type": type(e).__name__, "message": str(e), "stage": getattr(e, "stage", None)}
        result = {"error": error}
        tol = tolerances()
        print(f"fndeform {cmd}: {type(e).__name__}: {e}", file=sys.stderr)
    result["exit_code"] = status
    _dump(args.out, result)
    resolved = {k: v for k, v in vars(args).items() if k != "command"}
    inputs = {k: {"path": str(resolved[k]), "sha256": _digest(resolved[k])}
              for k in INPUT_KEYS if resolved.get(k) and os.path.exists(resolved[k])}
    outputs = {k: {"path": str(resolved[k]), "sha256": _digest(resolved[k])}
               for k in OUTPUT_KEYS if resolved.get(k) and os.path.exists(resolved[k])}
    manifest = {"command": cmd, "arguments": resolved, "thresholds": tol.to_dict(), "inputs": inputs,
                "outputs": outputs, "exit_code": status, "version": _version(), "cwd": os.getcwd()}
    _dump(str(args.out) + ".manifest.json", manifest)
    return status


def rerun(manifest_path) -> int:
    """Re-execute a manifest into a scratch directory; 0 iff every output digest matches."""
    man = _load_json(manifest_path)
    base = man.get("cwd", os.getcwd())

    def here(path):
        return path if os.path.isabs(path) else os.path.join(base, path)

    for k, rec in man.get("inputs", {}).items():
        if not os.path.exists(here(rec["path"])) or _digest(here(rec["path"])) != rec["sha256"]:
            print(f"input {k} ({rec['path']}) changed or missing", file=sys.stderr)
            return EXIT_INPUT
    args = argparse.Namespace(command=man["command"], **man["arguments"])
    for k in INPUT_KEYS:
        if getattr(args, k, None):
            setattr(args, k, here(getattr(args, k)))
    scratch = tempfile.mkdtemp(prefix="fndeform-rerun-")
    try:
        for k in OUTPUT_KEYS:
            if getattr(args, k, None):
                setattr(args, k, os.path.join(scratch, f"{k}_{Path(getattr(args, k)).name}"))
        execute(args)
        ok = True
        for k, rec in man.get("outputs", {}).items():
            digest = _digest(getattr(args, k))
            same = digest == rec["sha256"]
            ok &= same
            print(f"{k}: {'identical' if same else 'DIFFERENT'} ({digest[:16]})")
        return EXIT_OK if ok else EXIT_CERT
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "rerun":
        return rerun(args.manifest)
    return execute(args)


if __name__ == "__main__":
    sys.exit(main())
