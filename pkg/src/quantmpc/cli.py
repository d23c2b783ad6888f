"""Command-line entry points.

Subcommands: gen-model, oracle, run-local, party, bench.  Reports are
key=value lines on stdout (and in ``--report`` when given).  Exit codes:
0 success, 2 usage, 3 configuration, 4 transport, 5 verification failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time

import numpy as np

from .errors import ConfigError, IntegrityError, ModelFormatError, QuantMPCError, TransportError
from .model.census import census
from .model.config import Model, QuantTensor, gen_toy_model
from .model.modelfile import load_model, load_public, public_shape_text, save_model
from .model.oracle import clip_divergence, oracle_forward, quantize_embeddings
from .model.runner import agreement, party_program, run_secure_local, synthetic_embeddings, synthetic_values
from .model.secure import OfflineBundle, PublicShape, reveal_trace
from .transport.party import PartyContext, run_local, transcript_digest
from .transport.stats import CommStats
from .transport.tcp import TcpEndpoint, parse_address

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_TRANSPORT, EXIT_VERIFY = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


class VerificationFailure(Exception):
    pass


# -- helpers ----------------------------------------------------------------------


def _fmt(values) -> str:
    return ",".join(str(int(v)) for v in np.asarray(values).ravel())


class Report:
    def __init__(self, stable: bool):
        self.stable = stable
        self.lines: list[str] = []
        self._t0 = time.perf_counter()

    def add(self, key: str, value) -> None:
        self.lines.append(f"{key}={value}")

    def raw(self, line: str) -> None:
        self.lines.append(line)

    def extend(self, lines) -> None:
        self.lines.extend(lines)

    def finish(self, path: str | None) -> None:
        if not self.stable:
            self.add("elapsed_s", f"{time.perf_counter() - self._t0:.3f}")
        text = "\n".join(self.lines) + "\n"
        sys.stdout.write(text)
        if path:
            with open(path, "w") as f:
                f.write(text)


def _with_kappa(model: Model, kappa: int | None) -> Model:
    if kappa is not None and kappa != model.config.kappa:
        if not 0 <= kappa <= 4:
            raise ConfigError(f"kappa must lie in 0..4, got {kappa}")
        model.config.kappa = kappa
    return model


def _inputs(args, hidden: int, input_scale: float, seq: int) -> QuantTensor:
    """Real embeddings from ``--input`` (or synthetic ones), quantized with public information only."""
    if getattr(args, "input", None):
        values = np.load(args.input)
        if values.shape != (seq, hidden):
            raise ConfigError(f"input has shape {values.shape}, expected {(seq, hidden)}")
    else:
        values = synthetic_values(hidden, seq, args.seed)
    return quantize_embeddings(values, input_scale)


def _model_inputs(args, model: Model, seq: int) -> QuantTensor:
    return _inputs(args, model.config.hidden, model.config.input_scale, seq)


def _check_seq(seq: int, cap: int) -> None:
    if not 1 <= seq <= cap:
        raise ConfigError(f"--seq must lie in 1..{cap}, got {seq}")


# -- commands ---------------------------------------------------------------------


def cmd_gen_model(args) -> int:
    model = gen_toy_model(hidden=args.hidden, layers=args.layers, heads=args.heads, ffn=args.ffn,
                          max_seq=args.max_seq, classes=args.classes, seed=args.seed, kappa=args.kappa,
                          eps=args.eps)
    save_model(model, args.out)
    if args.shape_out:
        with open(args.shape_out, "w") as f:
            f.write(public_shape_text(model))
    rep = Report(args.stable)
    rep.add("command", "gen-model")
    rep.add("out", args.out)
    rep.add("bytes", os.path.getsize(args.out))
    rep.finish(args.report)
    return EXIT_OK


def cmd_oracle(args) -> int:
    model = _with_kappa(load_model(args.model), args.kappa)
    _check_seq(args.seq, model.config.max_seq)
    x = _model_inputs(args, model, args.seq)
    out = oracle_forward(model, x, clip=args.clip == "on")
    rep = Report(args.stable)
    rep.add("command", "oracle")
    rep.add("clip", args.clip)
    rep.add("seq", args.seq)
    rep.add("input", _fmt(x.data))
    for name, value in out.items():
        rep.add(f"stage.{name}", _fmt(value))
    for name, rate in clip_divergence(model, x).items():
        rep.add(f"clip_divergence.{name}", f"{rate:.6f}")
    rep.finish(args.report)
    return EXIT_OK


def _stats_report(rep: Report, stats: CommStats) -> None:
    rep.extend(stats.report_lines())
    rep.add("transcript_digest", transcript_digest(stats))


def cmd_run_local(args) -> int:
    model = _with_kappa(load_model(args.model), args.kappa)
    _check_seq(args.seq, model.config.max_seq)
    x = _model_inputs(args, model, args.seq)
    shape = PublicShape.of(model.config)
    rep = Report(args.stable)
    rep.add("command", "run-local")
    rep.add("seq", args.seq)
    rep.add("seed", args.seed)
    rep.add("phase", args.phase)

    if args.phase == "offline":
        bundles, stats, _ = run_local(
            lambda ctx: party_program(ctx, shape, args.seq, model if ctx.id == 0 else None, None, phase="offline"),
            args.seed)
        for pid, b in enumerate(bundles):
            b.save(os.path.join(_bundle_dir(args), f"p{pid}"))
        rep.add("bundle_dir", _bundle_dir(args))
        _stats_report(rep, stats)
        rep.finish(args.report)
        return EXIT_OK

    if args.phase == "online":
        bundles = [OfflineBundle.load(os.path.join(_bundle_dir(args), f"p{pid}")) for pid in range(3)]

        def program(ctx):
            return party_program(ctx, shape, args.seq, None, x if ctx.id == 1 else None, args.reveal == "yes",
                                 bundle=bundles[ctx.id])

        results, stats, ctxs = run_local(program, args.seed)
        logits, trace = results[1], reveal_trace(ctxs)
    else:
        run = run_secure_local(model, x, args.seed, reveal=args.reveal == "yes")
        logits, trace, stats = run.logits, run.trace, run.stats

    if logits is not None and args.reveal == "yes":
        rep.add("logits", _fmt(logits))
    rep.add("oracle.logits", _fmt(oracle_forward(model, x)["logits"]))
    _stats_report(rep, stats)
    if args.phase == "both":
        predicted = census(shape, args.seq, reveal=args.reveal == "yes")
        rep.add("census.offline_bytes", predicted.offline_bytes)
        rep.add("census.online_bytes", predicted.online_bytes)
    check = agreement(model, x, trace)
    for name, ok, dev in check.stages:
        rep.add(f"stage.{name}", f"{'ok' if ok else 'MISMATCH'} dev={dev}")
    rep.raw(check.line())
    rep.finish(args.report)
    return EXIT_OK if check.passed else EXIT_VERIFY


def _bundle_dir(args) -> str:
    if not args.bundle_dir:
        raise UsageError("--phase offline/online needs --bundle-dir")
    return args.bundle_dir


def cmd_party(args) -> int:
    if args.party not in (0, 1, 2):
        raise UsageError("--party must be 0, 1 or 2")
    peers = [p for p in (args.peers or "").split(",") if p]
    if len(peers) != 2:
        raise UsageError("--peers needs exactly two addresses (the other parties in increasing id order)")
    others = [p for p in (0, 1, 2) if p != args.party]
    try:
        peer_map = {pid: parse_address(addr) for pid, addr in zip(others, peers)}
        listen = parse_address(args.listen)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    model = _with_kappa(load_model(args.model), args.kappa) if args.party == 0 else None
    public = load_public(args.model)
    shape = PublicShape.of(model.config) if model else public.shape
    if args.kappa is not None and model is None:
        shape = PublicShape(**{**shape.fields(), "kappa": args.kappa})
    _check_seq(args.seq, public.max_seq)
    x = _inputs(args, shape.hidden, public.input_scale, args.seq) if args.party == 1 else None

    bundle = None
    if args.phase == "online":
        bundle = OfflineBundle.load(os.path.join(_bundle_dir(args), f"p{args.party}"))
    endpoint = TcpEndpoint(args.party, listen, peer_map, timeout=args.timeout)
    ctx = PartyContext(args.party, endpoint, args.seed)
    try:
        endpoint.connect()
        ctx.handshake()
        result = party_program(ctx, shape, args.seq, model, x, args.reveal == "yes", bundle=bundle,
                               phase=args.phase)
        ctx.goodbye()
    finally:
        ctx.close()
    rep = Report(args.stable)
    rep.add("command", "party")
    rep.add("party", args.party)
    rep.add("seq", args.seq)
    rep.add("phase", args.phase)
    if args.phase == "offline":
        result.save(os.path.join(_bundle_dir(args), f"p{args.party}"))
    elif args.party == 1 and result is not None:
        rep.add("logits", _fmt(result))
    rep.extend(ctx.stats.report_lines())
    rep.finish(args.report)
    return EXIT_OK


def cmd_bench(args) -> int:
    seqs = [int(s) for s in (args.seq or "").split(",") if s.strip()]
    if not seqs:
        raise UsageError("--seq needs at least one sequence length")
    model = _with_kappa(load_model(args.model), args.kappa)
    shape = PublicShape.of(model.config)
    rep = Report(args.stable)
    rep.add("command", "bench")
    rows, all_ok = [], True
    for seq in seqs:
        _check_seq(seq, model.config.max_seq)
        run = run_secure_local(model, synthetic_embeddings(model, seq, args.seed), args.seed)
        pred = census(shape, seq)
        measured = (run.stats.phase_bytes("online"), run.stats.phase_bytes("offline"),
                    run.stats.rounds["online"], run.stats.rounds["offline"])
        predicted = (pred.online_bytes, pred.offline_bytes, pred.online_rounds, pred.offline_rounds)
        ok = measured == predicted
        all_ok &= ok
        rows.append((seq, *measured, *predicted, "PASS" if ok else "FAIL"))
        rep.add(f"seq.{seq}", f"online_bytes={measured[0]} offline_bytes={measured[1]} online_rounds={measured[2]} "
                              f"offline_rounds={measured[3]} predicted_online_bytes={predicted[0]} "
                              f"predicted_offline_bytes={predicted[1]} predicted_online_rounds={predicted[2]} "
                              f"predicted_offline_rounds={predicted[3]} {'PASS' if ok else 'FAIL'}")
    online = [r[1] for r in rows]
    monotone = all(a < b for a, b in zip(online, online[1:])) if len(online) > 1 else True
    rep.add("online_monotone", "PASS" if monotone else "FAIL")
    if len(rows) > 1:
        ratios = [f"{b / a:.3f}" for a, b in zip(online, online[1:])]
        rep.add("online_growth_ratios", ",".join(ratios))
    rep.add("census_equality", "PASS" if all_ok else "FAIL")
    if args.csv:
        with open(args.csv, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["seq", "online_bytes", "offline_bytes", "online_rounds", "offline_rounds",
                        "predicted_online_bytes", "predicted_offline_bytes", "predicted_online_rounds",
                        "predicted_offline_rounds", "status"])
            w.writerows(rows)
    rep.finish(args.report)
    return EXIT_OK if all_ok and monotone else EXIT_VERIFY


# -- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quantmpc", description="Three-party inference for 4-bit transformers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seq_type=int):
        p.add_argument("--model", required=True, help="model file")
        p.add_argument("--seq", type=seq_type, required=True, help="sequence length")
        p.add_argument("--seed", type=int, required=True, help="session seed (also seeds synthetic inputs)")
        p.add_argument("--kappa", type=int, default=None, help="override the softmax denominator offset")
        p.add_argument("--report", help="also write the report to this file")
        p.add_argument("--stable", action="store_true", help="omit timings so reports are byte-identical")

    g = sub.add_parser("gen-model", help="write a random binary-weight toy model")
    g.add_argument("--hidden", type=int, default=64)
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--heads", type=int, default=4)
    g.add_argument("--ffn", type=int, default=None)
    g.add_argument("--max-seq", type=int, default=16)
    g.add_argument("--classes", type=int, default=2)
    g.add_argument("--kappa", type=int, default=2)
    g.add_argument("--eps", type=float, default=1.0)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--shape-out", help="also write the public shape file for P1/P2")
    g.add_argument("--report")
    g.add_argument("--stable", action="store_true")
    g.set_defaults(func=cmd_gen_model)

    o = sub.add_parser("oracle", help="plaintext integer pipeline, per stage")
    common(o)
    o.add_argument("--input", help=".npy file of real embeddings (seq, hidden); synthetic if omitted")
    o.add_argument("--clip", choices=("on", "off"), default="off")
    o.set_defaults(func=cmd_oracle)

    r = sub.add_parser("run-local", help="all three parties in one process")
    common(r)
    r.add_argument("--input")
    r.add_argument("--phase", choices=("offline", "online", "both"), default="both")
    r.add_argument("--bundle-dir", help="where offline bundles are written / read")
    r.add_argument("--reveal", choices=("yes", "no"), default="yes", help="reveal logits to P1")
    r.set_defaults(func=cmd_run_local)

    p = sub.add_parser("party", help="one party over TCP")
    common(p)
    p.add_argument("--input")
    p.add_argument("--party", type=int, required=True)
    p.add_argument("--listen", required=True, help="host:port to listen on")
    p.add_argument("--peers", required=True, help="the two other parties' host:port, in increasing id order")
    p.add_argument("--phase", choices=("offline", "online", "both"), default="both")
    p.add_argument("--bundle-dir")
    p.add_argument("--reveal", choices=("yes", "no"), default="yes")
    p.add_argument("--timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_party)

    b = sub.add_parser("bench", help="measured vs predicted communication")
    common(b, seq_type=str)
    b.add_argument("--csv", help="write the table as CSV")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ModelFormatError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TransportError, IntegrityError, ConnectionError, TimeoutError) as exc:
        print(f"transport error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except QuantMPCError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
