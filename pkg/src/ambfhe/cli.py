"""Command-line entry point: ``ambfhe <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as benchmod
from .biometrics import (SyntheticConfig, calibrate_sigma, generate_synthetic_db, load_db,
                         mated_and_nonmated_pairs, save_db)
from .ckks import (CkksContext, CkksError, ParamError, SerializationError, eval_keys_from_bytes,
                   eval_keys_to_bytes, preset, public_key_from_bytes, public_key_to_bytes,
                   secret_key_from_bytes, secret_key_to_bytes)
from .config import Config, ConfigError, load_config
from .fusion import ClientKeys, KeyHolderJudge, MatchPolicy, Mode, stage_score
from .linops import PackedLayout, block_align, rotation_steps_for
from .metrics import (calibrate_thresholds, eer, modality_scores, saved_presentations,
                      score_deviation, stage_score_sets, write_report, write_scores)
from .protocol import (AuthClient, AuthServer, ConnectionClosed, ProtocolFailure, ReferenceStore, RetryLimiter,
                       connect_tcp, serve_inproc, serve_tcp)

log = logging.getLogger("ambfhe")

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2  # argparse
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_CRYPTO = 5
EXIT_PROTOCOL = 6

SK_FILE, PK_FILE, EVK_FILE = "secret.key", "public.key", "eval.key"


class CliError(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


# -- helpers ---------------------------------------------------------------------------


def _policy(cfg: Config, thresholds=None) -> MatchPolicy:
    order_len = 1 if cfg.policy == "multi-and" else 2
    return MatchPolicy.named(cfg.policy, thresholds if thresholds is not None else [0.0] * order_len)


def _write_keys(out: Path, sk, pk, evk):
    out.mkdir(parents=True, exist_ok=True)
    (out / SK_FILE).write_bytes(secret_key_to_bytes(sk))
    (out / PK_FILE).write_bytes(public_key_to_bytes(pk))
    (out / EVK_FILE).write_bytes(eval_keys_to_bytes(evk))


def _read_keys(keys_dir):
    d = Path(keys_dir)
    try:
        pk = public_key_from_bytes((d / PK_FILE).read_bytes())
        evk = eval_keys_from_bytes((d / EVK_FILE).read_bytes(), pk.params)
        sk = secret_key_from_bytes((d / SK_FILE).read_bytes())
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, f"missing key file {exc.filename}; run 'ambfhe keygen' first") from None
    return CkksContext(pk.params), sk, pk, evk


def _load_db(path):
    try:
        return load_db(path)
    except FileNotFoundError:
        raise CliError(EXIT_DATA, f"database {path} not found; run 'ambfhe synth' first") from None


def _thresholds(cfg: Config, db) -> list[float]:
    if cfg.thresholds is not None:
        return [float(t) for t in cfg.thresholds]
    pol = _policy(cfg)
    return calibrate_thresholds(db, pol.modality_order, cfg.fmr, fused=pol.mode is Mode.UNCONDITIONAL_AND)


def _percent_list(text: str) -> list[float]:
    try:
        vals = [float(x) / 100.0 for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated percentages, got {text!r}") from None
    if not vals or not all(0 < v < 1 for v in vals):
        raise argparse.ArgumentTypeError("percentages must lie strictly between 0 and 100")
    return vals


def _server(cfg: Config, keys, thresholds, store_path=None):
    ctx, sk, pk, evk = keys
    store = ReferenceStore(store_path or cfg.paths.store)
    limiter = RetryLimiter(cfg.retry_limit, cfg.retry_window)
    return AuthServer(ctx, sk, pk, evk, _policy(cfg, thresholds), store, limiter)


def _print_transcript(res):
    for e in res.transcript:
        stage = "" if e.stage is None else f"({e.stage})"
        print(f"  {e.direction:<6} {e.kind}{stage}")


# -- commands ------------------------------------------------------------------------


def cmd_keygen(cfg: Config, args) -> int:
    params = preset(args.preset or cfg.preset)
    ctx = CkksContext(params)
    layout = PackedLayout(cfg.template_len, 2, params.slot_count)
    rng = np.random.default_rng(cfg.seed if args.seed is None else args.seed)
    sk, pk, evk = ctx.keygen(rotation_steps_for(layout), rng=rng)
    out = Path(args.out or cfg.paths.keys_dir)
    _write_keys(out, sk, pk, evk)
    print(f"{params.preset_name}: N={params.ring_dim}, logQP={params.log_qp}, "
          f"{len(evk.galois_keys)} Galois keys -> {out}")
    return EXIT_OK


def cmd_synth(cfg: Config, args) -> int:
    sc = SyntheticConfig(n_subjects=args.subjects or cfg.subjects, d=args.d or cfg.template_len,
                         intra_noise_sigma=dict(cfg.sigma), seed=cfg.seed if args.seed is None else args.seed)
    db = generate_synthetic_db(sc)
    out = Path(args.out or cfg.paths.db)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_db(db, out, sc)
    pairs = mated_and_nonmated_pairs(db)
    print(f"{len(db)} subjects, d={sc.d}: {len(pairs.mated)} mated / {len(pairs.nonmated)} non-mated pairs -> {out}")
    return EXIT_OK


def cmd_calibrate(cfg: Config, args) -> int:
    if args.target_eer is not None:
        sigma = calibrate_sigma(args.target_eer / 100.0, d=cfg.template_len, n_subjects=cfg.subjects)
        print(f"sigma for {args.target_eer:g}% EER at d={cfg.template_len}: {sigma:.4f}")
        return EXIT_OK
    db = _load_db(args.db or cfg.paths.db)
    fmrs = args.fmr or [cfg.fmr]
    out = {"eer": {}, "thresholds": {}}
    for m in db[0].samples:
        out["eer"][m] = eer(modality_scores(db, m))
    order = tuple(db[0].samples)
    out["eer"]["fused"] = eer(stage_score_sets(db, order)[-1])
    for name in ("amb-fhe-1", "amb-fhe-2", "multi-and"):
        pol = MatchPolicy.named(name, [0.0] * (1 if name == "multi-and" else 2))
        out["thresholds"][name] = {
            f"{f * 100:g}": calibrate_thresholds(db, pol.modality_order, f, fused=pol.mode is Mode.UNCONDITIONAL_AND)
            for f in fmrs}
    for k, v in out["eer"].items():
        print(f"EER {k:<12} {v * 100:.3f}%")
    for name, by_fmr in out["thresholds"].items():
        for f, taus in by_fmr.items():
            print(f"{name:<10} FMR {f:>6}%  tau = {', '.join(f'{t:.6f}' for t in taus)}")
    if args.out:
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_enroll(cfg: Config, args) -> int:
    db = _load_db(args.db or cfg.paths.db)
    keys = _read_keys(args.keys or cfg.paths.keys_dir)
    srv = _server(cfg, keys, _thresholds(cfg, db), args.store)
    pol = srv.policy
    rng = np.random.default_rng(cfg.seed)
    client = AuthClient(serve_inproc(srv), pol, cfg.template_len, rng=rng)
    chosen = db if args.limit is None else db[: args.limit]
    for rec in chosen:
        try:
            client.enroll(rec.subject_id, [rec.samples[m][args.sample] for m in pol.modality_order],
                          replace=args.replace)
        except ProtocolFailure as exc:
            raise CliError(EXIT_PROTOCOL, f"{rec.subject_id}: {exc}") from None
    client.t.close()
    print(f"enrolled {len(chosen)} subjects into {args.store or cfg.paths.store}")
    return EXIT_OK


def _find(db, sid):
    for rec in db:
        if rec.subject_id == sid:
            return rec
    raise CliError(EXIT_DATA, f"subject {sid} not in database")


def cmd_verify(cfg: Config, args) -> int:
    db = _load_db(args.db or cfg.paths.db)
    thresholds = _thresholds(cfg, db)
    pol = _policy(cfg, thresholds)
    probe_rec = _find(db, args.probe_subject or args.subject)
    idx = args.probe_sample
    if idx >= min(len(v) for v in probe_rec.samples.values()):
        raise CliError(EXIT_DATA, f"{probe_rec.subject_id} has no sample {idx}")
    if args.transport == "tcp":
        transport = connect_tcp(args.host or cfg.host, args.port or cfg.port)
    else:
        transport = serve_inproc(_server(cfg, _read_keys(args.keys or cfg.paths.keys_dir), thresholds, args.store))
    client = AuthClient(transport, pol, cfg.template_len, rng=np.random.default_rng(cfg.seed))
    res = client.verify(args.subject, lambda m: probe_rec.samples[m][idx])
    transport.close()
    _print_transcript(res)
    if res.error is not None:
        print(f"ERROR {res.error.code}: {res.error.text}")
        return EXIT_PROTOCOL
    print(f"{'ACCEPT' if res.accepted else 'REJECT'} after {res.stages_used} stage(s); captured {', '.join(res.captures)}")
    return EXIT_OK


def cmd_serve(cfg: Config, args) -> int:
    db = _load_db(args.db or cfg.paths.db) if cfg.thresholds is None else None
    srv = _server(cfg, _read_keys(args.keys or cfg.paths.keys_dir), _thresholds(cfg, db), args.store)
    tcp = serve_tcp(srv, args.host or cfg.host, cfg.port if args.port is None else args.port, background=False)
    host, port = tcp.server_address[:2]
    print(f"listening on {host}:{port} ({len(srv.store)} references)", flush=True)
    try:
        tcp.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        tcp.server_close()
    return EXIT_OK


def cmd_demo(cfg: Config, args) -> int:
    """Self-contained run: synthetic data, fresh keys, one enrollment, two sessions."""
    policy_name = args.policy or cfg.policy
    cfg.policy = policy_name
    rng = np.random.default_rng(cfg.seed)
    db = generate_synthetic_db(SyntheticConfig(n_subjects=cfg.subjects, d=cfg.template_len,
                                               intra_noise_sigma=dict(cfg.sigma), seed=cfg.seed))
    thresholds = _thresholds(cfg, db)
    params = preset(args.preset or cfg.preset)
    ctx = CkksContext(params)
    sk, pk, evk = ctx.keygen(rotation_steps_for(PackedLayout(cfg.template_len, 2, params.slot_count)), rng=rng)
    pol = _policy(cfg, thresholds)
    srv = AuthServer(ctx, sk, pk, evk, pol, ReferenceStore(), RetryLimiter(cfg.retry_limit, cfg.retry_window))
    tcp = None
    if args.transport == "tcp":
        tcp = serve_tcp(srv, "127.0.0.1", 0)
        transport = connect_tcp(*tcp.server_address[:2])
    else:
        transport = serve_inproc(srv)
    try:
        client = AuthClient(transport, pol, cfg.template_len, rng=rng)
        genuine, impostor = db[args.subject_index], db[(args.subject_index + 1) % len(db)]
        client.enroll(genuine.subject_id, [genuine.samples[m][0] for m in pol.modality_order])
        print(f"policy {pol.name}, thresholds {', '.join(f'{t:.4f}' for t in pol.thresholds)}, "
              f"preset {params.preset_name}, transport {args.transport}")
        for label, rec in (("mated", genuine), ("non-mated", impostor)):
            res = client.verify(genuine.subject_id, lambda m, rec=rec: rec.samples[m][1])
            print(f"{label} probe for {genuine.subject_id}:")
            _print_transcript(res)
            if res.error is not None:
                raise CliError(EXIT_PROTOCOL, str(res.error))
            print(f"  -> {'ACCEPT' if res.accepted else 'REJECT'} after {res.stages_used} stage(s)")
    finally:
        transport.close()
        if tcp is not None:
            tcp.shutdown()
            tcp.server_close()
    return EXIT_OK


def cmd_bench(cfg: Config, args) -> int:
    name = args.preset or cfg.preset
    rep = benchmod.bench_ops(name, args.d or cfg.template_len, args.runs, args.warmup, seed=cfg.seed)
    print(rep.table())
    inc = benchmod.bench_incremental_vs_naive(name, args.d or cfg.template_len, runs=args.runs,
                                              warmup=args.warmup, seed=cfg.seed)
    print()
    print(inc.table())
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_report(out, {"ops": rep.to_dict(), "incremental_vs_naive": inc.to_dict()},
                     rep.table() + "\n\n" + inc.table())
    return EXIT_OK


def cmd_evaluate(cfg: Config, args) -> int:
    db = _load_db(args.db or cfg.paths.db)
    fmrs = args.fmr or [1e-4, 1e-3, 1e-2]
    out_dir = Path(args.out or cfg.paths.reports)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    eers = {m: eer(modality_scores(db, m)) for m in db[0].samples}
    order = tuple(db[0].samples)
    eers["fused"] = eer(stage_score_sets(db, order)[-1])
    for k, v in eers.items():
        lines.append(f"EER {k:<12} {v * 100:.3f}%")
    reports = {}
    for name in ("amb-fhe-1", "amb-fhe-2"):
        rep = saved_presentations(db, MatchPolicy.named(name, [0.0, 0.0]), fmrs)
        reports[name] = rep.to_dict()
        lines += ["", rep.table()]
    data = {"eer": eers, "saved_presentations": reports}
    pol = MatchPolicy.named("amb-fhe-1", [0.0, 0.0])
    records = _score_records(db, pol.modality_order)
    if args.encrypted:
        dev = _encrypted_scores(cfg, db, pol.modality_order, records, args.encrypted)
        data["score_deviation"] = {"pairs": args.encrypted, "mean": dev[0], "max": dev[1]}
        lines += ["", f"encrypted vs plaintext over {args.encrypted} mated comparisons: "
                      f"mean {dev[0]:.3e}, max {dev[1]:.3e}"]
    write_scores(out_dir / "scores.csv", records)
    text = "\n".join(lines)
    write_report(out_dir / "evaluation", data, text)
    print(text)
    print(f"\nreports written to {out_dir}")
    return EXIT_OK


def _score_records(db, order):
    """Cumulative plaintext scores for every mated pair, one row per stage."""
    pairs = mated_and_nonmated_pairs(db, order[0])
    sets = stage_score_sets(db, order)
    recs = []
    for k, (s, i, j) in enumerate(pairs.mated):
        sid = db[s].subject_id
        for st, ss in enumerate(sets, start=1):
            recs.append([f"{sid}#{j}", f"{sid}#{i}", st, float(ss.mated[k]), None])
    return recs


def _encrypted_scores(cfg, db, order, records, count):
    params = preset(cfg.preset)
    ctx = CkksContext(params)
    rng = np.random.default_rng(cfg.seed)
    layout = PackedLayout(cfg.template_len, len(order), params.slot_count)
    sk, pk, evk = ctx.keygen(rotation_steps_for(layout), rng=rng)
    keys = ClientKeys(ctx, pk, evk)
    judge = KeyHolderJudge(ctx, sk, MatchPolicy(order, [0.0] * len(order)))
    pairs = mated_and_nonmated_pairs(db, order[0]).mated[:count]
    plain, enc = [], []
    for k, (s, i, j) in enumerate(pairs):
        ref = ctx.encrypt(pk, ctx.encode(db[s].fused(order, i).vector), rng=rng)
        aligned, delta = ref, None
        for st, m in enumerate(order, start=1):
            if st > 1:
                aligned = block_align(ctx, aligned, 2, layout, evk)
            delta = stage_score(keys, aligned, db[s].samples[m][j], delta, rng=rng)
            res = judge(st, delta, st == len(order))
            row = records[k * len(order) + st - 1]
            row[4] = res.dissimilarity
            plain.append(row[3])
            enc.append(res.dissimilarity)
    return score_deviation(plain, enc)


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ambfhe", description="Adaptive multi-biometric verification over CKKS.")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("-v", "--verbose", action="store_true", help="log protocol events")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("keygen", help="generate server key material")
    s.add_argument("--preset", help="parameter preset (TOY16, PN12QP109, PN13QP218)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="key directory")
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("synth", help="generate a synthetic multi-modal database")
    s.add_argument("--subjects", type=int)
    s.add_argument("--d", type=int, help="template length")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="database file")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("calibrate", help="EERs and per-stage thresholds, or noise level for a target EER")
    s.add_argument("--db")
    s.add_argument("--fmr", type=_percent_list, help="comma-separated FMR targets in percent")
    s.add_argument("--target-eer", type=float, help="find the noise sigma giving this EER (percent)")
    s.add_argument("--out", help="write thresholds as JSON")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("enroll", help="encrypt and store references through the protocol")
    s.add_argument("--db")
    s.add_argument("--keys")
    s.add_argument("--store")
    s.add_argument("--limit", type=int, help="enroll only the first N subjects")
    s.add_argument("--sample", type=int, default=0, help="sample index used as reference")
    s.add_argument("--replace", action="store_true")
    s.set_defaults(func=cmd_enroll)

    s = sub.add_parser("verify", help="run one verification session")
    s.add_argument("--subject", required=True, help="claimed identity")
    s.add_argument("--probe-subject", help="whose samples to present (default: the claimed subject)")
    s.add_argument("--probe-sample", type=int, default=1)
    s.add_argument("--db")
    s.add_argument("--keys")
    s.add_argument("--store")
    s.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("serve", help="run the verifier over TCP")
    s.add_argument("--db")
    s.add_argument("--keys")
    s.add_argument("--store")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("demo", help="end-to-end enrollment and verification on fresh data")
    s.add_argument("--policy", choices=("amb-fhe-1", "amb-fhe-2", "multi-and"))
    s.add_argument("--preset")
    s.add_argument("--transport", choices=("inproc", "tcp"), default="inproc")
    s.add_argument("--subject-index", type=int, default=0)
    s.set_defaults(func=cmd_demo)

    s = sub.add_parser("bench", help="primitive timings normalized to Add, and stage-2 cost")
    s.add_argument("--preset")
    s.add_argument("--d", type=int)
    s.add_argument("--runs", type=int, default=21)
    s.add_argument("--warmup", type=int, default=3)
    s.add_argument("--out", help="report path prefix (.json and .txt)")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("evaluate", help="EERs, saved presentations and score files")
    s.add_argument("--db")
    s.add_argument("--fmr", type=_percent_list, help="comma-separated FMR targets in percent")
    s.add_argument("--encrypted", type=int, default=0, help="also score the first N mated pairs under encryption")
    s.add_argument("--out", help="report directory")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(cfg, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParamError, CkksError) as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_CRYPTO
    except (ProtocolFailure, ConnectionError, ConnectionClosed) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (SerializationError, ValueError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
