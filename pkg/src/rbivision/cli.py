"""Command line: serve, detect, bench, audit, cascade-info.

Exit codes: 0 success, 1 runtime or protocol failure, 2 usage or parse error.
Option values come from flags, then a ``key = value`` config file
(``--config``), then built-in defaults.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .audit import WindowSecrets, audit_transcript
from .bench import BenchReport, bench_image, scaling_vs_slots
from .cascade import cascade_stats, load_cascade
from .channel import LatencyChannel, RecordingChannel, Transcript, connect
from .detector import DetectParams, detect, format_detections
from .errors import ParseError, QuantizationError, RBIError, UnsupportedCascade
from .imageio import ImageFormatError, read_image
from .integral import quantize
from .protocol import (STAGE_MODES, AliceSession, BlindServer, LocalServer, ServerConfig,
                       alice_detect_secure, parse_address)
from .rng import StreamRandom
from .synth import scene, search_windows

log = logging.getLogger("rbivision")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _csv_ints(text: str) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


def _csv_strs(text: str) -> list[str]:
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _flag(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


# option name -> (converter, default); flags default to None so that a
# config file value can fill the gap
OPTIONS = {
    "cascade": (str, None),
    "cascade_id": (str, None),
    "server": (str, None),
    "bind": (str, "127.0.0.1:7878"),
    "mode": (str, "plain"),
    "seed": (str, None),
    "k_fakes": (int, 0),
    "stage_mode": (str, "short_circuit"),
    "backend": (str, "mock"),
    "key_bits": (int, 1024),
    "group_bits": (int, 1024),
    "latency_ms": (float, 0.0),
    "normalize": (_flag, False),
    "scale_factor": (float, 1.25),
    "step": (int, 2),
    "min_neighbors": (int, 3),
    "transcript": (str, None),
    "debug_transcript": (_flag, False),
    "secrets": (str, None),
    "format": (str, "text"),
    "jobs": (int, 1),
    "reshuffle": (_flag, True),
    "image_dir": (str, None),
    "sizes": (_csv_ints, [100]),
    "images": (int, 1),
    "modes": (_csv_strs, ["plain", "secure-mock"]),
    "repetitions": (int, 3),
    "k_list": (_csv_ints, []),
    "output": (str, None),
}


def read_config(path: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment; dashes equal underscores."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{no}: expected key = value")
            key = key.strip().replace("-", "_")
            if key not in OPTIONS:
                raise UsageError(f"{path}:{no}: unknown option {key!r}")
            out[key] = value.strip()
    return out


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    for key, (conv, default) in OPTIONS.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) is not None:
            continue
        if key in cfg:
            try:
                setattr(args, key, conv(cfg[key]))
            except ValueError as exc:
                raise UsageError(f"config option {key}: {exc}") from None
        else:
            setattr(args, key, default)
    return args


# ---------------------------------------------------------------------------
# Parser


def _scan_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scale-factor", type=float, help="pyramid scale step (default 1.25)")
    p.add_argument("--step", type=int, help="window stride in pixels (default 2)")
    p.add_argument("--min-neighbors", type=int,
                   help="boxes needed per group; 0 disables grouping (default 3)")
    p.add_argument("--normalize", action="store_const", const=True,
                   help="variance-normalize windows (plain mode only)")


def _secure_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--server", metavar="HOST:PORT", help="remote server for secure mode")
    p.add_argument("--cascade-id", help="cascade id to request (default: cascade file stem)")
    p.add_argument("--k-fakes", type=int, help="fake classifiers per stage (in-process server)")
    p.add_argument("--stage-mode", choices=STAGE_MODES, help="default short_circuit")
    p.add_argument("--backend", choices=("mock", "paillier"),
                   help="comparison backend: mock (no privacy) or paillier (default mock)")
    p.add_argument("--key-bits", type=int, help="Paillier modulus size (default 1024)")
    p.add_argument("--latency-ms", type=float, help="added delay per outgoing message")
    p.add_argument("--jobs", type=int, help="parallel sessions for window submission")
    p.add_argument("--no-reshuffle", dest="reshuffle", action="store_const", const=False,
                   help="in-process server test mode: keep one permutation and fake set")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rbivision", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="key = value file (flags win over it)")
        return p

    p = add("serve", help="serve blind detection sessions over TCP")
    p.add_argument("--cascade", help="cascade XML (OpenCV haar format)")
    p.add_argument("--cascade-id", help="id clients ask for (default: file stem)")
    p.add_argument("--bind", metavar="HOST:PORT", help="listen address (default 127.0.0.1:7878)")
    p.add_argument("--seed", help="server random seed (default: fresh)")
    p.add_argument("--k-fakes", type=int, help="fake classifiers per stage (default 0)")
    p.add_argument("--group-bits", type=int, choices=(1024, 2048), help="OT group size")
    p.add_argument("--no-reshuffle", dest="reshuffle", action="store_const", const=False,
                   help="test mode: one fixed permutation and fake set for the whole session")

    p = add("detect", help="detect objects in an image")
    p.add_argument("image", help="PGM (P5) or PNG image")
    p.add_argument("--mode", choices=("plain", "secure"))
    p.add_argument("--cascade", help="cascade XML (plain mode, or in-process secure server)")
    p.add_argument("--seed", help="random seed (deterministic output)")
    p.add_argument("--transcript", metavar="OUT.bin", help="record the session transcript")
    p.add_argument("--debug-transcript", action="store_const", const=True,
                   help="keep payloads in the transcript and save window secrets beside it")
    p.add_argument("--format", choices=("text", "csv"))
    _scan_flags(p)
    _secure_flags(p)

    p = add("bench", help="time plain vs blind scans")
    p.add_argument("--cascade", help="cascade XML")
    p.add_argument("--image-dir", help="directory of PGM/PNG images (default: synthetic scenes)")
    p.add_argument("--images", type=int, help="number of synthetic scenes (default 1)")
    p.add_argument("--sizes", type=_csv_ints, help="synthetic scene sizes, comma separated (default 100)")
    p.add_argument("--modes", type=_csv_strs, help="comma list of plain, secure-mock, secure-real")
    p.add_argument("--repetitions", type=int, help="measured runs per configuration (default 3)")
    p.add_argument("--k-list", type=_csv_ints, help="fake counts for the N+K scaling table, e.g. 0,16,32,64")
    p.add_argument("--seed", help="random seed")
    p.add_argument("--format", choices=("text", "csv"))
    p.add_argument("--output", help="write the report here instead of standard output")
    _scan_flags(p)
    _secure_flags(p)

    p = add("audit", help="leakage report for a debug transcript")
    p.add_argument("transcript_path", metavar="TRANSCRIPT")
    p.add_argument("--secrets", help="window secrets file (default: TRANSCRIPT.secrets.npz)")

    p = add("cascade-info", help="summarize a cascade file")
    p.add_argument("cascade_path", metavar="CASCADE")
    p.add_argument("--format", choices=("text", "csv"))
    return parser


# ---------------------------------------------------------------------------
# Commands


def _load(path: Optional[str]):
    if not path:
        raise UsageError("--cascade is required")
    c = load_cascade(path)
    return c, quantize(c)


def _cascade_id(args, c) -> str:
    return args.cascade_id or c.name or Path(args.cascade).stem


def _params(args) -> DetectParams:
    try:
        return DetectParams(args.scale_factor, args.step, args.min_neighbors, bool(args.normalize))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_serve(args) -> int:
    c, qc = _load(args.cascade)
    cid = _cascade_id(args, c)
    try:
        host, port = parse_address(args.bind)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg = ServerConfig(k_fakes=args.k_fakes, reshuffle=args.reshuffle, group_bits=args.group_bits)
    try:
        server = BlindServer((host, port), {cid: qc}, cfg, StreamRandom(args.seed))
    except OSError as exc:
        print(f"error: cannot bind {args.bind}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    h, p = server.server_address[:2]
    print(f"ready: serving cascade {cid!r} on {h}:{p}", file=sys.stderr, flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _secure_detect(args, img, params):
    if params.normalize:
        raise UsageError("--normalize is not available in secure mode")
    rng = StreamRandom(args.seed)
    transcript = Transcript(debug=bool(args.debug_transcript)) if args.transcript else None
    local = None
    if args.server:
        if not args.cascade_id and not args.cascade:
            raise UsageError("secure mode with --server needs --cascade-id (or --cascade)")
        cid = args.cascade_id or Path(args.cascade).stem

        def open_channel():
            return connect(args.server)
    else:
        c, qc = _load(args.cascade)
        cid = _cascade_id(args, c)
        local = LocalServer({cid: qc}, ServerConfig(k_fakes=args.k_fakes, reshuffle=args.reshuffle),
                            rng.spawn("server"))
        open_channel = local.open
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    sessions = []
    try:
        for j in range(args.jobs):
            ch = open_channel()
            if args.latency_ms:
                ch = LatencyChannel(ch, args.latency_ms)
            if transcript is not None:
                ch = RecordingChannel(ch, transcript)
            sessions.append(AliceSession(ch, cid, args.stage_mode, args.backend, args.key_bits,
                                         rng=rng.spawn(f"alice-{j}"),
                                         keep_windows=bool(args.debug_transcript)).connect())
        dets = alice_detect_secure(img, params, sessions, rng.spawn("order"))
    finally:
        for s in sessions:
            s.close()
    if local is not None:
        local.join()
    if transcript is not None:
        transcript.save(args.transcript)
        if args.debug_transcript:
            merged = WindowSecrets()
            for s in sessions:
                merged.pixels.update(s.secrets.pixels)
                merged.weights.update(s.secrets.weights)
            merged.save(args.transcript + ".secrets.npz")
    return dets


def cmd_detect(args) -> int:
    params = _params(args)
    try:
        img = read_image(args.image)
    except FileNotFoundError as exc:
        raise UsageError(f"cannot open image: {exc}") from None
    if args.mode == "plain":
        _, qc = _load(args.cascade)
        dets = detect(img, qc, params)
    else:
        dets = _secure_detect(args, img, params)
    if args.format == "csv":
        sys.stdout.write("x,y,w,h,scale,stage\n")
        sys.stdout.write("".join(d.line().replace(" ", ",") + "\n" for d in dets))
    else:
        sys.stdout.write(format_detections(dets))
    return EXIT_OK


def _bench_images(args, qc) -> list:
    if args.image_dir:
        files = sorted(f for f in os.listdir(args.image_dir)
                       if f.lower().endswith((".pgm", ".png")))
        if not files:
            raise UsageError(f"no PGM/PNG images in {args.image_dir}")
        return [(f, read_image(os.path.join(args.image_dir, f))) for f in files]
    rng = StreamRandom(args.seed if args.seed is not None else "bench")
    faces = search_windows(qc, 4, rng.spawn("faces"))
    out = []
    for size in args.sizes:
        for i in range(args.images):
            img, _ = scene(faces, size, size, rng.spawn(f"scene-{size}-{i}"), step=args.step)
            out.append((f"synthetic{size}-{i}", img))
    return out


def cmd_bench(args) -> int:
    c, qc = _load(args.cascade)
    params = _params(args)
    cid = _cascade_id(args, c)
    report = BenchReport()
    connect_fn = (lambda: connect(args.server)) if args.server else None
    for name, img in _bench_images(args, qc):
        bench_image(report, name, img, qc, params, args.modes, args.repetitions,
                    cascade_id=cid, stage_mode=args.stage_mode, k_fakes=args.k_fakes,
                    key_bits=args.key_bits, latency_ms=args.latency_ms, seed=args.seed,
                    connect=connect_fn, jobs=args.jobs)
    if args.k_list:
        rng = StreamRandom(args.seed if args.seed is not None else "bench-k")
        wins = rng.integers(np.zeros((4, qc.window_height, qc.window_width)), 255).astype(np.uint8)
        scaling_vs_slots(report, qc, args.k_list, wins, args.repetitions, rng)
    text = report.csv() if args.format == "csv" else report.text()
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        t = Transcript.load(args.transcript_path)
    except FileNotFoundError as exc:
        raise UsageError(f"cannot open transcript: {exc}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    secrets_path = args.secrets or args.transcript_path + ".secrets.npz"
    secrets = WindowSecrets.load(secrets_path) if os.path.exists(secrets_path) else None
    sys.stdout.write(audit_transcript(t, secrets).text())
    return EXIT_OK


def cmd_cascade_info(args) -> int:
    c = load_cascade(args.cascade_path)
    st = cascade_stats(c)
    try:
        quantize(c)
        qnote = "ok"
    except (QuantizationError, UnsupportedCascade) as exc:
        qnote = f"not usable ({exc})"
    if args.format == "csv":
        sys.stdout.write("stage,weak\n" + "".join(f"{i},{n}\n" for i, n in enumerate(st.weak_per_stage)))
        return EXIT_OK
    print(f"name: {c.name}")
    print(f"window: {st.window_width}x{st.window_height}")
    print(f"stages: {st.stage_count}")
    print(f"weak classifiers: {st.total_weak} (first stage {st.weak_per_stage[0]}, "
          f"largest stage {st.max_stage})")
    print(f"per stage: {' '.join(map(str, st.weak_per_stage))}")
    print(f"tilted features: {'yes' if c.uses_tilted else 'no'}")
    print(f"fixed-point conversion: {qnote}")
    return EXIT_OK


COMMANDS = {"serve": cmd_serve, "detect": cmd_detect, "bench": cmd_bench,
            "audit": cmd_audit, "cascade-info": cmd_cascade_info}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)           # exits with 2 on bad usage
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        resolve(args)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, UnsupportedCascade, ImageFormatError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RBIError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
