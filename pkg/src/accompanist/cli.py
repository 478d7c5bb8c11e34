"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error (missing or malformed
input files, impossible observations).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from . import harness, pipeline
from .errors import AccompanistError
from .hmm import CompileOptions, TrainOptions, as_observation, baum_welch, smooth_emissions
from .score import load_score, quantize

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

log = logging.getLogger("accompanist")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def cmd_compile(args):
    score = load_score(args.score)
    if args.subdivision:
        score = replace(score, subdivision=args.subdivision)
    opts = CompileOptions(p_correct=args.p_correct, p_start=args.p_start)
    model = pipeline.compile_model(score, opts, args.w1, args.w2, args.mu)
    _write_text(args.output, pipeline.dumps_model(model))
    log.info("compiled %d units into %d states", len(model.score.units), model.params.n_states)
    return EXIT_OK


def cmd_train(args):
    model = pipeline.load_model(args.model)
    events = pipeline.read_performance(args.observations)
    obs = [as_observation(g.pitches) for g in pipeline.group_note_ons(events)]
    if not obs:
        raise ValueError(f"{args.observations}: no NoteOn events to train on")
    params, history = baum_welch(model.params, obs,
                                 TrainOptions(max_iters=args.max_iters, tol=args.tol))
    params = smooth_emissions(params, args.emission_floor)
    _write_text(args.output, pipeline.dumps_model(model.with_params(params)))
    log.info("trained %d iterations, log-likelihood %.4f -> %.4f",
             len(history), history[0], history[-1])
    return EXIT_OK


def cmd_follow(args):
    model = pipeline.load_model(args.model)
    events = pipeline.read_performance(args.performance)
    positions, _, _, _ = pipeline.replay(model, events, parallel=args.hands == "parallel",
                                         dense=args.dense)
    _write_text(None, "".join(json.dumps(p.to_record()) + "\n" for p in positions))
    return EXIT_OK


def cmd_simulate(args):
    score = load_score(args.score)
    spec = harness.ErrorSpec.parse(args.errors) if args.errors else harness.ErrorSpec()
    if args.seed is not None:
        spec = harness.ErrorSpec(spec.p_wrong, spec.p_skip, spec.p_extra, spec.tempo_drift,
                                 args.seed)
    base_tempo = args.tempo if args.tempo else score.seconds_per_beat
    perf = harness.simulate(quantize(score), spec, base_tempo)
    _write_text(args.output, pipeline.dumps_performance(perf.events))
    if args.output not in (None, "-"):
        _write_text(pipeline.truth_path(args.output), json.dumps(perf.truth_document()) + "\n")
    return EXIT_OK


def cmd_accompany(args):
    model = pipeline.load_model(args.model)
    events = pipeline.read_performance(args.performance)
    _, accompaniment, _, _ = pipeline.replay(model, events, parallel=args.hands == "parallel")
    _write_text(args.output, "".join(ev.to_json() + "\n" for ev in accompaniment))
    if args.midi:
        from .midi import write_midi

        spb = 0.5
        ticks = 480 / spb
        notes = [(1, ev.pitch, max(ev.velocity, 1), round(ev.due_time * ticks),
                  round((ev.due_time + ev.duration) * ticks)) for ev in accompaniment]
        with open(args.midi, "wb") as fh:
            fh.write(write_midi(notes, 480, int(spb * 1e6)))
    return EXIT_OK


def cmd_bench(args):
    rows = harness.bench_decode(args.n or harness.DEFAULT_BENCH_N,
                                args.w or harness.DEFAULT_BENCH_W, args.steps)
    _write_text(args.output, harness.bench_csv(rows))
    return EXIT_OK


def cmd_serve(args):
    import uvicorn

    uvicorn.run("accompanist.service.app:app", host=args.host, port=args.port)
    return EXIT_OK


def build_parser():
    p = _Parser(prog="accompanist", description="HMM score follower and accompanist")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    c = sub.add_parser("compile", help="compile a score (JSON or MIDI) into a model file")
    c.add_argument("score")
    c.add_argument("-o", "--output", required=True)
    c.add_argument("--subdivision", type=int)
    c.add_argument("--p-correct", type=float, default=0.9)
    c.add_argument("--p-start", type=float, default=0.8)
    c.add_argument("--w1", type=int, default=2)
    c.add_argument("--w2", type=int, default=4)
    c.add_argument("--mu", type=float)
    c.set_defaults(func=cmd_compile)

    t = sub.add_parser("train", help="Baum-Welch training on a recorded performance")
    t.add_argument("model")
    t.add_argument("observations")
    t.add_argument("-o", "--output", required=True)
    t.add_argument("--max-iters", type=int, default=200)
    t.add_argument("--tol", type=float, default=1e-6)
    t.add_argument("--emission-floor", type=float, default=1e-3)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("follow", help="print decoded positions for a performance")
    f.add_argument("model")
    f.add_argument("performance")
    f.add_argument("--hands", choices=("single", "parallel"), default="single")
    f.add_argument("--dense", action="store_true", help="use the O(N^2) reference decoder")
    f.set_defaults(func=cmd_follow)

    s = sub.add_parser("simulate", help="simulate a performance with injected errors")
    s.add_argument("score")
    s.add_argument("--errors", help="JSON object or p_wrong=..,p_skip=..,p_extra=..,tempo_drift=..")
    s.add_argument("--seed", type=int)
    s.add_argument("--tempo", type=float, help="seconds per beat (default: score bpm)")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("accompany", help="offline replay producing the accompaniment stream")
    a.add_argument("model")
    a.add_argument("performance")
    a.add_argument("-o", "--output", required=True)
    a.add_argument("--hands", choices=("single", "parallel"), default="single")
    a.add_argument("--midi", help="also render the stream to a MIDI file")
    a.set_defaults(func=cmd_accompany)

    b = sub.add_parser("bench", help="time banded vs dense Viterbi steps (CSV)")
    b.add_argument("--n", type=int, nargs="+")
    b.add_argument("--w", type=int, nargs="+")
    b.add_argument("--steps", type=int, default=200)
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_bench)

    v = sub.add_parser("serve", help="run the HTTP following service")
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8000)
    v.set_defaults(func=cmd_serve)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        name = exc.filename or ""
        print(f"accompanist: cannot read or write {name}: {exc.strerror}", file=sys.stderr)
        return EXIT_DATA
    except (AccompanistError, ValueError, KeyError) as exc:
        print(f"accompanist: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
