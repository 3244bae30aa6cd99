"""Command-line entry point.

Every command writes a run manifest next to its outputs recording the
canonical command line, seeds, model hash, tool version and output hashes;
``deeplift replay`` re-executes it and compares the outputs byte for byte.

Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import normalize_softmax_contributions
from .errors import DataError, DeepliftError, ShapeMismatch
from .graph import ReferenceSpec, read_model, resolve_reference, write_model
from .harness import genomics
from .harness.digits import write_digit_idx
from .harness.erasure import erasure_eval
from .harness.idx import load_idx
from .methods import DEFAULT_INTGRAD_STEPS, METHODS, all_methods, attribute, parse_method
from . import trainer

CHUNK = 50
MANIFEST_NAME = "run_manifest.json"


# ------------------------------------------------------------------ inputs


def load_tensor(spec: str, index=None) -> np.ndarray:
    """Read a tensor from ``csv:v1,v2,..``, ``seq:ACGT..``, a ``.csv`` file, an
    IDX file, or a raw little-endian float32 file with a ``.shape`` sidecar."""
    if spec.startswith("csv:"):
        return np.array([float(v) for v in spec[4:].split(",")])
    if spec.startswith("seq:"):
        return genomics.one_hot(spec[4:])
    path = Path(spec)
    if not path.exists():
        raise DataError(f"input file {spec} not found")
    if path.suffix == ".csv":
        text = path.read_text().replace("\n", ",")
        return np.array([float(v) for v in text.split(",") if v.strip()])
    data = path.read_bytes()
    if data[:2] == b"\x00\x00" and len(data) >= 4 and data[2] in (0x08, 0x0D):
        arr = load_idx(data)
        if index is not None:
            arr = arr[int(index)]
        return arr
    sidecar = Path(str(path) + ".shape")
    if not sidecar.exists():
        raise DataError(f"raw float file {spec} needs a {sidecar.name} sidecar")
    shape = tuple(int(s) for s in sidecar.read_text().replace(",", " ").split())
    if len(data) != 4 * int(np.prod(shape)):
        raise ShapeMismatch(f"{spec} holds {len(data) // 4} floats, sidecar says {shape}")
    return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(shape)


def _fit(x, shape):
    x = np.asarray(x, dtype=np.float64)
    if x.size != int(np.prod(shape)):
        raise ShapeMismatch(f"input with {x.size} values does not fit model input {shape}")
    return x.reshape(shape)


def _references(spec: ReferenceSpec, x, seed):
    return resolve_reference(spec, x, seed)


# ---------------------------------------------------------------- manifest


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def canonical_argv(sub: argparse.ArgumentParser, command: str, args) -> list:
    argv = [command]
    for action in sub._actions:
        if not action.option_strings or action.dest == "help":
            continue
        value = getattr(args, action.dest, None)
        opt = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(opt)
        elif isinstance(action, argparse._AppendAction):
            for v in value or []:
                argv += [opt, str(v)]
        elif value is not None:
            argv += [opt, str(value)]
    return argv


def write_manifest(path, args, outputs, seeds, model_hash=None):
    manifest = {
        "tool": "deeplift",
        "version": __version__,
        "command": args.command,
        "argv": args._canonical,
        "flags": {k: v for k, v in sorted(vars(args).items()) if not k.startswith("_") and k != "func"},
        "seeds": seeds,
        "model_hash": model_hash,
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return manifest


def _abs(p):
    return str(Path(p).resolve())


def _parallel(fn, items, jobs):
    """Map ``fn`` over ``items`` keeping input order regardless of ``jobs``."""
    if jobs <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _chunks(n, size=CHUNK):
    return [range(s, min(s + size, n)) for s in range(0, n, size)]


# ---------------------------------------------------------------- commands


def cmd_attribute(args):
    g, mhash = read_model(args.model)
    x = _fit(load_tensor(args.input, args.index), g.input_shape)
    spec = ReferenceSpec.parse(args.reference, loader=load_tensor)
    refs = _references(spec, x, args.seed)
    rules = json.loads(Path(args.rules).read_text()) if args.rules else None

    def run(target):
        results = [attribute(args.method, g, x, r, target, rules=rules, use_final=args.use_final,
                             reference_name=spec.describe()) for r in refs]
        if len(results) == 1:
            return results[0]
        first = results[0]
        first.scores = np.mean(np.stack([r.scores for r in results]), axis=0)
        first.delta_t = float(np.mean([r.delta_t for r in results]))
        first.metadata = {**first.metadata, "n_references": len(results)}
        return first

    if args.normalize_softmax:
        n_classes = int(np.prod(g.output_shape))
        result = normalize_softmax_contributions([run(c) for c in range(n_classes)], n_classes)[args.target]
    else:
        result = run(args.target)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.to_json() + "\n")
    write_manifest(str(out) + ".run.json", args, [out], {"seed": args.seed}, mhash)
    print(f"{result.method}: wrote {out} (delta_t={result.delta_t:.6g}, sum={np.sum(result.scores):.6g})")


def cmd_simulate(args):
    gata = genomics.Pwm.load(args.gata1_pwm) if args.gata1_pwm else None
    tal = genomics.Pwm.load(args.tal1_pwm) if args.tal1_pwm else None
    seqs = genomics.generate_dataset(args.n, args.seed, gata, tal, length=args.length)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sequences.tsv"
    genomics.write_dataset(seqs, path)
    write_manifest(out / MANIFEST_NAME, args, [path], {"seed": args.seed})
    counts = {g: sum(s.labels == g for s in seqs) for g in genomics.LABEL_GROUPS}
    print(f"wrote {len(seqs)} sequences to {path}: {counts}")


def _digit_arrays(data_dir, split):
    d = Path(data_dir)
    prefix = "train" if split == "train" else "t10k"
    x = load_idx((d / f"{prefix}-images-idx3-ubyte").read_bytes())
    y = load_idx((d / f"{prefix}-labels-idx1-ubyte").read_bytes(), scale=False).astype(int)
    return x[..., None], y


def cmd_train(args):
    cfg = trainer.load_config(args.config or args.task)
    tc = trainer.config_train(cfg, epochs=args.epochs, seed=args.seed)
    g = trainer.init_graph(cfg["architecture"], cfg["input_shape"], seed=args.init_seed)
    if args.task == "genomic":
        x, y = genomics.dataset_arrays(genomics.read_dataset(args.data))
        valid = genomics.dataset_arrays(genomics.read_dataset(args.valid)) if args.valid else None
    else:
        x, y = _digit_arrays(args.data, "train")
        valid = _digit_arrays(args.data, "test")
    g, history = trainer.train(g, (x, y), tc, log=print)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mhash = write_model(g, out / "model.json")
    trainer.write_history(history, out / "loss_history.csv")
    metrics = {}
    if valid is not None:
        # metrics use the float32 weights actually written to disk
        g_saved, _ = read_model(out / "model.json")
        preds = trainer.predict_batches(g_saved, valid[0])
        if args.task == "genomic":
            metrics["auc"] = [trainer.roc_auc(preds[:, k], valid[1][:, k]) for k in range(valid[1].shape[1])]
        else:
            metrics["accuracy"] = float(np.mean(preds.argmax(axis=1) == valid[1]))
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    outputs = [out / "model.json", out / "model.bin", out / "loss_history.csv", out / "metrics.json"]
    write_manifest(out / MANIFEST_NAME, args, outputs,
                   {"init_seed": args.init_seed, "train_seed": tc.seed}, mhash)
    print(f"model written to {out / 'model.json'}; metrics {metrics}")


def cmd_make_digits(args):
    paths = write_digit_idx(args.out_dir, args.seed, args.n_test)
    write_manifest(Path(args.out_dir) / MANIFEST_NAME, args, list(paths.values()), {"seed": args.seed})
    print(f"wrote digit IDX files to {args.out_dir}")


MATCH_FIELDS = ["seq_id", "labels", "motif", "start", "log_odds", "task", "method", "importance"]
SUMMARY_FIELDS = ["motif", "task", "method", "n_strong", "n_false_negative", "false_negative_rate"]


def cmd_eval_motifs(args):
    g, mhash = read_model(args.model)
    seqs = genomics.read_dataset(args.data)
    pwms = [genomics.Pwm.shipped(name) for name in args.motifs.split(",")]
    tasks = [int(t) for t in args.tasks.split(",")]
    methods = args.methods.split(",") if args.methods else all_methods(args.intgrad_steps)
    spec = ReferenceSpec.parse(args.reference, loader=load_tensor)

    matches = [m for s in seqs for pwm in pwms for m in genomics.scan_matches(s, pwm, args.top_k)]
    by_seq = {}
    for m in matches:
        by_seq.setdefault(m.seq_id, []).append(m)
    x_all = np.stack([s.onehot for s in seqs])

    def work(idx):
        xb = x_all[idx.start : idx.stop]
        per_seq_refs = [_references(spec, x, args.seed + seqs[i].id) for i, x in zip(idx, xb)]
        k = len(per_seq_refs[0])
        out = {}
        for method in methods:
            for task in tasks:
                total = np.zeros_like(xb)
                for j in range(k):
                    rb = np.stack([r[j] for r in per_seq_refs])
                    total += attribute(method, g, xb, rb, task, per_position=True,
                                       reference_name=spec.describe()).scores
                out[(method, task)] = total / k
        return idx, out

    for idx, out in _parallel(work, _chunks(len(seqs)), args.jobs):
        for row, i in enumerate(idx):
            for m in by_seq.get(seqs[i].id, []):
                for key, scores in out.items():
                    m.importance[key] = genomics.aggregate_match_importance(m, scores[row])

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for m in matches:
        for method in methods:
            for task in tasks:
                rows.append([m.seq_id, m.seq_labels, m.motif, m.start, repr(m.log_odds), task, method,
                             repr(m.importance[(method, task)])])
    with open(out_dir / "matches.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MATCH_FIELDS)
        w.writerows(rows)
    (out_dir / "matches.json").write_text(
        json.dumps([dict(zip(MATCH_FIELDS, r)) for r in rows], indent=1) + "\n")

    summary = []
    for pwm in pwms:
        for task in tasks:
            for method in methods:
                strong = [m for m in matches if m.motif == pwm.name and m.seq_labels == "111"
                          and m.log_odds > args.strong]
                misses = sum(m.importance[(method, task)] <= 0 for m in strong)
                rate = misses / len(strong) if strong else float("nan")
                summary.append([pwm.name, task, method, len(strong), misses, repr(rate)])
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        w.writerows(summary)
    outputs = [out_dir / "matches.csv", out_dir / "matches.json", out_dir / "summary.csv"]
    write_manifest(out_dir / MANIFEST_NAME, args, outputs, {"seed": args.seed}, mhash)
    for r in summary:
        if r[0] == "TAL1" and r[1] == 0:
            print(f"TAL1 task 0 {r[2]:>24}: {r[4]}/{r[3]} strong matches with score <= 0")


ERASURE_FIELDS = ["image_id", "original_class", "target_class", "method", "skipped", "n_erased",
                  "log_odds_before", "log_odds_after", "log_odds_increase"]


def cmd_eval_erasure(args):
    g, mhash = read_model(args.model)
    images = load_idx(Path(args.images).read_bytes())
    labels = load_idx(Path(args.labels).read_bytes(), scale=False).astype(int)
    chosen = [int(i) for i in np.flatnonzero(labels == args.from_class)[: args.n_images]]
    if not chosen:
        raise DataError(f"no images of class {args.from_class}")
    methods = args.methods.split(",") if args.methods else [
        "deeplift-revealcancel", "deeplift-rescale", "gradXinput", f"intgrad:{args.intgrad_steps}",
        "guidedXinput"]
    targets = args.to or [3, 6]
    spec = ReferenceSpec.parse(args.reference, loader=load_tensor)

    def work(i):
        x = _fit(images[i], g.input_shape)
        ref = _references(spec, x, args.seed)[0]
        return [erasure_eval(g, x, args.from_class, target_class, method, ref, image_id=i)
                for target_class in targets for method in methods]

    reports = [r for batch in _parallel(work, chosen, args.jobs) for r in batch]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "erasure.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERASURE_FIELDS)
        for r in reports:
            d = r.to_dict()
            w.writerow([d["image_id"], d["original_class"], d["target_class"], d["method"], int(d["skipped"]),
                        d["n_erased"], repr(d["log_odds_before"]), repr(d["log_odds_after"]), repr(d["log_odds_increase"])])
    (out_dir / "erasure.json").write_text(json.dumps([r.to_dict() for r in reports], indent=1) + "\n")
    outputs = [out_dir / "erasure.csv", out_dir / "erasure.json"]
    write_manifest(out_dir / MANIFEST_NAME, args, outputs, {"seed": args.seed}, mhash)
    for target_class in targets:
        for method in methods:
            inc = [r.log_odds_increase for r in reports
                   if r.target_class == target_class and r.method == method and not r.skipped]
            if inc:
                print(f"{args.from_class}->{target_class} {method:>24}: median log-odds increase {np.median(inc):.3f}")


_OUTPUT_FLAG = {"attribute": "--output"}


def cmd_replay(args):
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    flag = _OUTPUT_FLAG.get(manifest["command"], "--out-dir")
    pos = argv.index(flag)
    target = Path(args.out)
    if flag == "--output":
        new_output = target / Path(argv[pos + 1]).name
        target.mkdir(parents=True, exist_ok=True)
        argv[pos + 1] = str(new_output)
        new_manifest = Path(str(new_output) + ".run.json")
        out_dir = target
    else:
        argv[pos + 1] = str(target)
        new_manifest = target / MANIFEST_NAME
        out_dir = target
    code = main(argv)
    if code:
        return code
    replayed = json.loads(new_manifest.read_text())
    mismatched = [name for name, h in manifest["outputs"].items() if replayed["outputs"].get(name) != h]
    if mismatched:
        print(f"replay differs in {mismatched}", file=sys.stderr)
        return 1
    print(f"replay in {out_dir} reproduced {len(manifest['outputs'])} outputs bit-identically")
    return 0


# ------------------------------------------------------------------ parser


def _method(text):
    try:
        parse_method(text)
    except DataError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return text


def _method_list(text):
    for m in text.split(","):
        _method(m)
    return text


def build_parser():
    parser = argparse.ArgumentParser(prog="deeplift", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("attribute", help="score one input with one method")
    p.add_argument("--model", required=True, type=_abs)
    p.add_argument("--input", required=True, help="csv:v1,v2.. | seq:ACGT.. | .csv | IDX | raw f32 + .shape")
    p.add_argument("--index", type=int, help="item to take from an IDX input")
    p.add_argument("--reference", default="zeros", help="zeros | constant:v1,v2,.. | file:PATH | shuffle:K")
    p.add_argument("--method", required=True, type=_method, help=" | ".join(METHODS))
    p.add_argument("--target", type=int, default=0)
    p.add_argument("--use-final", action="store_true", help="explain the final nonlinearity, not the logit")
    p.add_argument("--normalize-softmax", action="store_true")
    p.add_argument("--rules", type=_abs, help="JSON map of layer index -> rescale|revealcancel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True, type=_abs)
    p.set_defaults(func=cmd_attribute)

    p = subs.add_parser("simulate", help="generate the TAL1/GATA1 sequence simulation")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--length", type=int, default=genomics.SEQ_LEN)
    p.add_argument("--gata1-pwm", type=_abs)
    p.add_argument("--tal1-pwm", type=_abs)
    p.add_argument("--out-dir", required=True, type=_abs)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("make-digits", help="write desk-scale digit IDX files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-test", type=int, default=400)
    p.add_argument("--out-dir", required=True, type=_abs)
    p.set_defaults(func=cmd_make_digits)

    p = subs.add_parser("train", help="train the genomic or digit model")
    p.add_argument("--task", choices=("genomic", "digits"), required=True)
    p.add_argument("--data", required=True, type=_abs, help="sequences.tsv (genomic) or IDX directory (digits)")
    p.add_argument("--valid", type=_abs, help="validation sequences.tsv (genomic)")
    p.add_argument("--config", type=_abs, help="JSON config; defaults to the shipped one for --task")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int, help="shuffling seed (overrides config)")
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--out-dir", required=True, type=_abs)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval-motifs", help="score top PWM matches with every method")
    p.add_argument("--model", required=True, type=_abs)
    p.add_argument("--data", required=True, type=_abs)
    p.add_argument("--methods", type=_method_list, help="comma list; default all ten")
    p.add_argument("--intgrad-steps", type=int, default=DEFAULT_INTGRAD_STEPS)
    p.add_argument("--motifs", default="TAL1,GATA1")
    p.add_argument("--tasks", default="0,1,2")
    p.add_argument("--reference", default="constant:0.3,0.2,0.2,0.3")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--strong", type=float, default=genomics.STRONG_LOG_ODDS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True, type=_abs)
    p.set_defaults(func=cmd_eval_motifs)

    p = subs.add_parser("eval-erasure", help="pixel-erasure class conversion")
    p.add_argument("--model", required=True, type=_abs)
    p.add_argument("--images", required=True, type=_abs)
    p.add_argument("--labels", required=True, type=_abs)
    p.add_argument("--from", dest="from_class", type=int, default=8)
    p.add_argument("--to", type=int, action="append")
    p.add_argument("--methods", type=_method_list)
    p.add_argument("--intgrad-steps", type=int, default=10)
    p.add_argument("--n-images", type=int, default=100)
    p.add_argument("--reference", default="zeros")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out-dir", required=True, type=_abs)
    p.set_defaults(func=cmd_eval_erasure)

    p = subs.add_parser("replay", help="re-run a recorded command and compare outputs")
    p.add_argument("manifest", type=_abs)
    p.add_argument("--out", required=True, type=_abs)
    p.set_defaults(func=cmd_replay)
    return parser, subs


def main(argv=None) -> int:
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._canonical = canonical_argv(subs.choices[args.command], args.command, args)
    try:
        code = args.func(args)
    except DeepliftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return int(code or 0)


if __name__ == "__main__":
    sys.exit(main())
