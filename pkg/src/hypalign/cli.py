"""Command-line entry points.

Subcommands: gen-corpus, train, eval, noise-metric, sample-regions,
export-embeddings.  Flags mirror :class:`ExperimentConfig` field names in
kebab-case; ``--config`` loads a plain key=value file whose entries are
overridden by explicit flags.  Success prints machine-readable JSON to
stdout and exits 0; failures print one JSON error line to stderr and exit
nonzero (argparse errors exit 2).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional, Sequence

import numpy as np

from .datasynth import (Box, ConceptTree, SynonymMap, caption_noise_metric,
                        default_synonyms, grid_sample, proposal_sample,
                        read_corpus, synth_corpus, write_corpus)
from .trainer import (ExperimentConfig, evaluate_retrieval,
                      export_embeddings, hierarchy_report, load_state,
                      save_state, split_records, train)

_BOOL_FIELDS = {"early_stop"}


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file; flags win")
    for field in dataclasses.fields(ExperimentConfig):
        if field.name in _BOOL_FIELDS:
            parser.add_argument(_flag(field.name), dest=field.name,
                                action="store_true", default=None)
        else:
            parser.add_argument(_flag(field.name), dest=field.name,
                                type=type(field.default), default=None)


def load_config_file(path: str) -> dict:
    """Plain key=value lines; blank lines and # comments ignored."""
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    out: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            if key in _BOOL_FIELDS:
                out[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                out[key] = type(fields[key].default)(value)
    return out


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    values: dict = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for field in dataclasses.fields(ExperimentConfig):
        flag_value = getattr(args, field.name, None)
        if flag_value is not None:
            values[field.name] = flag_value
    return ExperimentConfig(**values)


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def _load_artifacts(config: ExperimentConfig):
    records = read_corpus(config.corpus_path)
    with open(config.synonyms_path, encoding="utf-8") as fh:
        synonyms = SynonymMap.from_json(json.load(fh))
    with open(config.meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    tree = ConceptTree.from_json(meta["tree"])
    return records, synonyms, tree


def cmd_gen_corpus(args) -> int:
    config = build_config(args)
    tree = ConceptTree.balanced(config.categories,
                                config.leaves_per_category)
    synonyms = default_synonyms(tree)
    records, scene_objects = synth_corpus(
        tree, scenes=config.scenes, noise_rate=config.rho,
        seed=config.seed, synonyms=synonyms, k=config.k,
        objects_per_scene=config.objects_per_scene, top_n=config.top_n,
        iou_threshold=config.iou_threshold)
    write_corpus(config.corpus_path, records)
    with open(config.synonyms_path, "w", encoding="utf-8") as fh:
        json.dump(synonyms.to_json(), fh, sort_keys=True,
                  separators=(",", ":"))
        fh.write("\n")
    meta = {
        "v": "v1",
        "tree": tree.to_json(),
        "seed": config.seed,
        "rho": config.rho,
        "k": config.k,
        "scenes": [
            {"scene": i,
             "objects": [{"cls": obj.cls,
                          "box": [obj.box.x1, obj.box.y1,
                                  obj.box.x2, obj.box.y2]}
                         for obj in objs]}
            for i, objs in enumerate(scene_objects)
        ],
    }
    with open(config.meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    noise = caption_noise_metric(records, synonyms)
    _emit({"records": len(records), "noise_pct": noise,
           "corpus": config.corpus_path})
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    records, synonyms, tree = _load_artifacts(config)
    state, metrics = train(config, records=records, tree=tree,
                           synonyms=synonyms)
    with open(config.metrics_path, "w", encoding="utf-8") as fh:
        for record in metrics:
            fh.write(record.to_json() + "\n")
    save_state(config.state_path, state)
    last = metrics[-1]
    _emit({"steps": last.step, "recall_at_1": last.recall_at_1,
           "containment_rate": last.containment_rate,
           "state": config.state_path, "metrics": config.metrics_path})
    return 0


def cmd_eval(args) -> int:
    config = build_config(args)
    state = load_state(config.state_path)
    records, _, _ = _load_artifacts(config)
    _, held = split_records(records)
    recall = evaluate_retrieval(state, held)
    hier = hierarchy_report(state, held)
    _emit({"recall_at_1": recall,
           "containment_rate": hier.containment_rate,
           "mean_caption_norm": hier.mean_caption_norm,
           "mean_object_norm": hier.mean_object_norm,
           "held_out_pairs": len(held)})
    return 0


def cmd_noise_metric(args) -> int:
    config = build_config(args)
    records = read_corpus(config.corpus_path)
    with open(config.synonyms_path, encoding="utf-8") as fh:
        synonyms = SynonymMap.from_json(json.load(fh))
    print(caption_noise_metric(records, synonyms))
    return 0


def cmd_sample_regions(args) -> int:
    config = build_config(args)
    rng = np.random.default_rng(config.seed)
    proposals = []
    for _ in range(max(config.top_n * 3, 6)):
        x = np.sort(rng.uniform(0.0, 1.0, size=2))
        y = np.sort(rng.uniform(0.0, 1.0, size=2))
        if x[1] - x[0] < 0.05 or y[1] - y[0] < 0.05:
            continue
        proposals.append(Box(float(x[0]), float(y[0]), float(x[1]),
                             float(y[1]), score=float(rng.uniform())))
    sampled = proposal_sample(proposals, config.top_n,
                              config.iou_threshold)
    for box in sampled:
        print(json.dumps({"set": "P", "box": list(box.coords()),
                          "score": box.score}, sort_keys=True))
    for box in grid_sample(config.k):
        print(json.dumps({"set": "G", "box": list(box.coords()),
                          "score": None}, sort_keys=True))
    return 0


def cmd_export_embeddings(args) -> int:
    config = build_config(args)
    state = load_state(config.state_path)
    records, _, _ = _load_artifacts(config)
    rows = export_embeddings(state, records)
    with open(config.export_path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":"))
                     + "\n")
    _emit({"rows": len(rows), "export": config.export_path})
    return 0


_COMMANDS = {
    "gen-corpus": (cmd_gen_corpus, "generate a synthetic caption corpus"),
    "train": (cmd_train, "train a model on a generated corpus"),
    "eval": (cmd_eval, "evaluate retrieval on the held-out split"),
    "noise-metric": (cmd_noise_metric, "print the corpus noise percentage"),
    "sample-regions": (cmd_sample_regions, "emit sampled region boxes"),
    "export-embeddings": (cmd_export_embeddings,
                          "dump embeddings for external projection"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypalign",
        description="hyperbolic vision-language alignment, desk scale")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_text) in _COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        _add_config_flags(cmd)
        cmd.set_defaults(handler=fn)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage; unknown flag -> 2
        return int(exc.code or 0)
    try:
        return args.handler(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # one machine-readable line on stderr
        print(json.dumps({"error": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return 1


def main() -> int:
    return run_cli()


if __name__ == "__main__":
    sys.exit(main())
