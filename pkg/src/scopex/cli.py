"""Command-line entry point.

Machine-readable JSON goes to stdout (or ``--out``), human summaries to
stderr. Exit codes: 0 success, 1 domain error, 2 usage error.

Settings are resolved from a JSON config file, then command-line flags,
then ``SCOPEX_*`` environment variables; later sources win.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .entropy import entropy_report, network_entropy
from .errors import ScopexError
from .extensions import (
    GENERALIZATION,
    HORIZONTAL,
    SPATIAL,
    TEMPORAL,
    VERTICAL,
    Extension,
    ExtensionRegistry,
    compose,
    extend_dynamic,
    extend_horizontal,
    extend_spatial,
    extend_temporal,
    extend_vertical,
    generalization_extension,
    generalize,
    load_templates,
)
from .gateway import HttpBackend, ScriptedBackend
from .network import merge_all, tree_from_extension
from .orchestrator import AnswerContext, Orchestrator, OrchestratorConfig, ReasoningTrace, UNRESOLVED
from .store import MethodStore
from .text import question_key

KIND_ALIASES = {
    "v": VERTICAL, "h": HORIZONTAL, "g": GENERALIZATION, "t": TEMPORAL, "s": SPATIAL,
    VERTICAL: VERTICAL, HORIZONTAL: HORIZONTAL, GENERALIZATION: GENERALIZATION,
    TEMPORAL: TEMPORAL, SPATIAL: SPATIAL,
}

ENV_KEYS = {
    "store_path": "SCOPEX_STORE",
    "scripted": "SCOPEX_SCRIPTED",
    "backend": "SCOPEX_BACKEND",
    "templates_path": "SCOPEX_TEMPLATES",
    "registry_path": "SCOPEX_REGISTRY",
    "intuition_threshold": "SCOPEX_INTUITION_THRESHOLD",
    "reuse_threshold": "SCOPEX_REUSE_THRESHOLD",
    "borrow_k": "SCOPEX_BORROW_K",
}


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    store_path: str | None = None
    backend: str = "scripted"  # "scripted" or "http"
    scripted: str | None = None
    templates_path: str | None = None
    registry_path: str | None = None
    intuition_threshold: float = 0.75
    reuse_threshold: float = 0.25
    borrow_k: int = 3

    @classmethod
    def resolve(cls, args: argparse.Namespace, env=None) -> CliConfig:
        env = os.environ if env is None else env
        values: dict = {}
        if args.config:
            path = Path(args.config)
            if not path.exists():
                raise UsageError(f"config file not found: {path}")
            raw = json.loads(path.read_text(encoding="utf-8"))
            backend = raw.pop("backend", None)
            if isinstance(backend, dict):
                values["backend"], values["scripted"] = "scripted", backend.get("scripted")
            elif backend:
                values["backend"] = backend
            thresholds = raw.pop("thresholds", {})
            values.update({k: v for k, v in thresholds.items()
                           if k in ("intuition_threshold", "reuse_threshold", "borrow_k")})
            values.update({k: v for k, v in raw.items() if k in cls.__dataclass_fields__})
        for name in ENV_KEYS:
            flag = getattr(args, name, None)
            if flag is not None:
                values[name] = flag
        for name, key in ENV_KEYS.items():
            if env.get(key):
                values[name] = env[key]
        if values.get("scripted") and "backend" not in values:
            values["backend"] = "scripted"
        try:
            config = cls(**values)
            config.intuition_threshold = float(config.intuition_threshold)
            config.reuse_threshold = float(config.reuse_threshold)
            config.borrow_k = int(config.borrow_k)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad configuration: {exc}") from None
        config.validate()
        return config

    def validate(self) -> None:
        if self.backend not in ("scripted", "http"):
            raise UsageError(f"unknown backend {self.backend!r}")
        for name in ("scripted", "templates_path"):
            path = getattr(self, name)
            if path and not Path(path).exists():
                raise UsageError(f"{name} file not found: {path}")
        if not 0 <= self.intuition_threshold <= 1 or not 0 <= self.reuse_threshold <= 2 or self.borrow_k < 1:
            raise UsageError("thresholds out of range")

    def gateway(self):
        if self.backend == "http":
            return HttpBackend.from_env()
        if not self.scripted:
            raise UsageError("scripted backend needs --scripted PATH (or SCOPEX_SCRIPTED)")
        return ScriptedBackend.from_file(self.scripted)

    def templates(self) -> dict:
        return load_templates(self.templates_path)

    def store(self, gateway, create: bool = False) -> MethodStore:
        if not self.store_path:
            if create:
                raise UsageError("--store is required")
            return MethodStore(gateway, dim=getattr(gateway, "embedding_dim", None))
        path = Path(self.store_path)
        if not path.exists() and not create:
            raise UsageError(f"store file not found: {path}")
        return MethodStore.open(path, gateway, dim=getattr(gateway, "embedding_dim", None))


def _emit(payload, out: str | None = None) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _say(message: str) -> None:
    print(message, file=sys.stderr)


def _read_states(path: str | None) -> list[str]:
    if not path:
        return []
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        return [str(s) for s in json.loads(text)]
    return [line.strip() for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args, config: CliConfig) -> int:
    gateway = config.gateway()
    store = config.store(gateway, create=True)
    mid = store.add_method(args.question, args.solution, args.steps, tags=args.tags or ())
    _emit({"id": mid, "question": args.question, "methods": len(store)})
    _say(f"stored method {mid} ({len(store)} in store)")
    return 0


def cmd_ask(args, config: CliConfig) -> int:
    gateway = config.gateway()
    orch = Orchestrator(
        gateway,
        config.store(gateway),
        OrchestratorConfig(config.intuition_threshold, config.reuse_threshold, config.borrow_k,
                           max_stages=args.max_stages),
        config.templates(),
    )
    context = AnswerContext(_read_states(args.history), _read_states(args.future), args.wider or "")
    _, trace = orch.answer(args.question, context)
    text = trace.dumps()
    if args.trace_out:
        Path(args.trace_out).write_text(text, encoding="utf-8")
    _emit(text)
    _say(f"outcome: {trace.outcome} after {len(trace.stages)} stage(s)")
    return 1 if trace.outcome == UNRESOLVED else 0


def cmd_extend(args, config: CliConfig) -> int:
    templates = config.templates()
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()] if args.kinds else []
    try:
        kinds = [KIND_ALIASES[k] for k in kinds]
    except KeyError as exc:
        raise UsageError(f"unknown extension kind {exc}") from None
    needs_backend = any(k in (VERTICAL, HORIZONTAL, GENERALIZATION) for k in kinds)
    gateway = config.gateway() if needs_backend else None
    extensions: list[Extension] = []
    for kind in kinds:
        if kind == VERTICAL:
            extensions.append(extend_vertical(args.question, gateway, templates=templates))
        elif kind == HORIZONTAL:
            extensions.append(extend_horizontal(args.question, gateway, args.n, templates=templates))
        elif kind == GENERALIZATION:
            general, report = generalize(args.question, gateway, config.store(gateway), templates=templates)
            extensions.append(generalization_extension(args.question, general))
            _say(f"generalized; {len(report.registered)} method(s) registered against it")
        elif kind == TEMPORAL:
            extensions.append(extend_temporal(args.question, _read_states(args.history),
                                              _read_states(args.future)))
        elif kind == SPATIAL:
            extensions.append(extend_spatial(args.question, args.wider or ""))
    if args.dynamic:
        if not config.registry_path:
            raise UsageError("--dynamic needs a registry (--registry PATH)")
        reg_path = Path(config.registry_path)
        registry = ExtensionRegistry.load(reg_path) if reg_path.exists() else ExtensionRegistry()
        for item in args.dynamic:
            name, sep, content = item.partition("=")
            if not sep:
                raise UsageError(f"--dynamic expects NAME=TEXT, got {item!r}")
            if name not in registry.common and name not in registry.dynamic:
                registry.register_dynamic(name)
            extensions.append(extend_dynamic(args.question, name, [content], registry))
        registry.save(reg_path)
    extended = compose(args.question, extensions)
    _emit({
        "question_id": question_key(args.question),
        "extensions": [dict(e.to_json(), id=e.id) for e in extensions],
        "extended": extended.to_json(),
    })
    _say(f"applied {len(extensions)} extension(s)")
    return 0


def _load_extension_sources(directory: Path) -> list[tuple[str, list[Extension]]]:
    sources = []
    for path in sorted(directory.glob("*.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        if "stages" in data:
            trace = ReasoningTrace.from_json(data)
            sources.append((trace.question, trace.extensions()))
        else:
            question = data["question"]
            exts = [
                Extension(e["kind"], question_key(question), tuple(e["payload"]),
                          float(e.get("weight", 1.0)), e.get("source", "user-supplied"))
                for e in data.get("extensions", [])
            ]
            sources.append((question, exts))
    return sources


def cmd_network_build(args, config: CliConfig) -> int:
    directory = Path(args.traces)
    if not directory.is_dir():
        raise UsageError(f"not a directory: {directory}")
    trees = []
    for question, extensions in _load_extension_sources(directory):
        for ext in extensions:
            if ext.is_dynamic:
                continue
            trees.append(tree_from_extension(question, ext))
    if not trees:
        raise UsageError(f"no extensions found under {directory}")
    network = merge_all(trees)
    text = network.to_dot() if args.format == "dot" else network.dumps()
    _emit(text, args.out)
    if args.out:
        _emit({"out": args.out, "format": args.format, "nodes": len(network.nodes),
               "edges": len(network.edges), "trees": len(network.trees)})
    _say(f"network: {len(network.nodes)} nodes, {len(network.edges)} edges from {len(trees)} trees")
    return 0


def cmd_entropy(args, config: CliConfig) -> int:
    data = json.loads(Path(args.coverage).read_text(encoding="utf-8"))
    coverage = data["coverage"] if "coverage" in data else data
    report = entropy_report(list(coverage), coverage)
    payload = report.to_json()
    if "sets" in data:
        combined, per_tree = network_entropy(data["sets"], coverage)
        payload["network"] = {"combined": combined, "per_tree": per_tree}
    _emit(payload, args.out)
    _say(f"H = {report.entropy_bits:.6f} bits over {len(report.per_extension)} extension(s)")
    return 0


def cmd_improve(args, config: CliConfig) -> int:
    gateway = config.gateway()
    orch = Orchestrator(gateway, config.store(gateway), templates=config.templates())
    candidates = orch.improve_method(args.method, args.strategy, "predictive", args.trials, args.seed)
    _emit([c.to_json() for c in candidates])
    _say(f"{len(candidates)} candidate(s); best score {candidates[0].score:.3f}")
    return 0


def cmd_critique(args, config: CliConfig) -> int:
    gateway = config.gateway()
    orch = Orchestrator(gateway, config.store(gateway), templates=config.templates())
    _emit({"method": args.method, "critique": orch.critique_method(args.method)})
    return 0


def cmd_active(args, config: CliConfig) -> int:
    gateway = config.gateway()
    orch = Orchestrator(gateway, MethodStore(gateway), templates=config.templates())
    changes, action = orch.active_step(args.goal, args.previous, args.current)
    _emit({"changes": changes, "action": action})
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--store", dest="store_path", help="method store (line-delimited JSON)")
    common.add_argument("--scripted", help="scripted backend config (JSON)")
    common.add_argument("--backend", choices=["scripted", "http"])
    common.add_argument("--templates", dest="templates_path", help="prompt template overrides (JSON)")
    common.add_argument("--registry", dest="registry_path", help="extension registry (JSON)")
    common.add_argument("--intuition-threshold", type=float)
    common.add_argument("--reuse-threshold", type=float)
    common.add_argument("--borrow-k", type=int)

    parser = argparse.ArgumentParser(prog="scopex", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", parents=[common], help="store a question/solution method")
    p.add_argument("--question", required=True)
    p.add_argument("--solution", required=True)
    p.add_argument("--steps", nargs="+")
    p.add_argument("--tags", nargs="+")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("ask", parents=[common], help="answer a question through the staged pipeline")
    p.add_argument("--question", required=True)
    p.add_argument("--trace-out")
    p.add_argument("--max-stages", type=int, default=4, choices=range(1, 5))
    p.add_argument("--history", help="file of past states, oldest first")
    p.add_argument("--future", help="file of future states, nearest first")
    p.add_argument("--wider", help="wider spatial context")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("extend", parents=[common], help="apply scope extensions to a question")
    p.add_argument("--question", required=True)
    p.add_argument("--kinds", default="", help="comma list of v,h,g,t,s")
    p.add_argument("--history")
    p.add_argument("--future")
    p.add_argument("--wider")
    p.add_argument("--n", type=int, default=3, help="max horizontal neighbors")
    p.add_argument("--dynamic", action="append", metavar="NAME=TEXT")
    p.set_defaults(func=cmd_extend)

    net = sub.add_parser("network", help="knowledge networks")
    net_sub = net.add_subparsers(dest="network_command")
    p = net_sub.add_parser("build", parents=[common], help="merge extension trees from trace files")
    p.add_argument("--traces", required=True, help="directory of trace or extension JSON files")
    p.add_argument("--out")
    p.add_argument("--format", choices=["json", "dot"], default="json")
    p.set_defaults(func=cmd_network_build)

    p = sub.add_parser("entropy", parents=[common], help="entropy report from a coverage file")
    p.add_argument("--coverage", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("improve", parents=[common], help="step-change improvement candidates")
    p.add_argument("--method", required=True)
    p.add_argument("--strategy", required=True, choices=["minimal", "partial", "complete"])
    p.add_argument("--trials", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_improve)

    p = sub.add_parser("critique", parents=[common], help="whole-method critique")
    p.add_argument("--method", required=True)
    p.set_defaults(func=cmd_critique)

    p = sub.add_parser("active", parents=[common], help="one difference-based active step")
    p.add_argument("--goal", required=True)
    p.add_argument("--previous", required=True)
    p.add_argument("--current", required=True)
    p.set_defaults(func=cmd_active)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        config = CliConfig.resolve(args)
        return args.func(args, config)
    except UsageError as exc:
        _say(f"usage error: {exc}")
        return 2
    except ScopexError as exc:
        _say(f"error[{exc.code}]: {exc}")
        return 1


def run(argv: list[str] | None = None) -> int:
    """``main`` that also turns argparse's SystemExit into a return code."""
    try:
        return main(argv)
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
