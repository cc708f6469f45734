"""Command-line entry point: ``wsnad <subcommand> --config run.yaml [--section.key value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, dump_yaml, field_paths, load_config, parse_value, resolve
from .experiment import STAGES, GradcheckFailed, MissingArtifactError, NodeMismatchError, write_json
from .numeric import NonFiniteError

log = logging.getLogger("wsnad")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5
EXIT_GRADCHECK = 6

HELP = {
    "synth": "generate a synthetic corpus (with injected anomalies per data.anomaly_rate)",
    "inject": "inject anomalies into an existing corpus",
    "ingest": "parse IBRL readings into a corpus",
    "pretrain": "self-supervised pretraining; writes backbone.json",
    "finetune": "train node prompts against a frozen backbone; writes prompts.json",
    "detect": "score the test split and write scores.csv / metrics.json",
    "eval": "pretrain + finetune + detect, compared with a persistence baseline",
    "ablate": "run the ablation schemes and write a comparison table",
    "gradcheck": "finite-difference verification of the full model gradient",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsnad", description="WSN spatio-temporal anomaly detection experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    leaves = field_paths()
    for name in STAGES:
        p = sub.add_parser(name, help=HELP[name], description=HELP[name])
        p.add_argument("--config", required=True, help="YAML or JSON run configuration")
        for path in leaves:
            p.add_argument(f"--{path}", dest=f"ov:{path}", metavar="VALUE", default=None, help=argparse.SUPPRESS)
        p.epilog = "Any config key can be overridden with --<dotted.key> VALUE, e.g. --window.w 64 --seed 7."
    return parser


def _overrides(ns: argparse.Namespace) -> dict:
    out = {}
    for k, v in vars(ns).items():
        if k.startswith("ov:") and v is not None:
            out[k[3:]] = parse_value(v)
    return out


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if ns.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve(load_config(ns.config), _overrides(ns))
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "resolved_config.yaml").write_text(dump_yaml(cfg), encoding="utf-8")
        artifacts = STAGES[ns.command](cfg, out)
        summary = {
            "command": ns.command,
            "seed": cfg.seed,
            "resolved_config": "resolved_config.yaml",
            "artifacts": artifacts,
            "status": "ok",
        }
        write_json(out / "run_summary.json", summary)
        log.info("%s finished; artifacts in %s", ns.command, out)
        return EXIT_OK
    except ConfigError as e:
        return _fail("config error", e, EXIT_CONFIG)
    except (MissingArtifactError, FileNotFoundError) as e:
        return _fail("missing artifact", e, EXIT_MISSING)
    except NonFiniteError as e:
        return _fail("numeric error", e, EXIT_NUMERIC)
    except GradcheckFailed as e:
        return _fail("gradient check failed", e, EXIT_GRADCHECK)
    except (NodeMismatchError, CheckpointError, ValueError) as e:
        return _fail("data error", e, EXIT_DATA)


def _fail(category: str, err: Exception, code: int) -> int:
    print(f"wsnad: {category}: {err}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
