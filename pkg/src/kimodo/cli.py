"""Command-line entry points.

Every command accepts --config (JSON file), --seed and --out; --json-errors
switches stderr to machine-readable error JSON. Exit codes: 0 success,
2 configuration errors, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import ConfigError


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        return json.load(f)


def _fail(exc: Exception, json_errors: bool) -> int:
    kind = "config-error" if isinstance(exc, ConfigError) else type(exc).__name__
    if json_errors:
        sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")
    else:
        sys.stderr.write(f"error ({kind}): {exc}\n")
    return 2 if isinstance(exc, ConfigError) else 1


def _base_parser(description: str) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=description)
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=None, help="output path or directory")
    parser.add_argument("--json-errors", action="store_true")
    return parser


def _run(parser: argparse.ArgumentParser, body, argv) -> int:
    args = parser.parse_args(argv)
    try:
        body(args)
        return 0
    except (ConfigError, FileNotFoundError) as exc:
        return _fail(ConfigError(str(exc)), args.json_errors)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        return _fail(exc, args.json_errors)


def main_data(argv=None) -> int:
    parser = _base_parser("Generate the procedural motion dataset")
    parser.add_argument("command", choices=["gen"], nargs="?", default="gen")
    parser.add_argument("--n-clips", type=int, default=None)

    def body(args):
        from .synthetic import DataConfig, build_dataset

        config_dict = _load_config(args.config).get("data", _load_config(args.config))
        config = DataConfig.from_dict({**config_dict, "seed": args.seed}) if config_dict else DataConfig(seed=args.seed)
        if args.n_clips is not None:
            config.n_clips = args.n_clips
        out = args.out or "dataset"
        manifest = build_dataset(config, out)
        print(f"wrote {len(manifest.clips)} clips to {out}")

    return _run(parser, body, argv)


def main_train(argv=None) -> int:
    parser = _base_parser("Train the motion denoiser")
    parser.add_argument("--dataset", required=False, help="dataset manifest.json")
    parser.add_argument("--preset", default="toy", help="toy | micro | paper")
    parser.add_argument("--resume", default=None)

    def body(args):
        import torch

        from .denoiser import MotionDenoiser
        from .motion_io import load_dataset
        from .motion_repr import encode, fit_normalization
        from .presets import preset_configs
        from .skeleton import canonical_skeleton
        from .synthetic import DataConfig, DatasetSampler, generate_clips
        from .training import TrainingConfig, run_training

        overrides = _load_config(args.config)
        denoiser_cfg, training_cfg, codec_cfg = preset_configs(args.preset, **overrides)
        training_cfg = TrainingConfig.from_dict({**training_cfg.to_dict(), "seed": args.seed})
        skeleton = canonical_skeleton()
        if args.dataset:
            clips = load_dataset(args.dataset)
        else:
            data_cfg = DataConfig(**{**overrides.get("data", {}), "seed": args.seed})
            clips = generate_clips(data_cfg, skeleton)
        sampler = DatasetSampler(clips, skeleton, codec_config=codec_cfg, seed=args.seed)
        stats = fit_normalization([encode(c.raw, skeleton, codec_cfg) for c in sampler.clips])
        torch.manual_seed(training_cfg.seed)
        model = MotionDenoiser(denoiser_cfg)
        out = args.out or "runs/train"
        path = run_training(
            model, sampler, stats, skeleton, denoiser_cfg, training_cfg, out,
            codec_config=codec_cfg, resume_from=args.resume,
            log_fn=lambda m: print(json.dumps(m)),
        )
        print(f"final checkpoint: {path}")

    return _run(parser, body, argv)


def main_sample(argv=None) -> int:
    parser = _base_parser("Generate a motion from a prompt and constraints")
    parser.add_argument("--checkpoint", default=os.environ.get("KIMODO_CHECKPOINT"))
    parser.add_argument("--prompt", default="")
    parser.add_argument("--duration", type=float, default=4.0)
    parser.add_argument("--constraints", default=None, help="JSON file of constraint items")
    parser.add_argument("--steps", type=int, default=100)
    parser.add_argument("--no-postprocess", action="store_true")

    def body(args):
        from .generation import GenerationRequest, generate
        from .motion_io import save_motion_json
        from .training import load_model_bundle

        if not args.checkpoint:
            raise ConfigError("no checkpoint given (use --checkpoint or KIMODO_CHECKPOINT)")
        bundle = load_model_bundle(args.checkpoint)
        constraints = []
        if args.constraints:
            with open(args.constraints) as f:
                constraints = json.load(f)
        request = GenerationRequest(
            prompts=[{"text": args.prompt, "duration_s": args.duration}],
            constraints=constraints,
            steps=args.steps,
            seed=args.seed,
            foot_lock=not args.no_postprocess,
            exact_constraints=not args.no_postprocess,
        )
        result = generate(request, bundle)
        out = args.out or "motion.json"
        save_motion_json(
            out,
            result.motion,
            bundle.skeleton.skeleton_id,
            extra={"errors": result.errors.to_dict(), "seed": result.seed},
        )
        print(f"wrote {out} ({result.motion.n_frames} frames, {result.timing_s:.2f}s)")
        print(json.dumps(result.errors.to_dict()))

    return _run(parser, body, argv)


def main_eval(argv=None) -> int:
    parser = _base_parser("Run the constrained evaluation suite")
    parser.add_argument("--checkpoint", default=os.environ.get("KIMODO_CHECKPOINT"))
    parser.add_argument("--dataset", required=False, help="dataset manifest.json")
    parser.add_argument("--steps", type=int, default=100)
    parser.add_argument("--cases-per-cell", type=int, default=1)

    def body(args):
        from .evaluation import build_constraint_test_suite, run_suite
        from .motion_io import load_dataset
        from .skeleton import canonical_skeleton
        from .synthetic import DataConfig, generate_clips
        from .training import load_model_bundle

        if not args.checkpoint:
            raise ConfigError("no checkpoint given (use --checkpoint or KIMODO_CHECKPOINT)")
        bundle = load_model_bundle(args.checkpoint)
        skeleton = canonical_skeleton()
        if args.dataset:
            clips = [c for c in load_dataset(args.dataset) if c.split == "test"]
        else:
            overrides = _load_config(args.config)
            data_cfg = DataConfig(**{**overrides.get("data", {}), "seed": args.seed})
            clips = [c for c in generate_clips(data_cfg, skeleton) if c.split == "test"]
        if not clips:
            raise ConfigError("dataset has no test-split clips")
        rng = np.random.default_rng(args.seed)
        cases = build_constraint_test_suite(
            clips, skeleton, rng, codec_config=bundle.codec_config,
            cases_per_cell=args.cases_per_cell,
        )
        report = run_suite(bundle, cases, steps=args.steps, seed=args.seed)
        out = args.out or "report.json"
        with open(out, "w") as f:
            json.dump(report.to_dict(), f, indent=1)
        summary = {k: v for k, v in report.to_dict().items() if k != "per_case"}
        print(json.dumps(summary, indent=1))

    return _run(parser, body, argv)


def main_serve(argv=None) -> int:
    parser = _base_parser("Run the HTTP generation service")
    parser.add_argument("--checkpoint", default=os.environ.get("KIMODO_CHECKPOINT"))
    parser.add_argument("--port", type=int, default=int(os.environ.get("KIMODO_PORT", "8080")))
    parser.add_argument("--host", default="127.0.0.1")

    def body(args):
        import uvicorn

        from .service import create_app
        from .training import load_model_bundle

        bundle = load_model_bundle(args.checkpoint) if args.checkpoint else None
        store = args.out or "kimodo_jobs.json"
        app = create_app(bundle=bundle, store_path=store)
        uvicorn.run(app, host=args.host, port=args.port)

    return _run(parser, body, argv)


def main_ablate(argv=None) -> int:
    parser = _base_parser("Train and evaluate the ablation variants")
    parser.add_argument("--preset", default="micro")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0])
    parser.add_argument("--variants", nargs="+", default=None)
    parser.add_argument("--scaling", action="store_true")

    def body(args):
        from .ablation import ABLATION_VARIANTS, run_ablation_harness
        from .presets import preset_configs
        from .skeleton import canonical_skeleton
        from .synthetic import DataConfig, generate_clips

        overrides = _load_config(args.config)
        denoiser_cfg, training_cfg, codec_cfg = preset_configs(args.preset, **overrides)
        skeleton = canonical_skeleton()
        data_cfg = DataConfig(**{**overrides.get("data", {}), "seed": args.seed})
        clips = generate_clips(data_cfg, skeleton)
        train = [c for c in clips if c.split == "train"]
        test = [c for c in clips if c.split == "test"]
        out = args.out or "runs/ablation"
        report = run_ablation_harness(
            train, test, skeleton, denoiser_cfg, training_cfg, codec_cfg, out,
            seeds=tuple(args.seeds),
            variants=tuple(args.variants) if args.variants else ABLATION_VARIANTS,
            include_scaling=args.scaling,
        )
        print(json.dumps({k: len(v) for k, v in report["variants"].items()}))

    return _run(parser, body, argv)
