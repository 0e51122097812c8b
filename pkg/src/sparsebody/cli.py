"""Command-line interface for the full pipeline.

Exit codes: 0 success, 1 usage error, 2 validation or data error,
3 numerical failure.  Configs are TOML files; JSON with the same keys is
accepted as an alternative (files ending in .json are parsed as JSON).
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import containers, fitting, mesh as meshmod, synthetic, training
from .errors import NumericalError, SparseBodyError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def load_config_file(path) -> dict:
    if str(path).endswith(".json"):
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    with open(path, "rb") as handle:
        return tomllib.load(handle)


def _load_json_vector(path, name: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if isinstance(payload, dict):
        payload = payload.get(name)
    vector = np.asarray(payload, dtype=np.float64)
    if vector.ndim != 1:
        raise SparseBodyError(f"{path}: expected a flat JSON array of numbers")
    return vector


def _cmd_synth_model(args) -> int:
    cfg_dict = load_config_file(args.config) if args.config else {}
    cfg = synthetic.SynthConfig.from_dict(cfg_dict)
    model, _ = synthetic.make_body(cfg)
    containers.save_model(model, args.out)
    print(f"wrote model with {model.num_vertices} vertices, {model.num_joints} joints to {args.out}")
    return EXIT_OK


def _cmd_synth_data(args) -> int:
    model = containers.load_model(args.model)
    registrations = synthetic.sample_registrations(
        model,
        count=args.count,
        pose_range=args.pose_range,
        shape_range=args.shape_range,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    containers.save_registrations(registrations, args.out)
    print(f"wrote {len(registrations)} registrations to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    model = containers.load_model(args.model)
    dataset = containers.load_registrations(args.data)
    cfg = training.TrainConfig.from_dict(load_config_file(args.config) if args.config else {})
    trained, metrics = training.train(model, dataset, cfg)
    containers.save_model(trained, args.out)
    if args.metrics:
        with open(args.metrics, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(training.EpochMetrics.CSV_HEADER)
            for row in metrics:
                writer.writerow(row.csv_row())
    if metrics:
        last = metrics[-1]
        print(
            f"trained {len(metrics)} epochs: loss {last.total_loss:.6g}, "
            f"v2v {last.v2v:.6g}, nonzero params {last.nonzero_params}"
        )
    print(f"wrote trained model to {args.out}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    model = containers.load_model(args.model)
    target_mesh = meshmod.load_obj(args.target)
    if target_mesh.num_vertices != model.num_vertices:
        raise SparseBodyError(
            f"target has {target_mesh.num_vertices} vertices, model expects {model.num_vertices}"
        )
    initial_pose = _load_json_vector(args.init_pose, "pose") if args.init_pose else None
    initial_shape = _load_json_vector(args.init_shape, "shape") if args.init_shape else None
    options = fitting.FitOptions(
        max_iterations=args.max_iterations,
        shape_coeffs=args.shape_coeffs,
    )
    result = fitting.fit(model, target_mesh.vertices.ravel(), initial_pose, initial_shape, options)
    with open(args.out, "w", encoding="utf-8") as handle:
        handle.write(result.to_json())
    status = "converged" if result.converged else "did not converge"
    print(f"fit {status}: v2v {result.v2v_error:.6g} after {result.iterations} iterations")
    return EXIT_OK


def _cmd_pose(args) -> int:
    model = containers.load_model(args.model)
    theta = _load_json_vector(args.pose, "pose") if args.pose else model.rest_pose()
    beta = _load_json_vector(args.beta, "shape") if args.beta else np.zeros(0)
    posed = model.forward(beta, theta)
    meshmod.save_obj(posed, args.out)
    print(f"wrote posed mesh to {args.out}")
    return EXIT_OK


def _cmd_analyze_sparsity(args) -> int:
    model = containers.load_model(args.model)
    count = model.count_nonzero_params()
    ratio = count.nonzero / count.dense if count.dense else 0.0
    print(f"nonzero parameters: {count.nonzero}")
    print(f"dense parameters:   {count.dense}")
    print(f"ratio:              {ratio:.4f}")
    for j in range(1, model.num_joints):
        support = model.support_set(j).size
        print(f"joint {j} ({model.tree.names[j]}): support {support} / {model.num_vertices}")
    return EXIT_OK


def _cmd_explained_variance(args) -> int:
    basis_data = containers.load_shape_dataset(args.basis)
    data = containers.load_shape_dataset(args.data)
    max_rank = min(basis_data.shape[0] - 1, basis_data.shape[1])
    k_max = min(args.max_k, max_rank) if args.max_k else max_rank
    basis = fitting.pca_fit(basis_data, k_max)
    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["k", "percent"])
        for k in range(k_max + 1):
            writer.writerow([k, fitting.explained_variance(basis, data, k)])
    print(f"wrote explained-variance curve (k = 0..{k_max}) to {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    model = containers.load_model(args.model)
    checks = model.check_invariants()
    failed = 0
    for name, ok, detail in checks:
        marker = "PASS" if ok else "FAIL"
        suffix = f" ({detail})" if detail and not ok else ""
        print(f"{marker} {name}{suffix}")
        failed += 0 if ok else 1
    if failed:
        print(f"{failed} of {len(checks)} invariants failed")
        return EXIT_DATA
    print(f"all {len(checks)} invariants passed")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="sparsebody", description=__doc__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("synth-model", help="generate a ground-truth synthetic body model")
    p.add_argument("--config", help="SynthConfig file (TOML, or JSON with .json suffix)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_model)

    p = sub.add_parser("synth-data", help="sample registrations from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pose-range", type=float, default=0.3)
    p.add_argument("--shape-range", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth_data)

    p = sub.add_parser("train", help="train correctives, activations and skinning weights")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="TrainConfig file (TOML, or JSON with .json suffix)")
    p.add_argument("--out", required=True)
    p.add_argument("--metrics", help="per-epoch metrics CSV")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("fit", help="fit pose and shape to an OBJ target")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--shape-coeffs", type=int, default=None)
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--init-pose", help="JSON array of initial pose values")
    p.add_argument("--init-shape", help="JSON array of initial shape coefficients")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("pose", help="pose a model and export the mesh as OBJ")
    p.add_argument("--model", required=True)
    p.add_argument("--pose", help="JSON array of 3K axis-angle values (default: rest pose)")
    p.add_argument("--beta", help="JSON array of shape coefficients (default: zeros)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_pose)

    p = sub.add_parser("analyze-sparsity", help="report nonzero/dense parameter counts")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_analyze_sparsity)

    p = sub.add_parser("explained-variance", help="cross-population explained-variance curve")
    p.add_argument("--basis", required=True, help="shape dataset the PCA basis is fit on")
    p.add_argument("--data", required=True, help="shape dataset the curve is evaluated on")
    p.add_argument("--max-k", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_explained_variance)

    p = sub.add_parser("validate", help="run all model invariants and report pass/fail")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_USAGE
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SparseBodyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
