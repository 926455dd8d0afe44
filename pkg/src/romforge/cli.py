"""Command-line interface: ``romforge <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, load_config
from .exceptions import RomforgeError
from .ffd import save_lattice
from .fom import CycleLog, read_snapshots, write_snapshots
from .io import write_csv, write_vtk
from .mesh import build_channel_mesh
from .pipeline import (RomArtifacts, build_geometry, online_evaluate, pod_stage,
                       prepare_out_dir, reference_run, report_speedup, run_fom,
                       study_mode_convergence,
                       study_snapshot_convergence, train_stage, write_rom_fields)
from .pod import VARIABLES, load_basis, save_basis, write_spectrum_csv

log = logging.getLogger("romforge")

PIPELINE_COMMANDS = ("deform", "simulate", "pod", "train", "evaluate", "study", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration file")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out-dir", default="romforge-out", help="output directory")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    p = _Parser(prog="romforge", description="POD + neural-network reduced-order modelling "
                "of pulsatile flow through a deformed channel.", parents=[common])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("mesh", parents=[common], help="build the straight channel mesh")
    d = sub.add_parser("deform", parents=[common], help="insert the stenosis by FFD")
    d.add_argument("--severity", type=float, help="override ffd.severity")
    sub.add_parser("simulate", parents=[common], help="run the full-order solver")
    sub.add_parser("pod", parents=[common], help="compress stored snapshots")
    sub.add_parser("train", parents=[common], help="fit the coefficient networks")
    e = sub.add_parser("evaluate", parents=[common], help="reduced-order fields at one time")
    e.add_argument("--time", type=float, help="cycle time in seconds (default study.eval_time)")
    s = sub.add_parser("study", parents=[common], help="convergence studies")
    s.add_argument("--kind", choices=("modes", "snapshots", "both"), default="both")
    sub.add_parser("report", parents=[common], help="speed-up of online over full-order")
    return p


def _config(args):
    if args.config is None:
        if args.command in PIPELINE_COMMANDS:
            raise UsageError(f"romforge {args.command}: --config is required")
        cfg = ExperimentConfig()
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def _update_manifest(out, cfg, command, extra=None):
    path = out / "manifest.json"
    doc = json.loads(path.read_text()) if path.is_file() else {}
    doc.setdefault("provenance", {}).update(
        {"config_digest": cfg.digest(), "seed": cfg.seed,
         "updated": datetime.now(timezone.utc).isoformat(timespec="seconds")})
    doc.setdefault("commands", []).append(command)
    doc["files"] = sorted(str(p.relative_to(out)) for p in out.rglob("*")
                          if p.is_file() and p.name != "manifest.json")
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _say(args, msg):
    if not args.quiet:
        print(msg)


def cmd_mesh(args, cfg, out):
    m = cfg.mesh
    mesh = build_channel_mesh(m.length, m.height, m.nx, m.ny)
    write_vtk(out / "fields" / "mesh.vtk", mesh)
    write_csv(out / "reports" / "mesh.csv", ["quantity", "value"],
              [("n_cells", mesh.n_cells), ("n_faces", mesh.n_faces),
               ("n_boundary_faces", mesh.n_faces - mesh.n_internal_faces),
               ("checksum", mesh.checksum)])
    _say(args, f"mesh {m.nx}x{m.ny}: {mesh.n_cells} cells, checksum {mesh.checksum[:12]}")


def cmd_deform(args, cfg, out):
    if args.severity is not None:
        cfg = cfg.with_overrides(ffd={"severity": args.severity})
    geo = build_geometry(cfg)
    save_lattice(out / "reports" / "lattice.json", geo.lattice)
    geo.quality.write_csv(out / "reports" / "mesh_quality.csv")
    write_vtk(out / "fields" / "deformed_mesh.vtk", geo.mesh)
    q = geo.quality
    _say(args, f"severity {cfg.ffd.severity}: min volume {q.min_cell_volume:.3e}, "
               f"max non-orthogonality {q.max_non_orthogonality:.1f} deg")


def cmd_simulate(args, cfg, out):
    geo = build_geometry(cfg)
    timing = CycleLog()
    snaps = run_fom(cfg, geo.mesh, log_=timing)
    write_snapshots(out / "snapshots", snaps)
    write_csv(out / "reports" / "fom_timing.csv", ["cycle", "seconds"],
              enumerate(timing.seconds, 1))
    _say(args, f"{len(snaps)} snapshots written, {sum(timing.seconds):.1f} s")


def _snapshots(out, mesh):
    path = out / "snapshots" / "manifest.csv"
    if not path.is_file():
        raise RomforgeError(f"no snapshots under {out / 'snapshots'}; run 'simulate' first")
    return read_snapshots(out / "snapshots", mesh)


def cmd_pod(args, cfg, out):
    geo = build_geometry(cfg)
    bases, spectra = pod_stage(cfg, _snapshots(out, geo.mesh), geo.mesh)
    for v in VARIABLES:
        save_basis(out / "basis" / f"{v}.bin", bases[v])
        write_spectrum_csv(out / "reports" / f"{v}_spectrum.csv", spectra[v])
    np.asarray(geo.mesh.wall_faces, "<i8").tofile(out / "basis" / "wall_faces.bin")
    _say(args, "ranks " + ", ".join(f"{v}={b.rank}" for v, b in bases.items()))


def cmd_train(args, cfg, out):
    geo = build_geometry(cfg)
    bases = {v: load_basis(out / "basis" / f"{v}.bin") for v in VARIABLES}
    models, hist, _ = train_stage(cfg, _snapshots(out, geo.mesh), bases)
    art = RomArtifacts(bases, models, geo.mesh.checksum, cfg.solver.period,
                       np.asarray(geo.mesh.wall_faces), histories=hist)
    art.save(out)
    _say(args, "trained " + ", ".join(
        f"{v}: final loss {hist[v].train[-1]:.3e}" for v in VARIABLES))


def cmd_evaluate(args, cfg, out):
    geo = build_geometry(cfg)
    art = RomArtifacts.load(out)
    t = cfg.study.eval_time if args.time is None else args.time
    with warnings.catch_warnings():
        # reported once below through the logger
        warnings.simplefilter("ignore", RuntimeWarning)
        res = online_evaluate(art, t, geo.mesh)
    write_rom_fields(out / "fields", res, geo.mesh, prefix=f"rom_t{t:g}")
    for w in res.warnings:
        log.warning(w)
    _say(args, f"t={t:g} s (t/T={t / art.period:.3f}): fields written in "
               f"{1e3 * res.seconds:.3f} ms")


def cmd_study(args, cfg, out):
    geo, ref = reference_run(cfg)
    results = {}
    if args.kind in ("modes", "both"):
        results["modes"] = study_mode_convergence(cfg, ref, geo, out)
    if args.kind in ("snapshots", "both"):
        results["snapshots"] = study_snapshot_convergence(cfg, ref, geo, out)
    for kind, rep in results.items():
        _say(args, f"{kind}: {'PASS' if rep['passed'] else 'FAIL'}")
        for case, c in rep["cases"].items():
            _say(args, f"  {case}: ranks {c['ranks']} mean errors "
                       + ", ".join(f"{v}={e:.3e}" for v, e in c["mean_error"].items()))
    return 0 if all(r["passed"] for r in results.values()) else 2


def cmd_report(args, cfg, out):
    geo = build_geometry(cfg)
    art = RomArtifacts.load(out)
    rep = report_speedup(art, cfg, geo, out)
    _say(args, f"FOM cycle {rep['fom_median_s']:.2f} s, online "
               f"{rep['online_median_ms']:.3f} ms, speed-up {rep['speedup']:.3g}")
    return 0 if rep["passed"] else 2


COMMANDS = {"mesh": cmd_mesh, "deform": cmd_deform, "simulate": cmd_simulate, "pod": cmd_pod,
            "train": cmd_train, "evaluate": cmd_evaluate, "study": cmd_study,
            "report": cmd_report}


def cli_main(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        cfg = _config(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except RomforgeError as exc:
        print(f"romforge: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = prepare_out_dir(Path(args.out_dir))
        status = COMMANDS[args.command](args, cfg, out) or 0
        _update_manifest(out, cfg, args.command)
        return status
    except (RomforgeError, OSError) as exc:
        print(f"romforge {args.command}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
