"""Batch front end.

    qtraj <mode> --config FILE [--seed N] [--paths M] [--out DIR]
                 [--emit-paths]

Modes: discrete, lindblad, sde_diffusive, sde_jump, sse_jump,
sse_diffusive, verify_generator, compare.  The experiment lives in a
single JSON document (flags override the matching keys); outputs are a
deterministic ``summary.json`` plus, per mode, residual tables and
flag-gated per-path CSVs.  Exit codes: 0 success, 2 configuration
error, 3 numerical divergence.

Config keys (see README for the full schema):

    model        h0, c (row-major [re, im] pairs), gamma0, gamma1,
                 beta or p, n
    setup        kind in {none, before, after, before_after};
                 observable "diagonal" | "symmetric" | explicit
    initial_state  {"bloch": [x, y, z]} or {"psi": [[re,im],[re,im]]}
    paths, T, dt, seed, checkpoints, scheme, convention, out
    verify       kind, n_list, functions, grid, display_variant,
                 setup (defaults to the kind-matched observable)
    compare      sde_mode, dt
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import continuous, discrete, unraveling, verify
from .algebra import DivergenceError, bloch_vector, rho_from_bloch
from .ensembles import path_generator
from .model import (
    build_unitary_blocks,
    diagonal_observable,
    params_from_json,
    symmetric_observable,
)

MODES = (
    "discrete",
    "lindblad",
    "sde_diffusive",
    "sde_jump",
    "sse_jump",
    "sse_diffusive",
    "verify_generator",
    "compare",
)


class ConfigError(ValueError):
    pass


def _parse_observable(spec):
    if spec == "diagonal":
        return diagonal_observable()
    if spec == "symmetric":
        return symmetric_observable()
    if isinstance(spec, dict):
        from .model import Observable, _pairs_to_matrix

        return Observable(
            eigenvalue0=float(spec.get("eigenvalue0", 0.0)),
            eigenvalue1=float(spec.get("eigenvalue1", 1.0)),
            q0=_pairs_to_matrix(spec["q0"]),
            q1=_pairs_to_matrix(spec["q1"]),
        )
    raise ConfigError(f"bad observable spec {spec!r}")


def _parse_setup(doc):
    kind = doc.get("kind", "before_after")
    if kind == "none":
        return discrete.no_measurement()
    if kind == "before":
        return discrete.before_only()
    obs = _parse_observable(doc.get("observable", "diagonal"))
    if kind == "after":
        return discrete.after_only(obs)
    if kind == "before_after":
        return discrete.before_after(obs)
    raise ConfigError(f"bad setup kind {kind!r}")


def _parse_initial(doc, pure=False):
    doc = doc or {"bloch": [0.0, 0.0, -1.0]}
    if "psi" in doc:
        psi = np.array([complex(re, im) for re, im in doc["psi"]])
        psi = psi / np.linalg.norm(psi)
        return psi if pure else unraveling.projector(psi)
    if "rho" in doc:
        from .model import _pairs_to_matrix

        if pure:
            raise ConfigError("pure-state modes need 'psi' or 'bloch'")
        return _pairs_to_matrix(doc["rho"])
    b = np.asarray(doc["bloch"], dtype=float)
    if pure:
        if abs(b @ b - 1.0) > 1e-9:
            raise ConfigError("pure-state modes need a unit Bloch vector")
        theta = np.arccos(np.clip(b[2], -1.0, 1.0))
        phi = np.arctan2(b[1], b[0])
        return np.array(
            [np.cos(theta / 2.0), np.exp(1j * phi) * np.sin(theta / 2.0)]
        )
    return rho_from_bloch(b)


def _resolve(config, args):
    cfg = dict(config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.paths is not None:
        cfg["paths"] = args.paths
    if args.out is not None:
        cfg["out"] = args.out
    if args.emit_paths:
        cfg["emit_paths"] = True
    cfg.setdefault("seed", 0)
    cfg.setdefault("paths", 1000)
    cfg.setdefault("T", 1.0)
    cfg.setdefault("checkpoints", 10)
    cfg.setdefault("out", "qtraj_out")
    cfg.setdefault("emit_paths", False)
    return cfg


def _result_payload(res):
    return res.summary_dict()


def _write_summary(outdir, payload):
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "summary.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _sde_config(cfg, mode):
    dt = cfg.get("dt")
    if dt is None:
        raise ConfigError(f"mode {mode} needs 'dt'")
    return continuous.SdeConfig(
        dt=float(dt),
        T=float(cfg["T"]),
        seed=int(cfg["seed"]),
        renormalize=bool(cfg.get("renormalize", True)),
        scheme=cfg.get("scheme", "euler_maruyama"),
    )


def _emit_discrete_paths(outdir, cfg, params, setup, blocks, steps):
    for k in range(int(cfg["paths"])):
        rec = discrete.simulate_path(
            _parse_initial(cfg.get("initial_state")),
            params.p,
            setup,
            blocks,
            steps,
            path_generator(cfg["seed"], k),
            n=params.n,
        )
        rec.to_csv(os.path.join(outdir, f"path_{k:05d}.csv"))


def _emit_sde_paths(outdir, cfg, params, sde_cfg, mode):
    from .algebra import project_to_state
    from .discrete import (
        EVENT_ABSORPTION,
        EVENT_CONTINUOUS,
        EVENT_EMISSION,
        TrajectoryRecord,
    )

    rho0 = _parse_initial(cfg.get("initial_state"))
    steps = sde_cfg.steps
    prop = continuous.jump_propagator(params, sde_cfg.dt)
    sqrt_dt = np.sqrt(sde_cfg.dt)
    for k in range(int(cfg["paths"])):
        states = np.empty((steps + 1, 2, 2), dtype=complex)
        states[0] = rho0
        rho = rho0.copy()
        n1 = np.zeros(steps + 1, dtype=np.int64)
        n2 = np.zeros(steps + 1, dtype=np.int64)
        events = []
        if mode == "sde_jump":
            parent = np.random.SeedSequence(cfg["seed"]).spawn(k + 1)[k]
            drivers = continuous.JumpDrivers(parent)
            for s in range(steps):
                rho, d1, d2 = continuous.jump_two_noise_step(
                    rho, params, drivers, sde_cfg.dt, prop
                )
                n1[s + 1] = n1[s] + d1
                n2[s + 1] = n2[s] + d2
                events.append(
                    EVENT_EMISSION if d1 else EVENT_ABSORPTION if d2 else EVENT_CONTINUOUS
                )
                states[s + 1] = rho
        else:
            gen = path_generator(cfg["seed"], k)
            for s in range(steps):
                dw = gen.standard_normal(2) * sqrt_dt
                if sde_cfg.scheme == "exponential":
                    rho = continuous.exponential_two_noise_step(
                        rho, params, dw[0], dw[1], sde_cfg.dt
                    )
                else:
                    rho = rho + continuous.diffusive_two_noise_step(
                        rho, params, dw[0], dw[1], sde_cfg.dt,
                        cfg.get("convention", "unraveling"),
                    )
                    if sde_cfg.renormalize:
                        rho, _ = project_to_state(rho, step=s, path=k)
                n1[s + 1] = n2[s + 1] = 0
                events.append(EVENT_CONTINUOUS)
                states[s + 1] = rho
        zeros = np.zeros(steps)
        rec = TrajectoryRecord(
            times=np.arange(steps + 1) * sde_cfg.dt,
            states=states,
            outcomes=[(None, None)] * steps,
            X=zeros,
            Y0=zeros,
            Y1=zeros,
            N1=n1,
            N2=n2,
            events=events,
            dt=sde_cfg.dt,
        )
        rec.to_csv(os.path.join(outdir, f"path_{k:05d}.csv"))


def _emit_sse_paths(outdir, cfg, params, sde_cfg, mode):
    import csv as _csv

    psi0 = _parse_initial(cfg.get("initial_state"), pure=True)
    prop = continuous.jump_propagator(params, sde_cfg.dt)
    for k in range(int(cfg["paths"])):
        parent = np.random.SeedSequence(cfg["seed"]).spawn(k + 1)[k]
        psi = psi0.copy()
        n1 = n2 = 0
        rows = [(0, 0.0, psi, 0, 0)]
        if mode == "sse_jump":
            drivers = continuous.JumpDrivers(parent)
            for s in range(sde_cfg.steps):
                psi, d1, d2 = unraveling.sse_jump_step(
                    psi, params, drivers, sde_cfg.dt, prop
                )
                n1 += d1
                n2 += d2
                rows.append((s + 1, (s + 1) * sde_cfg.dt, psi, n1, n2))
        else:
            gen = path_generator(cfg["seed"], k)
            sqrt_dt = np.sqrt(sde_cfg.dt)
            for s in range(sde_cfg.steps):
                dw = gen.standard_normal(2) * sqrt_dt
                psi = unraveling.sse_diffusive_step(
                    psi, params, dw[0], dw[1], sde_cfg.dt, sde_cfg.scheme
                )
                rows.append((s + 1, (s + 1) * sde_cfg.dt, psi, 0, 0))
        with open(os.path.join(outdir, f"path_{k:05d}.csv"), "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(
                ["step", "t", "psi0_re", "psi0_im", "psi1_re", "psi1_im", "N1", "N2"]
            )
            for s, t, v, a, b in rows:
                w.writerow(
                    [
                        s,
                        repr(float(t)),
                        repr(float(v[0].real)),
                        repr(float(v[0].imag)),
                        repr(float(v[1].real)),
                        repr(float(v[1].imag)),
                        a,
                        b,
                    ]
                )


def _run_mode(mode, cfg):
    params = params_from_json(cfg["model"])
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    payload = {"mode": mode, "config": cfg}

    if mode == "lindblad":
        rho0 = _parse_initial(cfg.get("initial_state"))
        sde_cfg = continuous.SdeConfig(
            dt=float(cfg.get("dt", 1e-3)),
            T=float(cfg["T"]),
            seed=int(cfg["seed"]),
            scheme="rk4_ode",
        )
        times, states = continuous.integrate_lindblad(rho0, params, sde_cfg)
        stride = max(1, len(times) // int(cfg["checkpoints"]))
        sel = list(range(stride, len(times), stride))
        if sel[-1] != len(times) - 1:
            sel.append(len(times) - 1)
        payload["times"] = [float(times[i]) for i in sel]
        payload["mean_bloch"] = [
            [float(v) for v in bloch_vector(states[i])] for i in sel
        ]
        payload["final_state"] = [
            [float(z.real), float(z.imag)] for z in states[-1].ravel()
        ]
        return payload

    if mode == "discrete":
        rho0 = _parse_initial(cfg.get("initial_state"))
        setup = _parse_setup(cfg.get("setup", {}))
        blocks = build_unitary_blocks(params)
        steps = int(round(float(cfg["T"]) * params.n))
        res = discrete.chain_ensemble(
            rho0,
            params.p,
            setup,
            blocks,
            steps,
            int(cfg["paths"]),
            int(cfg["seed"]),
            checkpoints=int(cfg["checkpoints"]),
            n=params.n,
        )
        payload.update(_result_payload(res))
        if cfg["emit_paths"]:
            _emit_discrete_paths(outdir, cfg, params, setup, blocks, steps)
        return payload

    if mode in ("sde_diffusive", "sde_jump"):
        rho0 = _parse_initial(cfg.get("initial_state"))
        sde_cfg = _sde_config(cfg, mode)
        if mode == "sde_diffusive":
            res = continuous.diffusive_ensemble(
                rho0,
                params,
                sde_cfg,
                int(cfg["paths"]),
                checkpoints=int(cfg["checkpoints"]),
                convention=cfg.get("convention", "unraveling"),
                family=cfg.get("family", "two_noise"),
            )
        else:
            res = continuous.jump_ensemble(
                rho0,
                params,
                sde_cfg,
                int(cfg["paths"]),
                checkpoints=int(cfg["checkpoints"]),
            )
            payload["compensators"] = {
                "intensity1_mean": float(res.intensity1_mean),
                "intensity2_mean": float(res.intensity2_mean),
            }
        payload.update(_result_payload(res))
        if cfg["emit_paths"]:
            _emit_sde_paths(outdir, cfg, params, sde_cfg, mode)
        return payload

    if mode in ("sse_jump", "sse_diffusive"):
        psi0 = _parse_initial(cfg.get("initial_state"), pure=True)
        sde_cfg = _sde_config(cfg, mode)
        if mode == "sse_jump":
            res = unraveling.sse_jump_ensemble(
                psi0, params, sde_cfg, int(cfg["paths"]),
                checkpoints=int(cfg["checkpoints"]),
            )
        else:
            res = unraveling.sse_diffusive_ensemble(
                psi0, params, sde_cfg, int(cfg["paths"]),
                checkpoints=int(cfg["checkpoints"]),
            )
        payload.update(_result_payload(res))
        if cfg["emit_paths"]:
            _emit_sse_paths(outdir, cfg, params, sde_cfg, mode)
        return payload

    if mode == "verify_generator":
        vcfg = cfg.get("verify", {})
        kind = vcfg.get("kind", "jump")
        # the scanned setup follows the generator kind (diagonal B for
        # jump, symmetric B for diffusive) unless verify.setup overrides
        # it; the top-level setup key belongs to the sampling modes
        setup = _parse_setup(
            vcfg.get(
                "setup",
                {
                    "kind": "before_after",
                    "observable": "diagonal" if kind == "jump" else "symmetric",
                },
            )
        )
        n_values = [int(v) for v in vcfg.get("n_list", [100, 400, 1600, 6400])]
        functions = [
            verify.TestFunction.monomial(name)
            for name in vcfg.get("functions", ["x", "z", "zz", "xz"])
        ]
        grid = (
            verify.bloch_grid_25()
            if vcfg.get("grid", "fixed25") == "fixed25"
            else verify.bloch_grid()
        )
        scan = verify.generator_residual_scan(
            functions,
            grid,
            setup,
            params,
            n_values,
            kind,
            display_variant=bool(vcfg.get("display_variant", False)),
        )
        scan.to_csv(os.path.join(outdir, "generator_residuals.csv"))
        payload["residuals"] = {
            "n": scan.n_values,
            "sup_residual": [float(r) for r in scan.residuals],
            "slope": float(scan.slope),
        }
        return payload

    if mode == "compare":
        ccfg = cfg.get("compare", {})
        sde_mode = ccfg.get("sde_mode", "sde_jump")
        rho0 = _parse_initial(cfg.get("initial_state"))
        setup = _parse_setup(
            cfg.get(
                "setup",
                {
                    "kind": "before_after",
                    "observable": "diagonal" if sde_mode == "sde_jump" else "symmetric",
                },
            )
        )
        blocks = build_unitary_blocks(params)
        steps = int(round(float(cfg["T"]) * params.n))
        chain = discrete.chain_ensemble(
            rho0,
            params.p,
            setup,
            blocks,
            steps,
            int(cfg["paths"]),
            int(cfg["seed"]),
            checkpoints=int(cfg["checkpoints"]),
            n=params.n,
        )
        sde_cfg = continuous.SdeConfig(
            dt=float(ccfg.get("dt", cfg.get("dt", 1e-3))),
            T=float(cfg["T"]),
            seed=int(cfg["seed"]) + 1,
        )
        if sde_mode == "sde_jump":
            sde = continuous.jump_ensemble(
                rho0, params, sde_cfg, int(cfg["paths"]),
                checkpoints=int(cfg["checkpoints"]),
            )
        else:
            sde = continuous.diffusive_ensemble(
                rho0, params, sde_cfg, int(cfg["paths"]),
                checkpoints=int(cfg["checkpoints"]),
            )
        gap = np.abs(chain.mean_bloch - sde.mean_bloch)
        pooled = np.sqrt(chain.stderr_bloch**2 + sde.stderr_bloch**2)
        payload["discrete"] = _result_payload(chain)
        payload["sde"] = _result_payload(sde)
        payload["gap"] = {
            "sup": float(gap.max()),
            "sup_over_pooled_stderr": float((gap / np.maximum(pooled, 1e-300)).max()),
        }
        return payload

    raise ConfigError(f"unknown mode {mode!r}")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="qtraj", description="thermal-chain quantum trajectory toolkit"
    )
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--paths", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--emit-paths", action="store_true")
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            config = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        cfg = _resolve(config, args)
        payload = _run_mode(args.mode, cfg)
    except DivergenceError as exc:
        print(
            f"numerical divergence: {exc} (step {exc.step}, path {exc.path})",
            file=sys.stderr,
        )
        return 3
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    path = _write_summary(cfg["out"], payload)
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
