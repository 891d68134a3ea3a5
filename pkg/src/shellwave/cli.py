"""Config-driven verification runner.

A scenario file is sectioned ``key = value`` text; every target named in it
maps to exactly one verifier and the bundle written to the output directory
(summary.txt, verdicts.json, series/*.csv) is byte-identical for identical
(config, seed).  Exit status is 0 iff every executed verdict passed.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .energies import (
    shell_decay_check,
    singular_blowup_check,
    verify_theorem_ratio,
)
from .gronwall import verify_gronwall_lemma
from .lattice import (
    Field,
    build_lattice,
    constant_background,
    desitter_background,
    make_time_grid,
)
from .lp import check_lp_properties, make_partition, verify_refined_poincare
from .modelsys import (
    Forcing,
    SystemConfig,
    epsilon_construction_check,
    extract_asymptotic_data,
    integrate,
    make_asymptotic_data,
    random_coupling,
    renormalize_h,
    seed_state,
    split_singular_component,
)

__all__ = ["Scenario", "parse_config", "run_scenario", "main", "TARGETS"]

TARGETS = (
    "lp-props",
    "toy-shells",
    "forward-first",
    "backward-second",
    "roundtrip",
    "singular-split",
    "gronwall",
    "poincare",
)

DEFAULT_CONFIG = """\
[scenario]
name = default
targets = verify-all
seed = 0

[lattice]
n = 2
l_max = 32

[background]
kind = desitter

[partition]
k_min = -8
k_max = 12
smoothness = 3

[system]
n_regular = 2
family = first
top_order = 2
tau_seed = 1e-4

[verify]
n_draws = 50
resolutions = 32, 64, 128
"""

_SECTION_KEYS = {
    "scenario": {"name", "targets", "seed", "out"},
    "lattice": {"n", "l_max"},
    "background": {"kind", "value"},
    "partition": {"k_min", "k_max", "smoothness", "shift"},
    "system": {"n_regular", "family", "top_order", "tau_seed", "couple"},
    "verify": {"n_draws", "resolutions", "n_fields", "gronwall_count"},
}


@dataclass(frozen=True)
class Scenario:
    """Validated run description; field order never affects the hash."""

    name: str = "default"
    targets: tuple[str, ...] = ("verify-all",)
    seed: int = 0
    out_dir: str = "reports"
    n_sphere: int = 2
    l_max: int = 32
    background_kind: str = "desitter"
    background_value: float = 2.0
    k_min: int = -8
    k_max: int = 12
    smoothness: int = 3
    shift: float = 0.0
    n_regular: int = 2
    family: str = "first"
    top_order: int = 2
    tau_seed: float = 1e-4
    couplings: tuple[tuple[int, int, float, int], ...] = ()
    n_draws: int = 50
    resolutions: tuple[int, ...] = (32, 64, 128)
    n_fields: int = 500
    gronwall_count: int = 200
    grid_refine: int = 1

    def config_hash(self):
        # the output location does not affect what gets computed
        payload = json.dumps(
            {k: v for k, v in sorted(self.__dict__.items()) if k != "out_dir"},
            sort_keys=True,
            default=list,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def background(self):
        if self.background_kind == "desitter":
            return desitter_background()
        return constant_background(self.background_value)

    def partition(self):
        return make_partition(self.k_min, self.k_max, self.smoothness, self.shift)

    def expanded_targets(self):
        out = []
        for t in self.targets:
            if t == "verify-all":
                out.extend(TARGETS)
            else:
                out.append(t)
        seen = []
        for t in out:
            if t not in seen:
                seen.append(t)
        return tuple(seen)


class ConfigError(ValueError):
    pass


def _parse_scalar(raw, line_no, key):
    raw = raw.strip()
    try:
        if raw.lower() in ("true", "false"):
            return raw.lower() == "true"
        if any(ch in raw for ch in ".eE") and not raw.lstrip("+-").isdigit():
            return float(raw)
        return int(raw)
    except ValueError:
        return raw


def parse_config(text):
    """Parse sectioned key = value text into a Scenario.

    Unknown sections or keys, duplicate sections, repeated scalar keys and
    family/coupling contradictions are all rejected with the line number.
    """
    section = None
    seen_sections = set()
    values: dict[str, dict] = {}
    couples: list[tuple[int, tuple[int, int, float, int]]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTION_KEYS:
                raise ConfigError(f"line {line_no}: unknown section [{section}]")
            if section in seen_sections:
                raise ConfigError(f"line {line_no}: duplicate section [{section}]")
            seen_sections.add(section)
            values.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {line!r}")
        if section is None:
            raise ConfigError(f"line {line_no}: key outside any section")
        key, _, raw_val = line.partition("=")
        key = key.strip()
        if key not in _SECTION_KEYS[section]:
            raise ConfigError(f"line {line_no}: unknown key {key!r} in section [{section}]")
        if key == "couple":
            parts = raw_val.split()
            if len(parts) != 4:
                raise ConfigError(
                    f"line {line_no}: couple needs 'row col scale psi', got {raw_val.strip()!r}"
                )
            try:
                entry = (int(parts[0]), int(parts[1]), float(parts[2]), int(parts[3]))
            except ValueError as exc:
                raise ConfigError(f"line {line_no}: bad couple entry: {exc}") from None
            couples.append((line_no, entry))
            continue
        if key in values[section]:
            raise ConfigError(f"line {line_no}: repeated key {key!r} in [{section}]")
        values[section][key] = (_parse_scalar(raw_val, line_no, key), line_no)

    def get(section, key, default):
        return values.get(section, {}).get(key, (default, None))[0]

    targets_raw = str(get("scenario", "targets", "verify-all"))
    targets = tuple(t.strip() for t in targets_raw.split(",") if t.strip())
    for t in targets:
        if t != "verify-all" and t not in TARGETS:
            raise ConfigError(f"unknown target {t!r}; valid: {', '.join(TARGETS + ('verify-all',))}")

    family = str(get("system", "family", "first"))
    if family not in ("first", "second"):
        raise ConfigError(f"family must be 'first' or 'second', got {family!r}")
    for line_no, (i, j, scale, psi) in couples:
        if family == "second" and i >= 1 and j == 0 and scale != 0.0:
            raise ConfigError(
                f"line {line_no}: the second system family forbids coupling of regular "
                "rows to the singular column 0"
            )
        if not 0 <= psi <= 2:
            raise ConfigError(f"line {line_no}: psi selector must be 0, 1 or 2")

    res_raw = get("verify", "resolutions", "32, 64, 128")
    if isinstance(res_raw, (int, float)):
        resolutions = (int(res_raw),)
    else:
        resolutions = tuple(int(x) for x in str(res_raw).split(",") if x.strip())

    return Scenario(
        name=str(get("scenario", "name", "default")),
        targets=targets,
        seed=int(get("scenario", "seed", 0)),
        out_dir=str(get("scenario", "out", "reports")),
        n_sphere=int(get("lattice", "n", 2)),
        l_max=int(get("lattice", "l_max", 32)),
        background_kind=str(get("background", "kind", "desitter")),
        background_value=float(get("background", "value", 2.0)),
        k_min=int(get("partition", "k_min", -8)),
        k_max=int(get("partition", "k_max", 12)),
        smoothness=int(get("partition", "smoothness", 3)),
        shift=float(get("partition", "shift", 0.0)),
        n_regular=int(get("system", "n_regular", 2)),
        family=family,
        top_order=int(get("system", "top_order", 2)),
        tau_seed=float(get("system", "tau_seed", 1e-4)),
        couplings=tuple(entry for _, entry in couples),
        n_draws=int(get("verify", "n_draws", 50)),
        resolutions=resolutions,
        n_fields=int(get("verify", "n_fields", 500)),
        gronwall_count=int(get("verify", "gronwall_count", 200)),
    )


# ------------------------------------------------------------- the targets


def _bounded_field(lattice, rng, decay=3.0):
    """Coefficients with magnitude in [0.5, 1.5] so per-mode ratios make sense."""
    mag = rng.uniform(0.5, 1.5, lattice.n_slots)
    sign = rng.choice([-1.0, 1.0], lattice.n_slots)
    damp = (1.0 + lattice.lam0_slot) ** (-0.5 * decay)
    return Field(lattice=lattice, coeffs=mag * sign * damp)


def _target_lp_props(scn):
    bg = scn.background()
    part = scn.partition()
    lattice = build_lattice(scn.n_sphere, scn.l_max)
    report = check_lp_properties(part, lattice, bg, tau=0.5, n_fields=32, seed=scn.seed)
    verdict = {
        "passed": report.all_passed,
        "checks": {
            c.name: {"constant": c.constant, "threshold": c.threshold, "passed": c.passed}
            for c in report.checks
        },
        "meta": report.meta,
    }
    series = {"lp_props": [("check", "constant", "threshold", "passed")] + list(report.csv_rows())}
    return verdict, series


def _target_toy_shells(scn):
    rows = [("branch", "degree", "amplitude")]
    branch_info = {}
    passed = True
    worst_dev = 0.0
    for branch in ("J", "Y"):
        rep = shell_decay_check(branch=branch)
        branch_info[branch] = {
            "slope": rep.slope,
            "target": rep.slope_target,
            "tolerance": rep.tolerance,
            "max_oracle_deviation": rep.max_oracle_deviation,
            "passed": rep.passed,
        }
        worst_dev = max(worst_dev, rep.max_oracle_deviation)
        passed = passed and rep.passed
        for l, a in zip(rep.degrees, rep.amplitudes):
            rows.append((branch, l, a))
    verdict = {"passed": passed, "branches": branch_info, "max_oracle_deviation": worst_dev}
    return verdict, {"toy_shells": rows}


def _theorem_target(scn, system):
    bg = scn.background()
    part = scn.partition()
    reports = {}
    rows = [("variant", "l_max", "max_ratio", "median_ratio")]
    passed = True
    for label, scale in (("decoupled", 0.0), ("coupled", 0.1)):
        rep = verify_theorem_ratio(
            system, part, bg, resolutions=scn.resolutions, n_draws=scn.n_draws,
            n_regular=scn.n_regular, top_order=scn.top_order,
            coupling_scale=scale, seed=scn.seed, n_sphere=scn.n_sphere,
        )
        reports[label] = {
            "resolutions": list(rep.resolutions),
            "max_ratios": list(rep.max_ratios),
            "median_ratios": list(rep.median_ratios),
            "doubling_factors": list(rep.doubling_factors),
            "passed": rep.passed,
        }
        passed = passed and rep.passed
        for r, mx, md in zip(rep.resolutions, rep.max_ratios, rep.median_ratios):
            rows.append((label, r, mx, md))
    verdict = {"passed": passed, "n_draws": scn.n_draws, "variants": reports}
    return verdict, {f"theorem_{system}": rows}


def _target_roundtrip(scn):
    bg = scn.background()
    part = scn.partition()
    lattice = build_lattice(scn.n_sphere, min(scn.l_max, 16))
    rng = np.random.default_rng(scn.seed)
    runs = {}
    passed = True
    for family in ("first", "second"):
        for label, scale, tol in (("decoupled", 0.0, 1e-6), ("coupled", 0.1, 1e-4)):
            cs, cp = (None, None)
            if scale:
                cs, cp = random_coupling(2, family, rng, scale)
            config = SystemConfig(
                n_regular=2, system=family, top_order=scn.top_order,
                coupling_scale=cs, coupling_psi=cp, tau_seed=scn.tau_seed,
                rtol=1e-11, atol=1e-13,
            )
            data = make_asymptotic_data(
                lattice, part, bg,
                O=_bounded_field(lattice, rng),
                h=_bounded_field(lattice, rng),
                phis=[_bounded_field(lattice, rng) for _ in range(2)],
            )
            state0 = seed_state(config, lattice, bg, data)
            fwd = integrate(config, lattice, bg, state0, 1.0)
            back = integrate(config, lattice, bg, fwd.state_at(-1), config.tau_seed)
            rec, diag = extract_asymptotic_data(config, lattice, bg, back.state_at(-1), part)

            def rel(a, b):
                return float(np.max(np.abs(a.coeffs - b.coeffs) / np.abs(b.coeffs)))

            err = max(
                rel(rec.O_field, data.O_field),
                rel(rec.h_field, data.h_field),
                max(rel(r, d) for r, d in zip(rec.phi0_fields, data.phi0_fields)),
            )
            frak_again = renormalize_h(rec.h_field, rec.O_field, part, bg)
            frak_defect = float(np.max(np.abs(frak_again.coeffs - rec.frak_h.coeffs)))
            ok = err <= tol and frak_defect <= 1e-10
            passed = passed and ok
            runs[f"{family}_{label}"] = {
                "max_mode_rel_error": err,
                "tolerance": tol,
                "frak_h_consistency": frak_defect,
                "contamination": diag["singular_contamination"],
                "passed": ok,
            }
    verdict = {"passed": passed, "l_max": lattice.l_max, "runs": runs}
    rows = [("run", "max_mode_rel_error", "tolerance", "passed")]
    rows += [(k, v["max_mode_rel_error"], v["tolerance"], int(v["passed"])) for k, v in runs.items()]
    return verdict, {"roundtrip": rows}


def _target_singular_split(scn):
    bg = scn.background()
    part = scn.partition()
    rng = np.random.default_rng(scn.seed)
    sub = {}
    series = {}

    # (a) reconstruction, with cross couplings and forcing in play
    lattice = build_lattice(scn.n_sphere, min(scn.l_max, 12))
    cs, cp = random_coupling(1, "first", rng, 0.05)
    config = SystemConfig(
        n_regular=1, system="first", top_order=scn.top_order,
        coupling_scale=cs, coupling_psi=cp,
        forcings=(Forcing(kind="tau_bump", amplitude=0.2, center=0.4, width=0.1), Forcing()),
        tau_seed=scn.tau_seed, rtol=1e-11, atol=1e-13,
    )
    data = make_asymptotic_data(
        lattice, part, bg,
        O=_bounded_field(lattice, rng), h=_bounded_field(lattice, rng),
        phis=[_bounded_field(lattice, rng)],
    )
    grid = make_time_grid(config.tau_seed, 1.0, count=40 * scn.grid_refine + 1)
    traj_y, traj_j = split_singular_component(config, lattice, bg, data, grid, part=part)
    direct = integrate(config, lattice, bg, seed_state(config, lattice, bg, data), 1.0, grid=grid)
    num = np.max(np.abs(traj_y.values[:, 0, :] + traj_j.values[:, 0, :] - direct.values[:, 0, :]))
    den = np.max(np.abs(direct.values[:, 0, :]))
    recon_err = float(num / den)
    sub["reconstruction"] = {"rel_error": recon_err, "tolerance": 1e-9, "passed": recon_err <= 1e-9}

    # (b) log-branch growth statistic over >= 20 draws
    lat_blow = build_lattice(scn.n_sphere, 8)
    blow_cfg = SystemConfig(
        n_regular=1, system="first", top_order=1, tau_seed=1e-7, rtol=1e-10, atol=1e-12,
    )
    blow_grid = make_time_grid(1e-6, 1.0, count=120 * scn.grid_refine + 1)
    worst_drift, sup_stat = 0.0, 0.0
    n_draws = max(20, scn.n_draws // 2)
    blow_pass = True
    stat_rows = [("draw", "sup_statistic", "max_drift")]
    for d in range(n_draws):
        o_field = _bounded_field(lat_blow, rng, decay=6.0)
        bdata = make_asymptotic_data(lat_blow, part, bg, O=o_field, frak_h=_zero(lat_blow),
                                     phis=[_zero(lat_blow)])
        ty, _ = split_singular_component(blow_cfg, lat_blow, bg, bdata, blow_grid, part=part)
        rep = singular_blowup_check(ty, bdata, part, top_order=1)
        worst = max(rep.drifts) if rep.drifts else 0.0
        worst_drift = max(worst_drift, worst)
        sup_stat = max(sup_stat, rep.sup_value)
        blow_pass = blow_pass and rep.passed
        stat_rows.append((d, rep.sup_value, worst))
    sub["blowup"] = {
        "n_draws": n_draws, "sup_statistic": sup_stat,
        "worst_drift_per_decade": worst_drift, "limit": 0.10, "passed": blow_pass,
    }
    series["blowup"] = stat_rows

    # (c) second-family regular block ignores singular data bit for bit
    lat2 = build_lattice(scn.n_sphere, 8)
    cs2, cp2 = random_coupling(2, "second", rng, 0.1)
    cfg2 = SystemConfig(n_regular=2, system="second", top_order=scn.top_order,
                        coupling_scale=cs2, coupling_psi=cp2, tau_seed=scn.tau_seed)
    phis = [_bounded_field(lat2, rng) for _ in range(2)]
    d_a = make_asymptotic_data(lat2, part, bg, O=_bounded_field(lat2, rng),
                               h=_bounded_field(lat2, rng), phis=phis)
    d_b = make_asymptotic_data(lat2, part, bg, O=_bounded_field(lat2, rng),
                               h=_bounded_field(lat2, rng), phis=phis)
    t_a = integrate(cfg2, lat2, bg, seed_state(cfg2, lat2, bg, d_a), 1.0)
    t_b = integrate(cfg2, lat2, bg, seed_state(cfg2, lat2, bg, d_b), 1.0)
    bit_identical = bool(
        np.array_equal(t_a.values[:, 1:, :], t_b.values[:, 1:, :])
        and np.array_equal(t_a.derivs[:, 1:, :], t_b.derivs[:, 1:, :])
    )
    sub["second_family_isolation"] = {"bit_identical": bit_identical, "passed": bit_identical}

    # (d) cutoff-stability ladder
    lat_eps = build_lattice(scn.n_sphere, 6)
    eps_cfg = SystemConfig(n_regular=1, system="first", top_order=scn.top_order,
                           rtol=1e-11, atol=1e-13)
    eps_data = make_asymptotic_data(
        lat_eps, part, bg, O=_bounded_field(lat_eps, rng),
        h=_bounded_field(lat_eps, rng), phis=[_bounded_field(lat_eps, rng)],
    )
    # 1e-3 sits deep enough in the asymptotic regime for the hard ratio gate
    eps_rep = epsilon_construction_check(eps_cfg, lat_eps, bg, eps_data, eps=1e-3)
    sub["epsilon_ladder"] = {
        "ladder": list(eps_rep.eps_ladder),
        "discrepancies": list(eps_rep.discrepancies),
        "ratios": list(eps_rep.ratios),
        "monotone": eps_rep.monotone,
        "passed": eps_rep.passed,
    }

    passed = all(entry["passed"] for entry in sub.values())
    return {"passed": passed, "parts": sub}, series


def _zero(lattice):
    return Field(lattice=lattice, coeffs=np.zeros(lattice.n_slots))


def _target_gronwall(scn):
    verdict = verify_gronwall_lemma(seed=scn.seed, count=scn.gronwall_count,
                                    grid_count=256, k_max=12)
    out = {
        "passed": verdict.passed,
        "n_instances": verdict.n_instances,
        "worst_defect_rel": verdict.worst_defect_rel,
        "preset_defect_rel": verdict.preset_defect_rel,
        "worst_discrete_gap": verdict.worst_discrete_gap,
    }
    return out, {}


def _target_poincare(scn):
    bg = scn.background()
    part = scn.partition()
    rep = verify_refined_poincare(
        part, bg, resolutions=scn.resolutions, deltas=(0.1, 1.0, 10.0),
        n_fields=scn.n_fields, tau=0.5, seed=scn.seed, n_sphere=scn.n_sphere,
    )
    rows = [("delta", "l_max", "constant")]
    for d, row in zip(rep.deltas, rep.constants):
        for r, cval in zip(rep.resolutions, row):
            rows.append((d, r, cval))
    verdict = {
        "passed": rep.passed,
        "deltas": list(rep.deltas),
        "resolutions": list(rep.resolutions),
        "constants": [list(r) for r in rep.constants],
        "drift_factors": [list(r) for r in rep.drift_factors],
        "n_fields": rep.n_fields,
    }
    return verdict, {"poincare": rows}


_RUNNERS = {
    "lp-props": _target_lp_props,
    "toy-shells": _target_toy_shells,
    "forward-first": lambda scn: _theorem_target(scn, "first"),
    "backward-second": lambda scn: _theorem_target(scn, "second"),
    "roundtrip": _target_roundtrip,
    "singular-split": _target_singular_split,
    "gronwall": _target_gronwall,
    "poincare": _target_poincare,
}


def _format_cell(v):
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def run_scenario(scn, quiet=False):
    """Execute the scenario's targets and write the artifact bundle.

    Returns (verdicts dict, all_passed).  Target failures raise with the
    target named; verdict failures do not raise, they fail the exit status.
    """
    out_dir = Path(scn.out_dir)
    series_dir = out_dir / "series"
    series_dir.mkdir(parents=True, exist_ok=True)
    verdicts = {"scenario": scn.name, "config_hash": scn.config_hash(), "seed": scn.seed}
    all_passed = True
    lines = [f"scenario {scn.name} (hash {scn.config_hash()}, seed {scn.seed})"]
    for target in scn.expanded_targets():
        runner = _RUNNERS[target]
        try:
            verdict, series = runner(scn)
        except Exception as exc:
            raise RuntimeError(f"target {target!r} failed: {exc}") from exc
        verdicts[target] = verdict
        ok = bool(verdict.get("passed", False))
        all_passed = all_passed and ok
        lines.append(f"{target}: {'PASS' if ok else 'FAIL'}")
        if not quiet:
            print(lines[-1])
        for name, rows in series.items():
            path = series_dir / f"{name}.csv"
            text = "\n".join(",".join(_format_cell(c) for c in row) for row in rows)
            path.write_text(text + "\n")
    verdicts["all_passed"] = all_passed
    (out_dir / "verdicts.json").write_text(json.dumps(verdicts, sort_keys=True, indent=2) + "\n")
    lines.append(f"overall: {'PASS' if all_passed else 'FAIL'}")
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    if not quiet:
        print(lines[-1])
    return verdicts, all_passed


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="shellwave",
        description="spectral-shell verification scenarios (config-driven)",
    )
    parser.add_argument("--config", type=Path, default=None, help="scenario file")
    parser.add_argument("--seed", type=int, default=None, help="override scenario seed")
    parser.add_argument("--out", type=Path, default=None, help="override output directory")
    parser.add_argument("--target", action="append", default=None,
                        help="run this target (repeatable); overrides the config list")
    parser.add_argument("--grid-refine", type=int, default=1,
                        help="multiply verification grid densities")
    parser.add_argument("--quiet", action="store_true", help="suppress progress lines")
    args = parser.parse_args(argv)

    text = args.config.read_text() if args.config else DEFAULT_CONFIG
    try:
        scn = parse_config(text)
    except ConfigError as exc:
        parser.error(str(exc))
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.target:
        for t in args.target:
            if t != "verify-all" and t not in TARGETS:
                parser.error(f"unknown target {t!r}")
        overrides["targets"] = tuple(args.target)
    if args.grid_refine != 1:
        overrides["grid_refine"] = args.grid_refine
    if overrides:
        scn = Scenario(**{**scn.__dict__, **overrides})
    _, all_passed = run_scenario(scn, quiet=args.quiet)
    return 0 if all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
