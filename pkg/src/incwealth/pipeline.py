"""Orchestrate the four analysis steps end to end with cached stage artifacts.

Stages run in dependency order; a stage is skipped when its config section,
its input files and its previously written outputs all hash to the recorded
values (so corrupted caches trigger a clean re-run, not a crash). Every
random quantity derives from the single run seed and stable stage/country
names, which makes the entire output a pure function of config, seed and
input files.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bvar as bvar_mod
from . import metrics as metrics_mod
from . import microsim as microsim_mod
from . import plots
from . import regression as regression_mod
from .bart import BartConfig, PersonEncoder, fit_probit, fit_regression
from .data import RunConfig, load_households, load_macro_panel
from .etel import abscop_sample, moment_for
from .marginals import (
    INCOME_FAMILIES,
    WEALTH_FAMILIES,
    MarginalPosterior,
    SelectionEntry,
    information_criteria,
    rwmh_fit,
    select_family,
    selection_table_rows,
)
from ._util import derive_seed, read_csv, sha256_file, write_csv

STAGES = ("marginals", "dependence", "bvar", "simulate", "report")
STAGE_DEPS = {
    "marginals": (),
    "dependence": ("marginals",),
    "bvar": (),
    "simulate": ("marginals", "bvar"),
    "report": ("marginals", "dependence", "bvar", "simulate"),
}

OUTPUT_ROOT_ENV = "INCWEALTH_OUTPUT_ROOT"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage} failed: {message}")
        self.stage = stage


def _config_digest(payload) -> str:
    import hashlib

    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def resolve_output_dir(config: RunConfig) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV, "")
    return (Path(root) / config.output_dir) if root else Path(config.output_dir)


@dataclass
class StageResult:
    stage: str
    cached: bool
    wall_time: float
    outputs: list[str]


class Pipeline:
    def __init__(self, config: RunConfig, force: bool = False, threads: int = 1, countries=None):
        config.validate()
        self.config = config
        self.force = force
        self.threads = max(1, int(threads))
        self.countries = sorted(countries or config.countries)
        if not self.countries:
            raise ValueError("no countries configured")
        self.out = resolve_output_dir(config)
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.out / "manifest.json"
        self.manifest = self._load_manifest()

    # -- manifest ----------------------------------------------------------

    def _load_manifest(self) -> dict:
        if self.manifest_path.exists():
            try:
                with open(self.manifest_path) as fh:
                    return json.load(fh)
            except (json.JSONDecodeError, OSError):
                pass
        return {"stages": {}}

    def _save_manifest(self) -> None:
        with open(self.manifest_path, "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def _hash_files(self, paths) -> dict:
        out = {}
        for p in paths:
            p = Path(p)
            out[str(p)] = sha256_file(p) if p.exists() else "missing"
        return out

    def _cache_hit(self, stage: str, cfg_hash: str, input_hashes: dict) -> bool:
        if self.force:
            return False
        entry = self.manifest["stages"].get(stage)
        if not entry or entry.get("config_hash") != cfg_hash:
            return False
        if entry.get("input_hashes") != input_hashes:
            return False
        for path, digest in entry.get("output_hashes", {}).items():
            p = Path(path)
            if not p.exists() or sha256_file(p) != digest:
                return False
        return True

    # -- stage plumbing ----------------------------------------------------

    def data_files(self, country: str) -> list[Path]:
        d = Path(self.config.data_dir) / country
        return [d / "households.csv", d / "households_persons.csv", d / "macro.csv"]

    def _micro_files(self):
        files = []
        for c in self.countries:
            files += self.data_files(c)[:2]
        return files

    def _macro_files(self):
        return [self.data_files(c)[2] for c in self.countries]

    def _stage_config(self, stage: str) -> dict:
        cfg = self.config
        common = {"seed": cfg.seed, "countries": self.countries, "data_dir": cfg.data_dir}
        if stage == "marginals":
            return common | {
                "chain": vars(cfg.marginal_chain),
            }
        if stage == "dependence":
            return common | {
                "etel_b": cfg.etel_b,
                "tail_upper": cfg.tail_upper,
                "tail_lower": cfg.tail_lower,
                "marginal_draw_pool": cfg.marginal_draw_pool,
            }
        if stage == "bvar":
            return common | {
                "lags": cfg.lags,
                "horizons": cfg.horizons,
                "iterations": cfg.bvar_iterations,
                "burn_in": cfg.bvar_burn_in,
                "reference_country": cfg.reference_country,
            }
        if stage == "simulate":
            return common | {
                "horizons": cfg.horizons,
                "bond_duration": cfg.bond_duration,
                "replacement": {c: cfg.replacement_rate_for(c) for c in self.countries},
                "dependence_mode": cfg.dependence_mode,
                "microsim_etel_b": cfg.microsim_etel_b,
                "marginal_draw_pool": cfg.marginal_draw_pool,
                "bart": {
                    "trees": cfg.bart_trees,
                    "iterations": cfg.bart_iterations,
                    "burn_in": cfg.bart_burn_in,
                },
                "tails": [cfg.tail_upper, cfg.tail_lower],
            }
        if stage == "report":
            return common | {"horizons": cfg.horizons}
        raise StageError(stage, "unknown stage")

    def _stage_inputs(self, stage: str) -> list[Path]:
        if stage == "marginals":
            return self._micro_files()
        if stage == "dependence":
            return self._micro_files() + self._marginal_artifacts()
        if stage == "bvar":
            return self._macro_files()
        if stage == "simulate":
            files = self._micro_files() + self._marginal_artifacts()
            for c in self.countries:
                files += [self.out / "bvar" / c / "irf_target.csv", self.out / "bvar" / c / "irf_qe.csv"]
            return files
        if stage == "report":
            files = self._micro_files()
            for c in self.countries:
                files.append(self.out / "simulate" / c / "trajectories.csv")
                files.append(self.out / "dependence" / c / "summary.json")
            return files
        raise StageError(stage, "unknown stage")

    def _marginal_artifacts(self) -> list[Path]:
        files = []
        for c in self.countries:
            files.append(self.out / "marginals" / c / "chosen.json")
            for margin in ("income", "wealth"):
                for fam in INCOME_FAMILIES if margin == "income" else WEALTH_FAMILIES:
                    files.append(self.out / "marginals" / c / f"{margin}_{fam}.npz")
        return files

    # -- public API --------------------------------------------------------

    def run(self, stage: str) -> list[StageResult]:
        """Run a stage after its dependencies; returns one result per stage touched."""
        results = []
        for dep in STAGE_DEPS[stage]:
            results += self.run(dep)
        cfg_hash = _config_digest(self._stage_config(stage))
        input_hashes = self._hash_files(self._stage_inputs(stage))
        if self._cache_hit(stage, cfg_hash, input_hashes):
            results.append(StageResult(stage, True, 0.0, sorted(self.manifest["stages"][stage]["output_hashes"])))
            return results
        t0 = time.perf_counter()
        try:
            outputs = getattr(self, f"_run_{stage}")()
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, str(exc)) from exc
        wall = time.perf_counter() - t0
        self.manifest["stages"][stage] = {
            "config_hash": cfg_hash,
            "input_hashes": input_hashes,
            "output_hashes": self._hash_files(outputs),
            "wall_time": wall,
        }
        self.manifest["config_hash"] = _config_digest(
            {s: self._stage_config(s) for s in STAGES}
        )
        self._save_manifest()
        results.append(StageResult(stage, False, wall, [str(p) for p in outputs]))
        return results

    def _map_countries(self, worker, payloads):
        """Deterministic per-country fan-out; merged in sorted country order."""
        if self.threads > 1 and len(payloads) > 1:
            with ProcessPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(worker, payloads))
        return [worker(p) for p in payloads]

    # -- stages ------------------------------------------------------------

    def _run_marginals(self) -> list[Path]:
        payloads = [
            (self.config, str(self.out), c) for c in self.countries
        ]
        results = self._map_countries(_marginals_worker, payloads)
        outputs = []
        by_country_income = {}
        by_country_wealth = {}
        for c, files, entries in results:
            outputs += [Path(f) for f in files]
            by_country_income[c] = [SelectionEntry(*e) for e in entries["income"]]
            by_country_wealth[c] = [SelectionEntry(*e) for e in entries["wealth"]]
        for margin, table in (("income", by_country_income), ("wealth", by_country_wealth)):
            for c in table:
                select_family(table[c])
            path = self.out / "marginals" / f"selection_{margin}.csv"
            write_csv(
                path,
                ["country", "model", "dic", "bic", "dic_best", "bic_best"],
                selection_table_rows(table),
            )
            outputs.append(path)
        return outputs

    def _run_dependence(self) -> list[Path]:
        payloads = [(self.config, str(self.out), c) for c in self.countries]
        results = self._map_countries(_dependence_worker, payloads)
        outputs = []
        rows = []
        for c, files, summaries in results:
            outputs += [Path(f) for f in files]
            for s in summaries:
                rows.append((c, s["functional"], s["median"], s["lo68"], s["hi68"], s["ess"], int(s["low_ess"])))
        combined = self.out / "dependence" / "dependence.csv"
        write_csv(combined, ["country", "functional", "median", "lo68", "hi68", "ess", "low_ess"], rows)
        outputs.append(combined)
        return outputs

    def _run_bvar(self) -> list[Path]:
        # the spread factor is cross-country, so compute it before the fan-out
        panels = {c: load_macro_panel(self.data_files(c)[2], country=c) for c in self.countries}
        ref = self.config.reference_country or self.countries[0]
        if ref not in panels:
            raise StageError("bvar", f"reference country {ref} not in the run")
        rates = {c: panels[c].series["LT-IR"] for c in self.countries if c != ref}
        if len(rates) >= 2:
            pca = bvar_mod.pca_spread(rates, panels[ref].series["LT-IR"])
            spread = pca.series
            spread_meta = {
                "countries": pca.countries,
                "loadings": pca.loadings.tolist(),
                "explained_share": pca.explained_share,
                "reference": ref,
            }
        else:
            spread = panels[self.countries[0]].series["EA-spread"]
            spread_meta = {"note": "fewer than two spread series; using the provided column"}
        spread_path = self.out / "bvar" / "ea_spread.json"
        spread_path.parent.mkdir(parents=True, exist_ok=True)
        with open(spread_path, "w") as fh:
            json.dump(spread_meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        spread_csv = self.out / "bvar" / "ea_spread.csv"
        write_csv(spread_csv, ["quarter", "spread"], zip(panels[self.countries[0]].quarters, spread))

        payloads = [
            (self.config, str(self.out), c, spread.tolist()) for c in self.countries
        ]
        results = self._map_countries(_bvar_worker, payloads)
        outputs = [spread_path, spread_csv]
        for _, files in results:
            outputs += [Path(f) for f in files]
        return outputs

    def _run_simulate(self) -> list[Path]:
        payloads = [(self.config, str(self.out), c) for c in self.countries]
        results = self._map_countries(_simulate_worker, payloads)
        outputs = []
        for _, files in results:
            outputs += [Path(f) for f in files]
        return outputs

    def _run_report(self) -> list[Path]:
        cfg = self.config
        report_dir = self.out / "report"
        report_dir.mkdir(parents=True, exist_ok=True)
        outputs = []

        panels = {}
        reports = {}
        for c in self.countries:
            files = self.data_files(c)
            panel = load_households(files[0], persons_path=files[1], country=c)
            panels[c] = panel
            reports[c] = metrics_mod.compute_report(panel, cfg.tail_upper, cfg.tail_lower)
        metrics_path = report_dir / "metrics.csv"
        metrics_mod.reports_to_csv(metrics_path, reports)
        outputs.append(metrics_path)

        dep_summary = {}
        for c in self.countries:
            with open(self.out / "dependence" / c / "summary.json") as fh:
                dep_summary[c] = json.load(fh)
        dep_path = report_dir / "dependence_summary.json"
        with open(dep_path, "w") as fh:
            json.dump(dep_summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs.append(dep_path)

        # peak responses per (metric, shock) across countries
        peaks: dict[str, dict[str, float]] = {}
        for c in self.countries:
            header, rows = read_csv(self.out / "simulate" / c / "trajectories.csv")
            series: dict[tuple[str, str], list[float]] = {}
            for shock, metric, _h, v in rows:
                series.setdefault((shock, metric), []).append(float(v))
            for (shock, metric), values in series.items():
                peaks.setdefault(f"{metric}__{shock}", {})[c] = microsim_mod.peak_response(values)
        peak_rows = []
        for target in sorted(peaks):
            for c in self.countries:
                peak_rows.append((c, target, peaks[target][c]))
        peaks_path = report_dir / "peak_responses.csv"
        write_csv(peaks_path, ["country", "target", "peak_pct_change"], peak_rows)
        outputs.append(peaks_path)

        if len(self.countries) >= 3:
            table = regression_mod.build_feature_table(panels, reports)
            peak_arrays = {
                target: np.array([peaks[target][c] for c in self.countries])
                for target in sorted(peaks)
            }
            results = regression_mod.peak_response_regressions(table, peak_arrays)
            reg_path = report_dir / "exploratory_regression.csv"
            regression_mod.regressions_to_csv(reg_path, results)
            outputs.append(reg_path)
            heat_path = report_dir / "exploratory_regression.svg"
            plots.plot_regression_heatmap(results, heat_path, title="Peak responses vs country traits")
            outputs.append(heat_path)

        bundle = {
            "countries": self.countries,
            "seed": cfg.seed,
            "metrics_csv": str(metrics_path),
            "dependence": dep_summary,
            "peaks": {t: dict(sorted(v.items())) for t, v in sorted(peaks.items())},
        }
        bundle_path = report_dir / "bundle.json"
        with open(bundle_path, "w") as fh:
            json.dump(bundle, fh, indent=2, sort_keys=True)
            fh.write("\n")
        outputs.append(bundle_path)
        return outputs


# ---------------------------------------------------------------------------
# per-country workers (top level so a process pool can pickle them)


def _load_panel(config: RunConfig, country: str):
    d = Path(config.data_dir) / country
    return load_households(d / "households.csv", persons_path=d / "households_persons.csv", country=country)


def _fit_margin_data(panel):
    income = panel.total_income()
    income_fit = income[income > 0]
    wealth_fit = panel.net_wealth()
    return income_fit, wealth_fit


def _marginals_worker(payload):
    config, out, country = payload
    out = Path(out)
    panel = _load_panel(config, country)
    income_fit, wealth_fit = _fit_margin_data(panel)
    cdir = out / "marginals" / country
    files = []
    entries = {"income": [], "wealth": []}
    for margin, data, candidates in (
        ("income", income_fit, INCOME_FAMILIES),
        ("wealth", wealth_fit, WEALTH_FAMILIES),
    ):
        best = None
        for fam in candidates:
            seed = derive_seed(config.seed, "marginals", country, margin, fam)
            post = rwmh_fit(data, fam, chain=config.marginal_chain, seed=seed)
            bic, dic = information_criteria(post, data)
            npz = cdir / f"{margin}_{fam}.npz"
            post.save(npz)
            csv_path = cdir / f"{margin}_{fam}_draws.csv"
            post.to_csv(csv_path)
            files += [str(npz), str(csv_path)]
            entries[margin].append((fam, bic, dic, False, False))
            if best is None or bic < best[1]:
                best = (fam, bic)
        entries[margin + "_best"] = best[0]
    chosen = {
        "income": entries.pop("income_best"),
        "wealth": entries.pop("wealth_best"),
    }
    chosen_path = cdir / "chosen.json"
    with open(chosen_path, "w") as fh:
        json.dump(chosen, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(str(chosen_path))
    return country, files, entries


def _load_chosen_posteriors(config: RunConfig, out: Path, country: str):
    cdir = out / "marginals" / country
    with open(cdir / "chosen.json") as fh:
        chosen = json.load(fh)
    post_income = MarginalPosterior.load(cdir / f"income_{chosen['income']}.npz")
    post_wealth = MarginalPosterior.load(cdir / f"wealth_{chosen['wealth']}.npz")
    return post_income, post_wealth


def _dependence_worker(payload):
    config, out, country = payload
    out = Path(out)
    panel = _load_panel(config, country)
    post_income, post_wealth = _load_chosen_posteriors(config, out, country)
    income = panel.total_income()
    nw = panel.net_wealth()
    keep = income > 0  # pseudo-data needs the income marginal's support
    x1, x2 = income[keep], nw[keep]

    cdir = out / "dependence" / country
    files = []
    summaries = []
    conds = [
        moment_for("spearman_rho"),
        moment_for("upper_tail", config.tail_upper),
        moment_for("lower_tail", config.tail_lower),
    ]
    for cond in conds:
        seed = derive_seed(config.seed, "dependence", country, cond.tag)
        dep = abscop_sample(
            cond,
            post_income,
            post_wealth,
            x1,
            x2,
            b=config.etel_b,
            seed=seed,
            marginal_draw_pool=config.marginal_draw_pool,
        )
        draws_path = cdir / f"{cond.tag}_draws.csv"
        dep.draws_to_csv(draws_path)
        files.append(str(draws_path))
        fig_path = cdir / f"{cond.tag}.svg"
        plots.plot_dependence_posterior(dep, fig_path, title=f"{country}: {cond.tag}")
        files += [str(fig_path), str(fig_path.with_suffix(".csv"))]
        summaries.append(dep.summary())
    summary_path = cdir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump(summaries, fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append(str(summary_path))
    return country, files, summaries


def _bvar_worker(payload):
    config, out, country, spread = payload
    out = Path(out)
    d = Path(config.data_dir) / country
    panel = load_macro_panel(d / "macro.csv", country=country)
    panel = panel.with_series("EA-spread", np.asarray(spread, dtype=float))
    ordering = tuple(v for v in bvar_mod.DEFAULT_ORDERING if v in panel.series)
    spec = bvar_mod.VarSpec(variables=ordering, lags=config.lags)
    y = panel.matrix(ordering)
    draws = bvar_mod.gibbs_fit(
        y,
        spec,
        iterations=config.bvar_iterations,
        burn_in=config.bvar_burn_in,
        seed=derive_seed(config.seed, "bvar", country),
    )
    cdir = out / "bvar" / country
    files = []
    for shock in ("target", "qe"):
        irf_set = bvar_mod.irf(draws, shock, horizons=config.horizons)
        csv_path = cdir / f"irf_{shock}.csv"
        irf_set.to_csv(csv_path)
        svg_path = cdir / f"irf_{shock}.svg"
        plots.plot_irf_grid(irf_set, svg_path, title=f"{country}: one-sd {shock} shock")
        files += [str(csv_path), str(svg_path)]
    return country, files


def load_irf_medians(path, horizons: int) -> dict[str, np.ndarray]:
    header, rows = read_csv(path)
    medians: dict[str, np.ndarray] = {}
    for variable, h, lo, med, hi in rows:
        arr = medians.setdefault(variable, np.zeros(horizons + 1))
        arr[int(h)] = float(med)
    return medians


def _simulate_worker(payload):
    config, out, country = payload
    out = Path(out)
    panel = _load_panel(config, country)

    bart_cfg = BartConfig(
        n_trees=config.bart_trees,
        iterations=config.bart_iterations,
        burn_in=config.bart_burn_in,
    )
    enc_emp = PersonEncoder(include_tenure=False).fit(panel.persons)
    x_emp = enc_emp.transform(panel.persons)
    z = np.array([p.employed for p in panel.persons], dtype=int)
    employment_model = fit_probit(
        x_emp, z, config=bart_cfg, seed=derive_seed(config.seed, "pbart", country)
    )
    employed = [p for p in panel.persons if p.employed and p.employment_income > 0]
    enc_inc = PersonEncoder(include_tenure=True).fit(employed)
    income_model = fit_regression(
        enc_inc.transform(employed),
        np.array([p.employment_income for p in employed]),
        config=bart_cfg,
        seed=derive_seed(config.seed, "bart-income", country),
    )

    deltas = {}
    for shock in ("target", "qe"):
        medians = load_irf_medians(out / "bvar" / country / f"irf_{shock}.csv", config.horizons)
        deltas[shock] = microsim_mod.IrfDeltas.from_medians(
            medians, config.horizons, config.bond_duration
        )

    dependence_fn = None
    if config.dependence_mode == "copula":
        post_income, post_wealth = _load_chosen_posteriors(config, out, country)
        cond = moment_for("spearman_rho")
        dep_seed = derive_seed(config.seed, "simulate-dependence", country)

        def dependence_fn(p):
            income = p.total_income()
            nw = p.net_wealth()
            keep = income > 0
            dep = abscop_sample(
                cond,
                post_income,
                post_wealth,
                income[keep],
                nw[keep],
                b=config.microsim_etel_b,
                seed=dep_seed,
                marginal_draw_pool=config.marginal_draw_pool,
            )
            return dep.median

    runs = microsim_mod.run_simulation(
        panel,
        deltas,
        employment_model=employment_model,
        income_model=income_model,
        replacement_rate=config.replacement_rate_for(country),
        encoder_employment=enc_emp,
        encoder_income=enc_inc,
        horizons=config.horizons,
        t_upper=config.tail_upper,
        t_lower=config.tail_lower,
        dependence_fn=dependence_fn,
    )
    cdir = out / "simulate" / country
    traj_path = cdir / "trajectories.csv"
    microsim_mod.trajectories_to_csv(traj_path, runs)
    svg_path = cdir / "trajectories.svg"
    plots.plot_trajectories(runs, svg_path, title=f"{country}: metric responses (% of baseline)")
    peak_rows = []
    for shock in sorted(runs):
        for metric, value in sorted(runs[shock].peak_responses().items()):
            peak_rows.append((shock, metric, value))
    peaks_path = cdir / "peaks.csv"
    write_csv(peaks_path, ["shock", "metric", "peak_pct_change"], peak_rows)
    files = [str(traj_path), str(svg_path), str(svg_path.with_suffix(".csv")), str(peaks_path)]
    return country, files


# ---------------------------------------------------------------------------
# command entry points


def generate_synthetic(config: RunConfig, seed: int | None = None) -> dict:
    """Write the synthetic fixture described by the config's synthetic section."""
    from .synthetic import generate_fixture

    syn = dict(config.synthetic)
    seed = config.seed if seed is None else seed
    return generate_fixture(
        config.data_dir,
        seed=seed,
        n_countries=int(syn.get("n_countries", len(config.countries) or 8)),
        households=int(syn.get("households", 2_000)),
        quarters=int(syn.get("quarters", 160)),
    )


def cmd_fit_marginals(config, **kw):
    return Pipeline(config, **kw).run("marginals")


def cmd_dependence(config, **kw):
    return Pipeline(config, **kw).run("dependence")


def cmd_bvar(config, **kw):
    return Pipeline(config, **kw).run("bvar")


def cmd_simulate(config, **kw):
    return Pipeline(config, **kw).run("simulate")


def cmd_report(config, **kw):
    return Pipeline(config, **kw).run("report")
