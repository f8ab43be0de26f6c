"""Stage runners. Every stage reads its inputs from disk and writes its outputs
back, so running ``all`` is the same as running the stages one by one."""

from __future__ import annotations

import hashlib
import json
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from . import evaluation, features, glmm, ingest, plotting, sqs, welo

logger = logging.getLogger(__name__)

STAGE_VERSION = "1"
STAGES = ("ingest", "features", "fit", "score", "welo", "evaluate", "rank")
DATASET_NAMES = {
    "wimbledon-M": ("wimbledon", "M"),
    "wimbledon-W": ("wimbledon", "W"),
    "usopen-M": ("usopen", "M"),
    "usopen-W": ("usopen", "W"),
}
TITLES = {
    "wimbledon-M": "Wimbledon men's singles",
    "wimbledon-W": "Wimbledon women's singles",
    "usopen-M": "U.S. Open men's singles",
    "usopen-W": "U.S. Open women's singles",
}


class ConfigError(ValueError):
    pass


class MissingArtifact(FileNotFoundError):
    def __init__(self, path):
        self.path = Path(path)
        super().__init__(f"missing artifact {self.path} (run the upstream stage first)")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")


@dataclass
class PipelineConfig:
    data_dir: Path
    output_dir: Path
    datasets: list = field(default_factory=lambda: list(DATASET_NAMES))
    years: list = field(default_factory=lambda: list(ingest.SEASONS))
    seed: int = 2024
    min_serves: int = features.MIN_SERVES
    split_fraction: float = 0.8
    column_map: dict = field(default_factory=dict)
    jobs: int = 1

    def validate(self) -> None:
        if not self.datasets:
            raise ConfigError("no datasets configured")
        for d in self.datasets:
            if d not in DATASET_NAMES:
                raise ConfigError(f"unknown dataset {d!r}; choose from {sorted(DATASET_NAMES)}")
        bad = [y for y in self.years if y not in ingest.SEASONS]
        if bad or not self.years:
            raise ConfigError(f"years must be a non-empty subset of {ingest.SEASONS}, got {self.years}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError("split_fraction must lie in (0, 1)")
        if self.min_serves < 0:
            raise ConfigError("min_serves must be non-negative")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    def config_hash(self) -> str:
        # output location and parallelism do not change any artifact's content
        payload = {
            "data_dir": str(Path(self.data_dir).resolve()),
            "datasets": sorted(self.datasets),
            "years": sorted(self.years),
            "seed": self.seed,
            "min_serves": self.min_serves,
            "split_fraction": self.split_fraction,
            "column_map": dict(sorted(self.column_map.items())),
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


class Stage:
    """Paths and provenance for one dataset's artifacts."""

    def __init__(self, config: PipelineConfig, dataset: str):
        self.config = config
        self.dataset = dataset
        self.dir = Path(config.output_dir) / dataset
        self.written: list[tuple[str, Path]] = []
        self._current = ""

    def path(self, name: str) -> Path:
        return self.dir / name

    def need(self, *names: str) -> list[Path]:
        paths = [self.path(n) for n in names]
        for p in paths:
            if not p.exists():
                raise MissingArtifact(p)
        return paths

    def out(self, name: str) -> Path:
        p = self.path(name)
        p.parent.mkdir(parents=True, exist_ok=True)
        self.written.append((self._current, p))
        return p

    def provenance(self) -> dict:
        return {"provenance": {
            "config_hash": self.config.config_hash(),
            "seed": self.config.seed,
            "stage": self._current,
            "stage_version": STAGE_VERSION,
            "dataset": self.dataset,
        }}


# ---------------------------------------------------------------------------
# stages


def stage_ingest(st: Stage) -> None:
    cfg = st.config
    slam, gender = DATASET_NAMES[st.dataset]
    data = Path(cfg.data_dir)
    all_matches, all_points, all_results = [], [], []
    malformed = 0
    report = ingest.CleaningReport(0, 0, {r: 0 for r in ingest.DROP_REASONS})
    for year in sorted(cfg.years):
        mpath = data / f"{year}-{slam}-matches.csv"
        ppath = data / f"{year}-{slam}-points.csv"
        for p in (mpath, ppath):
            if not p.exists():
                raise FileNotFoundError(f"missing input file {p}")
        matches, bad = ingest.load_matches(mpath, cfg.column_map)
        malformed += len(bad)
        matches = [m for m in matches if m.gender == gender and m.year == year]
        ids = {m.match_id for m in matches}
        raw = [r for r in ingest.load_points(ppath, cfg.column_map) if r.match_id in ids]
        records, rep = ingest.resolve_and_clean(raw, matches)
        report.input_rows += rep.input_rows
        report.kept += rep.kept
        for k, v in rep.dropped_by_reason.items():
            report.dropped_by_reason[k] += v
        all_matches += matches
        all_points += records
        all_results += ingest.match_results_from_points(ppath, matches, cfg.column_map)
    if not all_points:
        raise ValueError("no points survived cleaning")
    all_results = ingest.assign_date_order(all_results, all_matches)
    split = evaluation.split_matches(all_matches, cfg.seed, cfg.split_fraction)

    ingest.write_matches_csv(all_matches, st.out("matches.csv"))
    ingest.write_points_csv(all_points, st.out("points_clean.csv"))
    welo.write_results_csv(all_results, st.out("match_results.csv"))
    ingest.write_cleaning_report(report, st.out("cleaning_report.json"),
                                 {"malformed_match_rows": malformed, **st.provenance()})
    _write_json(st.out("split.json"), {**split.to_dict(), **st.provenance()})


def _load_split(st: Stage) -> evaluation.SplitAssignment:
    (p,) = st.need("split.json")
    return evaluation.SplitAssignment.from_dict(json.loads(p.read_text()))


def _points(st: Stage, which: str):
    (p,) = st.need("points_clean.csv")
    split = _load_split(st)
    ids = split.train_match_ids if which == "train" else split.test_match_ids
    return [r for r in ingest.read_points_csv(p) if r.match_id in ids]


def stage_features(st: Stage) -> None:
    train = _points(st, "train")
    params_all = {}
    for s in (1, 2):
        rows = features.filter_min_serves(features.aggregate(train, s), st.config.min_serves)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", features.ConstantColumn)
            rows, params = features.standardize(rows)
        params_all[f"serve_{s}"] = {k: {"mean": v[0], "sd": v[1]} for k, v in params.items()}
        features.write_features_csv(rows, st.out(f"features_s{s}.csv"))
    _write_json(st.out("standardization.json"), {"serve_types": params_all, **st.provenance()})


def stage_fit(st: Stage) -> None:
    train = _points(st, "train")
    params = json.loads(st.need("standardization.json")[0].read_text())["serve_types"]
    for s in (1, 2):
        (fp,) = st.need(f"features_s{s}.csv")
        rows = features.read_features_csv(fp)
        design = glmm.build_design(train, rows, s)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", glmm.DegenerateVariance)
            fit = glmm.fit_glmm(design)
        extra = {
            "serve_type": s,
            "excluded_points": design.excluded_points,
            "standardization": params[f"serve_{s}"],
            **st.provenance(),
        }
        glmm.write_fit_json(fit, st.out(f"fit_s{s}.json"), extra)


def stage_score(st: Stage) -> None:
    for s in (1, 2):
        fpath, ffeat = st.need(f"fit_s{s}.json", f"features_s{s}.csv")
        fit = glmm.read_fit_json(fpath)
        entries = sqs.center_scores(sqs.compute_sqs(fit, features.read_features_csv(ffeat)))
        sqs.write_sqs_csv(entries, st.out(f"sqs_s{s}.csv"))


def stage_welo(st: Stage) -> None:
    (rp,) = st.need("match_results.csv")
    split = _load_split(st)
    results = [r for r in welo.read_results_csv(rp) if r.match_id in split.train_match_ids]
    state = welo.fold(results)
    welo.write_ratings_csv(state, st.out("welo_ratings.csv"))


def stage_evaluate(st: Stage) -> None:
    st.need("fit_s1.json", "fit_s2.json")
    s1, s2, rp = st.need("sqs_s1.csv", "sqs_s2.csv", "welo_ratings.csv")
    scores = {1: sqs.read_sqs_csv(s1), 2: sqs.read_sqs_csv(s2)}
    ratings = welo.read_ratings_csv(rp).ratings
    test = _points(st, "test")
    rows = evaluation.evaluate(st.dataset, scores, ratings, test)
    evaluation.write_eval_csv(rows, st.out("eval.csv"))
    evaluation.write_eval_json(rows, st.out("eval.json"), st.provenance())
    title = TITLES[st.dataset]
    text = "".join(
        evaluation.format_eval_table(rows, s, f"Out-of-sample performance for {title} "
                                              f"({'first' if s == 1 else 'second'} serves).") + "\n"
        for s in (1, 2))
    st.out("eval.txt").write_text(text)
    table = evaluation.scatter_table(scores, ratings, test)
    table.to_csv(st.out("scatter.csv"), index=False, float_format="%.17g")
    for s in (1, 2):
        plotting.plot_predictor_scatter(table, s, st.out(f"figures/scatter_s{s}.png"),
                                        f"{title}, serve {s}: test-set outcomes")


def stage_rank(st: Stage) -> None:
    s1, s2 = st.need("sqs_s1.csv", "sqs_s2.csv")
    first, second = sqs.read_sqs_csv(s1), sqs.read_sqs_csv(s2)
    title = f"{TITLES[st.dataset]}: top 10 SQS rankings (centered, training data)"
    st.out("top10.txt").write_text(sqs.format_top_table(first, second, title))
    for s, entries in ((1, first), (2, second)):
        plotting.plot_top_servers(sqs.top_k(entries, 10), st.out(f"figures/top10_s{s}.png"),
                                  f"{TITLES[st.dataset]}, serve {s}")


STAGE_FUNCS = {
    "ingest": stage_ingest,
    "features": stage_features,
    "fit": stage_fit,
    "score": stage_score,
    "welo": stage_welo,
    "evaluate": stage_evaluate,
    "rank": stage_rank,
}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class DatasetOutcome:
    dataset: str
    ok: bool
    artifacts: list
    error: Optional[str] = None
    failed_stage: Optional[str] = None


def run_dataset(config: PipelineConfig, dataset: str, stages) -> DatasetOutcome:
    st = Stage(config, dataset)
    st.dir.mkdir(parents=True, exist_ok=True)
    for name in stages:
        st._current = name
        try:
            STAGE_FUNCS[name](st)
        except Exception as exc:  # one dataset's failure must not stop the others
            err = StageError(name, exc)
            logger.error("%s: %s", dataset, err)
            return DatasetOutcome(dataset, False, _artifact_entries(config, st), str(err), name)
        logger.info("%s: stage %s done", dataset, name)
    return DatasetOutcome(dataset, True, _artifact_entries(config, st))


def _artifact_entries(config: PipelineConfig, st: Stage) -> list:
    root = Path(config.output_dir)
    return [{
        "path": p.relative_to(root).as_posix(),
        "sha256": sha256(p),
        "stage": stage,
        "dataset": st.dataset,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "stage_version": STAGE_VERSION,
    } for stage, p in st.written if p.exists()]


def update_manifest(config: PipelineConfig, outcomes) -> Path:
    """Merge fresh artifact entries into ``manifest.json`` (keyed by path)."""
    path = Path(config.output_dir) / "manifest.json"
    entries = {}
    if path.exists():
        for e in json.loads(path.read_text()).get("artifacts", []):
            entries[e["path"]] = e
    for o in outcomes:
        for e in o.artifacts:
            entries[e["path"]] = e
    payload = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "stage_version": STAGE_VERSION,
        "artifacts": [entries[k] for k in sorted(entries)],
    }
    _write_json(path, payload)
    return path


def run(config: PipelineConfig, stages=STAGES) -> tuple[int, Path, list]:
    """Run the requested stages for every configured dataset.

    Returns ``(exit_status, manifest_path, outcomes)`` with status 0 when all
    datasets succeed and 1 when any failed.
    """
    config.validate()
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    stages = [s for s in STAGES if s in set(stages)]
    datasets = list(dict.fromkeys(config.datasets))
    if config.jobs > 1 and len(datasets) > 1:
        with ProcessPoolExecutor(max_workers=min(config.jobs, len(datasets))) as pool:
            outcomes = list(pool.map(run_dataset, [config] * len(datasets), datasets,
                                     [stages] * len(datasets)))
    else:
        outcomes = [run_dataset(config, d, stages) for d in datasets]
    manifest = update_manifest(config, outcomes)
    status = 0 if all(o.ok for o in outcomes) else 1
    return status, manifest, outcomes


def config_dict(config: PipelineConfig) -> dict:
    d = asdict(config)
    d["data_dir"] = str(d["data_dir"])
    d["output_dir"] = str(d["output_dir"])
    return d
