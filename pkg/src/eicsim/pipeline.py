"""End-to-end loop: sense -> map -> predict -> decide proactively -> transmit.

Every stochastic draw comes from a child seed derived from the master seed and
a fixed stage index, so one stage's draws never shift another's.  All CSV
outputs start with a ``# config: {...}`` line echoing the run configuration and
are byte-identical for identical configs; wall-clock timing only goes to
``report.json``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import alloc, beam, predict
from .channel import Cir, OfdmConfig, cir_to_cfr, path_loss_db, points_in_boxes, trace_many
from .predict import Tier
from .scene import Scene, SceneGenConfig, generate_scene, load_scene
from .wei import WeiFeatureVector, extract_link_features

logger = logging.getLogger(__name__)

TASKS = (1, 2, 3, 4)
TASK_NAMES = {1: "coverage", 2: "predict-csi", 3: "beam", 4: "allocate"}

# stage index -> child seed; never renumber, append only
STAGES = {"scene_a": 0, "split": 1, "pilots": 2, "scene_b": 3, "users": 4, "branches": 5}

# user heading is +x; offsets in metres
BRANCHES = {"straight": (10.0, 0.0), "left": (0.0, 10.0), "right": (0.0, -10.0)}


class StageError(RuntimeError):
    """A module error tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


def child_seed(master: int, stage: str) -> int:
    ss = np.random.SeedSequence([int(master), STAGES[stage]])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    tasks: tuple[int, ...] = TASKS
    out_dir: str = "out"
    scene_path: str | None = None
    scene: SceneGenConfig = field(default_factory=SceneGenConfig)
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    tiers: tuple[Tier, ...] = tuple(Tier)
    hyper: predict.Hyper = field(default_factory=predict.Hyper)
    n_users: int = 10
    user_x_range: tuple[float, float] = (-20.0, 20.0)  # served segment of the main road
    alloc_symbols: int = 12
    exact_alloc_limit: int = alloc.EXACT_LIMIT
    proactive: bool = True
    n_beams: int = 32

    def __post_init__(self):
        if not self.tasks:
            raise ValueError("task list is empty")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad:
            raise ValueError(f"unknown task id {bad[0]}")
        if not self.tiers:
            raise ValueError("no predictor tier selected")
        if self.n_users < 1:
            raise ValueError("need at least one user")

    def echo(self) -> dict:
        d = asdict(self)
        d["tasks"] = list(self.tasks)
        d["tiers"] = [Tier(t).value for t in self.tiers]
        d.pop("out_dir")
        return d

    def echo_line(self) -> str:
        return "config: " + json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))


@dataclass
class RunReport:
    config: dict
    records: dict = field(default_factory=dict)  # task name -> metrics
    timing: dict = field(default_factory=dict)  # stage -> seconds
    files: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


# -- CSV output --------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_csv(path: Path, header: Sequence[str], rows, config_line: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# {config_line}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
    return path


def read_config_echo(path) -> dict:
    with open(path, encoding="utf-8") as f:
        first = f.readline()
    if not first.startswith("# config: "):
        raise ValueError(f"{path} has no config header")
    return json.loads(first[len("# config: "):])


# -- shared state -------------------------------------------------------------------

@dataclass
class _Links:
    """Step 1-3 products for one scene: traced links, features and fitted models."""

    scene: Scene
    rx: np.ndarray
    cirs: list[Cir]
    feats: list[WeiFeatureVector]
    pl: np.ndarray  # inf where no path survives
    keep: np.ndarray  # indices with at least one path
    train: np.ndarray  # indices into keep
    test: np.ndarray
    models: dict


class _Run:
    def __init__(self, config: RunConfig):
        self.cfg = config
        self.out = Path(config.out_dir)
        self.line = config.echo_line()
        self.report = RunReport(config.echo())
        self._links: _Links | None = None

    def stage(self, name: str, fn, *args):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        except StageError:
            raise
        except Exception as e:  # noqa: BLE001 - re-raised with a stage tag
            raise StageError(name, e) from e
        finally:
            self.report.timing[name] = self.report.timing.get(name, 0.0) + time.perf_counter() - t0

    def csv(self, name: str, header, rows) -> None:
        p = write_csv(self.out / name, header, rows, self.line)
        self.report.files.append(p.name)

    # Steps 1-3 on the primary scene, computed once
    @property
    def links(self) -> _Links:
        if self._links is None:
            scene = self.stage("sense", self._load_scene)
            rx = scene.rx_array
            cirs = self.stage("sense", trace_many, scene, rx, self.cfg.ofdm.fc_hz)
            feats = self.stage("map", lambda: [extract_link_features(scene, p, c) for p, c in zip(rx, cirs)])
            pl = np.array([path_loss_db(c, self.cfg.ofdm) for c in cirs])
            keep = np.flatnonzero(np.isfinite(pl))
            logger.info("primary scene: %d rx points, %d with paths", len(rx), len(keep))
            train, test = self.stage("predict", predict.train_test_split, len(keep), child_seed(self.cfg.seed, "split"))
            ds = predict.Dataset(tuple(feats[i] for i in keep[train]), pl[keep[train]])
            models = {t: self.stage("predict", predict.fit, t, ds, self.cfg.hyper) for t in self._tiers()}
            self._links = _Links(scene, rx, cirs, feats, pl, keep, train, test, models)
        return self._links

    def _tiers(self) -> list[Tier]:
        return [t for t in Tier if t in {Tier(x) for x in self.cfg.tiers}]

    def _load_scene(self) -> Scene:
        if self.cfg.scene_path:
            return load_scene(self.cfg.scene_path)
        return generate_scene(self.cfg.scene, child_seed(self.cfg.seed, "scene_a"))


# -- tasks ----------------------------------------------------------------------------

_TIER_COL = {Tier.STAT: "pl_stat_db", Tier.SIMPLE: "pl_simple_db", Tier.WEI: "pl_wei_db"}


def _task_coverage(run: _Run) -> dict:
    L = run.links
    X = np.array([f.as_array() for f in L.feats])
    preds = {t: m.predict(X) for t, m in L.models.items()}
    header = ["x", "y", "pl_true_db"] + [_TIER_COL[t] for t in preds] + ["los_flag"]
    rows = []
    for i, p in enumerate(L.rx):
        rows.append([float(p[0]), float(p[1]), float(L.pl[i])]
                    + [float(v[i]) for v in preds.values()] + [1 - L.feats[i].los_blocked])
    run.csv("coverage.csv", header, rows)
    n = len(L.rx)
    return {"n_points": n, "n_with_paths": int(len(L.keep)),
            "los_fraction": float(np.mean([1 - f.los_blocked for f in L.feats])) if n else 0.0}


def _link_nmse(truth, pred) -> np.ndarray:
    t, p = np.asarray(truth, dtype=float), np.asarray(pred, dtype=float)
    return (p - t) ** 2 / t ** 2


def _task_predict(run: _Run) -> dict:
    L = run.links
    cfg = run.cfg
    te = L.keep[L.test]
    y = L.pl[te]
    Xte = np.array([L.feats[i].as_array() for i in te])
    rec: dict = {"n_test": int(len(te)), "path_loss": {}}
    metric_rows, cdf_rows = [], []
    for t, m in L.models.items():
        p = m.predict(Xte)
        per = _link_nmse(y, p)
        v = predict.nmse(y, p)
        rec["path_loss"][t.value] = v
        metric_rows.append([2, t.value, cfg.seed, v, float(np.median(per))])
        cdf_rows += [[t.value, x, q] for x, q in predict.cdf_points(np.abs(p - y))]

    rng = np.random.default_rng(child_seed(cfg.seed, "pilots"))
    basis, linear = [], []
    for i in te:
        c = L.cirs[i]
        if len(c.paths) < 2:
            continue
        h = cir_to_cfr(c, cfg.ofdm, L.scene.tx, n_elements=1)
        obs = predict.observe_pilots(h, cfg.ofdm, rng)
        basis.append(predict.nmse(h.h, predict.reconstruct_cfr_from_pilots(obs, [p.delay for p in c.paths], cfg.ofdm).h))
        linear.append(predict.nmse(h.h, predict.interpolate_cfr_from_pilots(obs, cfg.ofdm).h))
    if basis:
        for name, vals in (("PilotDelayBasis", basis), ("PilotLinearInterp", linear)):
            metric_rows.append([2, name, cfg.seed, float(np.mean(vals)), float(np.median(vals))])
            cdf_rows += [[name, x, q] for x, q in predict.cdf_points(vals)]
        rec["pilot"] = {"n_links": len(basis), "basis_nmse": float(np.mean(basis)),
                        "linear_nmse": float(np.mean(linear)),
                        "reduction": float(1 - np.mean(basis) / np.mean(linear))}
    pl = rec["path_loss"]
    if Tier.STAT.value in pl and Tier.WEI.value in pl:
        rec["wei_vs_stat_reduction"] = float(1 - pl[Tier.WEI.value] / pl[Tier.STAT.value])
    run.csv("metrics.csv", ["task", "tier", "seed", "nmse_mean", "nmse_median"], metric_rows)
    run.csv("cdf.csv", ["series", "value", "cdf"], cdf_rows)
    return rec


def _task_beam(run: _Run) -> dict:
    L = run.links
    cfg = run.cfg
    tx = L.scene.tx
    cb = beam.build_codebook(cfg.n_beams, tx.n_elements, tx.element_spacing)
    powers, pw, pb, rows = [], [], [], []
    for i in L.keep[L.test]:
        h = cir_to_cfr(L.cirs[i], cfg.ofdm, tx)
        p = beam.beam_powers(h, cb, tx.per_element_power_dbm)
        a = beam.predict_beam(L.feats[i], cb, True)
        b = beam.predict_beam(L.feats[i], cb, False)
        powers.append(p)
        pw.append(a)
        pb.append(b)
        rows.append([int(i), int(beam.truth_ranking(p)[0]), a, b, beam.rank_of(a, p)])
    run.csv("beam.csv", ["sample_id", "true_best", "pred_wei", "pred_base", "rank_of_pred_in_truth"], rows)
    rec: dict = {"n_test": len(rows),
                 "nlos_fraction": float(np.mean([L.feats[i].los_blocked for i in L.keep[L.test]])) if rows else 0.0}
    acc_rows = []
    if rows:
        for k in (1, 3, 5):
            w, b = beam.topk_accuracy(pw, powers, k), beam.topk_accuracy(pb, powers, k)
            rec[f"top{k}"] = {"wei": w, "baseline": b}
            acc_rows += [["wei", k, w], ["baseline", k, b]]
    run.csv("beam_accuracy.csv", ["method", "k", "accuracy"], acc_rows)
    return rec


# -- task 4 ---------------------------------------------------------------------------

@dataclass
class _User:
    pos: np.ndarray
    cir: Cir
    feat: WeiFeatureVector


def _predicted_snr_db(model, feat: WeiFeatureVector, tx, noise_dbm: float) -> float:
    """Link budget with a predicted path loss and a fully aligned beam."""
    pl = predict.predict_path_loss(model, feat)
    return tx.per_element_power_dbm + 20.0 * math.log10(tx.n_elements) - pl - noise_dbm


def _predicted_rates(model, feats, tx, ofdm: OfdmConfig, T: int, R: int) -> np.ndarray:
    """Frequency-flat rate rows from predicted path loss (no small-scale knowledge)."""
    noise = alloc.noise_power_dbm(ofdm)
    out = np.empty((len(feats), T, R))
    for u, f in enumerate(feats):
        snr = 10 ** (_predicted_snr_db(model, f, tx, noise) / 10)
        out[u] = alloc.shannon_rate(snr, alloc.rb_bandwidth(ofdm))
    return out


def _true_rates(cirs, beams_w, tx, ofdm: OfdmConfig) -> np.ndarray:
    cfrs = [cir_to_cfr(c, ofdm, tx) for c in cirs]
    return alloc.compute_rates(cfrs, beams_w, ofdm, tx.total_power_dbm)


def _pick_users(scene: Scene, scfg: SceneGenConfig, cirs, n: int, rng, x_range) -> np.ndarray:
    """Rx grid points on the served carriageway segment with at least one path."""
    rx = scene.rx_array
    on_road = ((np.abs(rx[:, 1] - scfg.road_center_y) <= scfg.road_half_width)
               & (rx[:, 0] >= x_range[0]) & (rx[:, 0] <= x_range[1]))
    ok = np.flatnonzero(on_road & np.array([bool(c.paths) for c in cirs]))
    if len(ok) < n:
        raise ValueError(f"only {len(ok)} road points have a path, {n} users requested")
    return np.sort(rng.choice(ok, size=n, replace=False))


def _report_rows(rep: alloc.FairnessReport, frame_s: float):
    rows = [[u, float(t)] for u, t in enumerate(rep.throughput)]
    rows += [["t_min", rep.t_min], ["gap", rep.gap], ["variance", rep.variance], ["total", rep.total],
             ["total_bps", rep.total / frame_s]]
    return rows


def _rep_dict(rep: alloc.FairnessReport) -> dict:
    return {"t_min": rep.t_min, "gap": rep.gap, "variance": rep.variance, "total": rep.total}


def _task_allocate(run: _Run) -> dict:
    cfg = run.cfg
    ofdm = replace(cfg.ofdm, n_symbols=cfg.alloc_symbols)
    scfg = cfg.scene
    scene = run.stage("sense", generate_scene, scfg, child_seed(cfg.seed, "scene_b"))
    cirs_all = run.stage("sense", trace_many, scene, scene.rx_array, ofdm.fc_hz)
    idx = run.stage("allocate", _pick_users, scene, scfg, cirs_all, cfg.n_users,
                    np.random.default_rng(child_seed(cfg.seed, "users")), cfg.user_x_range)
    rx = scene.rx_array[idx]
    users = [_User(rx[j], cirs_all[i], extract_link_features(scene, rx[j], cirs_all[i])) for j, i in enumerate(idx)]
    tx = scene.tx
    cb = beam.build_codebook(cfg.n_beams, tx.n_elements, tx.element_spacing)
    # bits per RB = rate * symbol duration
    sym = 1.0 / ofdm.scs_hz
    frame = cfg.alloc_symbols * sym

    # true CSI: exhaustive best beam per user
    best = [beam.best_beam(cir_to_cfr(u.cir, ofdm, tx), cb, tx.per_element_power_dbm)[0] for u in users]
    d_true = run.stage("allocate", _true_rates, [u.cir for u in users], cb.weights[best], tx, ofdm) * sym
    N, T, R = d_true.shape
    rec: dict = {"n_users": N, "T": T, "R": R, "user_rx_index": idx.tolist(), "beams_true": best}

    owner_mm, _ = run.stage("allocate", alloc.solve_heuristic, d_true)
    owner_mt, _ = alloc.solve_max_total(d_true)
    mm, mt = alloc.evaluate(owner_mm, d_true), alloc.evaluate(owner_mt, d_true)
    rec["maxmin"], rec["maxtotal"] = _rep_dict(mm), _rep_dict(mt)
    rec["total_ratio"] = mm.total / mt.total if mt.total > 0 else 1.0
    run.csv("allocation.csv", ["t", "r", "owner"], [[t, r, int(owner_mm[t, r])] for t in range(T) for r in range(R)])
    run.csv("report_maxmin.csv", ["user", "throughput"], _report_rows(mm, frame))
    run.csv("report_maxtotal.csv", ["user", "throughput"], _report_rows(mt, frame))

    if float(N) ** (T * R) <= cfg.exact_alloc_limit:
        owner_ex, _ = run.stage("allocate", alloc.solve_exact, d_true, cfg.exact_alloc_limit)
        ex = alloc.evaluate(owner_ex, d_true)
        rec["exact"] = _rep_dict(ex)
        run.csv("report_exact.csv", ["user", "throughput"], _report_rows(ex, frame))
    else:
        rec["exact"] = "skipped: instance exceeds exact_alloc_limit"

    # predicted CSI: models fitted on the primary scene only
    model = run.links.models[run._tiers()[-1]]
    feats = [u.feat for u in users]
    pbeams = [beam.predict_beam(f, cb, True) for f in feats]
    d_pred = _predicted_rates(model, feats, tx, ofdm, T, R) * sym
    owner_p, _ = run.stage("allocate", alloc.solve_heuristic, d_pred)
    d_real = _true_rates([u.cir for u in users], cb.weights[pbeams], tx, ofdm) * sym
    pr = alloc.evaluate(owner_p, d_real)
    rec["predicted_csi"] = _rep_dict(pr) | {"tier": run._tiers()[-1].value, "beams": pbeams}
    run.csv("report_predicted.csv", ["user", "throughput"], _report_rows(pr, frame))

    if cfg.proactive:
        rec["proactive"] = run.stage("decide", _proactive, run, scene, users, model, cb, ofdm, sym, frame)
    return rec


@dataclass(frozen=True)
class Strategy:
    """Cached transmission strategy for one branch: a beam per user and an RB owner matrix."""

    beams: tuple[int, ...]
    owner: np.ndarray


def cache_strategies(pred_rates: dict, beams: dict) -> dict:
    """Step 4: allocate on each branch's predicted rate tensor and cache the result."""
    out = {}
    for name in pred_rates:
        owner, _ = alloc.solve_heuristic(pred_rates[name])
        out[name] = Strategy(tuple(int(b) for b in beams[name]), owner)
    return out


def _proactive(run: _Run, scene: Scene, users, model, cb, ofdm, sym, frame) -> dict:
    """Step 4 caches a strategy per branch of the served group's next move (straight,
    left, right); Step 5 draws the realized branch and applies its cached strategy,
    scored on the true CSI at the realized positions.
    """
    tx = scene.tx
    names = list(BRANCHES)
    half = run.cfg.scene.side / 2.0
    N = len(users)
    T, R = ofdm.n_symbols, ofdm.n_subcarriers // alloc.RB_SUBCARRIERS
    cands = np.array([u.pos + np.array([dx, dy, 0.0]) for dx, dy in BRANCHES.values() for u in users])
    inside = points_in_boxes(cands, scene.box_array).any(axis=1)
    valid = ~inside & np.all(np.abs(cands[:, :2]) <= half, axis=1)
    traced = iter(trace_many(scene, cands[valid], ofdm.fc_hz))
    links = {}
    for k, ok in enumerate(valid):
        b, u = divmod(k, N)
        # an unreachable branch position keeps the user where it is
        links[names[b], u] = (cands[k], next(traced)) if ok else (users[u].pos, users[u].cir)
    feats = {key: extract_link_features(scene, pos, cir) for key, (pos, cir) in links.items()}
    pred, beams = {}, {}
    for name in names:
        fs = [feats[name, u] for u in range(N)]
        pred[name] = _predicted_rates(model, fs, tx, ofdm, T, R) * sym
        beams[name] = [beam.predict_beam(f, cb, True) for f in fs]
    cache = cache_strategies(pred, beams)

    rng = np.random.default_rng(child_seed(run.cfg.seed, "branches"))
    realized = names[int(rng.integers(len(names)))]
    st = cache[realized]
    d_real = _true_rates([links[realized, u][1] for u in range(N)], cb.weights[list(st.beams)], tx, ofdm) * sym
    rep = alloc.evaluate(st.owner, d_real)
    run.csv("proactive_branches.csv", ["branch", "user", "x", "y", "beam", "pred_rb_bits", "rbs_owned", "realized"],
            [[name, u, float(links[name, u][0][0]), float(links[name, u][0][1]), cache[name].beams[u],
              float(pred[name][u, 0, 0]), int(np.sum(cache[name].owner == u)), int(name == realized)]
             for name in names for u in range(N)])
    run.csv("report_proactive.csv", ["user", "throughput"], _report_rows(rep, frame))
    return _rep_dict(rep) | {"realized": realized, "unreachable": int((~valid).sum())}


_TASK_FN = {1: _task_coverage, 2: _task_predict, 3: _task_beam, 4: _task_allocate}


def run_task(config: RunConfig, task_id: int, _run: _Run | None = None) -> dict:
    if task_id not in _TASK_FN:
        raise ValueError(f"unknown task id {task_id}")
    run = _run or _Run(config)
    name = TASK_NAMES[task_id]
    return run.stage(name, _TASK_FN[task_id], run)


def run_loop(config: RunConfig) -> RunReport:
    """Run the requested tasks in order and write ``report.json`` next to the CSVs."""
    run = _Run(config)
    t0 = time.perf_counter()
    for t in sorted(set(config.tasks)):
        logger.info("task %d (%s)", t, TASK_NAMES[t])
        run.report.records[TASK_NAMES[t]] = run_task(config, t, run)
    run.report.timing["total"] = time.perf_counter() - t0
    run.out.mkdir(parents=True, exist_ok=True)
    (run.out / "report.json").write_text(run.report.to_json() + "\n", encoding="utf-8")
    return run.report
