"""
연구(study) 실행: 주 단위 분할, 실행 모드 구성, 체인 실행, 보간, 결과 묶음 저장.

kind
  single        패널 전체로 체인 한 번 (주별 커버리지 없음)
  weekly        168시간 주마다 독립 실행
  full-span     패널 전체로 한 번, 커버리지는 전체 + 주별
  fixed-lambda  full-span 과 같되 k 주차에는 λ*_k 로 고정
  tau-scaled    γ 의 τ 를 T_weeks 로 나눈 full-span (λ* 목록이 있으면 고정 λ)
"""
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from classes import DEFAULT_WEEKLY_LAMBDA_STAR, ModelConfig, RunConfig, StudySpec
from diagnostics import Diagnostics, diagnostics
from errors import ConfigError, ContractError, DlmError, EmptyReportError
from gibbs_sampler import FULL_MH, ChainMode, ChainSnapshot, PosteriorDraws, run_chain
from ingest import ingest
from interpolator import (
    WEEK_HOURS,
    CoverageReport,
    PredictiveSeries,
    UngaugedSite,
    coverage,
    make_ungauged_site,
    predict_site,
)
from model_core import ObservationPanel, StationSet, scale_gamma_for_span
from run_manifest import (
    append_run_log,
    config_hash,
    mark_partial,
    prepare_run_dir,
    read_manifest,
    require_complete,
    run_dir_for,
    sha256_of_file,
    write_manifest,
    write_timing,
)
from save_draws import load_draws, load_states, save_draws, save_states

logger = logging.getLogger(__name__)


# -----------------------------------------------------------
#  [데이터 모델 정의]
# -----------------------------------------------------------

@dataclass(frozen=True)
class RunPlan:
    label: str
    start: int                  # 패널 열 구간 [start, stop)
    stop: int
    week: Optional[int]         # weekly 실행이면 1부터의 주 번호
    mode: ChainMode
    model: ModelConfig
    weekly_coverage: bool = False
    lambda_star: Optional[Tuple[float, ...]] = None

    @property
    def hours(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class Target:
    site: UngaugedSite
    truth_index: Optional[int] = None   # held-out 관측소면 원래 패널의 행 번호


@dataclass
class RunOutcome:
    plan: RunPlan
    draws: PosteriorDraws
    diagnostics: Diagnostics
    predictive: Dict[str, PredictiveSeries] = field(default_factory=dict)
    coverage: CoverageReport = field(default_factory=CoverageReport)


@dataclass
class StudyResult:
    run_dir: Path
    config_hash: str
    outcomes: List[RunOutcome]
    manifest: Dict

    @property
    def coverage(self) -> CoverageReport:
        report = CoverageReport()
        for o in self.outcomes:
            report.rows.extend(o.coverage.rows)
        return report


# -----------------------------------------------------------
#  [실행 계획]
# -----------------------------------------------------------

def week_slices(T: int, week_hours: int = WEEK_HOURS) -> List[Tuple[int, int]]:
    """패널 시작부터 week_hours 씩 자른 [start, stop) 목록. 마지막 주는 짧을 수 있습니다."""
    if T < 1:
        raise ContractError(f"T 는 1 이상이어야 합니다: {T}")
    return [(s, min(s + week_hours, T)) for s in range(0, T, week_hours)]


def resolve_lambda_star(study: StudySpec, n_weeks: int, required: bool = True) -> Optional[Tuple[float, ...]]:
    values = study.lambda_star
    if values is None and n_weeks == len(DEFAULT_WEEKLY_LAMBDA_STAR):
        values = DEFAULT_WEEKLY_LAMBDA_STAR
    if values is None:
        if required:
            raise ConfigError(f"fixed-lambda 실행에는 주마다 λ* 값이 필요합니다 (주 수 {n_weeks}).")
        return None
    if len(values) != n_weeks:
        raise ConfigError(f"λ* 목록 길이 {len(values)} 가 주 수 {n_weeks} 와 다릅니다.")
    return tuple(float(v) for v in values)


def lambda_schedule(values: Sequence[float], slices: Sequence[Tuple[int, int]]) -> np.ndarray:
    """k 주차의 모든 열에 λ*_k 를 배치한 (T,) 배열"""
    return np.concatenate([np.full(stop - start, lam) for (start, stop), lam in zip(slices, values)])


def plan_runs(cfg: RunConfig, T: int) -> List[RunPlan]:
    study = cfg.study
    slices = week_slices(T)
    kind = study.kind

    if kind == "weekly":
        return [
            RunPlan(f"week{k + 1:02d}", start, stop, k + 1, FULL_MH, cfg.model)
            for k, (start, stop) in enumerate(slices)
        ]
    if kind == "single":
        return [RunPlan("single", 0, T, None, FULL_MH, cfg.model)]
    if kind == "full-span":
        return [RunPlan("full-span", 0, T, None, FULL_MH, cfg.model, weekly_coverage=True)]
    if kind == "fixed-lambda":
        values = resolve_lambda_star(study, len(slices))
        mode = ChainMode.fixed(lambda_schedule(values, slices))
        return [RunPlan("fixed-lambda", 0, T, None, mode, cfg.model, weekly_coverage=True, lambda_star=values)]
    if kind == "tau-scaled":
        t_weeks = study.t_weeks or len(slices)
        model = cfg.model.with_gamma(scale_gamma_for_span(cfg.model.gamma, t_weeks))
        values = resolve_lambda_star(study, len(slices), required=False)
        if values is None:
            logger.info("💡 λ* 목록이 없어 tau-scaled 실행은 λ 를 MH 로 추정합니다.")
            mode = FULL_MH
        else:
            mode = ChainMode.fixed(lambda_schedule(values, slices))
        return [RunPlan("tau-scaled", 0, T, None, mode, model, weekly_coverage=True, lambda_star=values)]
    raise ConfigError(f"알 수 없는 study.kind: {kind}")


### 보조
def _seed_tree(seed: int, n_plans: int, chains: int, n_targets: int):
    # 실행 > (체인들, 보간 지점들) 순서로 독립 난수 흐름을 나눔
    out = []
    for plan_seq in np.random.SeedSequence(seed).spawn(n_plans):
        chain_parent, predict_parent = plan_seq.spawn(2)
        out.append((chain_parent.spawn(chains), predict_parent.spawn(n_targets)))
    return out


def build_targets(cfg: RunConfig, stations: StationSet, gauged: StationSet) -> List[Target]:
    targets = []
    for site_id in cfg.ungauged:
        if site_id not in stations.ids:
            raise ConfigError(f"ungauged 관측소 '{site_id}' 가 관측소 파일에 없습니다.")
        idx = stations.index(site_id)
        targets.append(Target(make_ungauged_site(gauged, site_id, stations.coords[idx]), truth_index=idx))
    for ps in cfg.prediction_sites:
        if ps.id in stations.ids:
            raise ConfigError(f"prediction_sites id '{ps.id}' 가 관측소 id 와 겹칩니다.")
        targets.append(Target(make_ungauged_site(gauged, ps.id, ps.coord)))
    return targets


def split_gauged(cfg: RunConfig, stations: StationSet, panel: ObservationPanel):
    gauged_ids = [s for s in stations.ids if s not in set(cfg.ungauged)]
    if not gauged_ids:
        raise ConfigError("모든 관측소가 ungauged 로 지정되어 적합에 쓸 관측소가 없습니다.")
    return stations.subset(gauged_ids), panel.sites(gauged_ids)


def truncate_weeks(cfg: RunConfig, panel: ObservationPanel) -> ObservationPanel:
    if cfg.study.weeks is None:
        return panel
    stop = min(panel.T, cfg.study.weeks * WEEK_HOURS)
    return panel.columns(0, stop)


# -----------------------------------------------------------
#  [실행]
# -----------------------------------------------------------

### 보조
def _run_one_chain(panel, stations, plan: RunPlan, seq, thin, progress, label) -> PosteriorDraws:
    return run_chain(
        panel, stations, plan.model,
        mode=plan.mode,
        rng=np.random.default_rng(seq),
        thin=thin,
        progress=progress,
        label=label,
    )


def predict_targets(
    plan: RunPlan,
    snapshots: Sequence[ChainSnapshot],
    t_index: np.ndarray,
    gauged: StationSet,
    truth_panel: ObservationPanel,
    targets: Sequence[Target],
    site_seqs,
    levels: Sequence[float],
) -> Tuple[Dict[str, PredictiveSeries], CoverageReport]:
    """한 실행의 스냅샷으로 모든 대상 지점을 보간하고 held-out 관측소의 커버리지를 계산합니다."""
    predictive: Dict[str, PredictiveSeries] = {}
    report = CoverageReport()
    for target, seq in zip(targets, site_seqs):
        series = predict_site(snapshots, t_index, gauged, target.site, plan.model, np.random.default_rng(seq))
        predictive[target.site.id] = series
        if target.truth_index is None:
            continue

        truth = truth_panel.y[target.truth_index]
        truth_mask = truth_panel.mask[target.truth_index]
        try:
            part = coverage(series, truth, truth_mask, levels, week_hours=WEEK_HOURS if plan.weekly_coverage else None)
        except EmptyReportError as e:
            logger.warning(f"⚠️ [{plan.label}] 커버리지 계산 생략: {e}")
            continue
        if plan.week is not None:
            part.rows = [replace(r, week=plan.week) for r in part.rows]
        report.extend(part)
    return predictive, report


# 주요 함수
def execute_plans(
    cfg: RunConfig,
    plans: Sequence[RunPlan],
    gauged: StationSet,
    fit_panel: ObservationPanel,
    truth_panel: ObservationPanel,
    targets: Sequence[Target],
) -> List[RunOutcome]:
    """
    모든 (실행, 체인) 을 작업자 풀에 보내고 결과를 실행별로 합칩니다.
    난수 흐름이 미리 나뉘어 있어 작업자 수와 관계없이 결과가 같습니다.
    """
    seeds = _seed_tree(cfg.model.seed, len(plans), cfg.chains, len(targets))
    jobs = []
    for plan, (chain_seqs, _) in zip(plans, seeds):
        panel_k = fit_panel.columns(plan.start, plan.stop)
        for c, seq in enumerate(chain_seqs):
            label = plan.label if cfg.chains == 1 else f"{plan.label}-c{c + 1}"
            jobs.append(delayed(_run_one_chain)(panel_k, gauged, plan, seq, cfg.thin, cfg.progress, label))

    logger.info(f"💡 실행 {len(plans)}개 x 체인 {cfg.chains}개 = 작업 {len(jobs)}개 (workers={cfg.n_workers or 1})")
    results = Parallel(n_jobs=cfg.n_workers or 1, prefer="threads")(jobs)

    outcomes = []
    for k, (plan, (_, site_seqs)) in enumerate(zip(plans, seeds)):
        parts = results[k * cfg.chains:(k + 1) * cfg.chains]
        draws = PosteriorDraws.merge(parts)
        draws.label = plan.label
        diag = diagnostics(draws, max_lag=cfg.max_lag)

        predictive, report = {}, CoverageReport()
        if targets:
            truth_k = truth_panel.columns(plan.start, plan.stop)
            predictive, report = predict_targets(
                plan, draws.snapshots, truth_k.t_index, gauged, truth_k, targets, site_seqs, cfg.levels,
            )
        outcomes.append(RunOutcome(plan, draws, diag, predictive, report))
        logger.info(f"✅ [{plan.label}] 완료: acceptance={draws.acceptance_rate:.2f}, 표본 {draws.n_kept}개")
    return outcomes


# -----------------------------------------------------------
#  [결과 저장]
# -----------------------------------------------------------

### 보조
def _to_csv(frame: pd.DataFrame, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")


def write_diagnostics(run_dir: Path, labelled: Sequence[Tuple[str, Diagnostics]]):
    summaries = []
    for label, diag in labelled:
        _to_csv(diag.acf_frame(), run_dir / "diagnostics" / f"{label}_acf.csv")
        _to_csv(diag.trace_frame(), run_dir / "diagnostics" / f"{label}_trace.csv")
        frame = diag.summary_frame()
        frame.insert(0, "run", label)
        frame["acceptance_rate"] = diag.acceptance_rate
        summaries.append(frame)
    _to_csv(pd.concat(summaries, ignore_index=True), run_dir / "posterior_summary.csv")


def write_predictions(run_dir: Path, outcomes: Sequence[RunOutcome], levels: Sequence[float]):
    frames = []
    for o in outcomes:
        for site_id, series in o.predictive.items():
            _to_csv(series.summarize(levels), run_dir / "predictive" / f"{o.plan.label}_{site_id}.csv")
        frame = o.coverage.to_frame()
        frame.insert(0, "run", o.plan.label)
        frames.append(frame)
    if frames:
        _to_csv(pd.concat(frames, ignore_index=True), run_dir / "coverage.csv")


def _timing(outcomes: Sequence[RunOutcome]) -> Dict:
    # 실행별 수용률과 소요 시간
    runs = []
    for o in outcomes:
        total = float(np.sum(o.draws.iteration_seconds))
        runs.append({
            "run": o.plan.label,
            "acceptance_rate": o.draws.acceptance_rate,
            "total_seconds": total,
            "seconds_per_iteration": total / o.draws.iterations if o.draws.iterations else 0.0,
            "iterations": o.draws.iterations,
        })
    return {"runs": runs, "total_seconds": float(sum(r["total_seconds"] for r in runs))}


def build_manifest(
    cfg: RunConfig,
    digest: str,
    stations: StationSet,
    panel: ObservationPanel,
    plans: Sequence[RunPlan],
    outcomes: Sequence[RunOutcome],
    targets: Sequence[Target],
) -> Dict:
    runs = []
    for plan, o in zip(plans, outcomes):
        runs.append({
            "run": plan.label,
            "week": plan.week,
            "t_first": int(panel.t_index[plan.start]),
            "t_last": int(panel.t_index[plan.stop - 1]),
            "hours": plan.hours,
            "mode": plan.mode.kind,
            "lambda_star": list(plan.lambda_star) if plan.lambda_star else None,
            "gamma": plan.model.gamma.model_dump(),
            "chains": cfg.chains,
            "iterations": o.draws.iterations,
            "burn_in": plan.model.burn_in,
            "accept_count": o.draws.accept_count,
            "acceptance_rate": o.draws.acceptance_rate,
            "n_kept": o.draws.n_kept,
            "n_snapshots": len(o.draws.snapshots),
        })
    return {
        "config_hash": digest,
        "seed": cfg.model.seed,
        "study": cfg.study.kind,
        "metric": stations.metric,
        "T": panel.T,
        "week_hours": WEEK_HOURS,
        "gamma_ingested": cfg.model.gamma.model_dump(),
        "gamma": plans[0].model.gamma.model_dump(),
        "ungauged": [t.site.id for t in targets if t.truth_index is not None],
        "prediction_sites": [t.site.id for t in targets if t.truth_index is None],
        "outside_hull": [t.site.id for t in targets if not t.site.in_hull],
        "inputs": {
            "stations_sha256": sha256_of_file(Path(cfg.stations_path)),
            "observations_sha256": sha256_of_file(Path(cfg.observations_path)),
        },
        "runs": runs,
        "config": cfg.semantic_dump(),
        "status": "complete",
    }


# 주요 함수
def run_study(
    cfg: RunConfig,
    stations: Optional[StationSet] = None,
    panel: Optional[ObservationPanel] = None,
) -> StudyResult:
    """
    설정 하나로 연구 전체를 실행하고 <output_dir>/runs/<hash[:12]>/ 에 결과를 씁니다.
    실패하면 PARTIAL 파일을 남기고 예외를 다시 던집니다.
    """
    digest = config_hash(cfg)
    run_dir = prepare_run_dir(run_dir_for(cfg))
    logger.info(f"💡 study={cfg.study.kind}, seed={cfg.model.seed}, run dir={run_dir}")

    try:
        if stations is None or panel is None:
            stations, panel = ingest(cfg.stations_path, cfg.observations_path)
        panel = truncate_weeks(cfg, panel)
        gauged, fit_panel = split_gauged(cfg, stations, panel)
        targets = build_targets(cfg, stations, gauged)
        plans = plan_runs(cfg, panel.T)
        if targets and (cfg.model.iterations - cfg.model.burn_in) < cfg.thin:
            raise ConfigError(
                f"burn-in 이후 반복 {cfg.model.iterations - cfg.model.burn_in} 회가 thin={cfg.thin} 보다 적어 보간용 스냅샷이 없습니다."
            )

        outcomes = execute_plans(cfg, plans, gauged, fit_panel, panel, targets)

        for o in outcomes:
            save_draws(run_dir / "draws" / f"{o.plan.label}.jsonl", o.draws)
            if cfg.save_states:
                save_states(run_dir / "states" / f"{o.plan.label}.jsonl", o.draws.snapshots, o.plan.label)
        write_diagnostics(run_dir, [(o.plan.label, o.diagnostics) for o in outcomes])
        write_predictions(run_dir, outcomes, cfg.levels)

        manifest = build_manifest(cfg, digest, stations, panel, plans, outcomes, targets)
        write_manifest(run_dir, manifest)
        write_timing(run_dir, _timing(outcomes))
    except DlmError as e:
        mark_partial(run_dir, e)
        append_run_log(cfg.output_dir, digest[:12], f"{cfg.study.kind} 실패: {e}", status="partial")
        raise

    append_run_log(cfg.output_dir, digest[:12], f"{cfg.study.kind}, 실행 {len(outcomes)}개", status="complete")
    logger.info(f"✅ 연구 완료: {run_dir}")
    return StudyResult(run_dir, digest, outcomes, manifest)


def interpolate_from(cfg: RunConfig, run_dir) -> CoverageReport:
    """저장된 상태 스냅샷(states/*.jsonl)으로 보간과 커버리지를 다시 계산합니다."""
    run_dir = require_complete(run_dir)
    manifest = read_manifest(run_dir)
    digest = config_hash(cfg)
    if manifest.get("config_hash") != digest:
        raise ConfigError(f"설정 hash 가 실행 폴더와 다릅니다: {digest[:12]} != {str(manifest.get('config_hash'))[:12]}")

    stations, panel = ingest(cfg.stations_path, cfg.observations_path)
    panel = truncate_weeks(cfg, panel)
    gauged, _ = split_gauged(cfg, stations, panel)
    targets = build_targets(cfg, stations, gauged)
    plans = plan_runs(cfg, panel.T)
    seeds = _seed_tree(cfg.model.seed, len(plans), cfg.chains, len(targets))

    outcomes = []
    for plan, (_, site_seqs) in zip(plans, seeds):
        states_path = run_dir / "states" / f"{plan.label}.jsonl"
        if not states_path.is_file():
            raise ConfigError(f"상태 스냅샷이 없습니다 (save_states=true 로 실행해야 합니다): {states_path}")
        snapshots = load_states(states_path)
        draws = load_draws(run_dir / "draws" / f"{plan.label}.jsonl")
        truth_k = panel.columns(plan.start, plan.stop)
        predictive, report = predict_targets(
            plan, snapshots, truth_k.t_index, gauged, truth_k, targets, site_seqs, cfg.levels,
        )
        outcomes.append(RunOutcome(plan, draws, Diagnostics(), predictive, report))

    write_predictions(run_dir, outcomes, cfg.levels)
    logger.info(f"✅ 보간 재실행 완료: {run_dir}")
    report = CoverageReport()
    for o in outcomes:
        report.extend(o.coverage)
    return report


def diagnostics_from(run_dir, max_lag: int = 40) -> Dict[str, Diagnostics]:
    """draws/*.jsonl 로 진단을 다시 계산해 diagnostics/ 와 posterior_summary.csv 를 새로 씁니다."""
    run_dir = require_complete(run_dir)
    manifest = read_manifest(run_dir)
    labels = [r["run"] for r in manifest.get("runs", [])]
    if not labels:
        raise ContractError(f"manifest 에 실행 기록이 없습니다: {run_dir}")

    out = {label: diagnostics(load_draws(run_dir / "draws" / f"{label}.jsonl"), max_lag=max_lag) for label in labels}
    write_diagnostics(run_dir, list(out.items()))
    return out
