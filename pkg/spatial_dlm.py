#!/usr/bin/env python3
"""
시공간 DLM 명령행 도구.

    python spatial_dlm.py ingest-check --config run_config.json
    python spatial_dlm.py run --config run_config.json [--seed 1] [--out output] [--mode weekly]
    python spatial_dlm.py interpolate --config run_config.json [--from output/runs/<hash>]
    python spatial_dlm.py analytic [--sigma-beta2 0.01 --sigma-delta2 0.0002 ...] [--points 101] [--out dir]
    python spatial_dlm.py diagnostics [--from output/runs/<hash> | --out output] [--max-lag 40]

종료 코드: 0 성공, 2 설정 오류, 3 입력 파일 오류, 4 수치 오류
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

import analytic
from base_dir import BASE_OUTPUT_DIR, LOG_LEVEL
from classes import load_run_config
from errors import DlmError
from ingest import ingest
from run_manifest import latest_run_dir
from study import diagnostics_from, interpolate_from, run_study

logger = logging.getLogger("spatial_dlm")

STUDY_KINDS = ("single", "weekly", "full-span", "fixed-lambda", "tau-scaled")


def cmd_ingest_check(args) -> int:
    cfg = load_run_config(args.config)
    stations, panel = ingest(cfg.stations_path, cfg.observations_path)
    print(json.dumps({
        "n": panel.n,
        "T": panel.T,
        "t_first": int(panel.t_index[0]),
        "t_last": int(panel.t_index[-1]),
        "missing_fraction": panel.missing_fraction,
        "fully_missing_hours": int(panel.fully_missing.sum()),
        "metric": stations.metric,
        "sites": list(stations.ids),
    }, indent=4, ensure_ascii=False))
    return 0


def cmd_run(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, out=args.out, mode=args.mode)
    if args.workers is not None:
        cfg = cfg.model_copy(update={"n_workers": args.workers})
    result = run_study(cfg)
    print(f"✅ {result.run_dir}")
    return 0


def cmd_interpolate(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed, out=args.out, mode=args.mode)
    run_dir = args.run_dir or latest_run_dir(cfg.output_dir)
    report = interpolate_from(cfg, run_dir)
    print(report.to_frame().to_string(index=False))
    return 0


def cmd_analytic(args) -> int:
    base = analytic.make_params(args.sigma_beta2, args.sigma_delta2, args.sigma_eps2, args.lam, args.d01)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    d_values = np.linspace(0.0, args.d01_max, args.points)
    grid = analytic.variance_grid(base, d_values)
    grid.to_csv(out / "variance_grid.csv", index=False, lineterminator="\n")

    summary = {
        "params": base.model_dump(),
        "theorem1": analytic.theorem1(base).as_dict(),
        "theorem2_gaps": analytic.theorem2_gaps(base).as_dict(),
        "reduction_t2_rho_squared": analytic.reduction_t2_rho_squared(base),
        "paradox_threshold": analytic.paradox_threshold(base.sigma_beta2, base.sigma_delta2),
        "paradox": analytic.corollary2_paradox(base),
        "partials": analytic.variance_partials(base),
        "reference_partials": analytic.reference_partials(base),
    }
    (out / "analytic_summary.json").write_text(
        json.dumps(summary, indent=4, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    print(f"✅ 분산 표 {len(grid)}행 -> {out}")
    print(f"💡 역설 임계값 σ_ε² > {summary['paradox_threshold']:.6g} (현재 σ_ε²={base.sigma_eps2:g}, 역설={summary['paradox']})")
    return 0


def cmd_diagnostics(args) -> int:
    run_dir = args.run_dir or latest_run_dir(args.out)
    out = diagnostics_from(run_dir, max_lag=args.max_lag)
    for label, diag in out.items():
        print(f"[{label}] acceptance={diag.acceptance_rate:.2f}, max_lag={diag.max_lag}")
        print(diag.summary_frame().to_string(index=False))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="시공간 DLM: 적합, 미관측 지점 보간, 커버리지, 해석적 분산")
    sub = parser.add_subparsers(dest="cmd")

    def add_run_flags(p):
        p.add_argument("--config", "-c", required=True, help="실행 설정 JSON 파일")
        p.add_argument("--seed", type=int, default=None, help="model.seed 덮어쓰기")
        p.add_argument("--out", default=None, help="output_dir 덮어쓰기")
        p.add_argument("--mode", choices=STUDY_KINDS, default=None, help="study.kind 덮어쓰기")

    p_check = sub.add_parser("ingest-check", help="입력 파일 검사 (패널 크기, 결측 비율, 거리 척도)")
    p_check.add_argument("--config", "-c", required=True)
    p_check.set_defaults(func=cmd_ingest_check)

    p_run = sub.add_parser("run", help="연구 전체 실행")
    add_run_flags(p_run)
    p_run.add_argument("--workers", type=int, default=None, help="작업자 수 (결과에는 영향 없음)")
    p_run.set_defaults(func=cmd_run)

    p_interp = sub.add_parser("interpolate", help="저장된 상태로 보간 다시 실행")
    add_run_flags(p_interp)
    p_interp.add_argument("--from", dest="run_dir", default=None, help="runs/<hash> 폴더 (생략하면 output_dir 의 최신 실행)")
    p_interp.set_defaults(func=cmd_interpolate)

    p_an = sub.add_parser("analytic", help="1차 다항 DLM 예측분산 표")
    p_an.add_argument("--sigma-beta2", type=float, default=0.01)
    p_an.add_argument("--sigma-delta2", type=float, default=0.0002)
    p_an.add_argument("--sigma-eps2", type=float, default=0.6)
    p_an.add_argument("--lam", type=float, default=50.0)
    p_an.add_argument("--d01", type=float, default=20.0)
    p_an.add_argument("--d01-max", type=float, default=200.0)
    p_an.add_argument("--points", type=int, default=101)
    p_an.add_argument("--out", default=str(BASE_OUTPUT_DIR / "analytic"))
    p_an.set_defaults(func=cmd_analytic)

    p_diag = sub.add_parser("diagnostics", help="draws 로 진단 다시 계산")
    p_diag.add_argument("--from", dest="run_dir", default=None, help="runs/<hash> 폴더 (생략하면 --out 의 최신 실행)")
    p_diag.add_argument("--out", default=str(BASE_OUTPUT_DIR), help="run_log.json 이 있는 output 폴더")
    p_diag.add_argument("--max-lag", type=int, default=40)
    p_diag.set_defaults(func=cmd_diagnostics)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "func", None):
        parser.print_help()
        return 2

    try:
        return args.func(args)
    except DlmError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
