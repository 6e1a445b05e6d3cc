"""
리포터
평가 표 (2NEX-avg 행 포함), CSV/JSON 리포트, 콘솔 출력,
학습 기록 CSV, 8비트 그레이스케일 PNG, 비교 패널 (8-NEX / 2NEX-avg / 디노이즈 / 잔차),
잡음 통계 파일
"""
import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from PIL import Image

import config
import storage
from errors import ShapeError
from metrics import MetricsRecord
from simulators import NoiseReport, rayleigh_pdf
from trainer import TrainingHistory

logger = config.setup_logger(__name__)

SUMMARY_COLUMNS = ["method", "plane", "n_slices", "identical",
                   "PSNR mean", "PSNR std", "SSIM mean", "SSIM std", "PSNR", "SSIM"]


# ==============================================
# 표
# ==============================================

def summary_frame(rows: Sequence[dict], intensity_scale: float, loss_form: str) -> pd.DataFrame:
    """요약 행 → DataFrame (배율과 손실 형태를 열로 포함)"""
    df = pd.DataFrame(list(rows))
    df["intensity_scale"] = intensity_scale
    df["loss_form"] = loss_form
    ordered = [c for c in SUMMARY_COLUMNS if c in df.columns]
    return df[ordered + [c for c in df.columns if c not in ordered]]


def records_frame(records: Sequence[MetricsRecord], intensity_scale: float,
                  loss_form: str) -> pd.DataFrame:
    return summary_frame([r.summary_row() for r in records], intensity_scale, loss_form)


def slice_frame(records: Sequence[MetricsRecord]) -> pd.DataFrame:
    """슬라이스별 지표 (긴 형식)"""
    rows = [{"method": r.method, "plane": r.plane, "slice": s.slice_id,
             "PSNR": s.psnr, "SSIM": s.ssim}
            for r in records for s in r.slices]
    return pd.DataFrame(rows, columns=["method", "plane", "slice", "PSNR", "SSIM"])


def plane_table(frame: pd.DataFrame) -> pd.DataFrame:
    """평면별 표: 행 = 메서드, 열 = (지표, 평면)"""
    table = frame.set_index(["method", "plane"])[["PSNR", "SSIM"]].unstack("plane")
    planes = [p for p in config.IMAGING_PLANES if p in frame["plane"].unique()]
    return table.reindex(columns=pd.MultiIndex.from_product([["PSNR", "SSIM"], planes]))


def format_console_table(frame: pd.DataFrame, title: str = "") -> str:
    columns = [c for c in ("method", "plane", "PSNR", "SSIM") if c in frame.columns]
    body = frame[columns].to_string(index=False)
    if not title:
        return body
    line = "=" * max(len(title), max(len(l) for l in body.splitlines()))
    return f"{line}\n{title}\n{line}\n{body}\n{line}"


def write_table(frame: pd.DataFrame, out_dir: str, name: str) -> List[str]:
    """CSV 와 JSON (records) 사본을 함께 저장"""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{name}.csv")
    json_path = os.path.join(out_dir, f"{name}.json")
    frame.to_csv(csv_path, index=False, float_format="%.10g")
    frame.to_json(json_path, orient="records", indent=2, force_ascii=False, double_precision=10)
    logger.info(f"📄 리포트 저장: {csv_path}")
    return [csv_path, json_path]


def history_frame(history: TrainingHistory) -> pd.DataFrame:
    return pd.DataFrame(history.to_rows(),
                        columns=["epoch", "train_loss", "val_loss", "lr", "wall_time"])


def write_history(history: TrainingHistory, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "history.csv")
    history_frame(history).to_csv(path, index=False, float_format="%.10g")
    return path


# ==============================================
# 영상 내보내기
# ==============================================

def to_uint8(image: np.ndarray, scale: float) -> np.ndarray:
    """단일 배율로 [0, 255] 8비트 변환 (범위 밖은 잘라냄)"""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * scale), 0, 255).astype(np.uint8)


def export_png(image: np.ndarray, path: str, scale: float = 1.0) -> str:
    """육안 확인용 그레이스케일 PNG (다시 읽지 않음)"""
    if image.ndim != 2:
        raise ValueError(f"2D 영상만 내보낼 수 있습니다: {image.shape}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(to_uint8(image, scale)).save(path)
    return path


def auto_scale(image: np.ndarray) -> float:
    peak = float(np.max(image))
    return config.PEAK_VALUE / peak if peak > 0 else 1.0


# ==============================================
# 비교 패널 (8-NEX / 2NEX-avg / 디노이즈 / 잔차)
# ==============================================

COMPARISON_PANELS = ("truth", "average", "denoised", "average_residual", "denoised_residual")


def comparison_stack(truth: np.ndarray, average: np.ndarray, denoised: np.ndarray) -> np.ndarray:
    """[5, H, W]: 8-NEX, 2NEX-avg, 디노이즈, 2NEX-avg − 8-NEX, 디노이즈 − 8-NEX"""
    truth, average, denoised = (np.asarray(a, dtype=np.float64) for a in (truth, average, denoised))
    if truth.ndim != 2 or average.shape != truth.shape or denoised.shape != truth.shape:
        raise ShapeError(f"비교 패널 shape 불일치: {truth.shape} / {average.shape} / {denoised.shape}")
    return np.stack([truth, average, denoised, average - truth, denoised - truth])


def comparison_montage(stack: np.ndarray) -> np.ndarray:
    """
    가로로 이어 붙인 5 패널 영상 (0~255 범위)

    크기 패널 3개는 같은 배율, 잔차 패널 2개는 |잔차| 를 같은 배율로 표시합니다.
    """
    magnitudes, residuals = stack[:3], np.abs(stack[3:])
    panels = [m * auto_scale(magnitudes) for m in magnitudes]
    panels += [r * auto_scale(residuals) for r in residuals]
    return np.concatenate(panels, axis=1)


def write_comparison(stack: np.ndarray, out_dir: str, name: str, export_images: bool = False,
                     meta: Optional[dict] = None) -> List[str]:
    """비교 패널 컨테이너 (+ 몽타주 PNG)"""
    path = storage.write_container(os.path.join(out_dir, name + storage.CONTAINER_SUFFIX), stack,
                                   role="compare/panels",
                                   meta={"panels": list(COMPARISON_PANELS), **(meta or {})})
    paths = [path]
    if export_images:
        paths.append(export_png(comparison_montage(stack), os.path.join(out_dir, f"{name}.png")))
    return paths


# ==============================================
# 잡음 통계 파일
# ==============================================

def histogram_frame(edges: np.ndarray, counts: np.ndarray, pdf: Optional[np.ndarray] = None) -> pd.DataFrame:
    """구간별 빈도와 (선택) 적합 밀도를 같은 단위의 기대 빈도로 함께 기록"""
    centers = 0.5 * (edges[:-1] + edges[1:])
    frame = pd.DataFrame({"left": edges[:-1], "right": edges[1:], "center": centers, "count": counts})
    if pdf is not None:
        frame["fit_count"] = pdf * counts.sum() * np.diff(edges)
    return frame


def write_noise_report(report: NoiseReport, gfactor: np.ndarray, out_dir: str,
                       panels: Optional[Dict[str, np.ndarray]] = None,
                       export_images: bool = False) -> List[str]:
    """
    잡음 통계 출력
        noise_histogram.csv      |n| 히스토그램 + Rayleigh 적합
        squared_histogram.csv    |n|² 히스토그램 + 비중심 χ² 적합
        variance_map.nxd         평균 3×3 국소 분산 맵
        noise_stats.csv/json     적합 파라미터와 진단값
        panels/*.nxd (+ .png)    슬라이스별 신호 강화 / 잡음 크기 영상
    """
    paths = []
    os.makedirs(out_dir, exist_ok=True)

    edges, counts = report.noise_hist
    noise_hist = histogram_frame(edges, counts, rayleigh_pdf(0.5 * (edges[:-1] + edges[1:]), report.sigma_hat))
    path = os.path.join(out_dir, "noise_histogram.csv")
    noise_hist.to_csv(path, index=False, float_format="%.10g")
    paths.append(path)

    edges, counts = report.squared_hist
    squared_hist = histogram_frame(edges, counts, report.chi2.pdf(0.5 * (edges[:-1] + edges[1:])))
    path = os.path.join(out_dir, "squared_histogram.csv")
    squared_hist.to_csv(path, index=False, float_format="%.10g")
    paths.append(path)

    paths.append(storage.write_container(os.path.join(out_dir, "variance_map" + storage.CONTAINER_SUFFIX),
                                         report.variance_map, role="noise/variance_map"))
    paths.extend(write_table(pd.DataFrame([report.summary()]), out_dir, "noise_stats"))

    if export_images:
        paths.append(export_png(report.variance_map, os.path.join(out_dir, "variance_map.png"),
                                auto_scale(report.variance_map)))
        g2 = np.asarray(gfactor, dtype=np.float64) ** 2
        paths.append(export_png(g2, os.path.join(out_dir, "gfactor2.png"), auto_scale(g2)))

    for name, image in (panels or {}).items():
        paths.append(storage.write_container(
            os.path.join(out_dir, "panels", name + storage.CONTAINER_SUFFIX), image, role=f"noise/{name}"))
        if export_images:
            paths.append(export_png(image, os.path.join(out_dir, "panels", f"{name}.png"), auto_scale(image)))
    return paths
