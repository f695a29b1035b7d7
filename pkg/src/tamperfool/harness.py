"""Experiment orchestration over datasets, localizers, and attacks.

Ties the other modules into reproducible runs: grid search for the
perturbation penalty weight, batch attack execution, white-box/black-box
transfer matrices, TSV/markdown report emission, and manifest writing so
a whole run can be checked byte for byte against a rerun.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import attacks, forgery, localizer, metrics
from .attacks import AttackConfig
from .errors import DimensionError, DomainError, SearchError
from .forgery import GenerationParams
from .localizer import TrainingConfig

# penalty-weight grid: 10^-4 .. 10^2, half-decade steps
LAMBDA_GRID = tuple(10.0 ** (k / 2.0) for k in range(-8, 5))

DEFAULT_PSNR_FLOOR = 34.0


def quantize_to_8bit(image: np.ndarray) -> np.ndarray:
    """Snap values onto the 8-bit grid so a PNG round trip is lossless."""
    return np.round(np.asarray(image, dtype=np.float64) * 255.0) / 255.0


def attack_batch(method, samples, model=None, cfg=None, workers=1):
    """Attack every sample with one method, preserving sample order.

    With workers > 1 images are attacked on a thread pool, one image per
    task; collection order still follows the input, so downstream reports
    do not depend on scheduling.
    """
    samples = list(samples)

    def one(sample):
        return attacks.run_attack(
            method, sample.image, model=model, y_g=sample.mask, cfg=cfg
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, samples))
    return [one(s) for s in samples]


@dataclass
class LambdaSearchRow:
    lambda_: float
    f1_before: float
    f1_after: float
    psnr: float
    ssim: float


@dataclass
class LambdaSearchResult:
    chosen_lambda: float
    psnr_floor: float
    trace: list[LambdaSearchRow]  # grid order, largest lambda first


def lambda_search(
    victim, dataset, psnr_floor: float, base_cfg: AttackConfig | None = None, workers: int = 1
) -> LambdaSearchResult:
    """Pick the penalty weight that hurts the victim most at bounded distortion.

    Runs the optimization attack over the validation split at every grid
    lambda and returns the one minimizing post-attack F1 among candidates
    whose mean PSNR stays at or above the floor. A candidate that changed
    no image at all (infinite PSNR) satisfies any floor vacuously and is
    recorded in the trace but never eligible. Ties break toward the
    larger lambda (same damage, less distortion). The trace scores the raw
    attack outputs; snapping to the 8-bit grid happens only when images
    are saved and shifts PSNR by far less than the grid spacing.
    """
    base_cfg = base_cfg if base_cfg is not None else AttackConfig()
    val = [dataset.samples[i] for i in dataset.val_indices]
    if not val:
        raise DomainError("lambda_search needs a non-empty validation split")
    before = metrics.evaluate(victim, val)

    trace: list[LambdaSearchRow] = []
    for lam in sorted(LAMBDA_GRID, reverse=True):
        cfg = replace(base_cfg, lambda_=lam)
        results = attack_batch("opt", val, model=victim, cfg=cfg, workers=workers)
        adv = [r.adversarial_image for r in results]
        record = metrics.evaluate(victim, val, adv)
        trace.append(
            LambdaSearchRow(lam, before.f1, record.f1, record.psnr_db, record.ssim)
        )

    feasible = [
        row for row in trace if math.isfinite(row.psnr) and row.psnr >= psnr_floor
    ]
    if not feasible:
        real = [row for row in trace if math.isfinite(row.psnr)]
        if not real:
            raise SearchError(
                f"no lambda keeps mean PSNR >= {psnr_floor:g} dB; best "
                f"infeasible candidate: none, no grid lambda changed any image"
            )
        best = max(real, key=lambda row: row.psnr)
        raise SearchError(
            f"no lambda keeps mean PSNR >= {psnr_floor:g} dB; best infeasible "
            f"candidate: lambda={best.lambda_:g} at {best.psnr:.2f} dB with "
            f"post-attack F1 {best.f1_after:.4f}"
        )
    chosen = min(feasible, key=lambda row: (row.f1_after, -row.lambda_))
    return LambdaSearchResult(chosen.lambda_, psnr_floor, trace)


def _maybe_decrease(before: float, after: float) -> int | None:
    if before <= 0:
        return None
    return metrics.decrease_rate(before, after)


@dataclass
class ReportRow:
    """One (target model, attack method, victim) evaluation.

    Decrease percentages are recomputed from the stored before/after pair
    on access; they are never persisted independently.
    """

    target_id: str
    method: str
    victim_id: str  # empty for model-free baselines
    white_box: bool
    f1_before: float
    f1_after: float
    iou_before: float
    iou_after: float
    psnr_db: float
    ssim: float

    @property
    def f1_decrease(self) -> int | None:
        return _maybe_decrease(self.f1_before, self.f1_after)

    @property
    def iou_decrease(self) -> int | None:
        return _maybe_decrease(self.iou_before, self.iou_after)


_TSV_COLUMNS = (
    "target",
    "method",
    "victim",
    "white_box",
    "f1_before",
    "f1_after",
    "f1_d",
    "iou_before",
    "iou_after",
    "iou_d",
    "psnr_db",
    "ssim",
)


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _fmt_d(d: int | None) -> str:
    return "" if d is None else str(d)


@dataclass
class ReportTable:
    rows: list[ReportRow]

    def to_tsv(self) -> str:
        lines = ["\t".join(_TSV_COLUMNS)]
        for r in self.rows:
            lines.append(
                "\t".join(
                    (
                        r.target_id,
                        r.method,
                        r.victim_id,
                        "1" if r.white_box else "0",
                        _fmt(r.f1_before),
                        _fmt(r.f1_after),
                        _fmt_d(r.f1_decrease),
                        _fmt(r.iou_before),
                        _fmt(r.iou_after),
                        _fmt_d(r.iou_decrease),
                        _fmt(r.psnr_db),
                        _fmt(r.ssim),
                    )
                )
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_tsv(cls, text: str) -> ReportTable:
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines or tuple(lines[0].split("\t")) != _TSV_COLUMNS:
            raise DomainError("unrecognized report header")
        rows = []
        for line in lines[1:]:
            cells = dict(zip(_TSV_COLUMNS, line.split("\t")))
            # the d columns are derived; parsing ignores them
            rows.append(
                ReportRow(
                    target_id=cells["target"],
                    method=cells["method"],
                    victim_id=cells["victim"],
                    white_box=cells["white_box"] == "1",
                    f1_before=float(cells["f1_before"]),
                    f1_after=float(cells["f1_after"]),
                    iou_before=float(cells["iou_before"]),
                    iou_after=float(cells["iou_after"]),
                    psnr_db=float(cells["psnr_db"]),
                    ssim=float(cells["ssim"]),
                )
            )
        return cls(rows)

    def to_markdown(self) -> str:
        lines = [
            "| target | victim | method | F1 before | F1 after | F1 d x100 "
            "| IoU before | IoU after | IoU d x100 |",
            "|---|---|---|---|---|---|---|---|---|",
        ]
        for r in self.rows:
            method = f"<u>{r.method}</u>" if r.white_box else r.method
            lines.append(
                f"| {r.target_id} | {r.victim_id or '-'} | {method} "
                f"| {_fmt(r.f1_before)} | {_fmt(r.f1_after)} "
                f"| {_fmt_d(r.f1_decrease) or '-'} "
                f"| {_fmt(r.iou_before)} | {_fmt(r.iou_after)} "
                f"| {_fmt_d(r.iou_decrease) or '-'} |"
            )
        lines += [
            "",
            "| method | victim | mean PSNR (dB) | mean SSIM |",
            "|---|---|---|---|",
        ]
        seen = set()
        for r in self.rows:
            key = (r.victim_id, r.method)
            if key in seen:
                continue  # distortion does not depend on the target model
            seen.add(key)
            lines.append(
                f"| {r.method} | {r.victim_id or '-'} "
                f"| {_fmt(r.psnr_db)} | {_fmt(r.ssim)} |"
            )
        return "\n".join(lines) + "\n"


def emit_report(table: ReportTable, fmt: str, path) -> None:
    if fmt == "tsv":
        text = table.to_tsv()
    elif fmt == "markdown":
        text = table.to_markdown()
    else:
        raise DomainError(f"unknown report format {fmt!r}, expected tsv or markdown")
    Path(path).write_text(text, encoding="utf-8")


def transfer_matrix(models: dict, samples, attacked: dict) -> ReportTable:
    """Evaluate every target model against every victim's attacked images.

    ``attacked`` maps victim id -> {method -> attacked images aligned with
    ``samples``}; an empty victim id marks model-free baselines. Rows where
    target == victim are flagged white-box, the rest are black-box.
    """
    samples = list(samples)
    if not samples:
        raise DomainError("transfer_matrix needs a non-empty sample list")
    if not attacked:
        raise DomainError("transfer_matrix needs at least one attacked set")
    for victim_id, sets in attacked.items():
        if victim_id and victim_id not in models:
            raise DomainError(f"attacked set names unknown victim {victim_id!r}")
        for method, images in sets.items():
            if len(images) != len(samples):
                raise DimensionError(
                    f"victim {victim_id!r} method {method!r}: "
                    f"{len(images)} attacked images for {len(samples)} samples"
                )

    clean = {
        target_id: metrics.evaluate(model, samples)
        for target_id, model in models.items()
    }
    rows = []
    for victim_id in sorted(attacked):
        for method in sorted(attacked[victim_id]):
            images = attacked[victim_id][method]
            for target_id in sorted(models):
                record = metrics.evaluate(models[target_id], samples, images)
                rows.append(
                    ReportRow(
                        target_id=target_id,
                        method=method,
                        victim_id=victim_id,
                        white_box=bool(victim_id) and target_id == victim_id,
                        f1_before=clean[target_id].f1,
                        f1_after=record.f1,
                        iou_before=clean[target_id].iou,
                        iou_after=record.iou,
                        psnr_db=record.psnr_db,
                        ssim=record.ssim,
                    )
                )
    return ReportTable(rows)


def write_manifest(out_dir, metadata: dict) -> None:
    """List run metadata plus a content digest for every artifact.

    Rewrites ``manifest.tsv`` in ``out_dir``. Output is deterministic:
    metadata keys and file paths are sorted and nothing time-dependent is
    recorded.
    """
    out_dir = Path(out_dir)
    lines = ["# run metadata"]
    for key in sorted(metadata):
        lines.append(f"{key}\t{metadata[key]}")
    lines.append("# artifacts")
    lines.append("path\tsha256\tbytes")
    entries = []
    for p in out_dir.rglob("*"):
        if p.is_file() and p.name != "manifest.tsv":
            entries.append((p.relative_to(out_dir).as_posix(), p))
    for rel, p in sorted(entries):
        data = p.read_bytes()
        lines.append(f"{rel}\t{hashlib.sha256(data).hexdigest()}\t{len(data)}")
    (out_dir / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_config(path) -> dict[str, str]:
    """Parse a ``key = value`` config file; values stay strings.

    Blank lines and ``#`` comments (whole-line or trailing) are ignored.
    """
    parsed: dict[str, str] = {}
    for lineno, raw in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise DomainError(f"malformed config line {lineno}: {raw!r}")
        parsed[key.strip()] = value.strip()
    return parsed


def _default_training() -> dict[str, TrainingConfig]:
    return {"A": TrainingConfig(), "B": TrainingConfig()}


@dataclass
class ExperimentConfig:
    """Everything a full pipeline run needs, with reproducible defaults."""

    n: int = 512
    seed: int = 7
    size: int = 128
    out_dir: str = "runs/default"
    victim_id: str = "A"
    target_ids: tuple[str, ...] = ("A", "B")
    training: dict[str, TrainingConfig] = field(default_factory=_default_training)
    opt_attack: AttackConfig = field(default_factory=AttackConfig)
    fgsm_attack: AttackConfig = field(default_factory=AttackConfig)
    baselines: tuple[str, ...] = ("median", "jpeg", "median-jpeg")
    psnr_floor: float = DEFAULT_PSNR_FLOOR
    workers: int = 1

    def __post_init__(self):
        if self.victim_id not in self.target_ids:
            raise DomainError(
                f"victim {self.victim_id!r} is not among targets {self.target_ids}"
            )
        missing = [t for t in self.target_ids if t not in self.training]
        if missing:
            raise DomainError(f"no training config for {missing}")
        if self.workers < 1:
            raise DomainError(f"workers must be >= 1, got {self.workers}")


def save_attacked_set(dir_path, indices, images, results, cfg) -> None:
    """One attacked set: PNGs plus a line-per-image provenance table.

    Each attacks.tsv row records the attack kind, the victim, the config
    knobs that applied, and the full loss trace as ;-joined
    iteration:penalty:bce triples.
    """
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    lines = [
        "index\tmethod\tvictim\tlambda\tepsilon\titerations\tlearning_rate\tloss_trace"
    ]
    for idx, image, result in zip(indices, images, results):
        rgb = np.round(image * 255.0).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(dir_path / f"sample_{idx:05d}.png")
        lam = eps = iters = lr = ""
        if result.attack_kind == "opt":
            lam, iters, lr = (
                f"{cfg.lambda_:g}",
                str(cfg.iterations),
                f"{cfg.learning_rate:g}",
            )
        elif result.attack_kind == "fgsm":
            eps, iters = f"{cfg.epsilon:g}", "1"
        trace = ";".join(f"{i}:{p:.6g}:{b:.6g}" for i, p, b in result.loss_trace)
        lines.append(
            f"{idx}\t{result.attack_kind}\t{result.victim_model_id}"
            f"\t{lam}\t{eps}\t{iters}\t{lr}\t{trace}"
        )
    (dir_path / "attacks.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_attacked_set(dir_path):
    """Read one attacked set back: (indices, images, provenance rows)."""
    dir_path = Path(dir_path)
    text = (dir_path / "attacks.tsv").read_text(encoding="utf-8")
    lines = [line for line in text.splitlines() if line.strip()]
    header = lines[0].split("\t")
    indices, images, rows = [], [], []
    for line in lines[1:]:
        cells = dict(zip(header, line.split("\t")))
        idx = int(cells["index"])
        arr = np.asarray(
            Image.open(dir_path / f"sample_{idx:05d}.png"), dtype=np.float64
        )
        indices.append(idx)
        images.append(arr / 255.0)
        rows.append(cells)
    return indices, images, rows


def write_lambda_trace(search: LambdaSearchResult, path: Path) -> None:
    lines = [
        f"# chosen_lambda={search.chosen_lambda:g}",
        f"# psnr_floor={search.psnr_floor:g}",
        "lambda\tf1_before\tf1_after\tpsnr_db\tssim",
    ]
    for row in search.trace:
        lines.append(
            f"{row.lambda_:g}\t{_fmt(row.f1_before)}\t{_fmt(row.f1_after)}"
            f"\t{_fmt(row.psnr)}\t{_fmt(row.ssim)}"
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def run_pipeline(cfg: ExperimentConfig) -> dict:
    """Data generation through report emission in one deterministic run.

    Builds and saves the dataset, trains every target architecture,
    searches the penalty weight on the victim, attacks every trained model
    (plus the model-free baselines) over the validation split, and writes
    reports, attacked images, and a digest manifest under ``cfg.out_dir``.
    Attacked images are evaluated exactly as stored: on the 8-bit grid.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    params = GenerationParams(height=cfg.size, width=cfg.size)
    dataset = forgery.build_dataset(cfg.n, seed=cfg.seed, params=params)
    forgery.save_dataset(dataset, out / "data")
    val = [dataset.samples[i] for i in dataset.val_indices]

    models = {}
    for arch in cfg.target_ids:
        model = localizer.train(arch, dataset, cfg.training[arch])
        (out / "models").mkdir(exist_ok=True)
        localizer.save_model(model, out / "models" / f"model_{arch}.bin")
        models[arch] = model

    search = lambda_search(
        models[cfg.victim_id],
        dataset,
        cfg.psnr_floor,
        base_cfg=cfg.opt_attack,
        workers=cfg.workers,
    )
    write_lambda_trace(search, out / "lambda_search.tsv")
    opt_cfg = replace(cfg.opt_attack, lambda_=search.chosen_lambda)

    attacked: dict[str, dict[str, list]] = {}
    for victim_id in cfg.target_ids:
        sets = {}
        for method, attack_cfg in (("opt", opt_cfg), ("fgsm", cfg.fgsm_attack)):
            results = attack_batch(
                method, val, model=models[victim_id], cfg=attack_cfg, workers=cfg.workers
            )
            images = [quantize_to_8bit(r.adversarial_image) for r in results]
            save_attacked_set(
                out / "attacked" / victim_id / method,
                dataset.val_indices,
                images,
                results,
                attack_cfg,
            )
            sets[method] = images
        attacked[victim_id] = sets

    if cfg.baselines:
        baseline_sets = {}
        for method in cfg.baselines:
            results = attack_batch(method, val, cfg=cfg.opt_attack, workers=cfg.workers)
            images = [quantize_to_8bit(r.adversarial_image) for r in results]
            save_attacked_set(
                out / "attacked" / "baseline" / method,
                dataset.val_indices,
                images,
                results,
                None,
            )
            baseline_sets[method] = images
        attacked[""] = baseline_sets

    table = transfer_matrix(models, val, attacked)
    emit_report(table, "tsv", out / "report.tsv")
    emit_report(table, "markdown", out / "report.md")
    write_manifest(
        out,
        {
            "n": cfg.n,
            "seed": cfg.seed,
            "size": cfg.size,
            "victim": cfg.victim_id,
            "psnr_floor": f"{cfg.psnr_floor:g}",
            "chosen_lambda": f"{search.chosen_lambda:g}",
        },
    )
    return {
        "dataset": dataset,
        "models": models,
        "search": search,
        "table": table,
        "out_dir": out,
    }
