"""Two-phase training: pretrain the backbone on clean data, freeze it,
then fit the adaptor/decoder stack on adverse data with BCE.

Phase A trains a plain (baseline-topology) model on clean images for a
fixed five epochs; its backbone weights transfer into the target
topology by name and are frozen there. Phase B optimizes whatever the
topology leaves trainable. Both phases share the optimizer recipe and
the multistep schedule (epoch indices restart per phase).

Every random choice (init, batch order) is a counter-programmed
function of (seed, phase, epoch), so runs reproduce bitwise and a
resumed run continues the exact from-scratch trajectory. The per-epoch
checkpoint pair is one float32 interchange file (.dpck) plus one
float64 resume file (.npz) holding optimizer moments.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, backward
from .checkpoint import load_resume, save_model, save_resume
from .data import load_split
from .errors import ContractError, NumericsError
from .metrics import evaluate_maps
from .model import ModelSpec, SegModel, bce_loss
from .optim import AdamW, AdamWConfig, lr_at
from .rng import CounterRng

PRETRAIN_EPOCHS = 5
PROBE_IMAGES = 4  # per-epoch eval subset; the final report uses the full split


@dataclass
class TrainConfig:
    lr: float = 2e-4
    optimizer: AdamWConfig = field(default_factory=AdamWConfig)
    scheduler_gamma: float = 0.1
    scheduler_milestones: tuple = (1,)
    epochs: int = 20
    batch: int = 4
    seed: int = 0
    arch: str = "pda"
    dataset_root: str = ""

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError("lr must be positive")
        if list(self.scheduler_milestones) != sorted(self.scheduler_milestones):
            raise ContractError("milestones must be sorted")
        self.optimizer.lr = self.lr


_TOP_KEYS = {"lr", "optimizer", "scheduler", "epochs", "batch", "seed", "arch", "dataset_root"}
_OPT_KEYS = {"beta1", "beta2", "eps", "weight_decay"}
_SCHED_KEYS = {"gamma", "milestones"}


def config_from_dict(raw: dict) -> TrainConfig:
    """Strict schema: unknown keys anywhere are an error."""
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ContractError(f"unknown config keys: {sorted(unknown)}")
    kw = {}
    if "lr" in raw:
        kw["lr"] = float(raw["lr"])
    opt = AdamWConfig()
    if "optimizer" in raw:
        bad = set(raw["optimizer"]) - _OPT_KEYS
        if bad:
            raise ContractError(f"unknown optimizer keys: {sorted(bad)}")
        for k, v in raw["optimizer"].items():
            setattr(opt, k, float(v))
    kw["optimizer"] = opt
    if "scheduler" in raw:
        bad = set(raw["scheduler"]) - _SCHED_KEYS
        if bad:
            raise ContractError(f"unknown scheduler keys: {sorted(bad)}")
        if "gamma" in raw["scheduler"]:
            kw["scheduler_gamma"] = float(raw["scheduler"]["gamma"])
        if "milestones" in raw["scheduler"]:
            kw["scheduler_milestones"] = tuple(int(m) for m in raw["scheduler"]["milestones"])
    for k in ("epochs", "batch", "seed"):
        if k in raw:
            kw[k] = int(raw[k])
    if "arch" in raw:
        kw["arch"] = str(raw["arch"])
    if "dataset_root" in raw:
        kw["dataset_root"] = str(raw["dataset_root"])
    return TrainConfig(**kw)


def load_config(path) -> TrainConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


@dataclass
class RunLog:
    """Deterministic training record (wall time only in the summary line)."""
    steps: list = field(default_factory=list)       # (phase, epoch, step, loss)
    epoch_evals: list = field(default_factory=list)  # (phase, epoch, metrics dict)
    checkpoints: list = field(default_factory=list)
    wall_time: float = 0.0

    def phase_losses(self, phase: str):
        return [l for (p, _, _, l) in self.steps if p == phase]


class _LogWriter:
    def __init__(self, path):
        self.path = Path(path)
        self.path.write_text("")

    def line(self, obj: dict):
        with open(self.path, "a") as fh:
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def _param_norms(model: SegModel) -> dict:
    return {n: float(np.linalg.norm(t.data)) for n, t in model.named_params()}


def _batches(n: int, batch: int, seed: int, phase: int, epoch: int):
    perm = CounterRng(seed, 9_000_000 + phase * 10_000 + epoch).permutation(n)
    for s in range(0, n, batch):
        yield perm[s:s + batch]


def _run_epoch(model, optimizer, images, masks, cfg: TrainConfig, phase: str,
               epoch: int, log: RunLog, writer: _LogWriter, out_dir: Path):
    phase_id = 0 if phase == "A" else 1
    lr = lr_at(epoch, cfg.lr, cfg.scheduler_gamma, cfg.scheduler_milestones)
    for step, idx in enumerate(_batches(len(images), cfg.batch, cfg.seed, phase_id, epoch)):
        x = Tensor(images[idx])
        y = Tensor(masks[idx][:, None])
        logits = model.forward(x, hfc_mode="soft")
        loss = bce_loss(logits, y)
        val = loss.item()
        if not np.isfinite(val):
            dump = {"phase": phase, "epoch": epoch, "step": step,
                    "batch_indices": [int(i) for i in idx], "param_norms": _param_norms(model)}
            (out_dir / "nan_dump.json").write_text(json.dumps(dump, indent=1))
            raise NumericsError(f"non-finite loss at phase {phase} epoch {epoch} step {step}; "
                                f"diagnostics in {out_dir / 'nan_dump.json'}")
        backward(loss)
        optimizer.step(lr=lr)
        optimizer.zero_grad()
        log.steps.append((phase, epoch, step, val))
        writer.line({"kind": "step", "phase": phase, "epoch": epoch, "step": step, "loss": val})


def _probe_eval(model: SegModel, images, masks, limit: int = PROBE_IMAGES):
    preds = model.predict(images[:limit])
    return evaluate_maps(list(preds), list(masks[:limit]))


def train(cfg: TrainConfig, out_dir, resume: str | None = None) -> RunLog:
    """Run both phases; returns the RunLog and leaves on disk:
    out/runlog.jsonl, out/checkpoints/*, out/model.dpck."""
    t_start = time.time()
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    root = Path(cfg.dataset_root)
    if not root.exists():
        raise IOError(f"dataset root {root} does not exist")
    clean, adverse, masks = load_split(root / "train")
    test_clean, test_adverse, test_masks = load_split(root / "test")
    size = clean.shape[-1]
    spec = ModelSpec(arch=cfg.arch, input_size=size)

    log = RunLog()
    writer = _LogWriter(out_dir / "runlog.jsonl")
    model = SegModel(spec, seed=cfg.seed)

    start_phase, start_epoch = 0, 0
    optimizer = None
    pre_model = None

    if resume is not None:
        # rebuild the exact optimizer/param state and continue
        with np.load(resume) as z:
            resumed_phase = int(z["progress"][0])
        if resumed_phase == 0:
            pre_spec = ModelSpec(arch="baseline", input_size=size)
            pre_model = SegModel(pre_spec, seed=cfg.seed)
            optimizer = AdamW(pre_model.named_params(), cfg.optimizer)
            progress = load_resume(resume, pre_model, optimizer)
        else:
            model.freeze_backbone()
            optimizer = AdamW(model.trainable_params(), cfg.optimizer)
            progress = load_resume(resume, model, optimizer)
        start_phase, start_epoch = progress["phase"], progress["epoch"] + 1

    # ---- phase A: pretrain backbone + decoder on clean data ----
    if start_phase == 0:
        if pre_model is None:
            pre_spec = ModelSpec(arch="baseline", input_size=size)
            pre_model = SegModel(pre_spec, seed=cfg.seed)
            optimizer = AdamW(pre_model.named_params(), cfg.optimizer)
        for epoch in range(start_epoch, PRETRAIN_EPOCHS):
            _run_epoch(pre_model, optimizer, clean, masks, cfg, "A", epoch, log, writer, out_dir)
            rep = _probe_eval(pre_model, test_clean, test_masks)
            log.epoch_evals.append(("A", epoch, rep.to_dict()))
            writer.line({"kind": "epoch_eval", "phase": "A", "epoch": epoch,
                         "metrics": {k: rep.to_dict()[k] for k in ("s_alpha", "e_phi", "f_beta_w", "mae")}})
            ck = ckpt_dir / f"phaseA_epoch{epoch:03d}.dpck"
            save_model(ck, pre_model)
            save_resume(ckpt_dir / f"resume_A{epoch:03d}.npz", pre_model, optimizer,
                        {"phase": 0, "epoch": epoch})
            _prune_resume(ckpt_dir, "A", keep=2)
            log.checkpoints.append(str(ck))
        _transfer_backbone(model, pre_model, cfg, size)
        model.freeze_backbone()
        optimizer = AdamW(model.trainable_params(), cfg.optimizer)
        start_epoch = 0

    # ---- phase B: adaptors + decoder on adverse data ----
    for epoch in range(start_epoch, cfg.epochs):
        _run_epoch(model, optimizer, adverse, masks, cfg, "B", epoch, log, writer, out_dir)
        rep = _probe_eval(model, test_adverse, test_masks)
        log.epoch_evals.append(("B", epoch, rep.to_dict()))
        writer.line({"kind": "epoch_eval", "phase": "B", "epoch": epoch,
                     "metrics": {k: rep.to_dict()[k] for k in ("s_alpha", "e_phi", "f_beta_w", "mae")}})
        ck = ckpt_dir / f"phaseB_epoch{epoch:03d}.dpck"
        save_model(ck, model)
        save_resume(ckpt_dir / f"resume_B{epoch:03d}.npz", model, optimizer,
                    {"phase": 1, "epoch": epoch})
        _prune_resume(ckpt_dir, "B", keep=2)
        log.checkpoints.append(str(ck))

    final = out_dir / "model.dpck"
    save_model(final, model)
    log.checkpoints.append(str(final))
    log.wall_time = time.time() - t_start
    writer.line({"kind": "summary", "phases": ["A", "B"], "epochs_b": cfg.epochs,
                 "wall_time": log.wall_time, "final_checkpoint": str(final)})
    return log


def _transfer_backbone(model: SegModel, pre_model: SegModel | None, cfg: TrainConfig, size: int):
    """Copy pretrained backbone + decoder weights into the target topology
    (names coincide; same-seed construction guarantees shape agreement)."""
    if pre_model is None:
        return
    src = dict(pre_model.named_params())
    for name, t in model.named_params():
        if name in src:
            t.data[...] = src[name].data


def _prune_resume(ckpt_dir: Path, phase: str, keep: int):
    """Resume files are float64 and large; keep the newest `keep` per phase
    (the .dpck interchange checkpoints are all retained)."""
    files = sorted(ckpt_dir.glob(f"resume_{phase}*.npz"))
    for p in files[:-keep]:
        p.unlink()
