"""End-to-end acceptance criteria with one pass/fail line per criterion.

Quick criteria verify algebraic and numeric contracts in seconds; the
heavy ones run real trainings (three seeds, three or four topologies)
and check the directional claims: prompted adaptor models must beat the
frozen-backbone baseline by a clear margin on adverse data, and the
sequential variant must generalize at least as well as the parallel one
out of distribution.

Training artifacts cache inside the workdir, so the suite (and pytest)
reuses runs instead of retraining per criterion.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _oracles as oracle
from . import autodiff as ad
from . import imageproc as ip
from .autodiff import Tensor, backward
from .checkpoint import load_model, read_dpck
from .data import load_split, make_split
from .gradcheck import run_registry
from .metrics import e_measure_mean, mae, pr_curve, s_measure, weighted_f
from .model import ModelSpec, SegModel, bce_loss
from .optim import AdamW, AdamWConfig, lr_at
from .rng import CounterRng
from .training import TrainConfig, train

SEEDS = (7, 8, 9)
DIRECTIONAL_BUDGET_S = 1800.0
GRADCHECK_BUDGET_S = 120.0


@dataclass
class CriterionResult:
    name: str
    passed: bool
    detail: str
    seconds: float

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"ACCEPTANCE {self.name}: {flag} ({self.detail}) [{self.seconds:.1f}s]"


def _timed(name):
    def deco(fn):
        def wrapper(self):
            t0 = time.time()
            passed, detail = fn(self)
            return CriterionResult(name=name, passed=passed, detail=detail, seconds=time.time() - t0)
        wrapper.criterion_name = name
        return wrapper
    return deco


class AcceptanceSuite:
    def __init__(self, workdir, seeds=SEEDS):
        self.workdir = Path(workdir)
        self.workdir.mkdir(parents=True, exist_ok=True)
        self.seeds = seeds
        self._mae_cache: dict = {}
        self.directional_elapsed = None
        # artifact costs are charged to whichever criterion consumes them,
        # no matter which one happened to trigger the training
        self.synth_seconds: dict = {}
        self.train_seconds: dict = {}

    # ---- shared artifacts -------------------------------------------------

    def dataset(self, seed: int) -> Path:
        root = self.workdir / f"data_seed{seed}"
        if not (root / "manifest.json").exists():
            t0 = time.time()
            make_split(root, n_train=200, n_test=50, seed=seed, size=64)
            self.synth_seconds[seed] = time.time() - t0
        return root

    def mini_dataset(self) -> Path:
        root = self.workdir / "data_mini"
        if not (root / "manifest.json").exists():
            make_split(root, n_train=16, n_test=8, seed=42, size=32)
        return root

    def run_training(self, seed: int, arch: str) -> Path:
        out = self.workdir / f"run_s{seed}_{arch}"
        if not (out / "model.dpck").exists():
            cfg = TrainConfig(seed=seed, arch=arch, dataset_root=str(self.dataset(seed)))
            resume = None
            if arch != "baseline":
                # phase A is arch-independent (same seed/spec/data), so adaptor
                # runs resume from the baseline run's completed pretrain state;
                # the phase-B trajectory is bitwise identical either way.
                base = self.run_training(seed, "baseline")
                from .training import PRETRAIN_EPOCHS
                resume = str(base / "checkpoints" / f"resume_A{PRETRAIN_EPOCHS - 1:03d}.npz")
            t0 = time.time()
            train(cfg, out, resume=resume)
            self.train_seconds[(seed, arch)] = time.time() - t0
        return out

    def split_mae(self, seed: int, arch: str, split: str) -> float:
        key = (seed, arch, split)
        if key not in self._mae_cache:
            model = load_model(self.run_training(seed, arch) / "model.dpck")
            _, adverse, masks = load_split(self.dataset(seed) / split)
            preds = []
            for s in range(0, len(adverse), 10):
                preds.extend(list(model.predict(adverse[s:s + 10])))
            self._mae_cache[key] = float(np.mean([mae(p, g) for p, g in zip(preds, masks)]))
        return self._mae_cache[key]

    # ---- quick criteria ----------------------------------------------------

    @_timed("gradient_suite")
    def c_gradient_suite(self):
        t0 = time.time()
        rows = run_registry(tol=1e-4)
        elapsed = time.time() - t0
        fails = [r.name for r in rows if r.status == "FAIL"]
        ok = not fails and elapsed < GRADCHECK_BUDGET_S
        return ok, f"{len(rows)} components, fails={fails or 'none'}, {elapsed:.0f}s < {GRADCHECK_BUDGET_S:.0f}s"

    @_timed("hfc_invariants")
    def c_hfc_invariants(self):
        probs = []
        for h, w in ((8, 8), (16, 32), (64, 64)):
            for tau in (0.1, 0.3, 0.55, 0.8):
                m = ip.hfc_mask(h, w, tau, mode="hard").data
                if m[0, 0] != 0.0 or m[h // 2, w // 2] != 1.0:
                    probs.append(f"corner/center at {h}x{w} tau={tau}")
        prev = None
        for tau in np.linspace(0.1, 0.8, 12):
            m = ip.hfc_mask(16, 16, float(tau), mode="hard").data
            if prev is not None and not np.all(m <= prev):
                probs.append("monotonicity")
            prev = m
        for logit in (-1e6, -50.0, 0.0, 50.0, 1e6):
            t = float(ip.tau_from_logit(Tensor([logit])).data[0])
            if not 0.1 <= t <= 0.8:
                probs.append(f"clamp at logit {logit}")
        img = Tensor(CounterRng(7, 7).uniforms(3 * 256, 0.1, 0.9).reshape(3, 16, 16))
        dc = abs(float(ip.op_hfc(img, 0.5, mode="hard", normalize=False).data.mean()))
        if dc > 1e-9:
            probs.append(f"dc residue {dc:.2e}")
        rt = float(np.abs(ip.hfc_filter(img, Tensor(np.ones((16, 16)))).data - img.data).max())
        if rt > 1e-9:
            probs.append(f"roundtrip {rt:.2e}")
        return not probs, probs and "; ".join(probs) or f"dc={dc:.1e}, roundtrip={rt:.1e}"

    @_timed("gating_algebra")
    def c_gating_algebra(self):
        img = CounterRng(61, 3).uniforms(3 * 64, 0.05, 0.95).reshape(3, 8, 8)
        img[0, 0, 0] = 0.0
        img[2, 7, 7] = 1.0
        img_t = Tensor(img)
        f_emb = Tensor(np.zeros((1, 6)))

        def rig(gate_logits):
            heads = ip.GatedEnhancer(6, CounterRng(8, 8))
            heads.weight.data[:] = 0.0
            heads.bias.data[:] = -1000.0
            heads.bias.data[8:16] = 1.0
            heads.bias.data[16:24] = 0.0
            for name, v in gate_logits.items():
                heads.bias.data[ip.OP_NAMES.index(name)] = v
            return heads

        ident = rig({"identity": 1000.0}).apply(f_emb, img_t).data
        err_ident = float(np.abs(ident - ip.normalize_minmax(img_t).data).max())
        split = rig({"tone": 0.0, "identity": 0.0}).apply(f_emb, img_t).data
        merged = rig({"identity": 1000.0}).apply(f_emb, img_t).data
        err_split = float(np.abs(split - merged).max())
        ok = err_ident <= 1e-12 and err_split <= 1e-12
        return ok, f"identity err {err_ident:.1e}, split err {err_split:.1e} (tol 1e-12)"

    @_timed("zero_adaptor_equivalence")
    def c_zero_adaptor(self):
        spec_kw = dict(stages=2, layers_per_stage=2, d_model=32, heads=2, patch=8,
                       input_size=32, embed_dim=16)
        img = Tensor(CounterRng(31, 2).uniforms(2 * 3 * 32 * 32, 0, 1).reshape(2, 3, 32, 32))
        base = SegModel(ModelSpec(arch="baseline", **spec_kw), seed=11)
        ref = base.forward(img).data
        probs = []
        for arch in ("pda", "sda"):
            m = SegModel(ModelSpec(arch=arch, **spec_kw), seed=11)
            m.zero_adaptor_paths()
            got = m.forward(img, hfc_mode="hard").data
            if not np.array_equal(got, ref):
                probs.append(f"{arch} != baseline (max diff {np.abs(got - ref).max():.2e})")
        one_kw = dict(spec_kw, stages=1, layers_per_stage=4)
        pda1 = SegModel(ModelSpec(arch="pda", **one_kw), seed=12).forward(img, hfc_mode="hard").data
        sda1 = SegModel(ModelSpec(arch="sda", **one_kw), seed=12).forward(img, hfc_mode="hard").data
        if not np.array_equal(pda1, sda1):
            probs.append("S=1 sda != pda")
        return not probs, "; ".join(probs) or "pda/sda zeroed == baseline bitwise; S=1 sda == pda"

    @_timed("metric_oracles")
    def c_metric_oracles(self):
        rng_cases = []
        for i in range(22):
            r = CounterRng(800 + i, 13)
            h = 4 + i % 5
            w = 4 + (i * 2) % 5
            gt = (r.uniforms(h * w) > 0.55).astype(np.float64).reshape(h, w)
            if gt.sum() == 0:
                gt[h // 2, w // 2] = 1.0
            pred = r.uniforms(h * w).reshape(h, w)
            rng_cases.append((pred, gt))
        worst = 0.0
        for pred, gt in rng_cases:
            worst = max(worst, abs(s_measure(pred, gt) - oracle.s_measure_oracle(pred, gt)))
            worst = max(worst, abs(e_measure_mean(pred, gt) - oracle.e_measure_oracle(pred, gt)))
            worst = max(worst, abs(weighted_f(pred, gt) - oracle.weighted_f_oracle(pred, gt)))
            worst = max(worst, abs(mae(pred, gt) - oracle.mae_oracle(pred, gt)))
        pc = pr_curve([rng_cases[0][0]], [rng_cases[0][1]])
        po = oracle.pr_oracle([rng_cases[0][0]], [rng_cases[0][1]])
        for (t1, p1, r1), (t2, p2, r2) in zip(pc, po):
            worst = max(worst, abs(p1 - p2), abs(r1 - r2))
        gt0 = rng_cases[0][1]
        perfect_ok = (abs(s_measure(gt0, gt0) - 1) < 1e-6 and abs(e_measure_mean(gt0, gt0) - 1) < 1e-6
                      and abs(weighted_f(gt0, gt0) - 1) < 1e-6 and mae(gt0, gt0) == 0.0)
        ok = worst <= 1e-8 and perfect_ok
        return ok, f"{len(rng_cases)} cases, worst oracle gap {worst:.2e} (tol 1e-8), perfect={perfect_ok}"

    @_timed("optimizer_oracle")
    def c_optimizer_oracle(self):
        r = CounterRng(900, 14)
        p0 = r.uniforms(100, -1.0, 1.0)
        grads = [r.uniforms(100, -1.0, 1.0) for _ in range(10)]
        t = Tensor(p0.copy(), requires_grad=True)
        opt = AdamW([("p", t)], AdamWConfig(lr=2e-4))
        worst = 0.0
        ref = oracle.adamw_oracle(p0, grads, lr=2e-4)
        for k, g in enumerate(grads):
            t.grad = g.copy()
            opt.step()
            worst = max(worst, float(np.abs(t.data - np.array(ref[k])).max()))
        lr_ok = (lr_at(0, 2e-4) == 2e-4
                 and lr_at(1, 2e-4) == 2e-4 * 0.1
                 and abs(lr_at(1, 2e-4) - 2e-5) < 1e-18
                 and lr_at(5, 2e-4) == 2e-4 * 0.1)
        ok = worst <= 1e-12 and lr_ok
        return ok, f"10-step worst gap {worst:.2e} (tol 1e-12); schedule 2e-4 -> 2e-5 at milestone 1: {lr_ok}"

    # ---- training-based criteria -------------------------------------------

    @_timed("freeze_contract")
    def c_freeze_contract(self):
        root = self.mini_dataset()
        clean, adverse, masks = load_split(root / "train")
        spec = ModelSpec(arch="pda", input_size=32)
        model = SegModel(spec, seed=3)
        model.freeze_backbone()

        def frozen_digest():
            h = hashlib.sha256()
            for name, t in sorted(model.named_params()):
                if not t.requires_grad:
                    h.update(name.encode())
                    h.update(t.data.tobytes())
            return h.hexdigest()

        before = frozen_digest()
        opt = AdamW(model.trainable_params(), AdamWConfig(lr=2e-4))
        rng = CounterRng(5, 99)
        for step in range(100):
            idx = np.array([rng.randint(0, len(adverse) - 1) for _ in range(2)])
            loss = bce_loss(model.forward(Tensor(adverse[idx])), Tensor(masks[idx][:, None]))
            backward(loss)
            opt.step()
            opt.zero_grad()
        after_100 = frozen_digest()

        # full-training artifact: frozen tensors identical across saved epochs
        run = self.run_training(self.seeds[0], "pda")
        cks = sorted((run / "checkpoints").glob("phaseB_epoch*.dpck"))
        def file_digest(p):
            t = read_dpck(p)
            h = hashlib.sha256()
            for k in sorted(t):
                if k.startswith("frozen/"):
                    h.update(k.encode())
                    h.update(t[k].tobytes())
            return h.hexdigest()
        stable = len({file_digest(p) for p in list(cks) + [run / "model.dpck"]}) == 1
        ok = before == after_100 and stable
        return ok, f"100-step digest equal: {before == after_100}; full-run checkpoints stable: {stable}"

    @_timed("determinism_and_restart")
    def c_determinism_restart(self):
        root = self.mini_dataset()
        cfg = TrainConfig(epochs=2, batch=4, seed=5, arch="pda", dataset_root=str(root))
        log1 = train(cfg, self.workdir / "det_run1")
        log2 = train(cfg, self.workdir / "det_run2")
        l1, l2 = log1.phase_losses("B"), log2.phase_losses("B")
        det_gap = max(abs(a - b) for a, b in zip(l1, l2))
        first10 = max(abs(a - b) for a, b in zip(l1[:10], l2[:10]))
        log3 = train(cfg, self.workdir / "det_run3",
                     resume=str(self.workdir / "det_run1" / "checkpoints" / "resume_B000.npz"))
        full_e1 = [l for (p, e, s, l) in log1.steps if p == "B" and e == 1]
        res_e1 = [l for (p, e, s, l) in log3.steps if p == "B" and e == 1]
        resume_gap = max(abs(a - b) for a, b in zip(full_e1, res_e1))
        ok = first10 <= 1e-12 and det_gap <= 1e-12 and resume_gap <= 1e-9
        return ok, f"determinism gap {det_gap:.1e} (tol 1e-12); resume gap {resume_gap:.1e} (tol 1e-9)"

    def _phase_losses_improve(self, run_dir: Path) -> bool:
        """First-epoch mean step loss exceeds last-epoch mean, both phases."""
        import json as _json
        by_phase_epoch: dict = {}
        with open(run_dir / "runlog.jsonl") as fh:
            for line in fh:
                rec = _json.loads(line)
                if rec.get("kind") == "step":
                    by_phase_epoch.setdefault((rec["phase"], rec["epoch"]), []).append(rec["loss"])
        ok = True
        for phase in ("A", "B"):
            epochs = sorted(e for p, e in by_phase_epoch if p == phase)
            if not epochs:
                continue
            first = float(np.mean(by_phase_epoch[(phase, epochs[0])]))
            last = float(np.mean(by_phase_epoch[(phase, epochs[-1])]))
            ok = ok and last < first
        return ok

    @_timed("directional_miniature")
    def c_directional(self):
        t0 = time.time()
        per_seed = []
        details = []
        for seed in self.seeds:
            base = self.split_mae(seed, "baseline", "test")
            pda = self.split_mae(seed, "pda", "test")
            sda = self.split_mae(seed, "sda", "test")
            pda_ood = self.split_mae(seed, "pda", "test_ood")
            sda_ood = self.split_mae(seed, "sda", "test_ood")
            ok = pda <= 0.9 * base and sda <= 0.9 * base and sda_ood <= pda_ood + 0.01
            per_seed.append(ok)
            details.append(f"s{seed}: base={base:.4f} pda={pda:.4f} sda={sda:.4f} "
                           f"ood(pda={pda_ood:.4f}, sda={sda_ood:.4f}) -> {'ok' if ok else 'miss'}")
        learns = self._phase_losses_improve(self.run_training(self.seeds[0], "pda"))
        eval_elapsed = time.time() - t0
        # charge every artifact this criterion consumes, regardless of which
        # criterion happened to build it first
        artifact = sum(self.synth_seconds.get(s, 0.0) for s in self.seeds)
        artifact += sum(self.train_seconds.get((s, a), 0.0)
                        for s in self.seeds for a in ("baseline", "pda", "sda"))
        elapsed = artifact + eval_elapsed
        self.directional_elapsed = elapsed
        passed = sum(per_seed) >= 2 and elapsed < DIRECTIONAL_BUDGET_S and learns
        return passed, (f"{sum(per_seed)}/3 seeds; total {elapsed:.0f}s "
                        f"(train+synth {artifact:.0f}s) < {DIRECTIONAL_BUDGET_S:.0f}s; "
                        f"default-run losses improve: {learns}; " + " | ".join(details))

    @_timed("ablation_miniature")
    def c_ablation(self):
        wins = []
        details = []
        for seed in self.seeds:
            pda = self.split_mae(seed, "pda", "test")
            stripped = self.split_mae(seed, "pda_noprompt", "test")
            wins.append(pda <= stripped)
            details.append(f"s{seed}: pda={pda:.4f} vs stripped={stripped:.4f}")
        return sum(wins) >= 2, f"{sum(wins)}/3 seeds; " + " | ".join(details)

    # ---- runner -------------------------------------------------------------

    QUICK = ("c_gradient_suite", "c_hfc_invariants", "c_gating_algebra", "c_zero_adaptor",
             "c_metric_oracles", "c_optimizer_oracle")
    HEAVY = ("c_freeze_contract", "c_determinism_restart", "c_directional", "c_ablation")

    def run(self, quick: bool = False) -> list[CriterionResult]:
        names = self.QUICK if quick else self.QUICK + self.HEAVY
        results = []
        for attr in names:
            res = getattr(self, attr)()
            print(res.line(), flush=True)
            results.append(res)
        return results
