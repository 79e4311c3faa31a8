"""Command-line entry point: ``hawkes-ccrm <command> --config <path> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from . import __version__
from .config import COMMANDS, RunConfig, default_config_text
from .data import InteractionDataset, binary_projection, count_summary
from .evaluation import (FittedModel, evaluate_model, evaluation_pairs, fit_hawkes_global, fit_poisson_global,
                         posterior_predictive_degrees, predict_counts, split_by_time)
from .generator import generate
from .inference.graph import mbr_point_estimate, run_stage1, save_checkpoint
from .inference.kernel import KernelData, run_stage2
from .io import _jsonable, parse_edge_list, read_csv, write_csv, write_edge_list, write_json, write_manifest
from .moments import moments_report

log = logging.getLogger("hawkes_ccrm")

# Fixed child indices of the master seed, so adding a stage never shifts another's stream.
STREAMS = {"data": 0, "stage1": 1, "stage2": 2, "global": 3, "predict": 4, "degrees": 5, "moments": 6}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: Exception, checkpoint: Optional[Path] = None):
        where = f"; last checkpoint: {checkpoint}" if checkpoint else ""
        super().__init__(f"stage {stage!r} failed: {cause}{where}")
        self.stage = stage


class Pipeline:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.run.out)
        self.chash = cfg.hash
        self.seq = np.random.SeedSequence(cfg.run.seed)

    def rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng(self.seq.spawn(len(STREAMS))[STREAMS[name]])

    def dir(self, name: str) -> Path:
        d = self.out / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    # -- inputs --------------------------------------------------------------

    def dataset(self) -> InteractionDataset:
        if self.cfg.data.path:
            return parse_edge_list(self.cfg.data.path, self.cfg.edge_spec(), rng=self.rng("data"))
        h, c, k = self.cfg.hyper()
        log.info("no data path configured; generating from [model]")
        return generate(h, c, k, self.cfg.model.T, self.rng("data"), eps=self.cfg.run.eps)

    # -- stages --------------------------------------------------------------

    def fit(self, d: InteractionDataset, out_name: Optional[str] = "") -> FittedModel:
        """Stage 1, MBR point estimate, stage 2. Writes artifacts when ``out_name`` is not None."""
        prefix = f"{out_name}/" if out_name else ""
        s1_dir = self.dir(prefix + "stage1") if out_name is not None else None
        ckpt = s1_dir / "checkpoint.json" if s1_dir else None
        try:
            s1 = run_stage1(binary_projection(d), d.T, self.cfg.stage1_config(), self.rng("stage1"))
            pe = mbr_point_estimate(s1, d.n_nodes)
        except Exception as exc:
            raise StageError("stage1", exc) from exc
        if s1_dir:
            save_checkpoint(s1, ckpt)
            write_csv(s1_dir / "trace.csv", ["chain", "draw", "logpost"] + s1.hyper_names(), s1.trace_rows(),
                      self.chash)
            p = pe.w_hat.shape[1]
            write_csv(s1_dir / "point_estimate.csv", ["node", "w0"] + [f"w_{k}" for k in range(p)],
                      ([int(n), pe.w0_hat[i]] + list(pe.w_hat[i]) for i, n in enumerate(pe.nodes)), self.chash)
            write_json(s1_dir / "summary.json",
                       {"n_nodes": pe.n_nodes, "hyper_mean": pe.hyper_hat, "gelman_rubin_logpost": s1.gelman_rubin(),
                        "accept_hmc": [c.accept_hmc for c in s1.chains],
                        "accept_hyper": [c.accept_hyper for c in s1.chains], "n_samples": s1.n_samples},
                       self.chash)
        try:
            idx = d.pairs
            data = KernelData.build(d, pe.mu(idx.a, idx.b), self.cfg.stage2.pair_set)
            s2 = run_stage2(data, self.cfg.stage2_config(), self.rng("stage2"))
        except Exception as exc:
            raise StageError("stage2", exc, ckpt) from exc
        if out_name is not None:
            s2_dir = self.dir(prefix + "stage2")
            write_csv(s2_dir / "trace.csv", ["chain", "draw", "logpost", "eta", "delta"], s2.trace_rows(),
                      self.chash)
            write_json(s2_dir / "summary.json", s2.summary(), self.chash)
        return FittedModel("hawkes_ccrm", weights=pe.full_weights(), eta=s2.stacked("eta"),
                           delta=s2.stacked("delta"), meta={"stage1": s1, "point_estimate": pe, "stage2": s2})

    # -- commands ------------------------------------------------------------

    def simulate(self) -> Dict:
        d = self.dataset()
        out = self.dir("simulate")
        write_edge_list(out / "interactions.txt", d, self.chash)
        summary = dict(count_summary(d), T=d.T)
        if d.truth is not None:
            tr = d.truth
            p = tr.w.shape[1]
            write_csv(out / "ground_truth_weights.csv", ["node", "theta", "w0"] + [f"w_{k}" for k in range(p)],
                      ([i, tr.atoms.theta[a], tr.atoms.w0[a]] + list(tr.atoms.w[a])
                       for i, a in enumerate(tr.active)), self.chash)
            summary.update(ggp=vars(tr.ggp), a=list(tr.ccrm.a), b=list(tr.ccrm.b), eta=tr.kernel.eta,
                           delta=tr.kernel.delta, n_atoms=len(tr.atoms))
        write_json(out / "summary.json", summary, self.chash)
        return summary

    def moments(self) -> Dict:
        h, c, k = self.cfg.hyper()
        m = self.cfg.moments
        rng = self.rng("moments")
        rep = moments_report(h, c, k, self.cfg.model.T, m.method, m.n_samples, self.cfg.run.eps, rng)
        rec = rep.to_record()
        if m.replicates > 0:
            counts = np.array([[s["interactions"], s["edges"], s["nodes"]] for s in
                               (count_summary(generate(h, c, k, self.cfg.model.T, rng, self.cfg.run.eps))
                                for _ in range(m.replicates))], dtype=float)
            rec["empirical"] = {name: {"mean": counts[:, j].mean(),
                                       "se": counts[:, j].std(ddof=1) / np.sqrt(len(counts)) if len(counts) > 1
                                       else float("nan")}
                                for j, name in enumerate(("interactions", "edges", "nodes"))}
        write_json(self.dir("moments") / "report.json", rec, self.chash)
        return rec

    def fit_command(self) -> Dict:
        d = self.dataset()
        model = self.fit(d, "")
        return model.meta["stage2"].summary()

    def _load_fit(self, fit_dir: Path) -> FittedModel:
        s1 = read_csv(fit_dir / "stage1" / "point_estimate.csv")
        with open(fit_dir / "stage1" / "summary.json") as fh:
            n_nodes = int(json.load(fh)["n_nodes"])
        p = sum(1 for k in s1[0] if k.startswith("w_"))
        W = np.zeros((n_nodes, p))
        for row in s1:
            W[int(row["node"])] = [float(row[f"w_{k}"]) for k in range(p)]
        s2 = read_csv(fit_dir / "stage2" / "trace.csv")
        return FittedModel("hawkes_ccrm", weights=W, eta=[float(r["eta"]) for r in s2],
                           delta=[float(r["delta"]) for r in s2])

    def predict(self) -> Dict:
        d = self.dataset()
        pc = self.cfg.predict
        out = self.dir("predict")
        if pc.fit_dir:
            model = self._load_fit(Path(pc.fit_dir))
            if pc.horizon <= 0:
                raise ValueError("[predict] horizon must be positive when forecasting from a fit directory")
            pairs = np.unique(np.stack([d.src, d.dst], axis=1), axis=0)
            pred = predict_counts(model, d, pairs, pc.horizon, self.cfg.evaluate.method, self.cfg.evaluate.n_sims,
                                  self.rng("predict"))
            write_csv(out / "predictions.csv", ["src", "dst", "predicted"],
                      ([int(i), int(j), v] for (i, j), v in zip(pairs, pred)), self.chash)
            summary = {"model": model.tag, "horizon": pc.horizon, "n_pairs": len(pairs), "total": float(pred.sum())}
        else:
            split = split_by_time(d, self.cfg.run.split)
            model = self._fit_model(pc.model, split.train, {})
            rep = evaluate_model(model, split, self.cfg.evaluate.method, self.cfg.evaluate.n_sims, self.rng("predict"))
            write_csv(out / "predictions.csv", ["src", "dst", "predicted", "actual"], rep.rows(), self.chash)
            summary = {"model": rep.model, "rmse": rep.rmse, "rmse_train_pairs": rep.rmse_train_pairs,
                       "T_split": split.T_split, "horizon": split.horizon}
        write_json(out / "summary.json", summary, self.chash)
        return summary

    def _fit_model(self, tag: str, train: InteractionDataset, cache: Dict) -> FittedModel:
        if tag in ("hawkes_ccrm", "ccrm"):
            if "hawkes_ccrm" not in cache:
                cache["hawkes_ccrm"] = self.fit(train, "evaluate/fit")
            full = cache["hawkes_ccrm"]
            if tag == "ccrm":
                return FittedModel("ccrm", weights=full.weights, meta=full.meta)
            return full
        if tag == "hawkes_global":
            return fit_hawkes_global(train, iterations=self.cfg.evaluate.global_iterations, rng=self.rng("global"))
        return fit_poisson_global(train)

    def evaluate(self) -> Dict:
        d = self.dataset()
        split = split_by_time(d, self.cfg.run.split)
        out = self.dir("evaluate")
        cache: Dict = {}
        results = {}
        for tag in self.cfg.evaluate.models:
            model = self._fit_model(tag, split.train, cache)
            rep = evaluate_model(model, split, self.cfg.evaluate.method, self.cfg.evaluate.n_sims,
                                 self.rng("predict"))
            write_csv(out / f"predictions_{tag}.csv", ["src", "dst", "predicted", "actual"], rep.rows(), self.chash)
            results[tag] = {"rmse": rep.rmse, "rmse_train_pairs": rep.rmse_train_pairs}
        summary = {"rmse": results, "T_split": split.T_split, "n_train": len(split.train),
                   "n_test": len(split.test), "n_pairs": int(len(evaluation_pairs(split)))}
        write_json(out / "summary.json", summary, self.chash)
        return summary

    def degrees(self) -> Dict:
        d = self.dataset()
        g = binary_projection(d)
        s1 = run_stage1(g, d.T, self.cfg.stage1_config(), self.rng("stage1"))
        rep = posterior_predictive_degrees(s1.hyper_draws(), d.T, g, self.cfg.degrees.replicates,
                                           self.rng("degrees"), self.cfg.run.eps)
        out = self.dir("degrees")
        write_csv(out / "histogram.csv", ["bin_lo", "bin_hi", "observed", "mean", "q05", "q95"], rep.rows(),
                  self.chash)
        summary = {"coverage": rep.coverage, "replicates": rep.replicates, "n_bins": int(rep.observed.size)}
        write_json(out / "summary.json", summary, self.chash)
        return summary

    def run(self) -> Dict:
        self.out.mkdir(parents=True, exist_ok=True)
        handler = {"simulate": self.simulate, "moments": self.moments, "fit": self.fit_command,
                   "predict": self.predict, "evaluate": self.evaluate, "degrees": self.degrees}[self.cfg.command]
        result = handler()
        write_json(self.out / "config.json", self.cfg.to_dict(), self.chash)
        write_manifest(self.out, self.cfg.command, self.chash)
        return result


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hawkes-ccrm", description="Sparse temporal networks with reciprocity.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS + ("defaults",))
    ap.add_argument("--config", help="INI config file; flags below override it")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--data", help="edge-list path (overrides [data] path)")
    ap.add_argument("--format", help="column order, e.g. src,dst,time")
    ap.add_argument("--split", type=float, help="train fraction of interactions")
    ap.add_argument("--p", type=int, help="number of communities")
    ap.add_argument("--iters-stage1", type=int)
    ap.add_argument("--iters-stage2", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "defaults":
        print(default_config_text())
        return 0
    try:
        cfg = RunConfig.from_file(args.config, args.command).override(
            seed=args.seed, out=args.out, data=args.data, format=args.format, split=args.split, p=args.p,
            iters_stage1=args.iters_stage1, iters_stage2=args.iters_stage2)
        result = Pipeline(cfg).run()
    except (ValueError, OSError, StageError) as exc:
        print(f"hawkes-ccrm: error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps({"command": cfg.command, "out": str(cfg.run.out), "config_hash": cfg.hash,
                      "result": _brief(result)}, indent=2, default=str))
    return 0


def _brief(result: Dict) -> Dict:
    return _jsonable({k: v for k, v in result.items() if not isinstance(v, (list, np.ndarray)) or len(v) < 20})


if __name__ == "__main__":
    sys.exit(main())
