"""Command-line surface: datagen, train-base, erase, sample, eval, compare.

Every command reads one TOML config (plus dotted --set overrides), writes
its outputs into the run directory, and drops a `<command>.record.json`
holding the fully resolved config, SHA-256 hashes of the input files, and
the seed, so a rerun with the same record inputs is byte-identical.

Seed discipline: [run].seed feeds fixed per-phase streams (vocabulary 1,
base training 2, erasure 3, sampling 4, evaluation 50+, comparison 100+),
so commands never share a random stream.

Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
4 I/O or integrity failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .checkpoint import load_model, save_model
from .config import OUTPUT_ROOT_ENV, RunConfig, load_config
from .data import load_dataset, make_mixture, save_dataset
from .erasure import esd_finetune, sdd_finetune
from .errors import ChecksumError, ConfigError, DivergenceError
from .guidance import GuidanceConfig
from .metrics import (
    EvalReport,
    SamplerSettings,
    alignment_score,
    erased_fraction,
    frechet_distance,
    paired_divergence,
)
from .network import make_vocab, model_predictor
from .rng import RngStream, as_generator
from .sampling import denoise, timestep_grid
from .svgplot import save_scatter
from .training import train_base
from .validation import check_concept_ids


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_record(out_dir, command, cfg: RunConfig, inputs: dict, outputs):
    resolved = cfg.resolved()
    # the record describes the computation, not the destination: reruns into
    # a different directory must produce byte-identical files
    resolved.get("run", {}).pop("out_dir", None)
    record = {
        "command": command,
        "config": resolved,
        "seed": cfg.seed,
        "inputs": {name: _sha256(path) for name, path in sorted(inputs.items())},
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, f"{command}.record.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _draw(predict, guidance, sched, n, n_steps, rng, dim):
    grid = timestep_grid(sched.T, n_steps)
    z = as_generator(rng).standard_normal((int(n), int(dim)))
    return denoise(z, predict, guidance, sched, grid)


def _prompt_text(ids) -> str:
    return "+".join(str(i) for i in ids) if ids else "-"


def cmd_datagen(cfg: RunConfig, out_dir, args) -> list:
    d = cfg.plain("dataset")
    seed = cfg.seed if d["seed"] is None else int(d["seed"])
    ds = make_mixture(d["preset"], seed, int(d["n"]))
    save_dataset(os.path.join(out_dir, "dataset.bin"), ds)
    save_scatter(os.path.join(out_dir, "dataset.svg"), ds.points,
                 mix=ds.mixture, labels=ds.labels, title=str(d["preset"]))
    return ["dataset.bin", "dataset.svg"]


def cmd_train_base(cfg: RunConfig, out_dir, args) -> list:
    ds = load_dataset(args.data)
    arch = cfg.architecture()
    sched = cfg.schedule()
    vocab = make_vocab(ds.mixture.names, arch.d_e, RngStream(cfg.seed, 1))
    result = train_base(ds, vocab, arch, sched, cfg.train_optim(),
                        RngStream(cfg.seed, 2), train=cfg.train_config())
    save_model(os.path.join(out_dir, "base.ckpt"), result.params, vocab,
               meta={"phase": "base", "seed": cfg.seed,
                     "mixture_hash": ds.mixture.spec_hash()})
    _write_csv(os.path.join(out_dir, "loss.csv"), ("step", "loss"),
               [(i, float(v)) for i, v in enumerate(result.losses)])
    return ["base.ckpt", "loss.csv"]


def cmd_erase(cfg: RunConfig, out_dir, args) -> list:
    base, vocab, _ = load_model(args.base)
    sched = cfg.schedule()
    mix = load_dataset(args.data).mixture if args.data else None
    ecfg = cfg.erase_config()
    rng = RngStream(cfg.seed, 3)
    if ecfg.method == "sdd":
        student, teacher, hist = sdd_finetune(base, ecfg, vocab, sched, rng, mix=mix)
    else:
        teacher = None
        student, hist = esd_finetune(base, ecfg, vocab, sched, rng, mix=mix)

    outputs = []
    meta = {"phase": "erase", "method": ecfg.method, "seed": cfg.seed,
            "target_ids": list(ecfg.target_ids)}
    save_model(os.path.join(out_dir, "student.ckpt"), student, vocab,
               meta={**meta, "role": "student"})
    outputs.append("student.ckpt")
    if teacher is not None:
        save_model(os.path.join(out_dir, "teacher.ckpt"), teacher, vocab,
                   meta={**meta, "role": "teacher"})
        outputs.append("teacher.ckpt")

    _write_csv(os.path.join(out_dir, "history.csv"),
               ("iteration", "loss", "lr", "prompt"),
               [(i + 1, float(hist.losses[i]), float(hist.lrs[i]),
                 _prompt_text(hist.prompts[i]))
                for i in range(len(hist.losses))])
    outputs.append("history.csv")
    _write_csv(os.path.join(out_dir, "metrics.csv"),
               ("iteration", "frechet_to_uncond", "erased_fraction"),
               [(s.iteration, s.frechet_to_uncond, s.erased_fraction)
                for s in hist.snapshots])
    outputs.append("metrics.csv")

    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    for snap in hist.snapshots:
        for role, params in (("student", snap.student), ("teacher", snap.teacher)):
            if params is None:
                continue
            name = f"{role}-it{snap.iteration:06d}.ckpt"
            save_model(os.path.join(ckpt_dir, name), params, vocab,
                       meta={**meta, "role": role, "iteration": snap.iteration})
            outputs.append(f"checkpoints/{name}")
    return outputs


def cmd_sample(cfg: RunConfig, out_dir, args) -> list:
    params, vocab, _ = load_model(args.model)
    sched = cfg.schedule()
    s = cfg.plain("sample")
    prompt = tuple(int(i) for i in s["prompt_ids"])
    if prompt:
        check_concept_ids(prompt, vocab.K, "prompt_ids")
    guidance = GuidanceConfig(method="cfg", s_g=float(s["s_g"]), prompt_ids=prompt)
    predict = model_predictor(params, vocab, sched)
    x = _draw(predict, guidance, sched, s["n"], s["n_steps"],
              RngStream(cfg.seed, 4), params.arch.D)
    _write_csv(os.path.join(out_dir, "samples.csv"),
               tuple(f"x{i}" for i in range(params.arch.D)),
               [tuple(float(v) for v in row) for row in x])
    mix = load_dataset(args.data).mixture if args.data else None
    save_scatter(os.path.join(out_dir, "samples.svg"), x[:, :2], mix=mix,
                 title=f"prompt {_prompt_text(prompt)}")
    return ["samples.csv", "samples.svg"]


def _eval_model(params, vocab, sched, mix, e, seed):
    """Shared by eval and compare: per-concept conditional probes."""
    predict = model_predictor(params, vocab, sched)
    n, n_steps = int(e["n"]), int(e["n_steps"])
    scale, threshold = float(e["cfg_scale"]), float(e["threshold"])
    uncond = _draw(predict, GuidanceConfig(method="cfg", s_g=scale, prompt_ids=()),
                   sched, n, n_steps, RngStream(seed, 50), params.arch.D)
    fractions, fd_ref, fd_unc, aligns = {}, {}, {}, []
    cond_samples = {}
    for k in range(1, mix.K + 1):
        cond = _draw(predict,
                     GuidanceConfig(method="cfg", s_g=scale, prompt_ids=(k,)),
                     sched, n, n_steps, RngStream(seed, 50 + k), params.arch.D)
        cond_samples[k] = cond
        ref, _ = mix.sample(n, RngStream(seed, 80 + k), concept_ids=(k,))
        fractions[k] = erased_fraction(cond, mix, k, threshold)
        fd_ref[k] = frechet_distance(cond, ref)
        fd_unc[k] = frechet_distance(cond, uncond)
        aligns.append(alignment_score(cond, np.full(len(cond), k), mix))
    # row 0: how much of the unconditional draw still classifies as any
    # concept (threshold > 0.5 makes the per-concept events disjoint)
    fractions[0] = float(sum(erased_fraction(uncond, mix, k, threshold)
                             for k in range(1, mix.K + 1)))
    return fractions, fd_ref, fd_unc, float(np.mean(aligns)), cond_samples, uncond


def cmd_eval(cfg: RunConfig, out_dir, args) -> list:
    params, vocab, _ = load_model(args.model)
    ds = load_dataset(args.data)
    mix = ds.mixture
    sched = cfg.schedule()
    e = cfg.plain("eval")
    fractions, fd_ref, fd_unc, align, cond_samples, uncond = _eval_model(
        params, vocab, sched, mix, e, cfg.seed)
    report = EvalReport(
        method="checkpoint",
        seeds=(cfg.seed,),
        n_samples=int(e["n"]),
        erased_fractions=fractions,
        frechet_to_reference=fd_ref,
        frechet_to_uncond=fd_unc,
        alignment=align,
    )
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8",
              newline="\n") as fh:
        json.dump({
            "method": report.method,
            "seeds": list(report.seeds),
            "n_samples": report.n_samples,
            "erased_fractions": {str(k): v for k, v in fractions.items()},
            "frechet_to_reference": {str(k): v for k, v in fd_ref.items()},
            "frechet_to_uncond": {str(k): v for k, v in fd_unc.items()},
            "alignment": align,
        }, fh, sort_keys=True, indent=2)
        fh.write("\n")
    rows = [(k, fractions[k], fd_ref[k], fd_unc[k]) for k in sorted(fd_ref)]
    rows.append((0, fractions[0], float("nan"), float("nan")))
    _write_csv(os.path.join(out_dir, "report.csv"),
               ("concept", "erased_fraction", "frechet_to_reference",
                "frechet_to_uncond"), rows)
    pts = np.concatenate([cond_samples[k] for k in sorted(cond_samples)])
    labels = np.concatenate([np.full(len(cond_samples[k]), k)
                             for k in sorted(cond_samples)])
    save_scatter(os.path.join(out_dir, "report.svg"), pts[:, :2], mix=mix,
                 labels=labels, title="conditional samples")
    return ["report.json", "report.csv", "report.svg"]


def _compare_target(cfg: RunConfig) -> tuple[int, ...]:
    erase = cfg.sections["erase"]
    if "target_ids" in erase:
        return tuple(int(i) for i in erase["target_ids"])
    guidance = cfg.sections["guidance"]
    if guidance.get("target_ids"):
        return tuple(int(i) for i in guidance["target_ids"])
    return (1,)


def cmd_compare(cfg: RunConfig, out_dir, args) -> list:
    base, vocab, _ = load_model(args.base)
    ds = load_dataset(args.data)
    mix = ds.mixture
    sched = cfg.schedule()
    e = cfg.plain("eval")
    n, n_steps = int(e["n"]), int(e["n_steps"])
    scale, threshold = float(e["cfg_scale"]), float(e["threshold"])
    target = _compare_target(cfg)
    check_concept_ids(target, mix.K, "target_ids")
    k = target[0]
    settings = SamplerSettings(n_steps=n_steps, sampler="ddim")
    div_seeds = tuple(range(64))
    base_pred = model_predictor(base, vocab, sched)
    gtable = cfg.sections["guidance"]
    defense_sg = float(gtable.get("s_g", 3.0))
    defense_ss = float(gtable.get("s_s", 1.0))
    sld_lambda = float(gtable.get("sld_lambda", 1.0))
    sega_lambda = float(gtable.get("sega_lambda", 10.0))

    ref, _ = mix.sample(n, RngStream(cfg.seed, 80 + k), concept_ids=(k,))
    rows = []

    def conditional_row(name, params, stream):
        predict = model_predictor(params, vocab, sched)
        g = GuidanceConfig(method="cfg", s_g=scale, prompt_ids=target)
        x = _draw(predict, g, sched, n, n_steps, RngStream(cfg.seed, stream),
                  params.arch.D)
        div = paired_divergence(base_pred, predict, g, g, div_seeds, sched,
                                settings, dim=params.arch.D)
        rows.append((name, "conditional", erased_fraction(x, mix, k, threshold),
                     frechet_distance(x, ref), div,
                     alignment_score(x, np.full(len(x), k), mix)))

    def defended_row(name, method, stream, **kw):
        g = GuidanceConfig(method=method, prompt_ids=(), target_ids=target, **kw)
        x = _draw(base_pred, g, sched, n, n_steps, RngStream(cfg.seed, stream),
                  base.arch.D)
        plain = GuidanceConfig(method="none", prompt_ids=())
        div = paired_divergence(base_pred, base_pred, plain, g, div_seeds, sched,
                                settings, dim=base.arch.D)
        rows.append((name, "unconditional", erased_fraction(x, mix, k, threshold),
                     frechet_distance(x, ref), div,
                     alignment_score(x, np.full(len(x), k), mix)))

    inputs = {"base": args.base, "data": args.data}
    conditional_row("base", base, 100)
    if args.sdd:
        sdd_params, _, _ = load_model(args.sdd)
        conditional_row("sdd", sdd_params, 101)
        inputs["sdd"] = args.sdd
    if args.esd:
        esd_params, _, _ = load_model(args.esd)
        conditional_row("esd_x", esd_params, 102)
        inputs["esd"] = args.esd
    unc = _draw(base_pred, GuidanceConfig(method="none", prompt_ids=()), sched,
                n, n_steps, RngStream(cfg.seed, 103), base.arch.D)
    rows.append(("base", "unconditional",
                 erased_fraction(unc, mix, k, threshold),
                 frechet_distance(unc, ref), 0.0,
                 alignment_score(unc, np.full(len(unc), k), mix)))
    defended_row("neg_prompt", "neg_prompt", 104, s_g=defense_sg)
    defended_row("sld", "sld", 105, s_g=defense_sg, s_s=defense_ss,
                 sld_lambda=sld_lambda)
    defended_row("sega", "sega", 106, s_g=defense_sg, s_s=defense_ss,
                 sega_lambda=sega_lambda)

    header = ("method", "protocol", "erased_fraction", "frechet_to_reference",
              "paired_divergence", "alignment")
    _write_csv(os.path.join(out_dir, "compare.csv"), header, rows)
    with open(os.path.join(out_dir, "compare.md"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("| " + " | ".join(header) + " |\n")
        fh.write("|" + "---|" * len(header) + "\n")
        for row in rows:
            fh.write("| " + " | ".join(_cell(v) for v in row) + " |\n")
    return ["compare.csv", "compare.md"], inputs


def _common_flags(p):
    p.add_argument("-c", "--config", default=None, help="TOML config file")
    p.add_argument("-s", "--set", action="append", default=[], metavar="K=V",
                   dest="overrides", help="override section.key=value")
    p.add_argument("-o", "--out", default=None,
                   help=f"output directory (default [run].out_dir or ${OUTPUT_ROOT_ENV})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eraselab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="sample a labeled mixture dataset")
    _common_flags(p)

    p = sub.add_parser("train-base", help="fit the conditional denoiser")
    _common_flags(p)
    p.add_argument("--data", required=True, help="dataset file")

    p = sub.add_parser("erase", help="run a concept-removal fine-tune")
    _common_flags(p)
    p.add_argument("--base", required=True, help="base checkpoint")
    p.add_argument("--data", default=None, help="dataset file for metrics")

    p = sub.add_parser("sample", help="draw guided samples from a checkpoint")
    _common_flags(p)
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--data", default=None, help="dataset file for plot contours")

    p = sub.add_parser("eval", help="score a checkpoint against its mixture")
    _common_flags(p)
    p.add_argument("--model", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="dataset file")

    p = sub.add_parser("compare", help="method comparison table")
    _common_flags(p)
    p.add_argument("--base", required=True, help="base checkpoint")
    p.add_argument("--data", required=True, help="dataset file")
    p.add_argument("--sdd", default=None, help="sdd teacher checkpoint")
    p.add_argument("--esd", default=None, help="esd student checkpoint")

    return parser


_COMMANDS = {
    "datagen": (cmd_datagen, ()),
    "train-base": (cmd_train_base, ("data",)),
    "erase": (cmd_erase, ("base", "data")),
    "sample": (cmd_sample, ("model", "data")),
    "eval": (cmd_eval, ("model", "data")),
    "compare": (cmd_compare, ()),  # collects its own inputs
}


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config, args.overrides)
    if args.out is not None:
        cfg = load_config(args.config, list(args.overrides) +
                          [f"run.out_dir={json.dumps(args.out)}"])
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    fn, input_names = _COMMANDS[args.command]
    result = fn(cfg, out_dir, args)
    if isinstance(result, tuple):
        outputs, inputs = result
    else:
        outputs = result
        inputs = {name: getattr(args, name)
                  for name in input_names if getattr(args, name, None)}
    if args.config:
        inputs["config"] = args.config
    _write_record(out_dir, args.command, cfg, inputs, outputs)
    print(f"{args.command}: wrote {len(outputs)} files to {out_dir}")
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3
    except (ChecksumError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
