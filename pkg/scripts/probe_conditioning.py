"""Calibration probe: toy encoder accuracy and m-conditioning response.

Dev-only script; not part of the package. Trains the toy encoder, then a
small denoiser for a configurable budget, and reports realized similarity
per requested m so the toy budget for the acceptance suite can be pinned.
"""

import argparse
import logging
import time
from pathlib import Path

import numpy as np
import torch

from simdiff.diffusion import DiffusionTrainConfig, make_noise_schedule, train_diffusion
from simdiff.diffusion.unet import DenoiserConfig
from simdiff.embedder import (
    EncoderTrainConfig,
    cosine_similarity,
    embed,
    load_encoder,
    save_encoder,
    train_encoder,
)
from simdiff.manifest import read_manifest
from simdiff.sampler import SamplerConfig, generate_group
from simdiff.toycorpus import make_toy_corpus, render_identity_images

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
log = logging.getLogger("probe")

p = argparse.ArgumentParser()
p.add_argument("--workdir", default="/tmp/probe")
p.add_argument("--epochs", type=int, default=12)
p.add_argument("--lam", type=float, default=0.5)
p.add_argument("--lr", type=float, default=2e-4)
p.add_argument("--batch", type=int, default=48)
p.add_argument("--widths", default="24,48")
p.add_argument("--T", type=int, default=200)
p.add_argument("--enc-epochs", type=int, default=25)
p.add_argument("--n-per-m", type=int, default=50)
p.add_argument("--seed", type=int, default=0)
args = p.parse_args()

wd = Path(args.workdir)
wd.mkdir(parents=True, exist_ok=True)

t0 = time.time()
corpus_dir = wd / "corpus"
if not (corpus_dir / "manifest.jsonl").exists():
    log.info("rendering toy corpus")
    corpus = make_toy_corpus(100, 30, 32, seed=1, out_dir=corpus_dir)
else:
    corpus = read_manifest(corpus_dir / "manifest.jsonl")
log.info("corpus ready (%.1fs)", time.time() - t0)

enc_path = wd / "encoder.pt"
if enc_path.exists():
    enc = load_encoder(enc_path)
    log.info("encoder loaded, final acc=%.4f", enc.history[-1]["train_acc"])
else:
    t0 = time.time()
    enc = train_encoder(corpus, EncoderTrainConfig(epochs=args.enc_epochs, seed=2))
    save_encoder(enc, enc_path)
    log.info("encoder trained in %.1fs, acc trace: %s", time.time() - t0,
             [round(h["train_acc"], 3) for h in enc.history])

sch = make_noise_schedule(args.T)
widths = tuple(int(w) for w in args.widths.split(","))
mc = DenoiserConfig(resolution=32, widths=widths, embed_dim=enc.dim, cond_width=64)
cfg = DiffusionTrainConfig(
    lambda_weight=args.lam, epochs=args.epochs, batch_size=args.batch,
    lr=args.lr, seed=args.seed,
)
t0 = time.time()
model = train_diffusion(corpus, enc, cfg, sch, model_config=mc)
log.info("diffusion trained in %.1f min", (time.time() - t0) / 60)
nparam = sum(p.numel() for p in model.parameters())
log.info("denoiser params: %d", nparam)

# fresh inquiry identity, not in the training corpus
inquiry = render_identity_images(np.random.SeedSequence(777), 1, 32)[0]
inq_emb = embed(inquiry, enc)

t0 = time.time()
ms = [-0.8, -0.4, 0.0, 0.4, 0.8]
means = []
for m in ms:
    imgs = generate_group(model, sch, inquiry, enc, m, args.n_per_m, base_seed=9000,
                          config=SamplerConfig(num_steps=20, seed=0))
    sims = [cosine_similarity(inq_emb, embed(im, enc)) for im in imgs]
    means.append(float(np.mean(sims)))
    log.info("m=%+.1f realized mean=%.4f sd=%.4f", m, np.mean(sims), np.std(sims))
log.info("sampling took %.1f min", (time.time() - t0) / 60)

from scipy.stats import spearmanr
rho = spearmanr(ms, means).statistic
log.info("RESULT lam=%s epochs=%d widths=%s: means=%s spearman=%.3f",
         args.lam, args.epochs, args.widths, [round(v, 3) for v in means], rho)
