"""Regenerates the bundled toy fixture used by the test suites.

Trains a 2-layer character-level decoder (pre-LayerNorm, causal multi-head
attention without biases, ReLU feed-forward) on corpus.txt and writes:

  toy_model.ivq      trained weights in the IVQ1 container (f32)
  calib.txt          calibration token sequences (training split)
  heldout.txt        evaluation token sequences (held-out split)
  reference.ivq      tokens + logits of the first calibration sequence

The container writer below is deliberately independent of the C++ code so
the reference logits act as a cross-implementation check.

Usage: python generate_fixture.py [--steps N] [--seed S]
"""

import argparse
import math
import struct
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

HERE = Path(__file__).resolve().parent

VOCAB = 128
LAYERS = 2
D_MODEL = 64
D_FF = 128
HEADS = 4
CONTEXT = 128


class Block(nn.Module):
    def __init__(self):
        super().__init__()
        self.ln_attn = nn.LayerNorm(D_MODEL, eps=1e-5)
        self.wq = nn.Linear(D_MODEL, D_MODEL, bias=False)
        self.wk = nn.Linear(D_MODEL, D_MODEL, bias=False)
        self.wv = nn.Linear(D_MODEL, D_MODEL, bias=False)
        self.wo = nn.Linear(D_MODEL, D_MODEL, bias=False)
        self.ln_ffn = nn.LayerNorm(D_MODEL, eps=1e-5)
        self.up = nn.Linear(D_MODEL, D_FF)
        self.down = nn.Linear(D_FF, D_MODEL)

    def forward(self, x):
        t = x.shape[1]
        h = self.ln_attn(x)
        dh = D_MODEL // HEADS

        def split(m):
            return m.view(x.shape[0], t, HEADS, dh).transpose(1, 2)

        q, k, v = split(self.wq(h)), split(self.wk(h)), split(self.wv(h))
        att = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
        mask = torch.triu(torch.ones(t, t, dtype=torch.bool), diagonal=1)
        att = att.masked_fill(mask, float("-inf")).softmax(-1)
        ctx = (att @ v).transpose(1, 2).reshape(x.shape[0], t, D_MODEL)
        x = x + self.wo(ctx)
        return x + self.down(F.relu(self.up(self.ln_ffn(x))))


class TinyLM(nn.Module):
    def __init__(self):
        super().__init__()
        self.tok = nn.Embedding(VOCAB, D_MODEL)
        self.pos = nn.Embedding(CONTEXT, D_MODEL)
        self.blocks = nn.ModuleList(Block() for _ in range(LAYERS))
        self.ln_final = nn.LayerNorm(D_MODEL, eps=1e-5)
        self.out = nn.Linear(D_MODEL, VOCAB, bias=False)

    def forward(self, idx):
        x = self.tok(idx) + self.pos(torch.arange(idx.shape[1]))
        for b in self.blocks:
            x = b(x)
        return self.out(self.ln_final(x))


def named_tensors(model):
    yield "tok_embedding", model.tok.weight
    yield "pos_embedding", model.pos.weight
    for l, b in enumerate(model.blocks):
        p = f"layers.{l}."
        yield p + "ln_attn.gamma", b.ln_attn.weight
        yield p + "ln_attn.beta", b.ln_attn.bias
        yield p + "attn.wq", b.wq.weight
        yield p + "attn.wk", b.wk.weight
        yield p + "attn.wv", b.wv.weight
        yield p + "attn.wo", b.wo.weight
        yield p + "ln_ffn.gamma", b.ln_ffn.weight
        yield p + "ln_ffn.beta", b.ln_ffn.bias
        yield p + "ffn.w_up", b.up.weight
        yield p + "ffn.b_up", b.up.bias
        yield p + "ffn.w_down", b.down.weight
        yield p + "ffn.b_down", b.down.bias
    yield "ln_final.gamma", model.ln_final.weight
    yield "ln_final.beta", model.ln_final.bias
    yield "output", model.out.weight


def write_container(path, tensors):
    """tensors: list of (name, dtype_tag, bits, dims, payload_bytes)."""
    out = bytearray(b"IVQ1")
    out += struct.pack("<II", 1, len(tensors))
    names = set()
    for name, dtype, bits, dims, payload in tensors:
        if name in names:
            raise ValueError(f"duplicate tensor name {name}")
        names.add(name)
        raw = name.encode("utf-8")
        out += struct.pack("<I", len(raw)) + raw
        out += struct.pack("<III", dtype, bits, len(dims))
        out += struct.pack(f"<{len(dims)}I", *dims)
        out += struct.pack("<Q", len(payload)) + payload
    out += b"META"
    out += struct.pack("<10I", LAYERS, D_MODEL, D_FF, VOCAB, HEADS, CONTEXT, 0, 0, 0, 0)
    Path(path).write_bytes(bytes(out))


def f32_record(name, array):
    a = np.ascontiguousarray(array, dtype="<f4")
    return (name, 0, 0, list(a.shape), a.tobytes())


def encode(text):
    return [min(ord(c), VOCAB - 1) for c in text]


def chunks(ids, count, length, stride):
    return [ids[i * stride : i * stride + length] for i in range(count)]


def write_tokens(path, seqs):
    Path(path).write_text("".join(" ".join(map(str, s)) + "\n" for s in seqs))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--seed", type=int, default=1234)
    args = ap.parse_args()

    torch.manual_seed(args.seed)
    np.random.seed(args.seed)
    torch.set_num_threads(1)

    ids = encode((HERE / "corpus.txt").read_text())
    cut = int(len(ids) * 0.85)
    train, held = ids[:cut], ids[cut:]

    model = TinyLM()
    opt = torch.optim.AdamW(model.parameters(), lr=3e-3, weight_decay=0.01)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, args.steps)
    data = torch.tensor(train)
    gen = torch.Generator().manual_seed(args.seed)
    for step in range(args.steps):
        starts = torch.randint(0, len(train) - CONTEXT - 1, (32,), generator=gen)
        batch = torch.stack([data[s : s + CONTEXT + 1] for s in starts])
        logits = model(batch[:, :-1])
        loss = F.cross_entropy(logits.reshape(-1, VOCAB), batch[:, 1:].reshape(-1))
        if not torch.isfinite(loss):
            raise RuntimeError("training diverged")
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if step % 250 == 0 or step == args.steps - 1:
            print(f"step {step} loss {loss.item():.4f}")

    model.eval()
    write_container(
        HERE / "toy_model.ivq",
        [f32_record(n, t.detach().numpy()) for n, t in named_tensors(model)],
    )

    calib = chunks(train, 8, CONTEXT, 997)
    heldout = chunks(held, 16, CONTEXT, CONTEXT)
    write_tokens(HERE / "calib.txt", calib)
    write_tokens(HERE / "heldout.txt", heldout)

    with torch.no_grad():
        ref = model(torch.tensor([calib[0]]))[0].numpy()
        held_logits = model(torch.tensor(heldout))
        ce = F.cross_entropy(
            held_logits[:, :-1].reshape(-1, VOCAB), torch.tensor(heldout)[:, 1:].reshape(-1)
        ).item()
    print(f"held-out perplexity {math.exp(ce):.3f}")

    tokens = np.asarray(calib[0], dtype="<u4")
    write_container(
        HERE / "reference.ivq",
        [("tokens", 2, 32, [len(tokens)], tokens.tobytes()), f32_record("logits", ref)],
    )


if __name__ == "__main__":
    main()
