"""Self-describing checkpoints: JSON manifest + raw little-endian float32 blocks.

Layout: magic "HDRN", u64 manifest length (little endian), UTF-8 manifest
JSON, then each tensor's float32 payload in manifest order. The manifest
records the format version, creation seed, a config snapshot, the
vocabulary (id order), and per-tensor name/shape/frozen/offset entries.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import CheckpointError
from .model import ModelConfig, Seq2SeqModel, Encoder
from .layers import Module

MAGIC = b"HDRN"
FORMAT_VERSION = 1


def _collect(module: Module) -> List[Tuple[str, np.ndarray, bool]]:
    out = []
    for name, p in module.named_parameters():
        out.append((name, p.tensor.data, p.frozen))
    return out


def _write(path, kind: str, config: dict, vocab: Optional[dict],
           tensors: List[Tuple[str, np.ndarray, bool]], seed: Optional[int],
           extra: Optional[dict] = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, data, frozen in tensors:
        arr = np.ascontiguousarray(data, dtype="<f4")
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "offset": offset,
            "frozen": frozen,
        })
        blobs.append(arr.tobytes())
        offset += len(blobs[-1])
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "seed": seed,
        "config": config,
        "vocab": vocab,
        "tensors": entries,
        "payload_bytes": offset,
    }
    if extra:
        manifest.update(extra)
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(np.uint64(len(blob)).tobytes())
        f.write(blob)
        for b in blobs:
            f.write(b)


def _read(path) -> Tuple[dict, Dict[str, np.ndarray], Dict[str, bool]]:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    raw = p.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{p}: not a checkpoint (bad magic)")
    n = int(np.frombuffer(raw[4:12], dtype=np.uint64)[0])
    try:
        manifest = json.loads(raw[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{p}: corrupt manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{p}: format version {manifest.get('format_version')} "
            f"not supported (expected {FORMAT_VERSION})"
        )
    payload = raw[12 + n:]
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(
            f"{p}: truncated payload ({len(payload)} of "
            f"{manifest['payload_bytes']} bytes)"
        )
    params: Dict[str, np.ndarray] = {}
    frozen: Dict[str, bool] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=start)
        if arr.size != count:
            raise CheckpointError(f"{p}: tensor {entry['name']!r} out of bounds")
        params[entry["name"]] = arr.reshape(shape).copy()
        frozen[entry["name"]] = bool(entry.get("frozen", False))
    return manifest, params, frozen


# ---------------------------------------------------------------------------
# encoder checkpoints (pre-training stages)
# ---------------------------------------------------------------------------

def save_encoder_checkpoint(encoder: Encoder, vocab_list: List[str], path,
                            seed: Optional[int] = None,
                            head: Optional[Module] = None,
                            stage: str = "sr") -> None:
    config = {
        "d_model": encoder.d_model,
        "n_heads": encoder.layers[0].self_attn.n_heads,
        "n_layers": len(encoder.layers),
        "d_ff": encoder.layers[0].ffn.w1.tensor.shape[1],
        "max_len": encoder.max_len,
        "vocab_size": encoder.vocab_size,
    }
    tensors = _collect(encoder)
    if head is not None:
        tensors += [(f"head.{n}", p.tensor.data, p.frozen)
                    for n, p in head.named_parameters()]
    _write(path, "encoder", config, {"tokens": vocab_list}, tensors, seed,
           extra={"stage": stage})


def load_encoder_checkpoint(path):
    """Returns (config dict, params dict, vocab token list, manifest)."""
    manifest, params, _ = _read(path)
    if manifest["kind"] != "encoder":
        raise CheckpointError(f"{path}: expected an encoder checkpoint")
    vocab_list = manifest["vocab"]["tokens"]
    encoder_params = {k: v for k, v in params.items() if not k.startswith("head.")}
    return manifest["config"], encoder_params, vocab_list, manifest


def build_encoder_from_checkpoint(path, dropout: float = 0.1):
    """Materialize the encoder (and vocab list) stored at `path`."""
    config, params, vocab_list, manifest = load_encoder_checkpoint(path)
    rng = np.random.default_rng(0)
    encoder = Encoder(config["vocab_size"], config["d_model"], config["n_heads"],
                      config["n_layers"], config["d_ff"], config["max_len"],
                      dropout, rng)
    named = dict(encoder.named_parameters())
    for name, arr in params.items():
        if name not in named:
            raise CheckpointError(f"{path}: unexpected tensor {name!r}")
        if named[name].data.shape != arr.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: "
                f"{arr.shape} vs {named[name].data.shape}"
            )
        named[name].tensor.data = arr.copy()
    missing = set(named) - set(params)
    if missing:
        raise CheckpointError(f"{path}: missing tensors: {sorted(missing)[:3]}")
    return encoder, vocab_list, manifest


# ---------------------------------------------------------------------------
# full model checkpoints
# ---------------------------------------------------------------------------

def save_model_checkpoint(model: Seq2SeqModel, src_vocab: List[str],
                          tgt_vocab: List[str], path,
                          seed: Optional[int] = None) -> None:
    _write(path, "seq2seq", model.cfg.to_dict(),
           {"src": src_vocab, "tgt": tgt_vocab}, _collect(model), seed)


def load_model_checkpoint(path):
    """Returns (model, src vocab list, tgt vocab list, manifest)."""
    manifest, params, frozen = _read(path)
    if manifest["kind"] != "seq2seq":
        raise CheckpointError(f"{path}: expected a model checkpoint")
    cfg = ModelConfig.from_dict(manifest["config"])
    model = Seq2SeqModel(cfg, seed=manifest.get("seed") or 0)
    named = dict(model.named_parameters())
    if set(named) != set(params):
        extra = sorted(set(params) - set(named))[:3]
        missing = sorted(set(named) - set(params))[:3]
        raise CheckpointError(
            f"{path}: parameter set mismatch (extra {extra}, missing {missing})"
        )
    for name, arr in params.items():
        if named[name].data.shape != arr.shape:
            raise CheckpointError(
                f"{path}: shape mismatch for {name!r}: "
                f"{arr.shape} vs {named[name].data.shape}"
            )
        named[name].tensor.data = arr.copy()
        named[name].frozen = frozen[name]
    return model, manifest["vocab"]["src"], manifest["vocab"]["tgt"], manifest


def load_state(path) -> Dict[str, np.ndarray]:
    """Raw name -> array mapping (for warm starts), any checkpoint kind."""
    _, params, _ = _read(path)
    return params


def checkpoint_kind(path) -> str:
    manifest, _, _ = _read(path)
    return manifest["kind"]
