"""Trace directories: one tensor file per latent or cache, plus a manifest.

Layout inside a trace directory:

    z_{t}.azt               frame-1 latent at timestep t, t = steps..0
    kv_t{t}_b{b}_k.azt      spatial keys, timestep t, global block index b
    kv_t{t}_b{b}_v.azt      spatial values, same keying
    manifest.json           prompt, seed, schedule hash, file inventory

The manifest records every tensor file with its dims and content sha256,
plus a digest over the whole inventory, so byte-level reproducibility
can be asserted by comparing one string. All writes go through a temp
file and rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import re

from .sampler import GenerationTrace
from .tensor_store import read_tensor, write_tensor

MANIFEST_NAME = "manifest.json"
FORMAT_TAG = "anchorvid-trace-v1"

_LATENT_RE = re.compile(r"^z_(\d+)\.azt$")
_KV_RE = re.compile(r"^kv_t(\d+)_b(\d+)_([kv])\.azt$")


class ManifestError(ValueError):
    """manifest.json is missing fields, malformed, or inconsistent."""


def latent_filename(t: int) -> str:
    return f"z_{t}.azt"


def kv_filename(t: int, block: int, which: str) -> str:
    return f"kv_t{t}_b{block}_{which}.azt"


def _file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def manifest_digest(manifest: dict) -> str:
    """Digest over everything except the digest field itself."""
    body = {k: v for k, v in manifest.items() if k != "manifest_sha256"}
    return hashlib.sha256(
        json.dumps(body, sort_keys=True).encode("utf-8")).hexdigest()


def _write_json_atomic(path, payload: dict) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, indent=2)
            fh.write("\n")
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_trace(trace: GenerationTrace, dirpath) -> dict:
    """Write all tensors and the manifest; returns the manifest dict."""
    os.makedirs(dirpath, exist_ok=True)
    files = {}
    shas = {}

    def put(name, arr):
        path = os.path.join(dirpath, name)
        write_tensor(path, arr)
        files[name] = list(arr.shape)
        shas[name] = _file_sha256(path)

    for t, latent in sorted(trace.latents.items()):
        put(latent_filename(t), latent)
    for (t, block), (k, v) in sorted(trace.kv_caches.items()):
        put(kv_filename(t, block, "k"), k)
        put(kv_filename(t, block, "v"), v)

    manifest = {
        "format": FORMAT_TAG,
        "prompt": trace.prompt,
        "seed": trace.seed,
        "schedule_hash": trace.schedule_hash,
        "steps": trace.steps,
        "files": files,
        "content_sha256": shas,
    }
    manifest["manifest_sha256"] = manifest_digest(manifest)
    _write_json_atomic(os.path.join(dirpath, MANIFEST_NAME), manifest)
    return manifest


def load_manifest(dirpath) -> dict:
    path = os.path.join(dirpath, MANIFEST_NAME)
    with open(path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if manifest.get("format") != FORMAT_TAG:
        raise ManifestError(f"{path}: unknown format tag {manifest.get('format')!r}")
    for key in ("prompt", "seed", "schedule_hash", "steps", "files",
                "content_sha256", "manifest_sha256"):
        if key not in manifest:
            raise ManifestError(f"{path}: missing field {key!r}")
    if manifest["manifest_sha256"] != manifest_digest(manifest):
        raise ManifestError(f"{path}: manifest digest mismatch")
    return manifest


def load_trace(dirpath, verify: bool = True) -> GenerationTrace:
    """Rebuild a GenerationTrace from disk.

    With verify=True each file's sha256 is checked against the manifest
    before parsing, so silent corruption surfaces as ManifestError.
    """
    manifest = load_manifest(dirpath)
    latents = {}
    kv_parts = {}
    for name, dims in manifest["files"].items():
        path = os.path.join(dirpath, name)
        if verify and _file_sha256(path) != manifest["content_sha256"].get(name):
            raise ManifestError(f"{path}: content hash mismatch with manifest")
        arr = read_tensor(path)
        if list(arr.shape) != list(dims):
            raise ManifestError(f"{path}: dims {list(arr.shape)} != manifest {dims}")
        m = _LATENT_RE.match(name)
        if m:
            latents[int(m.group(1))] = arr
            continue
        m = _KV_RE.match(name)
        if m:
            t, block, which = int(m.group(1)), int(m.group(2)), m.group(3)
            kv_parts.setdefault((t, block), {})[which] = arr
            continue
        raise ManifestError(f"{dirpath}: unrecognized trace file name {name!r}")

    kv_caches = {}
    for key, parts in kv_parts.items():
        if set(parts) != {"k", "v"}:
            raise ManifestError(f"{dirpath}: incomplete K/V pair for {key}")
        kv_caches[key] = (parts["k"], parts["v"])
    return GenerationTrace(latents, kv_caches, manifest["prompt"],
                           manifest["seed"], manifest["schedule_hash"],
                           manifest["steps"])
