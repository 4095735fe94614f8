"""Watermarking reverse proxy for a prediction endpoint.

Wraps an upstream model API: every answer is watermarked with the
calling API token's key before it leaves the gateway, and every served
query is appended to a log that later doubles as a probe set.  Run with
``python3 -m sinemark.gateway config.json``.

Config document fields: upstream_url, listen_address ("host:port"),
log_path, serving_seed, upstream_timeout (seconds), and keys, a map
from API token to {"key_path": ..., "epsilon": ..., "tau": ...,
"mode": "soft"|"hard"} where the three settings fall back to whatever
the key file carries.
"""

from __future__ import annotations

import hashlib
import json
import sys
import threading
import time
from contextlib import asynccontextmanager
from dataclasses import dataclass

import httpx
import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ._jsonio import dumps_record
from .errors import WatermarkError
from .keys import WatermarkConfig, WatermarkKey, load_key_with_config
from .watermark import sample_hard, serve

DEFAULT_UPSTREAM_TIMEOUT = 2.0
HEALTH_TIMEOUT = 1.0


@dataclass(frozen=True)
class TokenEntry:
    """Resolved per-token serving material."""

    key: WatermarkKey
    config: WatermarkConfig
    digest: int  # stable token fingerprint, part of the sampling stream seed


@dataclass(frozen=True)
class GatewayConfig:
    upstream_url: str
    listen_address: str
    log_path: str
    keys: dict  # token -> TokenEntry
    serving_seed: int = 0
    upstream_timeout: float = DEFAULT_UPSTREAM_TIMEOUT


def _token_digest(token: str) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big")


def load_gateway_config(path) -> GatewayConfig:
    """Parse and validate a gateway config document.

    Fails fast: every referenced key file must load now, not at first
    request, and the error names the offending path.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read gateway config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ValueError(f"gateway config {path} must be a JSON object")
    for field in ("upstream_url", "listen_address", "log_path", "keys"):
        if field not in doc:
            raise ValueError(f"gateway config {path} is missing {field!r}")
    if not isinstance(doc["keys"], dict) or not doc["keys"]:
        raise ValueError(f"gateway config {path}: 'keys' must be a nonempty object")

    entries = {}
    for token, spec in doc["keys"].items():
        if not isinstance(spec, dict) or "key_path" not in spec:
            raise ValueError(
                f"gateway config {path}: key entry {token!r} needs a 'key_path'")
        key_path = spec["key_path"]
        try:
            key, file_config = load_key_with_config(key_path)
        except (OSError, WatermarkError, ValueError) as exc:
            raise ValueError(
                f"gateway config {path}: cannot load key file {key_path} "
                f"for token {token!r}: {exc}") from exc
        epsilon = spec.get("epsilon", file_config.epsilon if file_config else None)
        tau = spec.get("tau", file_config.tau if file_config else None)
        mode = spec.get("mode", file_config.mode if file_config else "soft")
        if epsilon is None or tau is None:
            raise ValueError(
                f"gateway config {path}: token {token!r} has no epsilon/tau, "
                f"and key file {key_path} carries none")
        entries[token] = TokenEntry(
            key=key,
            config=WatermarkConfig(epsilon=float(epsilon), tau=float(tau), mode=mode),
            digest=_token_digest(token),
        )

    return GatewayConfig(
        upstream_url=doc["upstream_url"],
        listen_address=doc["listen_address"],
        log_path=doc["log_path"],
        keys=entries,
        serving_seed=int(doc.get("serving_seed", 0)),
        upstream_timeout=float(doc.get("upstream_timeout", DEFAULT_UPSTREAM_TIMEOUT)),
    )


def _replay_counters(log_path, tokens) -> dict:
    """Rebuild per-token item counters from an existing query log.

    The hard-mode sampling stream is keyed by (serving seed, token,
    counter); replaying the log keeps streams unique across restarts.
    """
    counters = {token: 0 for token in tokens}
    try:
        fh = open(log_path, "r", encoding="utf-8")
    except FileNotFoundError:
        return counters
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
                token = entry["token"]
                x = entry["x"]
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                raise ValueError(
                    f"query log {log_path} line {lineno} is corrupt: {exc}") from exc
            n_items = len(x) if isinstance(x, list) else 1
            if token in counters:
                counters[token] += n_items
    return counters


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse({"detail": message}, status_code=status)


def _parse_body(doc):
    """Validate {"x": int | [ints]}; returns (list of ids, was_batch)."""
    if not isinstance(doc, dict) or "x" not in doc:
        raise ValueError("body must be an object with an 'x' field")
    x = doc["x"]
    if isinstance(x, bool):
        raise ValueError("'x' must be an integer or an array of integers")
    if isinstance(x, int):
        return [x], False
    if isinstance(x, list):
        if not x:
            raise ValueError("'x' must not be an empty array")
        for item in x:
            if isinstance(item, bool) or not isinstance(item, int):
                raise ValueError("'x' array entries must be integers")
        return list(x), True
    raise ValueError("'x' must be an integer or an array of integers")


def create_app(config: GatewayConfig) -> FastAPI:
    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        app.state.client.close()
        app.state.log_file.close()

    app = FastAPI(title="watermark gateway", lifespan=lifespan)
    app.state.config = config
    app.state.client = httpx.Client(timeout=config.upstream_timeout)
    app.state.log_lock = threading.Lock()
    app.state.counters = _replay_counters(config.log_path, config.keys)
    app.state.log_file = open(config.log_path, "a", encoding="utf-8")

    @app.post("/v1/predict")
    async def predict(request: Request):
        token = request.headers.get("X-Api-Token")
        entry = config.keys.get(token) if token else None
        if entry is None:
            return _error(401, "unknown API token")
        try:
            body = await request.json()
        except (json.JSONDecodeError, UnicodeDecodeError):
            return _error(400, "body is not valid JSON")
        try:
            xs, was_batch = _parse_body(body)
        except ValueError as exc:
            return _error(400, str(exc))
        vocab = entry.key.vocab_size
        bad = next((x for x in xs if x < 0 or x >= vocab), None)
        if bad is not None:
            return _error(400, f"token id {bad} out of range for this key (vocab size {vocab})")

        try:
            upstream = app.state.client.post(config.upstream_url, json={"x": xs})
            upstream.raise_for_status()
            probs = upstream.json()["probs"]
        except (httpx.HTTPError, json.JSONDecodeError, KeyError, TypeError) as exc:
            return _error(502, f"upstream failure: {exc}")
        if not isinstance(probs, list) or len(probs) != len(xs):
            return _error(502, "upstream returned a malformed probability batch")

        # Counter values are reserved under the lock, then watermarking
        # runs outside it so a slow batch cannot stall other callers.
        with app.state.log_lock:
            base = app.state.counters[token]
            app.state.counters[token] = base + len(xs)

        outputs = []
        selected_flags = []
        try:
            for offset, (x, p_hat) in enumerate(zip(xs, probs)):
                rng = None
                if entry.config.mode == "hard":
                    rng = np.random.default_rng(
                        (config.serving_seed, entry.digest, base + offset))
                out = serve(entry.key, entry.config, x, np.asarray(p_hat, dtype=np.float64), rng=rng)
                outputs.append(out)
                selected_flags.append(out.selected)
        except (WatermarkError, ValueError, TypeError) as exc:
            # fail closed: never answer with clean upstream probabilities
            return _error(500, f"watermarking failed: {exc}")

        if entry.config.mode == "soft":
            values = [[float(v) for v in out.soft] for out in outputs]
            payload = {"probs": values if was_batch else values[0]}
        else:
            labels = [out.hard for out in outputs]
            payload = {"label": labels if was_batch else labels[0]}

        line = dumps_record({
            "ts": time.time(),
            "token": token,
            "x": xs if was_batch else xs[0],
            "selected": selected_flags if was_batch else selected_flags[0],
        })
        with app.state.log_lock:
            app.state.log_file.write(line + "\n")
            app.state.log_file.flush()
        return JSONResponse(payload)

    @app.get("/v1/health")
    async def health():
        reachable = True
        reason = None
        try:
            # any response, even an error status, proves the host is up
            app.state.client.get(
                config.upstream_url,
                timeout=min(HEALTH_TIMEOUT, config.upstream_timeout))
        except httpx.HTTPError as exc:
            reachable = False
            reason = f"upstream unreachable: {exc}"
        body = {
            "status": "ok" if reachable else "degraded",
            "upstream_reachable": reachable,
            "keys_loaded": len(config.keys),
        }
        if reason:
            body["reason"] = reason
        return JSONResponse(body)

    return app


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python3 -m sinemark.gateway CONFIG_JSON", file=sys.stderr)
        return 1
    try:
        config = load_gateway_config(argv[0])
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    import uvicorn

    host, _, port = config.listen_address.rpartition(":")
    uvicorn.run(create_app(config), host=host or "127.0.0.1", port=int(port))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
