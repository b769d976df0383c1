"""Pluggable reasoning provider emitting per-sample mechanistic judgments.

Two providers share one record schema: a deterministic mock (stable-hash
Bernoulli draws, bit-identical across platforms) used in tests and simulation,
and an HTTP client for a chat-style endpoint with bounded retries. Parse
failures are data, not errors: every requested sample yields a record and
``parse_ok`` says whether it produced usable scores.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional

import httpx

from .domain import SOFT_DIMENSIONS, MoleculeRecord, SoftSample
from .errors import TransportError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_RESPONSE_PATH = "choices.0.message.content"

#: Minimal template used when the caller does not supply one. Versioned
#: template text lives in campaign state; this is only a convenience default.
DEFAULT_TEMPLATE = (
    "Assess the additive molecule {name} with SMILES {smiles}. For each of the "
    "dimensions binding, interfacial_shielding, hydrophobic_protection, "
    "ion_interaction, electronic_modulation and predicted_effect, answer with a "
    "single JSON object of 0/1 judgments."
)


@dataclass(frozen=True)
class OracleConfig:
    provider: str = "mock"
    samples_per_molecule: int = 10
    temperature: float = 0.7
    endpoint_url: str = ""
    api_key_env_var: str = ""
    model_name: str = ""
    max_retries: int = 3
    timeout_s: float = 30.0
    seed: int = 0
    response_path: str = DEFAULT_RESPONSE_PATH
    backoff_base_s: float = 1.0
    backoff_cap_s: float = 30.0
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.provider not in ("mock", "http"):
            raise ValidationError(f"unknown oracle provider {self.provider!r}")
        if self.samples_per_molecule < 1:
            raise ValidationError("samples_per_molecule must be >= 1")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0")
        if self.provider == "http" and not self.endpoint_url:
            raise ValidationError("http provider requires endpoint_url")

    @classmethod
    def from_file(cls, path: str | Path) -> "OracleConfig":
        """Read a flat ``key = value`` document mirroring the config fields."""
        values: dict[str, object] = {}
        fields = {f: cls.__dataclass_fields__[f].type for f in cls.__dataclass_fields__}
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected key = value")
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in fields:
                raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce_config_value(raw)
        return cls(**values)  # type: ignore[arg-type]

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


def _coerce_config_value(raw: str) -> object:
    if raw.startswith(('"', "'")) and raw.endswith(raw[0]) and len(raw) >= 2:
        return raw[1:-1]
    low = raw.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


@dataclass(frozen=True)
class OracleResponseRecord:
    """Bookkeeping for one oracle call: raw text plus the parse outcome."""

    molecule_id: str
    sample_idx: int
    raw_text: str
    parsed: Optional[SoftSample]
    parse_ok: bool
    attempt_count: int = 1

    def __post_init__(self) -> None:
        if self.parse_ok != (self.parsed is not None):
            raise ValidationError("parse_ok must mirror presence of parsed scores")


def parse_response(raw: str) -> Optional[dict[str, float]]:
    """Extract the first JSON object carrying all six dimensions from free text.

    Surrounding prose is tolerated. Returns None when no object contains all
    six fields, or when the first such object has a value that cannot be
    coerced into [0, 1]. Never raises.
    """
    decoder = json.JSONDecoder()
    idx = raw.find("{")
    while idx != -1:
        try:
            obj, _ = decoder.raw_decode(raw, idx)
        except ValueError:
            idx = raw.find("{", idx + 1)
            continue
        if isinstance(obj, dict) and all(d in obj for d in SOFT_DIMENSIONS):
            scores: dict[str, float] = {}
            for dim in SOFT_DIMENSIONS:
                value = _coerce_score(obj[dim])
                if value is None:
                    return None
                scores[dim] = value
            return scores
        idx = raw.find("{", idx + 1)
    return None


def _coerce_score(value: object) -> Optional[float]:
    if isinstance(value, bool):
        value = int(value)
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            return None
    if isinstance(value, (int, float)) and 0.0 <= float(value) <= 1.0:
        return float(value)
    return None


def _hash_unit(*parts: object) -> float:
    """Stable uniform draw in [0, 1) from the sha256 of the joined parts."""
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def latent_probability(seed: int, molecule_id: str, dimension: str) -> float:
    """Molecule-and-dimension latent Bernoulli probability, in [0.05, 0.95]."""
    return 0.05 + 0.90 * _hash_unit(seed, molecule_id, dimension, "latent")


def mock_judgment(seed: int, molecule_id: str, dimension: str, sample_idx: int) -> int:
    """Deterministic Bernoulli draw for one (molecule, dimension, sample)."""
    u = _hash_unit(seed, molecule_id, dimension, sample_idx)
    return 1 if u < latent_probability(seed, molecule_id, dimension) else 0


def render_template(template: str, mol: MoleculeRecord) -> str:
    if "{smiles}" not in template or "{name}" not in template:
        raise ValidationError("prompt template must contain {smiles} and {name} placeholders")
    return template.replace("{smiles}", mol.smiles).replace("{name}", mol.name)


def _extract_path(payload: object, path: str) -> str:
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, Mapping):
            node = node[part]
        else:
            raise KeyError(part)
    if not isinstance(node, str):
        raise KeyError(path)
    return node


def _mock_sample(cfg: OracleConfig, mol: MoleculeRecord, prompt: str, sample_idx: int) -> OracleResponseRecord:
    scores = {dim: mock_judgment(cfg.seed, mol.id, dim, sample_idx) for dim in SOFT_DIMENSIONS}
    raw_text = f"Mechanistic judgment for {mol.name}: " + json.dumps(scores, sort_keys=True)
    parsed = parse_response(raw_text)
    assert parsed is not None  # the mock emits its own wire format
    sample = SoftSample(molecule_id=mol.id, sample_idx=sample_idx, scores=parsed)
    return OracleResponseRecord(
        molecule_id=mol.id, sample_idx=sample_idx, raw_text=raw_text, parsed=sample, parse_ok=True
    )


def _http_sample(
    cfg: OracleConfig,
    mol: MoleculeRecord,
    prompt: str,
    sample_idx: int,
    client: httpx.Client,
    sleep: Callable[[float], None],
) -> OracleResponseRecord:
    headers = {}
    if cfg.api_key_env_var:
        key = os.environ.get(cfg.api_key_env_var, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
    body = {
        "model": cfg.model_name,
        "temperature": cfg.temperature,
        "messages": [{"role": "user", "content": prompt}],
    }
    last_status: int | None = None
    last_error = "no attempt made"
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            sleep(min(cfg.backoff_cap_s, cfg.backoff_base_s * 2.0 ** (attempt - 1)))
        try:
            resp = client.post(cfg.endpoint_url, json=body, headers=headers, timeout=cfg.timeout_s)
        except httpx.HTTPError as exc:
            last_error = f"transport failure: {exc}"
            continue
        last_status = resp.status_code
        if resp.status_code >= 500 or resp.status_code == 429:
            last_error = f"transient status {resp.status_code}"
            continue
        if resp.status_code != 200:
            raise TransportError(
                f"oracle endpoint returned non-retryable status {resp.status_code}", last_status=resp.status_code
            )
        try:
            raw_text = _extract_path(resp.json(), cfg.response_path)
        except (ValueError, KeyError, IndexError):
            raw_text = resp.text
        scores = parse_response(raw_text)
        parsed = (
            SoftSample(molecule_id=mol.id, sample_idx=sample_idx, scores=scores) if scores is not None else None
        )
        return OracleResponseRecord(
            molecule_id=mol.id,
            sample_idx=sample_idx,
            raw_text=raw_text,
            parsed=parsed,
            parse_ok=parsed is not None,
            attempt_count=attempt + 1,
        )
    raise TransportError(
        f"oracle endpoint unreachable after {cfg.max_retries + 1} attempts ({last_error})", last_status=last_status
    )


def sample_molecule(
    cfg: OracleConfig,
    mol: MoleculeRecord,
    template: str = DEFAULT_TEMPLATE,
    sleep: Callable[[float], None] = time.sleep,
) -> list[OracleResponseRecord]:
    """Collect exactly ``samples_per_molecule`` judgment records for one molecule.

    Mock provider: pure function of (cfg.seed, molecule, template). HTTP
    provider: requests for distinct sample indices run concurrently up to
    ``max_in_flight``; each sample retries transient failures with exponential
    backoff, and a sample that stays unreachable raises TransportError.
    """
    prompt = render_template(template, mol)
    n = cfg.samples_per_molecule
    if cfg.provider == "mock":
        return [_mock_sample(cfg, mol, prompt, i) for i in range(n)]

    records: list[Optional[OracleResponseRecord]] = [None] * n
    workers = max(1, min(cfg.max_in_flight, n))
    with httpx.Client() as client:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_http_sample, cfg, mol, prompt, i, client, sleep): i for i in range(n)
            }
            for future in concurrent.futures.as_completed(futures):
                records[futures[future]] = future.result()
    return [r for r in records if r is not None]


def sample_library(
    cfg: OracleConfig,
    mols: list[MoleculeRecord],
    template: str = DEFAULT_TEMPLATE,
    sleep: Callable[[float], None] = time.sleep,
) -> dict[str, list[OracleResponseRecord]]:
    """sample_molecule over many molecules, keyed by molecule id."""
    return {mol.id: sample_molecule(cfg, mol, template, sleep) for mol in mols}
