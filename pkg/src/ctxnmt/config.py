"""Flat ``key = value`` run configuration shared by the CLI commands."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

from .context import ConfigurationError


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {'|'.join(options)}, got {text!r}")
        return text

    return parse


def _opt_int(text: str) -> int | None:
    return None if text.lower() in ("", "auto", "none") else int(text)


def _path(text: str) -> str:
    return text


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str


KEYS: dict[str, Key] = {
    # model
    "d": Key(int, 500, "word embedding width"),
    "hidden": Key(int, 500, "decoder width (bi encoder: hidden/2 per direction)"),
    "enc_layers": Key(int, 2, "stacked encoder layers"),
    "dec_layers": Key(int, 2, "stacked decoder layers"),
    "encoder": Key(_choice("uni", "bi"), "bi", "encoder direction"),
    "context": Key(_choice("none", "nbow", "bilstm", "holstm"), "none", "context network"),
    "integration": Key(_choice("gate", "concat"), "concat", "how the context joins the embedding"),
    "context_hidden": Key(_opt_int, None, "BiLSTM context units per direction (auto = d/2)"),
    "dtype": Key(_choice("float32", "float64"), "float32", "training precision"),
    "init_scale": Key(float, 0.1, "uniform initialization range"),
    # training
    "lr": Key(float, 1.0, "initial SGD learning rate"),
    "clip_norm": Key(float, 5.0, "gradient norm rescaling threshold"),
    "batch_size": Key(int, 256, "maximum mini-batch size"),
    "max_len": Key(int, 50, "drop training pairs longer than this"),
    "dropout": Key(float, 0.3, "dropout between stacked recurrent layers"),
    "schedule": Key(_choice("halve", "constant"), "halve", "halve lr every epoch once dev ppl worsens, or keep it"),
    "min_delta": Key(float, 0.01, "stop when dev perplexity changes less than this"),
    "max_epochs": Key(int, 20, "epoch limit"),
    "log_timing": Key(_bool, False, "write wall-clock seconds into the training log"),
    # data
    "src_vocab_size": Key(int, 50000, "source vocabulary size (excluding specials)"),
    "tgt_vocab_size": Key(int, 50000, "target vocabulary size (excluding specials)"),
    "train_src": Key(_path, "", "training source file"),
    "train_tgt": Key(_path, "", "training target file"),
    "dev_src": Key(_path, "", "development source file"),
    "dev_tgt": Key(_path, "", "development target file"),
    # inference
    "beam": Key(int, 5, "beam width"),
    "max_len_factor": Key(float, 2.0, "decode at most factor * source length + 5 tokens"),
}


def defaults() -> dict[str, Any]:
    return {k: v.default for k, v in KEYS.items()}


def _set(cfg: dict, key: str, raw: str, where: str) -> None:
    if key not in KEYS:
        raise ConfigurationError(f"{where}: unknown config key {key!r}")
    try:
        cfg[key] = KEYS[key].parse(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{where}: bad value for {key!r}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key = value`` lines over the defaults; ``#`` starts a comment."""
    cfg = defaults()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        _set(cfg, key, raw, f"{source}:{lineno}")
    return cfg


def load_config(path=None, overrides: list[str] = ()) -> dict[str, Any]:
    if path is None:
        cfg = defaults()
    else:
        with open(path, encoding="utf-8") as fh:
            cfg = parse_config(fh.read(), str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"--set {item!r}: expected key=value")
        key, raw = (s.strip() for s in item.split("=", 1))
        _set(cfg, key, raw, "--set")
    return cfg


def format_config(cfg: dict[str, Any]) -> str:
    def show(v):
        if v is None:
            return "auto"
        if isinstance(v, bool):
            return "true" if v else "false"
        return str(v)

    return "".join(f"{k} = {show(cfg[k])}\n" for k in KEYS)


def describe_keys() -> str:
    width = max(map(len, KEYS))
    lines = ["config keys (default):"]
    for k, v in KEYS.items():
        default = "auto" if v.default is None else ("''" if v.default == "" else v.default)
        lines.append(f"  {k:<{width}}  {v.help} ({default})")
    return "\n".join(lines)
