"""Agent checkpoints.

A checkpoint is a zip archive of ``.npy`` members (readable with ``np.load``):

* ``meta.json``-equivalent member ``meta`` holding a JSON string with
  ``format_version``, ``mode``, both network specs, the optimiser
  hyper-parameters and step counts, ``state_scale``, ``action_scale``, ``seed``
  and free-form ``extra`` metadata;
* ``actor/W{l}``, ``actor/b{l}`` and the same for ``critic``,
  ``actor_target`` and ``critic_target``;
* ``actor_opt/m{k}``, ``actor_opt/v{k}`` (and ``critic_opt``) Adam moments in
  ``NetworkParams.arrays()`` order.

Member timestamps are fixed so equal agents give byte-identical files, and
writes go through a temporary file plus ``os.replace``.
"""
from __future__ import annotations

import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np

from .ddpg import Agent
from .neural import NetworkParams, NetworkSpec, OptimizerState, check_params

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


def _spec_dict(spec: NetworkSpec) -> dict:
    return {
        "layer_widths": list(spec.layer_widths),
        "hidden_activation": spec.hidden_activation,
        "output_activation": spec.output_activation,
        "init_seed": spec.init_seed,
    }


def _opt_dict(opt: OptimizerState) -> dict:
    return {"learning_rate": opt.learning_rate, "kind": opt.kind, "beta1": opt.beta1,
            "beta2": opt.beta2, "eps": opt.eps, "step": opt.step}


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def save_checkpoint(agent: Agent, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "mode": agent.mode,
        "actor_spec": _spec_dict(agent.actor_spec),
        "critic_spec": _spec_dict(agent.critic_spec),
        "actor_opt": _opt_dict(agent.actor_opt),
        "critic_opt": _opt_dict(agent.critic_opt),
        "state_scale": [float(x) for x in agent.state_scale],
        "action_scale": agent.action_scale,
        "seed": agent.seed,
        "extra": agent.meta,
    }
    members = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for name in ("actor", "critic", "actor_target", "critic_target"):
        params: NetworkParams = getattr(agent, name)
        for l, (w, b) in enumerate(zip(params.weights, params.biases)):
            members[f"{name}/W{l}"] = w
            members[f"{name}/b{l}"] = b
    for name in ("actor_opt", "critic_opt"):
        opt: OptimizerState = getattr(agent, name)
        for k, (m, v) in enumerate(zip(opt.m, opt.v)):
            members[f"{name}/m{k}"] = m
            members[f"{name}/v{k}"] = v

    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for key, arr in members.items():
            info = zipfile.ZipInfo(key + ".npy", date_time=_EPOCH)
            zf.writestr(info, _npy_bytes(arr))
    os.replace(tmp, path)
    return path


def _params(data, name: str, spec: NetworkSpec) -> NetworkParams:
    n = len(spec.layer_widths) - 1
    params = NetworkParams([data[f"{name}/W{l}"] for l in range(n)], [data[f"{name}/b{l}"] for l in range(n)])
    check_params(params, spec)
    if not params.all_finite():
        raise CheckpointError(f"{name} contains non-finite values")
    return params


def _opt(data, name: str, d: dict, n_arrays: int) -> OptimizerState:
    return OptimizerState(
        learning_rate=d["learning_rate"], kind=d["kind"], beta1=d["beta1"], beta2=d["beta2"], eps=d["eps"],
        step=d["step"],
        m=[data[f"{name}/m{k}"] for k in range(n_arrays)],
        v=[data[f"{name}/v{k}"] for k in range(n_arrays)],
    )


def load_checkpoint(path, expected_mode: str | None = None) -> Agent:
    """Load an agent, rejecting wrong versions, shapes or (optionally) modes."""
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as npz:
            data = {k: npz[k] for k in npz.files}
        meta = json.loads(data["meta"].item())
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({type(exc).__name__}: {exc})") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {meta.get('format_version')} != {FORMAT_VERSION}")
    mode = meta["mode"]
    if expected_mode is not None and mode != expected_mode:
        raise CheckpointError(
            f"{path}: checkpoint was trained in {mode!r} mode "
            f"(state width {meta['actor_spec']['layer_widths'][0]}), cannot be used for {expected_mode!r}"
        )
    try:
        actor_spec = NetworkSpec(tuple(meta["actor_spec"]["layer_widths"]), meta["actor_spec"]["hidden_activation"],
                                 meta["actor_spec"]["output_activation"], meta["actor_spec"]["init_seed"])
        critic_spec = NetworkSpec(tuple(meta["critic_spec"]["layer_widths"]), meta["critic_spec"]["hidden_activation"],
                                  meta["critic_spec"]["output_activation"], meta["critic_spec"]["init_seed"])
        actor = _params(data, "actor", actor_spec)
        critic = _params(data, "critic", critic_spec)
        agent = Agent(
            mode=mode,
            actor_spec=actor_spec,
            critic_spec=critic_spec,
            actor=actor,
            critic=critic,
            actor_target=_params(data, "actor_target", actor_spec),
            critic_target=_params(data, "critic_target", critic_spec),
            actor_opt=_opt(data, "actor_opt", meta["actor_opt"], len(actor.arrays())),
            critic_opt=_opt(data, "critic_opt", meta["critic_opt"], len(critic.arrays())),
            state_scale=np.array(meta["state_scale"]),
            action_scale=meta["action_scale"],
            seed=meta["seed"],
            meta=meta.get("extra", {}),
        )
    except CheckpointError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"{path}: inconsistent checkpoint ({exc})") from None
    if agent.state_scale.shape != (actor_spec.n_in,):
        raise CheckpointError(f"{path}: normalisation width does not match the actor input")
    return agent
