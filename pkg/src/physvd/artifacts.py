"""Section naming for models, datasets, statistics and plans inside an SFSV
container. Layer indices are zero-based and zero-padded to two digits.

model:    kind="model", layerNN/{weight | left,right}, layerNN/bias, layerNN/activation
dataset:  kind="dataset", data/inputs, data/targets (N,C,H,W), data/tag_index,
          data/tags (newline-separated), grid/spacing, meta/family
stats:    kind="stats", layerNN/{sigma_xx,fisher_z,n_samples}/<tag>, meta/tags,
          meta/sobolev_scale
plan:     kind="plan", plan/ranks, plan/ratio, plan/budget, plan/spent, plan/skipped
"""
from __future__ import annotations

import numpy as np

from .allocation import RankPlan
from .calibration import LayerStats
from .errors import FormatError
from .fields import Dataset
from .io import raw, read_container, text, write_container
from .netcore import FactoredLayer, LinearLayer, SequentialModel


def _kind(sections: dict, expected: str, path) -> None:
    if "kind" not in sections:
        raise FormatError(f"{path}: missing 'kind' section")
    got = text(sections["kind"])
    if got != expected:
        raise FormatError(f"{path}: expected a {expected} file, got {got}")


def _get(sections: dict, name: str, path):
    try:
        return sections[name]
    except KeyError:
        raise FormatError(f"{path}: missing section {name!r}") from None


def model_sections(model: SequentialModel, plan: RankPlan | None = None) -> dict:
    out: dict = {"kind": raw("model")}
    for i, layer in enumerate(model.layers):
        p = f"layer{i:02d}"
        if isinstance(layer, FactoredLayer):
            out[f"{p}/left"] = layer.left
            out[f"{p}/right"] = layer.right
        else:
            out[f"{p}/weight"] = layer.weight
        out[f"{p}/bias"] = layer.bias
        out[f"{p}/activation"] = raw(layer.activation)
    if plan is not None:
        out.update({k: v for k, v in plan_sections(plan).items() if k != "kind"})
    return out


def model_from_sections(sections: dict, path="<model>") -> SequentialModel:
    _kind(sections, "model", path)
    layers = []
    i = 0
    while f"layer{i:02d}/bias" in sections:
        p = f"layer{i:02d}"
        bias = sections[f"{p}/bias"]
        act = text(_get(sections, f"{p}/activation", path))
        try:
            if f"{p}/weight" in sections:
                layers.append(LinearLayer(sections[f"{p}/weight"], bias, act))
            else:
                layers.append(FactoredLayer(_get(sections, f"{p}/left", path), _get(sections, f"{p}/right", path), bias, act))
        except ValueError as exc:
            raise FormatError(f"{path}: layer {i}: {exc}") from exc
        i += 1
    if not layers:
        raise FormatError(f"{path}: model has no layers")
    try:
        return SequentialModel(tuple(layers))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def save_model(path, model: SequentialModel, plan: RankPlan | None = None) -> None:
    write_container(path, model_sections(model, plan))


def load_model(path) -> SequentialModel:
    return model_from_sections(read_container(path), path)


def dataset_sections(ds: Dataset) -> dict:
    return {
        "kind": raw("dataset"),
        "data/inputs": ds.inputs,
        "data/targets": ds.targets,
        "data/tag_index": ds.tag_index,
        "data/tags": raw("\n".join(ds.tag_names)),
        "grid/spacing": np.array([ds.spacing]),
        "meta/family": raw(ds.family),
    }


def save_dataset(path, ds: Dataset) -> None:
    write_container(path, dataset_sections(ds))


def load_dataset(path) -> Dataset:
    s = read_container(path)
    _kind(s, "dataset", path)
    tags = text(_get(s, "data/tags", path))
    try:
        return Dataset(
            _get(s, "data/inputs", path),
            _get(s, "data/targets", path),
            _get(s, "data/tag_index", path),
            tuple(tags.split("\n")) if tags else (),
            float(_get(s, "grid/spacing", path)[0]),
            text(s.get("meta/family", raw(""))),
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def stats_sections(groups: dict[str, list[LayerStats]], sobolev_scale: float = 0.0) -> dict:
    out: dict = {"kind": raw("stats"), "meta/tags": raw("\n".join(groups)), "meta/sobolev_scale": np.array([sobolev_scale])}
    for tag, layers in groups.items():
        for i, st in enumerate(layers):
            out[f"layer{i:02d}/sigma_xx/{tag}"] = st.sigma_xx
            out[f"layer{i:02d}/fisher_z/{tag}"] = st.fisher_z
            out[f"layer{i:02d}/n_samples/{tag}"] = np.array([st.n_samples], dtype=np.int64)
    return out


def save_stats(path, groups: dict[str, list[LayerStats]], sobolev_scale: float = 0.0) -> None:
    write_container(path, stats_sections(groups, sobolev_scale))


def load_stats(path) -> tuple[dict[str, list[LayerStats]], float]:
    s = read_container(path)
    _kind(s, "stats", path)
    tags = [t for t in text(_get(s, "meta/tags", path)).split("\n") if t]
    groups = {}
    for tag in tags:
        layers, i = [], 0
        while f"layer{i:02d}/sigma_xx/{tag}" in s:
            layers.append(
                LayerStats(
                    s[f"layer{i:02d}/sigma_xx/{tag}"],
                    _get(s, f"layer{i:02d}/fisher_z/{tag}", path),
                    int(_get(s, f"layer{i:02d}/n_samples/{tag}", path)[0]),
                    tag,
                )
            )
            i += 1
        if not layers:
            raise FormatError(f"{path}: no statistics for tag {tag!r}")
        groups[tag] = layers
    if not groups:
        raise FormatError(f"{path}: statistics file has no dataset groups")
    return groups, float(_get(s, "meta/sobolev_scale", path)[0])


def plan_sections(plan: RankPlan) -> dict:
    return {
        "kind": raw("plan"),
        "plan/ranks": np.array(plan.ranks, dtype=np.int64),
        "plan/ratio": np.array([plan.ratio]),
        "plan/budget": np.array([plan.budget], dtype=np.int64),
        "plan/spent": np.array([plan.spent], dtype=np.int64),
        "plan/skipped": np.array([plan.skipped_components], dtype=np.int64),
    }


def save_plan(path, plan: RankPlan) -> None:
    write_container(path, plan_sections(plan))


def load_plan(path) -> RankPlan:
    s = read_container(path)
    _kind(s, "plan", path)
    return RankPlan(
        tuple(int(k) for k in _get(s, "plan/ranks", path)),
        float(_get(s, "plan/ratio", path)[0]),
        int(_get(s, "plan/budget", path)[0]),
        int(_get(s, "plan/spent", path)[0]),
        int(_get(s, "plan/skipped", path)[0]),
    )
