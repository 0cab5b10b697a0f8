from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

from ..config import RunConfig
from ..errors import ParameterError
from ..imageio import save_array_text, write_image
from ..oracle import random_world
from ..synthetic import TextureSpec, generate_gaussians, generate_textures
from ..use_case import UseCase
from .common import write_csv


@dataclass
class GenDataInput:
    config: RunConfig
    out_dir: Path
    kind: Optional[Literal["textures", "gaussians"]] = None
    count: Optional[int] = None
    seed: Optional[int] = None


@dataclass
class GenDataOutput:
    out_dir: Path
    files: list[Path] = field(default_factory=list)
    clusters: list[int] = field(default_factory=list)


class GenerateData(UseCase[GenDataInput, GenDataOutput]):
    """Write a deterministic synthetic corpus."""

    name = "gen_data"

    def validate(self, input: GenDataInput) -> None:
        if input.count is not None and input.count < 0:
            raise ParameterError("count must be non-negative", {"count": input.count})

    def perform(self, input: GenDataInput) -> GenDataOutput:
        cfg = input.config
        kind = input.kind or cfg.data.kind
        count = cfg.data.count if input.count is None else input.count
        seed = cfg.data.seed if input.seed is None else input.seed
        out = GenDataOutput(out_dir=input.out_dir)
        input.out_dir.mkdir(parents=True, exist_ok=True)
        if count == 0:
            self.logger.warning("count is 0; nothing generated", out_dir=str(input.out_dir))
            return out

        if kind == "textures":
            spec = TextureSpec(size=cfg.data.size, channels=cfg.model.channels, clusters=cfg.data.clusters)
            for i, (image, cid) in enumerate(generate_textures(count, spec, seed)):
                out.files.append(write_image(image, input.out_dir / f"tex_{i:05d}.png"))
                out.clusters.append(cid)
            write_csv(
                input.out_dir / "clusters.csv",
                ["file", "cluster"],
                ((p.name, c) for p, c in zip(out.files, out.clusters)),
            )
        else:
            sched = cfg.schedule.build()
            world = random_world(cfg.oracle.n, sched, seed=seed)
            samples = generate_gaussians(world, count, seed=seed + 1)
            out.files = [
                save_array_text(world.m0, input.out_dir / "m0.txt"),
                save_array_text(world.C0, input.out_dir / "C0.txt"),
                save_array_text(samples.reshape(count, -1), input.out_dir / "samples.txt"),
            ]
        self.logger.info("generated data", kind=kind, count=count, out_dir=str(input.out_dir))
        return out
