from __future__ import annotations

from adir.testkit.fixtures import *  # noqa: F401,F403
