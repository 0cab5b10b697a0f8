from __future__ import annotations

import pytest

from adir.errors import NotFound
from adir.result import Err, Ok, Result


def test_ok_basics():
    r: Result[int, NotFound] = Ok(10)
    assert r.err is None
    assert r.unwrap() == 10


def test_err_basics():
    err = NotFound("no index")
    r: Result[int, NotFound] = Err(err)
    assert r.err is err
    with pytest.raises(RuntimeError):
        r.unwrap()


def test_results_support_pattern_matching():
    def describe(r: Result[int, NotFound]) -> str:
        match r:
            case Ok(value):
                return f"ok {value}"
            case Err(error):
                return f"err {error.code}"
        return "unreachable"

    assert describe(Ok(3)) == "ok 3"
    assert describe(Err(NotFound("x"))) == "err not_found"
