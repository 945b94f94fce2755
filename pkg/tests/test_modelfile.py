import json

import numpy as np
import pytest

from cascade_mdp import zoo
from cascade_mdp.errors import ModelParseError, NonAdmissibleModel
from cascade_mdp.modelfile import export_model, parse_model

NAMES = sorted(zoo.ZOO) + ["binary-4"]


@pytest.mark.parametrize("name", NAMES)
def test_round_trip(name):
    entry = zoo.get(name)
    cost = zoo.default_cost(entry)
    parsed = parse_model(export_model(entry, cost))
    m, m2 = entry.model, parsed.model
    for attr in ("C", "A0", "A", "B", "bounds"):
        assert np.array_equal(getattr(m, attr), getattr(m2, attr)), attr
    assert parsed.entry.name == entry.name
    assert parsed.entry.self_financing == entry.self_financing
    assert (parsed.entry.V is None) == (entry.V is None)
    if entry.V is not None:
        assert np.array_equal(parsed.entry.V, entry.V)
    assert np.array_equal(parsed.cost.L, cost.L) and np.array_equal(parsed.cost.Phi, cost.Phi)
    # Exporting again is byte-identical.
    assert export_model(parsed.entry, parsed.cost) == export_model(entry, cost)


def _doc(name="cats-dilemma"):
    return json.loads(export_model(zoo.get(name)))


def test_syntax_error_location():
    text = export_model(zoo.get("cats-dilemma")).splitlines()
    text[5] = text[5].rstrip(",")  # drop a separator between two keys
    with pytest.raises(ModelParseError) as info:
        parse_model("\n".join(text))
    assert info.value.line == 7 and info.value.column is not None


def test_missing_section():
    doc = _doc()
    del doc["B"]
    with pytest.raises(ModelParseError, match="'B'"):
        parse_model(json.dumps(doc))


def test_wrong_shape_located():
    doc = _doc()
    doc["A0"] = [[0.0]]
    text = json.dumps(doc, indent=1)
    with pytest.raises(ModelParseError, match="shape") as info:
        parse_model(text)
    assert text.splitlines()[info.value.line - 1].lstrip().startswith('"A0"')


def test_bad_dims():
    doc = _doc()
    doc["dims"]["n"] = -1
    with pytest.raises(ModelParseError):
        parse_model(json.dumps(doc))


def test_column_sum_violation():
    doc = _doc()
    doc["C"][0][0] += 1.0
    with pytest.raises(NonAdmissibleModel, match="column"):
        parse_model(json.dumps(doc))


def test_negative_rate():
    doc = _doc()
    doc["A0"][1][0] = -1.0
    doc["A0"][0][0] = 1.0
    with pytest.raises(NonAdmissibleModel):
        parse_model(json.dumps(doc))


def test_unknown_psi():
    doc = json.loads(export_model(zoo.get("bond-stock"), zoo.default_cost(zoo.get("bond-stock"))))
    doc["cost"]["psi"] = "cubic"
    with pytest.raises(ModelParseError, match="psi"):
        parse_model(json.dumps(doc))


def test_uncontrolled_model_without_b():
    doc = _doc()
    doc["dims"]["p"] = 0
    del doc["B"], doc["bounds"]
    assert parse_model(json.dumps(doc)).model.p == 0
