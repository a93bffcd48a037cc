"""Smoke test for the secite_py extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`,
then run `python crates/py/python/smoke_test.py`.
"""

import json
import math
import pathlib
import tempfile

import secite_py as s

ROOT = pathlib.Path(__file__).resolve().parents[2]
MANIFEST = ROOT / "core" / "tests" / "fixtures" / "corpus9" / "manifest.toml"


def main():
    sents = s.segment_sentences("We extend ReplayLog [3]. It is slow [4-6].\n")
    assert [x.text for x in sents] == ["We extend ReplayLog [3].", "It is slow [4-6]."], sents

    entries, warnings = s.parse_reference_list("Body.\n\nReferences\n[1] A. One.\n[2] B. Two.\n")
    assert [e.number for e in entries] == [1, 2] and not warnings

    assert s.expand_marker("49-51, 63") == [49, 50, 51, 63]
    try:
        s.expand_marker("5-3")
        raise AssertionError("reversed range accepted")
    except ValueError:
        pass

    assert s.clean_text("The Tool, v2, is GREAT!", ["the"]) == ["tool", "v", "is", "great"]

    a = s.hashed_fallback_embed("concurrency bug reproduction", 64)
    b = s.hashed_fallback_embed("concurrency bug reproduction", 64)
    assert len(a) == 64 and a == b
    assert math.isclose(s.cosine_similarity(a, b), 1.0)

    pts = [[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]]
    model = s.kmeans_fit(pts, 2)
    assert sorted(model.cluster_sizes()) == [3, 3]
    _, mean = s.silhouette(pts, model.assignments)
    assert mean > 0.9

    proj = s.tsne_project(pts, iterations=300)
    assert len(proj.points) == 6 and math.isfinite(proj.final_kl)

    assert s.render_prompt("Hi {name}", {"name": "x"}) == "Hi x"

    with tempfile.TemporaryDirectory() as out:
        report = s.run_pipeline(str(MANIFEST), out)
        assert report.exit_code() == 0
        assert report.selected_k in (2, 3)
        assert json.loads(report.to_json())["paper_id"] == "replaylog"
        assert (pathlib.Path(out) / "clusters.svg").is_file()
    print("smoke test ok")


if __name__ == "__main__":
    main()
