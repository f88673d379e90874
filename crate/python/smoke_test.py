"""Smoke test for the inforewrite_py extension module.

Build and run:
    cargo build --release -p inforewrite-py --features extension-module
    cp target/release/libinforewrite_py.so python/inforewrite_py.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import inforewrite_py as ir


def check(name, cond):
    print(("PASS " if cond else "FAIL ") + name)
    return cond


def main():
    ok = True

    ok &= check("analyze stems", ir.analyze("Running lighthouses") == ["run", "lighthous"])
    ok &= check("analyze without stemming", ir.analyze("Running", stem=False) == ["running"])
    ok &= check("porter", ir.porter_stem("relational") == "relat")
    ok &= check("tokens", ir.tokens("Who built it?") == ["who", "built", "it"])
    ok &= check("overlap", ir.overlap_pct("who built the tower", "who built it") == 200.0 / 3)
    ok &= check("overlap without human tokens", ir.overlap_pct("a", "?") is None)
    ok &= check("rouge1 identical", ir.rouge1("a b c", "a b c") == 1.0)
    ok &= check("sanitize", ir.sanitize_output("  Who built it?\nextra") == "Who built it?")

    context = [("What is the Karvonen Lighthouse?", "A lighthouse in Finland.")]
    encoded = ir.encode_input(context, "When was it built?")
    ok &= check("encode", encoded == "<Que> What is the Karvonen Lighthouse? <Ans> A lighthouse in Finland. <Que> When was it built?")
    ok &= check("parse roundtrip", ir.parse_input(encoded) == (context, "When was it built?"))

    zsl = ir.render_rewriter_prompt(context, "When was it built?", few_shot=False)
    fsl = ir.render_rewriter_prompt(context, "When was it built?")
    ok &= check("rewriter prompt", zsl.endswith("\nRewrite:") and len(fsl) > len(zsl))
    ablated = ir.render_rewriter_prompt(context, "When was it built?", drop="informativeness")
    ok &= check("ablated prompt", "informative" not in ablated.split("\n")[0])
    editor = ir.render_editor_prompt(context, "When was it built?", "When was the Karvonen Lighthouse built?")
    ok &= check("editor prompt", editor.endswith("\nRewrite: When was the Karvonen Lighthouse built?\nEdit:"))
    try:
        ir.render_editor_prompt(context, "When was it built?", " ")
        ok &= check("editor rejects empty initial", False)
    except ValueError:
        ok &= check("editor rejects empty initial", True)

    passages = [
        ("d1", "The Karvonen Lighthouse was built in 1871."),
        ("d2", "A lighthouse keeper lived on the island."),
        ("d3", "Granite quarries supplied the stone."),
    ]
    index = ir.Bm25Index(passages)
    hits = index.search("when was lighthouse built", k=10)
    ok &= check("bm25 top hit", hits[0][0] == "d1" and hits[0][2] == 1)
    ok &= check("bm25 excludes zero scores", all(h[0] != "d3" for h in hits))
    ok &= check("bm25 score agrees", math.isclose(index.score("d1", "when was lighthouse built"), hits[0][1]))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "index.bin")
        index.save(path)
        loaded = ir.Bm25Index.load(path)
        ok &= check("bm25 save/load", loaded.search("lighthouse", k=10) == index.search("lighthouse", k=10))
    ok &= check("bm25 len", len(index) == 3 and index.doc_count == 3)

    run = {"1_1": [("d2", 2.0), ("d1", 1.0)], "2_1": [("d3", 1.0)]}
    qrels = {"1_1": {"d1": 1}, "2_1": {"d3": 1}}
    report = ir.evaluate(run, qrels, subsets={"1_1": "QuAC", "2_1": "NQ"})
    ok &= check("evaluate MRR", math.isclose(report["ALL"]["MRR"], 0.75))
    ok &= check("evaluate subsets", report["QuAC"]["MRR"] == 0.5 and report["NQ"]["MRR"] == 1.0)

    other = {"1_1": [("d1", 1.0)], "2_1": [("d3", 1.0)]}
    wt = ir.pairwise_win_tie(other, run, qrels)
    ok &= check("pairwise", wt["wins"] == 1 and wt["ties"] == 1 and wt["losses"] == 0)

    print("inforewrite_py", ir.__version__, "ok" if ok else "FAILED")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
