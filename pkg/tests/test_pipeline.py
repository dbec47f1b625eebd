import json

import numpy as np
import pytest

from surfplace.client import CachedClient, ModelClient, ReplayMiss, ScriptedClient, fenced, request_key
from surfplace.constraints import ConstraintKind, EnergyModel
from surfplace.fixtures import bookcase_mesh, build_fixture
from surfplace.pipeline import (
    ConstraintOutline,
    OutlineTriplet,
    ParseError,
    PipelineConfig,
    PipelineError,
    choose_surface,
    estimate_params,
    extract_direction,
    extract_json,
    generate_outline,
    parse_color,
    parse_direction,
    parse_grade,
    parse_number,
    parse_outline,
    place,
    plausibility_prune,
    plausibility_score,
    select_anchor,
)
from surfplace.raster import render, visible_fraction
from surfplace.scene import Camera, PlacementTransform, Scene, box_mesh, placed_object
from surfplace.selection import JudgeTranscript
from surfplace.solver import CandidateSet, SolverConfig
from surfplace.surfaces import Direction, extract_surfaces


class Canned(ModelClient):
    """Replies from a fixed queue and remembers every request."""

    def __init__(self, *replies):
        self.replies = list(replies)
        self.sent = []

    def send(self, prompt, images=(), tag=None):
        self.sent.append((prompt, list(images), tag))
        r = self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]
        return r(tag) if callable(r) else r


def answer(value):
    return "Thinking it over.\n" + fenced({"final_answer": value})


# ---------------------------------------------------------------------------
# reply parsing
# ---------------------------------------------------------------------------

def test_extract_json_takes_last_fence():
    reply = "first\n```json\n{\"a\": 1}\n```\nthen\n```json\n{\"a\": 2}\n```"
    assert extract_json(reply) == {"a": 2}
    assert extract_json("```\n{'final_answer': 'red'}\n```") == {"final_answer": "red"}
    with pytest.raises(ParseError):
        extract_json("no fence here")
    with pytest.raises(ParseError):
        extract_json("```json\nnot json at all\n```")


def test_parse_answers():
    assert parse_color(answer("Red"), ["red", "green"]) == "red"
    assert parse_color(answer("none"), ["red", "green"]) is None
    with pytest.raises(ParseError):
        parse_color(answer("blue"), ["red", "green"])
    assert parse_direction(answer("UP")) is Direction.UP
    with pytest.raises(ParseError):
        parse_direction(answer("none"))
    assert parse_grade(answer(4)) == 4
    assert parse_grade(answer("3")) == 3
    for bad in (5, 0, 2.5, "x"):
        with pytest.raises(ParseError):
            parse_grade(answer(bad))
    assert parse_number(fenced({"const": 50})) == 50.0
    assert parse_number(fenced({"const": "12.5"})) == 12.5
    with pytest.raises(ParseError):
        parse_number(fenced({"const": "far"}))


def test_parse_outline_orientation_and_above():
    out = parse_outline([
        {"constraint": "Contact", "surface1": "middle shelf of the bookcase", "surface2": "bottom of the target object"},
        {"constraint": "NoOverhang", "surface1": "bottom of the target object", "surface2": "middle shelf of the bookcase"},
        {"constraint": "Above", "surface1": "bottom of the target object", "surface2": "top of the desk"},
    ])
    c, n, a = out.triplets
    assert (c.kind, c.anchor_desc, c.target_desc, c.target_first) == (
        ConstraintKind.CONTACT, "middle shelf of the bookcase", "bottom of the target object", False)
    assert n.target_first
    assert a.kind is ConstraintKind.IN_FRONT_PLANE and a.above and not a.target_first
    assert a.anchor_desc == "top of the desk"
    assert a.relation == "Above(top of the desk, bottom of the target object)"


@pytest.mark.parametrize("bad", [
    [],
    [{"constraint": "NoOverhang", "surface1": "bottom of the target object", "surface2": "top of the table"}],
    [{"constraint": "Contact", "surface1": "top of the table", "surface2": "top of the chair"}],
    [{"constraint": "Hover", "surface1": "top of the table", "surface2": "bottom of the target object"}],
    "Contact please",
])
def test_parse_outline_rejects(bad):
    with pytest.raises(ParseError):
        parse_outline(bad)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def shelf():
    return build_fixture("book-on-middle-shelf")


def test_outline_retry_then_success(shelf):
    good = fenced(shelf.outline)
    client = Canned("I would put it on the shelf.", good)
    t = JudgeTranscript()
    out = generate_outline(shelf.scene(), shelf.instruction, client, t)
    assert isinstance(out, ConstraintOutline) and out.triplets[0].kind is ConstraintKind.CONTACT
    assert out.triplets[0].anchor_desc == "middle shelf of the bookcase"
    assert len(client.sent) == 2 and client.sent[1][0].startswith(client.sent[0][0])
    assert client.sent[0][1] == client.sent[1][1]
    assert [e.answer is None for e in t.entries] == [True, False]


def test_outline_missing_contact_fails_after_retry(shelf):
    bad = fenced([{"constraint": "NoOverhang", "surface1": "bottom of the target object", "surface2": "x"}])
    with pytest.raises(PipelineError, match=r"\[outline\]"):
        generate_outline(shelf.scene(), shelf.instruction, Canned(bad))
    with pytest.raises(ValueError):
        generate_outline(shelf.scene(), "  ", Canned(bad))


def test_direction_stage():
    assert extract_direction([], "seat of the chair", Canned(answer("up"))) is Direction.UP
    client = Canned(answer("none"))
    with pytest.raises(PipelineError):
        extract_direction([], "seat of the chair", client)
    assert len(client.sent) == 2


def test_select_anchor_nine_objects_four_queries():
    objs = [placed_object(f"box{i}", box_mesh((0.3, 0.3, 0.3)), PlacementTransform(((i % 3) - 1, 0, (i // 3) - 1)))
            for i in range(9)]
    scene = Scene(tuple(objs), Camera((0, -5, 0), (0, 0, 0)))
    client = ScriptedClient({"anchors": {"the box in the middle": "box4"}})
    t = JudgeTranscript()
    won = select_anchor(scene, "the box in the middle", client, transcript=t)
    assert won.id == "box4"
    assert t.stages() == ["anchor"] * 4


def test_select_anchor_skips_invisible_objects():
    front = placed_object("front", box_mesh((2, 0.2, 2)), PlacementTransform((0, -1, 0)))
    hidden = placed_object("hidden", box_mesh((0.3, 0.3, 0.3)), PlacementTransform((0, 1, 0)))
    side = placed_object("side", box_mesh((0.3, 0.3, 0.3)), PlacementTransform((2, 0, 0)))
    scene = Scene((front, hidden, side), Camera((0, -5, 0), (0, 0, 0)))
    client = Canned(lambda tag: answer(next(c for c, i in tag["options"].items() if i == "side")))
    assert select_anchor(scene, "the small hidden box", client).id == "side"
    offered = set(client.sent[0][2]["options"].values())
    assert "hidden" not in offered


def test_choose_surface_middle_shelf():
    mesh = bookcase_mesh()
    surfaces = extract_surfaces(mesh, Direction.UP)
    client = ScriptedClient({"surfaces": {"middle shelf": [0, 0, 0.56]}})
    t = JudgeTranscript()
    s = choose_surface(mesh, surfaces, "middle shelf", client, transcript=t)
    assert s.level == pytest.approx(0.56)
    assert len(t.entries) == -(-(len(surfaces) - 1) // 2)


def test_choose_surface_single_and_abstaining():
    mesh = box_mesh((1, 1, 1))
    one = extract_surfaces(mesh, Direction.UP)[:1]
    client = Canned(answer("none"))
    assert choose_surface(mesh, one, "top", client) is one[0]
    assert client.sent == []
    with pytest.raises(PipelineError, match="abstained"):
        choose_surface(mesh, extract_surfaces(mesh, Direction.UP), "top", Canned(answer("none")))


def test_estimate_params():
    t = OutlineTriplet(ConstraintKind.CLOSE_TO, "top of the table", "bottom of the target object")
    assert estimate_params(t, Canned(fenced({"const": 50}))) == 0.5
    assert estimate_params(t, Canned(fenced({"const": -5}))) == 0.01
    assert estimate_params(t, Canned(fenced({"const": 5000}))) == 10.0
    with pytest.raises(PipelineError):
        estimate_params(t, Canned(fenced({"const": "near"})))
    with pytest.raises(ValueError):
        estimate_params(OutlineTriplet(ConstraintKind.CONTACT, "a", "b"), Canned(fenced({"const": 1})))


def test_plausibility_score():
    assert plausibility_score(b"png", "x", Canned(answer(4))) == 4
    assert plausibility_score(b"png", "x", Canned("Looks fine.\n```json\n{\"final_answer\": 2}\n```")) == 2
    client = Canned(answer(5))
    with pytest.raises(PipelineError):
        plausibility_score(b"png", "x", client)
    assert len(client.sent) == 2


def test_prune_cases():
    fx = build_fixture("cup-on-table")
    scene, obj = fx.scene(), fx.target
    gt = fx.groundtruth
    far = [PlacementTransform((gt.translation[0] + dx, gt.translation[1], 0.75)) for dx in (0.3, -0.2, 0.45)]
    one = CandidateSet([(gt, 0.0)])
    silent = Canned(answer("none"))
    assert plausibility_prune(one, scene, obj, fx.instruction, silent) == gt
    assert silent.sent == []
    four = CandidateSet([(far[0], 0.0), (far[1], 0.001), (gt, 0.002), (far[2], 0.003)])
    script = ScriptedClient(fx.script())
    assert plausibility_prune(four, scene, obj, fx.instruction, script) == gt
    assert plausibility_prune(four, scene, obj, fx.instruction, Canned(answer("none"))) == far[0]


# ---------------------------------------------------------------------------
# clients
# ---------------------------------------------------------------------------

def test_cached_client_record_and_replay(tmp_path):
    inner = Canned("reply one")
    rec = CachedClient(tmp_path, "record", inner)
    assert rec.send("hello", [b"img"], {"stage": "x"}) == "reply one"
    assert rec.send("hello", [b"img"], {"stage": "other"}) == "reply one"
    assert len(inner.sent) == 1
    rep = CachedClient(tmp_path, "replay")
    assert rep.inner is None
    assert rep.send("hello", [b"img"]) == "reply one"
    with pytest.raises(ReplayMiss):
        rep.send("hello", [b"other image"])
    assert (tmp_path / f"{request_key('hello', [b'img'])}.json").exists()
    with pytest.raises(ValueError):
        CachedClient(tmp_path, "record")
    with pytest.raises(ValueError):
        CachedClient(tmp_path, "live")


def test_http_client_posts_json(monkeypatch):
    import threading
    from http.server import BaseHTTPRequestHandler, HTTPServer

    from surfplace.client import HttpClient

    seen = {}

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            seen["body"], seen["auth"] = body, self.headers.get("Authorization")
            data = json.dumps({"choices": [{"message": {"content": "ok"}}]}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        monkeypatch.setenv("SURFPLACE_API_URL", f"http://127.0.0.1:{server.server_port}/chat")
        monkeypatch.setenv("SURFPLACE_API_KEY", "k123")
        client = HttpClient(model="m", requests_per_minute=0)
        assert client.send("hi", [b"\x89PNG"]) == "ok"
    finally:
        server.shutdown()
    msg = seen["body"]["messages"][0]
    assert seen["body"]["model"] == "m" and msg["text"] == "hi" and msg["images"] == ["iVBORw=="]
    assert seen["auth"] == "Bearer k123"


def test_http_client_needs_endpoint(monkeypatch):
    from surfplace.client import HttpClient

    monkeypatch.delenv("SURFPLACE_API_URL", raising=False)
    with pytest.raises(RuntimeError):
        HttpClient()


# ---------------------------------------------------------------------------
# end to end
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cup_run():
    fx = build_fixture("cup-on-table")
    cfg = PipelineConfig(solver=SolverConfig(restarts=8))
    return fx, place(fx.scene(), fx.target, fx.instruction, cfg, ScriptedClient(fx.script()))


def test_place_cup_on_table(cup_run):
    fx, result = cup_run
    assert result.feasible and result.energy < 0.01
    assert result.chosen in result.all_feasible.transforms()
    scene = fx.scene().with_object(placed_object("placed", fx.target, result.chosen))
    assert visible_fraction(scene, "placed") >= 0.05
    assert result.chosen.translation[2] == pytest.approx(0.75, abs=1e-3)


def test_transcript_stage_order(cup_run):
    _, result = cup_run
    order = {"outline": 0, "anchor": 1, "direction": 2, "surface": 3, "params": 4, "prune": 5}
    ranks = [order[s] for s in result.transcript.stages()]
    assert ranks == sorted(ranks)
    assert {"outline", "direction", "params"} <= set(result.transcript.stages())


def test_grounded_normals_follow_directions(cup_run):
    fx, result = cup_run
    for trip, c in zip(result.outline.triplets, result.grounded):
        want = Direction.parse(fx.directions[trip.anchor_desc]).vector
        assert np.allclose(c.anchor.normal, want)
        assert np.allclose(c.target.normal, Direction.parse(fx.directions[trip.target_desc]).vector)


def test_place_rejects_bad_inputs():
    fx = build_fixture("cup-on-table")
    with pytest.raises(ValueError):
        place(fx.scene(), fx.target, "", PipelineConfig(), ScriptedClient(fx.script()))
    with pytest.raises(ValueError):
        place(fx.scene(), fx.target, "put it", PipelineConfig(), None)


def test_place_infeasible_outline_falls_back():
    fx = build_fixture("cup-on-table")
    script = fx.script()
    script["outline"] = [
        {"constraint": "Contact", "surface1": "top of the table", "surface2": "bottom of the target object"},
        {"constraint": "FarFrom", "surface1": "bottom of the target object", "surface2": "top of the table",
         "const": 500},
    ]
    script["params"] = {"FarFrom(bottom of the target object, top of the table)": 500}
    cfg = PipelineConfig(solver=SolverConfig(restarts=3, iters_per_restart=500))
    result = place(fx.scene(), fx.target, fx.instruction, cfg, ScriptedClient(script))
    assert not result.feasible and result.infeasible_fallback
    assert result.chosen == result.all_feasible.fallback[0]
    assert "prune" not in result.transcript.stages()


def test_stage_errors_are_tagged():
    fx = build_fixture("cup-on-table")
    script = fx.script()
    del script["directions"][fx.outline[0]["surface1"]]
    with pytest.raises(PipelineError, match=r"^\[direction\]"):
        place(fx.scene(), fx.target, fx.instruction, PipelineConfig(), ScriptedClient(script))


def test_write_result_files(tmp_path, cup_run):
    from surfplace.pipeline import write_result
    from surfplace.scene import load_scene

    fx, result = cup_run
    write_result(result, fx.scene(), fx.target, "placed", tmp_path)
    for name in ("final.png", "placed.obj", "scene.json", "transcript.jsonl", "result.json"):
        assert (tmp_path / name).exists()
    scene = load_scene(tmp_path / "scene.json")
    assert "placed" in scene.ids
    data = json.loads((tmp_path / "result.json").read_text())
    assert data["chosen"] == result.chosen.to_json()
