"""Acceptance suite: one test per release criterion, at stated tolerances.

Each criterion prints an ``ACCEPTANCE <name>: PASS|FAIL`` line via the
conftest hook. Run with ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import math
import random
import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from geoqa.adapter import GenerationRequest, MockBackend, run_tool_loop
from geoqa.datagen import (
    SplitSpec,
    generate_dataset,
    load_templates,
    split_and_export,
)
from geoqa.evaluation import ErrorClass, EvalExample, classify_error, evaluate_corpus
from geoqa.metrics import bleu_4, rouge_l
from geoqa.protocol import (
    ToolCall,
    parse_call,
    scan_stream,
    serialize_call,
)
from geoqa.service import QueryRequest, build_service, create_app, load_config
from geoqa.store import (
    Category,
    GeoPoint,
    TravelMode,
    build_executor,
    execute_call,
    haversine_km,
    ingest,
)

from conftest import DATA_DIR, FLAGSHIP_CALL_TEXT, make_random_store
from test_protocol import random_call
from test_store import brute_force_nearest, brute_force_threshold, law_of_cosines_km

GOLDEN = Path(__file__).resolve().parent / "golden" / "http_golden.json"


# -- 1. metric oracle equivalence ------------------------------------------------


def _is_subsequence(candidate, sequence):
    it = iter(sequence)
    return all(token in it for token in candidate)


def _oracle_lcs(a, b):
    """Exhaustive subsequence search on short inputs, memoized recursion above."""
    import itertools
    from functools import lru_cache

    small, big = (a, b) if len(a) <= len(b) else (b, a)
    if len(small) <= 8:
        for size in range(len(small), 0, -1):
            for indices in itertools.combinations(range(len(small)), size):
                if _is_subsequence([small[i] for i in indices], big):
                    return size
        return 0

    @lru_cache(maxsize=None)
    def solve(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + solve(i + 1, j + 1)
        return max(solve(i + 1, j), solve(i, j + 1))

    return solve(0, 0)


def _oracle_rouge(reference, generated):
    if not reference and not generated:
        return 1.0
    if not reference or not generated:
        return 0.0
    return (
        2.0
        * _oracle_lcs(tuple(reference), tuple(generated))
        / (len(reference) + len(generated))
    )


def _oracle_bleu(reference, generated):
    if not generated:
        return 0.0
    precisions = []
    for order in range(1, 5):
        candidate = [
            tuple(generated[i : i + order])
            for i in range(len(generated) - order + 1)
        ]
        refs = [
            tuple(reference[i : i + order])
            for i in range(len(reference) - order + 1)
        ]
        if not candidate:
            precisions.append(0.0)
            continue
        matched = sum(
            min(candidate.count(gram), refs.count(gram)) for gram in set(candidate)
        )
        precisions.append(matched / len(candidate))
    if any(p == 0.0 for p in precisions):
        return 0.0
    brevity = (
        1.0
        if len(generated) >= len(reference)
        else math.exp(1.0 - len(reference) / len(generated))
    )
    return brevity * math.exp(sum(math.log(p) / 4.0 for p in precisions))


def test_metric_oracle_equivalence():
    rng = random.Random(2024)
    vocabulary = ["a", "b", "c", "d", "e", "f"]
    started = time.perf_counter()
    for _ in range(200):
        reference = [rng.choice(vocabulary) for _ in range(rng.randint(0, 12))]
        generated = [rng.choice(vocabulary) for _ in range(rng.randint(0, 12))]
        assert bleu_4(reference, generated) == pytest.approx(
            _oracle_bleu(reference, generated), abs=1e-9
        )
        assert rouge_l(reference, generated) == pytest.approx(
            _oracle_rouge(reference, generated), abs=1e-9
        )
    assert time.perf_counter() - started < 5.0


# -- 2. metric point checks -------------------------------------------------------


def test_metric_point_checks():
    reference = ["what", "is", "the", "nearest", "hospital"]
    generated = ["the", "nearest", "hospital"]
    assert rouge_l(reference, generated) == 0.75

    identical = ["find", "the", "closest", "pharmacy", "now"]
    assert bleu_4(identical, identical) == 1.0

    # one token swapped in the middle kills every 4-gram: no smoothing, 0.0
    assert bleu_4(["a", "b", "c", "d", "e"], ["a", "b", "c", "x", "e"]) == 0.0


# -- 3. flagship wire-format byte-exactness ---------------------------------------------


def test_flagship_wire_format_byte_exact(demo_store):
    call = ToolCall(
        "get_closest_distance_time",
        (
            ("category", "hospital"),
            ("mode", "drive"),
            ("location", "Abadiño, Durango"),
            ("metric_to_extract", "distance"),
        ),
    )
    result = execute_call(demo_store, call)
    assert serialize_call(call, result) == FLAGSHIP_CALL_TEXT


# -- 4. grammar round-trip at scale ------------------------------------------------


def test_grammar_round_trip_property():
    started = time.perf_counter()
    rng = random.Random(31337)
    for _ in range(10_000):
        call, result = random_call(rng)
        parsed_call, parsed_result = parse_call(serialize_call(call, result))
        assert parsed_call == call
        assert parsed_result == result

    # chunk-partition invariance of the stream scanner
    def shape(events):
        out = []
        text = ""
        for event in events:
            kind = type(event).__name__
            if kind == "PlainText":
                text += event.text
            else:
                if text:
                    out.append(("text", text))
                    text = ""
                out.append((kind, getattr(event, "call", None)))
        if text:
            out.append(("text", text))
        return out

    for trial in range(20):
        pieces = []
        for i in range(rng.randint(1, 4)):
            call, result = random_call(rng)
            pieces.append(f"prose {trial}.{i} ")
            pieces.append(serialize_call(call, result))
        pieces.append(" tail")
        text = "".join(pieces)
        baseline = shape(scan_stream([text]))
        for _ in range(25):
            n_cuts = rng.randint(0, 15)
            cuts = sorted(rng.sample(range(1, len(text)), min(n_cuts, len(text) - 1)))
            chunks = [text[a:b] for a, b in zip([0] + cuts, cuts + [len(text)])]
            assert shape(scan_stream(chunks)) == baseline
    assert time.perf_counter() - started < 30.0


# -- 5. end-to-end mock pipeline ----------------------------------------------------


def test_end_to_end_mock_pipeline(demo_store):
    templates = load_templates(DATA_DIR / "templates" / "en.yaml")[:10]
    assert len(templates) == 10
    sample = list(demo_store.gazetteer[:50])
    pairs, _ = generate_dataset(templates, sample, demo_store, paraphrase_count=2)
    assert len(pairs) >= 1_500

    backend = MockBackend()
    for pair in pairs:
        backend.register(pair.question, pair.answer)
    executor = build_executor(demo_store)

    def generate(example: EvalExample) -> str:
        outcome = run_tool_loop(
            GenerationRequest(user_prompt=example.question, max_tokens=8192),
            backend=backend,
            executor=executor,
            retry_budget=0,
        )
        return outcome.final_text

    examples = [
        EvalExample(
            id=pair.id, question=pair.question, reference=pair.answer, subset="mock"
        )
        for pair in pairs
    ]
    report = evaluate_corpus(
        examples, generate=generate, resolve=demo_store.resolve_location
    )
    row = report.row("overall")
    assert row.size == len(pairs)
    assert row.ema == 100.0
    assert row.mean_bleu_4 == 1.0
    assert row.mean_rouge_l == 1.0
    assert row.error_percentages[ErrorClass.EXACT.value] == 100.0


# -- 6. controlled-noise evaluation ---------------------------------------------------


def test_controlled_noise_evaluation(demo_store):
    templates = [
        t
        for t in load_templates(DATA_DIR / "templates" / "en.yaml")
        if t.id == "t02_nearest_mode"
    ]
    sample = list(demo_store.gazetteer[:56])
    pairs, _ = generate_dataset(templates, sample, demo_store)
    pairs = pairs[:500]
    assert len(pairs) == 500

    rng = random.Random(606)
    corrupted_ids = rng.sample([p.id for p in pairs], 50)
    swap_ids = set(corrupted_ids[:25])
    deletion_ids = set(corrupted_ids[25:])
    other_names = [e.name for e in demo_store.gazetteer[60:120]]

    backend = MockBackend()
    injected = {}
    for pair in pairs:
        if pair.id in swap_ids:
            call, _ = parse_call(pair.answer)
            original_location = call.get("location")
            swapped_location = other_names[len(injected) % len(other_names)]
            corrupted_call = ToolCall(
                call.function,
                tuple(
                    (k, swapped_location if k == "location" else v)
                    for k, v in call.arguments
                ),
            )
            corrupted_result = execute_call(demo_store, corrupted_call)
            original_span = serialize_call(*parse_call(pair.answer))
            completion = pair.answer.replace(
                original_span, serialize_call(corrupted_call, corrupted_result)
            )
            assert original_location != swapped_location
            backend.register(pair.question, completion)
            injected[pair.id] = ErrorClass.LOCATION
        elif pair.id in deletion_ids:
            call, _ = parse_call(pair.answer)
            corrupted_call = ToolCall(
                call.function,
                tuple(
                    (k, v) for k, v in call.arguments if k != "metric_to_extract"
                ),
            )
            original_span = serialize_call(*parse_call(pair.answer))
            completion = pair.answer.replace(
                original_span, serialize_call(corrupted_call)
            )
            backend.register(pair.question, completion)
            injected[pair.id] = ErrorClass.SYNTAX
        else:
            backend.register(pair.question, pair.answer)

    executor = build_executor(demo_store)

    def generate(example: EvalExample) -> str:
        outcome = run_tool_loop(
            GenerationRequest(user_prompt=example.question),
            backend=backend,
            executor=executor,
            retry_budget=0,
        )
        return outcome.final_text

    examples = [
        EvalExample(
            id=pair.id, question=pair.question, reference=pair.answer, subset="noise"
        )
        for pair in pairs
    ]
    report = evaluate_corpus(
        examples, generate=generate, resolve=demo_store.resolve_location
    )
    row = report.row("overall")
    assert row.ema == 90.0
    assert row.error_percentages[ErrorClass.LOCATION.value] == 5.0
    assert row.error_percentages[ErrorClass.SYNTAX.value] == 5.0

    attributed = sum(
        1
        for record in report.records
        if record.example.id in injected
        and record.error_class == injected[record.example.id]
    )
    assert attributed / len(injected) >= 0.99


# -- 7. datagen hygiene at scale --------------------------------------------------------


def test_datagen_hygiene_at_scale(demo_store, tmp_path):
    started = time.perf_counter()
    templates = []
    for name in ("en.yaml", "es.yaml", "eu.yaml"):
        templates.extend(load_templates(DATA_DIR / "templates" / name))

    spec = SplitSpec(
        seed=12,
        unseen_location_count=20,
        semantic_variant_fraction=0.2,
    )
    manifests = []
    for run in ("one", "two"):
        pairs, _ = generate_dataset(
            templates, list(demo_store.gazetteer), demo_store, paraphrase_count=2
        )
        manifests.append(split_and_export(pairs, spec, tmp_path / run))
    assert manifests[0].total >= 40_000
    assert manifests[0].content_hash == manifests[1].content_hash
    for name in manifests[0].files.values():
        assert (tmp_path / "one" / name).read_bytes() == (
            tmp_path / "two" / name
        ).read_bytes()

    train_val_locations = set()
    unseen_locations = set()
    checked = 0
    for split, filename in manifests[0].files.items():
        for line in (tmp_path / "one" / filename).read_text("utf-8").splitlines():
            record = json.loads(line)
            call, embedded = parse_call(record["answer"])
            assert execute_call(demo_store, call) == embedded
            checked += 1
            location = record["metadata"]["location"]
            if location is None:
                continue
            if split in ("train", "val"):
                train_val_locations.add(location)
            elif split == "test-unseen-location":
                unseen_locations.add(location)
    assert checked == manifests[0].total
    assert len(unseen_locations) == 20
    assert train_val_locations.isdisjoint(unseen_locations)
    assert time.perf_counter() - started < 600.0


# -- 8. store correctness -----------------------------------------------------------------


def test_store_correctness():
    store = make_random_store(n_records=200, n_places=12, seed=1000)
    rng = random.Random(4242)

    for _ in range(1_000):
        point = GeoPoint(rng.uniform(43.0, 43.3), rng.uniform(-2.8, -2.4))
        category = rng.choice(list(Category))
        mode = rng.choice(list(TravelMode))
        try:
            got = store.nearest_record(category, mode, point)
        except Exception:
            assert not any(
                r.category == category and r.mode == mode for r in store.records
            )
            continue
        assert got == brute_force_nearest(store, category, mode, point)

    for threshold in (0.5, 3.0, 8.0, 20.0):
        got = store.list_within_threshold(
            Category.HOSPITAL, TravelMode.BIKE, "distance", threshold
        )
        expected = brute_force_threshold(
            store, Category.HOSPITAL, TravelMode.BIKE, "distance", threshold, None
        )
        assert [(m.entry.name, m.value) for m in got] == expected

    for _ in range(100):
        a = GeoPoint(rng.uniform(-80, 80), rng.uniform(-179, 179))
        b = GeoPoint(rng.uniform(-80, 80), rng.uniform(-179, 179))
        assert abs(haversine_km(a, b) - law_of_cosines_km(a, b)) < 1e-6


# -- 9. service contracts ------------------------------------------------------------------


def _normalize(payload):
    """Zero out wall-clock fields so responses compare byte-stable."""
    if isinstance(payload, dict):
        return {
            key: (0.0 if key.endswith("_ms") and isinstance(value, (int, float))
                  else _normalize(value))
            for key, value in payload.items()
        }
    if isinstance(payload, list):
        return [_normalize(item) for item in payload]
    return payload


def test_service_contracts(data_dir):
    config = load_config(data_dir / "service_config.yaml", env={})
    service = build_service(config)
    client = TestClient(create_app(service))

    # rejected requests never invoke the backend
    before = service.backend.calls_served
    refusal = client.post("/query", json={"question": "Write me a poem about the sea"})
    assert refusal.status_code == 200
    assert service.backend.calls_served == before
    assert refusal.json()["trace"]["guardrail"]["verdict"] == "rejected_out_of_scope"

    # identical repeated queries: byte-identical answers, zero inference time
    question = "What is the nearest hospital from Durango?"
    first = client.post("/query", json={"question": question}).json()
    second = client.post("/query", json={"question": question}).json()
    assert second["answer"] == first["answer"]
    assert second["trace"]["cache_hit"] is True
    assert second["trace"]["inference_ms"] == 0.0

    # golden-file shape check across the documented endpoints
    observed = {
        "health": _normalize(client.get("/health").json()),
        "query": _normalize(first),
        "query_cached": _normalize(second),
        "templates": _normalize(client.get("/templates").json()),
        "stats": _normalize(client.get("/stats").json()),
    }
    golden = json.loads(GOLDEN.read_text("utf-8"))
    assert observed == golden
