"""Synthetic question-answer dataset pipeline.

The pipeline walks from table projections to an exported, split dataset:

1. enumerate the projections of each table, filtered by a reviewed config,
2. load the human-curated template registry (one file per language),
3. instantiate templates over a gazetteer sample and the closed value domains,
4. execute each bound call against the store and render the reference answer
   (skeletons whose call fails are dropped, keeping the set execution-clean),
5. paraphrase questions without touching slot-filled spans,
6. split into train/val/test subsets and export line-delimited records.

Everything is deterministic under a fixed seed: identical inputs produce a
byte-identical export.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import yaml

from .adapter import ANSWER_MARKER, QUESTION_MARKER, GenerationRequest, generate_stream
from .protocol import (
    SpecRegistry,
    ToolCall,
    ToolResult,
    default_registry,
    format_number,
    serialize_call,
)
from .store import (
    GazetteerEntry,
    Store,
    ToolExecutionError,
    canonicalize_name,
    execute_call,
)

logger = logging.getLogger(__name__)

SLOT_NAMES = ("location", "category", "mode", "metric")

DEFAULT_VALUE_DOMAINS: Dict[str, Tuple[str, ...]] = {
    "category": ("hospital", "supermarket", "pharmacy"),
    "mode": ("walk", "bike", "drive"),
    "metric": ("distance", "time"),
}

_SLOT_RE = re.compile(r"\{(" + "|".join(SLOT_NAMES) + r")\}")
_REF_RE = re.compile(r"\{([a-z_]+(?:\.[a-z_]+)?)\}")

SFT_PROMPT_TEMPLATE = (
    "{system}" + QUESTION_MARKER + "{question}" + ANSWER_MARKER + "{answer}"
)


class DatagenError(Exception):
    pass


class ConfigTooRestrictive(DatagenError):
    """Projection filtering left nothing to build questions from."""


class TemplateError(DatagenError):
    """A registry entry is malformed; raised at load time, never later."""


class SplitInfeasible(DatagenError):
    """The split spec demands more held-out material than exists."""


class SkeletonDropped(DatagenError):
    """Answer generation failed for this skeleton; it leaves the dataset."""

    def __init__(self, reason: str, kind: str):
        self.reason = reason
        self.kind = kind
        super().__init__(reason)


# -- schema and projections ----------------------------------------------------

ATTRIBUTE_KINDS = ("location", "category", "mode", "distance", "time")


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str

    def __post_init__(self):
        if self.kind not in ATTRIBUTE_KINDS:
            raise DatagenError(f"unknown attribute kind {self.kind!r}")


@dataclass(frozen=True)
class TableSchema:
    name: str
    attributes: Tuple[Attribute, ...]

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise DatagenError(f"duplicate attribute in table {self.name!r}")

    def attribute_names(self) -> Tuple[str, ...]:
        return tuple(a.name for a in self.attributes)


@dataclass(frozen=True)
class Projection:
    table: str
    attributes: Tuple[str, ...]  # normalized to schema attribute order
    is_superprojection: bool = False


def load_schema(path) -> List[TableSchema]:
    with open(path, "r", encoding="utf-8") as handle:
        raw = yaml.safe_load(handle)
    tables = []
    for table in raw.get("tables", []):
        tables.append(
            TableSchema(
                name=table["name"],
                attributes=tuple(
                    Attribute(name=a["name"], kind=a["kind"])
                    for a in table["attributes"]
                ),
            )
        )
    if not tables:
        raise DatagenError(f"no tables defined in {path}")
    return tables


@dataclass(frozen=True)
class ProjectionConfig:
    """The reviewed stand-in for manual 'semantically meaningful' filtering."""

    deny_attributes: Tuple[str, ...] = ()
    allow_subsets: Optional[Tuple[Tuple[str, ...], ...]] = None  # None: keep all

    @staticmethod
    def from_mapping(raw: Mapping) -> "ProjectionConfig":
        allow = raw.get("allow")
        return ProjectionConfig(
            deny_attributes=tuple(raw.get("deny", ())),
            allow_subsets=(
                tuple(tuple(subset) for subset in allow) if allow is not None else None
            ),
        )


_MAX_ENUMERABLE_ATTRIBUTES = 16


def enumerate_projections(
    schema: TableSchema, config: Optional[ProjectionConfig] = None
) -> List[Projection]:
    """All non-empty attribute subsets surviving the config filter.

    Each surviving projection is flagged as a superprojection when it
    strictly contains another surviving projection of the same table.
    """
    config = config or ProjectionConfig()
    effective = [
        a.name for a in schema.attributes if a.name not in config.deny_attributes
    ]
    if len(effective) > _MAX_ENUMERABLE_ATTRIBUTES:
        raise DatagenError(
            f"table {schema.name!r} has too many attributes to enumerate"
        )
    allowed = None
    if config.allow_subsets is not None:
        allowed = {frozenset(subset) for subset in config.allow_subsets}
    subsets: List[Tuple[str, ...]] = []
    for size in range(1, len(effective) + 1):
        for combo in itertools.combinations(effective, size):
            if allowed is not None and frozenset(combo) not in allowed:
                continue
            subsets.append(combo)
    if not subsets:
        raise ConfigTooRestrictive(
            f"no projections survive the config for table {schema.name!r}"
        )
    surviving = [frozenset(s) for s in subsets]
    projections = []
    for combo in subsets:
        as_set = frozenset(combo)
        is_super = any(other < as_set for other in surviving)
        projections.append(
            Projection(table=schema.name, attributes=combo, is_superprojection=is_super)
        )
    return projections


# -- template registry ----------------------------------------------------------


@dataclass(frozen=True)
class QuestionTemplate:
    id: str
    text: str
    language: str
    projection_table: str  # "*" ranges over every category table
    projection_attributes: Tuple[str, ...]
    superprojection: bool
    call_function: str
    call_arguments: Tuple[Tuple[str, str], ...]  # (param, binding) in spec order
    answer: str
    lexicon: Mapping[str, Mapping[str, str]] = field(default_factory=dict)

    def slots(self) -> Tuple[str, ...]:
        used = []
        for source in (
            self.text,
            self.answer,
            *(binding for _, binding in self.call_arguments),
        ):
            for match in _SLOT_RE.finditer(source):
                if match.group(1) not in used:
                    used.append(match.group(1))
        return tuple(sorted(used, key=SLOT_NAMES.index))

    def surface(self, slot: str, value: str) -> str:
        return self.lexicon.get(slot, {}).get(value, value)


def _slots_in(text: str) -> set:
    return {m.group(1) for m in _SLOT_RE.finditer(text)}


def _validate_template(template: QuestionTemplate, registry: SpecRegistry) -> None:
    spec = registry.get(template.call_function)
    if spec is None:
        raise TemplateError(
            f"template {template.id!r}: unknown function {template.call_function!r}"
        )
    expected = spec.param_names()
    got = tuple(name for name, _ in template.call_arguments)
    unknown = [name for name in got if name not in expected]
    if unknown:
        raise TemplateError(
            f"template {template.id!r}: unknown call parameter {unknown[0]!r}"
        )
    missing = [p.name for p in spec.params if p.required and p.name not in got]
    if missing:
        raise TemplateError(
            f"template {template.id!r}: missing call parameter {missing[0]!r}"
        )
    order = [expected.index(name) for name in got]
    if order != sorted(order):
        raise TemplateError(
            f"template {template.id!r}: call parameters out of spec order"
        )
    if template.answer.count("{call}") != 1:
        raise TemplateError(
            f"template {template.id!r}: answer must embed exactly one {{call}}"
        )
    for match in _REF_RE.finditer(template.text):
        if match.group(1) not in SLOT_NAMES:
            raise TemplateError(
                f"template {template.id!r}: unknown slot {match.group(1)!r} in text"
            )
    for _, binding in template.call_arguments:
        for match in _REF_RE.finditer(binding):
            if match.group(1) not in SLOT_NAMES:
                raise TemplateError(
                    f"template {template.id!r}: unknown slot "
                    f"{match.group(1)!r} in call binding"
                )
    bound = _slots_in(template.answer)
    for _, binding in template.call_arguments:
        bound |= _slots_in(binding)
    unbound = _slots_in(template.text) - bound
    if unbound:
        raise TemplateError(
            f"template {template.id!r}: unbound slot {sorted(unbound)[0]!r}"
        )
    for match in _REF_RE.finditer(template.answer):
        name = match.group(1)
        if name in SLOT_NAMES or name == "call" or name.startswith("result."):
            continue
        raise TemplateError(
            f"template {template.id!r}: unknown answer reference {name!r}"
        )


def load_templates(
    path, registry: Optional[SpecRegistry] = None
) -> List[QuestionTemplate]:
    """Load and validate one language's registry file."""
    registry = registry or default_registry()
    with open(path, "r", encoding="utf-8") as handle:
        raw = yaml.safe_load(handle)
    language = raw.get("language", "en")
    lexicon = raw.get("lexicon") or {}
    templates: List[QuestionTemplate] = []
    seen_ids = set()
    for entry in raw.get("templates", []):
        projection = entry.get("projection") or {}
        call = entry.get("call") or {}
        template = QuestionTemplate(
            id=str(entry["id"]),
            text=entry["text"],
            language=language,
            projection_table=projection.get("table", "*"),
            projection_attributes=tuple(projection.get("attributes", ())),
            superprojection=bool(entry.get("superprojection", False)),
            call_function=call.get("function", ""),
            call_arguments=tuple(
                (str(k), str(v)) for k, v in (call.get("arguments") or {}).items()
            ),
            answer=entry["answer"],
            lexicon=lexicon,
        )
        if template.id in seen_ids:
            raise TemplateError(f"duplicate template id {template.id!r}")
        seen_ids.add(template.id)
        _validate_template(template, registry)
        templates.append(template)
    if not templates:
        raise TemplateError(f"no templates in {path}")
    return templates


# -- instantiation ---------------------------------------------------------------


@dataclass(frozen=True)
class Skeleton:
    template: QuestionTemplate
    question: str
    call: ToolCall
    slot_values: Tuple[Tuple[str, str], ...]  # canonical values
    location: Optional[str]


def _render(text: str, mapping: Callable[[str], str]) -> str:
    def substitute(match: re.Match) -> str:
        return mapping(match.group(1))

    return _REF_RE.sub(substitute, text)


def instantiate(
    templates: Sequence[QuestionTemplate],
    gazetteer_sample: Sequence[GazetteerEntry],
    value_domains: Optional[Mapping[str, Sequence[str]]] = None,
) -> List[Skeleton]:
    """Cartesian slot expansion, deduplicated on question text.

    Order is deterministic: template id, then location name, then the closed
    slot domains in their declared order.
    """
    domains = dict(DEFAULT_VALUE_DOMAINS)
    if value_domains:
        domains.update({k: tuple(v) for k, v in value_domains.items()})
    location_names = sorted(
        (entry.name for entry in gazetteer_sample), key=canonicalize_name
    )
    skeletons: List[Skeleton] = []
    seen_questions = set()
    for template in sorted(templates, key=lambda t: t.id):
        slots = template.slots()
        axes: List[Sequence[str]] = []
        for slot in slots:
            if slot == "location":
                axes.append(location_names)
            else:
                axes.append(domains[slot])
        if not slots:
            axes = [()]  # a single empty combination
            combos: Iterable[Tuple[str, ...]] = [()]
        else:
            combos = itertools.product(*axes)
        for combo in combos:
            values = dict(zip(slots, combo))

            def surface_of(name: str) -> str:
                if name not in values:
                    raise TemplateError(
                        f"template {template.id!r}: no value for slot {name!r}"
                    )
                return template.surface(name, values[name])

            question = _render(template.text, surface_of)
            if question in seen_questions:
                continue
            seen_questions.add(question)
            arguments = tuple(
                (param, _render(binding, lambda name: values[name]))
                for param, binding in template.call_arguments
            )
            skeletons.append(
                Skeleton(
                    template=template,
                    question=question,
                    call=ToolCall(
                        function=template.call_function, arguments=arguments
                    ),
                    slot_values=tuple(sorted(values.items())),
                    location=values.get("location"),
                )
            )
    return skeletons


# -- answer generation -----------------------------------------------------------


@dataclass
class QAPair:
    id: str
    question: str
    answer: str
    metadata: Dict

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "question": self.question,
            "answer": self.answer,
            "metadata": self.metadata,
        }


def _format_result_value(value) -> str:
    if isinstance(value, str):
        return value
    return format_number(value)


def generate_answer(skeleton: Skeleton, store: Store) -> QAPair:
    """Execute the bound call and render the reference answer around it.

    Execution failures raise SkeletonDropped: the training set only ever
    contains calls that ran cleanly.
    """
    try:
        result = execute_call(store, skeleton.call)
    except ToolExecutionError as exc:
        raise SkeletonDropped(str(exc), kind=exc.kind) from exc
    serialized = serialize_call(skeleton.call, result)
    values = dict(skeleton.slot_values)
    template = skeleton.template

    def resolve_ref(name: str) -> str:
        if name == "call":
            return serialized
        if name in SLOT_NAMES:
            if name not in values:
                raise TemplateError(
                    f"template {template.id!r}: no value for slot {name!r}"
                )
            return template.surface(name, values[name])
        if name.startswith("result."):
            fieldname = name[len("result.") :]
            if fieldname == "count":
                return str(len(result.fields))
            if fieldname == "top_field":
                if not result.fields:
                    raise TemplateError(
                        f"template {template.id!r}: top_field on empty result"
                    )
                return str(result.fields[0][0])
            if fieldname == "top_value":
                if not result.fields:
                    raise TemplateError(
                        f"template {template.id!r}: top_value on empty result"
                    )
                return _format_result_value(result.fields[0][1])
            value = result.get(fieldname)
            if value is None:
                raise TemplateError(
                    f"template {template.id!r}: result has no field {fieldname!r}"
                )
            return _format_result_value(value)
        raise TemplateError(f"template {template.id!r}: unknown reference {name!r}")

    answer = _render(template.answer, resolve_ref)
    metadata = {
        "template_id": template.id,
        "language": template.language,
        "projection": {
            "table": template.projection_table,
            "attributes": list(template.projection_attributes),
        },
        "location": skeleton.location,
        "slots": values,
        # what actually appears in the question text (lexicon applied);
        # these spans are what paraphrasing must keep verbatim
        "slot_surfaces": {
            slot: template.surface(slot, value) for slot, value in values.items()
        },
        "paraphrase_index": 0,
        "split": None,
    }
    return QAPair(id="", question=skeleton.question, answer=answer, metadata=metadata)


# -- paraphrasing -----------------------------------------------------------------

_SYNONYM_TABLE = (
    ("nearest", "closest"),
    ("closest", "nearest"),
    ("Enumerate", "List"),
    ("Which places", "What places"),
    ("How long does it take", "How much time does it take"),
    ("How far", "At what distance"),
    ("fastest", "quickest"),
    ("reach", "get to"),
    ("lie within", "are within"),
    ("Where can you", "From where can you"),
)


def _front_location(question: str) -> Optional[str]:
    match = re.fullmatch(
        r"(What|Which) is the (nearest|closest) (.+) from (.+?)\?", question
    )
    if not match:
        return None
    head, adjective, subject, location = match.groups()
    return f"From {location}, {head.lower()} is the {adjective} {subject}?"


def _swap_synonym(question: str) -> Optional[str]:
    for source, target in _SYNONYM_TABLE:
        if source in question:
            return question.replace(source, target, 1)
    return None


def _politeness(question: str) -> Optional[str]:
    body = question.rstrip()
    trailing = "?" if body.endswith("?") else "."
    body = body.rstrip("?.")
    if not body:
        return None
    return f"Can you tell me {body[0].lower()}{body[1:]}{trailing}"


def _tell_me(question: str) -> Optional[str]:
    return f"Tell me: {question}"


_RULES = (_front_location, _swap_synonym, _politeness, _tell_me)


class RuleParaphraser:
    """Fixed clause reorderings and synonym swaps; slot spans stay untouched.

    The rule table is English; pairs in other languages are left alone
    rather than produced as mixed-language text.
    """

    language = "en"

    def variants(self, question: str, protected: Sequence[str], count: int) -> List[str]:
        results: List[str] = []
        for rule in _RULES:
            if len(results) >= count:
                break
            candidate = rule(question)
            if candidate is None or candidate == question or candidate in results:
                continue
            if all(span in candidate for span in protected):
                results.append(candidate)
        return results


class ModelParaphraser:
    """Paraphrases drawn from a generation backend, slot-checked afterwards."""

    language = "*"  # a model backend can rewrite any registered language

    def __init__(self, backend, max_tokens: int = 256):
        self.backend = backend
        self.max_tokens = max_tokens

    def variants(self, question: str, protected: Sequence[str], count: int) -> List[str]:
        prompt = (
            f"Rewrite the following question {count} different ways, one per "
            f"line, keeping every place name and keyword intact: {question}"
        )
        request = GenerationRequest(
            user_prompt=prompt,
            pause_on_call=False,
            max_tokens=self.max_tokens,
        )
        text = "".join(generate_stream(request, self.backend))
        results: List[str] = []
        for line in text.splitlines():
            candidate = line.strip().lstrip("-*0123456789. ").strip()
            if not candidate or candidate == question or candidate in results:
                continue
            if all(span in candidate for span in protected):
                results.append(candidate)
            if len(results) >= count:
                break
        return results


def paraphrase(pair: QAPair, engine, count: int) -> List[QAPair]:
    """Up to ``count`` question variants sharing the pair's answer verbatim."""
    if count <= 0:
        return []
    surfaces = pair.metadata.get("slot_surfaces") or pair.metadata["slots"]
    protected = [value for _, value in sorted(surfaces.items())]
    variants = engine.variants(pair.question, protected, count)
    if not variants:
        logger.warning("no slot-preserving paraphrase for %r", pair.question)
    out = []
    for index, question in enumerate(variants, start=1):
        metadata = json.loads(json.dumps(pair.metadata))  # deep, plain-data copy
        metadata["paraphrase_index"] = index
        out.append(
            QAPair(id="", question=question, answer=pair.answer, metadata=metadata)
        )
    return out


# -- pipeline ----------------------------------------------------------------------


@dataclass
class DropLog:
    dropped: List[Tuple[str, str, str]] = field(default_factory=list)

    def add(self, question: str, kind: str, reason: str) -> None:
        self.dropped.append((question, kind, reason))
        logger.info("skeleton dropped (%s): %s", kind, question)


def generate_dataset(
    templates: Sequence[QuestionTemplate],
    gazetteer_sample: Sequence[GazetteerEntry],
    store: Store,
    paraphrase_count: int = 0,
    engine=None,
    value_domains: Optional[Mapping[str, Sequence[str]]] = None,
) -> Tuple[List[QAPair], DropLog]:
    """Instantiate, answer, paraphrase and number the full pair list."""
    engine = engine or RuleParaphraser()
    engine_language = getattr(engine, "language", "*")
    drops = DropLog()
    pairs: List[QAPair] = []
    seen_questions = set()
    for skeleton in instantiate(templates, gazetteer_sample, value_domains):
        try:
            pair = generate_answer(skeleton, store)
        except SkeletonDropped as exc:
            drops.add(skeleton.question, exc.kind, exc.reason)
            continue
        group = [pair]
        if paraphrase_count > 0 and engine_language in ("*", pair.metadata["language"]):
            group.extend(paraphrase(pair, engine, paraphrase_count))
        for candidate in group:
            if candidate.question in seen_questions:
                continue
            seen_questions.add(candidate.question)
            pairs.append(candidate)
    for i, pair in enumerate(pairs, start=1):
        pair.id = f"qa-{i:06d}"
    return pairs, drops


# -- split and export ----------------------------------------------------------------


SPLIT_NAMES = (
    "train",
    "val",
    "test-monolingual",
    "test-multilingual",
    "test-unseen-location",
    "test-semantic-variant",
)


@dataclass(frozen=True)
class SplitSpec:
    seed: int = 0
    val_fraction: float = 0.1
    test_monolingual_fraction: float = 0.1
    unseen_location_count: int = 0
    semantic_variant_fraction: float = 0.0
    primary_language: str = "en"


def assign_splits(pairs: Sequence[QAPair], spec: SplitSpec) -> None:
    """Tag every pair's metadata with its split, in place.

    Unseen-location holdout removes whole locations from the trainable pool;
    the semantic-variant holdout removes the highest paraphrase index of
    sampled (template, location) groups, so no group straddles that boundary.
    """
    rng = random.Random(spec.seed)
    locations = sorted(
        {
            p.metadata["location"]
            for p in pairs
            if p.metadata["location"] is not None
        }
    )
    if spec.unseen_location_count > len(locations):
        raise SplitInfeasible(
            f"cannot hold out {spec.unseen_location_count} locations; "
            f"only {len(locations)} exist"
        )
    held_out = set(rng.sample(locations, spec.unseen_location_count))

    pool: List[QAPair] = []
    for pair in pairs:
        metadata = pair.metadata
        if metadata["language"] != spec.primary_language:
            metadata["split"] = "test-multilingual"
        elif metadata["location"] in held_out:
            metadata["split"] = "test-unseen-location"
        else:
            pool.append(pair)

    groups: Dict[Tuple[str, Optional[str]], List[QAPair]] = {}
    for pair in pool:
        key = (pair.metadata["template_id"], pair.metadata["location"])
        groups.setdefault(key, []).append(pair)
    remaining: List[QAPair] = []
    for key in sorted(groups, key=lambda k: (k[0], k[1] or "")):
        group = groups[key]
        indices = {p.metadata["paraphrase_index"] for p in group}
        indices.discard(0)
        held_index = None
        if indices and rng.random() < spec.semantic_variant_fraction:
            # hold out one whole paraphrase index so no (template, location)
            # group shares an index across the train/test boundary
            held_index = max(indices)
        for pair in group:
            if pair.metadata["paraphrase_index"] == held_index:
                pair.metadata["split"] = "test-semantic-variant"
            else:
                remaining.append(pair)

    indices = list(range(len(remaining)))
    rng.shuffle(indices)
    n_val = round(spec.val_fraction * len(remaining))
    n_test = round(spec.test_monolingual_fraction * len(remaining))
    val_idx = set(indices[:n_val])
    test_idx = set(indices[n_val : n_val + n_test])
    for i, pair in enumerate(remaining):
        if i in val_idx:
            pair.metadata["split"] = "val"
        elif i in test_idx:
            pair.metadata["split"] = "test-monolingual"
        else:
            pair.metadata["split"] = "train"


@dataclass
class ExportManifest:
    counts: Dict[str, int]
    total: int
    content_hash: str
    seed: int
    files: Dict[str, str]

    def to_dict(self) -> dict:
        return {
            "counts": self.counts,
            "total": self.total,
            "content_hash": self.content_hash,
            "seed": self.seed,
            "files": self.files,
        }


def split_and_export(
    pairs: Sequence[QAPair], spec: SplitSpec, destination
) -> ExportManifest:
    """Assign splits and write one JSONL file per split plus a manifest."""
    assign_splits(pairs, spec)
    destination = Path(destination)
    destination.mkdir(parents=True, exist_ok=True)
    by_split: Dict[str, List[QAPair]] = {name: [] for name in SPLIT_NAMES}
    for pair in pairs:
        by_split[pair.metadata["split"]].append(pair)

    digest = hashlib.sha256()
    counts: Dict[str, int] = {}
    files: Dict[str, str] = {}
    for split in SPLIT_NAMES:
        members = sorted(by_split[split], key=lambda p: p.id)
        filename = f"{split.replace('-', '_')}.jsonl"
        payload = "".join(
            json.dumps(pair.to_record(), ensure_ascii=False) + "\n"
            for pair in members
        )
        (destination / filename).write_text(payload, "utf-8")
        digest.update(payload.encode("utf-8"))
        counts[split] = len(members)
        files[split] = filename

    (destination / "prompt_template.txt").write_text(
        SFT_PROMPT_TEMPLATE + "\n", "utf-8"
    )
    manifest = ExportManifest(
        counts=counts,
        total=len(pairs),
        content_hash=digest.hexdigest(),
        seed=spec.seed,
        files=files,
    )
    (destination / "manifest.json").write_text(
        json.dumps(manifest.to_dict(), indent=2) + "\n", "utf-8"
    )
    return manifest
