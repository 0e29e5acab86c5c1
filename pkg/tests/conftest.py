from __future__ import annotations

import json

import pytest

from litmine.gateway import PromptRequest, request_fingerprint
from litmine.rev import EvidenceItem
from litmine.schema import Schema, parse_schema
from litmine.store import VectorStore


VIRUS_SCHEMA_JSON = {
    "schema_id": "virus_survival",
    "fields": [
        {
            "name": "virus",
            "dtype": "string",
            "required": True,
            "is_key": True,
            "description": "name of the virus studied",
        },
        {
            "name": "temperature",
            "dtype": "float",
            "unit": "C",
            "required": True,
            "is_key": True,
            "range": [-80, 100],
            "description": "air temperature in celsius",
        },
        {
            "name": "humidity",
            "dtype": "float",
            "unit": "%",
            "required": True,
            "range": [0, 100],
            "description": "relative humidity during exposure",
        },
        {
            "name": "survival_hours",
            "dtype": "float",
            "unit": "h",
            "description": "how long the virus stayed viable",
        },
    ],
}


@pytest.fixture()
def virus_schema() -> Schema:
    return parse_schema(json.loads(json.dumps(VIRUS_SCHEMA_JSON)))


def make_doc(doc_id: str, texts: list[str], tables: list | None = None) -> dict:
    return {
        "doc_id": doc_id,
        "chunks": [
            {"chunk_index": i, "text": t, "page_number": 1} for i, t in enumerate(texts)
        ],
        "tables": tables or [],
        "figures": [],
        "page_images": [],
    }


def rows_reply(rows: list[dict]) -> str:
    """Model reply text for a list of row cell maps."""
    return json.dumps({"rows": rows})


def cell(value, confidence=0.9, evidence=None) -> dict:
    out = {"value": value, "confidence": confidence}
    if evidence is not None:
        out["evidence"] = evidence
    return out


def script_entry(request: PromptRequest, response_text: str) -> dict:
    return {"fingerprint": request_fingerprint(request), "response_text": response_text}


def expected_evidence(
    store: VectorStore, queries: list[str], doc_id: str, k: int
) -> list[EvidenceItem]:
    """Evidence list the loop will assemble for these queries: per-query
    ranked results, deduplicated keeping first appearance."""
    seen: dict[str, EvidenceItem] = {}
    for q in queries:
        for r in store.query(q, k, {"doc_id": doc_id}):
            if r.entry_id not in seen:
                entry = store.get_entry(r.entry_id)
                seen[r.entry_id] = EvidenceItem(
                    entry_id=entry.entry_id,
                    modality=entry.modality,
                    ref=entry.ref,
                    text=entry.text_surrogate,
                )
    return list(seen.values())


CORPUS_TEXTS = {
    "paperA": [
        "Bacteriophage MS2, an airborne virus, stayed viable for 5 hours "
        "at an air temperature of 25 celsius.",
        "The relative humidity during exposure was held at 50 percent.",
    ],
    "paperB": [
        "Influenza A remained viable for 3 hours at a temperature of 77 F "
        "and 40 percent relative humidity.",
    ],
}

GROUND_TRUTH_CSV = (
    "virus,temperature,humidity,survival_hours\n"
    "MS2,25,50,5\n"
    "Influenza A,25,40,3\n"
    "MS2,4,20,24\n"
    "Zika,30,60,2\n"
)


def corpus_script_entries(schema: Schema) -> list[dict]:
    """Mock-gateway script for the two-paper corpus: paperA needs a second
    round for humidity, paperB converges in round one with a Fahrenheit
    temperature."""
    from litmine.document import validate_document
    from litmine.rev import (
        ExtractionRecord,
        build_extract_prompt,
        build_fill_prompt,
        formulate_queries,
    )
    from litmine.store import HashedBagEmbedder

    store = VectorStore(HashedBagEmbedder(dim=256))
    for doc_id, texts in CORPUS_TEXTS.items():
        store.index_document(validate_document(make_doc(doc_id, texts)))

    entries = []

    ev_a1 = expected_evidence(store, formulate_queries(schema), "paperA", k=5)
    entries.append(
        script_entry(
            build_extract_prompt(schema, ev_a1),
            rows_reply([
                {
                    "virus": cell("MS2", 0.9, ["paperA/chunk/0"]),
                    "temperature": cell("25 C", 0.85, ["paperA/chunk/0"]),
                    "humidity": cell(None),
                    "survival_hours": cell("5 hours", 0.8, ["paperA/chunk/0"]),
                }
            ]),
        )
    )
    prior_a = ExtractionRecord(
        record_id="paperA:r0",
        doc_id="paperA",
        values={
            "virus": "MS2",
            "temperature": 25.0,
            "humidity": None,
            "survival_hours": 5.0,
        },
    )
    fill_queries = formulate_queries(schema, ["humidity"], prior=prior_a)
    ev_a2 = expected_evidence(store, fill_queries, "paperA", k=5)
    entries.append(
        script_entry(
            build_fill_prompt(schema, prior_a, ["humidity"], ev_a2),
            rows_reply([
                {"humidity": cell("50 percent", 0.9, ["paperA/chunk/1"])}
            ]),
        )
    )

    ev_b1 = expected_evidence(store, formulate_queries(schema), "paperB", k=5)
    entries.append(
        script_entry(
            build_extract_prompt(schema, ev_b1),
            rows_reply([
                {
                    "virus": cell("Influenza A", 0.95, ["paperB/chunk/0"]),
                    "temperature": cell("77 F", 0.9, ["paperB/chunk/0"]),
                    "humidity": cell("40", 0.9, ["paperB/chunk/0"]),
                    "survival_hours": cell(3, 0.85, ["paperB/chunk/0"]),
                }
            ]),
        )
    )
    return entries


def build_corpus(base) -> dict:
    """Write a complete runnable corpus under ``base``: document JSON files,
    schema, mock gateway script, ground-truth CSV and a run config whose
    relative paths resolve against ``base``. Returns the path map."""
    import os

    base = str(base)
    docs_dir = os.path.join(base, "docs")
    os.makedirs(docs_dir, exist_ok=True)
    for doc_id, texts in CORPUS_TEXTS.items():
        with open(os.path.join(docs_dir, f"{doc_id}.json"), "w") as fh:
            json.dump(make_doc(doc_id, texts), fh, indent=2)

    schema_path = os.path.join(base, "schema.json")
    with open(schema_path, "w") as fh:
        json.dump(VIRUS_SCHEMA_JSON, fh, indent=2)

    schema = parse_schema(json.loads(json.dumps(VIRUS_SCHEMA_JSON)))
    script_path = os.path.join(base, "script.json")
    with open(script_path, "w") as fh:
        json.dump(corpus_script_entries(schema), fh, indent=2)

    gt_path = os.path.join(base, "gt.csv")
    with open(gt_path, "w") as fh:
        fh.write(GROUND_TRUTH_CSV)

    config_path = os.path.join(base, "run.json")
    with open(config_path, "w") as fh:
        json.dump(
            {
                "corpus": {"dir": "docs"},
                "schema": "schema.json",
                "gateway": {"mock_script": "script.json"},
                "evaluation": {"ground_truth": "gt.csv"},
            },
            fh,
            indent=2,
        )

    return {
        "base": base,
        "docs_dir": docs_dir,
        "doc_files": sorted(
            os.path.join(docs_dir, name) for name in os.listdir(docs_dir)
        ),
        "schema": schema_path,
        "script": script_path,
        "ground_truth": gt_path,
        "config": config_path,
    }
