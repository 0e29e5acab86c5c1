import json

import pytest

from litmine.gateway import (
    Attachment,
    AuditLog,
    AuthFailure,
    CompletionResponse,
    Gateway,
    GatewayError,
    HttpBackend,
    MockBackend,
    MockScriptMiss,
    ProfileUnknown,
    PromptRequest,
    RateLimited,
    StructureInvalidAfterRepair,
    Timeout,
    extract_json_payload,
    request_fingerprint,
)


def req(user="hello", system="sys", **kw):
    return PromptRequest(model_profile="default", system=system, user=user, **kw)


class TestFingerprint:
    def test_stable_and_sensitive(self):
        a = request_fingerprint(req())
        assert a == request_fingerprint(req())
        assert a != request_fingerprint(req(user="other"))
        assert a != request_fingerprint(req(system="other"))

    def test_ignores_sampling_and_profile(self):
        base = request_fingerprint(req())
        assert base == request_fingerprint(req(temperature=0.9))
        assert base == request_fingerprint(req(max_output_tokens=64))
        other_profile = PromptRequest(model_profile="fast", system="sys", user="hello")
        assert base == request_fingerprint(other_profile)

    def test_attachments_change_fingerprint(self):
        with_att = req(attachments=(Attachment("table_text", "a|b"),))
        assert request_fingerprint(req()) != request_fingerprint(with_att)
        # attachment digest covers payload content
        other = req(attachments=(Attachment("table_text", "a|c"),))
        assert request_fingerprint(with_att) != request_fingerprint(other)


class TestExtractJsonPayload:
    def test_plain(self):
        assert extract_json_payload('{"a": 1}') == {"a": 1}

    def test_fenced(self):
        assert extract_json_payload('```json\n{"a": 1}\n```') == {"a": 1}
        assert extract_json_payload('```\n[1, 2]\n```') == [1, 2]

    def test_invalid(self):
        with pytest.raises(ValueError):
            extract_json_payload("nope")


class TestMockBackend:
    def test_simple_replay(self):
        r = req()
        backend = MockBackend([
            {"fingerprint": request_fingerprint(r), "response_text": "scripted"},
        ])
        assert backend.complete_raw(r) == "scripted"

    def test_miss_is_loud_and_names_fingerprint(self):
        backend = MockBackend([])
        r = req(user="something nobody scripted")
        with pytest.raises(MockScriptMiss) as err:
            backend.complete_raw(r)
        assert request_fingerprint(r) in str(err.value)

    def test_sequence_with_sticky_last(self):
        r = req()
        backend = MockBackend([
            {
                "fingerprint": request_fingerprint(r),
                "responses": [{"error": "timeout"}, {"text": "ok"}],
            },
        ])
        with pytest.raises(Timeout):
            backend.complete_raw(r)
        assert backend.complete_raw(r) == "ok"
        # cursor past the end keeps replaying the final outcome
        assert backend.complete_raw(r) == "ok"

    def test_error_kinds(self):
        for name, exc_type in (
            ("timeout", Timeout),
            ("rate_limited", RateLimited),
            ("auth", AuthFailure),
        ):
            r = req(user=f"fails with {name}")
            backend = MockBackend([
                {"fingerprint": request_fingerprint(r), "responses": [{"error": name}]},
            ])
            with pytest.raises(exc_type):
                backend.complete_raw(r)

    def test_duplicate_fingerprint_rejected(self):
        r = req()
        fp = request_fingerprint(r)
        with pytest.raises(ValueError):
            MockBackend([
                {"fingerprint": fp, "response_text": "a"},
                {"fingerprint": fp, "response_text": "b"},
            ])

    def test_malformed_entries_rejected(self):
        with pytest.raises(ValueError):
            MockBackend([{"response_text": "no fingerprint"}])
        with pytest.raises(ValueError):
            MockBackend([{"fingerprint": "f", "responses": []}])
        with pytest.raises(ValueError):
            MockBackend([{"fingerprint": "f", "responses": [{"error": "nonsense"}]}])

    def test_from_file(self, tmp_path):
        r = req()
        path = tmp_path / "script.json"
        path.write_text(json.dumps([
            {"fingerprint": request_fingerprint(r), "response_text": "from disk"},
        ]))
        assert MockBackend.from_file(str(path)).complete_raw(r) == "from disk"


class TestGatewayRetry:
    def gateway_with(self, responses, retries=2):
        r = req()
        backend = MockBackend([
            {"fingerprint": request_fingerprint(r), "responses": responses},
        ])
        sleeps = []
        gw = Gateway(
            profiles={"default": backend},
            retries=retries,
            backoff_base=0.1,
            sleep_fn=sleeps.append,
        )
        return gw, r, sleeps

    def test_success_records_audit(self):
        gw, r, _ = self.gateway_with([{"text": "fine"}])
        resp = gw.complete(r)
        assert isinstance(resp, CompletionResponse)
        assert resp.text == "fine"
        assert len(gw.audit.entries) == 1
        entry = gw.audit.entries[0]
        assert entry["outcome"] == "ok"
        assert entry["retries"] == 0
        assert entry["fingerprint"] == request_fingerprint(r)

    def test_retries_transient_then_succeeds(self):
        gw, r, sleeps = self.gateway_with(
            [{"error": "timeout"}, {"error": "rate_limited"}, {"text": "third time"}]
        )
        resp = gw.complete(r)
        assert resp.text == "third time"
        assert sleeps == [0.1, 0.2]
        assert gw.audit.entries[0]["retries"] == 2

    def test_backoff_never_decreases(self):
        gw, r, sleeps = self.gateway_with(
            [{"error": "timeout"}] * 4 + [{"text": "ok"}], retries=4
        )
        gw.complete(r)
        assert sleeps == sorted(sleeps)
        assert len(sleeps) == 4

    def test_exhausted_retries_reraise_and_audit(self):
        gw, r, _ = self.gateway_with([{"error": "timeout"}], retries=2)
        with pytest.raises(Timeout):
            gw.complete(r)
        entry = gw.audit.entries[-1]
        assert entry["outcome"] == "Timeout"
        assert entry["retries"] == 2

    def test_auth_failure_not_retried(self):
        gw, r, sleeps = self.gateway_with([{"error": "auth"}, {"text": "never"}])
        with pytest.raises(AuthFailure):
            gw.complete(r)
        assert sleeps == []

    def test_unknown_profile(self):
        gw = Gateway(profiles={}, sleep_fn=lambda s: None)
        with pytest.raises(ProfileUnknown):
            gw.complete(req())

    def test_profiles_routed_independently(self):
        r_fast = PromptRequest(model_profile="fast", system="sys", user="hello")
        fp = request_fingerprint(r_fast)
        gw = Gateway(
            profiles={
                "fast": MockBackend([{"fingerprint": fp, "response_text": "fast lane"}]),
                "default": MockBackend([{"fingerprint": fp, "response_text": "slow lane"}]),
            },
            sleep_fn=lambda s: None,
        )
        assert gw.complete(r_fast).text == "fast lane"
        assert gw.complete(req()).text == "slow lane"

    def test_audit_jsonl_round_trip(self, tmp_path):
        gw, r, _ = self.gateway_with([{"text": "fine"}])
        gw.complete(r)
        path = tmp_path / "audit.jsonl"
        gw.audit.write_jsonl(str(path))
        lines = path.read_text().splitlines()
        assert len(lines) == 1
        entry = json.loads(lines[0])
        assert entry["outcome"] == "ok"
        assert "latency_ms" not in entry  # artifacts stay time-free


class AlwaysDict:
    def validate(self, payload):
        if not isinstance(payload, dict):
            raise ValueError("expected object")
        return payload


class TestCompleteStructured:
    def test_valid_first_try(self):
        r = req()
        gw = Gateway(
            profiles={"default": MockBackend([
                {"fingerprint": request_fingerprint(r), "response_text": '{"x": 1}'},
            ])},
            sleep_fn=lambda s: None,
        )
        result = gw.complete_structured(r, AlwaysDict())
        assert result.value == {"x": 1}
        assert result.repairs == 0

    def repair_request(self, base, err_text):
        return PromptRequest(
            model_profile=base.model_profile,
            system=base.system,
            user=(
                base.user
                + "\n\nYour previous reply was rejected: "
                + err_text
                + "\nReply again with only valid JSON in the requested shape."
            ),
            attachments=base.attachments,
            temperature=base.temperature,
            max_output_tokens=base.max_output_tokens,
        )

    def test_repair_round_quotes_error(self):
        r = req()
        bad = '["not an object"]'
        try:
            AlwaysDict().validate(json.loads(bad))
        except ValueError as exc:
            err_text = str(exc)
        repair = self.repair_request(r, err_text)
        gw = Gateway(
            profiles={"default": MockBackend([
                {"fingerprint": request_fingerprint(r), "response_text": bad},
                {"fingerprint": request_fingerprint(repair), "response_text": '{"fixed": true}'},
            ])},
            sleep_fn=lambda s: None,
        )
        result = gw.complete_structured(r, AlwaysDict())
        assert result.value == {"fixed": True}
        assert result.repairs == 1

    def test_gives_up_after_max_repairs(self):
        r = req()
        bad = "garbage"
        try:
            extract_json_payload(bad)
        except ValueError as exc:
            err_text = str(exc)
        repair = self.repair_request(r, err_text)
        gw = Gateway(
            profiles={"default": MockBackend([
                {"fingerprint": request_fingerprint(r), "response_text": bad},
                {"fingerprint": request_fingerprint(repair), "response_text": bad},
            ])},
            sleep_fn=lambda s: None,
        )
        with pytest.raises(StructureInvalidAfterRepair) as err:
            gw.complete_structured(r, AlwaysDict(), max_repairs=1)
        assert err.value.raw_text == bad


class FakeResponse:
    def __init__(self, status_code, payload=None, text=""):
        self.status_code = status_code
        self._payload = payload or {}
        self.text = text

    def json(self):
        return self._payload


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.bodies = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.bodies.append(json)
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


class TestHttpBackend:
    def test_status_mapping(self):
        cases = [
            (429, RateLimited),
            (401, AuthFailure),
            (403, AuthFailure),
            (503, Timeout),
            (418, GatewayError),
        ]
        for status, exc_type in cases:
            backend = HttpBackend(
                "http://llm", model="m", session=FakeSession([FakeResponse(status)])
            )
            with pytest.raises(exc_type):
                backend.complete_raw(req())

    def test_success_and_body_shape(self):
        session = FakeSession([FakeResponse(200, {"text": "reply"})])
        backend = HttpBackend("http://llm", model="m", session=session)
        r = req(attachments=(Attachment("table_text", "a|b"),))
        assert backend.complete_raw(r) == "reply"
        body = session.bodies[0]
        assert body["model"] == "m"
        assert body["system"] == "sys"
        assert body["attachments"] == [{"kind": "table_text", "payload": "a|b"}]

    def test_missing_text_key(self):
        backend = HttpBackend(
            "http://llm", model="m", session=FakeSession([FakeResponse(200, {"oops": 1})])
        )
        with pytest.raises(GatewayError):
            backend.complete_raw(req())

    def test_gateway_retries_http_transients(self):
        session = FakeSession([FakeResponse(503), FakeResponse(200, {"text": "ok"})])
        backend = HttpBackend("http://llm", model="m", session=session)
        gw = Gateway(profiles={"default": backend}, sleep_fn=lambda s: None)
        assert gw.complete(req()).text == "ok"
