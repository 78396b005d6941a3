import hashlib
import json

import pytest
from hypothesis import given, settings, strategies as st

from taskds.errors import EmptyDocument, TaskDSError, UndecodableInput
from taskds.ingest import (
    ArtifactCache,
    Manifest,
    diff_corpus,
    discover_corpus,
    fingerprint,
    load_corpus,
    normalize_document,
    normalize_text,
)


def _pdf(text: str) -> bytes:
    """Smallest PDF with one line of Helvetica text, offsets computed here."""
    stream = f"BT /F1 12 Tf 72 720 Td ({text}) Tj ET".encode()
    objs = [
        b"<< /Type /Catalog /Pages 2 0 R >>",
        b"<< /Type /Pages /Kids [3 0 R] /Count 1 >>",
        b"<< /Type /Page /Parent 2 0 R /MediaBox [0 0 612 792] /Contents 4 0 R "
        b"/Resources << /Font << /F1 5 0 R >> >> >>",
        b"<< /Length %d >>\nstream\n" % len(stream) + stream + b"\nendstream",
        b"<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica >>",
    ]
    out = bytearray(b"%PDF-1.4\n")
    offsets = []
    for n, body in enumerate(objs, 1):
        offsets.append(len(out))
        out += b"%d 0 obj\n" % n + body + b"\nendobj\n"
    xref = len(out)
    out += b"xref\n0 %d\n0000000000 65535 f \n" % (len(objs) + 1)
    for off in offsets:
        out += b"%010d 00000 n \n" % off
    out += b"trailer\n<< /Size %d /Root 1 0 R >>\nstartxref\n%d\n%%%%EOF\n" % (len(objs) + 1, xref)
    return bytes(out)


def test_whitespace_collapse():
    doc = normalize_document(b"A  Title\n\nBody\ttext")
    assert doc.text == "A Title Body text"
    assert doc.title == "A Title"


def test_empty_and_blank_documents_rejected():
    with pytest.raises(EmptyDocument):
        normalize_document(b"")
    with pytest.raises(EmptyDocument):
        normalize_document(b" \n\t\x00 ")


def test_identical_decoded_text_gives_identical_documents():
    a = normalize_document(b"\xef\xbb\xbfHello   world", doc_id="x")
    b = normalize_document(b"Hello world\n", doc_id="x")
    assert a.text == b.text and a.fingerprint == b.fingerprint


def test_nfc_and_control_characters():
    decomposed = "Café\x07 menu".encode()
    assert normalize_document(decomposed).text == "Café menu"


def test_format_mismatch_is_undecodable():
    with pytest.raises(UndecodableInput):
        normalize_document(b"\xff\xfe\xfa")
    with pytest.raises(UndecodableInput):
        normalize_document(b"plain words", "pdf_text")
    with pytest.raises(UndecodableInput):
        normalize_document(_pdf("hi"), "plain_text")


def test_pdf_text_extraction():
    doc = normalize_document(_pdf("We use the COCO dataset"), "pdf_text", doc_id="p")
    assert "We use the COCO dataset" in doc.text


def test_external_title_wins():
    assert normalize_document(b"first line\nsecond", title="Given").title == "Given"


def test_fingerprint_known_vector():
    assert fingerprint("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"


@given(st.text(min_size=1))
def test_fingerprint_matches_reference_sha256(text):
    assert fingerprint(text) == hashlib.sha256(text.encode("utf-8")).hexdigest()


def test_fingerprint_sensitive_to_one_character():
    assert fingerprint("dataset A") != fingerprint("dataset B")


def test_same_text_different_names_same_fingerprint(tmp_path):
    (tmp_path / "one.txt").write_text("same content")
    (tmp_path / "two.txt").write_text("same content")
    docs, rejected = load_corpus([tmp_path])
    assert len(docs) == 1 and not rejected  # second copy dropped as duplicate content
    assert docs[0].fingerprint == fingerprint("same content")


def _docs(*texts):
    return [normalize_document(t.encode(), doc_id=f"d{i}") for i, t in enumerate(texts)]


def test_diff_corpus_cases():
    docs = _docs("alpha", "beta", "gamma")
    m = Manifest()
    assert diff_corpus(m, docs) == docs
    for d in docs:
        m.record(d, "2024-01-01T00:00:00Z")
    assert diff_corpus(m, docs) == []
    m2 = Manifest()
    for d in docs[:2]:
        m2.record(d)
    assert diff_corpus(m2, docs) == [docs[2]]


@settings(max_examples=50)
@given(st.lists(st.text(alphabet="abc ", min_size=1, max_size=6), max_size=8), st.data())
def test_diff_corpus_partition(texts, data):
    docs = []
    for i, t in enumerate(texts):
        try:
            docs.append(normalize_document(t.encode(), doc_id=f"d{i}"))
        except EmptyDocument:
            pass
    known = data.draw(st.lists(st.sampled_from(docs), unique_by=lambda d: d.doc_id) if docs else st.just([]))
    m = Manifest()
    for d in known:
        m.record(d)
    new = diff_corpus(m, docs)
    old = [d for d in docs if d.fingerprint in m]
    assert {d.fingerprint for d in new}.isdisjoint({d.fingerprint for d in old})
    assert sorted(d.doc_id for d in new + old) == sorted(d.doc_id for d in docs)
    assert [d.doc_id for d in new] == [d.doc_id for d in docs if d.fingerprint not in m]


def test_manifest_round_trip_and_first_entry_wins(tmp_path):
    d = _docs("x")[0]
    m = Manifest()
    m.record(d, "2024-01-01T00:00:00Z")
    m.record(d, "2025-01-01T00:00:00Z")
    assert len(m) == 1
    m.save(tmp_path / "manifest.json")
    back = Manifest.load(tmp_path / "manifest.json")
    assert back == m
    assert json.loads((tmp_path / "manifest.json").read_text())[d.fingerprint]["processed_at"] == "2024-01-01T00:00:00Z"


def test_manifest_rejects_non_hex_keys():
    with pytest.raises(TaskDSError):
        Manifest.from_dict({"nothex": {"doc_id": "a", "source_path": "", "processed_at": ""}})


def test_manifest_idempotent_over_reruns(tmp_path):
    (tmp_path / "a.txt").write_text("doc a")
    (tmp_path / "b.txt").write_text("doc b")
    def run():
        m = Manifest()
        for d in load_corpus([tmp_path])[0]:
            m.record(d, "2024-01-01T00:00:00Z")
        return m.to_dict()
    assert run() == run()


def test_cache_round_trip_and_miss(tmp_path):
    cache = ArtifactCache(tmp_path)
    key = fingerprint("k")
    assert cache.get(key, "extraction") is None
    cache.put(key, "extraction", [{"a": 1}])
    assert cache.get(key, "extraction") == [{"a": 1}]
    assert cache.path_for(key, "extraction") == tmp_path / "extraction" / key[:2] / key


def test_cache_corrupt_entry_is_a_miss_with_warning(tmp_path, caplog):
    cache = ArtifactCache(tmp_path)
    key = fingerprint("k")
    cache.put(key, "normalized_text", {"text": "t"})
    path = cache.path_for(key, "normalized_text")
    path.write_bytes(path.read_bytes().replace(b'"t"', b'"u"'))
    assert cache.get(key, "normalized_text") is None
    assert cache.corrupt_hits == 1
    assert "corrupt" in caplog.text
    path.write_bytes(b"\x00garbage")
    assert cache.get(key, "normalized_text") is None


def test_corrupt_cache_does_not_stop_loading(tmp_path):
    corpus = tmp_path / "c"
    corpus.mkdir()
    (corpus / "a.txt").write_text("Title\nbody")
    cache = ArtifactCache(tmp_path / "cache")
    first = load_corpus([corpus], cache)[0]
    for p in (tmp_path / "cache").rglob("*"):
        if p.is_file():
            p.write_text("{broken")
    again = load_corpus([corpus], cache)[0]
    assert again == first


def test_discover_directory_and_listing(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "sub" / "x.txt").write_text("x")
    (tmp_path / "y.txt").write_text("y")
    (tmp_path / "skip.md").write_text("z")
    found = discover_corpus([tmp_path])
    assert [d for _, d in found] == ["sub/x", "y"]
    listing = tmp_path / "list.lst"
    listing.write_text("# comment\ny.txt\n\nsub/x.txt\n")
    assert [d for _, d in discover_corpus([listing])] == ["y", "x"]


def test_discover_duplicate_ids_rejected(tmp_path):
    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    (tmp_path / "a" / "x.txt").write_text("1")
    (tmp_path / "b" / "x.txt").write_text("2")
    with pytest.raises(TaskDSError):
        discover_corpus([tmp_path / "a", tmp_path / "b"])


def test_rejected_documents_reported(tmp_path):
    (tmp_path / "empty.txt").write_text("   ")
    (tmp_path / "ok.txt").write_text("fine")
    docs, rejected = load_corpus([tmp_path])
    assert [d.doc_id for d in docs] == ["ok"]
    assert rejected and "EmptyDocument" in rejected[0][1]


def test_warm_cache_is_transparent(tmp_path):
    (tmp_path / "c").mkdir()
    (tmp_path / "c" / "a.txt").write_text("Title\n\n  body  text ")
    cold = load_corpus([tmp_path / "c"], ArtifactCache(tmp_path / "cache"))[0]
    warm = load_corpus([tmp_path / "c"], ArtifactCache(tmp_path / "cache"))[0]
    assert cold == warm
    assert normalize_text(" a   b ") == "a b"
