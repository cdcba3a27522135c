import os

import pytest
from hypothesis import given, strategies as st

from itect import corpus
from itect.errors import DataError


def _make_files(root, names, content=b"hello"):
    for name in names:
        (root / name).write_bytes(content + name.encode())


class TestScanDirectory:
    def test_three_files(self, tmp_path):
        _make_files(tmp_path, ["a.bin", "b.bin", "c.bin"])
        m = corpus.scan_directory(tmp_path, "malware", "packed")
        assert len(m) == 3
        assert all(e.label == "malware" for e in m)
        assert all(e.size_bytes == len(b"hello") + 5 for e in m)

    def test_empty_dir(self, tmp_path):
        m = corpus.scan_directory(tmp_path, "benign", "benign")
        assert len(m) == 0

    def test_unreadable_file_skipped_with_diagnostic(self, tmp_path, monkeypatch):
        _make_files(tmp_path, ["a", "b", "c", "d"])
        bad = str(tmp_path / "c")
        real_digest = corpus.file_digest

        def flaky_digest(path):
            if str(path) == bad:
                raise OSError("permission denied")
            return real_digest(path)

        monkeypatch.setattr(corpus, "file_digest", flaky_digest)
        diags = []
        m = corpus.scan_directory(tmp_path, "benign", "benign", diags)
        assert len(m) == 3
        assert len(diags) == 1 and "c" in diags[0]

    def test_missing_root(self, tmp_path):
        with pytest.raises(DataError):
            corpus.scan_directory(tmp_path / "nope", "benign", "benign")

    def test_digest_stability(self, tmp_path):
        _make_files(tmp_path, ["a", "b"])
        m1 = corpus.scan_directory(tmp_path, "benign", "benign")
        m2 = corpus.scan_directory(tmp_path, "benign", "benign")
        assert [e.digest for e in m1] == [e.digest for e in m2]


def _manifest(n_malware, n_benign):
    entries = []
    for i in range(n_malware):
        entries.append(
            corpus.ManifestEntry(
                path=f"m{i}", label="malware", category="polymorphic",
                split="train", size_bytes=10, digest=f"{i:064x}",
            )
        )
    for i in range(n_benign):
        entries.append(
            corpus.ManifestEntry(
                path=f"b{i}", label="benign", category="benign",
                split="train", size_bytes=10, digest=f"{i + 10000:064x}",
            )
        )
    return corpus.CorpusManifest(entries=tuple(entries), split_pending=True)


class TestSplitManifest:
    def test_two_thirds_of_300_per_label(self):
        m = corpus.split_manifest(_manifest(300, 300), 2 / 3, seed=7)
        train = m.by_split("train")
        assert sum(e.label == "malware" for e in train) == 200
        assert sum(e.label == "benign" for e in train) == 200

    def test_two_files_per_label_half(self):
        m = corpus.split_manifest(_manifest(2, 2), 0.5, seed=1)
        for label in ("malware", "benign"):
            group = [e for e in m if e.label == label]
            assert sum(e.split == "train" for e in group) == 1
            assert sum(e.split != "train" for e in group) == 1

    def test_deterministic(self):
        a = corpus.split_manifest(_manifest(30, 30), 2 / 3, seed=42)
        b = corpus.split_manifest(_manifest(30, 30), 2 / 3, seed=42)
        assert [(e.path, e.split) for e in a] == [(e.path, e.split) for e in b]

    def test_partition_and_stratification(self):
        m = corpus.split_manifest(_manifest(100, 50), 0.6, seed=3)
        assert len(m) == 150
        assert len({e.path for e in m}) == 150
        for label, total in (("malware", 100), ("benign", 50)):
            group = [e for e in m if e.label == label]
            n_train = sum(e.split == "train" for e in group)
            assert abs(n_train - 0.6 * total) <= 1

    def test_too_few_files(self):
        with pytest.raises(DataError, match="malware"):
            corpus.split_manifest(_manifest(1, 10), 0.5, seed=0)

    def test_bad_fraction(self):
        with pytest.raises(DataError):
            corpus.split_manifest(_manifest(10, 10), 1.5, seed=0)


class TestHexdump:
    def test_basic(self):
        assert corpus.hexdump_to_bytes("00000000 4D 5A 90") == bytes([0x4D, 0x5A, 0x90])

    def test_question_marks_decode_to_zero(self):
        data = corpus.hexdump_to_bytes("00000000 4D ?? 90")
        assert data == bytes([0x4D, 0x00, 0x90])
        # independent oracle decoder
        expect = bytearray()
        for tok in "4D ?? 90".split():
            expect.append(0 if tok == "??" else int(tok, 16))
        assert data == bytes(expect)

    def test_empty_input(self):
        assert corpus.hexdump_to_bytes("") == b""

    def test_malformed_pair_names_line(self):
        text = "00000000 4D 5A\n00000002 4G"
        with pytest.raises(DataError, match="line 2"):
            corpus.hexdump_to_bytes(text)

    def test_non_monotone_offset(self):
        text = "00000000 4D 5A\n00000001 01"
        with pytest.raises(DataError, match="offset"):
            corpus.hexdump_to_bytes(text)

    def test_colon_offsets_accepted(self):
        assert corpus.hexdump_to_bytes("00000000: 01 02") == b"\x01\x02"

    @given(st.binary(min_size=0, max_size=200))
    def test_round_trip(self, data):
        assert corpus.hexdump_to_bytes(corpus.bytes_to_hexdump(data)) == data


class TestManifestIO:
    def test_jsonl_round_trip(self, tmp_path):
        m = _manifest(3, 2)
        path = tmp_path / "m.jsonl"
        m.save(path)
        loaded = corpus.CorpusManifest.load(path)
        assert loaded.entries == m.entries

    def test_duplicate_paths_rejected(self):
        e = _manifest(1, 0).entries[0]
        with pytest.raises(DataError):
            corpus.CorpusManifest(entries=(e, e))

    def test_bad_label_rejected(self):
        with pytest.raises(DataError):
            corpus.ManifestEntry(
                path="x", label="weird", category="benign",
                split="train", size_bytes=1, digest="0" * 64,
            )
