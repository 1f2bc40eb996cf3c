import hashlib

import numpy as np
import pytest

from benchgap.embed import (
    EmbeddingClient,
    EmbeddingMatrix,
    fetch_embeddings,
    load_embeddings,
    save_embeddings,
)
from benchgap.errors import EmbedError, StoreError


def scripted_vector(text: str) -> list[float]:
    # 4-dim vector derived from the text, stable across calls
    h = hashlib.sha256(text.encode()).digest()
    return [b / 255.0 for b in h[:4]]


def make_client(api, **kwargs) -> EmbeddingClient:
    defaults = dict(url=api.embed_url, encoder_tag="test-encoder", backoff_base=0.01, timeout=5.0)
    defaults.update(kwargs)
    return EmbeddingClient(**defaults)


def test_empty_input_makes_no_network_call(mock_api):
    api = mock_api(embed_fn=scripted_vector)
    matrix = fetch_embeddings([], make_client(api))
    assert len(matrix) == 0
    assert api.embed_batches == []


def test_scripted_vectors_come_back_in_order(mock_api):
    # server replies with entries reversed; the client must re-sort by index
    api = mock_api(embed_fn=scripted_vector, shuffle_embed_order=True)
    texts = ["alpha", "beta", "gamma"]
    matrix = fetch_embeddings(texts, make_client(api), batch_size=8)
    assert matrix.dimension == 4
    for row, text in zip(matrix.vectors, texts):
        assert np.allclose(row, np.array(scripted_vector(text), dtype=np.float32))


def test_batch_size_does_not_change_results(mock_api):
    api = mock_api(embed_fn=scripted_vector)
    texts = [f"text {i}" for i in range(23)]
    one = fetch_embeddings(texts, make_client(api), batch_size=1)
    big = fetch_embeddings(texts, make_client(api), batch_size=64)
    assert np.array_equal(one.vectors, big.vectors)
    assert one.ids == big.ids


def test_transient_failures_are_retried(mock_api):
    api = mock_api(embed_fn=scripted_vector)
    api.embed_fail_next = 2
    matrix = fetch_embeddings(["x"], make_client(api, max_attempts=5))
    assert len(matrix) == 1


def test_retries_exhausted_raises(mock_api):
    api = mock_api(embed_fn=scripted_vector)
    api.embed_fail_next = 50
    with pytest.raises(EmbedError, match="after 3 attempts"):
        fetch_embeddings(["x"], make_client(api, max_attempts=3))


def test_unreachable_endpoint_raises():
    client = EmbeddingClient(
        url="http://127.0.0.1:1/v1/embeddings", encoder_tag="t", max_attempts=2, backoff_base=0.01, timeout=0.5
    )
    with pytest.raises(EmbedError, match="after 2 attempts"):
        fetch_embeddings(["x"], client)


def test_dimension_mismatch_across_batches(mock_api):
    def uneven(text):
        return [0.0] * (3 if text == "long" else 2)

    api = mock_api(embed_fn=uneven)
    with pytest.raises(EmbedError, match="dimension mismatch"):
        fetch_embeddings(["short", "long"], make_client(api), batch_size=1)


def test_ids_align_with_rows(mock_api):
    api = mock_api(embed_fn=scripted_vector)
    matrix = fetch_embeddings(["a", "b"], make_client(api), ids=["p1", "p2"])
    assert matrix.ids == ["p1", "p2"]


# ---------------------------------------------------------------------------
# Vector store


def random_matrix(n, d, seed=0):
    rng = np.random.default_rng(seed)
    return EmbeddingMatrix(
        ids=[f"p{i}" for i in range(n)],
        vectors=rng.normal(size=(n, d)).astype(np.float32),
        encoder_tag="enc-v1",
    )


def test_store_round_trip_small(tmp_path):
    matrix = random_matrix(3, 4)
    path = tmp_path / "store.bgem"
    save_embeddings(matrix, path)
    loaded = load_embeddings(path)
    assert loaded.ids == matrix.ids
    assert loaded.encoder_tag == "enc-v1"
    assert np.array_equal(loaded.vectors, matrix.vectors)  # bit-exact


def test_store_round_trip_digest(tmp_path):
    matrix = random_matrix(1000, 768, seed=7)
    path = tmp_path / "store.bgem"
    save_embeddings(matrix, path)
    loaded = load_embeddings(path)
    original = hashlib.sha256(matrix.vectors.tobytes()).hexdigest()
    reloaded = hashlib.sha256(loaded.vectors.tobytes()).hexdigest()
    assert original == reloaded


def test_truncated_store_names_byte_counts(tmp_path):
    matrix = random_matrix(10, 8)
    path = tmp_path / "store.bgem"
    save_embeddings(matrix, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) - 17])
    with pytest.raises(StoreError, match=r"expected \d+ bytes, found \d+"):
        load_embeddings(path)


def test_store_rejects_bad_magic(tmp_path):
    path = tmp_path / "store.bgem"
    path.write_bytes(b"NOPE" + b"\x00" * 40)
    with pytest.raises(StoreError, match="magic"):
        load_embeddings(path)


def test_store_rejects_trailing_garbage(tmp_path):
    matrix = random_matrix(2, 2)
    path = tmp_path / "store.bgem"
    save_embeddings(matrix, path)
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(StoreError, match="trailing"):
        load_embeddings(path)


def test_matrix_invariants():
    with pytest.raises(EmbedError, match="non-finite"):
        EmbeddingMatrix(ids=["a"], vectors=np.array([[np.inf]], dtype=np.float32), encoder_tag="t")
    with pytest.raises(EmbedError, match="unique"):
        EmbeddingMatrix(ids=["a", "a"], vectors=np.zeros((2, 2), dtype=np.float32), encoder_tag="t")
    with pytest.raises(EmbedError, match="align"):
        EmbeddingMatrix(ids=["a"], vectors=np.zeros((2, 2), dtype=np.float32), encoder_tag="t")
