"""Content pipeline: transcript fragmentation, entity-linking client, topic ranking.

Transcripts are cut into fixed-size fragments, each fragment is annotated with
Wikipedia concepts by an external entity-linking HTTP service (responses are
cached on disk so a corpus pass survives partial runs), and the concepts are
ranked by a weighted combination of PageRank and cosine similarity.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    DataError,
    MalformedResponseError,
    ServiceError,
    ServiceUnreachableError,
)

DEFAULT_FRAGMENT_LEN = 5000
DEFAULT_PAGERANK_WEIGHT = 0.4
DEFAULT_COSINE_WEIGHT = 0.6
DEFAULT_CHAR_LIMIT = 25_000


@dataclass(frozen=True)
class KnowledgeComponent:
    kc_id: int
    title: str
    page_url: str = ""


@dataclass(frozen=True)
class TopicScore:
    kc: KnowledgeComponent
    pagerank: float
    cosine: float

    def __post_init__(self) -> None:
        for name, score in (("pagerank", self.pagerank), ("cosine", self.cosine)):
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"{name} score out of [0, 1]: {score}")


@dataclass(frozen=True)
class FragmentAnnotation:
    lecture_id: str
    fragment_index: int
    char_span: tuple[int, int]
    topics: tuple[TopicScore, ...]


def fragment_transcript(text: str, target_len: int = DEFAULT_FRAGMENT_LEN) -> list[tuple[int, int]]:
    """Cut ``text`` into contiguous [start, end) spans of ``target_len`` chars.

    Every span except possibly the last has exactly ``target_len`` characters;
    the final remainder is kept whatever its size. The spans partition the
    text exactly.
    """
    if target_len < 1000:
        raise ValueError(f"target_len must be >= 1000, got {target_len}")
    if not text:
        raise DataError("cannot fragment an empty transcript")
    spans = []
    start = 0
    while start < len(text):
        end = min(start + target_len, len(text))
        spans.append((start, end))
        start = end
    return spans


def combined_rank_score(score: TopicScore, w_pr: float, w_cos: float) -> float:
    return w_pr * score.pagerank + w_cos * score.cosine


def rank_topics(scores: list[TopicScore], k: int,
                w_pr: float = DEFAULT_PAGERANK_WEIGHT,
                w_cos: float = DEFAULT_COSINE_WEIGHT) -> list[TopicScore]:
    """Top ``k`` topics by ``w_pr * pagerank + w_cos * cosine``.

    Ties are broken by kc_id ascending so the ordering is deterministic.
    Downstream features carry only the cosine value of the survivors.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if w_pr < 0.0 or w_cos < 0.0 or w_pr + w_cos <= 0.0:
        raise ValueError(f"invalid ranking weights: {w_pr}, {w_cos}")
    ordered = sorted(
        scores,
        key=lambda s: (-combined_rank_score(s, w_pr, w_cos), s.kc.kc_id),
    )
    return ordered[:k]


class Vocabulary:
    """Stable title -> kc_id assignment, persisted as TSV.

    Ids are handed out in first-seen order over a corpus pass, so identical
    titles map to identical ids across runs as long as the same vocabulary
    file is reused.
    """

    def __init__(self) -> None:
        self._by_title: dict[str, KnowledgeComponent] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._by_title)

    def __contains__(self, title: str) -> bool:
        return title in self._by_title

    def get_or_assign(self, title: str, page_url: str = "") -> KnowledgeComponent:
        with self._lock:
            kc = self._by_title.get(title)
            if kc is None:
                kc = KnowledgeComponent(len(self._by_title), title, page_url)
                self._by_title[title] = kc
            return kc

    def components(self) -> list[KnowledgeComponent]:
        return sorted(self._by_title.values(), key=lambda kc: kc.kc_id)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for kc in self.components():
                fh.write(f"{kc.kc_id}\t{kc.title}\t{kc.page_url}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        vocab = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                kc_id, title, page_url = line.split("\t")
                if int(kc_id) != len(vocab._by_title):
                    raise DataError(f"vocabulary ids not contiguous at {kc_id}")
                vocab._by_title[title] = KnowledgeComponent(int(kc_id), title, page_url)
        return vocab


def fragment_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class AnnotationCache:
    """Append-only line-delimited JSON store with a sidecar offset index.

    Records are ``{hash, lecture_id, fragment_index, response}`` keyed by the
    content hash of the fragment text. A hit never re-contacts the service.
    Writes are serialized behind a lock; reads go through byte offsets.
    """

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        self.index_path = Path(str(path) + ".idx")
        self._offsets: dict[str, int] = {}
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.touch(exist_ok=True)
        if not self._load_index():
            self._rebuild_index()

    def _load_index(self) -> bool:
        if not self.index_path.exists():
            return False
        size = self.path.stat().st_size
        offsets: dict[str, int] = {}
        try:
            with open(self.index_path, encoding="utf-8") as fh:
                for line in fh:
                    entry = json.loads(line)
                    if entry["offset"] >= size:
                        return False
                    offsets[entry["hash"]] = entry["offset"]
        except (json.JSONDecodeError, KeyError, OSError):
            return False
        self._offsets = offsets
        return True

    def _rebuild_index(self) -> None:
        self._offsets = {}
        with open(self.path, "rb") as fh:
            offset = 0
            for raw in fh:
                if raw.endswith(b"\n"):  # a trailing partial line is dropped
                    try:
                        record = json.loads(raw)
                        self._offsets[record["hash"]] = offset
                    except (json.JSONDecodeError, KeyError):
                        pass
                offset += len(raw)
        with open(self.index_path, "w", encoding="utf-8") as fh:
            for key, off in self._offsets.items():
                fh.write(json.dumps({"hash": key, "offset": off}) + "\n")

    def __len__(self) -> int:
        return len(self._offsets)

    def __contains__(self, key: str) -> bool:
        return key in self._offsets

    def get(self, key: str) -> dict | None:
        offset = self._offsets.get(key)
        if offset is None:
            return None
        with self._lock, open(self.path, "rb") as fh:
            fh.seek(offset)
            return json.loads(fh.readline())

    def put(self, record: dict) -> None:
        key = record["hash"]
        line = json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n"
        with self._lock:
            if key in self._offsets:
                return
            with open(self.path, "a", encoding="utf-8") as fh:
                offset = fh.tell()
                fh.write(line)
            with open(self.index_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"hash": key, "offset": offset}) + "\n")
            self._offsets[key] = offset


class TokenBucket:
    """Blocking token bucket; ``rate`` tokens per second, burst of ``capacity``."""

    def __init__(self, rate: float, capacity: int | None = None) -> None:
        self.rate = float(rate)
        self.capacity = float(capacity if capacity is not None else max(1.0, rate))
        self._tokens = self.capacity
        self._stamp = time.monotonic()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._stamp) * self.rate)
                self._stamp = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            time.sleep(wait)


class AnnotationClient:
    """HTTP client for the entity-linking service.

    Sends the fragment text with a language code, expects a JSON body with an
    ``annotations`` array whose entries carry at least ``title``, ``pageRank``
    and ``cosine`` (extra fields are kept as-received in the cache record).
    """

    def __init__(self, endpoint: str, api_key: str | None = None,
                 language: str = "en", char_limit: int = DEFAULT_CHAR_LIMIT,
                 timeout: float = 60.0, max_retries: int = 3,
                 retry_backoff: float = 0.5,
                 rate_limiter: TokenBucket | None = None) -> None:
        self.endpoint = endpoint
        self.api_key = api_key
        self.language = language
        self.char_limit = char_limit
        self.timeout = timeout
        self.max_retries = max_retries
        self.retry_backoff = retry_backoff
        self.rate_limiter = rate_limiter

    def annotate(self, text: str) -> dict:
        if not text:
            raise DataError("cannot annotate empty fragment text")
        if len(text) > self.char_limit:
            raise DataError(
                f"fragment of {len(text)} chars exceeds the service limit "
                f"of {self.char_limit}")
        payload = json.dumps({
            "text": text,
            "lang": self.language,
            "userKey": self.api_key or "",
        }).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint, data=payload,
            headers={"Content-Type": "application/json"}, method="POST")
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if self.rate_limiter is not None:
                self.rate_limiter.acquire()
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                    body = resp.read()
                break
            except urllib.error.HTTPError as exc:
                if exc.code < 500:  # client-side problem, retrying won't help
                    raise ServiceError(
                        f"annotation service rejected the request: {exc}") from exc
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.retry_backoff * (2 ** attempt))
            except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.retry_backoff * (2 ** attempt))
        else:
            raise ServiceUnreachableError(
                f"annotation service unreachable after {self.max_retries + 1} "
                f"attempts: {last_error}")
        try:
            response = json.loads(body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedResponseError(f"non-JSON service response: {exc}") from exc
        if not isinstance(response, dict) or "annotations" not in response:
            raise MalformedResponseError("service response lacks 'annotations'")
        return response


def extract_topic_scores(response: dict, vocab: Vocabulary) -> list[TopicScore]:
    """Pull TopicScore entries out of a raw service response.

    Tolerates unknown extra fields per annotation; missing or out-of-range
    pagerank/cosine values are a malformed response.
    """
    scores = []
    for entry in response.get("annotations", []):
        if not isinstance(entry, dict) or "title" not in entry:
            raise MalformedResponseError(f"annotation entry lacks a title: {entry!r}")
        pagerank = entry.get("pageRank", entry.get("pagerank"))
        cosine = entry.get("cosine")
        if pagerank is None or cosine is None:
            raise MalformedResponseError(
                f"annotation for {entry['title']!r} lacks pageRank/cosine")
        kc = vocab.get_or_assign(str(entry["title"]), str(entry.get("url", "")))
        try:
            scores.append(TopicScore(kc, float(pagerank), float(cosine)))
        except (TypeError, ValueError) as exc:
            raise MalformedResponseError(
                f"bad scores for {entry['title']!r}: {exc}") from exc
    return scores


def annotate_fragment(text: str, client: AnnotationClient, cache: AnnotationCache,
                      lecture_id: str = "", fragment_index: int = 0) -> dict:
    """Raw service response for a fragment, served from the cache when possible."""
    if not text:
        raise DataError("cannot annotate empty fragment text")
    key = fragment_hash(text)
    record = cache.get(key)
    if record is not None:
        return record["response"]
    response = client.annotate(text)
    cache.put({
        "hash": key,
        "lecture_id": lecture_id,
        "fragment_index": fragment_index,
        "response": response,
    })
    return response


def annotate_lecture(lecture_id: str, transcript: str, client: AnnotationClient,
                     cache: AnnotationCache, vocab: Vocabulary, k: int,
                     w_pr: float = DEFAULT_PAGERANK_WEIGHT,
                     w_cos: float = DEFAULT_COSINE_WEIGHT,
                     target_len: int = DEFAULT_FRAGMENT_LEN) -> list[FragmentAnnotation]:
    """Fragment a transcript and produce ranked top-k annotations per fragment."""
    annotations = []
    for index, (start, end) in enumerate(fragment_transcript(transcript, target_len)):
        response = annotate_fragment(
            transcript[start:end], client, cache, lecture_id, index)
        topics = rank_topics(extract_topic_scores(response, vocab), k, w_pr, w_cos)
        annotations.append(FragmentAnnotation(
            lecture_id, index, (start, end), tuple(topics)))
    return annotations


def annotation_to_json(annotation: FragmentAnnotation) -> str:
    return json.dumps({
        "lecture_id": annotation.lecture_id,
        "fragment_index": annotation.fragment_index,
        "char_span": list(annotation.char_span),
        "topics": [
            {"kc_id": t.kc.kc_id, "title": t.kc.title, "page_url": t.kc.page_url,
             "pagerank": t.pagerank, "cosine": t.cosine}
            for t in annotation.topics
        ],
    }, ensure_ascii=False)


def annotation_from_json(line: str) -> FragmentAnnotation:
    try:
        raw = json.loads(line)
        topics = tuple(
            TopicScore(
                KnowledgeComponent(int(t["kc_id"]), t["title"], t.get("page_url", "")),
                float(t["pagerank"]), float(t["cosine"]))
            for t in raw["topics"]
        )
        return FragmentAnnotation(
            lecture_id=raw["lecture_id"],
            fragment_index=int(raw["fragment_index"]),
            char_span=(int(raw["char_span"][0]), int(raw["char_span"][1])),
            topics=topics,
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad annotation line: {line[:120]!r} ({exc})") from exc


def write_annotations(path: str | Path, annotations: list[FragmentAnnotation]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for annotation in annotations:
            fh.write(annotation_to_json(annotation) + "\n")


def read_annotations(path: str | Path) -> list[FragmentAnnotation]:
    annotations = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                annotations.append(annotation_from_json(line))
    return annotations


def read_transcripts(directory: str | Path) -> dict[str, str]:
    """Map lecture_id -> transcript text from ``*.txt`` files in a directory."""
    directory = Path(directory)
    transcripts = {}
    for path in sorted(directory.glob("*.txt")):
        transcripts[path.stem] = path.read_text(encoding="utf-8")
    if not transcripts:
        raise DataError(f"no *.txt transcripts found under {directory}")
    return transcripts


def require_api_key(env_var: str, cache: AnnotationCache,
                    texts: list[str]) -> str | None:
    """Fetch the service key from the environment if any fragment is uncached."""
    missing = [t for t in texts if fragment_hash(t) not in cache]
    if not missing:
        return None
    key = os.environ.get(env_var)
    if not key:
        raise DataError(
            f"{len(missing)} fragments are not cached and the API key "
            f"environment variable {env_var!r} is not set")
    return key
