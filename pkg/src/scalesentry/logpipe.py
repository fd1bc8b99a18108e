"""Access/error log emission, parsing and labeling.

Access lines follow the combined log layout with the X-Forwarded-For
address appended as the final quoted field::

    10.244.0.1 - - [01/Jan/2024:00:03:00.125 +0000] "GET /admin HTTP/1.1" 404 153 "-" "scalesentry-load/1.0" "203.0.113.9"

Error lines carry a timestamp, a reason and the forwarded address::

    2024/01/01 00:03:02.000 [error] reason="timeout" xff="203.0.113.9"

Both layouts end in a closing quote, so a truncated line never parses.
"""

from __future__ import annotations

import datetime as dt
import heapq
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cluster import Outcome, Tier

EPOCH = dt.datetime(2024, 1, 1, tzinfo=dt.timezone.utc)
PROXY_IP = "10.244.0.1"
USER_AGENT = "scalesentry-load/1.0"
BODY_BYTES = {200: 615, 403: 153, 404: 153, 499: 0, 503: 197}
ERROR_REASONS = {499: "timeout", 503: "connection refused"}
REASON_STATUS = {reason: status for status, reason in ERROR_REASONS.items()}
ABNORMAL_STATUS = frozenset({403, 404})
MONTHS = ("Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec")
_MONTH_NUM = {name: i + 1 for i, name in enumerate(MONTHS)}

_OCTET = r"(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)"
_IP = rf"{_OCTET}\.{_OCTET}\.{_OCTET}\.{_OCTET}"
ACCESS_RE = re.compile(
    rf'^(?P<proxy>{_IP}) - - '
    r'\[(?P<day>\d{2})/(?P<mon>[A-Z][a-z]{2})/(?P<year>\d{4}):'
    r'(?P<hh>\d{2}):(?P<mm>\d{2}):(?P<ss>\d{2})\.(?P<ms>\d{3}) \+0000\] '
    r'"(?P<method>[A-Z]+) (?P<path>/[^ "]*) HTTP/1\.1" '
    r'(?P<status>[1-5]\d\d) (?P<bytes>\d+) '
    r'"-" "(?P<agent>[^"]*)" '
    rf'"(?P<xff>{_IP})"$'
)
ERROR_RE = re.compile(
    r'^(?P<year>\d{4})/(?P<mon>\d{2})/(?P<day>\d{2}) '
    r'(?P<hh>\d{2}):(?P<mm>\d{2}):(?P<ss>\d{2})\.(?P<ms>\d{3}) '
    r'\[error\] reason="(?P<reason>timeout|connection refused)" '
    rf'xff="(?P<xff>{_IP})"$'
)


class Malformed:
    """Marker returned by :func:`parse` for lines that do not match either format."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "MALFORMED"

    def __bool__(self) -> bool:
        return False


MALFORMED = Malformed()


@dataclass(frozen=True, slots=True)
class ParsedLine:
    kind: str  # "access" or "error"
    t: float
    xff_ip: str
    path: str
    status: int
    method: str = "GET"
    proxy_ip: str = PROXY_IP
    body_bytes: int = 0
    agent: str = USER_AGENT
    reason: str = ""


@dataclass(frozen=True, slots=True)
class LabeledRecord:
    xff_ip: str
    path: str
    status: int
    t: float
    label: int
    source: str = "access"


def _ms(t: float) -> int:
    return int(round(t * 1000.0))


def _wallclock(t: float) -> dt.datetime:
    return EPOCH + dt.timedelta(milliseconds=_ms(t))


def _seconds(year: int, month: int, day: int, hh: int, mm: int, ss: int, ms: int) -> float:
    moment = dt.datetime(year, month, day, hh, mm, ss, tzinfo=dt.timezone.utc)
    whole = (moment - EPOCH) // dt.timedelta(seconds=1)
    return (whole * 1000 + ms) / 1000.0


def format_access(t: float, xff_ip: str, path: str, status: int, method: str = "GET",
                  proxy_ip: str = PROXY_IP, body_bytes: int | None = None,
                  agent: str = USER_AGENT) -> str:
    w = _wallclock(t)
    size = BODY_BYTES.get(status, 0) if body_bytes is None else body_bytes
    stamp = (f"{w.day:02d}/{MONTHS[w.month - 1]}/{w.year:04d}:"
             f"{w.hour:02d}:{w.minute:02d}:{w.second:02d}.{w.microsecond // 1000:03d} +0000")
    return (f'{proxy_ip} - - [{stamp}] "{method} {path} HTTP/1.1" {status} {size} '
            f'"-" "{agent}" "{xff_ip}"')


def format_error(t: float, xff_ip: str, reason: str) -> str:
    w = _wallclock(t)
    return (f"{w.year:04d}/{w.month:02d}/{w.day:02d} "
            f"{w.hour:02d}:{w.minute:02d}:{w.second:02d}.{w.microsecond // 1000:03d} "
            f'[error] reason="{reason}" xff="{xff_ip}"')


def format_parsed(p: ParsedLine) -> str:
    """Inverse of :func:`parse` for well-formed lines."""
    if p.kind == "error":
        return format_error(p.t, p.xff_ip, p.reason)
    return format_access(p.t, p.xff_ip, p.path, p.status, p.method, p.proxy_ip,
                         p.body_bytes, p.agent)


def corrupt(line: str, rng: np.random.Generator) -> str:
    """Truncate ``line`` at a random offset strictly inside it."""
    return line[: int(rng.integers(0, len(line)))]


def emit(outcome: Outcome, malformed_log_rate: float = 0.0,
         rng: np.random.Generator | None = None) -> tuple[str, str | None, bool]:
    """Render one outcome as ``(access_line, error_line_or_None, corrupted)``."""
    req = outcome.request
    access = format_access(outcome.t_complete, req.source_ip, req.path, outcome.status)
    error = None
    if outcome.status in ERROR_REASONS:
        error = format_error(outcome.t_complete, req.source_ip, ERROR_REASONS[outcome.status])
    corrupted = False
    if malformed_log_rate > 0 and rng is not None and rng.random() < malformed_log_rate:
        access = corrupt(access, rng)
        corrupted = True
    return access, error, corrupted


def _parse_access(m: re.Match) -> ParsedLine | Malformed:
    month = _MONTH_NUM.get(m["mon"])
    if month is None:
        return MALFORMED
    try:
        t = _seconds(int(m["year"]), month, int(m["day"]), int(m["hh"]), int(m["mm"]),
                     int(m["ss"]), int(m["ms"]))
    except ValueError:
        return MALFORMED
    return ParsedLine("access", t, m["xff"], m["path"], int(m["status"]), m["method"],
                      m["proxy"], int(m["bytes"]), m["agent"])


def _parse_error(m: re.Match) -> ParsedLine | Malformed:
    try:
        t = _seconds(int(m["year"]), int(m["mon"]), int(m["day"]), int(m["hh"]), int(m["mm"]),
                     int(m["ss"]), int(m["ms"]))
    except ValueError:
        return MALFORMED
    reason = m["reason"]
    return ParsedLine("error", t, m["xff"], "-", REASON_STATUS[reason], reason=reason)


def parse(line: str | bytes) -> ParsedLine | Malformed:
    if isinstance(line, (bytes, bytearray)):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            return MALFORMED
    if not isinstance(line, str):
        return MALFORMED
    line = line.rstrip("\n")
    m = ACCESS_RE.match(line)
    if m is not None:
        return _parse_access(m)
    m = ERROR_RE.match(line)
    if m is not None:
        return _parse_error(m)
    return MALFORMED


def label_of(p: ParsedLine) -> int:
    if p.kind == "error":
        return 1
    return 1 if p.status in ABNORMAL_STATUS else 0


def to_record(p: ParsedLine) -> LabeledRecord:
    return LabeledRecord(p.xff_ip, p.path, p.status, p.t, label_of(p), p.kind)


def _records(lines: Iterable[str], kind: str) -> list[LabeledRecord]:
    out = []
    for line in lines:
        p = parse(line)
        if p and p.kind == kind:
            out.append(to_record(p))
    return out


def _by_t(record: LabeledRecord) -> float:
    return record.t


def preprocess(access_lines: Iterable[str], error_lines: Iterable[str]) -> list[LabeledRecord]:
    """Parse, drop malformed lines, label, and merge both logs ordered by time."""
    access = sorted(_records(access_lines, "access"), key=_by_t)
    errors = sorted(_records(error_lines, "error"), key=_by_t)
    return list(heapq.merge(access, errors, key=_by_t))


class LogBook:
    """In-memory log files of one run, with an incremental parse cache."""

    def __init__(self, malformed_log_rate: float = 0.0, rng: np.random.Generator | None = None):
        self.malformed_log_rate = malformed_log_rate
        self.rng = rng
        self.access: list[str] = []
        self.error: list[str] = []
        self.honeypot: list[str] = []
        self.corrupted = 0
        self._access_records: list[LabeledRecord] = []
        self._error_records: list[LabeledRecord] = []
        self._parsed_access = 0
        self._parsed_error = 0

    def write(self, outcome: Outcome) -> None:
        if outcome.tier is Tier.HONEYPOT:
            access, error, _ = emit(outcome)
            self.honeypot.append(access)
            return
        access, error, corrupted = emit(outcome, self.malformed_log_rate, self.rng)
        self.access.append(access)
        self.corrupted += corrupted
        if error is not None:
            self.error.append(error)

    def write_all(self, outcomes: Sequence[Outcome]) -> None:
        for outcome in outcomes:
            self.write(outcome)

    def records(self) -> list[LabeledRecord]:
        """Service-route records emitted so far, equivalent to ``preprocess(access, error)``."""
        self._access_records.extend(_records(self.access[self._parsed_access:], "access"))
        self._parsed_access = len(self.access)
        self._error_records.extend(_records(self.error[self._parsed_error:], "error"))
        self._parsed_error = len(self.error)
        return list(heapq.merge(sorted(self._access_records, key=_by_t),
                                sorted(self._error_records, key=_by_t), key=_by_t))

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name, lines in (("access.log", self.access), ("error.log", self.error),
                            ("honeypot.log", self.honeypot)):
            with open(directory / name, "w", encoding="utf-8", newline="\n") as fh:
                for line in lines:
                    fh.write(line)
                    fh.write("\n")
