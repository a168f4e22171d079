"""Deterministic synthetic Cowrie corpus generator.

Produces honeypot-shaped session streams (connect, login attempts, commands,
close) and the matching QA labels.  Gold answers come from the rule-based
lexer so labels are reproducible and auditable.  Every random draw goes
through a per-session ``random.Random`` seeded from ``(seed, session_index)``,
so a session can be regenerated in isolation and the output is identical
across runs and platforms.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple

from . import lexer
from .schema import CowrieEvent, format_timestamp, parse_timestamp, serialize_event

log = logging.getLogger(__name__)

REFERENCE_SPLIT_SIZES = (32801, 3645, 999)


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class UtilitySpec:
    name: str
    weight: float
    templates: Tuple[str, ...]


# (name, argument templates); order is popularity rank for the Zipf weights.
# Placeholders look like @url@ so that awk/sed bodies with braces stay literal.
_VOCAB_TABLE: Tuple[Tuple[str, Tuple[str, ...]], ...] = (
    ("uname", ("-a", "-r", "-m", "-s -v -n -r", "")),
    ("cat", ("/proc/cpuinfo", "/etc/passwd", "/proc/meminfo", "@path@", "/etc/issue", "/etc/shadow")),
    ("wget", ("@url@", "-q @url@", "-O @path@ @url@", "--no-check-certificate @url@")),
    ("echo", ('"@word@"', "@hex@", "-e '\\x@byte@\\x@byte@'", '"root:@password@"', "-n @word@")),
    ("cd", ("@dir@", "/", "~", "@dir@/@file@")),
    ("chmod", ("+x @file@", "777 @path@", "+x @path@", "-R 755 @dir@")),
    ("curl", ("-O @url@", "-s @url@", "-fsSL @url@", "-o @path@ @url@")),
    ("@exec@", ("", "@word@", "-o @host@:@port@", "&")),
    ("rm", ("-rf @path@", "-f @file@", "-rf @dir@/*", "-rf ~/.bash_history")),
    ("ls", ("-la", "-lh @dir@", "", "/", "-la /dev/shm")),
    ("sh", ("@file@", "@path@", "-c 'cd /tmp; ./@file@'", "-c '@word@ @word@'")),
    ("ps", ("aux", "-ef", "x", "-o pid,cmd")),
    ("free", ("-m", "-g", "-h", "")),
    ("whoami", ("",)),
    ("id", ("", "-u", "@user@")),
    ("tftp", ("-g -r @file@ @ip@", "@ip@ -c get @file@")),
    ("busybox", ("@applet@", "wget @url@", "tftp -g -r @file@ @ip@")),
    ("grep", ("-c ^processor /proc/cpuinfo", "name /proc/cpuinfo", "@word@ @path@", "-v @word@")),
    ("tar", ("xvf @file@.tgz", "xzf @file@.tar.gz", "-czf @file@.tgz @dir@")),
    ("bash", ("@path@", "-i", "-c 'echo @word@'", "@file@.sh")),
    ("crontab", ("-l", "-r", "@path@")),
    ("w", ("",)),
    ("nproc", ("",)),
    ("history", ("-c", "")),
    ("top", ("-bn1", "")),
    ("passwd", ("", "@user@")),
    ("netstat", ("-tulpn", "-an", "-plnt")),
    ("ifconfig", ("", "eth0")),
    ("awk", ("'{print $1}'", "-F: '{print $1}' /etc/passwd", "'/MemTotal/ {print $2}' /proc/meminfo")),
    ("head", ("-n 1", "-c 64 @path@", "-n 10 /etc/passwd")),
    ("kill", ("-9 @num@", "@num@")),
    ("pkill", ("-f @word@", "-9 @word@")),
    ("nc", ("@ip@ @port@", "-lvp @port@", "-e /bin/sh @ip@ @port@")),
    ("python", ("-c 'import os'", "@file@.py", "-V")),
    ("perl", ("@file@.pl", "-e 'print 1'")),
    ("ssh", ("@user@@@ip@", "-p @port@ @user@@@ip@")),
    ("useradd", ("-m @user@", "@user@")),
    ("mkdir", ("-p @dir@/@file@", "@file@", ".@file@")),
    ("cp", ("@path@ @path@", "/bin/busybox @path@", "/bin/echo .s")),
    ("mv", ("@path@ @path@", "@file@ .@file@")),
    ("dd", ("if=/dev/zero of=@path@ bs=1M count=1", "bs=52 count=1 if=/bin/ls")),
    ("base64", ("-d", "@path@")),
    ("chattr", ("-i @path@", "+i @path@", "-ia /etc/passwd")),
    ("killall", ("-9 @word@", "@word@")),
    ("df", ("-h", "")),
    ("hostname", ("", "-I")),
    ("touch", ("@path@",)),
    ("pwd", ("",)),
    ("export", ("PATH=$PATH:@dir@", "HISTFILE=/dev/null", "HISTSIZE=0")),
    ("unset", ("HISTFILE", "HISTSIZE", "HISTORY")),
    ("systemctl", ("stop firewalld", "disable iptables", "status sshd")),
    ("service", ("iptables stop", "sshd restart")),
    ("iptables", ("-F", "-A INPUT -s @ip@ -j DROP", "-L")),
    ("last", ("", "-n 10")),
    ("yum", ("install -y @pkg@",)),
    ("apt-get", ("install -y @pkg@", "update")),
    ("mount", ("", "-o remount,rw /")),
    ("dmesg", ("",)),
    ("uptime", ("",)),
    ("which", ("@pkg@", "wget curl")),
    ("lsb_release", ("-a",)),
    ("lscpu", ("",)),
    ("xmrig", ("-o @host@:@port@ -u @hex@",)),
    ("sed", ("-i 's/@word@/@word@/g' @path@", "-n 1p @path@")),
)

DEFAULT_WRAPPERS = ("sudo", "nohup", "busybox", "time", "exec")
DEFAULT_SEPARATORS = ((";", 5.0), ("&&", 3.0), ("||", 1.0), ("|", 2.0))
_BIN_DIRS = ("/bin/", "/usr/bin/", "/sbin/", "/usr/sbin/", "/usr/local/bin/")
_ENV_PREFIXES = ("HISTFILE=/dev/null", "LC_ALL=C", "PATH=/tmp:$PATH", "TERM=xterm")
_REDIRECTS = ("> /dev/null", "2>&1", ">/dev/null 2>&1", ">> @path@", "&", "2>/dev/null")
_DIRS = ("/tmp", "/var/tmp", "/dev/shm", "/root", "/var/run", "/usr/local/bin", "/mnt", "/home/@user@")
_WORDS = ("x", "bot", "miner", "kinsing", "mirai", "dvr", "xmr", "ok", "test", "tsunami", "sora", "okami", "lol")
_PKGS = ("gcc", "perl", "wget", "curl", "python", "screen", "nmap", "git", "make")
_APPLETS = ("ECCHI", "MIRAI", "SORA", "OKIRU", "cat", "ps", "wget", "tftp")
_EXT = ("sh", "x86", "arm7", "mips", "bin", "pl", "py", "")

_ZIPF_EXPONENT = 0.9
_CREDENTIAL_USERS = ("root", "admin", "user", "test", "ubuntu", "pi", "oracle", "postgres", "support", "guest",
                     "ftpuser", "git", "mysql", "nagios", "deploy", "hadoop", "ubnt", "default", "administrator", "vagrant",
                     "jenkins", "www", "centos", "tomcat", "server")
_CREDENTIAL_PASSWORDS = ("123456", "password", "admin", "root", "1234", "12345", "123", "qwerty", "111111", "1",
                         "test", "12345678", "pass", "raspberry", "changeme", "admin123", "P@ssw0rd", "ubnt", "toor",
                         "default", "letmein", "welcome", "000000", "abc123", "dragon", "master")


def _zipf(rank: int) -> float:
    return round(1.0 / (rank + 1) ** _ZIPF_EXPONENT, 9)


def default_vocab() -> Tuple[UtilitySpec, ...]:
    return tuple(UtilitySpec(name, _zipf(i), templates) for i, (name, templates) in enumerate(_VOCAB_TABLE))


def default_credentials() -> Tuple[Tuple[str, str, float], ...]:
    pool = []
    for ui, user in enumerate(_CREDENTIAL_USERS):
        for pi, pw in enumerate(_CREDENTIAL_PASSWORDS):
            pool.append((user, pw, round(_zipf(ui) * _zipf(pi), 12)))
    return tuple(pool)


@dataclass(frozen=True)
class GeneratorConfig:
    seed: int = 1
    n_sessions: int = 1000
    utility_vocab: Tuple[UtilitySpec, ...] = field(default_factory=default_vocab)
    wrapper_prefixes: Tuple[str, ...] = DEFAULT_WRAPPERS
    credential_pool: Tuple[Tuple[str, str, float], ...] = field(default_factory=default_credentials)
    separator_weights: Tuple[Tuple[str, float], ...] = DEFAULT_SEPARATORS
    start: str = "2019-05-01T00:00:00Z"
    days: int = 29
    gap_seconds: Tuple[float, float] = (0.2, 30.0)
    sensors: Tuple[str, ...] = ("cyberlab-hp01", "cyberlab-hp02", "cyberlab-hp03")
    p_wrapper: float = 0.10
    p_multi: float = 0.15
    p_abs_path: float = 0.08
    p_env: float = 0.03
    p_redirect: float = 0.08
    p_login_success: float = 0.65
    max_failed_logins: int = 5
    max_commands: int = 10

    def __post_init__(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.n_sessions < 0:
            raise ValueError("n_sessions must be >= 0")
        if len(self.utility_vocab) < 40:
            raise ValueError("utility_vocab needs at least 40 entries")
        weights = [u.weight for u in self.utility_vocab]
        weights += [w for _, _, w in self.credential_pool]
        weights += [w for _, w in self.separator_weights]
        if any(w <= 0 for w in weights):
            raise ValueError("all weights must be positive")
        if not self.credential_pool or not self.separator_weights:
            raise ValueError("credential_pool and separator_weights must be non-empty")
        lo, hi = self.gap_seconds
        if not 0 < lo <= hi:
            raise ValueError("gap_seconds must satisfy 0 < min <= max")
        parse_timestamp(self.start)


@dataclass(frozen=True)
class LabeledCommand:
    context: str
    gold_answer: str
    session: str = ""
    timestamp: Optional[datetime] = None

    def to_json(self) -> str:
        return json.dumps({"context": self.context, "answer": self.gold_answer}, ensure_ascii=False)


@dataclass
class DatasetSplit:
    train: List[LabeledCommand]
    validation: List[LabeledCommand]
    test: List[LabeledCommand]

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


@dataclass
class CorpusResult:
    files: List[Path]
    labels: List[LabeledCommand]
    n_events: int


def _session_rng(seed: int, index: int) -> random.Random:
    digest = hashlib.sha256(f"cowrieqa/{seed}/{index}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


class _CommandGrammar:
    """Builds attacker command lines from the configured vocabulary."""

    def __init__(self, config: GeneratorConfig):
        self.config = config
        self.vocab = config.utility_vocab
        self.vocab_weights = [u.weight for u in self.vocab]
        self.seps = [s for s, _ in config.separator_weights]
        self.sep_weights = [w for _, w in config.separator_weights]

    def _fill(self, rng: random.Random, template: str) -> str:
        return re.sub(r"@(\w+)@", lambda m: self._value(rng, m.group(1)), template)

    def _name(self, rng: random.Random, k: int = 5) -> str:
        return "".join(rng.choice("abcdefghijklmnopqrstuvwxyz0123456789") for _ in range(k))

    def _value(self, rng: random.Random, kind: str) -> str:
        if kind == "ip":
            return ".".join(str(rng.randrange(1, 255)) for _ in range(4))
        if kind == "host":
            return rng.choice((self._value(rng, "ip"), f"pool.{self._name(rng, 4)}.com"))
        if kind == "port":
            return str(rng.choice((21, 22, 80, 443, 1337, 3333, 4444, 5555, 6667, 8080, rng.randrange(1024, 65535))))
        if kind == "file":
            ext = rng.choice(_EXT)
            return self._name(rng, rng.randrange(2, 9)) + (f".{ext}" if ext else "")
        if kind == "url":
            port = rng.choice(("", "", "", f":{self._value(rng, 'port')}"))
            return f"http://{self._value(rng, 'host')}{port}/{self._value(rng, 'file')}"
        if kind == "dir":
            return self._fill(rng, rng.choice(_DIRS))
        if kind == "path":
            return f"{self._value(rng, 'dir')}/{self._value(rng, 'file')}"
        if kind == "word":
            return rng.choice(_WORDS)
        if kind == "hex":
            return "%08x" % rng.getrandbits(32)
        if kind == "byte":
            return "%02x" % rng.getrandbits(8)
        if kind == "num":
            return str(rng.randrange(2, 65536))
        if kind == "user":
            return rng.choice(_CREDENTIAL_USERS)
        if kind == "password":
            return rng.choice(_CREDENTIAL_PASSWORDS)
        if kind == "pkg":
            return rng.choice(_PKGS)
        if kind == "applet":
            return rng.choice(_APPLETS)
        raise KeyError(kind)

    def simple_command(self, rng: random.Random) -> str:
        spec = rng.choices(self.vocab, weights=self.vocab_weights)[0]
        args = self._fill(rng, rng.choice(spec.templates))
        if spec.name == "@exec@":
            head = "./" + self._value(rng, "file")
        else:
            head = spec.name
            if rng.random() < self.config.p_abs_path:
                head = rng.choice(_BIN_DIRS) + head
        parts = []
        if rng.random() < self.config.p_env:
            parts.append(rng.choice(_ENV_PREFIXES))
        if rng.random() < self.config.p_wrapper and self.config.wrapper_prefixes:
            parts.append(rng.choice(self.config.wrapper_prefixes))
        parts.append(head)
        if args:
            parts.append(args)
        if rng.random() < self.config.p_redirect:
            parts.append(self._fill(rng, rng.choice(_REDIRECTS)))
        return " ".join(parts)

    def command_line(self, rng: random.Random) -> str:
        line = self.simple_command(rng)
        if rng.random() < self.config.p_multi:
            for _ in range(rng.randrange(1, 4)):
                sep = rng.choices(self.seps, weights=self.sep_weights)[0]
                line += f" {sep} " + self.simple_command(rng)
        return line


def generate_session(config: GeneratorConfig, session_index: int) -> List[CowrieEvent]:
    """Events of one simulated SSH session, in time order."""
    if not 0 <= session_index < config.n_sessions:
        raise IndexError(f"session_index {session_index} out of range for {config.n_sessions} sessions")
    rng = _session_rng(config.seed, session_index)
    grammar = _CommandGrammar(config)
    base = parse_timestamp(config.start).astimezone(timezone.utc)
    span_us = config.days * 86_400_000_000
    t_us = rng.randrange(span_us) if span_us > 0 else 0
    lo, hi = config.gap_seconds

    def tick() -> datetime:
        nonlocal t_us
        t_us += max(1, int(rng.uniform(lo, hi) * 1_000_000))
        return base + timedelta(microseconds=t_us)

    session = "%012x" % rng.getrandbits(48)
    src_ip = grammar._value(rng, "ip")
    src_port = rng.randrange(1024, 65536)
    sensor = rng.choice(config.sensors)
    common = {"session": session, "src_ip": src_ip, "sensor": sensor}
    users = [(u, p) for u, p, _ in config.credential_pool]
    cred_weights = [w for _, _, w in config.credential_pool]

    events = [CowrieEvent(
        eventid="cowrie.session.connect",
        timestamp=base + timedelta(microseconds=t_us),
        message=f"New connection: {src_ip}:{src_port} (10.0.0.5:2222) [session: {session}]",
        extra={"src_port": src_port, "dst_ip": "10.0.0.5", "dst_port": 2222, "protocol": "ssh"},
        **common,
    )]
    for _ in range(rng.randrange(config.max_failed_logins + 1)):
        user, pw = rng.choices(users, weights=cred_weights)[0]
        events.append(CowrieEvent(
            eventid="cowrie.login.failed", timestamp=tick(), username=user, password=pw,
            message=f"login attempt [{user}/{pw}] failed", **common,
        ))
    if rng.random() < config.p_login_success:
        user, pw = rng.choices(users, weights=cred_weights)[0]
        events.append(CowrieEvent(
            eventid="cowrie.login.success", timestamp=tick(), username=user, password=pw,
            message=f"login attempt [{user}/{pw}] succeeded", **common,
        ))
        for _ in range(rng.randrange(1, config.max_commands + 1)):
            line = grammar.command_line(rng)
            events.append(CowrieEvent(
                eventid="cowrie.command.input", timestamp=tick(), input=line,
                message=f"CMD: {line}", **common,
            ))
    closed_at = tick()
    duration = (closed_at - events[0].timestamp).total_seconds()
    events.append(CowrieEvent(
        eventid="cowrie.session.closed", timestamp=closed_at,
        message=f"Connection lost after {duration:.1f} seconds",
        extra={"duration": round(duration, 6)}, **common,
    ))
    return events


def iter_events(config: GeneratorConfig) -> Iterator[CowrieEvent]:
    """All events of all sessions, globally ordered by timestamp."""
    keyed = []
    for i in range(config.n_sessions):
        for seq, ev in enumerate(generate_session(config, i)):
            keyed.append((ev.timestamp, i, seq, ev))
    keyed.sort(key=lambda k: k[:3])
    for *_, ev in keyed:
        yield ev


def label_event(event: CowrieEvent) -> LabeledCommand:
    return LabeledCommand(event.input or "", lexer.label(event.input or ""), event.session, event.timestamp)


def collect_labels(config: GeneratorConfig) -> List[LabeledCommand]:
    """Labels for every command event, without writing any files."""
    return [label_event(ev) for ev in iter_events(config) if ev.eventid == "cowrie.command.input"]


def generate_corpus(config: GeneratorConfig, out_dir: Path | str) -> CorpusResult:
    """Write one JSON-lines event file per simulated UTC day.

    Files for every configured day are created even when empty.  Returns the
    files and the lexer-derived labels for each ``cowrie.command.input``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    base = parse_timestamp(config.start).astimezone(timezone.utc).date()
    by_day: Dict[str, List[str]] = {
        (base + timedelta(days=d)).isoformat(): [] for d in range(config.days)
    }
    labels: List[LabeledCommand] = []
    n_events = 0
    for ev in iter_events(config):
        by_day.setdefault(ev.timestamp.astimezone(timezone.utc).date().isoformat(), []).append(serialize_event(ev))
        n_events += 1
        if ev.eventid == "cowrie.command.input":
            labels.append(label_event(ev))
    files = []
    for day in sorted(by_day):
        path = out / f"cowrie.json.{day}"
        lines = by_day[day]
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("".join(line + "\n" for line in lines))
        files.append(path)
    return CorpusResult(files, labels, n_events)


def write_labels(path: Path | str, labels: Iterable[LabeledCommand]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for item in labels:
            fh.write(item.to_json() + "\n")
            n += 1
    return n


def read_labels(path: Path | str) -> List[LabeledCommand]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(LabeledCommand(obj["context"], obj["answer"]))
    return out


def make_split(
    labels: Sequence[LabeledCommand],
    sizes: Tuple[int, int, int] = REFERENCE_SPLIT_SIZES,
    seed: int = 0,
) -> DatasetSplit:
    """Deduplicate by exact context string, shuffle with ``seed``, slice."""
    if any(s < 0 for s in sizes):
        raise ValueError("split sizes must be non-negative")
    seen: Dict[str, LabeledCommand] = {}
    for item in labels:
        seen.setdefault(item.context, item)
    unique = list(seen.values())
    need = sum(sizes)
    if len(unique) < need:
        raise InsufficientData(f"{len(unique)} unique contexts, {need} requested")
    random.Random(seed).shuffle(unique)
    n_train, n_val, n_test = sizes
    return DatasetSplit(
        train=unique[:n_train],
        validation=unique[n_train:n_train + n_val],
        test=unique[n_train + n_val:need],
    )


def proportional_sizes(n_unique: int, ratios: Tuple[int, int, int] = REFERENCE_SPLIT_SIZES) -> Tuple[int, int, int]:
    """Scale the reference split ratios down to ``n_unique`` contexts."""
    total = sum(ratios)
    if n_unique >= total:
        return ratios
    val = n_unique * ratios[1] // total
    test = n_unique * ratios[2] // total
    return n_unique - val - test, val, test


def write_split(split: DatasetSplit, out_dir: Path | str) -> Dict[str, object]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: Dict[str, object] = {}
    for name, items in (("train", split.train), ("validation", split.validation), ("test", split.test)):
        path = out / f"{name}.jsonl"
        manifest[name] = {"path": path.name, "count": write_labels(path, items)}
    with open(out / "split_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


__all__ = [
    "GeneratorConfig", "UtilitySpec", "LabeledCommand", "DatasetSplit", "CorpusResult", "InsufficientData",
    "REFERENCE_SPLIT_SIZES", "generate_session", "generate_corpus", "iter_events", "collect_labels",
    "make_split", "proportional_sizes", "write_labels", "read_labels", "write_split", "format_timestamp",
]
