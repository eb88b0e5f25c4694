"""Registrable-domain lookup over Public Suffix List rules."""

from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Set, Tuple, Union


def _get_data_dir() -> Path:
    return Path(__file__).parent / "data"


class PublicSuffixList:
    """Public suffix rules with wildcard and exception support."""

    def __init__(self, rules: Iterable[str]) -> None:
        self._rules: Set[Tuple[str, ...]] = set()
        self._exceptions: Set[Tuple[str, ...]] = set()
        for raw in rules:
            rule = raw.strip().split()[0].lower() if raw.strip() else ""
            if not rule or rule.startswith("//"):
                continue
            if rule.startswith("!"):
                self._exceptions.add(tuple(reversed(rule[1:].split("."))))
            else:
                self._rules.add(tuple(reversed(rule.split("."))))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "PublicSuffixList":
        with open(path, "r", encoding="utf-8") as handle:
            return cls(handle)

    def __len__(self) -> int:
        return len(self._rules) + len(self._exceptions)

    def _matches(self, rule: Tuple[str, ...], labels: Tuple[str, ...]) -> bool:
        if len(rule) > len(labels):
            return False
        return all(part == "*" or part == label for part, label in zip(rule, labels))

    def suffix_length(self, hostname: str) -> Tuple[int, bool]:
        """
        Number of labels in the public suffix of ``hostname``.

        Returns:
            (label count, whether an explicit rule matched); with no explicit
            rule the implicit ``*`` rule applies and the count is 1
        """
        labels = tuple(reversed(hostname.lower().rstrip(".").split(".")))
        for exception in self._exceptions:
            if self._matches(exception, labels):
                return len(exception) - 1, True
        best = 0
        for rule in self._rules:
            if len(rule) > best and self._matches(rule, labels):
                best = len(rule)
        if best:
            return best, True
        return 1, False

    def public_suffix(self, hostname: str) -> str:
        count, _ = self.suffix_length(hostname)
        return ".".join(hostname.lower().rstrip(".").split(".")[-count:])

    def registrable_domain(self, hostname: str) -> Optional[str]:
        """The suffix plus one label, or ``None`` if ``hostname`` is itself a suffix."""
        labels = hostname.lower().rstrip(".").split(".")
        count, _ = self.suffix_length(hostname)
        if len(labels) <= count:
            return None
        return ".".join(labels[-(count + 1):])


@lru_cache(maxsize=1)
def bundled_suffix_list() -> PublicSuffixList:
    """The rules shipped in ``data/public_suffix_list.dat``."""
    return PublicSuffixList.from_file(_get_data_dir() / "public_suffix_list.dat")
