"""
char_lm corpus assembly.

Downloads public-domain Project Gutenberg plain-text ebooks, strips the
licence header and footer from each, and writes their concatenation to
RESS_CORPUS_PATH. The default set (Alice's Adventures in Wonderland,
Through the Looking-Glass, Pride and Prejudice) comes to about 1 MB.
"""
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple
import logging
import re

import httpx
from django.conf import settings

from apps.core.exceptions import ConfigError, CorpusError

from .tasks import reset_corpus_cache

logger = logging.getLogger(__name__)

CORPUS_TARGET_BYTES = 1_000_000
# A fetched corpus below this share of the target is reported as short
CORPUS_MIN_SHARE = 0.9

START_MARKER = re.compile(r'^\*\*\* ?START OF (THE|THIS) PROJECT GUTENBERG EBOOK.*$', re.MULTILINE | re.IGNORECASE)
END_MARKER = re.compile(r'^\*\*\* ?END OF (THE|THIS) PROJECT GUTENBERG EBOOK.*$', re.MULTILINE | re.IGNORECASE)


def strip_gutenberg(text: str) -> str:
    """Body between the START and END markers, without the BOM."""
    text = text.lstrip('\ufeff').replace('\r\n', '\n')
    start, end = START_MARKER.search(text), END_MARKER.search(text)
    if start is None or end is None or end.start() <= start.end():
        raise CorpusError("missing Project Gutenberg START/END markers")
    return text[start.end():end.start()].strip()


def parse_ebooks(value) -> Tuple[int, ...]:
    if isinstance(value, (tuple, list)):
        return tuple(int(v) for v in value)
    try:
        return tuple(int(part) for part in str(value).split(',') if part.strip())
    except ValueError:
        raise ConfigError(f"expected comma separated ebook numbers, got '{value}'", field='ebooks')


@dataclass
class CorpusConfig:
    """Where the corpus comes from and where it goes."""
    path: Path = Path('data/corpus.txt')
    ebooks: Tuple[int, ...] = (11, 12, 1342)
    url_template: str = 'https://www.gutenberg.org/cache/epub/{ebook}/pg{ebook}.txt'
    timeout: int = 60

    @classmethod
    def from_settings(cls) -> 'CorpusConfig':
        """Create config from Django settings."""
        return cls(
            path=Path(getattr(settings, 'RESS_CORPUS_PATH', 'data/corpus.txt')),
            ebooks=parse_ebooks(getattr(settings, 'RESS_CORPUS_EBOOKS', '11,12,1342')),
            url_template=getattr(settings, 'RESS_CORPUS_URL', cls.url_template),
            timeout=getattr(settings, 'RESS_CORPUS_TIMEOUT', 60),
        )

    def validate(self) -> 'CorpusConfig':
        if not self.ebooks:
            raise ConfigError("need at least one ebook", field='ebooks')
        if '{ebook}' not in self.url_template:
            raise ConfigError(f"must contain '{{ebook}}', got '{self.url_template}'", field='url_template')
        if self.timeout <= 0:
            raise ConfigError(f"must be > 0, got {self.timeout}", field='timeout')
        return self

    def to_dict(self) -> Dict[str, object]:
        values = asdict(self)
        values['path'] = str(self.path)
        return values


@dataclass
class CorpusReport:
    path: Path
    sources: List[Dict[str, object]] = field(default_factory=list)

    @property
    def size_bytes(self) -> int:
        return self.path.stat().st_size

    @property
    def short(self) -> bool:
        return self.size_bytes < CORPUS_TARGET_BYTES * CORPUS_MIN_SHARE


class CorpusService:
    """
    Fetches and assembles the char_lm corpus.

    Usage:
        report = CorpusService().fetch()
    """

    def __init__(self, config: Optional[CorpusConfig] = None, transport: Optional[httpx.BaseTransport] = None):
        self.config = (config or CorpusConfig.from_settings()).validate()
        self._transport = transport
        self._client: Optional[httpx.Client] = None

    @property
    def client(self) -> httpx.Client:
        """Lazy-initialized HTTP client."""
        if self._client is None:
            self._client = httpx.Client(timeout=self.config.timeout, follow_redirects=True, transport=self._transport)
        return self._client

    def download(self, ebook: int) -> str:
        url = self.config.url_template.format(ebook=ebook)
        try:
            response = self.client.get(url)
            response.raise_for_status()
        except httpx.HTTPError as e:
            logger.error(f"Corpus download failed for ebook {ebook}: {e}")
            raise CorpusError(f"could not download ebook {ebook} from {url}: {e}") from e
        try:
            body = strip_gutenberg(response.text)
        except CorpusError as e:
            raise CorpusError(f"ebook {ebook}: {e}") from e
        logger.info(f"Fetched ebook {ebook}: {len(body)} characters")
        return body

    def fetch(self, force: bool = False) -> CorpusReport:
        """Download every configured ebook and write the corpus; an existing file is kept unless `force`."""
        path = self.config.path
        report = CorpusReport(path)
        if path.is_file() and not force:
            logger.info(f"Corpus already present at {path}")
            return report
        parts = []
        for ebook in self.config.ebooks:
            body = self.download(ebook)
            parts.append(body)
            report.sources.append({'ebook': ebook, 'characters': len(body)})
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text('\n\n'.join(parts) + '\n', encoding='utf-8')
        reset_corpus_cache()
        if report.short:
            logger.warning(f"Corpus at {path} is {report.size_bytes} bytes, short of the {CORPUS_TARGET_BYTES} byte target")
        logger.info(f"Wrote {report.size_bytes} byte corpus from {len(parts)} ebooks to {path}")
        return report

    def close(self) -> None:
        if self._client is not None:
            self._client.close()
            self._client = None
