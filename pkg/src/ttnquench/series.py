"""Time series of sampled observables and their on-disk stream format.

The stream is newline-delimited JSON: a header object first, then one object
per sample.  All floats go through Python repr, so a rerun with the same
seed produces byte-identical files.  NaN is not valid JSON; missing values
(the anchor slot of a correlation cut) are stored as null.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

FORMAT_NAME = "ttnquench-series"
FORMAT_VERSION = 1


def _jsonify(x):
    if isinstance(x, dict):
        return {k: _jsonify(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_jsonify(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return None if math.isnan(x) else x
    if isinstance(x, (np.integer,)):
        return int(x)
    return x


def _dumps(obj):
    return json.dumps(_jsonify(obj), sort_keys=True, separators=(",", ":"))


@dataclass
class TimeSeries:
    """Sampled observables of one run; column layout fixed by the first append."""

    meta: dict
    times: list = field(default_factory=list)
    samples: list = field(default_factory=list)

    def append(self, t, record):
        """Add one sample; record is a flat dict of observable -> value."""
        self.times.append(float(t))
        self.samples.append(record)

    def __len__(self):
        return len(self.times)

    @property
    def t(self):
        return np.array(self.times)

    def column(self, name):
        """Per-sample values of one observable as an array (None -> nan)."""
        out = []
        for rec in self.samples:
            v = rec[name]
            if isinstance(v, (list, tuple, np.ndarray)):
                out.append([math.nan if x is None else float(x) for x in v])
            else:
                out.append(math.nan if v is None else float(v))
        return np.array(out)

    def sz_site(self, site):
        """Magnetization history of one row-major site."""
        return self.column("sz")[:, site]

    # ---- stream format ----

    def header_line(self):
        head = {"format": FORMAT_NAME, "version": FORMAT_VERSION,
                "meta": self.meta}
        return _dumps(head)

    def record_line(self, i):
        rec = {"t": self.times[i]}
        rec.update(self.samples[i])
        return _dumps(rec)

    def write(self, fp):
        close = False
        if isinstance(fp, (str, bytes)):
            fp = open(fp, "w")
            close = True
        try:
            fp.write(self.header_line() + "\n")
            for i in range(len(self.times)):
                fp.write(self.record_line(i) + "\n")
        finally:
            if close:
                fp.close()

    @classmethod
    def read(cls, path):
        with open(path) as fp:
            head = json.loads(fp.readline())
            if head.get("format") != FORMAT_NAME:
                raise ValueError(f"not a {FORMAT_NAME} stream")
            series = cls(meta=head["meta"])
            for line in fp:
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    # a killed writer can leave a partial last line; the
                    # complete lines before it are still a valid series
                    break
                if "error" in rec and "t" not in rec:
                    series.meta["error"] = rec["error"]
                    break
                t = rec.pop("t")
                series.append(t, rec)
        return series


class SeriesWriter:
    """Incremental writer used by the run loops; flushes every record."""

    def __init__(self, fp, meta):
        self.fp = fp
        self.series = TimeSeries(meta=meta)
        self._header_written = False

    def _emit(self, line):
        if self.fp is not None:
            self.fp.write(line + "\n")
            self.fp.flush()

    def append(self, t, record):
        if not self._header_written:
            self._emit(self.series.header_line())
            self._header_written = True
        self.series.append(t, record)
        self._emit(self.series.record_line(len(self.series) - 1))

    def error(self, message):
        """Flush an error marker after whatever samples made it out."""
        if not self._header_written:
            self._emit(self.series.header_line())
            self._header_written = True
        self._emit(_dumps({"error": str(message)}))
        self.series.meta["error"] = str(message)
