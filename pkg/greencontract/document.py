# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Output documents

An `OutputDocument` wraps one report (or a list of reports) together with the
provenance of the run that produced it: the configuration hash and the seed.
Every JSON file written by the command line interface is an output document,
so that a downstream command can refuse inputs produced with another
configuration (see `OutputDocument.check_provenance()`).

```python
doc = OutputDocument(report, config_hash="3fa1c2d4e5f60718", seed=7)
doc.document_dict()
# {'type': 'replication', 'coupon': ..., 'positions': [...],
#  'meta': {'configHash': '3fa1c2d4e5f60718', 'seed': 7}}
```
"""
import collections.abc
import json
from pathlib import Path
from typing import Dict
from typing import Iterable
from typing import Optional
from typing import Union

from greencontract.base import BaseReport
from greencontract.errors import ValidationError


__all__ = ("OutputDocument",)


class OutputDocument:
    def __init__(
        self,
        data: Union[BaseReport, Iterable[BaseReport]],
        config_hash: str,
        seed: Optional[int] = None,
    ):
        if isinstance(data, BaseReport):
            self.single = True
        elif isinstance(data, collections.abc.Iterable):
            data = list(data)
            if not all(isinstance(obj, BaseReport) for obj in data):
                raise TypeError("Data must be report objects.")
            self.single = False
        else:
            raise TypeError("Data must be a report object.")
        self.data = data
        self.config_hash = config_hash
        self.seed = seed

    @property
    def provenance(self) -> Dict:
        provenance = {"configHash": self.config_hash}
        if self.seed is not None:
            provenance["seed"] = self.seed
        return provenance

    def document_dict(self) -> Dict:
        """Export the wrapped report(s) with the provenance merged into `"meta"`.

        A single report keeps its own top-level layout; a list is exported under
        `"data"`.
        """
        if self.single:
            data = self.data.report_dict()
            data["meta"] = {**data.get("meta", {}), **self.provenance}
            return data
        return {"data": [obj.report_dict() for obj in self.data], "meta": self.provenance}

    def dump(self, indent: Optional[int] = 2) -> str:
        return json.dumps(self.document_dict(), indent=indent, sort_keys=False)

    def write(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dump() + "\n")
        return path

    @staticmethod
    def check_provenance(document: Dict, config_hash: str) -> None:
        """Raise a `ValidationError` if `document` was produced with another configuration."""
        found = document.get("meta", {}).get("configHash")
        if found != config_hash:
            raise ValidationError(
                f"Input was produced with configuration {found!r}, current configuration is {config_hash!r}.")
