# Copyright (c) 2021 Guillaume Fayard
# This library is licensed under the MIT license
# For a complete copy of the license, see the LICENSE file.

""" # Report definition and export

Every file the library writes besides plain CSV tables (replication
positions, optimization summaries, policy comparisons, calibration and HJB
diagnostics) is produced by a *report* class. This module explains how to
define one and how it is exported. See `BaseReport.report_dict()` for the
export format and `greencontract.document` for the provenance envelope.

## Fields

Reports declare their fields with annotations:

```python
from typing import Optional
from greencontract.base import BaseReport


class FitReport(BaseReport):
    ticker: str
    slope: float
    note: Optional[str]
```

A field cannot be named after reserved names which are:
- the already-defined members of the `BaseReport` class;
- `"type"`: by default the exported type name is the name of the class. It
  can be overwritten with the `report_name` attribute of the `Meta` inner
  class;
- `"meta"`: the member holding the meta attributes in exports.

Fields which are not wrapped in `Optional` are required at instantiation.

### Meta fields

The `Meta` inner class lets you define non-standard attributes:

* `meta_attributes`: a set of attribute names exported in the `"meta"`
  object instead of alongside the other attributes (diagnostic flags, timings).

```python
class OptimizationRun(BaseReport):
    certainty_equivalent: float
    fallback_nodes: list

    class Meta:
        report_name = "optimization"
        meta_attributes = {"fallback_nodes"}
```

## Abstract reports and inheritance

A report can be declared abstract with `Meta.is_abstract = True`; abstract
reports cannot be instantiated and are meant to be subclassed. The `Meta`
inner class is not inherited, so a report is concrete by default.

## Creating a report class dynamically

`create_report()` builds report classes at runtime; the command line
interface declares its small run summaries this way:

```python
GapReport = create_report("GapReport", {"report_name": "gap"}, exact=float, averaged=float)
```
"""

import inspect
import json
from typing import Any
from typing import Callable
from typing import Dict
from typing import Iterable
from typing import Literal
from typing import Optional
from typing import Set
from typing import TYPE_CHECKING
from typing import Tuple
from typing import Union
from typing import get_type_hints

from greencontract import utils


__all__ = ("BaseReport", "create_report", "BaseReportMeta")


def _make_fields_meta_attributes(cls, forbidden_fields):
    frame = inspect.currentframe()
    try:
        fields_type_hints = get_type_hints(
            cls,
            localns=frame.f_back.f_back.f_locals,
            globalns=frame.f_back.f_back.f_globals)
    except NameError:
        fields_type_hints = {
            name: type_hint
            for klass in reversed(cls.mro())
            if isinstance(klass, BaseReportMeta)
            for name, type_hint in klass.__dict__.get("__annotations__", {}).items()}
    finally:
        del frame
    cls.__fields_types__ = {
        name: type_hint
        for name, type_hint in fields_type_hints.items()
        if not name.startswith("_")}
    cls.__exported_fields_set__ = set(cls.__fields_types__) - forbidden_fields
    return cls.__fields_types__


class BaseReportMeta(type):
    """Metaclass of report classes.

    ###### Initialization ######

    The following class attributes are initialized here:

    - `__fields_types__`: the evaluated annotations of the report and its bases.
    - `__exported_fields_set__`: the names of the fields exported by
      `BaseReport.report_dict()`.

    ###### Extraction of `Meta` attributes ######

    - `__is_abstract__`: the `Meta.is_abstract` attribute if defined, else `False`.
    - `__report_name__`: the `Meta.report_name` attribute if defined, else
      the name of the report class.
    - `__meta_attributes__`: the `Meta.meta_attributes` attribute if defined,
      else an empty set. Every name must be a declared field, otherwise a
      `ValueError` is raised.
    """

    def __new__(mcs, name, bases, namespace):
        try:
            meta = namespace.pop("Meta").__dict__
        except KeyError:
            meta = {}

        cls = super().__new__(mcs, name, bases, namespace)

        forbidden_fields = {"type", "meta"}
        fields_types = _make_fields_meta_attributes(cls, forbidden_fields)

        reserved = forbidden_fields & set(fields_types)
        if reserved:
            raise ValueError(
                "\n" + "\n".join(f"    This field name is reserved: '{field}'." for field in sorted(reserved)))

        meta_attributes = set(meta.get("meta_attributes", set()))
        unknown = meta_attributes - set(fields_types)
        if unknown:
            raise ValueError(
                "\n" + "\n".join(f"    '{field}' is not a field of {name}." for field in sorted(unknown)))

        cls.__is_abstract__ = meta.get("is_abstract", False)
        cls.__report_name__ = meta.get("report_name", cls.__name__)
        cls.__meta_attributes__ = meta_attributes
        cls._forbidden_fields = forbidden_fields
        return cls


class BaseReport(metaclass=BaseReportMeta):
    """Base class for defining reports.

    See the top of the `greencontract.base` module for a documentation on report
    definition.
    """

    if TYPE_CHECKING:
        # for IDE, provided by metaclass
        __fields_types__: Dict[str, type]
        __exported_fields_set__: Set[str]
        __report_name__: str
        __is_abstract__: bool
        __meta_attributes__: Set[str]
        _forbidden_fields: Set[str]

    class Meta:
        is_abstract: bool = True

    def __init__(self, **kwargs):
        """Set all passed arguments after checking them.

        Take keyword arguments only and raise a `ValueError` listing every
        problem: reserved member names, unknown fields and missing required
        fields.
        """
        if self.__is_abstract__:
            raise TypeError(f"Abstract report '{self.__class__.__name__}' cannot be instantiated.")
        errors = []
        for name in kwargs:
            if name in self._forbidden_fields or (
                    name not in self.__fields_types__ and hasattr(type(self), name)):
                errors.append(f"    This attribute name is reserved: '{name}'.")
            elif name not in self.__fields_types__:
                errors.append(f"    Unexpected attribute: '{name}'.")
        for name, type_hint in self.__fields_types__.items():
            if (name not in kwargs
                    and not hasattr(type(self), name)
                    and not utils.is_an_optional_type_hint(type_hint)):
                errors.append(f"    Missing required attribute: '{name}'.")
        if errors:
            raise ValueError("\n" + "\n".join(errors))
        for k, v in kwargs.items():
            setattr(self, k, v)

    ###########################################################################
    #                           P U B L I C   A P I                           #
    ###########################################################################

    def report_dict(
        self,
        required_attributes: Union[Iterable[str], Literal["__all__"]] = "__all__",
        dontformat: bool = False,
    ) -> Dict:
        """Export the report as a JSON-ready dictionary.

        ###### Parameters ######

        - `required_attributes`: an iterable containing the fields names to
        include in exported data. If all fields are required, provide the
        `"__all__"` literal (default).
        - `dontformat`: if `True`, do not format automatically fields names to
          camelCase. Default: `False`.

        ###### Returned value ######

        A dictionary `{"type": <report name>, <attributes>..., "meta": {...}}`.
        numpy values are converted to builtins; the `"meta"` member is only
        present when some meta attribute is set.

        ###### Errors raised ######

        A `ValueError` is raised if an attribute name in `required_attributes`
        is not a field of the report.

        ###### Example ######

        ```python
        FitReport(ticker="FR0013234333", slope=0.31, note=None).report_dict()
        # {'type': 'FitReport', 'ticker': 'FR0013234333', 'slope': 0.31}
        ```
        """
        attributes, meta_attributes = self._filtered_attributes(required_attributes, dontformat)
        data = {"type": self.__report_name__, **attributes}
        if meta_attributes:
            data["meta"] = meta_attributes
        return data

    def dump(
        self,
        required_attributes: Union[Iterable[str], Literal["__all__"]] = "__all__",
        dump_function: Callable[[Dict], str] = json.dumps,
    ) -> str:
        """Call `report_dict()` method and dump the result with `dump_function`.

        By default, the dump function is `json.dumps()`.
        """
        return dump_function(self.report_dict(required_attributes))

    ###########################################################################
    #            F O R M A T T I N G   A N D   F I L T E R I N G              #
    ###########################################################################

    def _filtered_attributes(
        self, required_attributes: Union[Iterable, Literal["__all__"]], dontformat=False
    ) -> Tuple[Dict, Dict]:
        if required_attributes == "__all__":
            required_attributes = self.__exported_fields_set__
        required_attributes = set(required_attributes)
        errors = [
            f"    Unexpected required attribute: '{name}'."
            for name in sorted(required_attributes - self.__exported_fields_set__)]
        if errors:
            raise ValueError("\n" + "\n".join(errors))
        ordered = [name for name in self.__fields_types__ if name in required_attributes]
        attrs = {
            utils.snake_to_camel_case(name, dontformat): utils.to_builtin(getattr(self, name))
            for name in ordered
            if name not in self.__meta_attributes__ and getattr(self, name) is not None
        }
        meta_attrs = {
            utils.snake_to_camel_case(name, dontformat): utils.to_builtin(getattr(self, name))
            for name in ordered
            if name in self.__meta_attributes__ and getattr(self, name) is not None
        }
        return attrs, meta_attrs

    ###########################################################################
    #                     S P E C I A L   M E T H O D S                       #
    ###########################################################################

    def __repr__(self):
        return (f"{self.__class__.__name__}"
                f"({', '.join(f'{k}={repr(v)}' for k, v in self.__dict__.items())})")

    def __getattr__(self, name):
        """Dynamically return None for declared but unset optional fields"""
        if name in type(self).__fields_types__:
            return None
        raise AttributeError(f"'{self.__class__.__name__}' object has no attribute '{name}'")


def create_report(
    name: str,
    meta_conf: Optional[Dict[str, Any]] = None,
    bases: Union[type, Tuple[type, ...]] = BaseReport,
    metaklass: type = BaseReportMeta,
    /,
    **fields_types
) -> Any:
    """Create dynamically a new report class.

    ###### Parameters ######

    Positional:

    * `name`: The report class name.
    * `meta_conf`: A dictionary containing configuration attributes (of the
      `Meta` inner class).
    * `bases`: A class or a tuple of parent classes. It must include
      `BaseReport`.
    * `metaklass`: The metaclass used to create the report class (must
      be a subclass of `BaseReportMeta`).

    Keywords:

    * `**fields_types`: The types of the fields as keyword arguments.

    ###### Returned value ######

    A new report class.

    ###### Errors raised ######

    A `TypeError` is raised if `metaklass` is not a subclass of `BaseReportMeta`
    or if `BaseReport` is not among the bases.
    """
    if not issubclass(metaklass, BaseReportMeta):
        raise TypeError(
            "Only a submetaclass of BaseReportMeta can create a new "
            f"report class. ('{metaklass}' provided.)")
    if isinstance(bases, type):
        bases = (bases,)
    if not any(issubclass(base, BaseReport) for base in bases):
        raise TypeError(
            "'BaseReport' class must be a parent class of any report "
            f"class. ('{bases}' provided.)")

    meta_inner_class = type("Meta", (), meta_conf or {})
    namespace = {"__annotations__": fields_types, "Meta": meta_inner_class}
    return metaklass(name, bases, namespace)
