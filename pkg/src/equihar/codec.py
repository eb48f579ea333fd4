from __future__ import annotations

import json
from collections.abc import Callable
from dataclasses import dataclass, fields
from enum import Enum
from pathlib import Path
from types import NoneType, UnionType
from typing import (
    Any,
    TypeAlias,
    TypeVar,
    get_args,
    get_origin,
    get_type_hints,
    overload,
)

import numpy as np
from typing_extensions import dataclass_transform

FORMAT_VERSION = 1
"""
The version of the JSON envelope written by `dump_record` and `RecordStore`.
"""


@dataclass(frozen=True)
class Record:
    """
    The top class for records, the immutable values equihar persists as JSON.
    """


R = TypeVar("R", bound=Record)


@overload
def record(cls: type[R], /) -> type[R]: ...


@overload
def record(*, eq: bool = True) -> Callable[[type[R]], type[R]]: ...


@dataclass_transform(frozen_default=True)
def record(
    cls: type[R] | None = None, /, *, eq: bool = True
) -> type[R] | Callable[[type[R]], type[R]]:
    """
    Decorator required to correctly setup record classes.

    Records holding numpy arrays should pass ``eq=False``, as element-wise array
    comparison has no single truth value.
    """

    def wrap(cls: type[R]) -> type[R]:
        return dataclass(frozen=True, eq=eq)(cls)

    if cls is None:
        return wrap
    return wrap(cls)


BasicType = int | float | str | bool
"""
The type alias for JSON basic types.
"""

J = TypeVar("J", bound="Json")
Json: TypeAlias = dict[str, J] | list[J] | BasicType | None
"""
Value that can be dumped to JSON format.
"""


def record_types(root: type[Record] = Record) -> dict[str, type[Record]]:
    """
    Collect the record types below a root type, indexed by their qualified name.

    :param root: The root record type.
    :return: The record types, root included.
    """
    types_ = {root.__qualname__: root}
    for subtype in root.__subclasses__():
        types_ |= record_types(subtype)
    return types_


class RecordDeflator:
    """
    Deflates record fields to their JSON representations.
    """

    def deflate(self, value: Any) -> Json:
        """
        Deflate a field to its JSON representation.

        :param value: The field to deflate.
        :return: The JSON representation of the field.
        """
        if isinstance(value, Record):
            return {
                "type": type(value).__qualname__,
                "fields": {
                    field.name: self.deflate(getattr(value, field.name))
                    for field in fields(value)
                },
            }

        if isinstance(value, np.ndarray):
            return {
                "dtype": value.dtype.str,
                "shape": list(value.shape),
                "data": value.ravel().tolist(),
            }

        if isinstance(value, dict):
            return {self._deflate_key(key): self.deflate(v) for key, v in value.items()}

        if isinstance(value, (tuple, list)):
            return [self.deflate(item) for item in value]

        if isinstance(value, Enum):
            return value.name

        if isinstance(value, Path):
            return str(value)

        if isinstance(value, np.generic):
            return value.item()  # type: ignore[no-any-return]

        if isinstance(value, BasicType):  # type: ignore[arg-type,misc]
            return value  # type: ignore[no-any-return]

        if value is None:
            return None

        raise ValueError(f"Unsupported type: {type(value)}")

    @staticmethod
    def _deflate_key(key: Any) -> str:
        if isinstance(key, Enum):
            return key.name
        if isinstance(key, (int, str)) and not isinstance(key, bool):
            return str(key)
        raise ValueError(f"Unsupported key type: {type(key)}")


class RecordInflator:
    """
    Inflates record fields from their JSON representations.
    """

    def __init__(self, types_: dict[str, type[Record]]) -> None:
        """
        :param types_: The record types, indexed by their qualified name.
        """
        self._types = types_

    def inflate(self, json_: Json, static_type: Any) -> Any:
        """
        Inflate a field from its JSON representation.

        :param json_: The JSON representation of the field.
        :param static_type: The static type of the field.
        :return: The inflated field.
        """
        type_origin = get_origin(static_type)
        type_args = get_args(static_type)

        if type_origin is dict:
            assert isinstance(json_, dict)
            key_type, value_type = type_args
            return {
                self._inflate_key(key, key_type): self.inflate(value, value_type)
                for key, value in json_.items()
            }

        if type_origin is tuple:
            assert isinstance(json_, list)
            if len(type_args) == 2 and type_args[1] is Ellipsis:
                return tuple(self.inflate(item, type_args[0]) for item in json_)
            if len(type_args) != len(json_):
                raise ValueError(f"Expected {len(type_args)} items, got: {json_}")
            return tuple(
                self.inflate(item, item_type)
                for item, item_type in zip(json_, type_args, strict=True)
            )

        if type_origin is UnionType:
            # NOTE: Only optional types are supported, like in field annotations
            optional_type, none_type = type_args
            assert none_type is NoneType

            if json_ is None:
                return None

            return self.inflate(json_, optional_type)

        if static_type is np.ndarray or type_origin is np.ndarray:
            assert isinstance(json_, dict)
            array = np.asarray(json_["data"], dtype=np.dtype(str(json_["dtype"])))
            return array.reshape(tuple(json_["shape"]))  # type: ignore[arg-type]

        if isinstance(static_type, type) and issubclass(static_type, Record):
            if not isinstance(json_, dict):
                raise ValueError(f"Unsupported record json: {json_}")
            type_name = json_["type"]
            assert isinstance(type_name, str)
            if (type_ := self._types.get(type_name)) is None:
                raise ValueError(f"Unknown record type: {type_name}")
            assert issubclass(type_, static_type)
            field_jsons = json_["fields"]
            assert isinstance(field_jsons, dict)
            field_types = get_type_hints(type_)
            return type_(
                **{
                    field_name: self.inflate(field_json, field_types[field_name])
                    for field_name, field_json in field_jsons.items()
                }
            )

        if isinstance(static_type, type) and issubclass(static_type, Enum):
            assert isinstance(json_, str)
            return static_type[json_]

        if static_type is Path:
            assert isinstance(json_, str)
            return Path(json_)

        if static_type is float:
            assert isinstance(json_, (int, float)) and not isinstance(json_, bool)
            return float(json_)

        if static_type is int:
            assert isinstance(json_, int) and not isinstance(json_, bool)
            return json_

        if static_type in (str, bool):
            assert isinstance(json_, static_type)
            return json_

        raise ValueError(f"Unsupported type: {static_type}")

    @staticmethod
    def _inflate_key(key: str, key_type: Any) -> Any:
        if isinstance(key_type, type) and issubclass(key_type, Enum):
            return key_type[key]
        if key_type is int:
            return int(key)
        if key_type is str:
            return key
        raise ValueError(f"Unsupported key type: {key_type}")


def _envelope(json_: Json) -> str:
    return json.dumps({"format_version": FORMAT_VERSION, "record": json_}, indent=2)


def _unwrap(text: str, path: Path) -> Json:
    envelope = json.loads(text)
    if (version := envelope.get("format_version")) != FORMAT_VERSION:
        raise ValueError(f"Unsupported format version {version} in: {path}")
    return envelope["record"]  # type: ignore[no-any-return]


def dump_record(path: Path, value: Record) -> None:
    """
    Write a record to a JSON file.

    :param path: The destination file.
    :param value: The record.
    """
    path.write_text(_envelope(RecordDeflator().deflate(value)))


def load_record(path: Path, type_: type[R]) -> R:
    """
    Read a record from a JSON file written by `dump_record`.

    :param path: The source file.
    :param type_: The expected record type, subtypes included.
    :return: The record.
    """
    inflator = RecordInflator(types_=record_types())
    return inflator.inflate(_unwrap(path.read_text(), path), type_)  # type: ignore[no-any-return]


class RecordStore:
    """
    Manages named records on disk, one directory per record type.
    """

    def __init__(self, root: Path, types_: set[type[Record]]) -> None:
        """
        :param root: The directory containing one subdirectory per record type.
        :param types_: The record types that can be stored. Records nested in their
            fields may be of any record type.
        """
        self._root = root
        self._types = types_
        self._deflator = RecordDeflator()
        self._inflator = RecordInflator(types_=record_types())

        self._records: dict[tuple[type[Record], str], Record] = {}

    def _jsons_path(self, type_: type[Record]) -> Path:
        if type_ not in self._types:
            raise ValueError(f"Unsupported record type: {type_}")
        return self._root / type_.__qualname__

    def get(self, name: str, type_: type[R]) -> R:
        """
        Provide a named record, inflating it from disk if missing from memory.

        :param name: The name of the record.
        :param type_: The type of the record.
        :return: The record.
        """
        if (value := self._records.get((type_, name))) is not None:
            return value  # type: ignore[return-value]

        json_path = self._jsons_path(type_) / f"{name}.json"
        if not json_path.exists():
            raise ValueError(f"Could not find {type_.__qualname__} with name: {name}")

        value = self._inflator.inflate(_unwrap(json_path.read_text(), json_path), type_)
        self._records[(type_, name)] = value
        return value  # type: ignore[return-value]

    def track(self, name: str, value: Record, replace: bool = False) -> None:
        """
        Track a named record, deflating it to disk if missing from disk.

        :param name: The name of the record.
        :param value: The record.
        :param replace: Whether a stored record with different contents may be
            overwritten.
        """
        type_ = type(value)
        jsons_path = self._jsons_path(type_)
        json_path = jsons_path / f"{name}.json"
        json_ = self._deflator.deflate(value)

        if json_path.exists() and not replace:
            stored_json = _unwrap(json_path.read_text(), json_path)
            if stored_json != json_:
                raise ValueError(
                    "Found record with same name and different contents.\n"
                    f"Name: {name}\n"
                    f"Type: {type_.__qualname__}"
                )
            # We keep track of the input record to only have one object around
            self._records[(type_, name)] = value
            return

        jsons_path.mkdir(parents=True, exist_ok=True)
        json_path.write_text(_envelope(json_))
        self._records[(type_, name)] = value

    def get_names(self, type_: type[Record]) -> set[str]:
        """
        Provide the names of the stored records of a type.

        :param type_: The record type.
        :return: The names of the records.
        """
        jsons_path = self._jsons_path(type_)
        if not jsons_path.exists():
            return set()
        return {p.stem for p in jsons_path.iterdir() if p.suffix == ".json"}
