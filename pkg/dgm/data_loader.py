"""
data_loader.py
Module for loading, validating and writing tabular datasets with a schema sidecar.
Reads RFC-4180 CSV files (UTF-8, header row required) and YAML schema files,
with error messages naming the offending row and column.
"""

from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

from dgm.tabular import ColumnKind, ColumnMeta, DataTable, TabularError


class DataLoaderError(Exception):
    """Custom exception for DataLoader errors."""
    pass


class DataLoader:
    """
    Loads a CSV dataset and its schema sidecar into a DataTable.

    Args:
        csv_path (str or Path): Path to the CSV file
        schema_path (str or Path): Path to the YAML schema file
        declared (dict): Already parsed declarations, used instead of schema_path

    Schema file layout (the ``columns`` wrapper is optional):
        columns:
          age: {kind: numerical, min: 0, max: 120}
          sex: {kind: categorical, categories: [f, m]}
    """

    def __init__(self, csv_path, schema_path=None, declared: dict | None = None):
        self.csv_path = Path(csv_path)
        self.schema_path = Path(schema_path) if schema_path is not None else None
        self.declared = declared
        self.raw = None
        self.data = None
        self.logger = logging.getLogger("DataLoader")
        self.logger.setLevel(logging.INFO)

    def load_schema(self) -> dict:
        """
        Read the schema sidecar.

        Returns:
            dict: column name -> {kind, categories?, min?, max?}

        Raises:
            DataLoaderError: If the file is missing or malformed
        """
        if self.schema_path is None:
            raise DataLoaderError("No schema file given.")
        try:
            with open(self.schema_path, "r", encoding="utf-8") as f:
                spec = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            self.logger.error(f"Error reading schema {self.schema_path}: {e}")
            raise DataLoaderError(f"Error reading schema {self.schema_path}: {e}")
        if isinstance(spec, dict) and "columns" in spec:
            spec = spec["columns"]
        if not isinstance(spec, dict) or not spec:
            raise DataLoaderError(f"Schema {self.schema_path} must map column names to declarations.")
        for name, decl in spec.items():
            kind = (decl or {}).get("kind") if isinstance(decl, dict) else decl
            if kind not in (ColumnKind.CATEGORICAL.value, ColumnKind.NUMERICAL.value):
                raise DataLoaderError(f"Column '{name}': kind must be 'categorical' or 'numerical', got {kind!r}.")
        self.declared = {str(name): (decl if isinstance(decl, dict) else {"kind": decl}) for name, decl in spec.items()}
        return self.declared

    def load(self) -> pd.DataFrame:
        """
        Read the CSV as text cells and check the header against the schema.

        Returns:
            pd.DataFrame: Raw string cells

        Raises:
            DataLoaderError: On I/O failure or header/schema mismatch
        """
        if self.declared is None:
            self.load_schema()
        try:
            raw = pd.read_csv(self.csv_path, dtype=str, keep_default_na=False, encoding="utf-8")
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            self.logger.error(f"Error reading {self.csv_path}: {e}")
            raise DataLoaderError(f"Error reading {self.csv_path}: {e}")
        missing = [name for name in self.declared if name not in raw.columns]
        if missing:
            raise DataLoaderError(f"Missing column(s) in {self.csv_path.name}: {missing}")
        extra = [name for name in raw.columns if name not in self.declared]
        if extra:
            raise DataLoaderError(f"Column(s) not declared in schema: {extra}")
        self.raw = raw
        self.logger.info(f"Read {len(raw)} records with {len(raw.columns)} columns from {self.csv_path.name}")
        return self.raw

    def clean(self) -> DataTable:
        """
        Parse and validate every cell.

        Returns:
            DataTable: Parsed table in CSV column order

        Raises:
            DataLoaderError: On empty cells, unparseable numbers or undeclared categories
        """
        if self.raw is None:
            self.load()
        schema = []
        columns = []
        for name in self.raw.columns:
            decl = self.declared[name]
            cells = self.raw[name].to_numpy()
            empty = np.flatnonzero([c.strip() == "" for c in cells])
            if empty.size:
                raise DataLoaderError(f"Empty cell at row {empty[0] + 1}, column '{name}'.")
            if decl["kind"] == ColumnKind.NUMERICAL.value:
                values = np.empty(len(cells), dtype=np.float64)
                for i, cell in enumerate(cells):
                    try:
                        values[i] = float(cell)
                    except ValueError:
                        raise DataLoaderError(f"Unparseable number {cell!r} at row {i + 1}, column '{name}'.") from None
                lo = decl.get("min", float(values.min()) if len(values) else None)
                hi = decl.get("max", float(values.max()) if len(values) else None)
                meta = ColumnMeta(name, ColumnKind.NUMERICAL, min=lo, max=hi)
                columns.append(values)
            else:
                categories = decl.get("categories")
                if categories is None:
                    categories = sorted(set(cells))
                    if not categories:
                        raise DataLoaderError(f"Column '{name}' declares no categories and has no data to infer them.")
                meta = ColumnMeta(name, ColumnKind.CATEGORICAL, categories=tuple(str(c) for c in categories))
                lookup = {label: code for code, label in enumerate(meta.categories)}
                codes = np.empty(len(cells), dtype=np.int64)
                for i, cell in enumerate(cells):
                    if cell not in lookup:
                        raise DataLoaderError(f"Category {cell!r} at row {i + 1}, column '{name}' is not declared.")
                    codes[i] = lookup[cell]
                columns.append(codes)
            schema.append(meta)
        try:
            self.data = DataTable(tuple(schema), tuple(columns))
        except TabularError as e:
            raise DataLoaderError(str(e)) from e
        return self.data

    def get_data(self) -> DataTable:
        """
        Returns the parsed table, loading it on first use.

        Example:
            >>> table = DataLoader("data/al.csv", "data/al.schema.yaml").get_data()
        """
        if self.data is None:
            self.clean()
        return self.data


def load_csv(path, schema_path) -> DataTable:
    """Load a CSV file and its schema sidecar into a DataTable."""
    return DataLoader(path, schema_path).get_data()


def load_csv_like(path, reference: DataTable) -> DataTable:
    """Load a CSV with the schema of an existing table (e.g. a synthetic file produced from it)."""
    table = DataLoader(path, declared=schema_to_dict(reference)["columns"]).get_data()
    return table.select_names(reference.names)


def atomic_write_text(path, text: str) -> Path:
    """Write text to path through a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    return path


def write_csv(table: DataTable, path) -> Path:
    """Write a table as CSV with decoded category labels and full-precision numbers."""
    frame = table.to_frame(decode=True)
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g", lineterminator="\n"))


def schema_to_dict(table: DataTable) -> dict:
    columns = {}
    for meta in table.schema:
        if meta.is_categorical:
            columns[meta.name] = {"kind": meta.kind.value, "categories": list(meta.categories)}
        else:
            decl = {"kind": meta.kind.value}
            if meta.min is not None:
                decl["min"] = float(meta.min)
            if meta.max is not None:
                decl["max"] = float(meta.max)
            columns[meta.name] = decl
    return {"columns": columns}


def write_schema(table: DataTable, path) -> Path:
    """Write the schema sidecar matching ``write_csv`` output."""
    return atomic_write_text(path, yaml.safe_dump(schema_to_dict(table), sort_keys=False))


def write_frame(frame: pd.DataFrame, path) -> Path:
    """Write a results DataFrame as CSV (no index, ``\\n`` line endings)."""
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))
