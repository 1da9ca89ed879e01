from .store import (
    AGGREGATIONS,
    EXPORT_COLUMNS,
    Ack,
    Channel,
    Gateway,
    NotFound,
    QueryRequest,
    Row,
    import_csv,
)

__all__ = [
    "AGGREGATIONS",
    "EXPORT_COLUMNS",
    "Ack",
    "Channel",
    "Gateway",
    "NotFound",
    "QueryRequest",
    "Row",
    "import_csv",
]
