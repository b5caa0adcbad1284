from .client import (
    CallLog,
    ChatResponse,
    EndpointAuthError,
    EndpointError,
    EndpointTimeout,
    GenerationConfig,
    MalformedResponse,
    RequestRejected,
    RetryExhausted,
    TransportError,
    chat_complete,
    complete,
    map_bounded,
)
from .corpus import CorpusConfigError, CorpusStats, build_teacher_corpus
from .pipeline import GenerationResult, generate_report, load_image_detections
from .report import (
    DefectEntry,
    MaintenanceReport,
    ReportExtractionError,
    ReportSchemaError,
    Violation,
    extract_json,
    report_from_dict,
    report_schema,
    validate_report,
)
