"""Chat-completion backends: live HTTP, scripted queue and record/replay cassettes."""

from .cassette import CassetteBackend, CassetteEntry, load_cassette
from .client import LlmBackend, complete
from .http import BackoffStrategy, HttpChatBackend
from .models import LlmRequest, LlmResponse, Role, RoleUsage, UsageLedger
from .scripted import ScriptedBackend

__all__ = [
    "BackoffStrategy",
    "CassetteBackend",
    "CassetteEntry",
    "HttpChatBackend",
    "LlmBackend",
    "LlmRequest",
    "LlmResponse",
    "Role",
    "RoleUsage",
    "ScriptedBackend",
    "UsageLedger",
    "complete",
    "load_cassette",
]
