"""Multi-event triggers for serverless functions."""

from .core import (
    Backpressure,
    DuplicateTriggerId,
    Event,
    FiringRecord,
    HandlerRegistry,
    TriggerHandler,
    UnknownEventType,
    UnknownTrigger,
)
from .rules import (
    CaseExplosion,
    CaseRequirement,
    Leaf,
    Node,
    NormalizedRule,
    RuleSyntaxError,
    compile_rule,
    normalize,
    parse,
    render,
)

__version__ = "0.1.0"
