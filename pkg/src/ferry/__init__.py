"""ferry: parse, partition, and run workflows with remote step offloading."""

from .model import WorkflowDoc, Step, Variable, parse_workflow, serialize_workflow, resolve_scope, NOT_VISIBLE
from .partition import PartitionedWorkflow, Violation, partition, validate
from .runtime import ExecutionContext, MigrationManager, execute

__version__ = "0.1.0"

__all__ = [
    "ExecutionContext",
    "MigrationManager",
    "NOT_VISIBLE",
    "PartitionedWorkflow",
    "Step",
    "Variable",
    "Violation",
    "WorkflowDoc",
    "__version__",
    "execute",
    "parse_workflow",
    "partition",
    "resolve_scope",
    "serialize_workflow",
    "validate",
]
