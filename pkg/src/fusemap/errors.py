"""Exception types raised across the package."""


class FusemapError(Exception):
    """Base class for all package errors."""


class SchemaError(FusemapError, ValueError):
    """A workload, architecture or table document is malformed."""


class IncompatibleJoin(FusemapError, ValueError):
    """Two pmappings disagree on the shared tensor's compatibility criteria."""


class NoFeasibleMapping(FusemapError):
    """Every mapping in the searched mapspace exceeds some capacity."""


class BudgetExceeded(FusemapError):
    """An enumeration or mapspace exceeded its configured size cap."""


class SeedError(FusemapError):
    """A population-based search could not find valid initial genomes."""
