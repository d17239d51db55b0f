"""Exceptions mapped to process exit codes."""

EXIT_OK = 0
EXIT_AUDIT = 1
EXIT_USAGE = 2
EXIT_PRECONDITION = 3


class CliError(Exception):
    exit_code = EXIT_USAGE


class ConfigError(CliError):
    """Malformed or unknown configuration (exit 2)."""

    exit_code = EXIT_USAGE


class PreconditionError(CliError):
    """A numerical precondition of the requested computation fails (exit 3)."""

    exit_code = EXIT_PRECONDITION
