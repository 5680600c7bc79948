"""Helper executables."""
