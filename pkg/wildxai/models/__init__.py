"""Pydantic and SQLModel data models."""
