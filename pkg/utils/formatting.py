# utils/formatting.py
"""
Formatting utilities for energy, lengths, angles and percentages.
"""

from typing import Optional


def format_percentage(value: Optional[float]) -> str:
    """Format a fraction (0.123) as a percentage with 2 decimal places."""
    if value is None:
        return "N/A"
    return f"{float(value) * 100:.2f}%"


def format_kwh(value: Optional[float]) -> str:
    """Format annual energy in kWh with thousands grouping."""
    if value is None:
        return "0 kWh"
    return f"{float(value):,.1f} kWh"


def format_meters(value: Optional[float]) -> str:
    if value is None:
        return "N/A"
    return f"{float(value):.3f} m"


def format_degrees(value: Optional[float]) -> str:
    if value is None:
        return "N/A"
    return f"{float(value):.2f}°"


def format_seconds(value: Optional[float]) -> str:
    if value is None:
        return "N/A"
    return f"{float(value):.2f} s"
