"""Intersectional error auditing for regression models: slice discovery,
stratified gap analysis and within-stratum confounding checks."""

from __future__ import annotations

__version__ = "0.1.0"
