"""Aggregated battery flexibility scheduling: site MILPs, centralized offers, distributed ADMM."""
