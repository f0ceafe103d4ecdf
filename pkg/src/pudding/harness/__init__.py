"""Scenario runner, security games and reporting."""
