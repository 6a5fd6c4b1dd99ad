"""Nonparametric series quantile regression for partially linear models."""
