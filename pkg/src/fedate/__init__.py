"""Federated average treatment effect estimators for multi-study RCTs."""
