"""Federated rare-embedding backdoor simulator."""
