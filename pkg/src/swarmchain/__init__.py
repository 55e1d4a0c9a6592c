"""Blockchain and smart contracts on a swarm-choreography bus."""
