"""Numerical services: step lengths, walker, observables, ensembles and scaling."""
