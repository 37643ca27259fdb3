"""
Unit tests for the stokes_recon package.
"""
